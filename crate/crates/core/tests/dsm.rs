mod common;

use common::dsm::{replay, subsequence_violations};
use roboport::apps::{self, elect_leader};
use roboport::dsm::{Value, Writer};
use roboport::geometry::{RobotId, SimTime};
use roboport::platforms::PlatformKind;
use roboport::sim::{run, RunOutput};
use roboport::trace::EventKind;

fn sw_writer(out: &RunOutput) -> impl Fn(&str) -> Option<RobotId> + '_ {
    |name| match out.replicas[0].writer_of(name) {
        Some(Writer::Robot(w)) => Some(w),
        _ => None,
    }
}

#[test]
fn lossy_soak_converges_within_fifty_rebroadcasts() {
    let s = apps::dsm_soak(4, 0.2);
    let window = SimTime::from_secs(50.0 * s.channel.rebroadcast_period);
    for seed in 0..20 {
        let out = run(&s, Some(seed)).unwrap();
        let r = replay(&out.trace);
        let last = r.last_write.expect("soak writes");
        let agreed = r.agreed_since.unwrap_or_else(|| panic!("seed {seed}: replicas still disagree at the end"));
        assert!(agreed <= last + window, "seed {seed}: agreed at {agreed}, writes stopped at {last}");
        assert!(last + window <= SimTime::from_secs(s.time_limit), "run too short to observe the window");
        assert!(subsequence_violations(&out.trace, sw_writer(&out)).is_empty(), "seed {seed}");

        // the replayed stores are exactly the replicas the engine ended with
        for (id, store) in &r.stores {
            let snap: Vec<_> = out.replicas[id.index()]
                .snapshot()
                .into_iter()
                .filter_map(|(k, v, st)| st.map(|st| (k, (v, st))))
                .collect();
            assert_eq!(snap, store.clone().into_iter().collect::<Vec<_>>(), "seed {seed} robot {id}");
        }
        let counters: Vec<_> = (0..4).map(|i| out.replicas[0].read(&format!("counter[{i}]")).cloned()).collect();
        assert!(counters.iter().all(|c| *c == Some(Value::Int(20))), "seed {seed}: {counters:?}");
    }
}

#[test]
fn multi_writer_register_settles_on_the_latest_stamp() {
    let out = run(&apps::dsm_soak(4, 0.2), Some(7)).unwrap();
    let newest = out
        .trace
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            EventKind::DsmWrite { name, value, stamp } if name == "last" => Some((*stamp, value.clone())),
            _ => None,
        })
        .max_by_key(|(s, _)| *s)
        .unwrap();
    for r in &out.replicas {
        assert_eq!(r.read("last"), Some(&newest.1));
        assert_eq!(r.stamp("last"), Some(newest.0));
    }
}

#[test]
fn without_rebroadcast_heavy_loss_leaves_replicas_apart() {
    let mut s = apps::dsm_soak(4, 0.6);
    s.channel.rebroadcast_period = 0.0;
    let apart = (0..10).filter(|&seed| replay(&run(&s, Some(seed)).unwrap().trace).agreed_since.is_none()).count();
    assert!(apart > 0);
}

#[test]
fn election_agrees_under_loss() {
    for kind in [PlatformKind::Diffdrive, PlatformKind::Quad] {
        let mut s = apps::search(kind);
        s.channel.loss_prob = 0.2;
        for seed in 0..5 {
            let out = run(&s, Some(seed)).unwrap();
            assert!(out.faults.is_empty(), "{:?}", out.faults);
            for r in &out.replicas {
                assert_eq!(elect_leader(r, "ids", false), Ok(Some(RobotId(2))));
            }
            let assigners: std::collections::BTreeSet<_> = out
                .trace
                .events
                .iter()
                .filter(|e| matches!(&e.kind, EventKind::DsmWrite { name, .. } if name.starts_with("assign[")))
                .map(|e| e.robot.unwrap())
                .collect();
            assert_eq!(assigners, [RobotId(2)].into(), "{kind:?} seed {seed}");
            assert!(subsequence_violations(&out.trace, sw_writer(&out)).is_empty());
        }
    }
}

#[test]
fn search_covers_every_room_once() {
    for kind in [PlatformKind::Diffdrive, PlatformKind::Quad] {
        let s = apps::search(kind);
        let out = run(&s, Some(1)).unwrap();
        let rooms = s.app.rooms.len();
        let mut owners = Vec::new();
        for k in 0..rooms {
            for r in &out.replicas {
                assert_eq!(r.read(&format!("status[{k}]")), Some(&Value::Int(1)), "{kind:?} room {k}");
            }
            let Some(Value::Int(o)) = out.replicas[0].read(&format!("assign[{k}]")).cloned() else { panic!() };
            owners.push(o);
        }
        assert_eq!(owners, (0..rooms as i64).map(|k| k % 3).collect::<Vec<_>>());
        // each room's status is set by the robot it was assigned to
        for e in &out.trace.events {
            if let EventKind::DsmWrite { name, value: Value::Int(1), .. } = &e.kind {
                if let Some(k) = name.strip_prefix("status[").and_then(|x| x.strip_suffix(']')) {
                    let k: usize = k.parse().unwrap();
                    assert_eq!(e.robot.unwrap().0 as i64, owners[k]);
                }
            }
        }
    }
}
