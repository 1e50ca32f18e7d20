//! An independent bisector and the iterations used to solve for its fixed point.

use roboport::apps::regular_polygon;
use roboport::geometry::Position3;

/// Bisector target by projection: drop the component of `pos[i] - m` along the edge, then
/// scale what is left to `len`. Does not go through a rotated normal.
pub fn oracle_bisector(pos: &[Position3], i: usize, len: f64) -> Option<Position3> {
    let n = pos.len();
    let j = (i + (n - 1) / 2) % n;
    let (a, b) = (pos[j], pos[(j + 1) % n]);
    let m = ((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
    let e = (b.x - a.x, b.y - a.y);
    let ee = e.0 * e.0 + e.1 * e.1;
    if ee < 1e-24 {
        return None;
    }
    let w = (pos[i].x - m.0, pos[i].y - m.1);
    let along = (w.0 * e.0 + w.1 * e.1) / ee;
    let perp = (w.0 - along * e.0, w.1 - along * e.1);
    let l = perp.0.hypot(perp.1);
    Some(Position3::new(m.0 + len * perp.0 / l, m.1 + len * perp.1 / l, pos[i].z))
}

/// Moves every robot a fraction `alpha` of the way to its bisector target, all at once.
pub fn damped_round(p: &mut [Position3], len: f64, alpha: f64) {
    let q: Vec<Position3> = (0..p.len()).map(|i| oracle_bisector(p, i, len).unwrap()).collect();
    for (a, b) in p.iter_mut().zip(q) {
        a.x += alpha * (b.x - a.x);
        a.y += alpha * (b.y - a.y);
    }
}

/// Robots in turn jump straight to their target, each seeing the ones already moved.
pub fn sequential_round(p: &mut [Position3], len: f64) {
    for i in 0..p.len() {
        p[i] = oracle_bisector(p, i, len).unwrap();
    }
}

pub fn residual(p: &[Position3], len: f64) -> f64 {
    (0..p.len())
        .map(|i| {
            let b = oracle_bisector(p, i, len).unwrap();
            (b.x - p[i].x).hypot(b.y - p[i].y)
        })
        .fold(0.0, f64::max)
}

pub fn circumradius(p: &[Position3]) -> f64 {
    let n = p.len() as f64;
    let c = (p.iter().map(|q| q.x).sum::<f64>() / n, p.iter().map(|q| q.y).sum::<f64>() / n);
    p.iter().map(|q| (q.x - c.0).hypot(q.y - c.1)).sum::<f64>() / n
}

pub fn perturbed(n: usize, star: bool) -> Vec<Position3> {
    let mut p = regular_polygon(n, 2.0, Position3::ORIGIN, star);
    for (i, q) in p.iter_mut().enumerate() {
        let a = 1.7 * i as f64 + 0.3;
        q.x += 0.15 * a.cos();
        q.y += 0.15 * a.sin();
    }
    p
}
