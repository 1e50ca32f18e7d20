pub mod dsm;
pub mod geometry;
pub mod platforms;
pub mod rng;
pub mod tracker;
pub mod planner;
pub mod reach_avoid;
pub mod trace;
pub mod monitor;
pub mod lang;
pub mod apps;
pub mod sim;
