#![allow(dead_code)]

pub mod dsm;
pub mod formation;
pub mod oracle;
