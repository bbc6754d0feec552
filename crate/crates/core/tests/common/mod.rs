#![allow(dead_code)]

pub mod cases;
pub mod gradcheck;
pub mod oracles;
