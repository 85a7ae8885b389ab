#![allow(dead_code)]

pub mod dy_oracle;
pub mod spec_gen;
