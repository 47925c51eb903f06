//! Oracle suites shared by the core tests and the acceptance run.
#![allow(dead_code)]

pub mod graphs;
pub mod oracles;
