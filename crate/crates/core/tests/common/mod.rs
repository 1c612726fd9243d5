//! Oracles and check routines shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod composite;
pub mod oracles;
pub mod primitives;
