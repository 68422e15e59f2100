//! Distributed execution indexing for request-level fault injection, with a
//! deterministic microservice simulator and an exhaustive fault-space
//! search built on top.

pub mod corpus;
pub mod faults;
pub mod index;
pub mod search;
pub mod sim;
