//! Library surface of the CLI so integration tests can drive the same
//! command implementations in-process.

pub mod commands;
pub mod gradcheck;
pub mod runspec;
