//! Service layer over `simsearch`: request execution, feedback sessions,
//! the HTTP router, the command line and the benchmark experiments.

pub mod bench;
pub mod cli;
pub mod engine;
pub mod http;
pub mod session;
