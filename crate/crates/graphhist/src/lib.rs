//! Files, formats and the command line around `graphhist-core`.

pub mod checkpoint;
pub mod cli;
pub mod report;
pub mod tu;
