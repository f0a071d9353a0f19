//! File formats, thread pools and the command line around `mediate-core`.

pub mod cli;
pub mod estimate;
pub mod io;
pub mod parallel;
pub mod replicate;
