pub mod analysis;
pub mod corpus;
pub mod gradkernel;
pub mod models;
pub mod parallel;
pub mod pipeline;
pub mod probeclf;
pub mod probelab;
pub mod textmetrics;

pub use parallel::Execution;
