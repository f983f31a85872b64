pub mod error;
pub mod rng;
pub mod mdp;
pub mod jl;
pub mod hard;
pub mod tabular;
pub mod oracle;
pub mod design;
pub mod lsvi;
pub mod config;
pub mod harness;
