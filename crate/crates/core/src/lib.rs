pub mod cli;
pub mod detect;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod pipeline;
pub mod sim;
pub mod tracker;
