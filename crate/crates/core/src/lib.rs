//! Dynamic memory fusion: adaptive weighting of several training losses from
//! the statistics of their recent history, together with a segmentation
//! loss and metric suite, bilateral preprocessing, and a small synthetic
//! training harness.

pub mod controller;
pub mod filter;
pub mod harness;
pub mod losses;
pub mod maps;
pub mod metrics;
pub mod pgm;

pub use controller::{Controller, ControllerConfig, DecaySchedule, Strategy, WeightVector};
pub use losses::{LossConfig, LossKind};
pub use maps::{ClassMask, ProbabilityMap};
