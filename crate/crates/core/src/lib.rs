//! Stochastic average gradient optimization for finite sums of smooth
//! convex losses, together with baseline methods, convergence-rate theory
//! and an experiment harness.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod losses;
pub mod sag;
pub mod samplers;
pub mod theory;

pub use dataset::{synth_generate, synth_generate_with_truth, SparseDataset, SynthSpec, Targets};
pub use error::{Error, Result};
pub use losses::{LipschitzInfo, LossFamily, LossModel};
pub use samplers::{DiscreteSampler, Rng, RngState};
