//! Spectral bounds and unconstrained-features experiments for multi-label
//! neural collapse under correlated, imbalanced label distributions.

pub mod bounds;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod label_space;
pub mod pal;
pub mod spectral;
pub mod ufm;

pub use error::{Error, Result};
pub use label_space::{LabelDistribution, LabelSet, Scenario};
pub use ufm::{UfmConfig, UfmState};
