//! End-task aware auxiliary training at desk scale.
//!
//! The crate bundles a small reverse-mode differentiation engine, a
//! shared-body multi-head model, synthetic and CSV-backed tasks, three
//! training regimes (pretrain-then-finetune, fixed-weight multitasking and
//! meta-learned task weighting), an exact hypergradient oracle on quadratic
//! bilevel problems, and permutation-test based reporting.

pub mod autodiff;
pub mod bilevel_oracle;
pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod model;
pub mod rng;
pub mod stats;
pub mod strategies;
pub mod tasks;

pub use error::{Error, Result};
