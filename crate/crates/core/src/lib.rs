//! Invariant causal prediction for binary targets with grouped features.
//!
//! The crate covers the whole pipeline: aggregating gridded predictors into
//! per-observation features, a random forest classifier, the paired DeLong
//! test, a forest-based conditional independence test between the target and
//! the environment, greedy, exhaustive and cluster-restricted ICP searches,
//! HSIC clustering of variable groups, and synthetic models with known
//! causal structure.

pub mod dataset;
pub mod error;
pub mod forest;
pub mod hsic;
pub mod icp;
pub mod invariance;
pub mod roctest;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/aggregation.md")]
    mod aggregation {}
    #[doc = include_str!("../../../book/src/forest.md")]
    mod forest {}
    #[doc = include_str!("../../../book/src/delong.md")]
    mod delong {}
    #[doc = include_str!("../../../book/src/invariance.md")]
    mod invariance {}
    #[doc = include_str!("../../../book/src/greedy.md")]
    mod greedy {}
    #[doc = include_str!("../../../book/src/exhaustive.md")]
    mod exhaustive {}
    #[doc = include_str!("../../../book/src/hsic.md")]
    mod hsic {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
