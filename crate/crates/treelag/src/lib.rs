//! Treed distributed lag models: Bayesian ensembles of lag-axis regression
//! tree pairs for estimating delayed main effects and pairwise interactions of
//! time-resolved exposures, with critical-window detection and exposure
//! selection under Dirichlet and half-Cauchy shrinkage priors.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod io;
pub mod panel;
pub mod pg;
pub mod priors;
pub mod diagnostics;
pub mod sampler;
pub mod sim;
pub mod smoother;
pub mod summary;
pub mod stats;
pub mod tree;

pub use ensemble::{param_count, predict, reconstruct_effects, LagEffects, TreePair, TreePairEnsemble};
pub use error::{Error, Result};
pub use panel::{Family, LagPanel};
pub use sampler::{run_sampler, PosteriorDraws, SamplerConfig, SamplerMode};
pub use tree::TimeSplitTree;
