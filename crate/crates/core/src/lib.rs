//! Broadcasting on d-ary trees.
//!
//! A uniform `+1/-1` label at the root is copied down a complete d-ary tree,
//! each edge flipping it with probability `epsilon`; the task is to recover
//! the root from the leaves using per-level message-passing rules. The crate
//! provides
//!
//! - the model and distribution types ([`ModelParams`], [`FiniteDist`],
//!   [`CondPair`], [`ScoreDist`], [`ReconstructionScheme`], [`NoiseChannel`]),
//! - divergences, Wasserstein distances and bound functions ([`metrics`]),
//! - exact finite-alphabet dynamics and Boolean-rule analysis ([`dynamics`]),
//! - exact and population-dynamics belief propagation ([`bp`]),
//! - the L-level quantized BP scheme and threshold scanner ([`qbp`]).

// `!(x <= b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bp;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod model;
pub mod qbp;
pub mod scheme;
pub mod seed;

pub use bp::{
    bp_combine, brute_force_tree, build_hat_bar, density_evolution, density_evolution_with, mgf_curve, BruteForce,
    DensityEvolutionReport, DensityOptions, DensityRecord, ScorePool, W2Levels,
};
pub use dynamics::{
    calibrate_barrier, classify_boolean, cycling_demo, lyapunov_series, CyclingRun, evolve_pair, evolve_pair_with_budget, lyapunov_phi,
    restricted_sdpi_scan, skl_contraction_ratio, BooleanClass, BooleanKind, LevelRecord, PairTrajectory, SdpiScan,
};
pub use error::{Error, Result};
pub use metrics::{
    alpha_bound, chi2_information, divergence, entropy, gaussian_threshold_sdpi, nongaussianness, omega_bound,
    wasserstein, wasserstein_pow, DivergenceKind, NonGaussianness,
};
pub use model::{
    critical_epsilon, make_params, mixture, posterior_scores, AtomicDist, CondPair, FiniteDist, ModelParams,
    NoiseChannel, ScoreDist,
};
pub use qbp::{powerlaw_fit, qbp_evolve, quantize_symmetric, threshold_scan, PowerLawFit, QbpConfig, QbpRun, ThresholdRow, ThresholdTable};
pub use scheme::{LevelRule, ReconstructionScheme};
