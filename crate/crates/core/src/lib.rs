//! A wall-clock simulator for federated learning under lossy gradient
//! compression with time-varying per-client network congestion.
//!
//! The crate provides:
//! - [`congestion`]: log-AR(1) bit-transmission-delay generation with the
//!   four scenario presets, plus finite-chain discretization;
//! - [`quantizer`]: the stochastic uniform quantizer, exact message sizes,
//!   and the bit-width/variance map;
//! - [`roundcost`]: the max-based round-duration model and exact discrete
//!   argmin primitives;
//! - [`policy`]: the network-adaptive compression policy and the fixed-bit
//!   and fixed-error baselines;
//! - [`fedcomv`]: local SGD with compressed aggregation and wall-clock
//!   accounting;
//! - [`workload`]: MNIST (IDX files, per-label partitioning, an MLP with
//!   exact backprop) and a closed-form quadratic test problem;
//! - [`oracle`]: brute-force stationary-policy optimum, the fluid ODE of
//!   the adaptive policy's running estimates, and convergence checks;
//! - [`harness`]: multi-seed experiment driver, summary statistics, and
//!   CSV outputs.

pub mod congestion;
pub mod error;
pub mod fedcomv;
pub mod harness;
pub mod oracle;
pub mod policy;
pub mod quantizer;
pub mod rng;
pub mod roundcost;
pub mod workload;

pub use congestion::{ArParams, ArProcess, BtdVector, FiniteChain, Scenario};
pub use error::{Error, Result};
pub use fedcomv::{FlatModel, RoundLog, Schedule, StopReason, StopRule, Trainer};
pub use policy::{BetaMode, NacflEstimates, Policy, PolicyDecision};
pub use quantizer::{QuantizedVector, VarianceMap};
pub use roundcost::{BitAssignment, CostModel};
pub use workload::{DataShard, Dataset, MlpArch, QuadraticWorkload};
