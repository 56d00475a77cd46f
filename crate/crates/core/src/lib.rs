//! Unpaired image-to-image translation between two image domains.
//!
//! The library trains a pair of generators (`G: X -> Y`, `F: Y -> X`) against
//! per-domain discriminators that emit spatial real/fake logit maps, using a
//! multi-term objective (adversarial + feature matching + MS-SSIM/L1 cyclic
//! reconstruction) whose terms are periodically renormalized by a scheduled
//! moving-average scheme. A procedural polygon/dot-lattice benchmark with
//! exact ground-truth deformation parameters supports quantitative evaluation
//! via directed Hausdorff distances on extracted polygon boundaries.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geom;
pub mod losses;
pub mod nets;
pub mod sln;
pub mod toy;
pub mod train;
pub mod util;

pub use candle_core::Device;
pub use config::{ExperimentConfig, LrDecay, OptimizerConfig, SlnConfig};
pub use data::{AugmentConfig, BatchStream, ImageData, ImageFolder};
pub use error::{Error, Result};
pub use eval::{CycleMetrics, Direction, PointSet, ToyEvalSummary};
pub use losses::LossWeights;
pub use nets::{DiscriminatorSpec, DiscriminatorVariant, FeatureTaps, GeneratorSpec};
pub use sln::SlnState;
pub use toy::{DeformationParams, ToySample, ToySpec};
pub use train::{MetricsRecord, ModelBundle};
