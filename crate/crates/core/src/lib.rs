//! Reconstruction-advantage audits for label-privatization mechanisms.
//!
//! The exact numeric routines (Poisson-binomial PMFs, posteriors, exact
//! advantages, bounds) are generic over [`Scalar`] (`f32` or `f64`); the
//! simulation, training and I/O layers work in `f64`.

pub mod advantage;
pub mod bounds;
pub mod data;
pub mod error;
pub mod learner;
pub mod mechanisms;
pub mod pbin;
pub mod posterior;
pub mod rng;
pub mod scalar;

pub use advantage::{AdvantageEstimate, AdvantageSample, EtaSampler};
pub use bounds::{BoundParams, BoundReport};
pub use data::{CsvSchema, EtaDataset};
pub use error::{AuditError, Result};
pub use learner::{LinearModel, SweepConfig, TradeoffRow, TrainConfig};
pub use mechanisms::{BagAssignment, MechanismKind, PrivOutput, PrivacyParams};
pub use pbin::PBinPmf;
pub use posterior::{BagModel, BagOutcome, PosteriorOdds, PosteriorRecord};
pub use scalar::Scalar;

pub type PBinPmf64 = PBinPmf<f64>;
pub type PBinPmf32 = PBinPmf<f32>;
pub type BagModel64 = BagModel<f64>;
pub type BagModel32 = BagModel<f32>;
pub type AdvantageEstimate64 = AdvantageEstimate<f64>;
pub type AdvantageEstimate32 = AdvantageEstimate<f32>;
