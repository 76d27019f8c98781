//! Adversarial regression learning on precomputed feature vectors.
//!
//! A shared dense trunk maps features (plus gender) to an 8-dim code and an
//! age prediction. A data regressor scores codes by domain and a decoder
//! reconstructs the features. Training first fits the regressor on labelled
//! training rows, then alternates data-regressor and mapper updates so that
//! training and test codes become indistinguishable.

pub mod autonet;
pub mod canon;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod losses;
pub mod model;
pub mod numcore;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use data::{load_csv, save_csv, synth_generate, Domain, FeatureDataset, SynthConfig};
pub use error::{ArlError, Result};
pub use losses::{LossBreakdown, LossWeights};
pub use model::{init_model, ArlConfig, ArlModel, ReconTap};
pub use numcore::{Matrix, RngState};
pub use train::{evaluate, run_ablation, shift_diagnostics, train_two_stage, History, TrainConfig, Trainer, Variant};
