//! Complexity and synchronisation measures for multichannel activation
//! trials: detrended fluctuation analysis, band-limited phase
//! synchronisation, a pool-relative composite index, group statistics and
//! synthetic ground-truth generators.

pub mod composite;
pub mod dfa;
pub mod error;
pub mod metastability;
pub mod phase;
pub mod pipeline;
pub mod report;
pub mod robustness;
pub mod special;
pub mod stats;
pub mod synth;
pub mod trial;

pub use composite::{pool_zscore, ComponentScores, PsiPool, PsiResult, PsiWeights};
pub use dfa::{dfa_trial, gaussian_tuning, DfaConfig, DfaResult};
pub use error::{Error, ErrorClass, Result};
pub use metastability::{metastability_trial, SyncSeries};
pub use pipeline::{analyze_trial, run_batch, BatchOutput, RunConfig};
pub use phase::{design_butterworth_bandpass, filtfilt, BandpassSpec, IirCoefficients};
pub use stats::{stats_report, StatsReport};
pub use trial::{load_trial, preprocess, save_trial, ActivationTrial, Condition, PreprocessedTrial, TrialFormat, TrialManifest, TrialMeta};
