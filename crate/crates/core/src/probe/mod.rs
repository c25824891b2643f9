//! Linear probing of frozen representations.

pub mod features;
pub mod linear;
pub mod report;

pub use features::{dataset_fingerprint, extract_features, FeatureCache, FrozenModel};
pub use linear::{linear_probe, ProbeOptions, ProbeResult, Standardizer};
pub use report::{interaction_report, mean_std, ProbeFeatures, ProbeReport, ProbeTask, ReportOptions, TaskSummary};
