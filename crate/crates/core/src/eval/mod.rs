//! Linear probes on frozen representations and the fairness metrics
//! computed from their predictions.

pub mod correlation;
pub mod metrics;
pub mod probe;
pub mod report;

pub use correlation::{association_matrix, correlation_gap, cramers_v};
pub use metrics::{
    auc, delta_cp, delta_dp, delta_eo, density_data, hard_predictions, leakage_auc, rmse, DensityData,
    DECISION_THRESHOLD, LEAKAGE_TRAIN_FRACTION,
};
pub use probe::{fit_logistic, fit_ridge, ProbeConfig, ProbeKind, ProbeModel};
pub use report::{evaluate_raw, evaluate_run, EvalConfig, Evaluation, MetricRow, MetricsReport};
