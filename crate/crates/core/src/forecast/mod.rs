//! Forecast replay and predictive-performance evaluation.

pub mod dose;
pub mod exposure;
pub mod metrics;
pub mod report;
pub mod sequential;
pub mod verdict;
pub mod wilcoxon;

pub use dose::{
    apply_regimen, predict_at_times, recommend_dose, round_dose, DoseRecommendation, Regimen, DOSE_STEP_MG,
};
pub use exposure::{week_of, weekly_exposure_report, Band, Exposure, TargetRange, WeekCounts};
pub use metrics::{median, prediction_error, summarize, summarize_errors, MetricsSummary, PredictionRecord};
pub use report::{evaluate, summary_table, ComparisonRow, EvaluationReport, ModelReport, SummaryRow};
pub use sequential::{
    forecast_cohort, predict_observed, sequential_forecast, FlaggedStep, ForecastMode, ForecastOutcome,
};
pub use verdict::{verdict, verdict_from, Criterion, Verdict};
pub use wilcoxon::{compare_models, WilcoxonMethod, WilcoxonResult};
