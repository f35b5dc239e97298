//! Dataset ingestion, covariate imputation, cohort splitting, model definitions and summaries.

mod cohort;
pub mod dataset;
pub mod locf;
pub mod modeldef;
pub mod split;
pub mod summary;

pub use cohort::{Cohort, Exclusion, Provenance};
pub use dataset::{parse_dataset, parse_dataset_bytes, parse_dataset_reader, write_dataset, REQUIRED_COLUMNS};
pub use locf::{locf_fill, locf_fill_timeline};
pub use modeldef::{load_model_def, save_model_def, LoadedModel, ModelDefinition, Strictness};
pub use split::{split, SplitRule, DEFAULT_FRACTION};
pub use summary::{summarize_cohort, summary_csv, SummaryStat};
