//! Prompt-benchmark ingestion and evaluation metrics.
//!
//! Classifier outputs are not computed here; they arrive as label files
//! (per-image binaries or per-prompt fractions) keyed by the 0-based row index
//! of the prompt in the prompts CSV.

mod dataset;
mod labels;
mod metrics;
mod report;

pub use dataset::{
    load_prompts, read_prompts, write_prompts, Category, PromptRecord, PROMPT_COLUMNS,
};
pub use labels::{load_labels, read_labels, LabelMatrix, PromptLabels};
pub use metrics::{
    exact_expected_max, expected_max_inappropriateness, inappropriate_probability, spearman,
    ExpectedMax, MAX_EXACT_COMBINATIONS,
};
pub use report::{
    build_report, BootstrapOptions, CategoryRow, ConfigReport, EvalReport, ReportMetadata,
};
