//! Configuration, synthetic data and the stage-by-stage pipeline.

mod config;
mod report;
mod stages;
mod task;
mod workspace;

pub use config::{
    content_hash, BaselineConfig, FinetuneSettings, PipelineConfig, ProfileConfig,
    SupermodelConfig, TeacherConfig,
};
pub use report::{
    collect_results, write_report, MethodTag, ReportFiles, ReportRow, REPORT_COLUMNS,
};
pub use stages::{
    is_heldout, BaselineInfo, Pipeline, PredictorOutcome, ProfileOutcome, SupermodelOutcome,
    TargetResult, TeacherOutcome, WinnerInfo,
};
pub use task::{
    contains_pattern, generate_task, TaskData, TaskSpec, CLS_TOKEN, PATTERN_CONTAINMENT,
};
pub use workspace::Workspace;
