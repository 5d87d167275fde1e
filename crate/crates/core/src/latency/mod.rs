//! Wall-clock benchmarking, latency datasets, the MLP latency predictor and
//! the regression/MAPE metrics used to judge it.

mod bench;
mod dataset;
mod metrics;
mod predictor;

pub use bench::{
    benchmark, host_fingerprint, timer_resolution_ms, BenchProtocol, Executable, Measurement,
};
pub use dataset::{
    collect_dataset, measure_arch, read_dataset, CollectOptions, DatasetWriter, LatencySample,
    RunTimes, CSV_HEADER,
};
pub use metrics::{
    evaluate_mape, fit_latency_regression, fit_ols, mape, LinearFit, RegressionReport,
    REFERENCE_INTERCEPT, REFERENCE_SLOPE,
};
pub use predictor::{
    train_latency_predictor, LatencyModel, LatencyPredictor, Normalization, Prediction,
    PredictorConfig, TrainedPredictor, PREDICTION_FLOOR_MS,
};
