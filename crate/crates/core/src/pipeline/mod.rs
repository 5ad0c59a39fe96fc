//! Training and inference orchestration around the models.

mod evaluate;
mod inference;
mod sampling;
mod train;

pub use evaluate::{
    calibrate_k, evaluate, prob_maps, score_predictions, Calibration, EvalConfig, Evaluation,
    TruthOracle, DEFAULT_K_GRID,
};
pub use inference::{
    extract_sources, map_stats, predict_full, suppress_neighbors, threshold_detect, window_offsets,
    CropPredictor, Detection, Detections, ProbMapSource, Sliding, SlidingConfig, ThresholdRule,
};
pub use sampling::{
    count_grid, sample_batch, Batch, CropConfig, LabeledSet, MAX_REJECTION_ATTEMPTS,
};
pub use train::{
    batch_loss, eval_loss, train, EarlyStopping, EpochRecord, StopDecision, TrainConfig,
    TrainHistory, MIN_IMPROVEMENT,
};
