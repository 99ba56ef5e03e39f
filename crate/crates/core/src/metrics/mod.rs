//! Quantitative evaluation: detection accuracy, similarity metrics,
//! one-way ANOVA, runtime profiling and report emission.

pub mod anova;
pub mod detection;
pub mod report;
pub mod runtime;
pub mod similarity;
pub(crate) mod special;

pub use anova::{one_way_anova, AnovaResult};
pub use detection::{detection_accuracy, episode_f1, DetectionScore, F1Score};
pub use report::{ablation_table, AblationRow, EvalReport, MetricRow};
pub use runtime::{profile, StageTiming};
pub use similarity::{
    dtw_exact, dtw_exact_1d, emd_1d, fast_dtw, fast_dtw_1d, pcc, ssim, SimilarityReport,
    SsimConfig,
};
