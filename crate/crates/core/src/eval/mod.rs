//! Evaluation: metrics, video aggregation, robustness sweeps and exports.

pub mod aggregate;
pub mod export;
pub mod metrics;
pub mod plot;
pub mod probe;
pub mod report;
pub mod robust;
pub mod saliency;
pub mod tsne;

pub use aggregate::{aggregate_video, ScoreRow, VideoScore};
pub use export::{export_embeddings, read_points, ExportSummary, Which};
pub use metrics::{accuracy, ap, auc, eer, metrics, Eer, Metrics};
pub use probe::{probe_accuracy, LinearProbe, ProbeConfig};
pub use report::{evaluate, evaluate_scores, EvalReport, EvalSet, Evaluation};
pub use robust::{robustness_sweep, GridCell, RobustnessGrid};
pub use saliency::{saliency, SaliencyMap};
pub use tsne::{tsne, TsneConfig};
