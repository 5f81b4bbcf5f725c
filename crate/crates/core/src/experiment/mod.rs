//! Orchestration: preprocessing into graph caches, training, the evaluation sweeps and
//! result persistence.

mod config;
mod preprocess;
mod records;
mod sweep;
mod train;

pub use config::{ExperimentConfig, ModelConfig, SubsetSizes, SweepConfig, TrainingConfig};
pub use preprocess::{
    build_graphs, image_to_graph, load_graphs, load_split, preprocess, sha256_hex, CacheEntry, GraphSets,
    Manifest, PreprocessOutcome, PreprocessParams, MANIFEST_FILE,
};
pub use records::{
    csv_without_wall_time, emit_csv, parse_csv, read_csv, records_to_csv, sort_records, ExperimentRecord,
    CSV_HEADER,
};
pub use sweep::{
    checkpoint_params, evaluate, load_or_train, rotation_test_images, sweep_rotation, sweep_snr,
    sweep_superpixels, EvalCount,
};
pub use train::{
    read_training_log, train, train_model, write_training_log, EpochLog, TrainArtifacts, TrainOutcome,
    CHECKPOINT_FILE, TRAIN_LOG_FILE,
};

use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Writes `records` as CSV plus a sidecar JSON manifest echoing the resolved config.
pub fn write_results(
    cfg: &ExperimentConfig,
    records: &[ExperimentRecord],
    csv_path: &Path,
    extra: impl Serialize,
) -> Result<()> {
    emit_csv(records, csv_path)?;
    let manifest = serde_json::json!({
        "config": cfg,
        "csv": csv_path.file_name().map(|n| n.to_string_lossy().into_owned()),
        "csv_sha256": sha256_hex(&std::fs::read(csv_path)?),
        "rows": records.len(),
        "details": extra,
    });
    std::fs::write(csv_path.with_extension("json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
