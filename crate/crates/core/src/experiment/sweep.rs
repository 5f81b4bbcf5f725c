//! Evaluation and the SNR, superpixel-count and rotation sweeps.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::preprocess::{build_graphs, load_graphs, load_split};
use super::records::ExperimentRecord;
use super::train::{train, CHECKPOINT_FILE};
use crate::channel::ChannelSpec;
use crate::data::{exclude_classes, rotate_image, LabeledImage};
use crate::error::Result;
use crate::graph::SuperpixelGraph;
use crate::model::{load_checkpoint, predict_seeded, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalCount {
    pub correct: usize,
    pub total: usize,
}

impl EvalCount {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Counts correct predictions. Every graph draws its channel noise from a stream keyed by
/// `(spec.rng_seed, source_id)`, so the count does not depend on scheduling.
pub fn evaluate(graphs: &[SuperpixelGraph], params: &ModelParams, spec: &ChannelSpec) -> Result<EvalCount> {
    let correct = graphs
        .par_iter()
        .map(|g| predict_seeded(g, params, spec).map(|p| usize::from(p.label == g.label as usize)))
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(EvalCount { correct, total: graphs.len() })
}

fn record(
    cfg: &ExperimentConfig,
    kind: &str,
    value: f64,
    snr_db: f64,
    rotation_deg: f64,
    count: EvalCount,
    started: Instant,
) -> ExperimentRecord {
    ExperimentRecord {
        dataset: cfg.dataset.to_string(),
        backbone: cfg.backbone.clone(),
        sweep_kind: kind.into(),
        sweep_value: value,
        snr_db,
        n_superpixels: cfg.n_superpixels(),
        rotation_deg,
        accuracy: count.accuracy(),
        n_samples: count.total,
        seed: cfg.seed,
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

fn channel_for(cfg: &ExperimentConfig, snr_db: f64) -> ChannelSpec {
    if snr_db.is_finite() {
        ChannelSpec::awgn(snr_db, cfg.seed)
    } else {
        ChannelSpec::noiseless()
    }
}

/// One noiseless record plus one record per SNR in `snrs_db`.
pub fn sweep_snr(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    test: &[SuperpixelGraph],
    snrs_db: &[f64],
) -> Result<Vec<ExperimentRecord>> {
    let mut out = Vec::new();
    for &snr in std::iter::once(&f64::INFINITY).chain(snrs_db) {
        let started = Instant::now();
        let count = evaluate(test, params, &channel_for(cfg, snr))?;
        info!("snr {snr} dB: accuracy {:.4}", count.accuracy());
        out.push(record(cfg, "snr", snr, snr, 0.0, count, started));
    }
    Ok(out)
}

/// Loads the model trained for `cfg`'s caches, training it first when no checkpoint exists.
pub fn load_or_train(cfg: &ExperimentConfig) -> Result<ModelParams> {
    let path = cfg.model_dir().join(CHECKPOINT_FILE);
    if path.exists() {
        return Ok(load_checkpoint(&path)?.0);
    }
    Ok(train(cfg)?.outcome.params)
}

/// Records for every (count, SNR) pair, the SNRs being noiseless plus `cfg.sweeps.snrs_db`.
/// Each count gets its own model unless `transfer` is set, in which case the model for
/// `cfg`'s own count is evaluated everywhere.
pub fn sweep_superpixels(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    let shared = if cfg.sweeps.transfer { Some(load_or_train(cfg)?) } else { None };
    let mut out = Vec::new();
    for &n in &cfg.sweeps.superpixel_counts {
        let count_cfg = cfg.with_superpixels(n);
        let test = load_graphs(&count_cfg)?.test;
        let params = match &shared {
            Some(p) => p.clone(),
            None => load_or_train(&count_cfg)?,
        };
        for &snr in std::iter::once(&f64::INFINITY).chain(&cfg.sweeps.snrs_db) {
            let started = Instant::now();
            let count = evaluate(&test, &params, &channel_for(cfg, snr))?;
            info!("{n} superpixels, snr {snr} dB: accuracy {:.4}", count.accuracy());
            out.push(record(&count_cfg, "superpixels", n as f64, snr, 0.0, count, started));
        }
    }
    Ok(out)
}

/// Test images with the rotation-ambiguous classes removed.
pub fn rotation_test_images(cfg: &ExperimentConfig) -> Result<Vec<LabeledImage>> {
    let excluded: HashSet<u8> = cfg.sweeps.rotation_excluded_classes.iter().copied().collect();
    Ok(exclude_classes(&load_split(cfg)?.test, &excluded))
}

/// Rotates the raw images, re-segments them and evaluates on `cfg.channel`; one record per angle.
pub fn sweep_rotation(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    images: &[LabeledImage],
    angles_deg: &[f64],
) -> Result<Vec<ExperimentRecord>> {
    let mut out = Vec::new();
    for &angle in angles_deg {
        let started = Instant::now();
        let rotated: Vec<LabeledImage> = images.par_iter().map(|img| rotate_image(img, angle)).collect();
        let graphs = build_graphs(&rotated, cfg)?;
        let count = evaluate(&graphs, params, &cfg.channel)?;
        info!("rotation {angle} deg: accuracy {:.4}", count.accuracy());
        out.push(record(cfg, "rotation", angle, cfg.channel.snr_db, angle, count, started));
    }
    Ok(out)
}

/// Loads a checkpoint from `path`, or the default location for `cfg`.
pub fn checkpoint_params(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<ModelParams> {
    let default = cfg.model_dir().join(CHECKPOINT_FILE);
    Ok(load_checkpoint(path.unwrap_or(&default))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{knn_adjacency, GraphMeta};
    use crate::model::ModelDims;
    use crate::nn::Tensor;

    fn graphs(n: usize) -> Vec<SuperpixelGraph> {
        (0..n)
            .map(|i| {
                let f = Tensor::from_rows(&[
                    vec![0.1 * (i % 7) as f64, 0.2, 0.3],
                    vec![0.5, 0.1 * (i % 5) as f64, 0.9],
                    vec![0.4, 0.6, 0.05 * (i % 3) as f64],
                ])
                .unwrap();
                SuperpixelGraph {
                    adjacency: knn_adjacency(&f, 2, 1e-8).unwrap(),
                    node_features: f,
                    label: (i % 10) as u8,
                    meta: GraphMeta { k_neighbors: 2, requested_k: 2, epsilon: 1e-8, source_id: format!("g:{i}") },
                }
            })
            .collect()
    }

    #[test]
    fn shard_counts_add_up() {
        let params = ModelParams::init(ModelDims { input: 3, hidden: 6, output: 6, classes: 10, layers: 2 }, 4).unwrap();
        let gs = graphs(30);
        let spec = ChannelSpec::awgn(0.0, 5);
        let whole = evaluate(&gs, &params, &spec).unwrap();
        let parts: usize = gs.chunks(7).map(|c| evaluate(c, &params, &spec).unwrap().correct).sum();
        assert_eq!(whole.correct, parts);
        assert_eq!(whole.total, 30);
    }

    #[test]
    fn snr_sweep_shape() {
        let params = ModelParams::init(ModelDims { input: 3, hidden: 6, output: 6, classes: 10, layers: 2 }, 4).unwrap();
        let cfg = ExperimentConfig::default();
        let gs = graphs(10);
        let recs = sweep_snr(&cfg, &params, &gs, &[0.0]).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].snr_db, f64::INFINITY);
        assert_eq!(recs[0].accuracy, evaluate(&gs, &params, &ChannelSpec::noiseless()).unwrap().accuracy());
        let very_high = sweep_snr(&cfg, &params, &gs, &[300.0]).unwrap();
        assert_eq!(very_high[1].accuracy, recs[0].accuracy);
    }
}
