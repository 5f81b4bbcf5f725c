//! Mini-batch training with Adam, per-epoch validation and the plateau schedule.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::sweep::evaluate;
use crate::channel::ChannelSpec;
use crate::error::{Error, Result};
use crate::graph::SuperpixelGraph;
use crate::model::{loss_and_gradients, save_checkpoint, ModelParams};
use crate::nn::{adam_step, AdamState, PlateauScheduler, Tensor};
use crate::rng::rng_for;

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    /// Learning rate in effect during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub stopped_by_schedule: bool,
}

fn training_channel<R: Rng>(cfg: &ExperimentConfig, rng: &mut R) -> ChannelSpec {
    match cfg.training.snr_range_db {
        Some([lo, hi]) => ChannelSpec::awgn(rng.random_range(lo..=hi), cfg.seed),
        None => cfg.training.channel,
    }
}

/// Trains a fresh model on `train`, selecting by noiseless accuracy on `val`.
pub fn train_model(
    cfg: &ExperimentConfig,
    train: &[SuperpixelGraph],
    val: &[SuperpixelGraph],
) -> Result<TrainOutcome> {
    let first = train.first().ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
    if val.is_empty() {
        return Err(Error::InvalidArgument("empty validation set".into()));
    }
    let t = &cfg.training;
    let mut params = ModelParams::init(cfg.model_dims(first.feature_dim()), cfg.seed)?;
    let mut adam = {
        let refs: Vec<&Tensor> = params.parameters().into_iter().map(|(_, p)| p).collect();
        AdamState::new(&refs, t.adam)
    };
    let mut schedule = PlateauScheduler::new(t.adam.lr, t.plateau);
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut log = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopped = false;

    for epoch in 1..=t.max_epochs {
        let started = Instant::now();
        let mut shuffle_rng = rng_for(cfg.seed, &format!("shuffle-{epoch}"));
        let mut noise_rng = rng_for(cfg.seed, &format!("train-noise-{epoch}"));
        order.shuffle(&mut shuffle_rng);
        let lr = adam.lr();
        let mut loss_sum = 0.0;
        for batch in order.chunks(t.batch_size) {
            let mut accumulated: Option<Vec<Tensor>> = None;
            for &i in batch {
                let graph = &train[i];
                let channel = training_channel(cfg, &mut noise_rng);
                let (loss, grads, _) = loss_and_gradients(graph, &params, &channel, &mut noise_rng)?;
                if !loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "loss {loss} at epoch {epoch} on {} (lr {lr:e})",
                        graph.meta.source_id
                    )));
                }
                loss_sum += loss;
                match accumulated.as_mut() {
                    None => accumulated = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.axpy(1.0, g);
                        }
                    }
                }
            }
            let mut grads = accumulated.expect("non-empty batch");
            for g in &mut grads {
                g.scale_in_place(1.0 / batch.len() as f64);
            }
            if !t.freeze_weights {
                adam_step(&mut params.parameters_mut(), &grads, &mut adam)?;
            }
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_acc = evaluate(val, &params, &ChannelSpec::noiseless())?.accuracy();
        log.push(EpochLog { epoch, train_loss, val_acc, lr });
        info!(
            "epoch {epoch}: loss {train_loss:.4} val_acc {val_acc:.4} lr {lr:e} ({:.1}s)",
            started.elapsed().as_secs_f64()
        );
        if val_acc > best.2 {
            best = (params.clone(), epoch, val_acc);
        }
        let stop = schedule.update(val_acc);
        adam.set_lr(schedule.current_lr);
        if stop {
            stopped = true;
            break;
        }
    }
    Ok(TrainOutcome { params: best.0, log, best_epoch: best.1, best_val_acc: best.2, stopped_by_schedule: stopped })
}

pub fn write_training_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_acc", "lr"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            format!("{:.6}", e.train_loss),
            format!("{:.6}", e.val_acc),
            format!("{:e}", e.lr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_training_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| Error::Format(format!("bad log field '{}'", &row[i])))
        };
        out.push(EpochLog { epoch: num(0)? as usize, train_loss: num(1)?, val_acc: num(2)?, lr: num(3)? });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub outcome: TrainOutcome,
}

/// Trains on the configured caches and writes the best checkpoint and the epoch log into
/// `cfg.model_dir()`.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainArtifacts> {
    let graphs = super::preprocess::load_graphs(cfg)?;
    let outcome = train_model(cfg, &graphs.train, &graphs.val)?;
    let dir = cfg.model_dir();
    std::fs::create_dir_all(&dir)?;
    let checkpoint = dir.join(CHECKPOINT_FILE);
    let hyper = serde_json::json!({
        "config": cfg,
        "best_epoch": outcome.best_epoch,
        "best_val_acc": outcome.best_val_acc,
    });
    save_checkpoint(&checkpoint, &outcome.params, hyper)?;
    let log_path = dir.join(TRAIN_LOG_FILE);
    write_training_log(&log_path, &outcome.log)?;
    Ok(TrainArtifacts { checkpoint, log_path, outcome })
}
