use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::info;

use genet::channel::{measure_snr, verify_readout_noise_reduction};
use genet::experiment::{
    checkpoint_params, load_graphs, preprocess, rotation_test_images, sweep_rotation, sweep_snr,
    sweep_superpixels, train, write_results, ExperimentConfig, SubsetSizes,
};
use genet::nn::Tensor;
use genet::Result;

#[derive(Parser)]
#[command(name = "genet", version, about = "Superpixel-graph semantic communication over AWGN channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    dataset_root: Option<PathBuf>,
    /// Training subset size (validation and test get a fifth each); 0 uses the full corpus.
    #[arg(long)]
    subset: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Segment the dataset and write graph caches plus a manifest.
    Preprocess(Common),
    /// Train a model and write the best checkpoint and the epoch log.
    Train(Common),
    /// Accuracy versus channel SNR.
    EvalSnr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Accuracy versus superpixel count (retrains per count unless the config sets transfer).
    EvalSuperpixels(Common),
    /// Accuracy versus input rotation angle.
    EvalRotation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Monte-Carlo checks of the channel calibration and readout noise averaging.
    VerifyChannel(Common),
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(root) = &common.dataset_root {
        cfg.dataset_root = root.clone();
    }
    match common.subset {
        Some(0) => cfg.subset = None,
        Some(n) => cfg.subset = Some(SubsetSizes::scaled(n)),
        None => {}
    }
    cfg.resolved()
}

fn results_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.out_dir.join("results").join(name)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(common) => {
            let cfg = resolve(&common)?;
            let outcome = preprocess(&cfg)?;
            for c in &outcome.manifest.caches {
                println!("{}: {} graphs, {:.1} nodes on average", c.split, c.records, c.mean_nodes);
            }
            println!(
                "{} {}",
                if outcome.reused { "up to date:" } else { "wrote" },
                outcome.dir.display()
            );
        }
        Command::Train(common) => {
            let cfg = resolve(&common)?;
            let artifacts = train(&cfg)?;
            println!(
                "best val_acc {:.4} at epoch {} of {}",
                artifacts.outcome.best_val_acc,
                artifacts.outcome.best_epoch,
                artifacts.outcome.log.len()
            );
            println!("checkpoint: {}", artifacts.checkpoint.display());
            println!("log: {}", artifacts.log_path.display());
        }
        Command::EvalSnr { common, checkpoint } => {
            let cfg = resolve(&common)?;
            let params = checkpoint_params(&cfg, checkpoint.as_deref())?;
            let test = load_graphs(&cfg)?.test;
            let records = sweep_snr(&cfg, &params, &test, &cfg.sweeps.snrs_db)?;
            let path = results_path(&cfg, "snr.csv");
            write_results(&cfg, &records, &path, serde_json::json!({ "checkpoint": checkpoint }))?;
            println!("{}", path.display());
        }
        Command::EvalSuperpixels(common) => {
            let cfg = resolve(&common)?;
            let records = sweep_superpixels(&cfg)?;
            let path = results_path(&cfg, "superpixels.csv");
            write_results(&cfg, &records, &path, serde_json::json!({ "transfer": cfg.sweeps.transfer }))?;
            println!("{}", path.display());
        }
        Command::EvalRotation { common, checkpoint } => {
            let cfg = resolve(&common)?;
            let params = checkpoint_params(&cfg, checkpoint.as_deref())?;
            let images = rotation_test_images(&cfg)?;
            info!("{} test images after class exclusion", images.len());
            let records = sweep_rotation(&cfg, &params, &images, &cfg.sweeps.rotation_angles_deg)?;
            let path = results_path(&cfg, "rotation.csv");
            write_results(&cfg, &records, &path, serde_json::json!({ "checkpoint": checkpoint }))?;
            println!("{}", path.display());
        }
        Command::VerifyChannel(common) => {
            let cfg = resolve(&common)?;
            let features = Tensor::from_vec(4, 8, (0..32).map(|i| ((i % 7) as f64 - 3.0) / 3.0).collect())?;
            let mut snr_checks = Vec::new();
            for snr in [-10.0, 0.0, 10.0] {
                let measured = measure_snr(&features, snr, 100_000, cfg.seed)?;
                println!("requested {snr:+.1} dB, measured {measured:+.4} dB");
                snr_checks.push(serde_json::json!({ "requested_db": snr, "measured_db": measured }));
            }
            let mut readout = Vec::new();
            for n in [1, 10, 95] {
                let r = verify_readout_noise_reduction(n, 16, 0.0, 100_000, cfg.seed)?;
                println!(
                    "N = {n}: readout variance {:.6e}, expected {:.6e}, relative error {:.4}",
                    r.empirical_readout_variance, r.expected_readout_variance, r.relative_error
                );
                readout.push(r);
            }
            let dir = cfg.out_dir.join("results");
            std::fs::create_dir_all(&dir)?;
            let report = serde_json::json!({ "config": cfg, "snr": snr_checks, "readout": readout });
            std::fs::write(dir.join("channel.json"), serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
