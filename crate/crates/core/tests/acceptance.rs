//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 5-10 need MNIST under `GENET_DATASET_ROOT` (default `<workspace>/data`) and
//! print SKIP without it. The process exits nonzero on a failure only when
//! `GENET_ACCEPTANCE_STRICT=1`; otherwise the lines are the report. `GENET_ACCEPTANCE_SUBSET`
//! and `GENET_ACCEPTANCE_EPOCHS` shrink the heavy criteria for smoke runs, and the lines
//! then say so.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use genet::channel::{measure_snr, verify_readout_noise_reduction, ChannelSpec};
use genet::experiment::{
    csv_without_wall_time, evaluate, load_graphs, load_split, preprocess, rotation_test_images, sha256_hex,
    sweep_rotation, sweep_snr, sweep_superpixels, train, write_results, ExperimentConfig, ExperimentRecord,
    SubsetSizes, TRAIN_LOG_FILE,
};
use genet::graph::{build_superpixel_graph, write_graph_cache};
use genet::segment::slic_segment;

const SEED: u64 = 0;

struct Verdict {
    id: u32,
    passed: Option<bool>,
    detail: String,
}

impl Verdict {
    fn new(id: u32, passed: bool, detail: impl Into<String>) -> Self {
        Self { id, passed: Some(passed), detail: detail.into() }
    }

    fn skip(id: u32, detail: impl Into<String>) -> Self {
        Self { id, passed: None, detail: detail.into() }
    }

    fn error(id: u32, e: impl std::fmt::Display) -> Self {
        Self::new(id, false, format!("error: {e}"))
    }

    fn print(&self) {
        let tag = match self.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("criterion {:>2}: {tag}  {}", self.id, self.detail);
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn channel_statistics() -> Verdict {
    let started = Instant::now();
    let mut r = common::rng(SEED);
    let features = common::random_tensor(12, 16, 1.0, &mut r);
    let mut worst: f64 = 0.0;
    for snr in [-10.0, 0.0, 10.0] {
        match measure_snr(&features, snr, 100_000, SEED) {
            Ok(measured) => worst = worst.max((measured - snr).abs()),
            Err(e) => return Verdict::error(1, e),
        }
    }
    let elapsed = started.elapsed();
    Verdict::new(
        1,
        worst <= 0.1 && elapsed < Duration::from_secs(10),
        format!("max |measured - requested| {worst:.4} dB over 1e5 applications ({})", secs(elapsed)),
    )
}

fn readout_noise_reduction() -> Verdict {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut all = true;
    for n in [1, 10, 95] {
        match verify_readout_noise_reduction(n, 16, 0.0, 100_000, SEED) {
            Ok(r) => {
                worst = worst.max(r.relative_error);
                all &= r.relative_error <= 0.05;
            }
            Err(e) => return Verdict::error(2, e),
        }
    }
    let elapsed = started.elapsed();
    Verdict::new(
        2,
        all && elapsed < Duration::from_secs(30),
        format!("max relative error of readout variance {worst:.4} for N in {{1, 10, 95}} ({})", secs(elapsed)),
    )
}

fn gradient_oracle() -> Verdict {
    let started = Instant::now();
    let checks = common::gradient_check_suite(24, SEED);
    let elapsed = started.elapsed();
    let worst = checks.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let kinds: std::collections::BTreeMap<_, usize> = checks.iter().fold(Default::default(), |mut m, c| {
        *m.entry(c.layer).or_default() += 1;
        m
    });
    let enough = kinds.values().all(|&n| n >= 20);
    Verdict::new(
        3,
        enough && worst.max_rel_error < 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "{} checks over {kinds:?}, worst {:.2e} ({} {}) ({})",
            checks.len(),
            worst.max_rel_error,
            worst.layer,
            worst.shape,
            secs(elapsed)
        ),
    )
}

fn dense_oracle() -> Verdict {
    let worst = common::dense_oracle_max_deviation(50, SEED);
    Verdict::new(4, worst <= 1e-12, format!("max deviation {worst:.2e} over 50 graphs"))
}

struct Scale {
    subset: Option<usize>,
    epochs: Option<usize>,
}

impl Scale {
    fn from_env() -> Self {
        let read = |key| std::env::var(key).ok().and_then(|v| v.parse().ok());
        Self { subset: read("GENET_ACCEPTANCE_SUBSET"), epochs: read("GENET_ACCEPTANCE_EPOCHS") }
    }

    fn reduced(&self) -> bool {
        self.subset.is_some() || self.epochs.is_some()
    }

    fn note(&self) -> String {
        if self.reduced() {
            format!(" [reduced scale: subset {:?}, epochs {:?}]", self.subset, self.epochs)
        } else {
            String::new()
        }
    }
}

fn config(root: &Path, out: &Path, scale: &Scale) -> genet::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig { dataset_root: root.to_path_buf(), out_dir: out.to_path_buf(), seed: SEED, ..Default::default() };
    if let Some(n) = scale.subset {
        cfg.subset = Some(SubsetSizes::scaled(n));
    }
    if let Some(e) = scale.epochs {
        cfg.training.max_epochs = e;
    }
    cfg.resolved()
}

/// Everything criteria 5-9 produce, plus the files criterion 10 compares.
struct Run {
    verdicts: Vec<Verdict>,
    files: Vec<PathBuf>,
}

fn graph_construction(cfg: &ExperimentConfig, out: &Path) -> genet::Result<Verdict> {
    let pool = ExperimentConfig { subset: None, ..cfg.clone() };
    let images: Vec<_> = load_split(&pool)?.train.into_iter().take(1000).collect();
    let build = || -> genet::Result<(Vec<_>, Vec<String>)> {
        let mut graphs = Vec::new();
        let mut problems = Vec::new();
        for img in &images {
            let mask = slic_segment(img, cfg.n_superpixels(), cfg.compactness(), cfg.slic_iterations)?;
            if !mask.ids_contiguous() || !mask.segments_connected() {
                problems.push(format!("{}: mask is not a partition into connected segments", img.source_id));
            }
            let g = build_superpixel_graph(img, &mask, &cfg.adjacency())?;
            if g.num_nodes() != mask.n_segments {
                problems.push(format!("{}: {} nodes for {} segments", img.source_id, g.num_nodes(), mask.n_segments));
            }
            if let Err(e) = g.check_invariants() {
                problems.push(format!("{}: {e}", img.source_id));
            }
            graphs.push(g);
        }
        Ok((graphs, problems))
    };
    let started = Instant::now();
    let (first, problems) = build()?;
    let (second, _) = build()?;
    let deterministic = first == second;
    let path = out.join("results").join("graphs_1000.gcache");
    std::fs::create_dir_all(path.parent().unwrap())?;
    write_graph_cache(&path, &first)?;
    Ok(Verdict::new(
        5,
        images.len() == 1000 && problems.is_empty() && deterministic,
        format!(
            "{} images, {} violations{}, deterministic {deterministic} ({})",
            images.len(),
            problems.len(),
            problems.first().map(|p| format!(" (first: {p})")).unwrap_or_default(),
            secs(started.elapsed())
        ),
    ))
}

fn acc_at(records: &[ExperimentRecord], pick: impl Fn(&ExperimentRecord) -> bool) -> Option<f64> {
    records.iter().find(|r| pick(r)).map(|r| r.accuracy)
}

fn run_pipeline(root: &Path, out: &Path, scale: &Scale) -> genet::Result<Run> {
    if out.exists() {
        std::fs::remove_dir_all(out)?;
    }
    let cfg = config(root, out, scale)?;
    let note = scale.note();
    let mut verdicts = vec![graph_construction(&cfg, out)?];
    let results = out.join("results");

    let started = Instant::now();
    let artifacts = train(&cfg)?;
    let test = load_graphs(&cfg)?.test;
    let noiseless = evaluate(&test, &artifacts.outcome.params, &ChannelSpec::noiseless())?.accuracy();
    verdicts.push(Verdict::new(
        6,
        noiseless >= 0.80,
        format!(
            "noiseless test accuracy {noiseless:.4} on {} graphs (need >= 0.80), best val {:.4} at epoch {} of {} ({}){note}",
            test.len(),
            artifacts.outcome.best_val_acc,
            artifacts.outcome.best_epoch,
            artifacts.outcome.log.len(),
            secs(started.elapsed())
        ),
    ));

    let snr_records = sweep_snr(&cfg, &artifacts.outcome.params, &test, &cfg.sweeps.snrs_db)?;
    write_results(&cfg, &snr_records, &results.join("snr.csv"), serde_json::json!({}))?;
    let at_zero = acc_at(&snr_records, |r| r.snr_db == 0.0).unwrap_or(f64::NAN);
    let mut curve: Vec<_> = snr_records.iter().filter(|r| r.snr_db.is_finite()).collect();
    curve.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
    let monotone = curve.windows(2).all(|w| w[1].accuracy >= w[0].accuracy - 0.02);
    let shape: Vec<String> = curve.iter().map(|r| format!("{:.3}", r.accuracy)).collect();
    verdicts.push(Verdict::new(
        7,
        at_zero >= noiseless - 0.02 && monotone && curve.len() == 7,
        format!(
            "0 dB {at_zero:.4} vs noiseless {noiseless:.4}; -30..30 dB [{}], non-decreasing within 0.02: {monotone}{note}",
            shape.join(", ")
        ),
    ));

    let started = Instant::now();
    let sp_records = sweep_superpixels(&cfg)?;
    write_results(&cfg, &sp_records, &results.join("superpixels.csv"), serde_json::json!({}))?;
    let trend: Vec<f64> = cfg
        .sweeps
        .superpixel_counts
        .iter()
        .filter_map(|&n| acc_at(&sp_records, |r| r.sweep_value == n as f64 && r.snr_db.is_infinite()))
        .collect();
    let rising = trend.windows(2).all(|w| w[1] >= w[0] - 0.03);
    verdicts.push(Verdict::new(
        8,
        rising && trend.len() == 3,
        format!(
            "noiseless accuracy for {:?} nodes: {:?}, non-decreasing within 0.03: {rising} ({}){note}",
            cfg.sweeps.superpixel_counts,
            trend.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>(),
            secs(started.elapsed())
        ),
    ));

    let started = Instant::now();
    let images = rotation_test_images(&cfg)?;
    let rot_records = sweep_rotation(&cfg, &artifacts.outcome.params, &images, &cfg.sweeps.rotation_angles_deg)?;
    write_results(&cfg, &rot_records, &results.join("rotation.csv"), serde_json::json!({}))?;
    let excluded = &cfg.sweeps.rotation_excluded_classes;
    let kept: Vec<_> = test.iter().filter(|g| !excluded.contains(&g.label)).cloned().collect();
    let standard = evaluate(&kept, &artifacts.outcome.params, &cfg.channel)?.accuracy();
    let mean = |right: bool| {
        let accs: Vec<f64> = rot_records
            .iter()
            .filter(|r| (r.rotation_deg % 90.0 == 0.0) == right)
            .map(|r| r.accuracy)
            .collect();
        accs.iter().sum::<f64>() / accs.len() as f64
    };
    let (right, oblique) = (mean(true), mean(false));
    let at_zero = acc_at(&rot_records, |r| r.rotation_deg == 0.0).unwrap_or(f64::NAN);
    verdicts.push(Verdict::new(
        9,
        right >= oblique && at_zero == standard && rot_records.len() == 8,
        format!(
            "right-angle mean {right:.4} vs oblique mean {oblique:.4}; angle 0 {at_zero:.4} vs standard {standard:.4} on {} images ({}){note}",
            images.len(),
            secs(started.elapsed())
        ),
    ));

    let mut files = vec![
        results.join("graphs_1000.gcache"),
        results.join("snr.csv"),
        results.join("superpixels.csv"),
        results.join("rotation.csv"),
        cfg.model_dir().join(TRAIN_LOG_FILE),
    ];
    for &n in &cfg.sweeps.superpixel_counts {
        let count_cfg = cfg.with_superpixels(n);
        let outcome = preprocess(&count_cfg)?;
        for c in &outcome.manifest.caches {
            files.push(outcome.dir.join(&c.file));
        }
        files.push(count_cfg.model_dir().join(TRAIN_LOG_FILE));
    }
    files.sort();
    files.dedup();
    Ok(Run { verdicts, files })
}

fn comparable(path: &Path) -> std::io::Result<String> {
    if path.extension().is_some_and(|e| e == "csv") && path.file_name().is_some_and(|n| n != TRAIN_LOG_FILE) {
        Ok(csv_without_wall_time(&std::fs::read_to_string(path)?))
    } else {
        Ok(sha256_hex(&std::fs::read(path)?))
    }
}

fn reproducibility(first: &Run, second: &Run, base: &Path, base2: &Path) -> Verdict {
    if first.files.len() != second.files.len() {
        return Verdict::new(10, false, "runs produced different file sets");
    }
    let mut differing = Vec::new();
    for (a, b) in first.files.iter().zip(&second.files) {
        let rel_a = a.strip_prefix(base).unwrap_or(a);
        let rel_b = b.strip_prefix(base2).unwrap_or(b);
        match (comparable(a), comparable(b)) {
            (Ok(x), Ok(y)) if rel_a == rel_b && x == y => {}
            _ => differing.push(rel_a.display().to_string()),
        }
    }
    let verdicts_match = first.verdicts.iter().zip(&second.verdicts).all(|(a, b)| a.passed == b.passed);
    Verdict::new(
        10,
        differing.is_empty() && verdicts_match,
        format!(
            "{} files compared (CSVs without wall_time_s, caches by checksum), differing: {differing:?}",
            first.files.len()
        ),
    )
}

fn dataset_root() -> PathBuf {
    std::env::var_os("GENET_DATASET_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn main() {
    // cargo passes harness flags such as --list; this target has a single entry point.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut verdicts = Vec::new();
    for check in [channel_statistics, readout_noise_reduction, gradient_oracle, dense_oracle] {
        let v = check();
        v.print();
        verdicts.push(v);
    }

    let root = dataset_root();
    let scale = Scale::from_env();
    if !root.join("mnist/train-images-idx3-ubyte").exists() {
        for id in 5..=10 {
            let v = Verdict::skip(id, format!("MNIST not found under {}", root.display()));
            v.print();
            verdicts.push(v);
        }
    } else {
        let base = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        let (dir_a, dir_b) = (base.join("run1"), base.join("run2"));
        let first = run_pipeline(&root, &dir_a, &scale);
        match &first {
            Ok(run) => run.verdicts.iter().for_each(Verdict::print),
            Err(e) => Verdict::error(5, e).print(),
        }
        let second = run_pipeline(&root, &dir_b, &scale);
        let tenth = match (&first, &second) {
            (Ok(a), Ok(b)) => reproducibility(a, b, &dir_a, &dir_b),
            (_, Err(e)) | (Err(e), _) => Verdict::error(10, e),
        };
        match first {
            Ok(run) => verdicts.extend(run.verdicts),
            Err(e) => verdicts.push(Verdict::error(5, e)),
        }
        tenth.print();
        verdicts.push(tenth);
    }

    let failed: Vec<u32> = verdicts.iter().filter(|v| v.passed == Some(false)).map(|v| v.id).collect();
    println!("acceptance: {} of {} criteria failed {failed:?}{}", failed.len(), verdicts.len(), scale.note());
    if !failed.is_empty() && std::env::var("GENET_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
