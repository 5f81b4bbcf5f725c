//! The JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelSpec;
use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::graph::{AdjacencyOptions, DEFAULT_EPSILON, DEFAULT_K_NEIGHBORS};
use crate::model::ModelDims;
use crate::nn::{AdamConfig, PlateauConfig};
use crate::segment::DEFAULT_SLIC_ITERATIONS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub dataset_root: PathBuf,
    pub out_dir: PathBuf,
    pub backbone: String,
    /// Master seed for splits, initialization, shuffling and channel noise.
    pub seed: u64,
    /// `None` picks the dataset default.
    pub n_superpixels: Option<usize>,
    pub compactness: Option<f64>,
    pub slic_iterations: usize,
    pub k_neighbors: usize,
    pub epsilon: f64,
    pub sigma_squared: bool,
    pub symmetrize: bool,
    /// Per-class fraction of the official training set held out for validation.
    pub validation_fraction: f64,
    /// Stratified subset sizes; `None` uses the full corpus.
    pub subset: Option<SubsetSizes>,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    /// Evaluation channel; its `rng_seed` is overwritten by the master seed at resolution.
    pub channel: ChannelSpec,
    pub sweeps: SweepConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SubsetSizes {
    /// `n` training graphs with validation and test at a fifth of that.
    pub fn scaled(n: usize) -> Self {
        Self { train: n, val: n / 5, test: n / 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub output: usize,
    /// Attention heads for a GAT backbone; unused by GCN.
    pub gat_heads: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { layers: 4, hidden: 146, output: 146, gat_heads: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    pub max_epochs: usize,
    /// Channel applied during training. Noiseless by default.
    pub channel: ChannelSpec,
    /// When set, each training graph sees AWGN at an SNR drawn uniformly from this range.
    pub snr_range_db: Option<[f64; 2]>,
    /// Skip parameter updates (schedule diagnostics).
    pub freeze_weights: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 5,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
            max_epochs: 60,
            channel: ChannelSpec::noiseless(),
            snr_range_db: None,
            freeze_weights: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub snrs_db: Vec<f64>,
    pub superpixel_counts: Vec<usize>,
    pub rotation_angles_deg: Vec<f64>,
    /// Classes dropped before the rotation sweep (rotation-ambiguous digits).
    pub rotation_excluded_classes: Vec<u8>,
    /// Evaluate one model on every superpixel count instead of retraining per count.
    pub transfer: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            snrs_db: vec![-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0],
            superpixel_counts: vec![20, 50, 95],
            rotation_angles_deg: (0..8).map(|i| 45.0 * i as f64).collect(),
            rotation_excluded_classes: vec![6, 9],
            transfer: false,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Mnist,
            dataset_root: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            backbone: "gcn".into(),
            seed: 0,
            n_superpixels: None,
            compactness: None,
            slic_iterations: DEFAULT_SLIC_ITERATIONS,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            epsilon: DEFAULT_EPSILON,
            sigma_squared: false,
            symmetrize: false,
            validation_fraction: 0.1,
            subset: Some(SubsetSizes { train: 10_000, val: 2_000, test: 2_000 }),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            channel: ChannelSpec::noiseless(),
            sweeps: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fills dataset defaults and propagates the master seed; validates the result.
    pub fn resolved(mut self) -> Result<Self> {
        let (n, c) = self.dataset.default_superpixels();
        self.n_superpixels.get_or_insert(n);
        self.compactness.get_or_insert(c);
        self.channel.rng_seed = self.seed;
        self.training.channel.rng_seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.backbone != "gcn" {
            return Err(Error::InvalidArgument(format!("unsupported backbone '{}'", self.backbone)));
        }
        if self.n_superpixels.is_some_and(|n| n < 2) {
            return bad("n_superpixels must be at least 2");
        }
        if self.compactness.is_some_and(|c| !(c > 0.0)) {
            return bad("compactness must be positive");
        }
        if self.k_neighbors == 0 || !(self.epsilon > 0.0) || self.slic_iterations == 0 {
            return bad("k_neighbors, epsilon and slic_iterations must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if self.model.layers == 0 || self.model.hidden == 0 || self.model.output == 0 {
            return bad("model widths and depth must be positive");
        }
        let t = &self.training;
        if t.batch_size == 0 || t.max_epochs == 0 || !(t.adam.lr > 0.0) {
            return bad("batch_size, max_epochs and lr must be positive");
        }
        if !(t.plateau.factor > 0.0 && t.plateau.factor < 1.0) {
            return bad("plateau factor must lie in (0, 1)");
        }
        self.channel.validate()?;
        t.channel.validate()?;
        if self.sweeps.superpixel_counts.iter().any(|&n| n < 2) {
            return bad("superpixel counts must be at least 2");
        }
        Ok(())
    }

    pub fn n_superpixels(&self) -> usize {
        self.n_superpixels.unwrap_or_else(|| self.dataset.default_superpixels().0)
    }

    pub fn compactness(&self) -> f64 {
        self.compactness.unwrap_or_else(|| self.dataset.default_superpixels().1)
    }

    pub fn adjacency(&self) -> AdjacencyOptions {
        AdjacencyOptions {
            k: self.k_neighbors,
            epsilon: self.epsilon,
            sigma_squared: self.sigma_squared,
            symmetrize: self.symmetrize,
        }
    }

    /// Model dimensions for graphs with `input` node features.
    pub fn model_dims(&self, input: usize) -> ModelDims {
        ModelDims {
            input,
            hidden: self.model.hidden,
            output: self.model.output,
            classes: crate::data::NUM_CLASSES,
            layers: self.model.layers,
        }
    }

    /// Node feature width: colour channels plus two centroid coordinates.
    pub fn feature_dim(&self) -> usize {
        match self.dataset {
            DatasetKind::Cifar10 => 5,
            _ => 3,
        }
    }

    /// The same experiment at a different superpixel count.
    pub fn with_superpixels(&self, n: usize) -> Self {
        Self { n_superpixels: Some(n), ..self.clone() }
    }

    /// Directory holding the graph caches for the current segmentation settings.
    pub fn cache_dir(&self) -> PathBuf {
        let subset = match self.subset {
            Some(s) => format!("{}-{}-{}", s.train, s.val, s.test),
            None => "full".into(),
        };
        self.out_dir.join("graphs").join(format!(
            "{}_n{}_c{}_k{}_{}_s{}",
            self.dataset,
            self.n_superpixels(),
            self.compactness(),
            self.k_neighbors,
            subset,
            self.seed
        ))
    }

    /// Directory for the model trained on [`cache_dir`](Self::cache_dir)'s graphs.
    pub fn model_dir(&self) -> PathBuf {
        self.out_dir.join("models").join(self.cache_dir().file_name().expect("named cache dir"))
    }
}
