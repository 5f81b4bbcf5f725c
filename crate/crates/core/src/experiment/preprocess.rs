//! Dataset splits, image-to-graph conversion and the on-disk graph caches.

use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, SubsetSizes};
use crate::data::{split_train_val, stratified_subset, DatasetSplit, LabeledImage};
use crate::error::{Error, Result};
use crate::graph::{build_superpixel_graph, read_graph_cache, write_graph_cache, AdjacencyOptions, SuperpixelGraph};
use crate::rng::RNG_ALGORITHM;
use crate::segment::slic_segment;

pub const MANIFEST_FILE: &str = "manifest.json";
const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Everything that determines the cached graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessParams {
    pub dataset: String,
    pub n_superpixels: usize,
    pub compactness: f64,
    pub slic_iterations: usize,
    pub adjacency: AdjacencyOptions,
    pub validation_fraction: f64,
    pub subset: Option<SubsetSizes>,
    pub seed: u64,
    pub rng: String,
}

impl PreprocessParams {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            dataset: cfg.dataset.to_string(),
            n_superpixels: cfg.n_superpixels(),
            compactness: cfg.compactness(),
            slic_iterations: cfg.slic_iterations,
            adjacency: cfg.adjacency(),
            validation_fraction: cfg.validation_fraction,
            subset: cfg.subset,
            seed: cfg.seed,
            rng: RNG_ALGORITHM.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub split: String,
    pub file: String,
    pub records: usize,
    pub sha256: String,
    pub mean_nodes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub params: PreprocessParams,
    pub caches: Vec<CacheEntry>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct GraphSets {
    pub train: Vec<SuperpixelGraph>,
    pub val: Vec<SuperpixelGraph>,
    pub test: Vec<SuperpixelGraph>,
}

#[derive(Debug, Clone)]
pub struct PreprocessOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// True when the existing caches matched and nothing was recomputed.
    pub reused: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Official train set split per class into train/validation, then optionally subsampled.
pub fn load_split(cfg: &ExperimentConfig) -> Result<DatasetSplit> {
    let (train_pool, test) = cfg.dataset.load(&cfg.dataset_root)?;
    let mut split = split_train_val(&train_pool, cfg.validation_fraction, cfg.seed)?;
    split.test = test;
    if let Some(sizes) = cfg.subset {
        split.train = stratified_subset(&split.train, sizes.train, crate::rng::derive_seed(cfg.seed, "subset-train"));
        split.val = stratified_subset(&split.val, sizes.val, crate::rng::derive_seed(cfg.seed, "subset-val"));
        split.test = stratified_subset(&split.test, sizes.test, crate::rng::derive_seed(cfg.seed, "subset-test"));
    }
    Ok(split)
}

/// SLIC plus graph construction for one image.
pub fn image_to_graph(img: &LabeledImage, cfg: &ExperimentConfig) -> Result<SuperpixelGraph> {
    let mask = slic_segment(img, cfg.n_superpixels(), cfg.compactness(), cfg.slic_iterations)?;
    build_superpixel_graph(img, &mask, &cfg.adjacency())
}

/// Converts images in parallel; output order follows input order.
pub fn build_graphs(images: &[LabeledImage], cfg: &ExperimentConfig) -> Result<Vec<SuperpixelGraph>> {
    images.par_iter().map(|img| image_to_graph(img, cfg)).collect()
}

fn read_manifest(dir: &Path) -> Option<Manifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

fn manifest_matches(dir: &Path, manifest: &Manifest, params: &PreprocessParams) -> bool {
    manifest.params == *params
        && manifest.caches.len() == SPLITS.len()
        && manifest
            .caches
            .iter()
            .all(|c| file_sha256(&dir.join(&c.file)).is_ok_and(|sum| sum == c.sha256))
}

/// Builds the train/val/test graph caches under `cfg.cache_dir()` unless an up-to-date
/// manifest already describes them.
pub fn preprocess(cfg: &ExperimentConfig) -> Result<PreprocessOutcome> {
    let dir = cfg.cache_dir();
    let params = PreprocessParams::from_config(cfg);
    if let Some(manifest) = read_manifest(&dir) {
        if manifest_matches(&dir, &manifest, &params) {
            info!("graph caches in {} are up to date", dir.display());
            return Ok(PreprocessOutcome { dir, manifest, reused: true });
        }
    }
    std::fs::create_dir_all(&dir)?;
    let split = load_split(cfg)?;
    let mut caches = Vec::new();
    for (name, images) in SPLITS.iter().zip([&split.train, &split.val, &split.test]) {
        info!("segmenting {} {name} images into ~{} superpixels", images.len(), cfg.n_superpixels());
        let graphs = build_graphs(images, cfg)?;
        let file = format!("{name}.gcache");
        let path = dir.join(&file);
        write_graph_cache(&path, &graphs)?;
        let mean_nodes = graphs.iter().map(|g| g.num_nodes() as f64).sum::<f64>() / graphs.len().max(1) as f64;
        caches.push(CacheEntry {
            split: name.to_string(),
            file,
            records: graphs.len(),
            sha256: file_sha256(&path)?,
            mean_nodes,
        });
    }
    let manifest = Manifest { params, caches, config: cfg.clone() };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(PreprocessOutcome { dir, manifest, reused: false })
}

/// Preprocesses if needed and reads all three caches back.
pub fn load_graphs(cfg: &ExperimentConfig) -> Result<GraphSets> {
    let outcome = preprocess(cfg)?;
    let read = |split: &str| -> Result<Vec<SuperpixelGraph>> {
        let entry = outcome
            .manifest
            .caches
            .iter()
            .find(|c| c.split == split)
            .ok_or_else(|| Error::Consistency(format!("manifest lacks the {split} cache")))?;
        let graphs = read_graph_cache(&outcome.dir.join(&entry.file))?;
        if graphs.len() != entry.records {
            return Err(Error::Consistency(format!(
                "{split} cache holds {} graphs, manifest says {}",
                graphs.len(),
                entry.records
            )));
        }
        Ok(graphs)
    };
    Ok(GraphSets { train: read("train")?, val: read("val")?, test: read("test")? })
}
