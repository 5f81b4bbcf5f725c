//! Superpixel graphs: node features from a segmentation, Gaussian-kernel k-NN adjacency,
//! the painted rendering, and the binary graph cache format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::segment::SegmentationMask;

pub const GRAPH_CACHE_MAGIC: &[u8; 8] = b"GENETG01";
pub const DEFAULT_K_NEIGHBORS: usize = 8;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Options for the k-NN Gaussian adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyOptions {
    pub k: usize,
    pub epsilon: f64,
    /// Divide by `sigma_i^2` instead of `sigma_i` (ablation).
    #[serde(default)]
    pub sigma_squared: bool,
    /// Replace `A` by `max(A, A^T)`.
    #[serde(default)]
    pub symmetrize: bool,
}

impl Default for AdjacencyOptions {
    fn default() -> Self {
        Self { k: DEFAULT_K_NEIGHBORS, epsilon: DEFAULT_EPSILON, sigma_squared: false, symmetrize: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    /// Neighbour count actually used (after clamping to `M - 1`).
    pub k_neighbors: usize,
    pub requested_k: usize,
    pub epsilon: f64,
    pub source_id: String,
}

impl GraphMeta {
    pub fn k_was_clamped(&self) -> bool {
        self.k_neighbors != self.requested_k
    }
}

/// An image as a graph: `M x (C+2)` node features `[mean colour, centroid row/H, centroid col/W]`
/// and a directed `M x M` weight matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperpixelGraph {
    pub node_features: Tensor,
    pub adjacency: Tensor,
    pub label: u8,
    pub meta: GraphMeta,
}

impl SuperpixelGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }

    /// Relabels nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let m = self.num_nodes();
        let mut seen = vec![false; m];
        if perm.len() != m || perm.iter().any(|&p| p >= m || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument("not a permutation of the node ids".into()));
        }
        let d = self.feature_dim();
        let mut features = Tensor::zeros(m, d);
        let mut adjacency = Tensor::zeros(m, m);
        for (new_i, &old_i) in perm.iter().enumerate() {
            features.row_mut(new_i).copy_from_slice(self.node_features.row(old_i));
            for (new_j, &old_j) in perm.iter().enumerate() {
                adjacency.set(new_i, new_j, self.adjacency.get(old_i, old_j));
            }
        }
        Ok(Self { node_features: features, adjacency, label: self.label, meta: self.meta.clone() })
    }

    /// Checks the structural invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let m = self.num_nodes();
        if self.adjacency.shape() != [m, m] {
            return Err(format!("adjacency shape {:?} for {m} nodes", self.adjacency.shape()));
        }
        if let Some(v) = self.node_features.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(format!("node feature {v} outside [0, 1]"));
        }
        let expected_degree = self.meta.k_neighbors.min(m.saturating_sub(1));
        for i in 0..m {
            if self.adjacency.get(i, i) != 0.0 {
                return Err(format!("nonzero diagonal at {i}"));
            }
            let row = self.adjacency.row(i);
            if let Some(w) = row.iter().find(|w| **w != 0.0 && !(**w > 0.0 && **w <= 1.0)) {
                return Err(format!("weight {w} outside (0, 1] in row {i}"));
            }
            let degree = row.iter().filter(|w| **w != 0.0).count();
            if degree != expected_degree {
                return Err(format!("node {i} has out-degree {degree}, expected {expected_degree}"));
            }
        }
        Ok(())
    }
}

/// Gaussian-kernel k-NN weights with the default options (`sigma_i`, directed).
pub fn knn_adjacency(features: &Tensor, k: usize, epsilon: f64) -> Result<Tensor> {
    knn_adjacency_with(features, &AdjacencyOptions { k, epsilon, ..AdjacencyOptions::default() })
}

/// For each node `i`: take the `k` nearest other nodes by Euclidean distance (ties to the
/// lower id), set `sigma_i = sum of their squared distances + epsilon`, and weight each
/// neighbour `j` by `exp(-dist(i, j)^2 / sigma_i)`.
pub fn knn_adjacency_with(features: &Tensor, opts: &AdjacencyOptions) -> Result<Tensor> {
    let m = features.rows();
    let k = opts.k;
    if k == 0 || k >= m {
        return Err(Error::InvalidArgument(format!("k = {k} requires 1 <= k < M = {m}")));
    }
    if !features.all_finite() {
        return Err(Error::Data("non-finite node features".into()));
    }
    if opts.epsilon < 0.0 {
        return Err(Error::InvalidArgument("epsilon must be non-negative".into()));
    }
    let sq_dist = |i: usize, j: usize| -> f64 {
        features.row(i).iter().zip(features.row(j)).map(|(a, b)| (a - b) * (a - b)).sum()
    };

    let mut adjacency = Tensor::zeros(m, m);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(m);
    for i in 0..m {
        candidates.clear();
        candidates.extend((0..m).filter(|&j| j != i).map(|j| (sq_dist(i, j), j)));
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let nearest = &candidates[..k];
        let sigma: f64 = nearest.iter().map(|(d2, _)| d2).sum::<f64>() + opts.epsilon;
        let scale = if opts.sigma_squared { sigma * sigma } else { sigma };
        for &(d2, j) in nearest {
            let w = if d2 == 0.0 { 1.0 } else { (-d2 / scale).exp() };
            adjacency.set(i, j, w);
        }
    }
    if opts.symmetrize {
        for i in 0..m {
            for j in (i + 1)..m {
                let w = adjacency.get(i, j).max(adjacency.get(j, i));
                adjacency.set(i, j, w);
                adjacency.set(j, i, w);
            }
        }
    }
    Ok(adjacency)
}

fn check_mask(img: &LabeledImage, mask: &SegmentationMask) -> Result<()> {
    if (mask.height, mask.width) != (img.height, img.width) {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match image {}x{}",
            mask.height, mask.width, img.height, img.width
        )));
    }
    Ok(())
}

/// Per-segment mean colour, `n_segments x C`.
fn segment_colors(img: &LabeledImage, mask: &SegmentationMask) -> (Vec<Vec<f64>>, Vec<usize>) {
    let ch = img.channels;
    let mut sums = vec![vec![0.0; ch]; mask.n_segments];
    let mut counts = vec![0usize; mask.n_segments];
    for (p, &seg) in mask.labels.iter().enumerate() {
        counts[seg] += 1;
        for (acc, v) in sums[seg].iter_mut().zip(&img.pixels[p * ch..(p + 1) * ch]) {
            *acc += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= n.max(1) as f64;
        }
    }
    (sums, counts)
}

/// Converts a segmented image into a superpixel graph.
pub fn build_superpixel_graph(
    img: &LabeledImage,
    mask: &SegmentationMask,
    opts: &AdjacencyOptions,
) -> Result<SuperpixelGraph> {
    check_mask(img, mask)?;
    if opts.k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let m = mask.n_segments;
    let ch = img.channels;
    let (colors, counts) = segment_colors(img, mask);
    let mut row_sums = vec![0.0; m];
    let mut col_sums = vec![0.0; m];
    for (p, &seg) in mask.labels.iter().enumerate() {
        row_sums[seg] += (p / mask.width) as f64;
        col_sums[seg] += (p % mask.width) as f64;
    }
    let mut features = Tensor::zeros(m, ch + 2);
    for n in 0..m {
        let row = features.row_mut(n);
        row[..ch].copy_from_slice(&colors[n]);
        let count = counts[n].max(1) as f64;
        row[ch] = row_sums[n] / count / img.height as f64;
        row[ch + 1] = col_sums[n] / count / img.width as f64;
    }

    let k = if opts.k >= m {
        let clamped = m.saturating_sub(1);
        log::warn!("{}: k = {} clamped to {clamped} for {m} superpixels", img.source_id, opts.k);
        clamped
    } else {
        opts.k
    };
    let adjacency = if k == 0 {
        Tensor::zeros(m, m)
    } else {
        knn_adjacency_with(&features, &AdjacencyOptions { k, ..*opts })?
    };
    Ok(SuperpixelGraph {
        node_features: features,
        adjacency,
        label: img.label,
        meta: GraphMeta {
            k_neighbors: k,
            requested_k: opts.k,
            epsilon: opts.epsilon,
            source_id: img.source_id.clone(),
        },
    })
}

/// Replaces every pixel by its segment's mean colour.
pub fn paint_superpixels(img: &LabeledImage, mask: &SegmentationMask) -> Result<LabeledImage> {
    check_mask(img, mask)?;
    let (colors, _) = segment_colors(img, mask);
    let mut out = img.clone();
    let ch = img.channels;
    for (p, &seg) in mask.labels.iter().enumerate() {
        out.pixels[p * ch..(p + 1) * ch].copy_from_slice(&colors[seg]);
    }
    Ok(out)
}

fn write_graph<W: Write>(w: &mut W, g: &SuperpixelGraph) -> Result<()> {
    let m = g.num_nodes();
    let d = g.feature_dim();
    w.write_u32::<LittleEndian>(m as u32)?;
    w.write_u32::<LittleEndian>(d as u32)?;
    w.write_u32::<LittleEndian>(g.meta.k_neighbors as u32)?;
    w.write_u32::<LittleEndian>(g.meta.requested_k as u32)?;
    w.write_f64::<LittleEndian>(g.meta.epsilon)?;
    w.write_u8(g.label)?;
    let id = g.meta.source_id.as_bytes();
    w.write_u32::<LittleEndian>(id.len() as u32)?;
    w.write_all(id)?;
    for v in g.node_features.data() {
        w.write_f64::<LittleEndian>(*v)?;
    }
    let mut offsets = Vec::with_capacity(m + 1);
    let mut neighbors = Vec::new();
    let mut weights = Vec::new();
    offsets.push(0u64);
    for i in 0..m {
        for (j, &wgt) in g.adjacency.row(i).iter().enumerate() {
            if wgt != 0.0 {
                neighbors.push(j as u32);
                weights.push(wgt);
            }
        }
        offsets.push(neighbors.len() as u64);
    }
    for o in offsets {
        w.write_u64::<LittleEndian>(o)?;
    }
    for n in neighbors {
        w.write_u32::<LittleEndian>(n)?;
    }
    for v in weights {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_graph<R: Read>(r: &mut R) -> Result<SuperpixelGraph> {
    let m = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let k_neighbors = r.read_u32::<LittleEndian>()? as usize;
    let requested_k = r.read_u32::<LittleEndian>()? as usize;
    let epsilon = r.read_f64::<LittleEndian>()?;
    let label = r.read_u8()?;
    let id_len = r.read_u32::<LittleEndian>()? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id)?;
    let source_id =
        String::from_utf8(id).map_err(|_| Error::Format("source id is not UTF-8".into()))?;
    let mut features = vec![0.0; m * d];
    r.read_f64_into::<LittleEndian>(&mut features)?;
    let mut offsets = vec![0u64; m + 1];
    r.read_u64_into::<LittleEndian>(&mut offsets)?;
    let nnz = *offsets.last().unwrap_or(&0) as usize;
    if offsets.first() != Some(&0) || offsets.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Format("corrupt CSR offsets".into()));
    }
    let mut neighbors = vec![0u32; nnz];
    r.read_u32_into::<LittleEndian>(&mut neighbors)?;
    let mut weights = vec![0.0; nnz];
    r.read_f64_into::<LittleEndian>(&mut weights)?;
    let mut adjacency = Tensor::zeros(m, m);
    for i in 0..m {
        for e in offsets[i] as usize..offsets[i + 1] as usize {
            let j = neighbors[e] as usize;
            if j >= m {
                return Err(Error::Format(format!("neighbour id {j} out of range")));
            }
            adjacency.set(i, j, weights[e]);
        }
    }
    Ok(SuperpixelGraph {
        node_features: Tensor::from_vec(m, d, features)?,
        adjacency,
        label,
        meta: GraphMeta { k_neighbors, requested_k, epsilon, source_id },
    })
}

/// Writes graphs to a little-endian cache file: magic, record count, then one record per graph.
pub fn write_graph_cache(path: &Path, graphs: &[SuperpixelGraph]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(GRAPH_CACHE_MAGIC)?;
    w.write_u64::<LittleEndian>(graphs.len() as u64)?;
    for g in graphs {
        write_graph(&mut w, g)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_graph_cache(path: &Path) -> Result<Vec<SuperpixelGraph>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != GRAPH_CACHE_MAGIC {
        return Err(Error::Format(format!("bad graph cache magic in {}", path.display())));
    }
    let count = r.read_u64::<LittleEndian>()? as usize;
    (0..count).map(|_| read_graph(&mut r)).collect()
}
