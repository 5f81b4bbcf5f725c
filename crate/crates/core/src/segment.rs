//! SLIC superpixel segmentation with connectivity enforcement.

use std::collections::{BTreeSet, VecDeque};

use crate::data::LabeledImage;
use crate::error::{Error, Result};

pub const DEFAULT_SLIC_ITERATIONS: usize = 10;

/// Per-pixel superpixel ids, contiguous in `0..n_segments`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub n_segments: usize,
}

impl SegmentationMask {
    /// Builds a mask from arbitrary ids, relabelling them contiguously in raster order.
    pub fn from_labels(height: usize, width: usize, raw: &[usize]) -> Result<Self> {
        if raw.len() != height * width {
            return Err(Error::Shape(format!(
                "mask of {} labels for {height}x{width} image",
                raw.len()
            )));
        }
        let mut remap = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = remap.len();
                *remap.entry(*l).or_insert(next)
            })
            .collect();
        Ok(Self { height, width, labels, n_segments: remap.len() })
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_segments];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// True when every id in `0..n_segments` occurs at least once.
    pub fn ids_contiguous(&self) -> bool {
        self.labels.iter().all(|&l| l < self.n_segments)
            && self.segment_sizes().iter().all(|&s| s > 0)
    }

    /// Flood-fill check that every segment is a single 4-connected region.
    pub fn segments_connected(&self) -> bool {
        let components = connected_components(self.height, self.width, &self.labels);
        components.sizes.len() == self.n_segments
    }
}

struct Components {
    ids: Vec<usize>,
    sizes: Vec<usize>,
    owner: Vec<usize>,
}

fn neighbors4(r: usize, c: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    let up = (r > 0).then(|| (r - 1, c));
    let down = (r + 1 < h).then(|| (r + 1, c));
    let left = (c > 0).then(|| (r, c - 1));
    let right = (c + 1 < w).then(|| (r, c + 1));
    [up, down, left, right].into_iter().flatten()
}

fn connected_components(h: usize, w: usize, labels: &[usize]) -> Components {
    let mut ids = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    let mut owner = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if ids[start] != usize::MAX {
            continue;
        }
        let comp = sizes.len();
        let label = labels[start];
        ids[start] = comp;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            for (nr, nc) in neighbors4(p / w, p % w, h, w) {
                let q = nr * w + nc;
                if ids[q] == usize::MAX && labels[q] == label {
                    ids[q] = comp;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
        owner.push(label);
    }
    Components { ids, sizes, owner }
}

/// sRGB in `[0, 1]` to CIELAB (D65 white point).
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = |c: f64| {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = (0.019_333_9 * r + 0.119_192 * g + 0.950_304_1 * b) / 1.088_83;
    let delta: f64 = 6.0 / 29.0;
    let f = |t: f64| {
        if t > delta.powi(3) {
            t.cbrt()
        } else {
            t / (3.0 * delta * delta) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Colour values used by the SLIC distance: raw intensity for grayscale, CIELAB for RGB.
fn distance_colors(img: &LabeledImage) -> Vec<f64> {
    if img.channels == 3 {
        img.pixels
            .chunks_exact(3)
            .flat_map(|px| srgb_to_lab([px[0], px[1], px[2]]))
            .collect()
    } else {
        img.pixels.clone()
    }
}

#[derive(Debug, Clone)]
struct Center {
    color: Vec<f64>,
    row: f64,
    col: f64,
}

/// Seed grid of `ny x nx` cells; columns are chosen first so that two segments on a square
/// image split left/right.
fn grid_shape(h: usize, w: usize, n: usize) -> (usize, usize) {
    let nx = ((n as f64 * w as f64 / h as f64).sqrt().ceil() as usize).clamp(1, w);
    let ny = ((n as f64 / nx as f64).round() as usize).clamp(1, h);
    (ny, nx)
}

fn gradient_map(colors: &[f64], h: usize, w: usize, ch: usize) -> Vec<f64> {
    let px = |r: usize, c: usize| &colors[(r * w + c) * ch..(r * w + c + 1) * ch];
    let mut grad = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (l, rt) = (px(r, c.saturating_sub(1)), px(r, (c + 1).min(w - 1)));
            let (u, d) = (px(r.saturating_sub(1), c), px((r + 1).min(h - 1), c));
            let dx: f64 = l.iter().zip(rt).map(|(a, b)| (a - b) * (a - b)).sum();
            let dy: f64 = u.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum();
            grad[r * w + c] = dx + dy;
        }
    }
    grad
}

/// Segments an image into roughly `n_segments` superpixels.
///
/// Centers start on a regular grid with step `S = sqrt(H*W / n_segments)`, move to the
/// lowest-gradient pixel of their 3x3 neighbourhood, and are refined by `iterations`
/// rounds of windowed k-means in (colour, position) space with
/// `D = sqrt(d_color^2 + (compactness * d_spatial / S)^2)`. Non-connected fragments are
/// merged into the largest adjacent superpixel afterwards.
pub fn slic_segment(
    img: &LabeledImage,
    n_segments: usize,
    compactness: f64,
    iterations: usize,
) -> Result<SegmentationMask> {
    let (h, w, ch) = (img.height, img.width, img.channels);
    if n_segments < 2 {
        return Err(Error::InvalidArgument("n_segments must be at least 2".into()));
    }
    if n_segments > h * w {
        return Err(Error::InvalidArgument(format!(
            "n_segments {n_segments} exceeds pixel count {}",
            h * w
        )));
    }
    if !(compactness > 0.0) || iterations == 0 {
        return Err(Error::InvalidArgument("compactness and iterations must be positive".into()));
    }

    let colors = distance_colors(img);
    let color_at = |p: usize| &colors[p * ch..(p + 1) * ch];
    let step = ((h * w) as f64 / n_segments as f64).sqrt();
    let spatial_weight = (compactness / step).powi(2);
    let radius = step.ceil() as isize;

    let grad = gradient_map(&colors, h, w, ch);
    let (ny, nx) = grid_shape(h, w, n_segments);
    let mut centers = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        for j in 0..nx {
            let r0 = (((i as f64 + 0.5) * h as f64 / ny as f64) as usize).min(h - 1);
            let c0 = (((j as f64 + 0.5) * w as f64 / nx as f64) as usize).min(w - 1);
            let mut best = (r0, c0);
            for r in r0.saturating_sub(1)..=(r0 + 1).min(h - 1) {
                for c in c0.saturating_sub(1)..=(c0 + 1).min(w - 1) {
                    if grad[r * w + c] < grad[best.0 * w + best.1] {
                        best = (r, c);
                    }
                }
            }
            centers.push(Center {
                color: color_at(best.0 * w + best.1).to_vec(),
                row: best.0 as f64,
                col: best.1 as f64,
            });
        }
    }

    // Initial assignment: nearest center in the image plane.
    let mut labels: Vec<usize> = (0..h * w)
        .map(|p| {
            let (r, c) = ((p / w) as f64, (p % w) as f64);
            let mut best = (f64::INFINITY, 0);
            for (k, ctr) in centers.iter().enumerate() {
                let d = (ctr.row - r).powi(2) + (ctr.col - c).powi(2);
                if d < best.0 {
                    best = (d, k);
                }
            }
            best.1
        })
        .collect();

    let mut dist = vec![f64::INFINITY; h * w];
    for _ in 0..iterations {
        dist.fill(f64::INFINITY);
        let mut assigned = labels.clone();
        for (k, ctr) in centers.iter().enumerate() {
            let cr = ctr.row.round() as isize;
            let cc = ctr.col.round() as isize;
            let r_lo = (cr - radius).max(0) as usize;
            let r_hi = (cr + radius).min(h as isize - 1) as usize;
            let c_lo = (cc - radius).max(0) as usize;
            let c_hi = (cc + radius).min(w as isize - 1) as usize;
            for r in r_lo..=r_hi {
                for c in c_lo..=c_hi {
                    let p = r * w + c;
                    let dc: f64 =
                        color_at(p).iter().zip(&ctr.color).map(|(a, b)| (a - b) * (a - b)).sum();
                    let ds = (r as f64 - ctr.row).powi(2) + (c as f64 - ctr.col).powi(2);
                    let d = dc + spatial_weight * ds;
                    if d < dist[p] {
                        dist[p] = d;
                        assigned[p] = k;
                    }
                }
            }
        }
        labels = assigned;

        let mut sums = vec![(vec![0.0; ch], 0.0, 0.0, 0usize); centers.len()];
        for (p, &k) in labels.iter().enumerate() {
            let s = &mut sums[k];
            for (acc, v) in s.0.iter_mut().zip(color_at(p)) {
                *acc += v;
            }
            s.1 += (p / w) as f64;
            s.2 += (p % w) as f64;
            s.3 += 1;
        }
        for (ctr, (color, rs, cs, n)) in centers.iter_mut().zip(sums) {
            if n > 0 {
                let n = n as f64;
                ctr.color = color.into_iter().map(|v| v / n).collect();
                ctr.row = rs / n;
                ctr.col = cs / n;
            }
        }
    }

    let merged = enforce_connectivity(h, w, &labels);
    SegmentationMask::from_labels(h, w, &merged)
}

/// Keeps the largest fragment of every label and merges each remaining fragment into the
/// largest adjacent superpixel. Returns per-pixel representative ids (not contiguous).
fn enforce_connectivity(h: usize, w: usize, labels: &[usize]) -> Vec<usize> {
    let comps = connected_components(h, w, labels);
    let n_comp = comps.sizes.len();

    let mut keeper_of_label = std::collections::HashMap::<usize, usize>::new();
    for comp in 0..n_comp {
        let label = comps.owner[comp];
        let entry = keeper_of_label.entry(label).or_insert(comp);
        if comps.sizes[comp] > comps.sizes[*entry] {
            *entry = comp;
        }
    }
    let mut anchored = vec![false; n_comp];
    for &k in keeper_of_label.values() {
        anchored[k] = true;
    }

    let mut adjacency = vec![BTreeSet::new(); n_comp];
    for r in 0..h {
        for c in 0..w {
            let a = comps.ids[r * w + c];
            for (nr, nc) in neighbors4(r, c, h, w) {
                let b = comps.ids[nr * w + nc];
                if a != b {
                    adjacency[a].insert(b);
                }
            }
        }
    }

    let mut parent: Vec<usize> = (0..n_comp).collect();
    let mut size = comps.sizes.clone();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let mut orphans: Vec<usize> = (0..n_comp).filter(|&c| !anchored[c]).collect();
    orphans.sort_by_key(|&c| (comps.sizes[c], c));
    while !orphans.is_empty() {
        let mut pending = Vec::new();
        for &orphan in &orphans {
            let root = find(&mut parent, orphan);
            let mut best: Option<usize> = None;
            for &nb in &adjacency[orphan] {
                let nb_root = find(&mut parent, nb);
                if nb_root == root || !anchored[nb_root] {
                    continue;
                }
                best = match best {
                    Some(b) if size[b] > size[nb_root] || (size[b] == size[nb_root] && b < nb_root) => {
                        Some(b)
                    }
                    _ => Some(nb_root),
                };
            }
            match best {
                Some(target) => {
                    parent[root] = target;
                    size[target] += size[root];
                }
                None => pending.push(orphan),
            }
        }
        if pending.len() == orphans.len() {
            // Isolated cluster of orphans with no anchored neighbour: anchor the first.
            anchored[find(&mut parent, pending[0])] = true;
            pending.remove(0);
        }
        orphans = pending;
    }

    comps.ids.iter().map(|&comp| find(&mut parent, comp)).collect()
}
