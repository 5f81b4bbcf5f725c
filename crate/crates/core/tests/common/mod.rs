//! Shared fixtures and plain-loop reference implementations for the integration tests.
#![allow(dead_code)]

use genet::graph::{knn_adjacency, GraphMeta, SuperpixelGraph};
use genet::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// A graph with `m` nodes of `d` features in [0, 1] and a k-NN adjacency.
pub fn random_graph<R: Rng>(m: usize, d: usize, k: usize, label: u8, id: &str, rng: &mut R) -> SuperpixelGraph {
    let data = (0..m * d).map(|_| rng.random::<f64>()).collect();
    let features = Tensor::from_vec(m, d, data).unwrap();
    let k = k.min(m - 1);
    let adjacency = if k == 0 { Tensor::zeros(m, m) } else { knn_adjacency(&features, k, 1e-8).unwrap() };
    SuperpixelGraph {
        node_features: features,
        adjacency,
        label,
        meta: GraphMeta { k_neighbors: k, requested_k: k, epsilon: 1e-8, source_id: id.to_string() },
    }
}

pub fn dense_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn dense_row_normalize(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter().map(|v| v / s).collect()
            } else {
                vec![0.0; row.len()]
            }
        })
        .collect()
}

/// `relu(A_norm H W + H W_self + b)` with explicit loops.
pub fn dense_layer(h: &[Vec<f64>], a_norm: &[Vec<f64>], w: &Tensor, w_self: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
    let agg = dense_matmul(a_norm, h);
    let msg = dense_matmul(&agg, &to_rows(w));
    let own = dense_matmul(h, &to_rows(w_self));
    msg.iter()
        .zip(&own)
        .map(|(mr, or)| (0..mr.len()).map(|j| (mr[j] + or[j] + b.get(0, j)).max(0.0)).collect())
        .collect()
}

pub fn dense_mean_rows(h: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; h[0].len()];
    for row in h {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter().map(|v| v / h.len() as f64).collect()
}

pub fn dense_head(r: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..w.cols())
        .map(|j| {
            let mut s = b.get(0, j);
            for (i, v) in r.iter().enumerate() {
                s += v * w.get(i, j);
            }
            s
        })
        .collect()
}

/// Brute-force k-NN Gaussian adjacency: sort all distances, take the k nearest (lower id on
/// ties), `sigma_i` = sum of their squared distances + eps.
pub fn dense_knn(features: &[Vec<f64>], k: usize, eps: f64) -> Vec<Vec<f64>> {
    let m = features.len();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        let mut cand: Vec<(f64, usize)> = (0..m)
            .filter(|&j| j != i)
            .map(|j| {
                let d2: f64 = features[i].iter().zip(&features[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, j)
            })
            .collect();
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let nn = &cand[..k];
        let sigma: f64 = nn.iter().map(|c| c.0).sum::<f64>() + eps;
        for &(d2, j) in nn {
            out[i][j] = (-d2 / sigma).exp();
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

pub const FD_STEP: f64 = 1e-6;

/// Norm-wise relative error `|a - n| / (|a| + |n|)` between an analytic gradient and a
/// central finite difference of `loss` with respect to every entry of `params[which]`.
pub fn fd_relative_error(
    params: &[Tensor],
    which: usize,
    analytic: &Tensor,
    loss: &dyn Fn(&[Tensor]) -> f64,
) -> f64 {
    let mut work = params.to_vec();
    let mut numeric = Vec::with_capacity(analytic.len());
    for e in 0..params[which].len() {
        let orig = params[which].data()[e];
        work[which].data_mut()[e] = orig + FD_STEP;
        let up = loss(&work);
        work[which].data_mut()[e] = orig - FD_STEP;
        let down = loss(&work);
        work[which].data_mut()[e] = orig;
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    let diff: f64 = analytic.data().iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if na + nn == 0.0 {
        0.0
    } else {
        diff / (na + nn)
    }
}

use genet::channel::ChannelSpec;
use genet::model::{loss_and_gradients, ModelDims, ModelParams};
use genet::nn::{normalize_adjacency, GnnLayerParams, GraphLayer, Tape};

/// Worst relative error per layer kind over one random shape.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub layer: &'static str,
    pub shape: String,
    pub max_rel_error: f64,
}

/// Analytic gradients of `loss(tensors)` for every tensor, where `record` builds the
/// scalar loss on a tape with every tensor registered as a parameter in order.
fn tape_grads(tensors: &[Tensor], record: &dyn Fn(&mut Tape<'_>, &[genet::nn::Var]) -> genet::nn::Var) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars: Vec<_> = tensors.iter().map(|t| tape.param(t)).collect();
    let loss = record(&mut tape, &vars);
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss).unwrap();
    let out = vars
        .iter()
        .map(|v| grads.take(*v).unwrap_or_else(|| Tensor::zeros(tape.value(*v).rows(), tape.value(*v).cols())))
        .collect();
    (value, out)
}

fn check_all(layer: &'static str, shape: String, tensors: &[Tensor], skip: &[usize], record: &dyn Fn(&mut Tape<'_>, &[genet::nn::Var]) -> genet::nn::Var) -> GradCheck {
    let (_, grads) = tape_grads(tensors, record);
    let loss = |ts: &[Tensor]| tape_grads(ts, record).0;
    let max_rel_error = (0..tensors.len())
        .filter(|i| !skip.contains(i))
        .map(|i| fd_relative_error(tensors, i, &grads[i], &loss))
        .fold(0.0, f64::max);
    GradCheck { layer, shape, max_rel_error }
}

/// Finite-difference checks of the message-passing layer, the mean readout, the linear
/// head, softmax cross-entropy and the whole model, each on `shapes` random shapes.
pub fn gradient_check_suite(shapes: usize, seed: u64) -> Vec<GradCheck> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for s in 0..shapes {
        let m = r.random_range(1..=7);
        let d_in = r.random_range(1..=6);
        let d_out = r.random_range(1..=6);

        // layer: tensors = [h, a_norm, W, W_self, b, projection]
        let g = random_graph(m, d_in, 3, 0, "fd", &mut r);
        let a_norm = normalize_adjacency(&g.adjacency).unwrap();
        let tensors = vec![
            random_tensor(m, d_in, 1.0, &mut r),
            a_norm,
            random_tensor(d_in, d_out, 1.0, &mut r),
            random_tensor(d_in, d_out, 1.0, &mut r),
            random_tensor(1, d_out, 1.0, &mut r),
            random_tensor(m, d_out, 1.0, &mut r),
        ];
        out.push(gnn_layer_check(format!("M={m} {d_in}->{d_out}"), &tensors));

        let tensors = vec![random_tensor(m, d_out, 1.0, &mut r), random_tensor(1, d_out, 1.0, &mut r)];
        out.push(check_all("mean_readout", format!("M={m} d={d_out}"), &tensors, &[1], &|tape, v| {
            let y = tape.mean_rows(v[0]).unwrap();
            let p = tape.mul(y, v[1]).unwrap();
            tape.sum(p)
        }));

        let classes = r.random_range(2..=10);
        let label = r.random_range(0..classes);
        let tensors = vec![
            random_tensor(1, d_out, 1.0, &mut r),
            random_tensor(d_out, classes, 1.0, &mut r),
            random_tensor(1, classes, 1.0, &mut r),
        ];
        out.push(check_all("head_cross_entropy", format!("d={d_out} C={classes}"), &tensors, &[], &|tape, v| {
            let z = tape.matmul(v[0], v[1]).unwrap();
            let z = tape.add_row(z, v[2]).unwrap();
            tape.cross_entropy(z, label).unwrap()
        }));

        out.push(model_check(s, m, &mut r));
    }
    out
}

/// `sum(layer(h) * P)`; gradients w.r.t. `h`, `W`, `W_self`, `b`.
fn gnn_layer_eval(tensors: &[Tensor]) -> (f64, Vec<Tensor>) {
    let layer = GnnLayerParams::new(tensors[2].clone(), tensors[3].clone(), tensors[4].clone()).unwrap();
    let mut tape = Tape::new();
    let h = tape.param(&tensors[0]);
    let a = tape.constant(&tensors[1]);
    let y = layer.record(&mut tape, h, a).unwrap();
    let p = tape.constant(&tensors[5]);
    let y = tape.mul(y, p).unwrap();
    let loss = tape.sum(y);
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss).unwrap();
    // Parameter leaves in push order: h, weight, self_weight, bias.
    let vars = tape.parameter_vars();
    let mut out: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.take(*v).unwrap_or_else(|| Tensor::zeros(tape.value(*v).rows(), tape.value(*v).cols())))
        .collect();
    out.insert(1, Tensor::zeros(0, 0));
    (value, out)
}

fn gnn_layer_check(shape: String, tensors: &[Tensor]) -> GradCheck {
    let (_, grads) = gnn_layer_eval(tensors);
    let loss = |ts: &[Tensor]| gnn_layer_eval(ts).0;
    let max_rel_error = [0, 2, 3, 4]
        .into_iter()
        .map(|i| fd_relative_error(tensors, i, &grads[i], &loss))
        .fold(0.0, f64::max);
    GradCheck { layer: "gnn_layer", shape, max_rel_error }
}

fn model_check<R: Rng>(s: usize, m: usize, r: &mut R) -> GradCheck {
    let d = r.random_range(1..=4);
    let dims = ModelDims { input: d, hidden: r.random_range(1..=5), output: r.random_range(1..=5), classes: 10, layers: r.random_range(1..=3) };
    let params = ModelParams::init(dims, s as u64).unwrap();
    let graph = random_graph(m, d, 3, (s % 10) as u8, "fd-model", r);
    let spec = ChannelSpec::noiseless();
    let (_, grads, _) = loss_and_gradients(&graph, &params, &spec, r).unwrap();
    let tensors: Vec<Tensor> = params.parameters().into_iter().map(|(_, t)| t.clone()).collect();
    let loss = |ts: &[Tensor]| {
        let mut p = params.clone();
        for (dst, src) in p.parameters_mut().into_iter().zip(ts) {
            *dst = src.clone();
        }
        loss_and_gradients(&graph, &p, &spec, &mut rng(0)).unwrap().0
    };
    let max_rel_error =
        (0..tensors.len()).map(|i| fd_relative_error(&tensors, i, &grads[i], &loss)).fold(0.0, f64::max);
    GradCheck { layer: "model", shape: format!("M={m} {dims:?}"), max_rel_error }
}

/// Logits of the full noiseless pipeline recomputed with plain loops.
pub fn dense_pipeline(graph: &SuperpixelGraph, params: &ModelParams) -> (Vec<Vec<f64>>, Vec<f64>) {
    let a_norm = dense_row_normalize(&to_rows(&graph.adjacency));
    let mut h = to_rows(&graph.node_features);
    for layer in &params.encoder_layers {
        h = dense_layer(&h, &a_norm, &layer.weight, &layer.self_weight, &layer.bias);
    }
    let logits = dense_head(&dense_mean_rows(&h), &params.head.weight, &params.head.bias);
    (h, logits)
}

/// Largest deviation of encode/decode from the dense reference over `graphs` random graphs
/// with at most 8 nodes.
pub fn dense_oracle_max_deviation(graphs: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for i in 0..graphs {
        let m = r.random_range(1..=8);
        let d = r.random_range(1..=5);
        let dims = ModelDims {
            input: d,
            hidden: r.random_range(1..=12),
            output: r.random_range(1..=12),
            classes: 10,
            layers: r.random_range(1..=4),
        };
        let params = ModelParams::init(dims, seed + i as u64).unwrap();
        let graph = random_graph(m, d, r.random_range(1..=8), 0, "oracle", &mut r);
        let (h_ref, logits_ref) = dense_pipeline(&graph, &params);
        let encoded = genet::model::encode(&graph, &params).unwrap();
        let logits = genet::model::decode(&encoded, &params).unwrap();
        let h_flat: Vec<f64> = h_ref.concat();
        worst = worst.max(max_abs_diff(encoded.data(), &h_flat));
        worst = worst.max(max_abs_diff(logits.data(), &logits_ref));
    }
    worst
}
