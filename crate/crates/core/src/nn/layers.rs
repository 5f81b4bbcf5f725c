//! Message-passing layer, readout and classifier head.

use rand::Rng;
use rand_distr::Uniform;

use super::autodiff::{softmax_cross_entropy, Tape, Var};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Lower bound on a row sum before it is treated as zero.
pub const DEGREE_EPSILON: f64 = 1e-12;

/// Row-normalizes a nonnegative weight matrix. Rows that sum to (numerically) zero stay zero,
/// and no self-loops are added.
pub fn normalize_adjacency(adjacency: &Tensor) -> Result<Tensor> {
    let m = adjacency.rows();
    if adjacency.cols() != m {
        return Err(shape_err!("adjacency must be square, got {:?}", adjacency.shape()));
    }
    if let Some(w) = adjacency.data().iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative or NaN edge weight {w}")));
    }
    let mut out = adjacency.clone();
    for i in 0..m {
        let row = out.row_mut(i);
        let total: f64 = row.iter().sum();
        if total <= DEGREE_EPSILON {
            row.fill(0.0);
        } else {
            row.iter_mut().for_each(|w| *w /= total);
        }
    }
    Ok(out)
}

/// A graph layer that can be recorded on a tape. Attention or gated layers slot in here.
pub trait GraphLayer {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Records `layer(h)` given the normalized adjacency `adj` (a constant on the tape).
    fn record<'a>(&'a self, tape: &mut Tape<'a>, h: Var, adj: Var) -> Result<Var>;

    /// Named parameter tensors in a fixed order.
    fn parameters(&self) -> Vec<(&'static str, &Tensor)>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
}

/// Weighted-mean aggregation with a separate self path:
/// `ReLU(A_norm * H * W + H * W_self + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnLayerParams {
    pub weight: Tensor,
    pub self_weight: Tensor,
    pub bias: Tensor,
}

fn uniform_tensor<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..rows * cols).map(|_| rng.sample(dist)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized buffer")
}

impl GnnLayerParams {
    /// Uniform `(-sqrt(1/d_in), sqrt(1/d_in))` initialization.
    pub fn init<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = (1.0 / d_in as f64).sqrt();
        Self {
            weight: uniform_tensor(d_in, d_out, bound, rng),
            self_weight: uniform_tensor(d_in, d_out, bound, rng),
            bias: uniform_tensor(1, d_out, bound, rng),
        }
    }

    pub fn new(weight: Tensor, self_weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape() != self_weight.shape()
            || bias.rows() != 1
            || bias.cols() != weight.cols()
        {
            return Err(shape_err!(
                "layer weights {:?}/{:?} with bias {:?}",
                weight.shape(),
                self_weight.shape(),
                bias.shape()
            ));
        }
        Ok(Self { weight, self_weight, bias })
    }
}

impl GraphLayer for GnnLayerParams {
    fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    fn record<'a>(&'a self, tape: &mut Tape<'a>, h: Var, adj: Var) -> Result<Var> {
        let m = tape.value(h).rows();
        if tape.value(h).cols() != self.input_dim() {
            return Err(shape_err!(
                "layer expects {} input features, got {}",
                self.input_dim(),
                tape.value(h).cols()
            ));
        }
        if tape.value(adj).shape() != [m, m] {
            return Err(shape_err!("adjacency {:?} for {m} nodes", tape.value(adj).shape()));
        }
        let w = tape.param(&self.weight);
        let w_self = tape.param(&self.self_weight);
        let b = tape.param(&self.bias);
        let aggregated = tape.matmul(adj, h)?;
        let messages = tape.matmul(aggregated, w)?;
        let own = tape.matmul(h, w_self)?;
        let pre = tape.add(messages, own)?;
        let pre = tape.add_row(pre, b)?;
        Ok(tape.relu(pre))
    }

    fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("weight", &self.weight), ("self_weight", &self.self_weight), ("bias", &self.bias)]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.self_weight, &mut self.bias]
    }
}

/// Inference-only forward of one layer.
pub fn gnn_layer_forward(h: &Tensor, a_norm: &Tensor, params: &GnnLayerParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let hv = tape.constant(h);
    let av = tape.constant(a_norm);
    let out = params.record(&mut tape, hv, av)?;
    Ok(tape.value(out).clone())
}

/// Column mean of the node features.
pub fn mean_readout(h: &Tensor) -> Result<Tensor> {
    if h.rows() == 0 {
        return Err(Error::InvalidArgument("mean readout over an empty graph".into()));
    }
    let mut tape = Tape::new();
    let hv = tape.constant(h);
    let out = tape.mean_rows(hv)?;
    Ok(tape.value(out).clone())
}

/// Affine classifier `h * W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl HeadParams {
    pub fn init<R: Rng>(d_in: usize, classes: usize, rng: &mut R) -> Self {
        let bound = (1.0 / d_in as f64).sqrt();
        Self { weight: uniform_tensor(d_in, classes, bound, rng), bias: uniform_tensor(1, classes, bound, rng) }
    }

    pub fn zeros(d_in: usize, classes: usize) -> Self {
        Self { weight: Tensor::zeros(d_in, classes), bias: Tensor::zeros(1, classes) }
    }

    pub fn record<'a>(&'a self, tape: &mut Tape<'a>, h: Var) -> Result<Var> {
        if tape.value(h).shape() != [1, self.weight.rows()] {
            return Err(shape_err!(
                "head expects a 1x{} readout, got {:?}",
                self.weight.rows(),
                tape.value(h).shape()
            ));
        }
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let z = tape.matmul(h, w)?;
        tape.add_row(z, b)
    }

    pub fn parameters(&self) -> Vec<(&'static str, &Tensor)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn mlp_head_forward(h: &Tensor, params: &HeadParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let hv = tape.constant(h);
    let out = params.record(&mut tape, hv)?;
    Ok(tape.value(out).clone())
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!("label {label} >= {} classes", logits.len())));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::InvalidArgument("non-finite logits".into()));
    }
    Ok(softmax_cross_entropy(logits, label).0)
}
