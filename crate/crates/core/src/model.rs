//! The transmit/receive pipeline: GNN encoder, channel, mean-readout decoder.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_noise, ChannelSpec};
use crate::error::{shape_err, Error, Result};
use crate::graph::SuperpixelGraph;
use crate::nn::{normalize_adjacency, GnnLayerParams, GraphLayer, HeadParams, Tape, Tensor, Var};
use crate::rng::rng_for;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GENETM01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub classes: usize,
    pub layers: usize,
}

impl ModelDims {
    /// Four layers of width 146 over `[colour, row, col]` features.
    pub fn gcn_default(input: usize) -> Self {
        Self { input, hidden: 146, output: 146, classes: 10, layers: 4 }
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let d_in = if l == 0 { self.input } else { self.hidden };
                let d_out = if l + 1 == self.layers { self.output } else { self.hidden };
                (d_in, d_out)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder_layers: Vec<GnnLayerParams>,
    pub head: HeadParams,
}

impl ModelParams {
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        if dims.layers == 0 || dims.input == 0 || dims.hidden == 0 || dims.output == 0 || dims.classes == 0 {
            return Err(Error::InvalidArgument(format!("degenerate model dims {dims:?}")));
        }
        let mut rng = rng_for(seed, "model-init");
        let encoder_layers =
            dims.layer_shapes().into_iter().map(|(i, o)| GnnLayerParams::init(i, o, &mut rng)).collect();
        let head = HeadParams::init(dims.output, dims.classes, &mut rng);
        Ok(Self { dims, encoder_layers, head })
    }

    /// Assembles a model from explicit layers, checking that dimensions chain.
    pub fn from_parts(encoder_layers: Vec<GnnLayerParams>, head: HeadParams) -> Result<Self> {
        let first = encoder_layers.first().ok_or_else(|| Error::InvalidArgument("no encoder layers".into()))?;
        for pair in encoder_layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(shape_err!("layer widths {} -> {} do not chain", pair[0].output_dim(), pair[1].input_dim()));
            }
        }
        let last = encoder_layers.last().expect("non-empty");
        if head.weight.rows() != last.output_dim() {
            return Err(shape_err!("head input {} after encoder output {}", head.weight.rows(), last.output_dim()));
        }
        let dims = ModelDims {
            input: first.input_dim(),
            hidden: if encoder_layers.len() > 1 { first.output_dim() } else { last.output_dim() },
            output: last.output_dim(),
            classes: head.weight.cols(),
            layers: encoder_layers.len(),
        };
        Ok(Self { dims, encoder_layers, head })
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder_layers.iter().enumerate() {
            for (name, t) in layer.parameters() {
                out.push((format!("encoder.{l}.{name}"), t));
            }
        }
        for (name, t) in self.head.parameters() {
            out.push((format!("head.{name}"), t));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in &mut self.encoder_layers {
            out.extend(layer.parameters_mut());
        }
        out.extend(self.head.parameters_mut());
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }
}

fn check_graph(graph: &SuperpixelGraph, params: &ModelParams) -> Result<()> {
    if graph.feature_dim() != params.dims.input {
        return Err(shape_err!(
            "graph has {} node features, model expects {}",
            graph.feature_dim(),
            params.dims.input
        ));
    }
    if graph.num_nodes() == 0 {
        return Err(Error::InvalidArgument("graph has no nodes".into()));
    }
    Ok(())
}

/// Records the encoder; parameter leaves are pushed in `parameters()` order.
fn record_encoder<'a>(
    tape: &mut Tape<'a>,
    params: &'a ModelParams,
    features: &'a Tensor,
    a_norm: &'a Tensor,
) -> Result<Var> {
    let adj = tape.constant(a_norm);
    let mut h = tape.constant(features);
    for layer in &params.encoder_layers {
        h = layer.record(tape, h, adj)?;
    }
    Ok(h)
}

fn record_decoder<'a>(tape: &mut Tape<'a>, params: &'a ModelParams, received: Var) -> Result<Var> {
    let readout = tape.mean_rows(received)?;
    params.head.record(tape, readout)
}

/// Node features after the encoder: the signal handed to the channel.
pub fn encode(graph: &SuperpixelGraph, params: &ModelParams) -> Result<Tensor> {
    check_graph(graph, params)?;
    let a_norm = normalize_adjacency(&graph.adjacency)?;
    let mut tape = Tape::new();
    let out = record_encoder(&mut tape, params, &graph.node_features, &a_norm)?;
    Ok(tape.value(out).clone())
}

/// Logits from received node features.
pub fn decode(received: &Tensor, params: &ModelParams) -> Result<Tensor> {
    if received.rows() == 0 {
        return Err(Error::InvalidArgument("no received nodes".into()));
    }
    if received.cols() != params.dims.output {
        return Err(shape_err!("received width {}, model output {}", received.cols(), params.dims.output));
    }
    let mut tape = Tape::new();
    let r = tape.constant(received);
    let logits = record_decoder(&mut tape, params, r)?;
    let logits = tape.value(logits).clone();
    if !logits.all_finite() {
        return Err(Error::Data("non-finite logits".into()));
    }
    Ok(logits)
}

/// Index of the largest logit; ties go to the lowest class.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate() {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub logits: Vec<f64>,
}

/// encode -> channel -> decode.
pub fn predict<R: Rng + ?Sized>(
    graph: &SuperpixelGraph,
    params: &ModelParams,
    spec: &ChannelSpec,
    rng: &mut R,
) -> Result<Prediction> {
    let encoded = encode(graph, params)?;
    let received = crate::channel::awgn_apply(&encoded, spec, rng)?;
    let logits = decode(&received, params)?.into_vec();
    Ok(Prediction { label: argmax(&logits), logits })
}

/// Prediction with the per-graph noise stream derived from `(spec.rng_seed, source_id)`.
pub fn predict_seeded(graph: &SuperpixelGraph, params: &ModelParams, spec: &ChannelSpec) -> Result<Prediction> {
    let mut rng = rng_for(spec.rng_seed, &graph.meta.source_id);
    predict(graph, params, spec, &mut rng)
}

/// Loss, per-parameter gradients (in `parameters()` order) and logits for one graph.
/// Channel noise, when requested, is a constant additive term on the encoder output.
pub fn loss_and_gradients<R: Rng + ?Sized>(
    graph: &SuperpixelGraph,
    params: &ModelParams,
    channel: &ChannelSpec,
    rng: &mut R,
) -> Result<(f64, Vec<Tensor>, Vec<f64>)> {
    check_graph(graph, params)?;
    let a_norm = normalize_adjacency(&graph.adjacency)?;
    let mut tape = Tape::new();
    let encoded = record_encoder(&mut tape, params, &graph.node_features, &a_norm)?;
    let received = match sample_noise(tape.value(encoded), channel, rng)? {
        Some(noise) => {
            let n = tape.constant_owned(noise);
            tape.add(encoded, n)?
        }
        None => encoded,
    };
    let logits = record_decoder(&mut tape, params, received)?;
    let loss = tape.cross_entropy(logits, graph.label as usize)?;
    let logit_values = tape.value(logits).data().to_vec();
    let loss_value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss)?;

    let mut out = Vec::with_capacity(params.parameters().len());
    for v in tape.parameter_vars() {
        let shape = tape.value(v).shape();
        out.push(grads.take(v).unwrap_or_else(|| Tensor::zeros(shape[0], shape[1])));
    }
    if out.len() != params.parameters().len() {
        return Err(Error::Autodiff(format!(
            "expected {} parameter gradients, got {}",
            params.parameters().len(),
            out.len()
        )));
    }
    Ok((loss_value, out, logit_values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub backbone: String,
    pub dims: ModelDims,
    /// Free-form echo of the configuration that produced the weights.
    #[serde(default)]
    pub hyperparameters: serde_json::Value,
}

/// Writes `GENETM01`, a JSON header, then every parameter as (name, shape, f64 data).
pub fn save_checkpoint(path: &Path, params: &ModelParams, hyperparameters: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader { backbone: "gcn".into(), dims: params.dims, hyperparameters };
    let header = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(header.len() as u32)?;
    w.write_all(&header)?;
    let tensors = params.parameters();
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, t) in tensors {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(2)?;
        w.write_u64::<LittleEndian>(t.rows() as u64)?;
        w.write_u64::<LittleEndian>(t.cols() as u64)?;
        for v in t.data() {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointHeader)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{} is not a model checkpoint", path.display())));
    }
    let header_len = r.read_u32::<LittleEndian>()? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let header: CheckpointHeader = serde_json::from_slice(&header)?;
    let mut params = ModelParams::init(header.dims, 0)?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let expected: Vec<(String, [usize; 2])> =
        params.parameters().into_iter().map(|(n, t)| (n, t.shape())).collect();
    if count != expected.len() {
        return Err(Error::Format(format!("checkpoint has {count} tensors, model needs {}", expected.len())));
    }
    let slots = params.parameters_mut();
    for (slot, (want_name, want_shape)) in slots.into_iter().zip(expected) {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = r.read_u32::<LittleEndian>()?;
        if ndim != 2 {
            return Err(Error::Format(format!("tensor {name} has {ndim} dims")));
        }
        let shape = [r.read_u64::<LittleEndian>()? as usize, r.read_u64::<LittleEndian>()? as usize];
        if name != want_name || shape != want_shape {
            return Err(Error::Format(format!(
                "tensor {name} {shape:?} where {want_name} {want_shape:?} was expected"
            )));
        }
        r.read_f64_into::<LittleEndian>(slot.data_mut())?;
    }
    Ok((params, header))
}
