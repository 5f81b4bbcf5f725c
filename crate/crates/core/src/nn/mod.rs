//! Dense tensors, reverse-mode differentiation, graph layers and optimizers.

mod autodiff;
mod layers;
mod optim;
mod tensor;

pub use autodiff::{softmax_cross_entropy, Gradients, Tape, Var};
pub use layers::{
    cross_entropy, gnn_layer_forward, mean_readout, mlp_head_forward, normalize_adjacency,
    GnnLayerParams, GraphLayer, HeadParams, DEGREE_EPSILON,
};
pub use optim::{adam_step, AdamConfig, AdamState, PlateauConfig, PlateauScheduler};
pub use tensor::Tensor;
