//! Layers, propagation, loss, initialization and the SGD trainer.

pub mod gradcheck;
pub mod kernels;
pub mod layer;
pub mod loss;
pub mod network;
pub mod params;
pub mod propagate;
pub mod sgd;
pub mod train;

pub use layer::{Dims, Init, LayerKind, LayerSpec};
pub use loss::squared_loss;
pub use network::{build_vgg_x_fc, NetworkSpec, VggTemplate, VGG16_BLOCKS, VGG_CUT_POINTS};
pub use params::{init_params, LayerParams, Parameters, WeightArchive};
pub use propagate::{
    backward, backward_from, backward_params, forward, forward_predictions, layer_backward,
    layer_forward, predict, Activations, Gradients,
};
pub use sgd::{effective_rate, lr_multipliers, sgd_step, LrPolicy, Sgd};
pub use train::{
    dataset_loss, make_batches, train, train_from_source, train_with_snapshots, Batch, BatchSource,
    LossHistory, LossRecord, TrainConfig, TrainOutcome,
};
