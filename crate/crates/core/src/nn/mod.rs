//! Small reverse-mode network engine: tensors, the layer set the detection
//! models need, losses, Adam and checkpoints.

mod adam;
mod checkpoint;
mod gemm;
mod layer;
mod loss;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, OptimState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, read_checkpoint_header, save_checkpoint,
    CheckpointHeader, ParamMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gemm::{dot, gemm_nn, gemm_nt, gemm_tn};
pub use layer::{conv_extent, LayerKind, LayerSpec};
pub use loss::{
    auto_source_weight, combined, mse, weighted_bce, LossKind, LossSpec, SourceWeight,
    CE_COEFFICIENT, PROB_EPS,
};
pub use params::{Init, ParamId, ParamStore};
pub use tape::{conv2d_forward, Gradients, Tape, Var};
pub use tensor::Tensor;
