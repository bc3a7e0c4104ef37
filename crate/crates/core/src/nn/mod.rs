//! Small neural-network substrate: a 4-D tensor, layer kernels with
//! explicit backward passes, the AdamW optimizer and the training losses.

pub mod layers;
pub mod loss;
pub mod optim;
mod tensor;

pub use layers::{
    conv2d, conv2d_backward, conv_out_len, prelu, prelu_backward, upsample2, upsample2_backward,
    warp_features, warp_features_backward, ConvGrads,
};
pub use loss::{
    census_loss, distillation_loss, reconstruction_loss, total_loss, CensusParams, LossBreakdown,
    DISTILLATION_WEIGHT,
};
pub use optim::{adamw_step, AdamW, Param, ParamStore};
pub use tensor::Tensor4;
