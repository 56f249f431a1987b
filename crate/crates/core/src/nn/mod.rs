//! Convolutional encoder, MLP heads, losses and the optimizer. Every layer
//! caches what its backward pass needs during `forward` and accumulates
//! parameter gradients in `backward`; [`gradcheck`] verifies the result
//! against central finite differences.

mod encoder;
pub mod gradcheck;
mod head;
mod layers;
mod linalg;
mod loss;
mod module;
mod optim;
mod tensor;

pub use encoder::{temporal_max_mean, Encoder, EncoderConfig, ShapeTrace};
pub use head::{HeadConfig, MlpHead};
pub use layers::{BatchNorm, Conv2d, Dropout, Linear, MaxPool2, Relu, BN_EPS, BN_MOMENTUM};
pub use linalg::gemm;
pub use loss::{byol_loss, l2_normalize_rows, l2_normalize_rows_backward, softmax_cross_entropy, NORM_EPS};
pub(crate) use module::join;
pub use module::{count_params, named_buffers, named_params, zero_grad, Mode, Module, Param};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
