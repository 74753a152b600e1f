//! Dense tensor arithmetic, layer kernels with exact gradients, Adam, a
//! central-difference gradient checker and the checkpoint format.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{Blob, Checkpoint};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use layers::{conv2d_forward, leaky_relu_forward, max_pool2d_forward, Conv2d, Layer, LayerContext, ParamGrads};
pub use tensor::{Dims, Tensor4};
