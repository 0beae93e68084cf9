//! 23-layer encoder-decoder CNN with hand-written backpropagation.

mod arch;
mod layers;
mod model;
mod params;
mod tensor;

pub use arch::{ArchitectureSpec, LayerCensus, LayerKind};
pub use layers::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward,
    softmax_pixelwise, upsample2, upsample2_backward, BatchNormOutput, ConvGrads, Mode, BN_EPSILON, BN_MOMENTUM,
};
pub use model::{backward, forward, predict_foreground, ForwardCache, ForwardOutput};
pub use params::{BatchNormParams, Conv2dParams, NetworkGrads, NetworkParams};
pub use tensor::{crop_to, pad_to_multiple, FeatureMap, Padding};
