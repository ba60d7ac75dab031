//! Forward and backward passes for every layer the architecture notation
//! can express.
//!
//! Each forward returns `(output, cache)`; the cache holds exactly the
//! intermediates its backward needs and corresponds to one forward call.
//! All passes are pure given (input, params) — parameter mutation is the
//! optimizer's job — with one exception: batch normalization updates its
//! running statistics during train-mode forward.

mod batchnorm;
mod conv;
mod fc;
mod l2norm;
mod pool;
mod relu;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormParams};
pub use conv::{conv_backward, conv_forward, ConvCache, ConvParams};
pub use fc::{fc_backward, fc_forward, FcCache};

pub(crate) use batchnorm::batchnorm_forward_owned;
pub(crate) use conv::conv_forward_owned;
pub(crate) use fc::fc_forward_owned;
pub(crate) use relu::relu_forward_owned;
pub use l2norm::{l2norm_backward, l2norm_forward, L2NormCache, NORM_GUARD};
pub use pool::{
    global_avgpool_backward, global_avgpool_forward, maxpool_backward, maxpool_forward, GapCache,
    MaxPoolCache,
};
pub use relu::{relu_backward, relu_forward, ReluCache};
