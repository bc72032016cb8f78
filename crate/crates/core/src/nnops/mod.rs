//! Differentiable operators.
//!
//! Every operator is a pair of free functions: `*_forward` returns its output
//! together with a context value, and `*_backward` consumes the upstream
//! gradient plus that context. Passing `None` as the context is reported as
//! [`Error::ContractViolation`](crate::Error::ContractViolation).

mod activation;
mod batchnorm;
mod conv;
mod linear;
mod loss;
mod pool;

pub use activation::{abs_act, activation_backward, activation_forward, relu, tlu, Activation, ActivationCtx};
pub use batchnorm::{
    batchnorm_apply, batchnorm_backward, batchnorm_forward, update_running_stats, BatchNormCtx, BatchNormGrads, BatchNormState, Mode, BN_EPS,
    BN_MOMENTUM,
};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dCtx, Conv2dGrads, Conv2dSpec};
pub use linear::{linear_backward, linear_forward, LinearCtx, LinearGrads};
pub use loss::{softmax, softmax_xent};
pub use pool::{
    avg_pool_backward, avg_pool_forward, spp_backward, spp_forward, AvgPoolCtx, PoolSpec, SppConfig, SppCtx,
    SppLevelGeometry,
};
