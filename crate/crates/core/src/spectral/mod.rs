//! Dense moment and symmetric-tensor linear algebra: eigendecomposition of
//! second moments, whitening, whitened third moments and the robust tensor
//! power method.

mod moment;
mod power;
mod tensor;

pub use moment::{
    build_whitener, build_whitener_with_floor, top_k_eigh, Moment2, Whitener,
    DEFAULT_RELATIVE_FLOOR,
};
pub(crate) use moment::{check_floor, top_k_eigh_op};
pub use power::{robust_power_method, PowerConfig, TensorEigenSet};
pub use tensor::{whitened_third_moment, SymTensor3};
