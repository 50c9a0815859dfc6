//! Collision kernel: point evaluation, grid assembly, rates and a Monte Carlo oracle.

mod grid;
mod oracle;
mod point;
mod rates;
mod tensor;

pub use grid::{GridSpec, VelocityGrid};
pub use oracle::{kernel_oracle_mc, McEstimate};
pub use point::{kernel_point, KernelBlock, KernelEvaluator, KernelQuadrature, CUBE_INVERSE_DISTANCE_MEAN};
pub use rates::{
    gamma_forward, gamma_tilde_by_kernel_integration, gamma_tilde_continuum, gamma_tilde_discrete, RateMode,
    RateTable, ThermalAverage,
};
pub use tensor::{KernelTensor, TensorMeta, TENSOR_FORMAT_VERSION};
