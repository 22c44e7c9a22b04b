//! Asymptotic risk of the M-estimator through the (α, κ) system.

pub mod noise;
pub mod quadrature;
pub mod system;

pub use noise::{NoiseKind, NoiseModel};
pub use system::{
    alpha_curve, alpha_curve_with, solve_system, solve_system_with, system_residuals, CurvePoint,
    QuadratureInfo, SystemOptions, SystemSolution,
};
