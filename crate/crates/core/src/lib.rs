//! Finite-element simulation of a clamped Euler-Bernoulli beam closed by
//! nonlinear boundary feedback at its free end: a rotational and a
//! translational spring-damper pair in parallel with two passive
//! finite-dimensional controllers.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! `*F64` aliases below fix the scalar for the common case.

pub mod analysis;
pub mod certify;
pub mod discretization;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod model;
pub mod quadrature;
pub mod registry;
pub mod scalar;

pub use analysis::{assemble_linear_matrix, decay_metrics, skew_check, spectrum, DecayReport, SpectrumReport};
pub use certify::{certify_block, certify_spring_damper, CertReport, Check};
pub use discretization::{assemble, assemble_gram, build_mesh, DiscreteSystem, Mesh};
pub use dynamics::{ClosedLoop, EnergyBreakdown, StateLayout, StateVector};
pub use error::{Error, Result};
pub use integrator::{first_mode_state, simulate, step_midpoint, tangent_residual, IntegratorSettings, MidpointStepper, TangentResidual, Trajectory};
pub use model::{
    linearize_block, linearize_spring_damper, BeamParams, BlockLinearization, BlockMaps, ClosedLoopConfig,
    PassiveBlock, ScalarLaw, SpringDamperLaw,
};
pub use registry::{asymmetric_spring_config, builtin_block, builtin_law, config_from_names, default_config, linear_config, linear_spring_config, BlockParams};
pub use scalar::Real;

pub type BeamParamsF64 = BeamParams<f64>;
pub type MeshF64 = Mesh<f64>;
pub type DiscreteSystemF64 = DiscreteSystem<f64>;
pub type ClosedLoopConfigF64 = ClosedLoopConfig<f64>;
pub type ClosedLoopF64 = ClosedLoop<f64>;
pub type StateVectorF64 = StateVector<f64>;
pub type EnergyBreakdownF64 = EnergyBreakdown<f64>;
pub type PassiveBlockF64 = PassiveBlock<f64>;
pub type SpringDamperLawF64 = SpringDamperLaw<f64>;
pub type TrajectoryF64 = Trajectory<f64>;
pub type IntegratorSettingsF64 = IntegratorSettings<f64>;
