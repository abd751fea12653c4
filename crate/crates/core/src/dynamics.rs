//! Semi-discrete closed-loop generator and its Lyapunov functional.
//!
//! The discrete state is `y = (u, v, z1, z2)` with `u, v` the Hermite
//! coefficients of deflection and velocity. The tip momenta are not stored:
//! `ξ = J v'(L)` and `ψ = M v(L)` are read off the velocity degrees of
//! freedom, which keeps every discrete state inside the generator's domain.
//!
//! The velocity equation is the weak form
//!
//! ```text
//! (rho M + J e_θ e_θᵀ + M e_w e_wᵀ) v̇ = -Lambda K u - τ e_θ - f e_w
//! τ = c1(z1) + d1(v'(L)) + k1(u'(L))
//! f = c2(z2) + d2(v(L))  + k2(u(L))
//! ```
//!
//! and the blocks are driven by `v'(L)` and `v(L)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::discretization::{assemble_gram, DiscreteSystem};
use crate::error::{Error, Result};
use crate::model::{linearize_block, BlockLinearization, ClosedLoopConfig, PassiveBlock, SpringDamperLaw};
use crate::scalar::Real;

/// Discrete state. The tip momenta are derived, never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T: Real> {
    pub u_dofs: DVector<T>,
    pub v_dofs: DVector<T>,
    pub z1: DVector<T>,
    pub z2: DVector<T>,
}

/// Sizes of the four state blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_dof: usize,
    pub n1: usize,
    pub n2: usize,
}

impl StateLayout {
    pub fn dim(&self) -> usize {
        2 * self.n_dof + self.n1 + self.n2
    }
}

impl<T: Real> StateVector<T> {
    pub fn zeros(layout: StateLayout) -> Self {
        Self {
            u_dofs: DVector::zeros(layout.n_dof),
            v_dofs: DVector::zeros(layout.n_dof),
            z1: DVector::zeros(layout.n1),
            z2: DVector::zeros(layout.n2),
        }
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            n_dof: self.u_dofs.len(),
            n1: self.z1.len(),
            n2: self.z2.len(),
        }
    }

    pub fn to_flat(&self) -> DVector<T> {
        let l = self.layout();
        let mut y = DVector::zeros(l.dim());
        let n = l.n_dof;
        y.rows_mut(0, n).copy_from(&self.u_dofs);
        y.rows_mut(n, n).copy_from(&self.v_dofs);
        y.rows_mut(2 * n, l.n1).copy_from(&self.z1);
        y.rows_mut(2 * n + l.n1, l.n2).copy_from(&self.z2);
        y
    }

    pub fn from_flat(layout: StateLayout, y: &DVector<T>) -> Result<Self> {
        if y.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                context: "flat state",
                expected: layout.dim(),
                found: y.len(),
            });
        }
        let n = layout.n_dof;
        Ok(Self {
            u_dofs: y.rows(0, n).into_owned(),
            v_dofs: y.rows(n, n).into_owned(),
            z1: y.rows(2 * n, layout.n1).into_owned(),
            z2: y.rows(2 * n + layout.n1, layout.n2).into_owned(),
        })
    }

    /// `ξ = J v'(L)`
    pub fn xi(&self, sys: &DiscreteSystem<T>) -> T {
        sys.beam.tip_inertia * self.v_dofs[sys.tip_slope_index]
    }

    /// `ψ = M v(L)`
    pub fn psi(&self, sys: &DiscreteSystem<T>) -> T {
        sys.beam.tip_mass * self.v_dofs[sys.tip_value_index]
    }
}

/// Parts of the Lyapunov functional `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown<T> {
    pub beam_strain: T,
    pub beam_kinetic: T,
    pub tip_kinetic: T,
    pub spring_potential_rot: T,
    pub spring_potential_tr: T,
    pub storage_z1: T,
    pub storage_z2: T,
    pub total: T,
}

impl<T: Real> EnergyBreakdown<T> {
    pub const CSV_HEADER: &'static str =
        "t,total,beam_strain,beam_kinetic,tip_kinetic,spring_rot,spring_tr,storage_z1,storage_z2";

    /// Values in the order of [`Self::CSV_HEADER`] after the time column.
    pub fn columns(&self) -> [T; 8] {
        [
            self.total,
            self.beam_strain,
            self.beam_kinetic,
            self.tip_kinetic,
            self.spring_potential_rot,
            self.spring_potential_tr,
            self.storage_z1,
            self.storage_z2,
        ]
    }
}

/// Boundary inputs and loads read off a state.
struct TipTraces<T> {
    slope_rate: T,
    value_rate: T,
    slope: T,
    value: T,
}

/// A discretized closed loop with its constant matrices prefactored.
#[derive(Clone)]
pub struct ClosedLoop<T: Real> {
    pub sys: DiscreteSystem<T>,
    pub config: ClosedLoopConfig<T>,
    pub lin1: BlockLinearization<T>,
    pub lin2: BlockLinearization<T>,
    gram: DMatrix<T>,
    inertia_chol: Cholesky<T, Dyn>,
    /// inertia⁻¹ Lambda K
    beam_response: DMatrix<T>,
    /// inertia⁻¹ e_θ
    slope_response: DVector<T>,
    /// inertia⁻¹ e_w
    value_response: DVector<T>,
}

impl<T: Real> std::fmt::Debug for ClosedLoop<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClosedLoop")
            .field("n_dof", &self.sys.n_dof)
            .field("layout", &self.layout())
            .finish()
    }
}

impl<T: Real> ClosedLoop<T> {
    /// Linearizes both blocks and assembles the energy Gram matrix.
    pub fn new(sys: DiscreteSystem<T>, config: ClosedLoopConfig<T>) -> Result<Self> {
        let lin1 = linearize_block(&config.block_rotational)?;
        let lin2 = linearize_block(&config.block_translational)?;
        Self::with_linearizations(sys, config, lin1, lin2)
    }

    pub fn with_linearizations(
        sys: DiscreteSystem<T>,
        config: ClosedLoopConfig<T>,
        lin1: BlockLinearization<T>,
        lin2: BlockLinearization<T>,
    ) -> Result<Self> {
        let gram = assemble_gram(&sys, &config, &lin1, &lin2)?;
        let inertia_chol = sys
            .inertia()
            .cholesky()
            .ok_or(Error::LinearSolveFailure("velocity inertia factorization"))?;
        let beam_response = inertia_chol.solve(&sys.beam_stiffness());
        let slope_response = inertia_chol.solve(&sys.tip_slope_selector());
        let value_response = inertia_chol.solve(&sys.tip_value_selector());
        Ok(Self {
            sys,
            config,
            lin1,
            lin2,
            gram,
            inertia_chol,
            beam_response,
            slope_response,
            value_response,
        })
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            n_dof: self.sys.n_dof,
            n1: self.config.block_rotational.dim(),
            n2: self.config.block_translational.dim(),
        }
    }

    pub fn dim(&self) -> usize {
        self.layout().dim()
    }

    /// Energy Gram matrix `Q` over the flat state.
    pub fn gram(&self) -> &DMatrix<T> {
        &self.gram
    }

    pub fn zero_state(&self) -> StateVector<T> {
        StateVector::zeros(self.layout())
    }

    fn check(&self, state: &StateVector<T>) -> Result<()> {
        let l = self.layout();
        let found = state.layout();
        if found != l {
            return Err(Error::DimensionMismatch {
                context: "state layout",
                expected: l.dim(),
                found: found.dim(),
            });
        }
        Ok(())
    }

    fn traces(&self, state: &StateVector<T>) -> TipTraces<T> {
        TipTraces {
            slope_rate: state.v_dofs[self.sys.tip_slope_index],
            value_rate: state.v_dofs[self.sys.tip_value_index],
            slope: state.u_dofs[self.sys.tip_slope_index],
            value: state.u_dofs[self.sys.tip_value_index],
        }
    }

    fn velocity_rate(&self, u: Option<&DVector<T>>, torque: T, force: T) -> DVector<T> {
        let mut vdot = &self.slope_response * (-torque) - &self.value_response * force;
        if let Some(u) = u {
            vdot -= &self.beam_response * u;
        }
        vdot
    }

    /// Discrete `𝒜 y`.
    pub fn apply_generator(&self, state: &StateVector<T>) -> Result<StateVector<T>> {
        self.check(state)?;
        let c = &self.config;
        let t = self.traces(state);
        let torque = c.block_rotational.output(&state.z1)
            + c.sd_rotational.damper.eval(t.slope_rate)
            + c.sd_rotational.spring.eval(t.slope);
        let force = c.block_translational.output(&state.z2)
            + c.sd_translational.damper.eval(t.value_rate)
            + c.sd_translational.spring.eval(t.value);
        let z1dot = block_rate(&c.block_rotational, &state.z1, t.slope_rate);
        let z2dot = block_rate(&c.block_translational, &state.z2, t.value_rate);
        Ok(StateVector {
            u_dofs: state.v_dofs.clone(),
            v_dofs: self.velocity_rate(Some(&state.u_dofs), torque, force),
            z1: z1dot,
            z2: z2dot,
        })
    }

    /// Discrete `ℒ y`: every law replaced by its linearization at zero.
    pub fn apply_linear_part(&self, state: &StateVector<T>) -> Result<StateVector<T>> {
        self.check(state)?;
        let c = &self.config;
        let t = self.traces(state);
        let torque = self.lin1.c.dot(&state.z1)
            + c.sd_rotational.damper_slope * t.slope_rate
            + c.sd_rotational.spring_slope * t.slope;
        let force = self.lin2.c.dot(&state.z2)
            + c.sd_translational.damper_slope * t.value_rate
            + c.sd_translational.spring_slope * t.value;
        Ok(StateVector {
            u_dofs: state.v_dofs.clone(),
            v_dofs: self.velocity_rate(Some(&state.u_dofs), torque, force),
            z1: &self.lin1.a * &state.z1 + &self.lin1.b * t.slope_rate,
            z2: &self.lin2.a * &state.z2 + &self.lin2.b * t.value_rate,
        })
    }

    /// Discrete `𝒩 y = 𝒜 y - ℒ y`, built from the remainders only. Its
    /// velocity block is the inertia solve of a load supported on the two
    /// tip degrees of freedom; its displacement block is zero.
    pub fn apply_nonlinear_part(&self, state: &StateVector<T>) -> Result<StateVector<T>> {
        self.check(state)?;
        let c = &self.config;
        let t = self.traces(state);
        let torque = (c.block_rotational.output(&state.z1) - self.lin1.c.dot(&state.z1))
            + c.sd_rotational.damper_remainder(t.slope_rate)
            + c.sd_rotational.spring_remainder(t.slope);
        let force = (c.block_translational.output(&state.z2) - self.lin2.c.dot(&state.z2))
            + c.sd_translational.damper_remainder(t.value_rate)
            + c.sd_translational.spring_remainder(t.value);
        let z1 = block_remainder(&c.block_rotational, &self.lin1, &state.z1, t.slope_rate);
        let z2 = block_remainder(&c.block_translational, &self.lin2, &state.z2, t.value_rate);
        Ok(StateVector {
            u_dofs: DVector::zeros(self.sys.n_dof),
            v_dofs: self.velocity_rate(None, torque, force),
            z1,
            z2,
        })
    }

    /// Analytic derivative of `𝒩` at `state` applied to `dir`, built from
    /// the supplied Jacobians and the law derivatives.
    pub fn apply_nonlinear_tangent(&self, state: &StateVector<T>, dir: &StateVector<T>) -> Result<StateVector<T>> {
        self.check(state)?;
        self.check(dir)?;
        let c = &self.config;
        let t = self.traces(state);
        let d = self.traces(dir);
        let b1 = &c.block_rotational;
        let b2 = &c.block_translational;
        let torque = (b1.output_grad(&state.z1) - &self.lin1.c).dot(&dir.z1)
            + (c.sd_rotational.damper.deriv(t.slope_rate) - c.sd_rotational.damper_slope) * d.slope_rate
            + (c.sd_rotational.spring.deriv(t.slope) - c.sd_rotational.spring_slope) * d.slope;
        let force = (b2.output_grad(&state.z2) - &self.lin2.c).dot(&dir.z2)
            + (c.sd_translational.damper.deriv(t.value_rate) - c.sd_translational.damper_slope) * d.value_rate
            + (c.sd_translational.spring.deriv(t.value) - c.sd_translational.spring_slope) * d.value;
        let z1 = block_tangent_remainder(b1, &self.lin1, &state.z1, t.slope_rate, &dir.z1, d.slope_rate);
        let z2 = block_tangent_remainder(b2, &self.lin2, &state.z2, t.value_rate, &dir.z2, d.value_rate);
        Ok(StateVector {
            u_dofs: DVector::zeros(self.sys.n_dof),
            v_dofs: self.velocity_rate(None, torque, force),
            z1,
            z2,
        })
    }

    /// Flat indices the nonlinear part depends on: the four tip degrees of
    /// freedom and both block states.
    pub fn nonlinear_support(&self) -> Vec<usize> {
        let n = self.sys.n_dof;
        let mut idx = vec![
            self.sys.tip_slope_index,
            self.sys.tip_value_index,
            n + self.sys.tip_slope_index,
            n + self.sys.tip_value_index,
        ];
        idx.extend(2 * n..self.dim());
        idx
    }

    /// Dense matrix of the linear part, built column by column.
    pub fn linear_matrix(&self) -> DMatrix<T> {
        let layout = self.layout();
        let dim = layout.dim();
        let mut g = DMatrix::zeros(dim, dim);
        let mut e = DVector::zeros(dim);
        for k in 0..dim {
            e[k] = T::one();
            let s = StateVector::from_flat(layout, &e).expect("layout");
            let col = self.apply_linear_part(&s).expect("layout").to_flat();
            g.set_column(k, &col);
            e[k] = T::zero();
        }
        g
    }

    /// `𝒜 y` on the flat layout.
    pub fn field(&self, y: &DVector<T>) -> Result<DVector<T>> {
        let s = StateVector::from_flat(self.layout(), y)?;
        Ok(self.apply_generator(&s)?.to_flat())
    }

    /// `𝒩 y` on the flat layout.
    pub fn nonlinear_field(&self, y: &DVector<T>) -> Result<DVector<T>> {
        let s = StateVector::from_flat(self.layout(), y)?;
        Ok(self.apply_nonlinear_part(&s)?.to_flat())
    }

    /// `‖y‖_Q` on the flat layout.
    pub fn q_norm_flat(&self, y: &DVector<T>) -> T {
        y.dot(&(&self.gram * y)).max(T::zero()).sqrt()
    }

    /// `⟨y, w⟩_Q`
    pub fn q_inner(&self, y: &StateVector<T>, w: &StateVector<T>) -> T {
        let a = y.to_flat();
        let b = w.to_flat();
        a.dot(&(&self.gram * b))
    }

    pub fn q_norm(&self, y: &StateVector<T>) -> T {
        self.q_inner(y, y).max(T::zero()).sqrt()
    }

    /// `H(y)`; spring potentials by adaptive Simpson quadrature.
    pub fn eval_h(&self, state: &StateVector<T>) -> Result<EnergyBreakdown<T>> {
        self.check(state)?;
        let half = T::half();
        let sys = &self.sys;
        let c = &self.config;
        let u = &state.u_dofs;
        let v = &state.v_dofs;
        let beam_strain = half * sys.beam.lambda_rigidity * u.dot(&(&sys.stiffness * u));
        let beam_kinetic = half * sys.beam.rho * v.dot(&(&sys.mass * v));
        let xi = state.xi(sys);
        let psi = state.psi(sys);
        let tip_kinetic = half * (xi * xi / sys.beam.tip_inertia + psi * psi / sys.beam.tip_mass);
        let t = self.traces(state);
        let spring_potential_rot = c.sd_rotational.spring_potential(t.slope);
        let spring_potential_tr = c.sd_translational.spring_potential(t.value);
        let storage_z1 = c.block_rotational.storage(&state.z1);
        let storage_z2 = c.block_translational.storage(&state.z2);
        let total = beam_strain
            + beam_kinetic
            + tip_kinetic
            + spring_potential_rot
            + spring_potential_tr
            + storage_z1
            + storage_z2;
        Ok(EnergyBreakdown {
            beam_strain,
            beam_kinetic,
            tip_kinetic,
            spring_potential_rot,
            spring_potential_tr,
            storage_z1,
            storage_z2,
            total,
        })
    }

    /// Closed-form `dH/dt = a1·∇V1 + a2·∇V2 - d1(v'(L)) v'(L) - d2(v(L)) v(L)`.
    pub fn eval_hdot(&self, state: &StateVector<T>) -> Result<T> {
        self.check(state)?;
        let c = &self.config;
        let t = self.traces(state);
        let b1 = &c.block_rotational;
        let b2 = &c.block_translational;
        Ok(b1.drift(&state.z1).dot(&b1.storage_grad(&state.z1))
            + b2.drift(&state.z2).dot(&b2.storage_grad(&state.z2))
            - c.sd_rotational.damper.eval(t.slope_rate) * t.slope_rate
            - c.sd_translational.damper.eval(t.value_rate) * t.value_rate)
    }

    /// Whether every law and block coincides with its linearization.
    pub fn is_linear(&self) -> bool {
        let linear_block = |b: &PassiveBlock<T>, lin: &BlockLinearization<T>| {
            let n = b.dim();
            (0..3).all(|k| {
                let z = DVector::from_fn(n, |i, _| T::lit(0.7 * (k as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -0.6 }));
                let tol = T::lit(1e-13) * (T::one() + z.norm());
                (b.drift(&z) - &lin.a * &z).amax() <= tol
                    && (b.input_gain(&z) - &lin.b).amax() <= tol
                    && (b.output(&z) - lin.c.dot(&z)).abs() <= tol
            })
        };
        let sd = |l: &SpringDamperLaw<T>| l.is_linear();
        sd(&self.config.sd_rotational)
            && sd(&self.config.sd_translational)
            && linear_block(&self.config.block_rotational, &self.lin1)
            && linear_block(&self.config.block_translational, &self.lin2)
    }

    /// Solves with the prefactored velocity inertia.
    pub fn inertia_solve(&self, rhs: &DVector<T>) -> DVector<T> {
        self.inertia_chol.solve(rhs)
    }
}

fn block_rate<T: Real>(block: &PassiveBlock<T>, z: &DVector<T>, input: T) -> DVector<T> {
    block.drift(z) + block.input_gain(z) * input
}

fn block_remainder<T: Real>(block: &PassiveBlock<T>, lin: &BlockLinearization<T>, z: &DVector<T>, input: T) -> DVector<T> {
    (block.drift(z) - &lin.a * z) + (block.input_gain(z) - &lin.b) * input
}

fn block_tangent_remainder<T: Real>(
    block: &PassiveBlock<T>,
    lin: &BlockLinearization<T>,
    z: &DVector<T>,
    input: T,
    dz: &DVector<T>,
    dinput: T,
) -> DVector<T> {
    let drift = (block.drift_jac(z) - &lin.a) * dz;
    let gain = block.input_jac(z) * dz * input + (block.input_gain(z) - &lin.b) * dinput;
    drift + gain
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{assemble, build_mesh};
    use crate::model::BeamParams;
    use crate::registry::{builtin_law, default_config, linear_config};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loop_from(config: ClosedLoopConfig<f64>, n: usize) -> ClosedLoop<f64> {
        let sys = assemble(&config.beam, &build_mesh(&config.beam, n).unwrap(), true);
        ClosedLoop::new(sys, config).unwrap()
    }

    fn beam() -> BeamParams<f64> {
        BeamParams::unit_beam(0.1, 0.1).unwrap()
    }

    fn random_state(cl: &ClosedLoop<f64>, rng: &mut ChaCha8Rng, scale: f64) -> StateVector<f64> {
        let y = DVector::from_fn(cl.dim(), |_, _| scale * rng.random_range(-1.0..1.0));
        StateVector::from_flat(cl.layout(), &y).unwrap()
    }

    #[test]
    fn zero_state_is_equilibrium() {
        let cl = loop_from(default_config(beam()).unwrap(), 4);
        let z = cl.zero_state();
        assert_eq!(cl.apply_generator(&z).unwrap(), z);
        assert_eq!(cl.apply_linear_part(&z).unwrap(), z);
        assert_eq!(cl.apply_nonlinear_part(&z).unwrap(), z);
        assert_eq!(cl.eval_hdot(&z).unwrap(), 0.0);
        let e = cl.eval_h(&z).unwrap();
        assert_eq!(e.total, 0.0);
        assert_eq!(e.beam_strain, 0.0);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let cl = loop_from(default_config(beam()).unwrap(), 4);
        let wrong = StateVector::<f64>::zeros(StateLayout { n_dof: 6, n1: 2, n2: 2 });
        assert!(matches!(cl.eval_h(&wrong), Err(Error::DimensionMismatch { .. })));
        assert!(cl.apply_generator(&wrong).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let cl = loop_from(default_config(beam()).unwrap(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state(&cl, &mut rng, 1.0);
        assert_eq!(StateVector::from_flat(cl.layout(), &s.to_flat()).unwrap(), s);
        assert!(StateVector::<f64>::from_flat(cl.layout(), &DVector::zeros(3)).is_err());
    }

    #[test]
    fn tip_momenta_derive_from_velocity() {
        let cl = loop_from(default_config(beam()).unwrap(), 3);
        let mut s = cl.zero_state();
        s.v_dofs[cl.sys.tip_slope_index] = 2.0;
        s.v_dofs[cl.sys.tip_value_index] = -3.0;
        assert!((s.xi(&cl.sys) - 0.2).abs() < 1e-16);
        assert!((s.psi(&cl.sys) + 0.3).abs() < 1e-16);
    }

    #[test]
    fn linear_spring_potentials() {
        let cl = loop_from(linear_config(beam()).unwrap(), 3);
        let mut s = cl.zero_state();
        s.u_dofs[cl.sys.tip_slope_index] = 0.7;
        s.u_dofs[cl.sys.tip_value_index] = -1.3;
        let e = cl.eval_h(&s).unwrap();
        assert!((e.spring_potential_rot - 0.5 * 0.49).abs() < 1e-14);
        assert!((e.spring_potential_tr - 0.5 * 1.69).abs() < 1e-14);
    }

    #[test]
    fn quadratic_deflection_energy() {
        // u = x²: ∫(u'')² = 4, u'(1) = 2, u(1) = 1
        let cl = loop_from(linear_config(beam()).unwrap(), 5);
        let mut s = cl.zero_state();
        s.u_dofs = cl.sys.interpolate(|x| x * x, |x| 2.0 * x);
        let e = cl.eval_h(&s).unwrap();
        assert!((e.beam_strain - 2.0).abs() < 1e-12);
        assert!((e.spring_potential_rot - 2.0).abs() < 1e-14);
        assert!((e.spring_potential_tr - 0.5).abs() < 1e-14);
        assert!((e.total - 4.5).abs() < 1e-12);
    }

    #[test]
    fn hdot_hand_value() {
        let cl = loop_from(linear_config(beam()).unwrap(), 4);
        let mut s = cl.zero_state();
        s.v_dofs[cl.sys.tip_value_index] = 1.0;
        s.v_dofs[cl.sys.tip_slope_index] = 2.0;
        assert!((cl.eval_hdot(&s).unwrap() + 5.0).abs() < 1e-15);
        // arbitrary deflection, quiet tip and blocks
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut q = cl.zero_state();
        q.u_dofs = DVector::from_fn(cl.sys.n_dof, |_, _| rng.random_range(-1.0..1.0));
        assert_eq!(cl.eval_hdot(&q).unwrap(), 0.0);
    }

    #[test]
    fn energy_equals_half_q_norm_for_linear_loop() {
        let cl = loop_from(linear_config(beam()).unwrap(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let s = random_state(&cl, &mut rng, 1.0);
            let h = cl.eval_h(&s).unwrap().total;
            let q = cl.q_inner(&s, &s);
            assert!((2.0 * h - q).abs() <= 1e-12 * q);
        }
    }

    #[test]
    fn linear_loop_has_no_nonlinear_part() {
        let cl = loop_from(linear_config(beam()).unwrap(), 4);
        assert!(cl.is_linear());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let s = random_state(&cl, &mut rng, 2.0);
            assert_eq!(cl.apply_nonlinear_part(&s).unwrap().to_flat().amax(), 0.0);
            let a = cl.apply_generator(&s).unwrap().to_flat();
            let l = cl.apply_linear_part(&s).unwrap().to_flat();
            assert!((a - l).amax() <= 1e-12);
        }
        assert!(!loop_from(default_config(beam()).unwrap(), 2).is_linear());
    }

    #[test]
    fn zero_feedback_reduces_to_bare_beam() {
        let mut config = linear_config(beam()).unwrap();
        let zero = || builtin_law::<f64>("zero", &[]).unwrap();
        config.sd_rotational = SpringDamperLaw::new(zero(), zero());
        config.sd_translational = SpringDamperLaw::new(zero(), zero());
        let cl = loop_from(config, 4);
        let mut s = cl.zero_state();
        s.u_dofs = cl.sys.interpolate(|x| x * x * (3.0 - x), |x| 6.0 * x - 3.0 * x * x);
        let expected = -cl.inertia_solve(&(cl.sys.beam_stiffness() * &s.u_dofs));
        let got = cl.apply_generator(&s).unwrap();
        assert!((got.v_dofs - expected).amax() < 1e-10);
        assert_eq!(got.z1.amax(), 0.0);
        assert_eq!(cl.eval_hdot(&s).unwrap(), 0.0);
    }

    #[test]
    fn nonlinear_tangent_matches_finite_difference() {
        let cl = loop_from(default_config(beam()).unwrap(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let s = random_state(&cl, &mut rng, 0.5);
            let d = random_state(&cl, &mut rng, 1.0);
            let h = 1e-6;
            let plus = StateVector::from_flat(cl.layout(), &(s.to_flat() + d.to_flat() * h)).unwrap();
            let minus = StateVector::from_flat(cl.layout(), &(s.to_flat() - d.to_flat() * h)).unwrap();
            let fd = (cl.apply_nonlinear_part(&plus).unwrap().to_flat() - cl.apply_nonlinear_part(&minus).unwrap().to_flat()) / (2.0 * h);
            let an = cl.apply_nonlinear_tangent(&s, &d).unwrap().to_flat();
            assert!((fd - &an).amax() <= 1e-6 * (1.0 + an.amax()));
        }
    }

    fn smooth_state(cl: &ClosedLoop<f64>, rng: &mut ChaCha8Rng) -> StateVector<f64> {
        let (a, b, c) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.5..2.0));
        let mut s = cl.zero_state();
        s.u_dofs = cl.sys.interpolate(|x| a * x * x + b * (c * x).sin() * x, |x| 2.0 * a * x + b * ((c * x).sin() + c * x * (c * x).cos()));
        s.v_dofs = cl.sys.interpolate(|x| b * x * x * x, |x| 3.0 * b * x * x);
        s.z1 = DVector::from_fn(s.z1.len(), |_, _| rng.random_range(-0.5..0.5));
        s.z2 = DVector::from_fn(s.z2.len(), |_, _| rng.random_range(-0.5..0.5));
        s
    }

    #[test]
    fn directional_derivative_of_h_is_hdot() {
        // smooth states keep the stiff directions small enough for differencing
        let cl = loop_from(default_config(beam()).unwrap(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..10 {
            let s = smooth_state(&cl, &mut rng);
            let dir = cl.apply_generator(&s).unwrap().to_flat();
            let h = 1e-5 / (1.0 + dir.amax());
            let plus = StateVector::from_flat(cl.layout(), &(s.to_flat() + &dir * h)).unwrap();
            let minus = StateVector::from_flat(cl.layout(), &(s.to_flat() - &dir * h)).unwrap();
            let fd = (cl.eval_h(&plus).unwrap().total - cl.eval_h(&minus).unwrap().total) / (2.0 * h);
            let hdot = cl.eval_hdot(&s).unwrap();
            assert!(hdot < 0.0);
            assert!((fd - hdot).abs() <= 1e-4 * hdot.abs(), "fd {fd} vs {hdot}");
        }
    }

    #[test]
    fn linear_loop_energy_rate_is_q_pairing() {
        let cl = loop_from(linear_config(beam()).unwrap(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..10 {
            let s = random_state(&cl, &mut rng, 1.0);
            let a = cl.apply_generator(&s).unwrap();
            let pairing = cl.q_inner(&s, &a);
            let hdot = cl.eval_hdot(&s).unwrap();
            assert!((pairing - hdot).abs() <= 1e-9 * (1.0 + hdot.abs()));
        }
    }

    #[test]
    fn energy_nonnegative_on_random_states() {
        let cl = loop_from(default_config(beam()).unwrap(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..50 {
            let s = random_state(&cl, &mut rng, 3.0);
            let e = cl.eval_h(&s).unwrap();
            assert!(e.total >= 0.0);
            let sum: f64 = e.columns()[1..].iter().sum();
            assert!((sum - e.total).abs() <= 1e-12 * e.total);
        }
    }
}
