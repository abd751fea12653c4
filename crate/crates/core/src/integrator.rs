//! Implicit midpoint time stepping of the closed loop.
//!
//! Each step solves `y⁺ = y + dt 𝒜((y + y⁺)/2)` by a simplified Newton
//! iteration. The iteration matrix `I - dt/2 (G + J_𝒩)` reuses a cached LU
//! factorization of `I - dt/2 G`; the Jacobian of the nonlinear part only
//! has columns at the tip degrees of freedom and the block states, so it
//! enters as a low-rank update.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, LU, Dyn};
use serde::Serialize;

use crate::dynamics::{ClosedLoop, EnergyBreakdown, StateVector};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorSettings<T> {
    pub dt: T,
    pub t_end: T,
    /// Residual bound relative to `1 + ‖y‖_Q`.
    pub newton_tol: T,
    pub newton_max_iter: usize,
    pub record_every: usize,
    /// Allowed one-step increase of `H`, relative to `H(y0)`.
    pub energy_tol: T,
    /// Fail with `StepRejected` instead of flagging the run.
    pub strict_energy: bool,
}

impl<T: Real> IntegratorSettings<T> {
    pub fn new(dt: T, t_end: T) -> Result<Self> {
        let s = Self {
            dt,
            t_end,
            newton_tol: T::lit(1e-10),
            newton_max_iter: 25,
            record_every: 1,
            energy_tol: T::lit(1e-8),
            strict_energy: false,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if !(self.dt < self.t_end) {
            return Err(Error::invalid("t_end", "must exceed dt"));
        }
        if !(self.newton_tol > T::zero()) || !(self.energy_tol > T::zero()) {
            return Err(Error::invalid("tolerance", "must be positive"));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::invalid("newton_max_iter", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        Ok(())
    }

    /// Number of steps to reach `t_end`, rounded to the nearest integer.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).as_f64().round() as usize
    }
}

/// Recorded run. All sequences have equal length.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    pub times: Vec<T>,
    pub states: Vec<StateVector<T>>,
    pub energies: Vec<EnergyBreakdown<T>>,
    pub hdots: Vec<T>,
    /// `‖𝒩 y(t)‖_Q`
    pub nonlinearity_norms: Vec<T>,
    /// `‖𝒜 y(t)‖_Q`
    pub tangent_norms: Vec<T>,
    /// Largest one-step increase of `H` over all steps (not only recorded ones).
    pub max_energy_increase: T,
    /// Set when `max_energy_increase` exceeds `energy_tol · H(y0)`.
    pub flagged: bool,
    pub steps: usize,
    pub newton_iterations: usize,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn total_energy(&self) -> Vec<T> {
        self.energies.iter().map(|e| e.total).collect()
    }

    /// Energy CSV: the documented energy columns, then `nonlin_norm`,
    /// `tangent_norm` and `hdot`.
    pub fn write_energy_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{},nonlin_norm,tangent_norm,hdot", EnergyBreakdown::<T>::CSV_HEADER)?;
        for k in 0..self.len() {
            let mut row = vec![self.times[k]];
            row.extend(self.energies[k].columns());
            row.extend([self.nonlinearity_norms[k], self.tangent_norms[k], self.hdots[k]]);
            write_row(&mut w, &row)?;
        }
        Ok(())
    }

    /// State CSV: `t`, then `u0..`, `v0..`, `z1_0..`, `z2_0..`.
    pub fn write_state_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let Some(first) = self.states.first() else {
            return writeln!(w, "t");
        };
        let l = first.layout();
        let mut header = vec!["t".to_string()];
        header.extend((0..l.n_dof).map(|i| format!("u{i}")));
        header.extend((0..l.n_dof).map(|i| format!("v{i}")));
        header.extend((0..l.n1).map(|i| format!("z1_{i}")));
        header.extend((0..l.n2).map(|i| format!("z2_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut row = vec![*t];
            row.extend(s.to_flat().iter().copied());
            write_row(&mut w, &row)?;
        }
        Ok(())
    }
}

/// 17 significant digits.
pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_row<T: Real, W: Write>(w: &mut W, row: &[T]) -> io::Result<()> {
    let cells: Vec<String> = row.iter().map(|x| format_value(x.as_f64())).collect();
    writeln!(w, "{}", cells.join(","))
}

/// Midpoint stepper with the linear iteration matrix prefactored.
pub struct MidpointStepper<'a, T: Real> {
    cl: &'a ClosedLoop<T>,
    dt: T,
    newton_tol: T,
    max_iter: usize,
    base_lu: LU<T, Dyn, Dyn>,
    support: Vec<usize>,
    linear: bool,
}

/// Low-rank corrected solver for `I - dt/2 (G + J_𝒩)`.
struct IterationMatrix<'s, T: Real> {
    base_lu: &'s LU<T, Dyn, Dyn>,
    support: &'s [usize],
    /// `base⁻¹ U`
    z: DMatrix<T>,
    core: Option<LU<T, Dyn, Dyn>>,
}

impl<T: Real> IterationMatrix<'_, T> {
    fn solve(&self, r: &DVector<T>) -> Result<DVector<T>> {
        let x0 = self.base_lu.solve(r).ok_or(Error::LinearSolveFailure("midpoint iteration matrix"))?;
        let Some(core) = &self.core else {
            return Ok(x0);
        };
        let xs = DVector::from_iterator(self.support.len(), self.support.iter().map(|&i| x0[i]));
        let c = core.solve(&xs).ok_or(Error::LinearSolveFailure("low-rank correction"))?;
        Ok(x0 - &self.z * c)
    }
}

impl<'a, T: Real> MidpointStepper<'a, T> {
    pub fn new(cl: &'a ClosedLoop<T>, dt: T, newton_tol: T, max_iter: usize) -> Result<Self> {
        let dim = cl.dim();
        let g = cl.linear_matrix();
        let base = DMatrix::identity(dim, dim) - g * (dt * T::half());
        let base_lu = base.lu();
        if !base_lu.is_invertible() {
            return Err(Error::LinearSolveFailure("midpoint iteration matrix"));
        }
        Ok(Self {
            cl,
            dt,
            newton_tol,
            max_iter,
            base_lu,
            support: cl.nonlinear_support(),
            linear: cl.is_linear(),
        })
    }

    pub fn from_settings(cl: &'a ClosedLoop<T>, settings: &IntegratorSettings<T>) -> Result<Self> {
        Self::new(cl, settings.dt, settings.newton_tol, settings.newton_max_iter)
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Forward-difference Jacobian columns of `𝒩` at `y` over the support.
    fn iteration_matrix(&self, y: &DVector<T>) -> Result<IterationMatrix<'_, T>> {
        if self.linear {
            return Ok(IterationMatrix { base_lu: &self.base_lu, support: &self.support, z: DMatrix::zeros(0, 0), core: None });
        }
        let m = self.support.len();
        let dim = y.len();
        let eps = T::lit(1e-7) * (T::one() + y.norm());
        let base = self.cl.nonlinear_field(y)?;
        let scale = -(self.dt * T::half()) / eps;
        let mut u = DMatrix::zeros(dim, m);
        let mut probe = y.clone();
        for (k, &i) in self.support.iter().enumerate() {
            probe[i] += eps;
            let col = (self.cl.nonlinear_field(&probe)? - &base) * scale;
            u.set_column(k, &col);
            probe[i] = y[i];
        }
        let mut z = DMatrix::zeros(dim, m);
        for k in 0..m {
            let col = self.base_lu.solve(&u.column(k).into_owned()).ok_or(Error::LinearSolveFailure("midpoint iteration matrix"))?;
            z.set_column(k, &col);
        }
        let core = DMatrix::from_fn(m, m, |r, c| z[(self.support[r], c)] + if r == c { T::one() } else { T::zero() });
        let core = core.lu();
        if !core.is_invertible() {
            return Err(Error::LinearSolveFailure("low-rank correction"));
        }
        Ok(IterationMatrix { base_lu: &self.base_lu, support: &self.support, z, core: Some(core) })
    }

    /// One step on the flat layout; returns the new state and the number
    /// of Newton iterations used.
    pub fn step_flat(&self, y: &DVector<T>) -> Result<(DVector<T>, usize)> {
        let tol = self.newton_tol * (T::one() + self.cl.q_norm_flat(y));
        let jac = self.iteration_matrix(y)?;
        let mut next = y.clone();
        let mut residual = T::zero();
        for it in 0..=self.max_iter {
            let mid = (y + &next) * T::half();
            let f = &next - y - self.cl.field(&mid)? * self.dt;
            residual = self.cl.q_norm_flat(&f);
            if !residual.is_finite() {
                break;
            }
            if residual <= tol {
                return Ok((next, it));
            }
            if it == self.max_iter {
                break;
            }
            next -= jac.solve(&f)?;
        }
        Err(Error::NewtonDivergence { iterations: self.max_iter, residual: residual.as_f64() })
    }

    pub fn step(&self, state: &StateVector<T>) -> Result<StateVector<T>> {
        let (y, _) = self.step_flat(&state.to_flat())?;
        StateVector::from_flat(self.cl.layout(), &y)
    }
}

/// One implicit midpoint step. Builds a fresh stepper; use
/// [`MidpointStepper`] directly when taking many steps.
pub fn step_midpoint<T: Real>(cl: &ClosedLoop<T>, state: &StateVector<T>, dt: T) -> Result<StateVector<T>> {
    MidpointStepper::new(cl, dt, T::lit(1e-10), 25)?.step(state)
}

fn record<T: Real>(traj: &mut Trajectory<T>, cl: &ClosedLoop<T>, t: T, state: StateVector<T>, energy: EnergyBreakdown<T>) -> Result<()> {
    let y = state.to_flat();
    traj.hdots.push(cl.eval_hdot(&state)?);
    traj.nonlinearity_norms.push(cl.q_norm_flat(&cl.nonlinear_field(&y)?));
    traj.tangent_norms.push(cl.q_norm_flat(&cl.field(&y)?));
    traj.times.push(t);
    traj.states.push(state);
    traj.energies.push(energy);
    Ok(())
}

/// Advances `y0` to `t_end`, recording every `record_every` steps and the
/// final state.
pub fn simulate<T: Real>(cl: &ClosedLoop<T>, y0: &StateVector<T>, settings: &IntegratorSettings<T>) -> Result<Trajectory<T>> {
    settings.validate()?;
    let stepper = MidpointStepper::from_settings(cl, settings)?;
    let steps = settings.steps();
    let e0 = cl.eval_h(y0)?;
    let allowed = settings.energy_tol * e0.total;
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        energies: Vec::new(),
        hdots: Vec::new(),
        nonlinearity_norms: Vec::new(),
        tangent_norms: Vec::new(),
        max_energy_increase: T::zero(),
        flagged: false,
        steps,
        newton_iterations: 0,
    };
    record(&mut traj, cl, T::zero(), y0.clone(), e0)?;
    let mut y = y0.to_flat();
    let mut h_prev = e0.total;
    for n in 1..=steps {
        let t = settings.dt * T::from_usize_lossy(n);
        let at = |e: Error| Error::AtTime { time: t.as_f64(), source: Box::new(e) };
        let (next, its) = stepper.step_flat(&y).map_err(at)?;
        traj.newton_iterations += its;
        let state = StateVector::from_flat(cl.layout(), &next)?;
        let energy = cl.eval_h(&state).map_err(at)?;
        let increase = energy.total - h_prev;
        if increase > traj.max_energy_increase {
            traj.max_energy_increase = increase;
        }
        if increase > allowed {
            traj.flagged = true;
            if settings.strict_energy {
                return Err(at(Error::StepRejected { increase: increase.as_f64(), allowed: allowed.as_f64() }));
            }
        }
        if n % settings.record_every == 0 || n == steps {
            record(&mut traj, cl, t, state, energy).map_err(at)?;
        }
        h_prev = energy.total;
        y = next;
    }
    Ok(traj)
}

/// Residual of the time-differentiated system along a densely recorded run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TangentResidual<T> {
    /// `max_n ‖ẇ_n - (ℒ w_n + 𝒩'(y_n) w_n)‖_Q` with `w = 𝒜 y`.
    pub max_residual: T,
    /// `max_n ‖w_n‖_Q`
    pub max_tangent_norm: T,
    /// Ratio of the two (0 when both vanish).
    pub relative: T,
}

/// Compares the centered difference of `w = 𝒜 y` against the tangent
/// right-hand side built from the analytic Jacobians.
pub fn tangent_residual<T: Real>(cl: &ClosedLoop<T>, traj: &Trajectory<T>) -> Result<TangentResidual<T>> {
    if traj.len() < 3 {
        return Err(Error::InsufficientResolution { needed: 3, found: traj.len() });
    }
    let w: Vec<StateVector<T>> = traj.states.iter().map(|s| cl.apply_generator(s)).collect::<Result<_>>()?;
    let mut max_residual = T::zero();
    let mut max_tangent_norm = T::zero();
    for wn in &w {
        max_tangent_norm = max_tangent_norm.max(cl.q_norm(wn));
    }
    for n in 1..traj.len() - 1 {
        let span = traj.times[n + 1] - traj.times[n - 1];
        let wdot = (w[n + 1].to_flat() - w[n - 1].to_flat()) / span;
        let rhs = cl.apply_linear_part(&w[n])?.to_flat() + cl.apply_nonlinear_tangent(&traj.states[n], &w[n])?.to_flat();
        max_residual = max_residual.max(cl.q_norm_flat(&(wdot - rhs)));
    }
    let relative = if max_tangent_norm > T::zero() { max_residual / max_tangent_norm } else { T::zero() };
    Ok(TangentResidual { max_residual, max_tangent_norm, relative })
}

/// Smallest positive root of `1 + cos β cosh β = 0` (clamped-free beam).
pub fn clamped_free_root() -> f64 {
    let f = |b: f64| 1.0 + b.cos() * b.cosh();
    let (mut lo, mut hi) = (1.0f64, 3.0f64);
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Initial data: interpolant of the first clamped-free mode scaled to
/// tip deflection `tip_fraction · L`, zero velocity and block states.
pub fn first_mode_state<T: Real>(cl: &ClosedLoop<T>, tip_fraction: T) -> StateVector<T> {
    let l = cl.sys.beam.length.as_f64();
    let beta = clamped_free_root() / l;
    let bl = beta * l;
    let sigma = (bl.cosh() + bl.cos()) / (bl.sinh() + bl.sin());
    let phi = |x: f64| (beta * x).cosh() - (beta * x).cos() - sigma * ((beta * x).sinh() - (beta * x).sin());
    let dphi = |x: f64| beta * ((beta * x).sinh() + (beta * x).sin() - sigma * ((beta * x).cosh() - (beta * x).cos()));
    let scale = tip_fraction.as_f64() * l / phi(l);
    let mut s = cl.zero_state();
    s.u_dofs = cl
        .sys
        .interpolate(|x: T| T::lit(scale * phi(x.as_f64())), |x: T| T::lit(scale * dphi(x.as_f64())));
    s
}
