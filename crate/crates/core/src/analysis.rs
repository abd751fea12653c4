//! Linear-operator and trajectory diagnostics.

use std::io::{self, Write};

use nalgebra::{Cholesky, DMatrix, Dyn, Schur, SymmetricEigen};
use serde::Serialize;

use crate::discretization::{assemble, build_mesh, DiscreteSystem};
use crate::dynamics::ClosedLoop;
use crate::error::{Error, Result};
use crate::integrator::{clamped_free_root, format_value, Trajectory};
use crate::model::{BeamParams, ClosedLoopConfig, SpringDamperLaw};
use crate::registry::{builtin_block, builtin_law, BlockParams};
use crate::scalar::Real;

/// Eigenvalues with real part above this are reported unstable.
pub const UNSTABLE_TOL: f64 = 1e-8;

/// Dense matrix `G` with `G y = ℒ y`.
pub fn assemble_linear_matrix<T: Real>(cl: &ClosedLoop<T>) -> DMatrix<T> {
    cl.linear_matrix()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    /// `(re, im)`, sorted by real part, descending.
    pub eigenvalues: Vec<(f64, f64)>,
    pub max_real_part: f64,
    pub n_unstable: usize,
}

impl SpectrumReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "re,im")?;
        for (re, im) in &self.eigenvalues {
            writeln!(w, "{},{}", format_value(*re), format_value(*im))?;
        }
        Ok(())
    }

    /// Largest modulus among the eigenvalues.
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().map(|(re, im)| re.hypot(*im)).fold(0.0, f64::max)
    }
}

/// Eigenvalues of `G`, computed on the `Q`-orthonormal representation
/// `Lᵀ G L⁻ᵀ` (`Q = L Lᵀ`) where the symmetric part is the dissipation.
pub fn spectrum<T: Real>(g: &DMatrix<T>, q: &DMatrix<T>) -> Result<SpectrumReport> {
    if !g.is_square() || g.shape() != q.shape() {
        return Err(Error::DimensionMismatch {
            context: "spectrum",
            expected: g.nrows(),
            found: q.nrows(),
        });
    }
    let chol = Cholesky::new(q.clone()).ok_or(Error::NotPositiveDefinite("Q"))?;
    let l = chol.l();
    // Lᵀ G L⁻ᵀ = (L⁻¹ (Lᵀ G)ᵀ)ᵀ
    let lt_g = l.transpose() * g;
    let inner = l
        .solve_lower_triangular(&lt_g.transpose())
        .ok_or(Error::LinearSolveFailure("Gram factor"))?
        .transpose();
    let schur = Schur::try_new(inner, T::default_epsilon(), 100 * g.nrows().max(10)).ok_or(Error::EigenSolverFailure)?;
    let mut eigenvalues: Vec<(f64, f64)> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re.as_f64(), z.im.as_f64()))
        .collect();
    if eigenvalues.iter().any(|(re, im)| !re.is_finite() || !im.is_finite()) {
        return Err(Error::EigenSolverFailure);
    }
    eigenvalues.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let max_real_part = eigenvalues.first().map_or(f64::NEG_INFINITY, |e| e.0);
    let n_unstable = eigenvalues.iter().filter(|e| e.0 > UNSTABLE_TOL).count();
    Ok(SpectrumReport { eigenvalues, max_real_part, n_unstable })
}

/// `‖GᵀQ + QG‖_F / ‖QG‖_F`; zero exactly when `G` is `Q`-skew.
pub fn skew_defect<T: Real>(g: &DMatrix<T>, q: &DMatrix<T>) -> T {
    let qg = q * g;
    let sym = &qg + qg.transpose();
    let denom = qg.norm();
    if denom == T::zero() {
        T::zero()
    } else {
        sym.norm() / denom
    }
}

/// Generator and Gram matrix of the beam with tip inertia, linear tip
/// springs `k_rot`, `k_tr` and optional linear dampers; no blocks.
/// State `(u, v)`.
pub fn projected_operator<T: Real>(
    sys: &DiscreteSystem<T>,
    springs: (T, T),
    dampers: (T, T),
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let n = sys.n_dof;
    let elastic = sys.elastic_form(springs.0, springs.1);
    let mut damping = DMatrix::zeros(n, n);
    damping[(sys.tip_slope_index, sys.tip_slope_index)] = dampers.0;
    damping[(sys.tip_value_index, sys.tip_value_index)] = dampers.1;
    let inertia = sys.inertia();
    let chol = Cholesky::new(inertia.clone()).ok_or(Error::LinearSolveFailure("velocity inertia factorization"))?;
    let stiff = refined_solve(&chol, &inertia, &elastic);
    let damp = refined_solve(&chol, &inertia, &damping);
    let mut g = DMatrix::zeros(2 * n, 2 * n);
    g.view_mut((0, n), (n, n)).fill_with_identity();
    g.view_mut((n, 0), (n, n)).copy_from(&(-stiff));
    g.view_mut((n, n), (n, n)).copy_from(&(-damp));
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    q.view_mut((0, 0), (n, n)).copy_from(&elastic);
    q.view_mut((n, n), (n, n)).copy_from(&inertia);
    Ok((g, q))
}

/// Cholesky solve followed by one step of iterative refinement.
fn refined_solve<T: Real>(chol: &Cholesky<T, Dyn>, a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let x = chol.solve(b);
    let r = b - a * &x;
    x + chol.solve(&r)
}

/// Skew defect of the undamped projected generator with linear tip springs.
pub fn skew_check<T: Real>(sys: &DiscreteSystem<T>, springs: (T, T)) -> Result<T> {
    let (g, q) = projected_operator(sys, springs, (T::zero(), T::zero()))?;
    Ok(skew_defect(&g, &q))
}

/// Closed loop realizing the undamped projected dynamics: zero dampers,
/// linear springs and scalar blocks with zero input gain, so the blocks
/// decouple and stay at rest from zero initial state.
pub fn projected_config<T: Real>(beam: BeamParams<T>, springs: (f64, f64)) -> Result<ClosedLoopConfig<T>> {
    let sd = |k: f64| -> Result<SpringDamperLaw<T>> {
        Ok(SpringDamperLaw::new(builtin_law("zero", &[])?, builtin_law("linear", &[k])?))
    };
    let inert = || builtin_block("linear", &BlockParams::from_rows(&[-1.0], &[0.0], &[1.0])?);
    Ok(ClosedLoopConfig {
        beam,
        sd_rotational: sd(springs.0)?,
        sd_translational: sd(springs.1)?,
        block_rotational: inert()?,
        block_translational: inert()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayReport {
    pub h_initial: f64,
    pub h_final: f64,
    /// `h_final / h_initial`, 0 when both vanish.
    pub ratio: f64,
    /// Trapezoidal `∫‖𝒩 y‖_Q dt` over the whole run.
    pub nonlin_integral_total: f64,
    /// Same over the last quarter of the time span.
    pub nonlin_integral_tail: f64,
    /// `sup ‖𝒜 y‖_Q`
    pub tangent_sup: f64,
    /// Sup over the second half of the time span.
    pub tangent_sup_late: f64,
    /// Sup over the first half of the time span.
    pub tangent_sup_early: f64,
}

fn trapezoid(times: &[f64], values: &[f64], from: f64) -> f64 {
    let mut acc = 0.0;
    for k in 1..times.len() {
        if times[k - 1] >= from {
            acc += 0.5 * (values[k] + values[k - 1]) * (times[k] - times[k - 1]);
        }
    }
    acc
}

pub fn decay_metrics<T: Real>(traj: &Trajectory<T>) -> Result<DecayReport> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let times: Vec<f64> = traj.times.iter().map(|t| t.as_f64()).collect();
    let h: Vec<f64> = traj.energies.iter().map(|e| e.total.as_f64()).collect();
    let nonlin: Vec<f64> = traj.nonlinearity_norms.iter().map(|x| x.as_f64()).collect();
    let tangent: Vec<f64> = traj.tangent_norms.iter().map(|x| x.as_f64()).collect();
    let t0 = times[0];
    let t1 = times[times.len() - 1];
    let h_initial = h[0];
    let h_final = h[h.len() - 1];
    let ratio = if h_initial == 0.0 { 0.0 } else { h_final / h_initial };
    let mid = t0 + 0.5 * (t1 - t0);
    let sup_where = |pred: &dyn Fn(f64) -> bool| {
        times.iter().zip(&tangent).filter(|(t, _)| pred(**t)).map(|(_, x)| *x).fold(0.0, f64::max)
    };
    Ok(DecayReport {
        h_initial,
        h_final,
        ratio,
        nonlin_integral_total: trapezoid(&times, &nonlin, t0),
        nonlin_integral_tail: trapezoid(&times, &nonlin, t0 + 0.75 * (t1 - t0)),
        tangent_sup: sup_where(&|_| true),
        tangent_sup_late: sup_where(&|t| t >= mid),
        tangent_sup_early: sup_where(&|t| t <= mid),
    })
}

/// Least-squares slopes of `ln H(t)` over `windows` equal time windows.
/// Records with `H <= 0` are skipped; a window with fewer than two usable
/// records yields `NaN`.
pub fn log_energy_slopes<T: Real>(traj: &Trajectory<T>, windows: usize) -> Result<Vec<f64>> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let t0 = traj.times[0].as_f64();
    let t1 = traj.times[traj.len() - 1].as_f64();
    let width = (t1 - t0) / windows as f64;
    let mut out = Vec::with_capacity(windows);
    for w in 0..windows {
        let (a, b) = (t0 + w as f64 * width, t0 + (w + 1) as f64 * width);
        let pts: Vec<(f64, f64)> = traj
            .times
            .iter()
            .zip(&traj.energies)
            .map(|(t, e)| (t.as_f64(), e.total.as_f64()))
            .filter(|&(t, h)| t >= a && (t < b || (w + 1 == windows && t <= b)) && h > 0.0)
            .map(|(t, h)| (t, h.ln()))
            .collect();
        out.push(fit_slope(&pts));
    }
    Ok(out)
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    sxy / sxx
}

/// Fundamental angular frequency of the clamped-free beam without tip
/// bodies or feedback: `ω² = 1/λ_max` of `Λ⁻¹ ρ L⁻¹ M L⁻ᵀ` with
/// `K = L Lᵀ`, which avoids subtracting large numbers.
pub fn bare_fundamental_frequency<T: Real>(sys: &DiscreteSystem<T>) -> Result<T> {
    let chol = Cholesky::new(sys.stiffness.clone()).ok_or(Error::NotPositiveDefinite("stiffness"))?;
    let l = chol.l();
    let half = l.solve_lower_triangular(&sys.mass).ok_or(Error::LinearSolveFailure("stiffness factor"))?;
    let reduced = l
        .solve_lower_triangular(&half.transpose())
        .ok_or(Error::LinearSolveFailure("stiffness factor"))?;
    let reduced = (&reduced + reduced.transpose()) * T::half();
    let lambda = SymmetricEigen::new(reduced).eigenvalues.max();
    Ok((sys.beam.lambda_rigidity / (sys.beam.rho * lambda)).sqrt())
}

/// `β₁² √(Λ/ρ)` with `β₁ L` the first root of `1 + cos cosh = 0`.
pub fn cantilever_frequency<T: Real>(beam: &BeamParams<T>) -> f64 {
    let beta = clamped_free_root() / beam.length.as_f64();
    beta * beta * (beam.lambda_rigidity / beam.rho).as_f64().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyConvergence {
    pub elements: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub relative_errors: Vec<f64>,
    /// `log2` of successive error ratios (meshes doubling).
    pub observed_orders: Vec<f64>,
    pub reference: f64,
}

/// Fundamental frequency on each mesh against the analytic cantilever value.
pub fn frequency_convergence<T: Real>(beam: &BeamParams<T>, elements: &[usize]) -> Result<FrequencyConvergence> {
    let reference = cantilever_frequency(beam);
    let mut frequencies = Vec::new();
    let mut relative_errors = Vec::new();
    for &n in elements {
        let sys = assemble(beam, &build_mesh(beam, n)?, true);
        let w = bare_fundamental_frequency(&sys)?.as_f64();
        frequencies.push(w);
        relative_errors.push((w - reference).abs() / reference);
    }
    let observed_orders = relative_errors
        .windows(2)
        .zip(elements.windows(2))
        .map(|(e, n)| (e[0] / e[1]).ln() / (n[1] as f64 / n[0] as f64).ln())
        .collect();
    Ok(FrequencyConvergence { elements: elements.to_vec(), frequencies, relative_errors, observed_orders, reference })
}
