//! Physical parameters, boundary feedback laws and their linearizations.
//!
//! A closed loop consists of the beam with tip payload, two static
//! spring-damper laws (rotational and translational) and two finite
//! dimensional passive blocks driven by the tip angular and translational
//! velocities. Derivatives of every map are supplied by whoever builds the
//! law or block and are only checked against centered differences.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Condition estimate above which `Hess V(0)` is treated as singular.
pub const HESSIAN_CONDITION_LIMIT: f64 = 1e12;

/// Beam and tip payload constants. All fields are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamParams<T> {
    /// Mass per unit length.
    pub rho: T,
    /// Flexural rigidity.
    pub lambda_rigidity: T,
    pub length: T,
    /// Mass moment of inertia of the tip body.
    pub tip_inertia: T,
    pub tip_mass: T,
}

impl<T: Real> BeamParams<T> {
    pub fn new(rho: T, lambda_rigidity: T, length: T, tip_inertia: T, tip_mass: T) -> Result<Self> {
        let fields = [
            ("rho", rho),
            ("lambda_rigidity", lambda_rigidity),
            ("length", length),
            ("tip_inertia", tip_inertia),
            ("tip_mass", tip_mass),
        ];
        for (name, value) in fields {
            if !(value > T::zero()) || !value.is_finite() {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {value}")));
            }
        }
        Ok(Self {
            rho,
            lambda_rigidity,
            length,
            tip_inertia,
            tip_mass,
        })
    }

    /// Unit beam (`rho = Lambda = L = 1`) with the given tip payload.
    pub fn unit_beam(tip_inertia: T, tip_mass: T) -> Result<Self> {
        Self::new(T::one(), T::one(), T::one(), tip_inertia, tip_mass)
    }
}

pub type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;
pub type VecMap<T> = Arc<dyn Fn(&DVector<T>) -> DVector<T> + Send + Sync>;
pub type ScalarField<T> = Arc<dyn Fn(&DVector<T>) -> T + Send + Sync>;
pub type MatMap<T> = Arc<dyn Fn(&DVector<T>) -> DMatrix<T> + Send + Sync>;

/// Relative tolerance used when comparing supplied derivatives to centered
/// differences.
pub(crate) fn derivative_tolerance<T: Real>() -> T {
    let eps = T::default_epsilon();
    let scaled = T::lit(1e3) * eps.powf(T::lit(2.0 / 3.0));
    T::lit(1e-6).max(scaled)
}

fn difference_step<T: Real>(at: T) -> T {
    T::default_epsilon().powf(T::lit(1.0 / 3.0)) * (T::one() + at.abs())
}

/// A C² scalar map together with its first two derivatives.
#[derive(Clone)]
pub struct ScalarLaw<T> {
    name: String,
    eval: ScalarFn<T>,
    deriv: ScalarFn<T>,
    deriv2: ScalarFn<T>,
}

impl<T> fmt::Debug for ScalarLaw<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarLaw").field("name", &self.name).finish()
    }
}

impl<T: Real> ScalarLaw<T> {
    /// Builds a law and checks `deriv` and `deriv2` against centered
    /// differences on a fixed set of points in `[-2, 2]`.
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(T) -> T + Send + Sync + 'static,
        deriv: impl Fn(T) -> T + Send + Sync + 'static,
        deriv2: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Result<Self> {
        let law = Self {
            name: name.into(),
            eval: Arc::new(eval),
            deriv: Arc::new(deriv),
            deriv2: Arc::new(deriv2),
        };
        let probe: Vec<T> = (-8..=8).map(|k| T::lit(k as f64 * 0.25 + 0.0137)).collect();
        if let Some((s, err)) = law.derivative_mismatch(&probe) {
            return Err(Error::invalid(
                "law derivative",
                format!("`{}`: supplied derivative disagrees with centered difference at s = {s} (error {err})", law.name),
            ));
        }
        Ok(law)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, s: T) -> T {
        (self.eval)(s)
    }

    #[inline]
    pub fn deriv(&self, s: T) -> T {
        (self.deriv)(s)
    }

    #[inline]
    pub fn deriv2(&self, s: T) -> T {
        (self.deriv2)(s)
    }

    /// First sample where either derivative misses its centered difference by
    /// more than `tol * (1 + |f'|)`; returns the point and the scaled error.
    pub fn derivative_mismatch(&self, points: &[T]) -> Option<(T, T)> {
        let tol = derivative_tolerance::<T>();
        let two = T::lit(2.0);
        for &s in points {
            let h = difference_step(s);
            let fd1 = (self.eval(s + h) - self.eval(s - h)) / (two * h);
            let d1 = self.deriv(s);
            let e1 = (d1 - fd1).abs() / (T::one() + d1.abs());
            let fd2 = (self.deriv(s + h) - self.deriv(s - h)) / (two * h);
            let d2 = self.deriv2(s);
            let e2 = (d2 - fd2).abs() / (T::one() + d2.abs());
            let e = e1.max(e2);
            if e > tol {
                return Some((s, e));
            }
        }
        None
    }
}

/// Rotational or translational tip spring-damper pair `(d, k)`.
#[derive(Debug, Clone)]
pub struct SpringDamperLaw<T> {
    pub damper: ScalarLaw<T>,
    pub spring: ScalarLaw<T>,
    /// `d'(0)`
    pub damper_slope: T,
    /// `k'(0)`
    pub spring_slope: T,
}

impl<T: Real> SpringDamperLaw<T> {
    pub fn new(damper: ScalarLaw<T>, spring: ScalarLaw<T>) -> Self {
        let damper_slope = damper.deriv(T::zero());
        let spring_slope = spring.deriv(T::zero());
        Self {
            damper,
            spring,
            damper_slope,
            spring_slope,
        }
    }

    /// Damper remainder `d(s) - D s`.
    #[inline]
    pub fn damper_remainder(&self, s: T) -> T {
        self.damper.eval(s) - self.damper_slope * s
    }

    /// Spring remainder `k(s) - K s`.
    #[inline]
    pub fn spring_remainder(&self, s: T) -> T {
        self.spring.eval(s) - self.spring_slope * s
    }

    /// Spring potential `V_k(s) = ∫₀ˢ k`.
    pub fn spring_potential(&self, s: T) -> T {
        crate::quadrature::adaptive_simpson(|x| self.spring.eval(x), T::zero(), s, T::lit(1e-12))
    }

    pub fn is_linear(&self) -> bool {
        let probe = [-1.7, -0.6, 0.3, 1.1, 2.4].map(T::lit);
        let tol = T::default_epsilon() * T::lit(64.0);
        probe.iter().all(|&s| {
            self.damper_remainder(s).abs() <= tol * (T::one() + s.abs())
                && self.spring_remainder(s).abs() <= tol * (T::one() + s.abs())
        })
    }
}

/// `(D, K) = (d'(0), k'(0))`.
pub fn linearize_spring_damper<T: Real>(law: &SpringDamperLaw<T>) -> (T, T) {
    (law.damper.deriv(T::zero()), law.spring.deriv(T::zero()))
}

/// The maps that define a passive block, supplied together with their
/// derivatives.
#[derive(Clone)]
pub struct BlockMaps<T> {
    pub drift: VecMap<T>,
    pub input_gain: VecMap<T>,
    pub output: ScalarField<T>,
    pub storage: ScalarField<T>,
    pub storage_grad: VecMap<T>,
    pub storage_hess: MatMap<T>,
    pub drift_jac: MatMap<T>,
    pub input_jac: MatMap<T>,
    pub output_grad: VecMap<T>,
    pub output_hess: MatMap<T>,
}

/// Finite-dimensional block `ż = a(z) + b(z) w`, `y = c(z)` with storage `V`.
#[derive(Clone)]
pub struct PassiveBlock<T> {
    name: String,
    dim: usize,
    maps: BlockMaps<T>,
}

impl<T> fmt::Debug for PassiveBlock<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PassiveBlock")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl<T: Real> PassiveBlock<T> {
    /// Checks `a(0) = 0`, `c(0) = 0`, `V(0) = 0` exactly and validates every
    /// supplied derivative on a deterministic set of probe points.
    pub fn new(name: impl Into<String>, dim: usize, maps: BlockMaps<T>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "block state dimension must be >= 1"));
        }
        let block = Self {
            name: name.into(),
            dim,
            maps,
        };
        let origin = DVector::zeros(dim);
        let a0 = block.drift(&origin);
        if a0.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "drift",
                expected: dim,
                found: a0.len(),
            });
        }
        if a0.iter().any(|x| *x != T::zero()) {
            return Err(Error::invalid("drift", "a(0) must vanish"));
        }
        if block.output(&origin) != T::zero() {
            return Err(Error::invalid("output", "c(0) must vanish"));
        }
        if block.storage(&origin) != T::zero() {
            return Err(Error::invalid("storage", "V(0) must vanish"));
        }
        let probes = probe_points::<T>(dim);
        if let Some((which, _)) = block.derivative_mismatch(&probes) {
            return Err(Error::invalid(
                "block derivative",
                format!("`{}`: supplied {which} disagrees with centered differences", block.name),
            ));
        }
        Ok(block)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn drift(&self, z: &DVector<T>) -> DVector<T> {
        (self.maps.drift)(z)
    }
    #[inline]
    pub fn input_gain(&self, z: &DVector<T>) -> DVector<T> {
        (self.maps.input_gain)(z)
    }
    #[inline]
    pub fn output(&self, z: &DVector<T>) -> T {
        (self.maps.output)(z)
    }
    #[inline]
    pub fn storage(&self, z: &DVector<T>) -> T {
        (self.maps.storage)(z)
    }
    #[inline]
    pub fn storage_grad(&self, z: &DVector<T>) -> DVector<T> {
        (self.maps.storage_grad)(z)
    }
    #[inline]
    pub fn storage_hess(&self, z: &DVector<T>) -> DMatrix<T> {
        (self.maps.storage_hess)(z)
    }
    #[inline]
    pub fn drift_jac(&self, z: &DVector<T>) -> DMatrix<T> {
        (self.maps.drift_jac)(z)
    }
    #[inline]
    pub fn input_jac(&self, z: &DVector<T>) -> DMatrix<T> {
        (self.maps.input_jac)(z)
    }
    #[inline]
    pub fn output_grad(&self, z: &DVector<T>) -> DVector<T> {
        (self.maps.output_grad)(z)
    }
    #[inline]
    pub fn output_hess(&self, z: &DVector<T>) -> DMatrix<T> {
        (self.maps.output_hess)(z)
    }

    /// Name of the first supplied derivative that disagrees with a centered
    /// difference at one of `points`, with the offending point.
    pub fn derivative_mismatch(&self, points: &[DVector<T>]) -> Option<(&'static str, DVector<T>)> {
        let tol = derivative_tolerance::<T>();
        for z in points {
            let checks: [(&'static str, DMatrix<T>, DMatrix<T>); 6] = [
                ("storage_grad", as_column(self.storage_grad(z)), fd_jacobian(|x| DVector::from_element(1, self.storage(x)), z).transpose()),
                ("storage_hess", self.storage_hess(z), fd_jacobian(|x| self.storage_grad(x), z)),
                ("drift_jac", self.drift_jac(z), fd_jacobian(|x| self.drift(x), z)),
                ("input_jac", self.input_jac(z), fd_jacobian(|x| self.input_gain(x), z)),
                ("output_grad", as_column(self.output_grad(z)), fd_jacobian(|x| DVector::from_element(1, self.output(x)), z).transpose()),
                ("output_hess", self.output_hess(z), fd_jacobian(|x| self.output_grad(x), z)),
            ];
            for (name, supplied, approx) in checks {
                if supplied.shape() != approx.shape() {
                    return Some((name, z.clone()));
                }
                let scale = T::one() + supplied.amax();
                if (&supplied - &approx).amax() > tol * scale {
                    return Some((name, z.clone()));
                }
            }
        }
        None
    }
}

fn as_column<T: Real>(v: DVector<T>) -> DMatrix<T> {
    let n = v.len();
    DMatrix::from_column_slice(n, 1, v.as_slice())
}

/// Centered-difference Jacobian of `f` at `z`.
pub(crate) fn fd_jacobian<T: Real>(f: impl Fn(&DVector<T>) -> DVector<T>, z: &DVector<T>) -> DMatrix<T> {
    let n = z.len();
    let m = f(z).len();
    let mut jac = DMatrix::zeros(m, n);
    let two = T::lit(2.0);
    for j in 0..n {
        let h = difference_step(z[j]);
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[j] += h;
        zm[j] -= h;
        let col = (f(&zp) - f(&zm)) / (two * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Deterministic probe points used to validate derivatives at construction.
fn probe_points<T: Real>(dim: usize) -> Vec<DVector<T>> {
    let mut pts = Vec::new();
    for k in 0..6 {
        let z = DVector::from_fn(dim, |i, _| {
            let phase = (k * 7 + i * 3) as f64;
            T::lit(1.3 * (0.9 * phase + 0.4).sin() * (1.0 + 0.25 * k as f64))
        });
        pts.push(z);
    }
    pts
}

/// Constant matrices of the linearized block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLinearization<T: Real> {
    /// `J_a(0)`
    pub a: DMatrix<T>,
    /// `b(0)`
    pub b: DVector<T>,
    /// `∇c(0)`
    pub c: DVector<T>,
    /// Symmetrized `Hess V(0)`, positive definite.
    pub p: DMatrix<T>,
}

impl<T: Real> BlockLinearization<T> {
    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `P B - C`, zero for blocks satisfying the KYP output identity.
    pub fn kyp_defect(&self) -> DVector<T> {
        &self.p * &self.b - &self.c
    }

    /// Eigenvalues of the symmetric part of `P A`, ascending.
    pub fn sym_pa_eigenvalues(&self) -> Vec<T> {
        sym_eigenvalues(&symmetrize(&(&self.p * &self.a)))
    }
}

pub(crate) fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::half()
}

/// Ascending eigenvalues of a symmetric matrix.
pub(crate) fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let mut ev: Vec<T> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    ev
}

/// Extracts `A = J_a(0)`, `B = b(0)`, `C = ∇c(0)` and `P = sym Hess V(0)`.
pub fn linearize_block<T: Real>(block: &PassiveBlock<T>) -> Result<BlockLinearization<T>> {
    let origin = DVector::zeros(block.dim());
    let p = symmetrize(&block.storage_hess(&origin));
    let ev = sym_eigenvalues(&p);
    let lo = ev[0];
    let hi = ev[ev.len() - 1];
    let big = hi.abs().max(lo.abs());
    let small = ev.iter().map(|e| e.abs()).fold(big, |a, b| a.min(b));
    let condition = if small > T::zero() {
        (big / small).as_f64()
    } else {
        f64::INFINITY
    };
    if condition > HESSIAN_CONDITION_LIMIT {
        return Err(Error::SingularHessian { condition });
    }
    if !(lo > T::zero()) {
        return Err(Error::NotPositiveDefinite("P = Hess V(0)"));
    }
    Ok(BlockLinearization {
        a: block.drift_jac(&origin),
        b: block.input_gain(&origin),
        c: block.output_grad(&origin),
        p,
    })
}

/// Full closed loop: beam, two spring-damper laws and two passive blocks.
/// Index 1 acts on the tip slope, index 2 on the tip deflection.
#[derive(Debug, Clone)]
pub struct ClosedLoopConfig<T> {
    pub beam: BeamParams<T>,
    pub sd_rotational: SpringDamperLaw<T>,
    pub sd_translational: SpringDamperLaw<T>,
    pub block_rotational: PassiveBlock<T>,
    pub block_translational: PassiveBlock<T>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{builtin_law, BlockParams, builtin_block};

    #[test]
    fn beam_params_reject_nonpositive() {
        assert!(BeamParams::new(1.0, 1.0, 1.0, 0.1, 0.1).is_ok());
        assert!(BeamParams::new(0.0, 1.0, 1.0, 0.1, 0.1).is_err());
        assert!(BeamParams::new(1.0, -1.0, 1.0, 0.1, 0.1).is_err());
        assert!(BeamParams::new(1.0, 1.0, 1.0, 0.0, 0.1).is_err());
        assert!(BeamParams::new(1.0, 1.0, f64::NAN, 0.1, 0.1).is_err());
    }

    #[test]
    fn wrong_derivative_rejected() {
        let bad = ScalarLaw::new("bad", |s: f64| s * s, |s| s, |_| 1.0);
        assert!(bad.is_err());
    }

    #[test]
    fn linearize_linear_and_cubic_laws() {
        let lin = SpringDamperLaw::new(builtin_law("linear", &[1.0]).unwrap(), builtin_law("linear", &[1.0]).unwrap());
        assert_eq!(linearize_spring_damper(&lin), (1.0, 1.0));
        let cub = SpringDamperLaw::new(
            builtin_law("cubic", &[1.0, 1.0]).unwrap(),
            builtin_law("cubic", &[1.0, 1.0]).unwrap(),
        );
        assert_eq!(linearize_spring_damper(&cub), (1.0, 1.0));
    }

    #[test]
    fn linearize_tanh_damper() {
        let law = SpringDamperLaw::new(
            builtin_law::<f64>("tanh", &[1.0, 2.0]).unwrap(),
            builtin_law("linear", &[1.0]).unwrap(),
        );
        let (d, k) = linearize_spring_damper(&law);
        let h = 1e-6;
        let fd = (law.damper.eval(h) - law.damper.eval(-h)) / (2.0 * h);
        assert!((d - 2.0).abs() < 1e-15);
        assert!((fd - 2.0).abs() < 1e-8);
        assert_eq!(k, 1.0);
    }

    #[test]
    fn spring_remainder_is_quadratic() {
        let law = SpringDamperLaw::new(
            builtin_law::<f64>("tanh", &[1.0, 2.0]).unwrap(),
            builtin_law("cubic", &[1.0, 1.0]).unwrap(),
        );
        for s in [1e-1, 1e-2, 1e-3, 1e-4] {
            assert!(law.spring_remainder(s).abs() / (s * s) <= 1.0);
            assert!(law.damper_remainder(s).abs() / (s * s) <= 8.0);
        }
    }

    #[test]
    fn scalar_cubic_block_linearization() {
        let block = crate::registry::cubic_scalar_block::<f64>(1.0).unwrap();
        let lin = linearize_block(&block).unwrap();
        assert_eq!(lin.a[(0, 0)], -1.0);
        assert_eq!(lin.b[0], 1.0);
        assert_eq!(lin.c[0], 1.0);
        assert_eq!(lin.p[(0, 0)], 1.0);
        assert_eq!(lin.kyp_defect()[0], 0.0);
    }

    #[test]
    fn planar_block_linearization() {
        let params = BlockParams::<f64>::planar_default();
        for name in ["linear", "cubic-drift"] {
            let block = builtin_block(name, &params).unwrap();
            let lin = linearize_block(&block).unwrap();
            assert_eq!(lin.a, DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, -1.0, -1.0]));
            assert_eq!(lin.b, DVector::from_vec(vec![0.0, 1.0]));
            assert_eq!(lin.c, DVector::from_vec(vec![0.0, 1.0]));
            assert_eq!(lin.p, DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn singular_hessian_detected() {
        let maps = BlockMaps::<f64> {
            drift: Arc::new(|z| -z.clone()),
            input_gain: Arc::new(|z| DVector::from_element(z.len(), 1.0)),
            output: Arc::new(|z| z[0].powi(3)),
            storage: Arc::new(|z| z[0].powi(4) / 4.0),
            storage_grad: Arc::new(|z| DVector::from_element(1, z[0].powi(3))),
            storage_hess: Arc::new(|z| DMatrix::from_element(1, 1, 3.0 * z[0] * z[0])),
            drift_jac: Arc::new(|_| DMatrix::from_element(1, 1, -1.0)),
            input_jac: Arc::new(|_| DMatrix::zeros(1, 1)),
            output_grad: Arc::new(|z| DVector::from_element(1, 3.0 * z[0] * z[0])),
            output_hess: Arc::new(|z| DMatrix::from_element(1, 1, 6.0 * z[0])),
        };
        let block = PassiveBlock::new("quartic", 1, maps).unwrap();
        assert!(matches!(linearize_block(&block), Err(Error::SingularHessian { .. })));
    }
}
