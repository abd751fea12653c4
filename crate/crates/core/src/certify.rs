//! Sampled certification of the standing assumptions on the feedback laws
//! and passive blocks. Reports name the failing check and a point that
//! reproduces the violation.
//!
//! Sample sets are prefix-stable: for a fixed seed, a larger sample count
//! only appends points, so a failed check cannot pass with more samples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{linearize_block, sym_eigenvalues, symmetrize, PassiveBlock, SpringDamperLaw};
use crate::quadrature::composite_simpson;
use crate::scalar::Real;

/// Margin for strict inequalities.
pub const STRICT_TOL: f64 = 1e-9;
/// Points closer to the origin than this fraction of the radius are
/// skipped by strict checks.
pub const ORIGIN_EXCLUSION: f64 = 1e-3;
/// Simpson nodes per spring-potential evaluation.
pub const POTENTIAL_NODES: usize = 129;
/// Largest accepted condition estimate of `A`.
pub const DRIFT_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst sample point; always present on failure.
    pub witness: Option<Vec<f64>>,
    /// Value of the checked quantity at the witness (or the single
    /// evaluated value for checks at the origin).
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertReport {
    pub passed: bool,
    /// Sorted by name.
    pub checks: Vec<Check>,
    pub sample_radius: f64,
    pub sample_count: usize,
    pub seed: u64,
    /// Eigenvalues of `sym(P A)` for blocks, ascending.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sym_pa_eigenvalues: Option<Vec<f64>>,
    /// Radial growth is only checked on the sphere of the sample radius.
    pub note: String,
}

impl CertReport {
    fn new(mut checks: Vec<Check>, radius: f64, samples: usize, seed: u64, note: &str) -> Self {
        checks.sort_by(|a, b| a.name.cmp(&b.name));
        Self {
            passed: checks.iter().all(|c| c.passed),
            checks,
            sample_radius: radius,
            sample_count: samples,
            seed,
            sym_pa_eigenvalues: None,
            note: note.to_string(),
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Tracks the sample with the smallest margin for a `margin >= 0` check.
struct Worst {
    name: &'static str,
    margin: f64,
    measured: f64,
    point: Option<Vec<f64>>,
}

impl Worst {
    fn new(name: &'static str) -> Self {
        Self { name, margin: f64::INFINITY, measured: f64::NAN, point: None }
    }

    fn update(&mut self, margin: f64, measured: f64, point: &[f64]) {
        // NaN margins count as violations
        let margin = if margin.is_nan() { f64::NEG_INFINITY } else { margin };
        if margin < self.margin {
            self.margin = margin;
            self.measured = measured;
            self.point = Some(point.to_vec());
        }
    }

    fn finish(self) -> Check {
        let passed = self.margin >= 0.0;
        Check {
            name: self.name.to_string(),
            passed,
            witness: if passed { None } else { self.point },
            measured: self.measured,
        }
    }
}

fn single(name: &str, passed: bool, measured: f64, witness: Vec<f64>) -> Check {
    Check { name: name.to_string(), passed, witness: if passed { None } else { Some(witness) }, measured }
}

/// Radical inverse of `k` in `base`.
fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut x = 0.0;
    let mut f = inv;
    while k > 0 {
        x += (k % base) as f64 * f;
        k /= base;
        f *= inv;
    }
    x
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn halton(k: u64, dim: usize) -> Vec<f64> {
    (0..dim).map(|d| radical_inverse(k, PRIMES[d % PRIMES.len()] + 40 * (d / PRIMES.len()) as u64)).collect()
}

/// Scalar samples in `[-R, R]`: both endpoints, then a van der Corput
/// point and a seeded uniform point alternately.
pub fn scalar_samples(radius: f64, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![radius, -radius];
    let mut k = 1u64;
    while out.len() < count {
        if out.len() % 2 == 0 {
            out.push(radius * (2.0 * radical_inverse(k, 2) - 1.0));
            k += 1;
        } else {
            out.push(rng.random_range(-radius..=radius));
        }
    }
    out.truncate(count);
    out
}

/// Points in the closed ball of radius `R` in `dim` dimensions: `±R eᵢ`,
/// then Halton and seeded uniform points alternately (uniform points by
/// rejection from the cube).
pub fn ball_samples(dim: usize, radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..dim {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[i] = sign * radius;
            out.push(e);
        }
    }
    let mut k = 1u64;
    while out.len() < count {
        if out.len() % 2 == 0 {
            // direction from the first dim coordinates, radius from the last
            let h = halton(k, dim + 1);
            k += 1;
            let dir: Vec<f64> = h[..dim].iter().map(|x| 2.0 * x - 1.0).collect();
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let r = radius * h[dim].powf(1.0 / dim as f64);
            out.push(dir.iter().map(|x| x / norm * r).collect());
        } else {
            loop {
                let p: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let norm2: f64 = p.iter().map(|x| x * x).sum();
                if norm2 <= 1.0 {
                    out.push(p.iter().map(|x| x * radius).collect());
                    break;
                }
            }
        }
    }
    out.truncate(count);
    out
}

fn validate(radius: f64, samples: usize, minimum: usize) -> Result<()> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid("radius", "must be positive and finite"));
    }
    if samples < minimum {
        return Err(Error::invalid("samples", format!("need at least {minimum}, got {samples}")));
    }
    Ok(())
}

/// Checks the damper and spring hypotheses on `[-R, R]`:
/// `d(0) = 0`, `d' >= 0`, `d'(0) > 0`, `k(0) = 0`, `k'(0) > 0` and
/// `V_k(s) > 0` for `s != 0`.
pub fn certify_spring_damper<T: Real>(law: &SpringDamperLaw<T>, radius: f64, samples: usize, seed: u64) -> Result<CertReport> {
    validate(radius, samples, 100)?;
    let tol = STRICT_TOL;
    let f = |x: T| x.as_f64();
    let d = &law.damper;
    let k = &law.spring;
    let zero = T::zero();
    let mut checks = vec![
        single("damper_origin", f(d.eval(zero)).abs() <= tol, f(d.eval(zero)), vec![0.0]),
        single("damper_slope_origin", f(d.deriv(zero)) > tol, f(d.deriv(zero)), vec![0.0]),
        single("spring_origin", f(k.eval(zero)).abs() <= tol, f(k.eval(zero)), vec![0.0]),
        single("spring_slope_origin", f(k.deriv(zero)) > tol, f(k.deriv(zero)), vec![0.0]),
    ];
    let mut monotone = Worst::new("damper_monotone");
    let mut potential = Worst::new("spring_potential_positive");
    let mut derivs = Worst::new("derivative_consistency");
    let exclusion = ORIGIN_EXCLUSION * radius;
    for (i, s) in scalar_samples(radius, samples, seed).into_iter().enumerate() {
        let st = T::lit(s);
        let slope = f(d.deriv(st));
        monotone.update(slope + tol, slope, &[s]);
        if i < 32 {
            let mismatch = d.derivative_mismatch(&[st]).or_else(|| k.derivative_mismatch(&[st]));
            let err = mismatch.map_or(0.0, |(_, e)| f(e));
            derivs.update(if mismatch.is_some() { -err } else { 0.0 }, err, &[s]);
        }
        if s.abs() < exclusion {
            continue;
        }
        let v = f(composite_simpson(|x| k.eval(x), zero, st, POTENTIAL_NODES));
        potential.update(v - tol, v, &[s]);
    }
    checks.extend([monotone.finish(), potential.finish(), derivs.finish()]);
    Ok(CertReport::new(checks, radius, samples, seed, "checked on [-R, R] only"))
}

/// Checks a passive block on the ball of radius `R`: `V > 0`, `∇V·a < 0`,
/// `∇V·b = c`, `P = Hess V(0)` positive definite, `A` regular,
/// `zᵀ P A z <= 0`, and `min_{|z| = R} V > h_threshold`.
pub fn certify_block<T: Real>(
    block: &PassiveBlock<T>,
    radius: f64,
    samples: usize,
    h_threshold: f64,
    seed: u64,
) -> Result<CertReport> {
    let n = block.dim();
    validate(radius, samples, 100 * n)?;
    let tol = STRICT_TOL;
    let origin = DVector::<T>::zeros(n);
    let zero_pt = vec![0.0; n];
    let to_t = |p: &[f64]| DVector::from_iterator(n, p.iter().map(|&x| T::lit(x)));
    let mut checks = Vec::new();

    let origin_defect = block
        .drift(&origin)
        .amax()
        .max(block.output(&origin).abs())
        .max(block.storage(&origin).abs())
        .as_f64();
    checks.push(single("origin_equilibrium", origin_defect <= tol, origin_defect, zero_pt.clone()));

    let hess = symmetrize(&block.storage_hess(&origin));
    let p_min = sym_eigenvalues(&hess)[0].as_f64();
    let lin = linearize_block(block);
    checks.push(single("hessian_pd", lin.is_ok() && p_min > tol, p_min, zero_pt.clone()));

    let a0 = block.drift_jac(&origin);
    let cond = condition_estimate(&a0);
    checks.push(single("a_regular", cond <= DRIFT_CONDITION_LIMIT, cond, zero_pt.clone()));

    let pa = &hess * &a0;
    let mut storage = Worst::new("storage_positive");
    let mut dissipation = Worst::new("dissipation");
    let mut kyp = Worst::new("kyp_output");
    let mut sym_pa = Worst::new("sym_pa_nonpositive");
    let mut radial = Worst::new("radial_growth");
    let mut derivs = Worst::new("derivative_consistency");
    let exclusion = ORIGIN_EXCLUSION * radius;
    for (i, p) in ball_samples(n, radius, samples, seed).into_iter().enumerate() {
        let z = to_t(&p);
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        let grad = block.storage_grad(&z);
        let c = block.output(&z).as_f64();
        let defect = (grad.dot(&block.input_gain(&z)).as_f64() - c).abs();
        kyp.update(tol * (1.0 + c.abs()) - defect, defect, &p);
        if i < 32 {
            let mismatch = block.derivative_mismatch(std::slice::from_ref(&z));
            derivs.update(if mismatch.is_some() { -1.0 } else { 0.0 }, if mismatch.is_some() { 1.0 } else { 0.0 }, &p);
        }
        if norm < exclusion {
            continue;
        }
        let quad = (z.transpose() * &pa * &z)[0].as_f64();
        sym_pa.update(tol * norm * norm - quad, quad / (norm * norm), &p);
        let v = block.storage(&z).as_f64();
        storage.update(v - tol, v, &p);
        let rate = grad.dot(&block.drift(&z)).as_f64();
        dissipation.update(-rate - tol, rate, &p);
        // same direction pushed to the sphere
        let s = to_t(&p.iter().map(|x| x / norm * radius).collect::<Vec<_>>());
        let vs = block.storage(&s).as_f64();
        radial.update(vs - h_threshold, vs, &s.iter().map(|x| x.as_f64()).collect::<Vec<_>>());
    }
    checks.extend([storage.finish(), dissipation.finish(), kyp.finish(), sym_pa.finish(), radial.finish(), derivs.finish()]);
    let mut report = CertReport::new(
        checks,
        radius,
        samples,
        seed,
        "radial growth verified up to the sample radius only, never globally",
    );
    report.sym_pa_eigenvalues = Some(sym_eigenvalues(&symmetrize(&pa)).iter().map(|x| x.as_f64()).collect());
    Ok(report)
}

/// Ratio of extreme singular values; infinite for singular matrices.
fn condition_estimate<T: Real>(a: &DMatrix<T>) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.max().as_f64();
    let min = sv.min().as_f64();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{builtin_block, builtin_law, cubic_scalar_block, BlockParams};

    fn law(d: (&str, &[f64]), k: (&str, &[f64])) -> SpringDamperLaw<f64> {
        SpringDamperLaw::new(builtin_law(d.0, d.1).unwrap(), builtin_law(k.0, k.1).unwrap())
    }

    #[test]
    fn samples_are_prefix_stable() {
        let a = scalar_samples(3.0, 50, 7);
        let b = scalar_samples(3.0, 120, 7);
        assert_eq!(&b[..50], &a[..]);
        assert!(b.iter().all(|s| s.abs() <= 3.0));
        let a = ball_samples(3, 2.0, 40, 1);
        let b = ball_samples(3, 2.0, 90, 1);
        assert_eq!(&b[..40], &a[..]);
        assert!(b.iter().all(|p| p.iter().map(|x| x * x).sum::<f64>() <= 4.0 + 1e-12));
        assert_ne!(scalar_samples(1.0, 10, 1), scalar_samples(1.0, 10, 2));
    }

    #[test]
    fn radical_inverse_values() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert!((radical_inverse(5, 3) - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn linear_laws_pass() {
        let r = certify_spring_damper(&law(("linear", &[1.0]), ("linear", &[1.0])), 10.0, 200, 0).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.checks.windows(2).all(|w| w[0].name < w[1].name));
        assert!(r.checks.iter().all(|c| c.witness.is_none()));
    }

    #[test]
    fn sign_flipped_damper_fails() {
        let r = certify_spring_damper(&law(("negative-linear", &[1.0]), ("linear", &[1.0])), 10.0, 200, 0).unwrap();
        assert!(!r.passed);
        let c = r.check("damper_slope_origin").unwrap();
        assert_eq!(c.measured, -1.0);
        let m = r.check("damper_monotone").unwrap();
        assert!(!m.passed);
        assert!(m.measured < 0.0);
        assert!(r.failed().all(|c| c.witness.is_some()));
    }

    #[test]
    fn noncoercive_spring_fails_with_analytic_value() {
        let r = certify_spring_damper(&law(("linear", &[1.0]), ("softening", &[1.0, 1.0])), 2.0, 200, 0).unwrap();
        assert!(!r.passed);
        let c = r.check("spring_potential_positive").unwrap();
        assert!(!c.passed);
        let s = c.witness.as_ref().unwrap()[0];
        assert!(s.abs() > 1.0);
        // s²/2 - s⁴/4 at the endpoints
        assert!((c.measured + 2.0).abs() < 1e-12);
    }

    #[test]
    fn default_laws_pass() {
        for (d, k) in [(("tanh", &[1.0, 2.0][..]), ("cubic", &[1.0, 1.0][..])), (("cubic", &[1.0, 1.0][..]), ("linear", &[2.0][..]))] {
            assert!(certify_spring_damper(&law(d, k), 5.0, 300, 3).unwrap().passed);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let l = law(("linear", &[1.0]), ("linear", &[1.0]));
        assert!(certify_spring_damper(&l, 0.0, 200, 0).is_err());
        assert!(certify_spring_damper(&l, 1.0, 99, 0).is_err());
        let b = cubic_scalar_block::<f64>(1.0).unwrap();
        assert!(certify_block(&b, 1.0, 99, 0.0, 0).is_err());
        let planar = builtin_block::<f64>("linear", &BlockParams::planar_default()).unwrap();
        assert!(certify_block(&planar, 1.0, 150, 0.0, 0).is_err());
    }

    #[test]
    fn scalar_linear_block_passes_strictly() {
        let b = builtin_block::<f64>("linear", &BlockParams::scalar(1.0)).unwrap();
        let r = certify_block(&b, 3.0, 200, 1.0, 0).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.sym_pa_eigenvalues.as_deref(), Some(&[-1.0][..]));
        assert!(r.check("dissipation").unwrap().measured < 0.0);
    }

    #[test]
    fn anti_stable_block_fails() {
        let b = builtin_block::<f64>("anti-stable", &BlockParams::scalar(1.0)).unwrap();
        let r = certify_block(&b, 3.0, 200, 0.0, 0).unwrap();
        assert!(!r.passed);
        let c = r.check("dissipation").unwrap();
        let z = c.witness.as_ref().unwrap()[0];
        assert!(z != 0.0);
        assert!((c.measured - z * z).abs() < 1e-12);
    }

    #[test]
    fn cubic_drift_planar_block_passes() {
        let b = builtin_block::<f64>("cubic-drift", &BlockParams::planar_default()).unwrap();
        let r = certify_block(&b, 5.0, 400, 1.0, 11).unwrap();
        assert!(r.passed, "{r:?}");
        let ev = r.sym_pa_eigenvalues.unwrap();
        assert!((ev[0] + 1.0).abs() < 1e-14 && (ev[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn saturating_block_passes() {
        let b = builtin_block::<f64>("saturating", &BlockParams::planar_default()).unwrap();
        assert!(certify_block(&b, 5.0, 400, 0.5, 2).unwrap().passed);
    }

    #[test]
    fn radial_threshold_reported_up_to_radius() {
        let b = cubic_scalar_block::<f64>(1.0).unwrap();
        let r = certify_block(&b, 2.0, 200, 10.0, 0).unwrap();
        let c = r.check("radial_growth").unwrap();
        assert!(!c.passed);
        assert_eq!(c.measured, 2.0);
        assert!(r.note.contains("never globally"));
    }

    #[test]
    fn reports_are_deterministic() {
        let l = law(("negative-linear", &[1.0]), ("softening", &[1.0, 1.0]));
        assert_eq!(certify_spring_damper(&l, 2.0, 300, 5).unwrap(), certify_spring_damper(&l, 2.0, 300, 5).unwrap());
    }
}
