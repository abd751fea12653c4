//! Named, parameterized laws and blocks addressable from run configurations.
//!
//! Scalar laws (`params` in brackets):
//!
//! | name              | map                       |
//! |-------------------|---------------------------|
//! | `zero`            | `0`                       |
//! | `linear [g]`      | `g s`                     |
//! | `negative-linear [g]` | `-g s`                |
//! | `cubic [g, c]`    | `g s + c s³`              |
//! | `softening [g, c]`| `g s - c s³`              |
//! | `tanh [a, r]`     | `a tanh(r s)`             |
//! | `asymmetric [g, c]` | `g s + c s²/(1 + s²)`   |
//!
//! Blocks take `A`, `B`, `P` and use the output gain `C = P B`:
//!
//! * `linear`: `a = A z`, `b = B`, `c = C·z`, `V = zᵀPz/2`
//! * `cubic-drift`: `a = A z - z |z|²`, otherwise as `linear`
//! * `saturating`: `a = A tanh(z)`, `b = B`, `V = Σ pᵢ ln cosh zᵢ`,
//!   `c = Σ pᵢ Bᵢ tanh zᵢ` with `P = diag(p)`
//! * `anti-stable`: `a = -A z`, otherwise as `linear` (fails certification)

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{BeamParams, BlockMaps, ClosedLoopConfig, PassiveBlock, ScalarLaw, SpringDamperLaw};
use crate::scalar::Real;

pub const LAW_NAMES: &[&str] = &["zero", "linear", "negative-linear", "cubic", "softening", "tanh", "asymmetric"];
pub const BLOCK_NAMES: &[&str] = &["linear", "cubic-drift", "saturating", "anti-stable"];

fn expect_params(name: &str, params: &[f64], count: usize) -> Result<()> {
    if params.len() != count {
        return Err(Error::invalid(
            "law params",
            format!("law `{name}` takes {count} parameter(s), got {}", params.len()),
        ));
    }
    Ok(())
}

/// Looks up a scalar law by registry name.
pub fn builtin_law<T: Real>(name: &str, params: &[f64]) -> Result<ScalarLaw<T>> {
    match name {
        "zero" => {
            expect_params(name, params, 0)?;
            ScalarLaw::new(name, |_| T::zero(), |_| T::zero(), |_| T::zero())
        }
        "linear" | "negative-linear" => {
            expect_params(name, params, 1)?;
            let sign = if name == "linear" { 1.0 } else { -1.0 };
            let g = T::lit(sign * params[0]);
            ScalarLaw::new(name, move |s| g * s, move |_| g, |_| T::zero())
        }
        "cubic" | "softening" => {
            expect_params(name, params, 2)?;
            let sign = if name == "cubic" { 1.0 } else { -1.0 };
            let g = T::lit(params[0]);
            let c = T::lit(sign * params[1]);
            let (three, six) = (T::lit(3.0), T::lit(6.0));
            ScalarLaw::new(
                name,
                move |s| g * s + c * s * s * s,
                move |s| g + three * c * s * s,
                move |s| six * c * s,
            )
        }
        "tanh" => {
            expect_params(name, params, 2)?;
            let a = T::lit(params[0]);
            let r = T::lit(params[1]);
            let two = T::lit(2.0);
            ScalarLaw::new(
                name,
                move |s| a * (r * s).tanh(),
                move |s| {
                    let t = (r * s).tanh();
                    a * r * (T::one() - t * t)
                },
                move |s| {
                    let t = (r * s).tanh();
                    -two * a * r * r * t * (T::one() - t * t)
                },
            )
        }
        "asymmetric" => {
            expect_params(name, params, 2)?;
            let g = T::lit(params[0]);
            let c = T::lit(params[1]);
            let (two, six) = (T::lit(2.0), T::lit(6.0));
            ScalarLaw::new(
                name,
                move |s| g * s + c * s * s / (T::one() + s * s),
                move |s| {
                    let q = T::one() + s * s;
                    g + two * c * s / (q * q)
                },
                move |s| {
                    let q = T::one() + s * s;
                    c * (two - six * s * s) / (q * q * q)
                },
            )
        }
        other => Err(Error::invalid("law", format!("unknown law `{other}` (known: {})", LAW_NAMES.join(", ")))),
    }
}

/// Matrices parameterizing the built-in blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T: Real> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
    pub p: DMatrix<T>,
}

impl<T: Real> BlockParams<T> {
    pub fn new(a: DMatrix<T>, b: DVector<T>, p: DMatrix<T>) -> Result<Self> {
        let n = b.len();
        if n == 0 {
            return Err(Error::invalid("block params", "B must be non-empty"));
        }
        if a.shape() != (n, n) || p.shape() != (n, n) {
            return Err(Error::invalid(
                "block params",
                format!("A {:?} and P {:?} must be {n}x{n}", a.shape(), p.shape()),
            ));
        }
        Ok(Self { a, b, p })
    }

    /// Row-major flat constructor used by configuration files.
    pub fn from_rows(a: &[f64], b: &[f64], p: &[f64]) -> Result<Self> {
        let n = b.len();
        if a.len() != n * n || p.len() != n * n {
            return Err(Error::invalid(
                "block params",
                format!("with {n} inputs A and P need {} entries (got {} and {})", n * n, a.len(), p.len()),
            ));
        }
        let conv = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<_>>();
        Self::new(
            DMatrix::from_row_slice(n, n, &conv(a)),
            DVector::from_vec(conv(b)),
            DMatrix::from_row_slice(n, n, &conv(p)),
        )
    }

    /// `A = [[-1, 1], [-1, -1]]`, `B = (0, 1)`, `P = I`.
    pub fn planar_default() -> Self {
        Self::from_rows(&[-1.0, 1.0, -1.0, -1.0], &[0.0, 1.0], &[1.0, 0.0, 0.0, 1.0]).expect("static shape")
    }

    /// One-dimensional `A = -rate`, `B = 1`, `P = 1`.
    pub fn scalar(rate: f64) -> Self {
        Self::from_rows(&[-rate], &[1.0], &[1.0]).expect("static shape")
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn output_gain(&self) -> DVector<T> {
        &self.p * &self.b
    }
}

/// Looks up a passive block by registry name.
pub fn builtin_block<T: Real>(name: &str, params: &BlockParams<T>) -> Result<PassiveBlock<T>> {
    let n = params.dim();
    let p = crate::model::symmetrize(&params.p);
    let bvec = params.b.clone();
    let cvec = &p * &bvec;
    match name {
        "linear" | "cubic-drift" | "anti-stable" => {
            let a = if name == "anti-stable" { -params.a.clone() } else { params.a.clone() };
            let cubic = name == "cubic-drift";
            let (a1, a2) = (a.clone(), a);
            let (b1, c1, c2) = (bvec.clone(), cvec.clone(), cvec);
            let (p1, p2, p3) = (p.clone(), p.clone(), p);
            let maps = BlockMaps {
                drift: Arc::new(move |z: &DVector<T>| {
                    let lin = &a1 * z;
                    if cubic { lin - z * z.norm_squared() } else { lin }
                }),
                drift_jac: Arc::new(move |z: &DVector<T>| {
                    if cubic {
                        let two = T::lit(2.0);
                        &a2 - DMatrix::identity(n, n) * z.norm_squared() - (z * z.transpose()) * two
                    } else {
                        a2.clone()
                    }
                }),
                input_gain: Arc::new(move |_| b1.clone()),
                input_jac: Arc::new(move |_| DMatrix::zeros(n, n)),
                output: Arc::new(move |z| c1.dot(z)),
                output_grad: Arc::new(move |_| c2.clone()),
                output_hess: Arc::new(move |_| DMatrix::zeros(n, n)),
                storage: Arc::new(move |z| (z.transpose() * &p1 * z)[0] * T::half()),
                storage_grad: Arc::new(move |z| &p2 * z),
                storage_hess: Arc::new(move |_| p3.clone()),
            };
            PassiveBlock::new(name, n, maps)
        }
        "saturating" => {
            let off_diag = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).any(|(i, j)| i != j && p[(i, j)] != T::zero());
            if off_diag {
                return Err(Error::invalid("block params", "saturating block needs a diagonal P"));
            }
            let w = p.diagonal();
            let wb = w.component_mul(&bvec);
            let (a1, a2) = (params.a.clone(), params.a.clone());
            let (b1, w1, w2, w3) = (bvec, w.clone(), w.clone(), w);
            let (wb1, wb2, wb3) = (wb.clone(), wb.clone(), wb);
            let sech2 = |z: &DVector<T>| z.map(|x| {
                let t = x.tanh();
                T::one() - t * t
            });
            let maps = BlockMaps {
                drift: Arc::new(move |z: &DVector<T>| &a1 * z.map(|x| x.tanh())),
                drift_jac: Arc::new(move |z: &DVector<T>| &a2 * DMatrix::from_diagonal(&sech2(z))),
                input_gain: Arc::new(move |_| b1.clone()),
                input_jac: Arc::new(move |_| DMatrix::zeros(n, n)),
                output: Arc::new(move |z: &DVector<T>| wb1.dot(&z.map(|x| x.tanh()))),
                output_grad: Arc::new(move |z: &DVector<T>| wb2.component_mul(&sech2(z))),
                output_hess: Arc::new(move |z: &DVector<T>| {
                    let two = T::lit(2.0);
                    let d = DVector::from_fn(n, |i, _| {
                        let t = z[i].tanh();
                        -two * wb3[i] * t * (T::one() - t * t)
                    });
                    DMatrix::from_diagonal(&d)
                }),
                storage: Arc::new(move |z: &DVector<T>| {
                    z.iter().zip(w1.iter()).map(|(&x, &wi)| wi * ln_cosh(x)).fold(T::zero(), |s, v| s + v)
                }),
                storage_grad: Arc::new(move |z: &DVector<T>| w2.component_mul(&z.map(|x| x.tanh()))),
                storage_hess: Arc::new(move |z: &DVector<T>| DMatrix::from_diagonal(&w3.component_mul(&sech2(z)))),
            };
            PassiveBlock::new(name, n, maps)
        }
        other => Err(Error::invalid("block", format!("unknown block `{other}` (known: {})", BLOCK_NAMES.join(", ")))),
    }
}

/// Overflow-free `ln cosh x`.
fn ln_cosh<T: Real>(x: T) -> T {
    let a = x.abs();
    a + (-(a + a)).exp().ln_1p() - T::lit(std::f64::consts::LN_2)
}

/// `a(z) = -rate z - z³`, `b = 1`, `c = z`, `V = z²/2`.
pub fn cubic_scalar_block<T: Real>(rate: f64) -> Result<PassiveBlock<T>> {
    builtin_block("cubic-drift", &BlockParams::scalar(rate))
}

/// Cubic springs `s + s³`, dampers `tanh(2s)` and planar cubic-drift blocks.
pub fn default_config<T: Real>(beam: BeamParams<T>) -> Result<ClosedLoopConfig<T>> {
    config_from_names(beam, ("tanh", &[1.0, 2.0]), ("cubic", &[1.0, 1.0]), "cubic-drift")
}

/// Same as [`default_config`] with linear springs (`κ = 0`).
pub fn linear_spring_config<T: Real>(beam: BeamParams<T>) -> Result<ClosedLoopConfig<T>> {
    config_from_names(beam, ("tanh", &[1.0, 2.0]), ("linear", &[1.0]), "cubic-drift")
}

/// Fully linear loop: unit linear laws and planar linear blocks.
pub fn linear_config<T: Real>(beam: BeamParams<T>) -> Result<ClosedLoopConfig<T>> {
    config_from_names(beam, ("linear", &[1.0]), ("linear", &[1.0]), "linear")
}

/// Default config with `asymmetric [1, 1]` springs, whose remainders are
/// quadratic rather than cubic.
pub fn asymmetric_spring_config<T: Real>(beam: BeamParams<T>) -> Result<ClosedLoopConfig<T>> {
    config_from_names(beam, ("tanh", &[1.0, 2.0]), ("asymmetric", &[1.0, 1.0]), "cubic-drift")
}

/// Same law pair on both tip channels and the same block kind, with
/// [`BlockParams::planar_default`], on both sides.
pub fn config_from_names<T: Real>(
    beam: BeamParams<T>,
    damper: (&str, &[f64]),
    spring: (&str, &[f64]),
    block: &str,
) -> Result<ClosedLoopConfig<T>> {
    let sd = || -> Result<SpringDamperLaw<T>> {
        Ok(SpringDamperLaw::new(builtin_law(damper.0, damper.1)?, builtin_law(spring.0, spring.1)?))
    };
    let params = BlockParams::planar_default();
    Ok(ClosedLoopConfig {
        beam,
        sd_rotational: sd()?,
        sd_translational: sd()?,
        block_rotational: builtin_block(block, &params)?,
        block_translational: builtin_block(block, &params)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::linearize_block;

    fn valid_blocks() -> Vec<PassiveBlock<f64>> {
        let planar = BlockParams::planar_default();
        let diag = BlockParams::from_rows(&[-1.0, 0.5, -0.5, -2.0], &[1.0, 0.5], &[2.0, 0.0, 0.0, 1.0]).unwrap();
        vec![
            builtin_block("linear", &planar).unwrap(),
            builtin_block("cubic-drift", &planar).unwrap(),
            builtin_block("saturating", &planar).unwrap(),
            builtin_block("saturating", &diag).unwrap(),
            cubic_scalar_block(1.0).unwrap(),
        ]
    }

    #[test]
    fn unknown_names_rejected() {
        assert!(builtin_law::<f64>("quintic", &[]).is_err());
        assert!(builtin_law::<f64>("linear", &[]).is_err());
        assert!(builtin_block("odd", &BlockParams::<f64>::planar_default()).is_err());
        assert!(BlockParams::<f64>::from_rows(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn saturating_requires_diagonal_storage() {
        let p = BlockParams::<f64>::from_rows(&[-1.0, 0.0, 0.0, -1.0], &[1.0, 0.0], &[2.0, 0.5, 0.5, 1.0]).unwrap();
        assert!(builtin_block("saturating", &p).is_err());
    }

    #[test]
    fn drift_remainder_is_quadratic() {
        for block in valid_blocks() {
            let lin = linearize_block(&block).unwrap();
            let n = block.dim();
            let unit = DVector::from_fn(n, |i, _| 1.0 / (n as f64).sqrt() * if i % 2 == 0 { 1.0 } else { -1.0 });
            let ratios: Vec<f64> = [1e-1, 1e-2, 1e-3]
                .iter()
                .map(|&eps| {
                    let z = &unit * eps;
                    (block.drift(&z) - &lin.a * &z).norm() / (eps * eps)
                })
                .collect();
            for r in &ratios {
                assert!(*r <= 1.0, "{}: remainder ratio {r}", block.name());
            }
        }
    }

    #[test]
    fn kyp_output_identity_holds_exactly() {
        for block in valid_blocks() {
            let lin = linearize_block(&block).unwrap();
            assert!(lin.kyp_defect().amax() <= 1e-15, "{}", block.name());
        }
    }

    #[test]
    fn ln_cosh_is_stable() {
        assert!((ln_cosh(0.0f64)).abs() < 1e-16);
        assert!((ln_cosh(0.7f64) - 0.7f64.cosh().ln()).abs() < 1e-15);
        assert!((ln_cosh(800.0f64) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_law_is_not_odd() {
        let k = builtin_law::<f64>("asymmetric", &[1.0, 1.0]).unwrap();
        assert!((k.eval(0.5) + k.eval(-0.5) - 0.4).abs() < 1e-15);
        assert!(k.derivative_mismatch(&[-1.5, -0.3, 0.0, 0.2, 1.1]).is_none());
        // remainder is quadratic: c·s²/(1 + s²) ≈ s² near 0
        assert!(((k.eval(1e-3) - 1e-3) / 1e-6 - 1.0).abs() < 1e-5);
    }
}
