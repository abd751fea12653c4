//! Cubic Hermite finite elements for the beam.
//!
//! Each node carries a deflection and a slope degree of freedom, so the
//! discrete displacement space is C¹ and `u''` is square integrable. The
//! clamped end removes both degrees of freedom of node 0. Tip quantities
//! `u(L)` and `u'(L)` are plain degrees of freedom of the last node.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{BlockLinearization, ClosedLoopConfig};
use crate::quadrature::gauss_legendre;
use crate::scalar::Real;
use crate::model::BeamParams;

/// Uniform partition of `[0, L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T> {
    pub n_elements: usize,
    pub nodes: Vec<T>,
}

impl<T: Real> Mesh<T> {
    pub fn element_length(&self) -> T {
        self.nodes[1] - self.nodes[0]
    }

    pub fn length(&self) -> T {
        self.nodes[self.n_elements]
    }
}

pub fn build_mesh<T: Real>(beam: &BeamParams<T>, n_elements: usize) -> Result<Mesh<T>> {
    if n_elements < 1 {
        return Err(Error::InvalidElementCount(n_elements));
    }
    let n = T::from_usize_lossy(n_elements);
    let mut nodes: Vec<T> = (0..=n_elements)
        .map(|i| beam.length * T::from_usize_lossy(i) / n)
        .collect();
    nodes[n_elements] = beam.length;
    Ok(Mesh { n_elements, nodes })
}

/// Hermite shape functions on `[0, h]` at reference coordinate `xi ∈ [0, 1]`.
pub fn hermite_values<T: Real>(xi: T, h: T) -> [T; 4] {
    let (two, three) = (T::lit(2.0), T::lit(3.0));
    let x2 = xi * xi;
    let x3 = x2 * xi;
    [
        T::one() - three * x2 + two * x3,
        h * (xi - two * x2 + x3),
        three * x2 - two * x3,
        h * (x3 - x2),
    ]
}

/// First x-derivatives of the Hermite shape functions.
pub fn hermite_slopes<T: Real>(xi: T, h: T) -> [T; 4] {
    let (three, four, six) = (T::lit(3.0), T::lit(4.0), T::lit(6.0));
    let x2 = xi * xi;
    [
        (six * x2 - six * xi) / h,
        T::one() - four * xi + three * x2,
        (six * xi - six * x2) / h,
        three * x2 - T::lit(2.0) * xi,
    ]
}

/// Second x-derivatives of the Hermite shape functions.
pub fn hermite_curvatures<T: Real>(xi: T, h: T) -> [T; 4] {
    let (two, four, six, twelve) = (T::lit(2.0), T::lit(4.0), T::lit(6.0), T::lit(12.0));
    let h2 = h * h;
    [
        (twelve * xi - six) / h2,
        (six * xi - four) / h,
        (six - twelve * xi) / h2,
        (six * xi - two) / h,
    ]
}

fn element_gram<T: Real>(h: T, points: usize, basis: impl Fn(T, T) -> [T; 4]) -> DMatrix<T> {
    let mut m = DMatrix::zeros(4, 4);
    for (x, w) in gauss_legendre::<T>(points) {
        let xi = (x + T::one()) * T::half();
        let phi = basis(xi, h);
        // dx = h/2 d(x)
        let weight = w * h * T::half();
        for i in 0..4 {
            for j in i..4 {
                m[(i, j)] += weight * phi[i] * phi[j];
            }
        }
    }
    for i in 0..4 {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
    m
}

/// `∫ N_i'' N_j'' dx` over one element; integrand degree 2, 2-point Gauss.
pub fn element_stiffness<T: Real>(h: T) -> DMatrix<T> {
    element_gram(h, 2, hermite_curvatures)
}

/// `∫ N_i N_j dx` over one element; integrand degree 6, 4-point Gauss.
pub fn element_mass<T: Real>(h: T) -> DMatrix<T> {
    element_gram(h, 4, hermite_values)
}

/// Assembled beam matrices. `mass` and `stiffness` are unweighted Gram
/// matrices; `rho` and `Lambda` are applied by the accessors below.
#[derive(Debug, Clone)]
pub struct DiscreteSystem<T: Real> {
    pub beam: BeamParams<T>,
    pub mesh: Mesh<T>,
    pub clamped: bool,
    /// `∫ φ_i φ_j`
    pub mass: DMatrix<T>,
    /// `∫ φ_i'' φ_j''`
    pub stiffness: DMatrix<T>,
    pub tip_value_index: usize,
    pub tip_slope_index: usize,
    pub n_dof: usize,
}

impl<T: Real> DiscreteSystem<T> {
    /// Unit vector picking `u(L)`.
    pub fn tip_value_selector(&self) -> DVector<T> {
        unit(self.n_dof, self.tip_value_index)
    }

    /// Unit vector picking `u'(L)`.
    pub fn tip_slope_selector(&self) -> DVector<T> {
        unit(self.n_dof, self.tip_slope_index)
    }

    /// `Lambda * stiffness`.
    pub fn beam_stiffness(&self) -> DMatrix<T> {
        &self.stiffness * self.beam.lambda_rigidity
    }

    /// `rho * mass`.
    pub fn beam_mass(&self) -> DMatrix<T> {
        &self.mass * self.beam.rho
    }

    /// Velocity-block inertia `rho M + J e_θ e_θᵀ + M e_w e_wᵀ`. With the tip
    /// momenta tied to the velocity traces this is the kinetic energy form.
    pub fn inertia(&self) -> DMatrix<T> {
        let mut m = self.beam_mass();
        m[(self.tip_slope_index, self.tip_slope_index)] += self.beam.tip_inertia;
        m[(self.tip_value_index, self.tip_value_index)] += self.beam.tip_mass;
        m
    }

    /// Displacement-block energy form `Lambda K + K1 e_θ e_θᵀ + K2 e_w e_wᵀ`.
    pub fn elastic_form(&self, k_rot: T, k_tr: T) -> DMatrix<T> {
        let mut k = self.beam_stiffness();
        k[(self.tip_slope_index, self.tip_slope_index)] += k_rot;
        k[(self.tip_value_index, self.tip_value_index)] += k_tr;
        k
    }

    /// Hermite interpolant of `f` given its derivative `df`.
    pub fn interpolate(&self, f: impl Fn(T) -> T, df: impl Fn(T) -> T) -> DVector<T> {
        let offset = if self.clamped { 2 } else { 0 };
        let mut dofs = DVector::zeros(self.n_dof);
        for (i, &x) in self.mesh.nodes.iter().enumerate() {
            if 2 * i < offset {
                continue;
            }
            dofs[2 * i - offset] = f(x);
            dofs[2 * i + 1 - offset] = df(x);
        }
        dofs
    }
}

fn unit<T: Real>(n: usize, k: usize) -> DVector<T> {
    let mut e = DVector::zeros(n);
    e[k] = T::one();
    e
}

/// Assembles the global mass and stiffness Gram matrices, removing the two
/// degrees of freedom at `x = 0` when `clamp_left`.
pub fn assemble<T: Real>(beam: &BeamParams<T>, mesh: &Mesh<T>, clamp_left: bool) -> DiscreteSystem<T> {
    let full = 2 * (mesh.n_elements + 1);
    let h = mesh.element_length();
    let ke = element_stiffness(h);
    let me = element_mass(h);
    let mut k = DMatrix::zeros(full, full);
    let mut m = DMatrix::zeros(full, full);
    for e in 0..mesh.n_elements {
        let base = 2 * e;
        for i in 0..4 {
            for j in 0..4 {
                k[(base + i, base + j)] += ke[(i, j)];
                m[(base + i, base + j)] += me[(i, j)];
            }
        }
    }
    let (mass, stiffness, offset) = if clamp_left {
        let n = full - 2;
        (m.view((2, 2), (n, n)).into_owned(), k.view((2, 2), (n, n)).into_owned(), 2)
    } else {
        (m, k, 0)
    };
    let n_dof = full - offset;
    DiscreteSystem {
        beam: *beam,
        mesh: mesh.clone(),
        clamped: clamp_left,
        mass,
        stiffness,
        tip_value_index: full - 2 - offset,
        tip_slope_index: full - 1 - offset,
        n_dof,
    }
}

/// Energy Gram matrix over the flat state `(u, v, z1, z2)`:
/// block diagonal with the elastic form, the inertia form, `P1` and `P2`.
pub fn assemble_gram<T: Real>(
    sys: &DiscreteSystem<T>,
    config: &ClosedLoopConfig<T>,
    lin1: &BlockLinearization<T>,
    lin2: &BlockLinearization<T>,
) -> Result<DMatrix<T>> {
    let q = gram_from_parts(
        sys,
        config.sd_rotational.spring_slope,
        config.sd_translational.spring_slope,
        &[&lin1.p, &lin2.p],
    );
    if q.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("energy Gram matrix"));
    }
    Ok(q)
}

pub(crate) fn gram_from_parts<T: Real>(
    sys: &DiscreteSystem<T>,
    k_rot: T,
    k_tr: T,
    blocks: &[&DMatrix<T>],
) -> DMatrix<T> {
    let n = sys.n_dof;
    let extra: usize = blocks.iter().map(|p| p.nrows()).sum();
    let dim = 2 * n + extra;
    let mut q = DMatrix::zeros(dim, dim);
    q.view_mut((0, 0), (n, n)).copy_from(&sys.elastic_form(k_rot, k_tr));
    q.view_mut((n, n), (n, n)).copy_from(&sys.inertia());
    let mut at = 2 * n;
    for p in blocks {
        let m = p.nrows();
        q.view_mut((at, at), (m, m)).copy_from(*p);
        at += m;
    }
    q
}

/// Matrix Market coordinate export (`general`, 1-based indices, nonzeros only).
pub fn to_matrix_market<T: Real>(m: &DMatrix<T>) -> String {
    let entries: Vec<(usize, usize, f64)> = (0..m.ncols())
        .flat_map(|j| (0..m.nrows()).map(move |i| (i, j)))
        .filter_map(|(i, j)| {
            let v = m[(i, j)].as_f64();
            (v != 0.0).then_some((i, j, v))
        })
        .collect();
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", m.nrows(), m.ncols(), entries.len());
    for (i, j, v) in entries {
        let _ = writeln!(out, "{} {} {:.16e}", i + 1, j + 1, v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_beam() -> BeamParams<f64> {
        BeamParams::unit_beam(0.1, 0.1).unwrap()
    }

    #[test]
    fn mesh_nodes() {
        let b = unit_beam();
        assert_eq!(build_mesh(&b, 1).unwrap().nodes, vec![0.0, 1.0]);
        assert_eq!(build_mesh(&b, 4).unwrap().nodes, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let b2 = BeamParams::new(1.0, 1.0, 2.0, 0.1, 0.1).unwrap();
        assert_eq!(build_mesh(&b2, 2).unwrap().nodes, vec![0.0, 1.0, 2.0]);
        assert_eq!(build_mesh(&b, 0), Err(Error::InvalidElementCount(0)));
    }

    // closed-form element matrices for a unit element
    fn exact_stiffness() -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 4, &[
            12.0, 6.0, -12.0, 6.0, //
            6.0, 4.0, -6.0, 2.0, //
            -12.0, -6.0, 12.0, -6.0, //
            6.0, 2.0, -6.0, 4.0,
        ])
    }

    fn exact_mass() -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 4, &[
            156.0, 22.0, 54.0, -13.0, //
            22.0, 4.0, 13.0, -3.0, //
            54.0, 13.0, 156.0, -22.0, //
            -13.0, -3.0, -22.0, 4.0,
        ]) / 420.0
    }

    #[test]
    fn unit_element_matrices_match_closed_form() {
        let k = element_stiffness(1.0f64);
        let m = element_mass(1.0f64);
        assert!((k - exact_stiffness()).amax() < 1e-13);
        assert!((m - exact_mass()).amax() < 1e-15);
    }

    #[test]
    fn element_matrices_single_precision() {
        let k = element_stiffness(1.0f32);
        let m = element_mass(1.0f32);
        for i in 0..4 {
            for j in 0..4 {
                assert!((k[(i, j)] as f64 - exact_stiffness()[(i, j)]).abs() < 1e-4);
                assert!((m[(i, j)] as f64 - exact_mass()[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scaled_element_matrices() {
        let h = 0.37;
        let k = element_stiffness(h);
        let m = element_mass(h);
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, h, 1.0, h]));
        let k_exact = &s * exact_stiffness() * &s / (h * h * h);
        let m_exact = &s * exact_mass() * &s * h;
        assert!((k - k_exact).amax() < 1e-11);
        assert!((m - m_exact).amax() < 1e-15);
    }

    #[test]
    fn free_beam_has_two_rigid_modes() {
        let b = unit_beam();
        let mesh = build_mesh(&b, 5).unwrap();
        let sys = assemble(&b, &mesh, false);
        let constant = sys.interpolate(|_| 1.0, |_| 0.0);
        let affine = sys.interpolate(|x| x, |_| 1.0);
        assert!((&sys.stiffness * constant).amax() < 1e-11);
        assert!((&sys.stiffness * affine).amax() < 1e-11);
        let quadratic = sys.interpolate(|x| x * x, |x| 2.0 * x);
        assert!((&sys.stiffness * quadratic).amax() > 1.0);
    }

    #[test]
    fn clamped_matrices_symmetric_positive_definite() {
        let b = unit_beam();
        for n in [1, 3, 8] {
            let sys = assemble(&b, &build_mesh(&b, n).unwrap(), true);
            assert_eq!(sys.n_dof, 2 * n);
            assert_eq!(sys.tip_value_index, 2 * n - 2);
            assert_eq!(sys.tip_slope_index, 2 * n - 1);
            assert_eq!(sys.mass, sys.mass.transpose());
            assert_eq!(sys.stiffness, sys.stiffness.transpose());
            assert!(sys.mass.clone().cholesky().is_some());
            assert!(sys.stiffness.clone().cholesky().is_some());
        }
    }

    #[test]
    fn quadratic_strain_energy_exact() {
        // u = x², u'' = 2, ∫ u'' ũ'' = 4 L for ũ = u
        let b = BeamParams::<f64>::new(1.0, 1.0, 1.5, 0.1, 0.1).unwrap();
        let sys = assemble(&b, &build_mesh(&b, 7).unwrap(), true);
        let u = sys.interpolate(|x| x * x, |x| 2.0 * x);
        let energy = u.dot(&(&sys.stiffness * &u));
        assert!((energy - 6.0).abs() < 1e-12);
        assert_eq!(u[sys.tip_value_index], 2.25);
        assert_eq!(u[sys.tip_slope_index], 3.0);
        let mass = u.dot(&(&sys.mass * &u));
        assert!((mass - 1.5f64.powi(5) / 5.0).abs() < 1e-13);
    }

    #[test]
    fn matrix_market_format() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -2.5, 4.0]);
        let s = to_matrix_market(&m);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "%%MatrixMarket matrix coordinate real general");
        assert_eq!(lines[1], "2 2 3");
        assert_eq!(lines[2], "1 1 1.0000000000000000e0");
        assert_eq!(lines[3], "2 1 -2.5000000000000000e0");
    }
}
