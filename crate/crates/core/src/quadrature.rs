//! One-dimensional quadrature rules.

use crate::scalar::Real;

/// Gauss-Legendre nodes and weights on `[-1, 1]` for 1 to 4 points.
/// An `n`-point rule integrates polynomials of degree `2n - 1` exactly.
pub fn gauss_legendre<T: Real>(n: usize) -> Vec<(T, T)> {
    let raw: &[(f64, f64)] = match n {
        1 => &[(0.0, 2.0)],
        2 => &[(-0.577_350_269_189_625_8, 1.0), (0.577_350_269_189_625_8, 1.0)],
        3 => &[
            (-0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
            (0.0, 0.888_888_888_888_888_9),
            (0.774_596_669_241_483_4, 0.555_555_555_555_555_6),
        ],
        4 => &[
            (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
            (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
            (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
            (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
        ],
        _ => panic!("gauss_legendre supports 1..=4 points, got {n}"),
    };
    raw.iter().map(|&(x, w)| (T::lit(x), T::lit(w))).collect()
}

/// Composite Simpson rule over `[a, b]` with `nodes` points (odd, >= 3).
pub fn composite_simpson<T: Real>(f: impl Fn(T) -> T, a: T, b: T, nodes: usize) -> T {
    assert!(nodes >= 3 && nodes % 2 == 1, "Simpson needs an odd node count >= 3");
    let intervals = nodes - 1;
    let h = (b - a) / T::from_usize_lossy(intervals);
    let (two, four) = (T::lit(2.0), T::lit(4.0));
    let mut sum = f(a) + f(b);
    for i in 1..intervals {
        let x = a + h * T::from_usize_lossy(i);
        sum += if i % 2 == 1 { four * f(x) } else { two * f(x) };
    }
    sum * h / T::lit(3.0)
}

/// Composite Simpson with interval doubling and a Richardson correction,
/// stopping once the correction drops below `abs_tol`.
pub fn adaptive_simpson<T: Real>(f: impl Fn(T) -> T, a: T, b: T, abs_tol: T) -> T {
    if a == b {
        return T::zero();
    }
    let mut nodes = 17;
    let mut coarse = composite_simpson(&f, a, b, nodes);
    // 2^16 intervals is far past the point where roundoff dominates
    for _ in 0..12 {
        nodes = 2 * nodes - 1;
        let fine = composite_simpson(&f, a, b, nodes);
        let correction = (fine - coarse) / T::lit(15.0);
        if correction.abs() <= abs_tol {
            return fine + correction;
        }
        coarse = fine;
    }
    coarse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rules_exact_to_degree() {
        for n in 1..=4 {
            let rule = gauss_legendre::<f64>(n);
            for deg in 0..2 * n {
                let q: f64 = rule.iter().map(|&(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-15, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn simpson_exact_for_cubics() {
        let v = composite_simpson(|s: f64| s - s.powi(3), 0.0, 2.0, 129);
        assert!((v - (-2.0)).abs() < 1e-13);
    }

    #[test]
    fn adaptive_simpson_smooth() {
        let v = adaptive_simpson(|s: f64| (2.0 * s).tanh(), 0.0, 1.5, 1e-12);
        let exact = (3.0f64).cosh().ln() / 2.0;
        assert!((v - exact).abs() < 1e-12);
        assert_eq!(adaptive_simpson(|s: f64| s, 0.3, 0.3, 1e-12), 0.0);
        let neg = adaptive_simpson(|s: f64| s, 0.0, -2.0, 1e-12);
        assert!((neg - 2.0).abs() < 1e-14);
    }
}
