//! Small quadrature helpers on top of `gauss-quad`.

use gauss_quad::GaussLegendre;
use std::num::NonZeroUsize;

/// Gauss–Legendre nodes and weights on [a, b].
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let gl = GaussLegendre::new(NonZeroUsize::new(n).expect("order ≥ 1"));
    let (m, s) = (0.5 * (a + b), 0.5 * (b - a));
    gl.as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (m + s * x, s * w))
        .collect()
}

/// Composite Gauss–Legendre: `panels` equal panels of order `n` on [a, b].
pub fn composite(n: usize, panels: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let step = (b - a) / panels as f64;
    (0..panels)
        .flat_map(|p| gauss_legendre(n, a + p as f64 * step, a + (p + 1) as f64 * step))
        .collect()
}

pub fn integrate(nodes: &[(f64, f64)], f: impl Fn(f64) -> f64) -> f64 {
    nodes.iter().map(|&(x, w)| w * f(x)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        let q = gauss_legendre(4, 0.0, 2.0);
        assert!((integrate(&q, |x| x.powi(7)) - 32.0).abs() < 1e-12);
        let c = composite(3, 5, -1.0, 1.0);
        assert!((integrate(&c, |x| x * x) - 2.0 / 3.0).abs() < 1e-14);
    }
}
