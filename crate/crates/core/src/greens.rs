//! The metrics M (ℝ⁶, three particles) and M_* (ℝ⁹, four particles) and the
//! fundamental solutions of −2Δ_M and −2Δ_{M_*}.
//!
//! Points are stacked 3-vectors: ℝ⁶ = (x₁, x₂), ℝ⁹ = (x₁, x₂, x₃). Both
//! metrics have the form M² = ½(I + 11ᵀ) ⊗ I₃ on k = 2 or 3 blocks, so
//! everything is available in closed form.

use crate::error::{Error, Result};
use std::f64::consts::PI;

pub const SINGULAR_EPS: f64 = 1e-12;

/// Γ(9/2) = 105√π/16.
pub fn gamma_9_2() -> f64 {
    105.0 * PI.sqrt() / 16.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModifiedMetric {
    /// number of 3-D blocks (2 for M, 3 for M_*)
    pub blocks: usize,
}

impl ModifiedMetric {
    pub fn m() -> Self {
        Self { blocks: 2 }
    }
    pub fn m_star() -> Self {
        Self { blocks: 3 }
    }

    pub fn dim(&self) -> usize {
        3 * self.blocks
    }

    /// Eigenvalues of the k×k core ½(I + 11ᵀ): (k+1)/2 once, ½ (k−1) times.
    pub fn core_eigenvalues(&self) -> Vec<f64> {
        let k = self.blocks as f64;
        let mut e = vec![(k + 1.0) / 2.0];
        e.extend(std::iter::repeat(0.5).take(self.blocks - 1));
        e
    }

    /// k×k core of M² (before the ⊗ I₃ lift).
    pub fn core_m2(&self) -> Vec<Vec<f64>> {
        let k = self.blocks;
        (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.5 }).collect())
            .collect()
    }

    /// Core of M itself, the symmetric square root: (I + c 11ᵀ)/√2.
    pub fn core_sqrt(&self) -> Vec<Vec<f64>> {
        let k = self.blocks as f64;
        let c = ((1.0 + k).sqrt() - 1.0) / k;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        (0..self.blocks)
            .map(|i| {
                (0..self.blocks)
                    .map(|j| s * (if i == j { 1.0 } else { 0.0 } + c))
                    .collect()
            })
            .collect()
    }

    /// det M over the full 3k-dimensional space.
    pub fn det(&self) -> f64 {
        self.core_eigenvalues()
            .iter()
            .map(|e| e.sqrt().powi(3))
            .product()
    }

    /// Full 3k×3k matrix M.
    pub fn full_sqrt(&self) -> Vec<Vec<f64>> {
        lift(&self.core_sqrt())
    }

    /// |M⁻¹x|² = 2(Σ|xᵢ|² − |Σxᵢ|²/(k+1)), using M⁻² = 2(I − 11ᵀ/(k+1)).
    pub fn inv_norm2(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let k = self.blocks;
        let mut sq = 0.0;
        let mut s = [0.0; 3];
        for i in 0..k {
            for c in 0..3 {
                let v = x[3 * i + c];
                sq += v * v;
                s[c] += v;
            }
        }
        2.0 * (sq - (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]) / (k as f64 + 1.0))
    }

    /// M applied to x.
    pub fn apply_sqrt(&self, x: &[f64]) -> Vec<f64> {
        let core = self.core_sqrt();
        let k = self.blocks;
        let mut y = vec![0.0; 3 * k];
        for i in 0..k {
            for j in 0..k {
                for c in 0..3 {
                    y[3 * i + c] += core[i][j] * x[3 * j + c];
                }
            }
        }
        y
    }
}

fn lift(core: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = core.len();
    let mut m = vec![vec![0.0; 3 * k]; 3 * k];
    for i in 0..k {
        for j in 0..k {
            for c in 0..3 {
                m[3 * i + c][3 * j + c] = core[i][j];
            }
        }
    }
    m
}

/// Green's kernel c_d / |M⁻¹x|^{d−2} of −2Δ_M.
#[derive(Debug, Clone, PartialEq)]
pub struct GreensKernel {
    pub metric: ModifiedMetric,
    pub c: f64,
    pub eps: f64,
}

impl GreensKernel {
    /// ℝ⁶: the Green's function of −Δ is 1/(4π³|x|⁴); halving for −2Δ and
    /// changing variables through M gives c₆ = 1/(8π³ det M).
    pub fn six() -> Self {
        let metric = ModifiedMetric::m();
        let c = 1.0 / (8.0 * PI.powi(3) * metric.det());
        Self {
            metric,
            c,
            eps: SINGULAR_EPS,
        }
    }

    /// ℝ⁹: c₉ = Γ(9/2) / (28 π^{9/2} det M_*).
    pub fn nine() -> Self {
        let metric = ModifiedMetric::m_star();
        let c = gamma_9_2() / (28.0 * PI.powf(4.5) * metric.det());
        Self {
            metric,
            c,
            eps: SINGULAR_EPS,
        }
    }

    fn power(&self) -> i32 {
        (self.metric.dim() as i32 - 2) / 2
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let n2: f64 = x.iter().map(|v| v * v).sum();
        if n2.sqrt() < self.eps {
            return Err(Error::SingularEvaluation(n2.sqrt()));
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub fn eval_unchecked(&self, x: &[f64]) -> f64 {
        let q = self.metric.inv_norm2(x);
        // dimension 6 → q², dimension 9 → q^{7/2}
        match self.power() {
            2 => self.c / (q * q),
            _ => self.c / (q * q * q * q.sqrt()),
        }
    }
}

pub fn kernel6(x: &[f64; 6]) -> Result<f64> {
    GreensKernel::six().eval(x)
}

pub fn kernel9(x: &[f64; 9]) -> Result<f64> {
    GreensKernel::nine().eval(x)
}

/// ∫ kernel6 over the cube [−s/2, s/2]⁶.
///
/// The kernel is homogeneous of degree −4, so the cone from the origin over
/// each face contributes (s/4)·∫_face kernel6 — a smooth 5-D integral, done
/// by tensor Gauss–Legendre. The order is raised until two consecutive
/// orders agree to 1e−13 relative. All 12 faces are images of each other
/// under the symmetries of M (sign flip, block swap, component permutation)
/// but each axis is still integrated separately as a self-check.
pub fn cell_average6(side: f64) -> f64 {
    assert!(side > 0.0);
    let unit = unit_cell_integral6();
    unit * side * side
}

fn unit_cell_integral6() -> f64 {
    static C: std::sync::OnceLock<f64> = std::sync::OnceLock::new();
    *C.get_or_init(|| {
        let mut prev = face_sum(6);
        for order in [8, 10, 12, 14, 16] {
            let cur = face_sum(order);
            if (cur - prev).abs() <= 1e-13 * cur {
                return cur;
            }
            prev = cur;
        }
        prev
    })
}

fn face_sum(order: usize) -> f64 {
    let g = GreensKernel::six();
    let nodes = crate::quad::gauss_legendre(order, -0.5, 0.5);
    let mut total = 0.0;
    for axis in 0..6 {
        let mut idx = [0usize; 5];
        let mut face = 0.0;
        loop {
            let mut x = [0.0; 6];
            let mut w = 1.0;
            let mut t = 0;
            for d in 0..6 {
                if d == axis {
                    x[d] = 0.5;
                } else {
                    x[d] = nodes[idx[t]].0;
                    w *= nodes[idx[t]].1;
                    t += 1;
                }
            }
            face += w * g.eval_unchecked(&x);
            if !crate::potential::next_index(&mut idx, order) {
                break;
            }
        }
        // faces +e and −e agree by evenness of the kernel
        total += 2.0 * face * 0.25;
    }
    total
}
