//! The correction coefficients μ(V) and γ(V).
//!
//! μ = ∫∫ V_eff(x) V_eff(y) / (8π|x − y|) dx dy is the Coulomb energy of the
//! effective two-body potential; it is computed in Fourier space and checked
//! against a direct real-space pair sum. γ integrates V against products of
//! ω over the third particle's position.

use crate::error::{Error, Result};
use crate::par;
use crate::potential::{PotentialModel, P6};
use crate::quad::gauss_legendre;
use crate::scatter6::{Field3, ScatteringSolution6};
use serde::Serialize;
use std::collections::HashMap;
use std::f64::consts::PI;

/// ζ_{ℤ³}(1) = Σ'_{n∈ℤ³} 1/|n|, analytically continued. It is the lattice
/// correction that turns the punctured sum h³Σ' f(nh)/|nh| into a
/// high-order rule for ∫ f(x)/|x| dx: add −ζ(1)·h²·f(0).
pub const LATTICE_ZETA_1: f64 = -2.837_297_479_480_619_6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MuMethod {
    Fourier,
    Realspace,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MuResult {
    pub value: f64,
    pub method: MuMethod,
    pub error: f64,
    pub warnings: Vec<String>,
}

impl MuResult {
    /// The infimum form of μ evaluated at its minimiser is half of the
    /// closed Coulomb form; reported alongside for audit.
    pub fn variational_value(&self) -> f64 {
        0.5 * self.value
    }
}

fn nonzero_points(f: &Field3) -> (Vec<[usize; 3]>, Vec<f64>) {
    let n = f.grid.len();
    let mut idx = Vec::new();
    let mut vals = Vec::new();
    for (k, &v) in f.values.iter().enumerate() {
        if v != 0.0 {
            idx.push([k / (n * n), (k / n) % n, k % n]);
            vals.push(v);
        }
    }
    (idx, vals)
}

/// Gauss–Legendre order used on each pyramid face for μ (fine, coarse).
const MU_ORDERS: (usize, usize) = (16, 12);

/// μ = (1/(2(2π)³)) ∫ |V̂_eff(k)|²/|k|² dk for the band-limited interpolant of
/// the lattice field: V̂_eff is the lattice transform on the Brillouin cube
/// |k_i| ≤ π/h. The cube is split into six pyramids with apex at k = 0,
/// which absorbs the |k|⁻² singularity into the Jacobian.
pub fn mu_fourier(f: &Field3) -> MuResult {
    let (idx, vals) = nonzero_points(f);
    if vals.is_empty() {
        return MuResult {
            value: 0.0,
            method: MuMethod::Fourier,
            error: 0.0,
            warnings: vec![],
        };
    }
    let h = f.grid.h;
    let coords = f.grid.coords();
    let kmax = PI / h;
    let transform2 = |k: [f64; 3]| -> f64 {
        // per-axis phase tables, then a sum over the nonzero points
        let ph: [Vec<(f64, f64)>; 3] = std::array::from_fn(|d| {
            coords
                .iter()
                .map(|&x| {
                    let (s, c) = (k[d] * x).sin_cos();
                    (c, -s)
                })
                .collect()
        });
        let mut re = 0.0;
        let mut im = 0.0;
        for (p, &v) in idx.iter().zip(&vals) {
            let (a, b) = ph[0][p[0]];
            let (c, d) = ph[1][p[1]];
            let (e, g) = ph[2][p[2]];
            let (xr, xi) = (a * c - b * d, a * d + b * c);
            re += v * (xr * e - xi * g);
            im += v * (xr * g + xi * e);
        }
        let s = h * h * h;
        (re * s).powi(2) + (im * s).powi(2)
    };
    let integral = |q: usize| -> f64 {
        let gl = gauss_legendre(q, -1.0, 1.0);
        // radial panels graded towards the apex, where smooth fields put
        // most of their spectral weight
        let gt: Vec<(f64, f64)> = [0.0, 0.0625, 0.125, 0.25, 0.5, 1.0]
            .windows(2)
            .flat_map(|e| gauss_legendre(q, e[0], e[1]))
            .collect();
        // faces +x, +y, +z; the −faces equal them since |V̂|² is even
        let per_face: Vec<f64> = (0..3)
            .map(|axis| {
                let mut nodes = Vec::with_capacity(q * q);
                for &(u, wu) in &gl {
                    for &(v, wv) in &gl {
                        nodes.push((u, v, wu * wv));
                    }
                }
                let parts = par::map_chunks(nodes.len(), 8, |r| {
                    let mut acc = 0.0;
                    for &(u, v, w) in &nodes[r] {
                        let mut p = [0.0; 3];
                        p[axis] = kmax;
                        p[(axis + 1) % 3] = kmax * u;
                        p[(axis + 2) % 3] = kmax * v;
                        let radial: f64 = gt
                            .iter()
                            .map(|&(t, wt)| wt * transform2([t * p[0], t * p[1], t * p[2]]))
                            .sum();
                        acc += w * radial * kmax / (1.0 + u * u + v * v);
                    }
                    acc
                });
                parts.iter().sum::<f64>()
            })
            .collect();
        2.0 * per_face.iter().sum::<f64>() / (2.0 * (2.0 * PI).powi(3))
    };
    let fine = integral(MU_ORDERS.0);
    let coarse = integral(MU_ORDERS.1);
    let mut warnings = Vec::new();
    // tail check: the transform at the corner and face centres of the cube
    let zero = transform2([0.0; 3]).sqrt();
    let edge = [[kmax, 0.0, 0.0], [kmax, kmax, 0.0], [kmax, kmax, kmax]]
        .iter()
        .map(|&k| transform2(k).sqrt())
        .fold(0.0, f64::max);
    if edge > 1e-8 * zero {
        warnings.push(format!(
            "tail cutoff not reached: |V_eff^| at the Brillouin boundary is {:.3e} of its value at 0",
            edge / zero
        ));
    }
    MuResult {
        value: fine,
        method: MuMethod::Fourier,
        error: 2.0 * (fine - coarse).abs() + 4.0 * f64::EPSILON * fine,
        warnings,
    }
}

/// ∫_{[−½,½]³} 1/|x| dx, by the same pyramid split.
pub fn unit_cell_coulomb() -> f64 {
    let g = gauss_legendre(24, -0.5, 0.5);
    let mut s = 0.0;
    for &(u, wu) in &g {
        for &(v, wv) in &g {
            s += wu * wv / (u * u + v * v + 0.25).sqrt();
        }
    }
    1.5 * s
}

/// Direct pair sum Σ_{i≠j} w² f_i f_j /(8π|x_i − x_j|) plus the self term.
/// The self term uses the lattice-corrected weight −ζ_{ℤ³}(1)·h²; the
/// plain cell integral of 1/|z| is the cruder alternative and the spread
/// between the two is reported as the error.
pub fn mu_realspace(f: &Field3) -> MuResult {
    let (idx, vals) = nonzero_points(f);
    let h = f.grid.h;
    let w = h * h * h;
    let n = vals.len();
    let pts: Vec<[f64; 3]> = idx
        .iter()
        .map(|p| std::array::from_fn(|d| f.grid.coord(p[d])))
        .collect();
    // row i sums j < i only; the pair sum is then doubled. Rows are
    // independent, so the result does not depend on the worker count.
    let rows = par::map_chunks(n, 64, |r| {
        let mut acc = 0.0;
        for i in r {
            let mut row = 0.0;
            for j in 0..i {
                let d = [
                    pts[i][0] - pts[j][0],
                    pts[i][1] - pts[j][1],
                    pts[i][2] - pts[j][2],
                ];
                row += vals[j] / (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            }
            acc += vals[i] * row;
        }
        acc
    });
    let pair = 2.0 * w * w * rows.iter().sum::<f64>();
    let sq: f64 = vals.iter().map(|v| v * v).sum();
    let self_lattice = w * sq * (-LATTICE_ZETA_1) * h * h;
    let self_cell = w * sq * unit_cell_coulomb() * h * h;
    MuResult {
        value: (pair + self_lattice) / (8.0 * PI),
        method: MuMethod::Realspace,
        error: (self_lattice - self_cell).abs() / (8.0 * PI),
        warnings: vec![],
    }
}

/// Quadrature for the z-integral in γ: radial Gauss panels
/// [0,R], [R,2R], [2R,4R], [4R,Z] and a (cos θ, φ) product grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallRule {
    pub radial: usize,
    pub polar: usize,
    pub azimuth: usize,
}

impl BallRule {
    pub const FINE: BallRule = BallRule {
        radial: 4,
        polar: 6,
        azimuth: 12,
    };
    pub const COARSE: BallRule = BallRule {
        radial: 3,
        polar: 4,
        azimuth: 8,
    };

    pub fn nodes(&self, r: f64, z: f64) -> Vec<([f64; 3], f64)> {
        let mut edges = vec![0.0, r, 2.0 * r, 4.0 * r, z];
        edges.retain(|&e| e <= z);
        if *edges.last().unwrap() < z {
            edges.push(z);
        }
        let mut out = Vec::new();
        let ct = gauss_legendre(self.polar, -1.0, 1.0);
        for p in edges.windows(2) {
            for (rr, wr) in gauss_legendre(self.radial, p[0], p[1]) {
                for &(c, wc) in &ct {
                    let s = (1.0 - c * c).sqrt();
                    for k in 0..self.azimuth {
                        let phi = 2.0 * PI * (k as f64 + 0.5) / self.azimuth as f64;
                        let w = wr * rr * rr * wc * 2.0 * PI / self.azimuth as f64;
                        out.push(([rr * s * phi.cos(), rr * s * phi.sin(), rr * c], w));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaResult {
    pub value: f64,
    /// truncation radius of the z-integration
    pub z_radius: f64,
    /// analytic bound on the |z| > Z contribution
    pub tail_bound: f64,
    /// |fine − coarse| of the z quadrature
    pub quadrature_error: f64,
    pub error: f64,
    /// measured sup of |z|⁴ ω(·, z) on the sphere |z| = Z
    pub c_fit: f64,
}

/// Fraction of γ the tail bound may reach before the run is rejected.
pub const GAMMA_TAIL_FRACTION: f64 = 0.1;

/// γ = ∫V(x,y) ω(x,z) ω(y,z) + ½ ∫V(x,y) ω(y,z)², with (x, y) on the
/// scattering grid and z over the ball |z| ≤ Z.
pub fn gamma(v: &PotentialModel, sol: &ScatteringSolution6, z: f64) -> Result<GammaResult> {
    gamma_with(v, sol, z, BallRule::FINE, BallRule::COARSE)
}

pub fn gamma_with(
    v: &PotentialModel,
    sol: &ScatteringSolution6,
    z: f64,
    fine: BallRule,
    coarse: BallRule,
) -> Result<GammaResult> {
    let r = v.support_radius;
    if z < 4.0 * r {
        return Err(Error::BadInput(format!(
            "gamma truncation radius {z} is below 4 R_V = {}",
            4.0 * r
        )));
    }
    let nys = &sol.nys;
    // distinct 3-D marginals a = x_i and a = y_i
    let mut ids: HashMap<[u8; 3], usize> = HashMap::new();
    let mut marg: Vec<[f64; 3]> = Vec::new();
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    let w6 = nys.cell_volume();
    for (i, c) in nys.cells.iter().enumerate() {
        if nys.v[i] == 0.0 {
            continue;
        }
        let mut id = |k: [u8; 3]| {
            let next = ids.len();
            *ids.entry(k).or_insert_with(|| {
                marg.push(k.map(|t| nys.grid.coord(t as usize)));
                next
            })
        };
        let ix = id([c[0], c[1], c[2]]);
        let iy = id([c[3], c[4], c[5]]);
        pairs.push((ix, iy, w6 * nys.v[i]));
    }
    if pairs.is_empty() {
        return Ok(GammaResult {
            value: 0.0,
            z_radius: z,
            tail_bound: 0.0,
            quadrature_error: 0.0,
            error: 0.0,
            c_fit: 0.0,
        });
    }
    let omega_column = |zz: [f64; 3]| -> Vec<f64> {
        let mut w = vec![0.0; marg.len()];
        par::fill(&mut w, |k| {
            let a = marg[k];
            let x: P6 = [a[0], a[1], a[2], zz[0], zz[1], zz[2]];
            sol.omega_at(&x)
        });
        w
    };
    let integrand = |zz: [f64; 3]| -> f64 {
        let w = omega_column(zz);
        pairs
            .iter()
            .map(|&(ix, iy, m)| m * (w[ix] * w[iy] + 0.5 * w[iy] * w[iy]))
            .sum()
    };
    let run = |rule: BallRule| -> f64 {
        rule.nodes(r, z)
            .into_iter()
            .map(|(p, w)| w * integrand(p))
            .sum()
    };
    let value = run(fine);
    let quadrature_error = (value - run(coarse)).abs();
    // |z|⁴ ω on the truncation sphere, over the fine angular grid
    let mut c_fit: f64 = 0.0;
    let sphere = BallRule { radial: 1, ..fine };
    for (p, _) in sphere.nodes(z, z) {
        let scale = z / (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        let q = p.map(|t| t * scale);
        c_fit = c_fit.max(omega_column(q).into_iter().fold(0.0, f64::max) * z.powi(4));
    }
    let mass: f64 = pairs.iter().map(|p| p.2).sum();
    let tail_bound = 1.5 * mass * c_fit * c_fit * 4.0 * PI / (5.0 * z.powi(5));
    if tail_bound > GAMMA_TAIL_FRACTION * value {
        return Err(Error::GammaTail {
            tail: tail_bound,
            gamma: value,
        });
    }
    Ok(GammaResult {
        value,
        z_radius: z,
        tail_bound,
        quadrature_error,
        error: quadrature_error + tail_bound,
        c_fit,
    })
}
