//! Zero-energy scattering for (−2Δ_M + V)ω = V on ℝ⁶.
//!
//! The unknown is the density ρ = V(1 − ω), which lives on supp V only. It
//! solves the Lippmann–Schwinger equation ρ + V·K₆ρ = V, where K₆ is
//! convolution with the Green's kernel of −2Δ_M; ω = K₆ρ everywhere and
//! b_M = ∫ρ. The Nyström discretisation uses the midpoint rule between cells
//! and the exact cell integral of the kernel on the diagonal. With ρ = √V·u
//! the system becomes (I + √V K √V) u = √V, which is SPD and solved by CG.

use crate::cg::{self, CgStats};
use crate::error::{Error, Result};
use crate::greens::{cell_average6, GreensKernel};
use crate::par;
use crate::potential::{next_index, PotentialModel, P6};
use serde::Serialize;
use std::io::{Read, Write};
use std::path::Path;

pub const RHO_MAGIC: &[u8; 8] = b"GP3RHO1\0";

/// The vertex lattice h·{−m, …, m} per axis with h = 2R/n and m = ⌈n/2⌉.
///
/// Vertex- rather than cell-centred: the S₃ images act on (a, b) by integer
/// matrices, so they map hℤ⁶ onto itself and the discrete problem inherits
/// the full symmetry of V.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub n: usize,
    pub m: usize,
    pub h: f64,
}

impl Lattice {
    pub fn new(n: usize, half_width: f64) -> Self {
        Self {
            n,
            m: n.div_ceil(2),
            h: 2.0 * half_width / n as f64,
        }
    }

    /// points per axis
    pub fn len(&self) -> usize {
        2 * self.m + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, i: usize) -> f64 {
        (i as f64 - self.m as f64) * self.h
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.coord(i)).collect()
    }

    /// index of the lattice point whose cell [x − h/2, x + h/2) contains t
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let s = (t / self.h + self.m as f64 + 0.5).floor();
        (s >= 0.0 && s < self.len() as f64).then_some(s as usize)
    }
}

/// The discretised problem: active cells of the support grid and the
/// Nyström operator on them.
#[derive(Debug, Clone)]
pub struct Nystrom6 {
    pub grid: Lattice,
    /// lattice index of each active cell
    pub cells: Vec<[u8; 6]>,
    /// coordinates, structure-of-arrays: xs[d][i]
    xs: [Vec<f64>; 6],
    /// lattice coordinates as f64 (exact small integers), same layout
    ms: [Vec<f64>; 6],
    pub v: Vec<f64>,
    /// dense n⁶ → active index + 1 (0 = inactive)
    lookup: Vec<u32>,
    pub self_weight: f64,
    /// h⁶·c₆ — the off-diagonal weight numerator
    pair_weight: f64,
}

impl Nystrom6 {
    /// Samples V on the lattice of [−R_V, R_V]⁶ with spacing 2R_V/n and
    /// keeps the points where V > 0.
    pub fn new(v: &PotentialModel, n: usize) -> Result<Self> {
        if n < 6 {
            return Err(Error::BadInput(format!(
                "scattering grid needs n ≥ 6, got {n}"
            )));
        }
        if n > 255 {
            return Err(Error::BadInput("scattering grid too large".into()));
        }
        let grid = Lattice::new(n, v.support_radius);
        let coords = grid.coords();
        let np = grid.len();
        let mut cells = Vec::new();
        let mut vals = Vec::new();
        let mut lookup = vec![0u32; np.pow(6)];
        let mut idx = [0usize; 6];
        let mut flat = 0usize;
        let shape_zero = v.lambda == 0.0;
        loop {
            let x: P6 = std::array::from_fn(|d| coords[idx[d]]);
            // the active set is the support of the shape, so that it does not
            // depend on λ (and λ = 0 still has a well-defined grid)
            let s = v.shape(&x);
            if s > 0.0 {
                cells.push(idx.map(|i| i as u8));
                vals.push(if shape_zero { 0.0 } else { v.eval(&x) });
                lookup[flat] = cells.len() as u32;
            }
            flat += 1;
            if !next_index(&mut idx, np) {
                break;
            }
        }
        let xs = std::array::from_fn(|d| cells.iter().map(|c| coords[c[d] as usize]).collect());
        let ms = std::array::from_fn(|d| cells.iter().map(|c| c[d] as f64).collect());
        let h = grid.h;
        let g = GreensKernel::six();
        Ok(Self {
            grid,
            cells,
            xs,
            ms,
            v: vals,
            lookup,
            self_weight: cell_average6(h),
            pair_weight: h.powi(6) * g.c,
        })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn h(&self) -> f64 {
        self.grid.h
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(6)
    }

    pub fn point(&self, i: usize) -> P6 {
        std::array::from_fn(|d| self.xs[d][i])
    }

    /// h⁶ Σ V — the discrete ∫V.
    pub fn integral_v(&self) -> f64 {
        self.cell_volume() * par::sum_by(self.len(), |i| self.v[i])
    }

    /// y = K₆x on the active cells.
    pub fn apply_k(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        assert!(x.len() == n && y.len() == n);
        // With d = h·Δm: |M⁻¹d|² = (4/3)h²Q, Q = |Δa|² − Δa·Δb + |Δb|².
        let h = self.h();
        let pref = self.pair_weight / ((4.0 / 3.0) * h * h).powi(2);
        let ms = &self.ms;
        let sw = self.self_weight;
        par::fill(y, |i| {
            let mi: [f64; 6] = std::array::from_fn(|d| ms[d][i]);
            let acc = inv_q2_sum(&mi, ms, x, 0..i) + inv_q2_sum(&mi, ms, x, i + 1..n);
            pref * acc + sw * x[i]
        });
    }

    /// ⟨f, K₆ g⟩ with the quadrature weights.
    pub fn form(&self, f: &[f64], g: &[f64]) -> f64 {
        let mut kg = vec![0.0; self.len()];
        self.apply_k(g, &mut kg);
        self.cell_volume() * par::dot(f, &kg)
    }

    /// Index of the active cell containing x, if any.
    pub fn cell_of(&self, x: &P6) -> Option<usize> {
        let np = self.grid.len();
        let mut flat = 0usize;
        for &t in x {
            flat = flat * np + self.grid.index_of(t)?;
        }
        match self.lookup[flat] {
            0 => None,
            k => Some(k as usize - 1),
        }
    }

    /// Σ_j w_j(x) ρ_j: the discrete Green's representation at any point.
    pub fn potential_at(&self, rho: &[f64], x: &P6) -> f64 {
        let own = self.cell_of(x);
        let xs = &self.xs;
        let n = self.len();
        // |M⁻¹d|² = (4/3)·q
        let pref = self.pair_weight / (16.0 / 9.0);
        match own {
            Some(k) => {
                let acc = inv_q2_sum(x, xs, rho, 0..k) + inv_q2_sum(x, xs, rho, k + 1..n);
                pref * acc + self.self_weight * rho[k]
            }
            None => pref * inv_q2_sum(x, xs, rho, 0..n),
        }
    }

    /// Solves ρ + V K₆ ρ = V.
    pub fn solve(&self, tol: f64, max_iter: usize) -> Result<ScatteringSolution6> {
        let n = self.len();
        let sv: Vec<f64> = self.v.iter().map(|v| v.sqrt()).collect();
        let mut u = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let stats = {
            let apply = |x: &[f64], y: &mut [f64]| {
                let mut w = vec![0.0; n];
                for i in 0..n {
                    w[i] = sv[i] * x[i];
                }
                self.apply_k(&w, y);
                for i in 0..n {
                    y[i] = x[i] + sv[i] * y[i];
                }
            };
            cg::pcg(apply, cg::identity, &sv, &mut u, tol, max_iter)?
        };
        let rho: Vec<f64> = (0..n).map(|i| sv[i] * u[i]).collect();
        if rho.iter().any(|&r| r != 0.0) {
            self.apply_k(&rho, &mut tmp);
        }
        let omega_grid = tmp;
        let sol = ScatteringSolution6 {
            nys: self.clone(),
            b_m: self.cell_volume() * par::sum_by(n, |i| rho[i]),
            rho,
            omega_grid,
            cg: stats,
        };
        sol.check_brackets()?;
        Ok(sol)
    }
}

/// Σ_{j∈r} w_j / q(p − y_j)² with q(a, b) = |a|² − a·b + |b|². Written over
/// equal-length slices so the loop vectorises.
#[inline]
fn inv_q2_sum(p: &[f64; 6], ys: &[Vec<f64>; 6], w: &[f64], r: std::ops::Range<usize>) -> f64 {
    const L: usize = 8;
    #[inline(always)]
    fn term(p: &[f64; 6], y: [f64; 6], w: f64) -> f64 {
        let a0 = p[0] - y[0];
        let a1 = p[1] - y[1];
        let a2 = p[2] - y[2];
        let b0 = p[3] - y[3];
        let b1 = p[4] - y[4];
        let b2 = p[5] - y[5];
        let q = a0 * (a0 - b0) + a1 * (a1 - b1) + a2 * (a2 - b2) + b0 * b0 + b1 * b1 + b2 * b2;
        w / (q * q)
    }
    let mut acc = [0.0f64; L];
    let full = r.start + (r.len() / L) * L;
    for c in (r.start..full).step_by(L) {
        let y: [&[f64; L]; 6] = std::array::from_fn(|d| ys[d][c..c + L].try_into().unwrap());
        let wc: &[f64; L] = w[c..c + L].try_into().unwrap();
        for k in 0..L {
            acc[k] += term(p, std::array::from_fn(|d| y[d][k]), wc[k]);
        }
    }
    let mut tail = 0.0;
    for j in full..r.end {
        tail += term(p, std::array::from_fn(|d| ys[d][j]), w[j]);
    }
    acc.iter().sum::<f64>() + tail
}

/// ρ, ω on the grid, b_M and a far-field evaluator.
#[derive(Debug, Clone)]
pub struct ScatteringSolution6 {
    pub nys: Nystrom6,
    pub rho: Vec<f64>,
    /// ω = K₆ρ at the active cells
    pub omega_grid: Vec<f64>,
    pub b_m: f64,
    pub cg: CgStats,
}

/// Tolerance of the bracket assertions, relative to max V.
pub const BRACKET_TOL: f64 = 1e-10;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 500;

/// Solves the scattering problem for V on an n⁶ support grid.
pub fn solve_omega(v: &PotentialModel, n: usize) -> Result<ScatteringSolution6> {
    Nystrom6::new(v, n)?.solve(DEFAULT_TOL, DEFAULT_MAX_ITER)
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct Brackets {
    pub min_rho: f64,
    pub max_rho_minus_v: f64,
    pub min_omega: f64,
    pub max_omega: f64,
}

impl ScatteringSolution6 {
    pub fn lambda_zero(&self) -> bool {
        self.nys.v.iter().all(|&v| v == 0.0)
    }

    pub fn brackets(&self) -> Brackets {
        let n = self.rho.len();
        let mut b = Brackets {
            min_rho: f64::INFINITY,
            max_rho_minus_v: f64::NEG_INFINITY,
            min_omega: f64::INFINITY,
            max_omega: f64::NEG_INFINITY,
        };
        for i in 0..n {
            b.min_rho = b.min_rho.min(self.rho[i]);
            b.max_rho_minus_v = b.max_rho_minus_v.max(self.rho[i] - self.nys.v[i]);
            b.min_omega = b.min_omega.min(self.omega_grid[i]);
            b.max_omega = b.max_omega.max(self.omega_grid[i]);
        }
        b
    }

    /// 0 ≤ ρ ≤ V and 0 ≤ ω ≤ 1 on every grid cell.
    pub fn check_brackets(&self) -> Result<()> {
        let vmax = self.nys.v.iter().cloned().fold(0.0, f64::max);
        let b = self.brackets();
        let tol = BRACKET_TOL * vmax.max(f64::MIN_POSITIVE);
        if self.rho.is_empty() {
            return Ok(());
        }
        if b.min_rho < -tol {
            return Err(Error::Invariant(format!(
                "rho >= 0 violated: min rho = {:e}",
                b.min_rho
            )));
        }
        if b.max_rho_minus_v > tol {
            return Err(Error::Invariant(format!(
                "rho <= V violated by {:e}",
                b.max_rho_minus_v
            )));
        }
        if b.min_omega < -BRACKET_TOL || b.max_omega > 1.0 + BRACKET_TOL {
            return Err(Error::Invariant(format!(
                "0 <= omega <= 1 violated: [{:e}, {:e}]",
                b.min_omega, b.max_omega
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.nys.grid.n
    }

    pub fn h(&self) -> f64 {
        self.nys.h()
    }

    /// ω(x) from the Green's representation; uses the self-cell weight when
    /// x falls in an active cell.
    pub fn omega_at(&self, x: &P6) -> f64 {
        self.nys.potential_at(&self.rho, x)
    }

    pub fn omega_many(&self, xs: &[P6]) -> Vec<f64> {
        let mut out = vec![0.0; xs.len()];
        par::fill(&mut out, |k| self.omega_at(&xs[k]));
        out
    }

    /// V_eff(a) = ∫ρ(a, b) db on the induced 3-D grid.
    pub fn effective_potential(&self) -> Field3 {
        self.marginal(&self.rho)
    }

    /// ∫V(a, b) db on the induced 3-D grid — the ω-free V_eff.
    pub fn marginal_v(&self) -> Field3 {
        self.marginal(&self.nys.v)
    }

    fn marginal(&self, f: &[f64]) -> Field3 {
        let np = self.nys.grid.len();
        let h = self.h();
        let mut values = vec![0.0; np * np * np];
        for (i, c) in self.nys.cells.iter().enumerate() {
            let k = (c[0] as usize * np + c[1] as usize) * np + c[2] as usize;
            values[k] += f[i];
        }
        values.iter_mut().for_each(|v| *v *= h * h * h);
        Field3 {
            grid: self.nys.grid,
            values,
        }
    }

    /// Writes ρ on the full (2m+1)⁶ lattice (zeros off the support).
    pub fn save(&self, path: &Path) -> Result<()> {
        let n = self.n();
        let np = self.nys.grid.len();
        let mut full = vec![0.0f64; np.pow(6)];
        for (i, c) in self.nys.cells.iter().enumerate() {
            let mut flat = 0;
            for d in 0..6 {
                flat = flat * np + c[d] as usize;
            }
            full[flat] = self.rho[i];
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(RHO_MAGIC)?;
        f.write_all(&(n as u64).to_le_bytes())?;
        f.write_all(&self.h().to_le_bytes())?;
        for _ in 0..6 {
            f.write_all(&0f64.to_le_bytes())?;
        }
        for v in &full {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads ρ back; V must be the potential it was solved for.
    pub fn load(path: &Path, v: &PotentialModel) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let header = 8 + 8 + 8 + 48;
        if bytes.len() < header || &bytes[..8] != RHO_MAGIC {
            return Err(Error::BadInput(format!(
                "{}: not a GP3RHO1 file",
                path.display()
            )));
        }
        let rd = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let h = rd(16);
        let center: Vec<f64> = (0..6).map(|d| rd(24 + 8 * d)).collect();
        if center.iter().any(|&c| c != 0.0) {
            return Err(Error::BadInput(
                "only origin-centred grids are supported".into(),
            ));
        }
        let nys = Nystrom6::new(v, n)?;
        let np = nys.grid.len();
        if bytes.len() != header + 8 * np.pow(6) {
            return Err(Error::BadInput("GP3RHO1 payload length mismatch".into()));
        }
        if (nys.h() - h).abs() > 1e-12 * h {
            return Err(Error::BadInput(format!(
                "grid spacing {h} in file does not match the potential's grid {}",
                nys.h()
            )));
        }
        let mut rho = vec![0.0; nys.len()];
        for (i, c) in nys.cells.iter().enumerate() {
            let mut flat = 0;
            for d in 0..6 {
                flat = flat * np + c[d] as usize;
            }
            rho[i] = rd(header + 8 * flat);
        }
        let mut omega_grid = vec![0.0; nys.len()];
        nys.apply_k(&rho, &mut omega_grid);
        let b_m = nys.cell_volume() * par::sum_by(rho.len(), |i| rho[i]);
        Ok(Self {
            nys,
            rho,
            omega_grid,
            b_m,
            cg: CgStats {
                iterations: 0,
                relative_residual: f64::NAN,
            },
        })
    }
}

/// A scalar field on a cubic lattice in ℝ³.
#[derive(Debug, Clone, PartialEq)]
pub struct Field3 {
    pub grid: Lattice,
    /// row-major values, grid.len()³ of them
    pub values: Vec<f64>,
}

impl Field3 {
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.h.powi(3)
    }

    pub fn scaled(&self, c: f64) -> Field3 {
        Field3 {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn point(&self, k: usize) -> [f64; 3] {
        let n = self.grid.len();
        [
            self.grid.coord(k / (n * n)),
            self.grid.coord((k / n) % n),
            self.grid.coord(k % n),
        ]
    }
}

/// Richardson extrapolation assuming an h² leading error; returns the
/// extrapolated value and |fine − coarse| as its error bar.
pub fn richardson(coarse: f64, n_coarse: usize, fine: f64, n_fine: usize) -> (f64, f64) {
    let r = (n_fine as f64 / n_coarse as f64).powi(2);
    ((r * fine - coarse) / (r - 1.0), (fine - coarse).abs())
}
