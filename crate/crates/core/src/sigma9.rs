//! The four-body correction σ(V) = ⟨f, (−2Δ_{M_*} + 𝕍)⁻¹ f⟩ with
//! f(x₁,x₂,x₃) = V(x₁,x₂)·ω(x₂,x₃).
//!
//! Two routes:
//!
//! * Monte Carlo for the first two resolvent terms. With A = −2Δ_{M_*} and
//!   B = 𝕍 ⪰ 0 one has A⁻¹ − A⁻¹BA⁻¹ ⪯ (A+B)⁻¹ ⪯ A⁻¹, so
//!   B₁ − B₂ ≤ σ ≤ B₁ with B₁ = ⟨f, Gf⟩, B₂ = ⟨Gf, 𝕍 Gf⟩.
//! * A small Dirichlet finite-difference grid on [−L, L]⁹ for the cut-off
//!   σ_ℓ, used as an oracle. Its matrix is an M-matrix, so the discrete
//!   solution obeys the same comparison bounds 0 ≤ η ≤ (−2Δ)⁻¹f_ℓ.

use crate::cg::{self, CgStats};
use crate::error::{Error, Result};
use crate::greens::{gamma_9_2, GreensKernel, ModifiedMetric};
use crate::par;
use crate::potential::{PotentialModel, P6};
use crate::scatter6::ScatteringSolution6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Serialize;
use std::f64::consts::PI;

pub type P9 = [f64; 9];

/// Any single MC contribution above this multiple of the running mean aborts.
pub const WEIGHT_ABORT: f64 = 1e6;

fn pair(a: &[f64], b: &[f64]) -> P6 {
    [a[0], a[1], a[2], b[0], b[1], b[2]]
}

/// 𝕍(x₁,x₂,x₃) = V(x₁,x₂) + V(x₁,x₃) + V(x₂,x₃) + V(x₂−x₁, x₃−x₁).
#[derive(Debug, Clone)]
pub struct NinePotential {
    pub v: PotentialModel,
}

impl NinePotential {
    pub fn new(v: &PotentialModel) -> Self {
        Self { v: v.clone() }
    }

    pub fn terms(&self, x: &P9) -> [f64; 4] {
        let (x1, x2, x3) = (&x[0..3], &x[3..6], &x[6..9]);
        let d2 = [x2[0] - x1[0], x2[1] - x1[1], x2[2] - x1[2]];
        let d3 = [x3[0] - x1[0], x3[1] - x1[1], x3[2] - x1[2]];
        [
            self.v.eval(&pair(x1, x2)),
            self.v.eval(&pair(x1, x3)),
            self.v.eval(&pair(x2, x3)),
            self.v.eval(&pair(&d2, &d3)),
        ]
    }

    pub fn eval(&self, x: &P9) -> f64 {
        self.terms(x).iter().sum()
    }
}

/// Smooth step: 1 on [0, 1/3], 0 on [1/2, ∞), C^∞ in between.
pub fn cutoff_1d(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 / 3.0 {
        return 1.0;
    }
    if t >= 0.5 {
        return 0.0;
    }
    let s = (t - 1.0 / 3.0) * 6.0;
    let psi = |u: f64| if u > 0.0 { (-1.0 / u).exp() } else { 0.0 };
    let a = psi(1.0 - s);
    a / (a + psi(s))
}

/// χ(y) on ℝ⁶ as a product of 1-D steps: 1 for |y|_∞ ≤ 1/3, 0 for |y|_∞ ≥ 1/2.
pub fn chi(y: &P6) -> f64 {
    y.iter().map(|&t| cutoff_1d(t)).product()
}

/// f = V(x₁,x₂)·ω(x₂,x₃), optionally multiplied by χ((x₂,x₃)/ℓ).
#[derive(Clone, Copy)]
pub struct SourceF<'a> {
    pub v: &'a PotentialModel,
    pub sol: &'a ScatteringSolution6,
    pub ell: Option<f64>,
}

impl<'a> SourceF<'a> {
    pub fn new(v: &'a PotentialModel, sol: &'a ScatteringSolution6) -> Self {
        Self { v, sol, ell: None }
    }

    pub fn with_cutoff(self, ell: f64) -> Self {
        Self {
            ell: Some(ell),
            ..self
        }
    }

    pub fn cutoff(&self, x23: &P6) -> f64 {
        match self.ell {
            None => 1.0,
            Some(l) => chi(&x23.map(|t| t / l)),
        }
    }

    pub fn eval(&self, x: &P9) -> f64 {
        let a = self.v.eval(&pair(&x[0..3], &x[3..6]));
        if a == 0.0 {
            return 0.0;
        }
        let x23 = pair(&x[3..6], &x[6..9]);
        let c = self.cutoff(&x23);
        if c == 0.0 {
            return 0.0;
        }
        a * c * self.sol.omega_at(&x23)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct McConfig {
    pub samples_b1: usize,
    pub samples_b2: usize,
    pub seed: u64,
    /// inner radius of the polar displacement law
    pub r0: f64,
    /// exponential scale of the polar displacement law
    pub tail: f64,
    /// scale of the (1 + r/r_s)⁻⁴ law for the free coordinate
    pub r_s: f64,
    pub block: usize,
}

impl McConfig {
    /// Default scales: f = Vω lives well inside R_V, so the proposals are
    /// tighter than the support (tuned for variance on the default bump).
    pub const SCALES: (f64, f64, f64) = (0.5, 0.5, 0.25);

    pub fn for_potential(v: &PotentialModel, samples: usize, seed: u64) -> Self {
        Self::with_scales(v, samples, seed, Self::SCALES)
    }

    /// `scales` = (r₀, L, r_s) in units of R_V.
    pub fn with_scales(
        v: &PotentialModel,
        samples: usize,
        seed: u64,
        scales: (f64, f64, f64),
    ) -> Self {
        let r = v.support_radius;
        Self {
            samples_b1: samples,
            samples_b2: samples,
            seed,
            r0: scales.0 * r,
            tail: scales.1 * r,
            r_s: scales.2 * r,
            block: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct BornEstimate {
    pub term: &'static str,
    pub samples: usize,
    pub mean: f64,
    pub stderr: f64,
    pub max_weight: f64,
    pub seed: u64,
}

impl BornEstimate {
    fn zero(term: &'static str, samples: usize, seed: u64) -> Self {
        Self {
            term,
            samples,
            mean: 0.0,
            stderr: 0.0,
            max_weight: 0.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Born2Estimate {
    pub total: BornEstimate,
    /// contributions of V(x₁,x₂), V(x₁,x₃), V(x₂,x₃), V(x₂−x₁,x₃−x₁)
    pub summands: [BornEstimate; 4],
}

/// The proposals shared by both Born terms.
struct Sampler<'a> {
    f: SourceF<'a>,
    kernel: GreensKernel,
    metric: ModifiedMetric,
    int_v: f64,
    cfg: &'a McConfig,
    gamma2: Gamma<f64>,
    rho_norm: f64,
    sphere8: f64,
}

const S_FREE: [&str; 4] = ["B2[x1,x2]", "B2[x1,x3]", "B2[x2,x3]", "B2[rel]"];

impl<'a> Sampler<'a> {
    fn new(f: SourceF<'a>, cfg: &'a McConfig) -> Result<Self> {
        if !(cfg.r0 > 0.0 && cfg.tail > 0.0 && cfg.r_s > 0.0) {
            return Err(Error::BadInput("MC scales must be positive".into()));
        }
        let (r0, l) = (cfg.r0, cfg.tail);
        let a = r0 / l;
        // ∫ r·min(1, r₀/r)·e^{−r/L} dr
        let rho_norm = l * l * (1.0 - (-a).exp() * (1.0 + a)) + r0 * l * (-a).exp();
        Ok(Self {
            f,
            kernel: GreensKernel::nine(),
            metric: ModifiedMetric::m_star(),
            int_v: f.v.integral(),
            cfg,
            gamma2: Gamma::new(2.0, l).expect("positive scale"),
            rho_norm,
            sphere8: 2.0 * PI.powf(4.5) / gamma_9_2(),
        })
    }

    fn s_density(&self, r: f64) -> f64 {
        let rs = self.cfg.r_s;
        (1.0 + r / rs).powi(-4) / (4.0 * PI * rs.powi(3) / 3.0)
    }

    /// y ∈ ℝ³ with density s(|y|).
    fn sample_free(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        // u/(1+u) ~ Beta(3,1)
        let t: f64 = rng.random::<f64>().cbrt();
        let r = self.cfg.r_s * t / (1.0 - t);
        let d = unit_vector::<3>(rng);
        d.map(|c| c * r)
    }

    fn h_density(&self, x: &P9) -> f64 {
        let v = self.f.v.eval(&pair(&x[0..3], &x[3..6]));
        if v == 0.0 {
            return 0.0;
        }
        v / self.int_v * self.s_density(dist3(&x[6..9], &x[3..6]))
    }

    fn sample_h(&self, rng: &mut ChaCha8Rng) -> P9 {
        let p = self.f.v.sample(rng);
        let y = self.sample_free(rng);
        [
            p[0],
            p[1],
            p[2],
            p[3],
            p[4],
            p[5],
            p[3] + y[0],
            p[4] + y[1],
            p[5] + y[2],
        ]
    }

    fn rho_r(&self, r: f64) -> f64 {
        r * (self.cfg.r0 / r).min(1.0) * (-r / self.cfg.tail).exp() / self.rho_norm
    }

    fn sample_polar(&self, rng: &mut ChaCha8Rng) -> P9 {
        let r = loop {
            let r = self.gamma2.sample(rng);
            if r <= self.cfg.r0 || rng.random::<f64>() * r < self.cfg.r0 {
                break r;
            }
        };
        let th = unit_vector::<9>(rng).map(|c| c * r);
        let d = self.metric.apply_sqrt(&th);
        std::array::from_fn(|i| d[i])
    }

    fn polar_density(&self, d: &P9) -> f64 {
        let r = self.metric.inv_norm2(d).sqrt();
        // |det M_*| = 2^{-3/2}
        self.rho_r(r) / (r.powi(8) * self.sphere8 * self.metric.det())
    }

    /// One-sample unbiased estimate of (Gf)(z).
    fn inner(&self, z: &P9, rng: &mut ChaCha8Rng) -> f64 {
        let y = if rng.random::<bool>() {
            let d = self.sample_polar(rng);
            std::array::from_fn(|i| z[i] - d[i])
        } else {
            self.sample_h(rng)
        };
        let fy = self.f.eval(&y);
        if fy == 0.0 {
            return 0.0;
        }
        let d: P9 = std::array::from_fn(|i| z[i] - y[i]);
        let p = 0.5 * self.polar_density(&d) + 0.5 * self.h_density(&y);
        self.kernel.eval_unchecked(&d) * fy / p
    }

    fn born1_sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let x = self.sample_h(rng);
        let fx = self.f.eval(&x);
        if fx == 0.0 {
            return 0.0;
        }
        fx / self.h_density(&x) * self.inner(&x, rng)
    }

    fn born2_sample(&self, which: usize, rng: &mut ChaCha8Rng) -> f64 {
        let p = self.f.v.sample(rng);
        let y = self.sample_free(rng);
        let (a, b) = ([p[0], p[1], p[2]], [p[3], p[4], p[5]]);
        let add = |u: &[f64; 3], v: &[f64; 3]| [u[0] + v[0], u[1] + v[1], u[2] + v[2]];
        let (z1, z2, z3) = match which {
            0 => (a, b, add(&b, &y)),
            1 => (a, add(&b, &y), b),
            2 => (add(&a, &y), a, b),
            _ => (y, add(&y, &a), add(&y, &b)),
        };
        let z: P9 = [
            z1[0], z1[1], z1[2], z2[0], z2[1], z2[2], z3[0], z3[1], z3[2],
        ];
        let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
        // 𝕍_s(Z)/q_s(Z) = ∫V / s(|y|)
        let pre = self.int_v / self.s_density(r);
        let g1 = self.inner(&z, rng);
        if g1 == 0.0 {
            return 0.0;
        }
        pre * g1 * self.inner(&z, rng)
    }
}

fn dist3(a: &[f64], b: &[f64]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn unit_vector<const D: usize>(rng: &mut ChaCha8Rng) -> [f64; D] {
    loop {
        let g: [f64; D] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-300 {
            return g.map(|x| x / n);
        }
    }
}

#[derive(Clone, Copy, Default)]
struct Acc {
    n: usize,
    sum: f64,
    sum2: f64,
    max: f64,
}

/// Runs `samples` draws in fixed blocks, each block on its own ChaCha
/// stream, and merges block sums in block order.
fn run_term<F>(
    term: &'static str,
    stream: u64,
    samples: usize,
    cfg: &McConfig,
    draw: F,
) -> Result<BornEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync + Send,
{
    let block = cfg.block.max(1);
    let nblocks = samples.div_ceil(block);
    let blocks = par::map_chunks(nblocks, 1, |r| {
        let b = r.start;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream((stream << 40) | b as u64);
        let mut acc = Acc::default();
        for _ in b * block..((b + 1) * block).min(samples) {
            let w = draw(&mut rng);
            acc.n += 1;
            acc.sum += w;
            acc.sum2 += w * w;
            acc.max = acc.max.max(w.abs());
        }
        acc
    });
    let mut tot = Acc::default();
    for a in blocks {
        tot.n += a.n;
        tot.sum += a.sum;
        tot.sum2 += a.sum2;
        tot.max = tot.max.max(a.max);
        let mean = tot.sum / tot.n as f64;
        if !a.max.is_finite() || (a.max > 0.0 && a.max > WEIGHT_ABORT * mean.abs()) {
            return Err(Error::UnboundedWeight {
                term: term.to_string(),
                weight: a.max,
                mean,
            });
        }
    }
    let n = tot.n.max(1) as f64;
    let mean = tot.sum / n;
    let var = if tot.n > 1 {
        ((tot.sum2 / n - mean * mean) * n / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(BornEstimate {
        term,
        samples,
        mean,
        stderr: (var / n).sqrt(),
        max_weight: tot.max,
        seed: cfg.seed,
    })
}

/// B₁ = ∫∫ f(X) G(X−Y) f(Y) dX dY.
pub fn born1(f: SourceF<'_>, cfg: &McConfig) -> Result<BornEstimate> {
    if f.v.is_zero() {
        return Ok(BornEstimate::zero("B1", cfg.samples_b1, cfg.seed));
    }
    let s = Sampler::new(f, cfg)?;
    run_term("B1", 1, cfg.samples_b1, cfg, |rng| s.born1_sample(rng))
}

/// B₂ = ∫ (Gf)(Z)² 𝕍(Z) dZ, one estimate per summand of 𝕍.
pub fn born2(f: SourceF<'_>, cfg: &McConfig) -> Result<Born2Estimate> {
    if f.v.is_zero() {
        let z = |t| BornEstimate::zero(t, cfg.samples_b2, cfg.seed);
        return Ok(Born2Estimate {
            total: z("B2"),
            summands: S_FREE.map(z),
        });
    }
    let s = Sampler::new(f, cfg)?;
    let mut parts = Vec::with_capacity(4);
    for (k, name) in S_FREE.iter().enumerate() {
        parts.push(run_term(name, 2 + k as u64, cfg.samples_b2, cfg, |rng| {
            s.born2_sample(k, rng)
        })?);
    }
    let summands: [BornEstimate; 4] = parts.try_into().expect("four summands");
    let total = BornEstimate {
        term: "B2",
        samples: cfg.samples_b2,
        mean: summands.iter().map(|e| e.mean).sum(),
        stderr: summands
            .iter()
            .map(|e| e.stderr * e.stderr)
            .sum::<f64>()
            .sqrt(),
        max_weight: summands.iter().map(|e| e.max_weight).fold(0.0, f64::max),
        seed: cfg.seed,
    };
    Ok(Born2Estimate { total, summands })
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaEstimate {
    pub b1: BornEstimate,
    pub b2: Born2Estimate,
    pub lower: f64,
    pub upper: f64,
    /// midpoint of the bracket
    pub value: f64,
    /// half-width of the bracket plus the combined MC standard error
    pub error: f64,
    pub stderr: f64,
    pub seed: u64,
}

impl SigmaEstimate {
    /// Whether `x` lies in [B₁ − B₂ − k·err, B₁ + k·err].
    pub fn contains(&self, x: f64, k: f64) -> bool {
        x >= self.lower - k * self.stderr && x <= self.upper + k * self.b1.stderr
    }

    pub fn csv_rows(&self) -> Vec<BornEstimate> {
        let mut v = vec![self.b1, self.b2.total];
        v.extend(self.b2.summands);
        v
    }
}

pub fn sigma_bracket(
    v: &PotentialModel,
    sol: &ScatteringSolution6,
    cfg: &McConfig,
) -> Result<SigmaEstimate> {
    let f = SourceF::new(v, sol);
    let b1 = born1(f, cfg)?;
    let b2 = born2(f, cfg)?;
    let stderr = (b1.stderr.powi(2) + b2.total.stderr.powi(2)).sqrt();
    if b2.total.mean > b1.mean + 3.0 * stderr {
        return Err(Error::BracketInverted {
            b1: b1.mean,
            b2: b2.total.mean,
            err: stderr,
        });
    }
    let lower = b1.mean - b2.total.mean;
    let upper = b1.mean;
    Ok(SigmaEstimate {
        lower,
        upper,
        value: 0.5 * (lower + upper),
        error: 0.5 * (upper - lower) + stderr,
        stderr,
        seed: cfg.seed,
        b1,
        b2,
    })
}

// ---------------------------------------------------------------------------
// grid oracle

pub const GRID_TOL: f64 = 1e-12;
pub const DEFAULT_BUDGET: u64 = 4 << 30;
/// vectors held during a grid solve: f, 𝕍, η, the bound field, CG workspace
const GRID_VECTORS: u64 = 9;

#[derive(Debug, Clone, Serialize)]
pub struct GridSigma {
    pub ell: f64,
    pub half_width: f64,
    pub n: usize,
    pub h: f64,
    /// σ_ℓ = ⟨f_ℓ, η_ℓ⟩
    pub value: f64,
    /// ⟨f_ℓ, (−2Δ)⁻¹ f_ℓ⟩, the discrete B₁
    pub upper: f64,
    pub min_eta: f64,
    /// max(η − ζ) / max ζ with ζ = (−2Δ)⁻¹ f_ℓ; ≤ 0 when the bound holds
    pub bound_violation: f64,
    pub q0: f64,
    pub q_eta: f64,
    /// |Q(0) − Q(η) − σ_ℓ| / σ_ℓ
    pub q_audit: f64,
    pub cg_eta: usize,
    pub cg_bound: usize,
}

/// Cell-centred n⁹ grid on [−L, L]⁹ with zero Dirichlet data outside.
struct Grid9 {
    n: usize,
    h: f64,
    half: f64,
    strides: [usize; 9],
    len: usize,
}

impl Grid9 {
    fn new(n: usize, half: f64) -> Self {
        let mut strides = [0; 9];
        let mut s = 1;
        for a in (0..9).rev() {
            strides[a] = s;
            s *= n;
        }
        Self {
            n,
            h: 2.0 * half / n as f64,
            half,
            strides,
            len: s,
        }
    }

    fn coord(&self, i: usize) -> f64 {
        -self.half + (i as f64 + 0.5) * self.h
    }

    fn digits(&self, mut p: usize) -> [usize; 9] {
        let mut d = [0; 9];
        for a in (0..9).rev() {
            d[a] = p % self.n;
            p /= self.n;
        }
        d
    }

    /// −2Δ_h u + w·u with the 18 axis neighbours and the 6 (1,1,1)-diagonal
    /// neighbours per point; all off-diagonal entries are −1/h².
    fn apply(&self, w: Option<&[f64]>, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        let inv = 1.0 / (self.h * self.h);
        let diag_stride: [usize; 3] =
            std::array::from_fn(|c| self.strides[c] + self.strides[3 + c] + self.strides[6 + c]);
        let chunk = n * n * n;
        let parts = par::map_chunks(self.len, chunk, |r| {
            let mut d = self.digits(r.start);
            let mut o = Vec::with_capacity(r.len());
            for p in r {
                let mut nb = 0.0;
                for a in 0..9 {
                    let s = self.strides[a];
                    if d[a] > 0 {
                        nb += u[p - s];
                    }
                    if d[a] + 1 < n {
                        nb += u[p + s];
                    }
                }
                for c in 0..3 {
                    let s = diag_stride[c];
                    let (i, j, k) = (d[c], d[3 + c], d[6 + c]);
                    if i > 0 && j > 0 && k > 0 {
                        nb += u[p - s];
                    }
                    if i + 1 < n && j + 1 < n && k + 1 < n {
                        nb += u[p + s];
                    }
                }
                let mut v = (24.0 * u[p] - nb) * inv;
                if let Some(w) = w {
                    v += w[p] * u[p];
                }
                o.push(v);
                // odometer increment
                for a in (0..9).rev() {
                    d[a] += 1;
                    if d[a] < n {
                        break;
                    }
                    d[a] = 0;
                }
            }
            o
        });
        let mut off = 0;
        for part in parts {
            out[off..off + part.len()].copy_from_slice(&part);
            off += part.len();
        }
    }
}

/// Bytes a grid solve with n points per axis needs.
pub fn grid_memory(n: usize) -> u64 {
    GRID_VECTORS * 8 * (n as u64).pow(9)
}

/// Default box for cut-off ℓ: the support of f_ℓ plus one interaction range.
pub fn default_half_width(v: &PotentialModel, ell: f64) -> f64 {
    0.5 * ell + v.support_radius
}

pub fn sigma_grid(
    v: &PotentialModel,
    sol: &ScatteringSolution6,
    ell: f64,
    half_width: f64,
    n: usize,
    budget: u64,
) -> Result<GridSigma> {
    if !(2..=8).contains(&n) {
        return Err(Error::BadInput(format!(
            "grid points per axis must be in 2..=8, got {n}"
        )));
    }
    if !(ell > 0.0 && half_width > 0.0) {
        return Err(Error::BadInput("cutoff and box must be positive".into()));
    }
    let need = grid_memory(n);
    if need > budget {
        return Err(Error::MemoryBudget { need, budget });
    }
    let g = Grid9::new(n, half_width);
    let src = SourceF::new(v, sol).with_cutoff(ell);
    let nine = NinePotential::new(v);
    let n3 = n * n * n;
    let n6 = n3 * n3;
    let c = |i: usize| g.coord(i);
    let point3 = |k: usize| [c(k / (n * n)), c(k / n % n), c(k % n)];

    // f_ℓ factorises as V(x₁,x₂)·[χω](x₂,x₃): tabulate both 6-D factors
    let mut v12 = vec![0.0; n6];
    par::fill(&mut v12, |k| {
        v.eval(&pair(&point3(k / n3), &point3(k % n3)))
    });
    let mut cw = vec![0.0; n6];
    par::fill(&mut cw, |k| {
        let x = pair(&point3(k / n3), &point3(k % n3));
        let cut = src.cutoff(&x);
        if cut == 0.0 || v.is_zero() {
            0.0
        } else {
            cut * sol.omega_at(&x)
        }
    });
    let mut f = vec![0.0; g.len];
    par::fill(&mut f, |p| v12[p / n3] * cw[p % n6]);
    let mut w = vec![0.0; g.len];
    par::fill(&mut w, |p| {
        let (i1, i2, i3) = (p / n6, p / n3 % n3, p % n3);
        let x1 = point3(i1);
        let (d2, d3) = (point3(i2), point3(i3));
        let rel = [
            d2[0] - x1[0],
            d2[1] - x1[1],
            d2[2] - x1[2],
            d3[0] - x1[0],
            d3[1] - x1[1],
            d3[2] - x1[2],
        ];
        v12[p / n3] + v12[i1 * n3 + i3] + v12[p % n6] + nine.v.eval(&rel)
    });
    drop(v12);
    drop(cw);

    let h9 = g.h.powi(9);
    let inv_h2 = 1.0 / (g.h * g.h);

    let mut eta = vec![0.0; g.len];
    let st_eta: CgStats = cg::pcg(
        |u, o| g.apply(Some(&w), u, o),
        |r: &[f64], z: &mut [f64]| par::fill(z, |p| r[p] / (24.0 * inv_h2 + w[p])),
        &f,
        &mut eta,
        GRID_TOL,
        2000,
    )?;
    let mut zeta = vec![0.0; g.len];
    let st_bound = cg::pcg(
        |u, o| g.apply(None, u, o),
        |r: &[f64], z: &mut [f64]| par::fill(z, |p| r[p] / (24.0 * inv_h2)),
        &f,
        &mut zeta,
        GRID_TOL,
        2000,
    )?;

    let value = h9 * par::dot(&f, &eta);
    let upper = h9 * par::dot(&f, &zeta);
    let min_eta = eta.iter().cloned().fold(f64::INFINITY, f64::min);
    let zmax = zeta.iter().cloned().fold(0.0, f64::max);
    let viol = par::map_chunks(g.len, par::CHUNK, |r| {
        r.map(|p| eta[p] - zeta[p])
            .fold(f64::NEG_INFINITY, f64::max)
    })
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    let bound_violation = if zmax > 0.0 { viol / zmax } else { 0.0 };

    // Q(φ) = ⟨φ, −2Δφ⟩ + Σ 𝕍 (f/𝕍 − φ)², assembled from scratch
    let q_pot = |phi: &[f64]| {
        h9 * par::sum_by(g.len, |p| {
            if w[p] > 0.0 {
                let d = f[p] / w[p] - phi[p];
                w[p] * d * d
            } else {
                0.0
            }
        })
    };
    let q0 = q_pot(&vec![0.0; g.len]);
    let mut lap = vec![0.0; g.len];
    g.apply(None, &eta, &mut lap);
    let q_eta = h9 * par::dot(&eta, &lap) + q_pot(&eta);
    let q_audit = if value > 0.0 {
        (q0 - q_eta - value).abs() / value
    } else {
        (q0 - q_eta).abs()
    };

    Ok(GridSigma {
        ell,
        half_width,
        n,
        h: g.h,
        value,
        upper,
        min_eta: if min_eta.is_finite() { min_eta } else { 0.0 },
        bound_violation,
        q0,
        q_eta,
        q_audit,
        cg_eta: st_eta.iterations,
        cg_bound: st_bound.iterations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GridLadder {
    pub rungs: Vec<GridSigma>,
    /// ℓ → ∞ estimate
    pub extrapolated: f64,
    pub error: f64,
    /// empirical p in σ_ℓ ≈ σ − Cℓ^{−p}, when the last three rungs allow it
    pub rate: Option<f64>,
}

/// σ_ℓ on a doubling ladder of cut-offs, extrapolated geometrically.
pub fn sigma_grid_ladder(
    v: &PotentialModel,
    sol: &ScatteringSolution6,
    ells: &[f64],
    n: usize,
    budget: u64,
) -> Result<GridLadder> {
    if ells.is_empty() {
        return Err(Error::BadInput("empty cutoff ladder".into()));
    }
    let rungs = ells
        .iter()
        .map(|&l| sigma_grid(v, sol, l, default_half_width(v, l), n, budget))
        .collect::<Result<Vec<_>>>()?;
    let (extrapolated, error, rate) =
        extrapolate_geometric(&rungs.iter().map(|r| r.value).collect::<Vec<_>>(), ells);
    Ok(GridLadder {
        rungs,
        extrapolated,
        error,
        rate,
    })
}

/// Aitken-type tail sum on the last three values of a ladder with a
/// constant ratio of ℓ. Falls back to the last value (error = larger of the last two steps)
/// when the differences are not monotonically shrinking.
pub fn extrapolate_geometric(values: &[f64], ells: &[f64]) -> (f64, f64, Option<f64>) {
    let k = values.len();
    let last = values[k - 1];
    if k < 3 {
        let err = if k == 2 {
            (last - values[0]).abs()
        } else {
            0.0
        };
        return (last, err, None);
    }
    let d1 = values[k - 2] - values[k - 3];
    let d2 = last - values[k - 2];
    let q = d2 / d1;
    if d1 != 0.0 && q > 0.0 && q < 1.0 {
        let tail = d2 * q / (1.0 - q);
        let step = ells[k - 1] / ells[k - 2];
        (last + tail, tail.abs(), Some(-q.ln() / step.ln()))
    } else {
        (last, d1.abs().max(d2.abs()), None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scatter6::solve_omega;

    fn small(lambda: f64) -> (PotentialModel, ScatteringSolution6) {
        let v = PotentialModel::default_bump(lambda);
        let sol = solve_omega(&v, 8).unwrap();
        (v, sol)
    }

    #[test]
    fn cutoff_profile() {
        assert_eq!(cutoff_1d(0.0), 1.0);
        assert_eq!(cutoff_1d(0.33), 1.0);
        assert_eq!(cutoff_1d(0.5), 0.0);
        assert_eq!(cutoff_1d(-0.7), 0.0);
        let mut prev = 1.0;
        for k in 0..=100 {
            let t = 1.0 / 3.0 + k as f64 / 600.0;
            let c = cutoff_1d(t);
            assert!(c <= prev + 1e-15 && (0.0..=1.0).contains(&c));
            prev = c;
        }
        assert!((cutoff_1d(5.0 / 12.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nine_potential_dominates_first_pair() {
        let v = PotentialModel::default_bump(1.0);
        let nine = NinePotential::new(&v);
        let x = [0.2, -0.1, 0.3, 0.1, 0.0, -0.2, 0.4, 0.1, 0.0];
        let t = nine.terms(&x);
        assert!(t.iter().all(|&s| s >= 0.0));
        assert!(nine.eval(&x) >= v.eval(&pair(&x[0..3], &x[3..6])));
        assert!(t[3] > 0.0);
    }

    #[test]
    fn polar_density_integrates_to_one() {
        // ∫ g_polar over ℝ⁹ = ∫ρ_r dr; check the radial normalisation
        let v = PotentialModel::default_bump(1.0);
        let (_, sol) = small(0.0);
        let cfg = McConfig::for_potential(&v, 10, 1);
        let s = Sampler::new(SourceF::new(&v, &sol), &cfg).unwrap();
        let nodes = crate::quad::composite(20, 400, 0.0, 400.0 * cfg.r0);
        let q = crate::quad::integrate(&nodes, |r| s.rho_r(r));
        assert!((q - 1.0).abs() < 1e-8, "{q}");
        // a radial-only test direction: g(D) |D|-shell volume matches ρ_r
        let r: f64 = 1.3;
        let th = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0].map(|c| c * r);
        let d: P9 = std::array::from_fn(|i| s.metric.apply_sqrt(&th)[i]);
        let shell = s.polar_density(&d) * r.powi(8) * s.sphere8 * s.metric.det();
        assert!((shell - s.rho_r(r)).abs() < 1e-14);
        // free-coordinate law
        // substitute r = r_s·t/(1−t)
        let nodes = crate::quad::composite(20, 20, 0.0, 1.0);
        let q3 = crate::quad::integrate(&nodes, |t| {
            let r = cfg.r_s * t / (1.0 - t);
            4.0 * PI * r * r * s.s_density(r) * cfg.r_s / (1.0 - t).powi(2)
        });
        assert!((q3 - 1.0).abs() < 1e-3, "{q3}");
    }

    #[test]
    fn zero_potential_gives_zero() {
        let (v, sol) = small(0.0);
        let cfg = McConfig::for_potential(&v, 1000, 7);
        let s = sigma_bracket(&v, &sol, &cfg).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.error, 0.0);
        assert_eq!(s.b1.stderr, 0.0);
        let g = sigma_grid(&v, &sol, 2.0, 2.0, 3, DEFAULT_BUDGET).unwrap();
        assert_eq!(g.value, 0.0);
        assert_eq!(g.upper, 0.0);
    }

    #[test]
    fn born_terms_are_seed_stable_and_consistent() {
        let (v, sol) = small(0.3);
        let f = SourceF::new(&v, &sol);
        let mut cfg = McConfig::for_potential(&v, 4000, 11);
        let a = born1(f, &cfg).unwrap();
        let a2 = born1(f, &cfg).unwrap();
        assert_eq!(a.mean.to_bits(), a2.mean.to_bits());
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let three = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        assert_eq!(
            one.install(|| born1(f, &cfg).unwrap()).mean.to_bits(),
            three.install(|| born1(f, &cfg).unwrap()).mean.to_bits()
        );
        cfg.seed = 12;
        let b = born1(f, &cfg).unwrap();
        let comb = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!(a.mean > 0.0 && b.mean > 0.0);
        assert!((a.mean - b.mean).abs() <= 3.0 * comb, "{a:?} {b:?}");
    }

    #[test]
    fn born2_summands_nonnegative() {
        let (v, sol) = small(0.3);
        let cfg = McConfig::for_potential(&v, 2000, 5);
        let b = born2(SourceF::new(&v, &sol), &cfg).unwrap();
        for s in &b.summands {
            assert!(s.mean >= -3.0 * s.stderr, "{s:?}");
        }
        let sum: f64 = b.summands.iter().map(|s| s.mean).sum();
        assert!((sum - b.total.mean).abs() <= 1e-15 * sum.abs().max(1.0));
    }

    #[test]
    fn grid_operator_is_an_m_matrix_with_unit_rows() {
        // −2Δ_h applied to the constant field: interior rows vanish
        let g = Grid9::new(4, 1.0);
        let u = vec![1.0; g.len];
        let mut o = vec![0.0; g.len];
        g.apply(None, &u, &mut o);
        assert!(o.iter().all(|&x| x >= -1e-12));
        // a quadratic in the first coordinate: −2Δ_h (x₁²) = −2·2 in the interior
        let quad: Vec<f64> = (0..g.len)
            .map(|p| {
                let d = g.digits(p);
                g.coord(d[0]).powi(2)
            })
            .collect();
        g.apply(None, &quad, &mut o);
        // point with all digits in 1..=2 (interior for both stencils)
        let p = (0..9).fold(0, |acc, _| acc * 4 + 1);
        // axis part gives −2, each diagonal through axis 0 gives −2 more
        assert!((o[p] + 4.0).abs() < 1e-9, "{}", o[p]);
    }

    #[test]
    fn grid_oracle_bounds_and_audit() {
        let (v, sol) = small(0.5);
        let g = sigma_grid(&v, &sol, 2.0 * v.support_radius, 1.2, 4, DEFAULT_BUDGET).unwrap();
        assert!(g.value > 0.0);
        assert!(g.value <= g.upper);
        assert!(g.min_eta >= -1e-12);
        assert!(g.bound_violation <= 1e-8, "{}", g.bound_violation);
        assert!(g.q_eta <= g.q0);
        assert!(g.q_audit <= 1e-6, "{}", g.q_audit);
    }

    #[test]
    fn grid_oracle_rejects_large_grids() {
        let (v, sol) = small(0.5);
        assert!(matches!(
            sigma_grid(&v, &sol, 2.0, 2.0, 8, DEFAULT_BUDGET),
            Err(Error::MemoryBudget { .. })
        ));
    }

    #[test]
    fn geometric_extrapolation() {
        let ells = [2.0, 4.0, 8.0];
        let vals: Vec<f64> = ells.iter().map(|l: &f64| 1.0 - l.powf(-0.5)).collect();
        let (x, _, p) = extrapolate_geometric(&vals, &ells);
        assert!((x - 1.0).abs() < 1e-12);
        assert!((p.unwrap() - 0.5).abs() < 1e-12);
        let (x, e, p) = extrapolate_geometric(&[1.0, 2.0, 1.5], &ells);
        assert_eq!((x, e, p), (1.5, 1.0, None));
    }
}
