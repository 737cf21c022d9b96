//! Three-body potentials V(a, b) on ℝ⁶ = ℝ³ × ℝ³, written in the relative
//! coordinates a = x − y, b = x − z of the three particles.
//!
//! A potential is a base [`Profile`] times a coupling λ, optionally averaged
//! over the six coordinate images that realise the permutations of the three
//! particles.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, OnceLock};

pub type P6 = [f64; 6];

/// Absolute tolerance used when certifying the symmetry identities.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Golden ratio: the support radius of the symmetrised unit bump.
pub const GOLDEN: f64 = 1.618_033_988_749_895;

pub fn norm6(x: &P6) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// A non-negative, compactly supported scalar field on ℝ⁶.
pub trait Profile: Send + Sync + fmt::Debug {
    fn eval(&self, x: &P6) -> f64;
    /// Radius beyond which the profile vanishes.
    fn support_radius(&self) -> f64;
    /// Exact ∫ profile, when known in closed form or as an exact quadrature.
    fn integral(&self) -> f64;
    /// An exact draw from the density ∝ profile.
    fn sample(&self, rng: &mut dyn rand::RngCore) -> P6;
    /// Average of the profile over the six particle-permutation images, if
    /// the profile has a faster route than evaluating all six.
    fn eval_symmetrized(&self, _x: &P6) -> Option<f64> {
        None
    }
    /// Smallest stored sample and its location, for tabulated profiles.
    fn min_sample(&self) -> Option<(P6, f64)> {
        None
    }
    fn is_smooth(&self) -> bool {
        true
    }
    fn name(&self) -> &'static str;
}

// ---------------------------------------------------------------------------
// Permutation images

/// The six maps (a,b) ↦ (αa + βb, γa + δb) that realise S₃ on the relative
/// coordinates: (a,b), (b,a), (−a,b−a), (b−a,−a), (−b,a−b), (a−b,−b).
pub const IMAGES: [[[f64; 2]; 2]; 6] = [
    [[1.0, 0.0], [0.0, 1.0]],
    [[0.0, 1.0], [1.0, 0.0]],
    [[-1.0, 0.0], [-1.0, 1.0]],
    [[-1.0, 1.0], [-1.0, 0.0]],
    [[0.0, -1.0], [1.0, -1.0]],
    [[1.0, -1.0], [0.0, -1.0]],
];

pub fn apply_block(m: &[[f64; 2]; 2], x: &P6) -> P6 {
    let mut y = [0.0; 6];
    for c in 0..3 {
        y[c] = m[0][0] * x[c] + m[0][1] * x[3 + c];
        y[3 + c] = m[1][0] * x[c] + m[1][1] * x[3 + c];
    }
    y
}

pub fn image(g: usize, x: &P6) -> P6 {
    apply_block(&IMAGES[g], x)
}

fn inverse2(m: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        [m[1][1] / det, -m[0][1] / det],
        [-m[1][0] / det, m[0][0] / det],
    ]
}

fn smallest_singular_value(m: &[[f64; 2]; 2]) -> f64 {
    // eigenvalues of mᵀm
    let a = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let d = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let b = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let tr = a + d;
    let disc = ((a - d) * (a - d) + 4.0 * b * b).sqrt();
    ((tr - disc) / 2.0).max(0.0).sqrt()
}

// ---------------------------------------------------------------------------
// Built-in profiles

/// e·exp(−1/(1−r²)) for r = |x|/r₀ < 1: smooth, peak value 1 at the origin.
#[derive(Debug, Clone)]
pub struct Bump {
    pub radius: f64,
    radial_max: f64,
}

pub fn bump1(r2: f64) -> f64 {
    if r2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r2)).exp()
    }
}

impl Bump {
    pub fn new(radius: f64) -> Self {
        // maximum of r⁵·bump(r²) on [0,1], for radial rejection sampling
        let radial_max = (0..=20_000)
            .map(|i| {
                let r = i as f64 / 20_000.0;
                r.powi(5) * bump1(r * r)
            })
            .fold(0.0, f64::max)
            * 1.001;
        Self { radius, radial_max }
    }

    /// ∫₀¹ r⁵ bump(r²) dr by composite Gauss–Legendre.
    fn radial_moment() -> f64 {
        static M: OnceLock<f64> = OnceLock::new();
        *M.get_or_init(|| {
            let q = crate::quad::composite(20, 40, 0.0, 1.0);
            crate::quad::integrate(&q, |r| r.powi(5) * bump1(r * r))
        })
    }
}

impl Profile for Bump {
    fn eval(&self, x: &P6) -> f64 {
        let r2 = x.iter().map(|v| v * v).sum::<f64>() / (self.radius * self.radius);
        bump1(r2)
    }
    fn support_radius(&self) -> f64 {
        self.radius
    }
    fn integral(&self) -> f64 {
        // |S⁵| = π³
        std::f64::consts::PI.powi(3) * self.radius.powi(6) * Self::radial_moment()
    }
    fn sample(&self, rng: &mut dyn rand::RngCore) -> P6 {
        let r = loop {
            let r: f64 = rng.random();
            let u: f64 = rng.random();
            if u * self.radial_max <= r.powi(5) * bump1(r * r) {
                break r;
            }
        };
        let mut d = [0.0; 6];
        loop {
            for v in d.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let n = norm6(&d);
            if n > 1e-12 {
                for v in d.iter_mut() {
                    *v *= r * self.radius / n;
                }
                return d;
            }
        }
    }
    fn eval_symmetrized(&self, x: &P6) -> Option<f64> {
        // Each image's |Ax|² is one of three quadratic forms, each hit twice.
        let s = 1.0 / (self.radius * self.radius);
        let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
        for c in 0..3 {
            aa += x[c] * x[c];
            bb += x[3 + c] * x[3 + c];
            ab += x[c] * x[3 + c];
        }
        let q1 = (aa + bb) * s;
        let q2 = (2.0 * aa - 2.0 * ab + bb) * s;
        let q3 = (aa - 2.0 * ab + 2.0 * bb) * s;
        Some((bump1(q1) + bump1(q2) + bump1(q3)) / 3.0)
    }
    fn name(&self) -> &'static str {
        "bump"
    }
}

/// Identically zero profile.
#[derive(Debug, Clone)]
pub struct ZeroProfile {
    pub radius: f64,
}

impl Profile for ZeroProfile {
    fn eval(&self, _x: &P6) -> f64 {
        0.0
    }
    fn support_radius(&self) -> f64 {
        self.radius
    }
    fn integral(&self) -> f64 {
        0.0
    }
    fn sample(&self, _rng: &mut dyn rand::RngCore) -> P6 {
        [0.0; 6]
    }
    fn eval_symmetrized(&self, _x: &P6) -> Option<f64> {
        Some(0.0)
    }
    fn name(&self) -> &'static str {
        "zero"
    }
}

/// g(|a|)·g(|b|) with g a 3-D bump of radius r₀; not permutation symmetric.
#[derive(Debug, Clone)]
pub struct ProductBump {
    pub radius: f64,
}

impl Profile for ProductBump {
    fn eval(&self, x: &P6) -> f64 {
        let s = 1.0 / (self.radius * self.radius);
        let a2 = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) * s;
        let b2 = (x[3] * x[3] + x[4] * x[4] + x[5] * x[5]) * s;
        bump1(a2) * bump1(b2)
    }
    fn support_radius(&self) -> f64 {
        self.radius * std::f64::consts::SQRT_2
    }
    fn integral(&self) -> f64 {
        // (4π r₀³ ∫₀¹ r² bump(r²) dr)²
        let q = crate::quad::composite(20, 40, 0.0, 1.0);
        let m = crate::quad::integrate(&q, |r| r * r * bump1(r * r));
        let one = 4.0 * std::f64::consts::PI * self.radius.powi(3) * m;
        one * one
    }
    fn sample(&self, rng: &mut dyn rand::RngCore) -> P6 {
        // rejection from the bounding cube of each factor
        let mut x = [0.0; 6];
        for half in 0..2 {
            loop {
                let mut p = [0.0; 3];
                for v in p.iter_mut() {
                    *v = (2.0 * rng.random::<f64>() - 1.0) * self.radius;
                }
                let r2 = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) / (self.radius * self.radius);
                if rng.random::<f64>() <= bump1(r2) {
                    x[3 * half..3 * half + 3].copy_from_slice(&p);
                    break;
                }
            }
        }
        x
    }
    fn name(&self) -> &'static str {
        "product_bump"
    }
}

// ---------------------------------------------------------------------------
// Tabulated profiles

pub const TABLE_MAGIC: &[u8; 8] = b"GP3POT1\0";

/// Multilinear interpolation of samples on the vertex grid of [−R, R]⁶ with
/// `n` points per axis (endpoints included); zero outside the cube.
#[derive(Clone)]
pub struct TableProfile {
    pub n: usize,
    pub half_width: f64,
    pub data: Arc<Vec<f64>>,
    cells: Arc<OnceLock<CellSampler>>,
}

struct CellSampler {
    cumulative: Vec<f64>,
    cell_max: Vec<f64>,
}

impl fmt::Debug for TableProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TableProfile")
            .field("n", &self.n)
            .field("half_width", &self.half_width)
            .finish()
    }
}

impl TableProfile {
    pub fn new(n: usize, half_width: f64, data: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::BadInput(
                "table needs at least 2 points per axis".into(),
            ));
        }
        if data.len() != n.pow(6) {
            return Err(Error::BadInput(format!(
                "table payload has {} values, expected {}",
                data.len(),
                n.pow(6)
            )));
        }
        if !(half_width > 0.0) {
            return Err(Error::BadInput("table half width must be positive".into()));
        }
        Ok(Self {
            n,
            half_width,
            data: Arc::new(data),
            cells: Arc::new(OnceLock::new()),
        })
    }

    /// Samples `f` on the vertex grid.
    pub fn from_fn(n: usize, half_width: f64, f: impl Fn(&P6) -> f64) -> Result<Self> {
        let mut data = vec![0.0; n.pow(6)];
        for (idx, v) in data.iter_mut().enumerate() {
            *v = f(&Self::vertex(n, half_width, idx));
        }
        Self::new(n, half_width, data)
    }

    fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n - 1) as f64
    }

    fn vertex(n: usize, half_width: f64, mut idx: usize) -> P6 {
        let h = 2.0 * half_width / (n - 1) as f64;
        let mut x = [0.0; 6];
        for d in (0..6).rev() {
            x[d] = -half_width + h * (idx % n) as f64;
            idx /= n;
        }
        x
    }

    fn cell_corners(&self, cell: &[usize; 6]) -> [f64; 64] {
        let n = self.n;
        let mut out = [0.0; 64];
        for (c, o) in out.iter_mut().enumerate() {
            let mut idx = 0;
            for d in 0..6 {
                idx = idx * n + cell[d] + ((c >> (5 - d)) & 1);
            }
            *o = self.data[idx];
        }
        out
    }

    fn sampler(&self) -> &CellSampler {
        self.cells.get_or_init(|| {
            let m = self.n - 1;
            let ncell = m.pow(6);
            let mut cumulative = Vec::with_capacity(ncell);
            let mut cell_max = Vec::with_capacity(ncell);
            let mut acc = 0.0;
            for ci in 0..ncell {
                let mut cell = [0usize; 6];
                let mut r = ci;
                for d in (0..6).rev() {
                    cell[d] = r % m;
                    r /= m;
                }
                let corners = self.cell_corners(&cell);
                let mean = corners.iter().map(|v| v.max(0.0)).sum::<f64>() / 64.0;
                acc += mean;
                cumulative.push(acc);
                cell_max.push(corners.iter().cloned().fold(0.0, f64::max));
            }
            CellSampler {
                cumulative,
                cell_max,
            }
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(TABLE_MAGIC)?;
        f.write_all(&(self.n as u64).to_le_bytes())?;
        f.write_all(&6u64.to_le_bytes())?;
        f.write_all(&(self.data.len() as u64).to_le_bytes())?;
        for v in self.data.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a GP3POT1 file; the physical extent is not stored in the file
    /// and comes from the caller.
    pub fn read(path: &Path, half_width: f64) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 32 || &bytes[..8] != TABLE_MAGIC {
            return Err(Error::BadInput(format!(
                "{}: not a GP3POT1 table",
                path.display()
            )));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let (n, dims, len) = (word(0) as usize, word(1), word(2) as usize);
        if dims != 6 {
            return Err(Error::BadInput(format!(
                "table has dims = {dims}, expected 6"
            )));
        }
        if bytes.len() != 32 + 8 * len {
            return Err(Error::BadInput(format!(
                "table payload length {} does not match header ({len} values)",
                (bytes.len() - 32) / 8
            )));
        }
        let data = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(n, half_width, data)
    }
}

impl Profile for TableProfile {
    fn eval(&self, x: &P6) -> f64 {
        let h = self.spacing();
        let m = self.n - 1;
        let mut cell = [0usize; 6];
        let mut t = [0.0; 6];
        for d in 0..6 {
            let s = (x[d] + self.half_width) / h;
            if !(s >= 0.0 && s <= m as f64) {
                return 0.0;
            }
            let c = (s.floor() as usize).min(m - 1);
            cell[d] = c;
            t[d] = s - c as f64;
        }
        let corners = self.cell_corners(&cell);
        let mut v = 0.0;
        for (c, val) in corners.iter().enumerate() {
            let mut w = 1.0;
            for d in 0..6 {
                w *= if (c >> (5 - d)) & 1 == 1 {
                    t[d]
                } else {
                    1.0 - t[d]
                };
            }
            v += w * val;
        }
        v
    }
    fn support_radius(&self) -> f64 {
        // smallest radius outside of which every stored sample vanishes
        let n = self.n;
        let mut r2max: f64 = 0.0;
        let h = self.spacing();
        for (idx, v) in self.data.iter().enumerate() {
            if *v != 0.0 {
                let x = Self::vertex(n, self.half_width, idx);
                // a nonzero vertex can leak up to one cell diagonal
                let r = norm6(&x) + h * 6f64.sqrt();
                r2max = r2max.max(r);
            }
        }
        r2max
            .min(self.half_width * 6f64.sqrt())
            .max(f64::MIN_POSITIVE)
    }
    fn integral(&self) -> f64 {
        // exact for the multilinear interpolant: the trapezoidal rule
        let n = self.n;
        let h = self.spacing();
        let mut s = 0.0;
        for (idx, v) in self.data.iter().enumerate() {
            let mut w = 1.0;
            let mut r = idx;
            for _ in 0..6 {
                let i = r % n;
                r /= n;
                if i == 0 || i == n - 1 {
                    w *= 0.5;
                }
            }
            s += w * v;
        }
        s * h.powi(6)
    }
    fn sample(&self, rng: &mut dyn rand::RngCore) -> P6 {
        let s = self.sampler();
        let total = *s.cumulative.last().unwrap();
        let m = self.n - 1;
        let h = self.spacing();
        loop {
            let u = rng.random::<f64>() * total;
            let ci = s
                .cumulative
                .partition_point(|&c| c <= u)
                .min(s.cumulative.len() - 1);
            let mut cell = [0usize; 6];
            let mut r = ci;
            for d in (0..6).rev() {
                cell[d] = r % m;
                r /= m;
            }
            // the cell was picked ∝ its mass; rejection inside the cell against
            // its corner maximum is exact for a multilinear density
            let mx = s.cell_max[ci];
            for _ in 0..1000 {
                let mut x = [0.0; 6];
                for d in 0..6 {
                    x[d] = -self.half_width + h * (cell[d] as f64 + rng.random::<f64>());
                }
                if rng.random::<f64>() * mx <= self.eval(&x) {
                    return x;
                }
            }
        }
    }
    fn min_sample(&self) -> Option<(P6, f64)> {
        let (idx, v) = self
            .data
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
        Some((Self::vertex(self.n, self.half_width, idx), *v))
    }
    fn is_smooth(&self) -> bool {
        false
    }
    fn name(&self) -> &'static str {
        "table"
    }
}

// ---------------------------------------------------------------------------
// The model

/// λ × (symmetrised) base profile.
#[derive(Clone)]
pub struct PotentialModel {
    base: Arc<dyn Profile>,
    pub lambda: f64,
    pub support_radius: f64,
    pub symmetrized: bool,
}

impl fmt::Debug for PotentialModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialModel")
            .field("base", &self.base)
            .field("lambda", &self.lambda)
            .field("support_radius", &self.support_radius)
            .field("symmetrized", &self.symmetrized)
            .finish()
    }
}

impl PotentialModel {
    /// Uses the profile as is, without symmetrising.
    pub fn unsymmetrized(base: Arc<dyn Profile>, lambda: f64) -> Self {
        let support_radius = base.support_radius();
        Self {
            base,
            lambda,
            support_radius,
            symmetrized: false,
        }
    }

    /// The default potential: the unit bump, symmetrised, at coupling λ.
    pub fn default_bump(lambda: f64) -> Self {
        symmetrize(Arc::new(Bump::new(1.0)))
            .expect("the bump is admissible")
            .with_coupling(lambda)
    }

    pub fn zero() -> Self {
        Self::default_bump(0.0)
    }

    pub fn with_coupling(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    pub fn base(&self) -> &Arc<dyn Profile> {
        &self.base
    }

    /// Un-scaled profile value (λ = 1).
    pub fn shape(&self, x: &P6) -> f64 {
        if !self.symmetrized {
            return self.base.eval(x);
        }
        if let Some(v) = self.base.eval_symmetrized(x) {
            return v;
        }
        (0..6).map(|g| self.base.eval(&image(g, x))).sum::<f64>() / 6.0
    }

    pub fn eval(&self, x: &P6) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        self.lambda * self.shape(x)
    }

    /// V at the pair (a, b) given as two 3-vectors.
    pub fn eval_pair(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        self.eval(&[a[0], a[1], a[2], b[0], b[1], b[2]])
    }

    /// Exact ∫V (image maps are unimodular, so symmetrising preserves it).
    pub fn integral(&self) -> f64 {
        self.lambda * self.base.integral()
    }

    /// A draw from V/∫V (independent of λ).
    pub fn sample(&self, rng: &mut dyn rand::RngCore) -> P6 {
        let u = self.base.sample(rng);
        if !self.symmetrized {
            return u;
        }
        // V = (1/6) Σ_g base∘A_g and every A_g has |det| = 1, so pick an image
        // uniformly and pull the base sample back through it.
        let g = (rng.random::<f64>() * 6.0) as usize % 6;
        apply_block(&inverse2(&IMAGES[g]), &u)
    }

    pub fn is_zero(&self) -> bool {
        self.lambda == 0.0 || self.base.name() == "zero"
    }
}

/// Averages the profile over the six permutation images.
pub fn symmetrize(profile: Arc<dyn Profile>) -> Result<PotentialModel> {
    let r = profile.support_radius();
    if !r.is_finite() || r <= 0.0 {
        return Err(Error::InvalidPotential(format!(
            "profile support radius must be finite and positive, got {r}"
        )));
    }
    if let Some((x, v)) = profile.min_sample() {
        if v < 0.0 {
            return Err(Error::InvalidPotential(format!(
                "negative sample {v:e} at {x:?}"
            )));
        }
    }
    // image g vanishes once |A_g x| ≥ r, i.e. beyond r / σ_min(A_g)
    let support_radius = IMAGES
        .iter()
        .map(|m| r / smallest_singular_value(m))
        .fold(0.0, f64::max);
    Ok(PotentialModel {
        base: profile,
        lambda: 1.0,
        support_radius,
        symmetrized: true,
    })
}

// ---------------------------------------------------------------------------
// Certification

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Violation {
    pub identity: String,
    pub witness: Vec<f64>,
    pub amount: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certification {
    pub passed: bool,
    pub points_checked: usize,
    pub min_value: f64,
    pub max_outside_support: f64,
    pub max_symmetry_violation: f64,
    pub smooth: bool,
    pub violations: Vec<Violation>,
}

pub const IMAGE_NAMES: [&str; 6] = [
    "V(a,b)",
    "V(b,a)",
    "V(-a,b-a)",
    "V(b-a,-a)",
    "V(-b,a-b)",
    "V(a-b,-b)",
];

/// Checks non-negativity, compact support and (if claimed) the permutation
/// identities on a seeded random point set.
pub fn validate(v: &PotentialModel, points: usize, seed: u64) -> Certification {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let r = v.support_radius;
    let mut viol: Vec<Violation> = Vec::new();
    let mut min_value = f64::INFINITY;
    let mut max_out: f64 = 0.0;
    let mut max_sym: f64 = 0.0;
    let mut worst_sym: Option<Violation> = None;

    let note = |viol: &mut Vec<Violation>, id: &str, x: &P6, amount: f64| {
        if !viol.iter().any(|w| w.identity == id) {
            viol.push(Violation {
                identity: id.to_string(),
                witness: x.to_vec(),
                amount,
            });
        }
    };

    if let Some((x, s)) = v.base().min_sample() {
        let val = v.lambda * s;
        min_value = min_value.min(val);
        if val < 0.0 {
            note(&mut viol, "non_negative", &x, val);
        }
    }

    for i in 0..points {
        // half the points inside the support ball, half in the shell outside
        let mut x = [0.0; 6];
        for c in x.iter_mut() {
            *c = rng.sample(StandardNormal);
        }
        let n = norm6(&x);
        let rad = if i % 2 == 0 {
            r * rng.random::<f64>().powf(1.0 / 6.0)
        } else {
            r * (1.0 + 0.5 * rng.random::<f64>())
        };
        for c in x.iter_mut() {
            *c *= rad / n;
        }
        let val = v.eval(&x);
        min_value = min_value.min(val);
        if val < 0.0 {
            note(&mut viol, "non_negative", &x, val);
        }
        if norm6(&x) >= r {
            max_out = max_out.max(val.abs());
            if val != 0.0 {
                note(&mut viol, "compact_support", &x, val);
            }
        }
        for g in 1..6 {
            let d = (v.eval(&image(g, &x)) - val).abs();
            if d > max_sym {
                max_sym = d;
                worst_sym = Some(Violation {
                    identity: format!("V(a,b) = {}", IMAGE_NAMES[g]),
                    witness: x.to_vec(),
                    amount: d,
                });
            }
        }
    }
    if max_sym > SYMMETRY_TOL {
        viol.push(worst_sym.unwrap());
    }
    Certification {
        passed: viol.is_empty(),
        points_checked: points,
        min_value,
        max_outside_support: max_out,
        max_symmetry_violation: max_sym,
        smooth: v.base().is_smooth(),
        violations: viol,
    }
}

// ---------------------------------------------------------------------------
// Fourier transform

/// Cell-centred uniform grid on the cube [−R, R]^d, `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CubeGrid {
    pub n: usize,
    pub half_width: f64,
}

impl CubeGrid {
    pub fn new(n: usize, half_width: f64) -> Self {
        Self { n, half_width }
    }
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + self.h() * (i as f64 + 0.5)
    }
    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct FourierTable {
    pub points: Vec<P6>,
    pub values: Vec<Complex64>,
    /// max |V̂_n − V̂_coarse| over the samples.
    pub error_estimate: f64,
    pub n: usize,
}

/// V̂(p,q) = ∫V(a,b) e^{−i(p·a+q·b)} by the midpoint rule on the support cube
/// with `n` points per axis; passes at coarser resolutions supply the error
/// estimate.
pub fn fourier(v: &PotentialModel, points: &[P6], n: usize) -> FourierTable {
    let fine = fourier_direct(v, points, n);
    let err = coarse_levels(n)
        .into_iter()
        .map(|m| max_diff(&fine, &fourier_direct(v, points, m)))
        .fold(0.0, f64::max)
        * 2.0;
    FourierTable {
        points: points.to_vec(),
        values: fine,
        error_estimate: err,
        n,
    }
}

/// Two slightly coarser resolutions whose cell centres interleave
/// differently with the fine grid. The midpoint error of the bump oscillates
/// with n rather than decaying monotonically, so twice the larger deviation is
/// used as the estimate.
fn coarse_levels(n: usize) -> [usize; 2] {
    [(n - 1).max(4), (n - 2).max(4)]
}

fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

fn fourier_direct(v: &PotentialModel, points: &[P6], n: usize) -> Vec<Complex64> {
    let grid = CubeGrid::new(n, v.support_radius);
    let xs = grid.coords();
    let w = grid.h().powi(6);
    let mut nodes: Vec<(P6, f64)> = Vec::new();
    let mut idx = [0usize; 6];
    loop {
        let x = [
            xs[idx[0]], xs[idx[1]], xs[idx[2]], xs[idx[3]], xs[idx[4]], xs[idx[5]],
        ];
        let val = v.eval(&x);
        if val != 0.0 {
            nodes.push((x, val * w));
        }
        if !next_index(&mut idx, n) {
            break;
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); points.len()];
    crate::par::fill(&mut out, |k| {
        let p = &points[k];
        let mut s = Complex64::new(0.0, 0.0);
        for (x, wv) in &nodes {
            let phase: f64 = (0..6).map(|d| p[d] * x[d]).sum();
            s += Complex64::from_polar(*wv, -phase);
        }
        s
    });
    out
}

/// Advances a mixed-radix counter; false once it wraps around.
pub fn next_index(idx: &mut [usize], n: usize) -> bool {
    for d in (0..idx.len()).rev() {
        idx[d] += 1;
        if idx[d] < n {
            return true;
        }
        idx[d] = 0;
    }
    false
}

/// V̂ on the tensor grid freqs⁶ (the same 1-D frequency list on every axis),
/// applied one axis at a time. Values are row-major over the six axes.
#[derive(Debug, Clone)]
pub struct TensorFourier {
    pub freqs: Vec<f64>,
    pub values: Vec<Complex64>,
    pub error_estimate: f64,
}

impl TensorFourier {
    pub fn at(&self, idx: &[usize; 6]) -> Complex64 {
        let m = self.freqs.len();
        let mut k = 0;
        for d in 0..6 {
            k = k * m + idx[d];
        }
        self.values[k]
    }
}

pub fn fourier_tensor(v: &PotentialModel, freqs: &[f64], n: usize) -> TensorFourier {
    let fine = fourier_tensor_raw(v, freqs, n);
    let err = coarse_levels(n)
        .into_iter()
        .map(|m| max_diff(&fine, &fourier_tensor_raw(v, freqs, m)))
        .fold(0.0, f64::max)
        * 2.0;
    TensorFourier {
        freqs: freqs.to_vec(),
        values: fine,
        error_estimate: err,
    }
}

fn fourier_tensor_raw(v: &PotentialModel, freqs: &[f64], n: usize) -> Vec<Complex64> {
    let grid = CubeGrid::new(n, v.support_radius);
    let xs = grid.coords();
    let h = grid.h();
    let m = freqs.len();
    // samples, real, row-major
    let mut data: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n.pow(6)];
    crate::par::fill(&mut data, |k| {
        let mut r = k;
        let mut x = [0.0; 6];
        for d in (0..6).rev() {
            x[d] = xs[r % n];
            r /= n;
        }
        Complex64::new(v.eval(&x), 0.0)
    });
    let mat: Vec<Complex64> = freqs
        .iter()
        .flat_map(|&f| xs.iter().map(move |&x| Complex64::from_polar(h, -f * x)))
        .collect();
    let mut shape = [n; 6];
    for axis in 0..6 {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let mut out = vec![Complex64::new(0.0, 0.0); outer * m * inner];
        let src = &data;
        crate::par::fill(&mut out, |k| {
            let i_in = k % inner;
            let j = (k / inner) % m;
            let i_out = k / (inner * m);
            let mut s = Complex64::new(0.0, 0.0);
            let base = i_out * len * inner + i_in;
            for t in 0..len {
                s += mat[j * len + t] * src[base + t * inner];
            }
            s
        });
        data = out;
        shape[axis] = m;
    }
    data
}
