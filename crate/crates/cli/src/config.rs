//! The `key = value` run configuration.

use gp3_core::potential::{
    symmetrize, Bump, PotentialModel, ProductBump, Profile, TableProfile, ZeroProfile,
};
use gp3_core::{Error, Result};
use ini::Ini;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Bump,
    ProductBump,
    Table,
    Zero,
}

impl ProfileKind {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "bump" => Self::Bump,
            "product_bump" => Self::ProductBump,
            "table" => Self::Table,
            "zero" => Self::Zero,
            _ => return Err(Error::BadInput(format!("unknown profile '{s}'"))),
        })
    }
    fn as_str(&self) -> &'static str {
        match self {
            Self::Bump => "bump",
            Self::ProductBump => "product_bump",
            Self::Table => "table",
            Self::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialSpec {
    pub profile: ProfileKind,
    pub radius: f64,
    pub lambda: f64,
    pub symmetrize: bool,
    /// binary table for `profile = table`
    pub table: Option<PathBuf>,
    pub table_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grids {
    pub n6: usize,
    pub n9: usize,
    /// γ truncation radius, in units of R_V
    pub gamma_z: f64,
    /// cut-offs for the σ grid oracle, in units of R_V
    pub ell_ladder: Vec<f64>,
    pub sigma_grid: bool,
    /// midpoint resolution for V̂ on the torus
    pub fourier_n: usize,
    /// bytes the 9-D grid may use
    pub memory_budget: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mc {
    pub samples: usize,
    pub seed: u64,
    /// proposal scales, in units of R_V
    pub r0: f64,
    pub tail: f64,
    pub r_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Torus {
    pub n_ladder: Vec<f64>,
    pub m_c: usize,
    pub k_cut: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    pub grids: Grids,
    pub mc: Mc,
    pub scan_lambdas: Vec<f64>,
    pub torus: Torus,
    pub output_dir: PathBuf,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            potential: PotentialSpec {
                profile: ProfileKind::Bump,
                radius: 1.0,
                lambda: 1.0,
                symmetrize: true,
                table: None,
                table_half_width: None,
            },
            grids: Grids {
                n6: 12,
                n9: 6,
                gamma_z: 8.0,
                ell_ladder: vec![2.0, 4.0, 8.0],
                sigma_grid: true,
                fourier_n: 12,
                memory_budget: 4 << 30,
            },
            mc: Mc {
                samples: 100_000,
                seed: 1,
                r0: 0.5,
                tail: 0.5,
                r_s: 0.25,
            },
            scan_lambdas: vec![0.4, 0.2, 0.1],
            torus: Torus {
                n_ladder: vec![64.0, 256.0],
                m_c: 1,
                k_cut: 0.0,
                trials: 20,
            },
            output_dir: PathBuf::from("gp3-out"),
            workers: None,
        }
    }
}

fn list(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn parse_list(key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|t| parse::<f64>(key, t)).collect()
}

fn parse<T: std::str::FromStr>(key: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::BadInput(format!("cannot parse {key} = '{}'", s.trim())))
}

const KEYS: &[(&str, &[&str])] = &[
    (
        "potential",
        &[
            "profile",
            "radius",
            "lambda",
            "symmetrize",
            "table",
            "table_half_width",
        ],
    ),
    (
        "grids",
        &[
            "n6",
            "n9",
            "gamma_z",
            "ell_ladder",
            "sigma_grid",
            "fourier_n",
            "memory_budget",
        ],
    ),
    ("mc", &["samples", "seed", "r0", "tail", "r_s"]),
    ("scan", &["lambdas"]),
    ("torus", &["n_ladder", "m_c", "k_cut", "trials"]),
    ("output", &["dir", "workers"]),
];

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::BadInput(format!("config: {e}")))?;
        for (sec, props) in ini.iter() {
            let Some(sec) = sec else {
                if props.iter().next().is_some() {
                    return Err(Error::BadInput(
                        "config keys must sit inside a [section]".into(),
                    ));
                }
                continue;
            };
            let known = KEYS
                .iter()
                .find(|(s, _)| *s == sec)
                .ok_or_else(|| Error::BadInput(format!("unknown config section [{sec}]")))?;
            for (k, _) in props.iter() {
                if !known.1.contains(&k) {
                    return Err(Error::BadInput(format!("unknown key '{k}' in [{sec}]")));
                }
            }
        }
        let mut c = Self::default();
        let get = |s: &str, k: &str| ini.section(Some(s)).and_then(|p| p.get(k));
        if let Some(v) = get("potential", "profile") {
            c.potential.profile = ProfileKind::parse(v.trim())?;
        }
        if let Some(v) = get("potential", "radius") {
            c.potential.radius = parse("radius", v)?;
        }
        if let Some(v) = get("potential", "lambda") {
            c.potential.lambda = parse("lambda", v)?;
        }
        if let Some(v) = get("potential", "symmetrize") {
            c.potential.symmetrize = parse("symmetrize", v)?;
        }
        if let Some(v) = get("potential", "table") {
            c.potential.table = Some(PathBuf::from(v.trim()));
        }
        if let Some(v) = get("potential", "table_half_width") {
            c.potential.table_half_width = Some(parse("table_half_width", v)?);
        }
        if let Some(v) = get("grids", "n6") {
            c.grids.n6 = parse("n6", v)?;
        }
        if let Some(v) = get("grids", "n9") {
            c.grids.n9 = parse("n9", v)?;
        }
        if let Some(v) = get("grids", "gamma_z") {
            c.grids.gamma_z = parse("gamma_z", v)?;
        }
        if let Some(v) = get("grids", "ell_ladder") {
            c.grids.ell_ladder = parse_list("ell_ladder", v)?;
        }
        if let Some(v) = get("grids", "sigma_grid") {
            c.grids.sigma_grid = parse("sigma_grid", v)?;
        }
        if let Some(v) = get("grids", "fourier_n") {
            c.grids.fourier_n = parse("fourier_n", v)?;
        }
        if let Some(v) = get("grids", "memory_budget") {
            c.grids.memory_budget = parse("memory_budget", v)?;
        }
        if let Some(v) = get("mc", "samples") {
            c.mc.samples = parse("samples", v)?;
        }
        if let Some(v) = get("mc", "seed") {
            c.mc.seed = parse("seed", v)?;
        }
        if let Some(v) = get("mc", "r0") {
            c.mc.r0 = parse("r0", v)?;
        }
        if let Some(v) = get("mc", "tail") {
            c.mc.tail = parse("tail", v)?;
        }
        if let Some(v) = get("mc", "r_s") {
            c.mc.r_s = parse("r_s", v)?;
        }
        if let Some(v) = get("scan", "lambdas") {
            c.scan_lambdas = parse_list("lambdas", v)?;
        }
        if let Some(v) = get("torus", "n_ladder") {
            c.torus.n_ladder = parse_list("n_ladder", v)?;
        }
        if let Some(v) = get("torus", "m_c") {
            c.torus.m_c = parse("m_c", v)?;
        }
        if let Some(v) = get("torus", "k_cut") {
            c.torus.k_cut = parse("k_cut", v)?;
        }
        if let Some(v) = get("torus", "trials") {
            c.torus.trials = parse("trials", v)?;
        }
        if let Some(v) = get("output", "dir") {
            c.output_dir = PathBuf::from(v.trim());
        }
        if let Some(v) = get("output", "workers") {
            c.workers = Some(parse("workers", v)?);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_str(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; `from_str(to_ini())` reproduces the config.
    pub fn to_ini(&self) -> String {
        let p = &self.potential;
        let g = &self.grids;
        let mut s = String::new();
        s += "[potential]\n";
        s += &format!("profile = {}\n", p.profile.as_str());
        s += &format!("radius = {}\n", p.radius);
        s += &format!("lambda = {}\n", p.lambda);
        s += &format!("symmetrize = {}\n", p.symmetrize);
        if let Some(t) = &p.table {
            s += &format!("table = {}\n", t.display());
        }
        if let Some(h) = p.table_half_width {
            s += &format!("table_half_width = {h}\n");
        }
        s += "\n[grids]\n";
        s += &format!("n6 = {}\n", g.n6);
        s += &format!("n9 = {}\n", g.n9);
        s += &format!("gamma_z = {}\n", g.gamma_z);
        s += &format!("ell_ladder = {}\n", list(&g.ell_ladder));
        s += &format!("sigma_grid = {}\n", g.sigma_grid);
        s += &format!("fourier_n = {}\n", g.fourier_n);
        s += &format!("memory_budget = {}\n", g.memory_budget);
        s += "\n[mc]\n";
        s += &format!("samples = {}\n", self.mc.samples);
        s += &format!("seed = {}\n", self.mc.seed);
        s += &format!("r0 = {}\n", self.mc.r0);
        s += &format!("tail = {}\n", self.mc.tail);
        s += &format!("r_s = {}\n", self.mc.r_s);
        s += "\n[scan]\n";
        s += &format!("lambdas = {}\n", list(&self.scan_lambdas));
        s += "\n[torus]\n";
        s += &format!("n_ladder = {}\n", list(&self.torus.n_ladder));
        s += &format!("m_c = {}\n", self.torus.m_c);
        s += &format!("k_cut = {}\n", self.torus.k_cut);
        s += &format!("trials = {}\n", self.torus.trials);
        s += "\n[output]\n";
        s += &format!("dir = {}\n", self.output_dir.display());
        if let Some(w) = self.workers {
            s += &format!("workers = {w}\n");
        }
        s
    }

    /// SHA-256 of the canonical form, hex encoded. The `[output]` section
    /// is left out: where results go and how many threads compute them do
    /// not change them.
    pub fn hash(&self) -> String {
        let ini = self.to_ini();
        let science = ini.split("\n[output]\n").next().unwrap_or(&ini);
        hex::encode(Sha256::digest(science.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadInput(m));
        let p = &self.potential;
        if !(p.lambda >= 0.0 && p.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", p.lambda));
        }
        if !(p.radius > 0.0 && p.radius.is_finite()) {
            return bad(format!("radius must be positive, got {}", p.radius));
        }
        if p.profile == ProfileKind::Table && (p.table.is_none() || p.table_half_width.is_none()) {
            return bad("profile = table needs table and table_half_width".into());
        }
        if !(6..=40).contains(&self.grids.n6) {
            return bad(format!("n6 must lie in 6..=40, got {}", self.grids.n6));
        }
        if !(2..=8).contains(&self.grids.n9) {
            return bad(format!("n9 must lie in 2..=8, got {}", self.grids.n9));
        }
        let need = gp3_core::sigma9::grid_memory(self.grids.n9);
        if self.grids.sigma_grid && need > self.grids.memory_budget {
            return Err(Error::MemoryBudget {
                need,
                budget: self.grids.memory_budget,
            });
        }
        if self.grids.gamma_z < 4.0 {
            return bad(format!(
                "gamma_z must be >= 4 (units of R_V), got {}",
                self.grids.gamma_z
            ));
        }
        if self.grids.ell_ladder.iter().any(|&l| !(l > 0.0)) {
            return bad("ell_ladder entries must be positive".into());
        }
        if self.mc.samples < 10_000 {
            return bad(format!(
                "mc samples must be >= 10000, got {}",
                self.mc.samples
            ));
        }
        if !(self.mc.r0 > 0.0 && self.mc.tail > 0.0 && self.mc.r_s > 0.0) {
            return bad("mc proposal scales must be positive".into());
        }
        if self.torus.m_c == 0 || self.torus.m_c > 2 {
            return bad(format!("torus m_c must be 1 or 2, got {}", self.torus.m_c));
        }
        if self.torus.n_ladder.iter().any(|&n| !(n > 0.0)) {
            return bad("torus n_ladder entries must be positive".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        Ok(())
    }

    pub fn potential(&self) -> Result<PotentialModel> {
        let p = &self.potential;
        let profile: Arc<dyn Profile> = match p.profile {
            ProfileKind::Bump => Arc::new(Bump::new(p.radius)),
            ProfileKind::ProductBump => Arc::new(ProductBump { radius: p.radius }),
            ProfileKind::Zero => Arc::new(ZeroProfile { radius: p.radius }),
            ProfileKind::Table => Arc::new(TableProfile::read(
                p.table.as_deref().expect("validated"),
                p.table_half_width.expect("validated"),
            )?),
        };
        Ok(if p.symmetrize {
            symmetrize(profile)?.with_coupling(p.lambda)
        } else {
            PotentialModel::unsymmetrized(profile, p.lambda)
        })
    }

    /// Worker count: GP3_WORKERS beats the config file.
    pub fn effective_workers(&self) -> Option<usize> {
        gp3_core::par::workers_from_env().or(self.workers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut c = RunConfig::default();
        c.potential.lambda = 0.123456789012345;
        c.scan_lambdas = vec![0.5, 0.25, 0.125];
        c.workers = Some(3);
        c.mc.seed = u64::MAX;
        let back = RunConfig::from_str(&c.to_ini()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_takes_defaults() {
        let c = RunConfig::from_str("[potential]\nlambda = 0.2\n").unwrap();
        assert_eq!(c.potential.lambda, 0.2);
        assert_eq!(c.grids.n6, RunConfig::default().grids.n6);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_str("[potential]\nlamda = 0.2\n").is_err());
        assert!(RunConfig::from_str("[nope]\nx = 1\n").is_err());
        assert!(RunConfig::from_str("[potential]\nlambda = -1\n").is_err());
        assert!(RunConfig::from_str("[grids]\nn9 = 9\n").is_err());
        assert!(matches!(
            RunConfig::from_str("[grids]\nn9 = 8\n"),
            Err(Error::MemoryBudget { .. })
        ));
        assert!(RunConfig::from_str("[mc]\nsamples = 10\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.mc.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let mut c = a.clone();
        c.output_dir = "elsewhere".into();
        c.workers = Some(3);
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn default_potential_is_the_symmetrised_bump() {
        let v = RunConfig::default().potential().unwrap();
        let d = PotentialModel::default_bump(1.0);
        assert_eq!(v.support_radius, d.support_radius);
        assert_eq!(v.integral(), d.integral());
    }

    #[test]
    fn book_config_is_the_default() {
        let md = include_str!("../../../book/src/cli.md");
        let start = md.find("```ini\n").unwrap() + 7;
        let end = start + md[start..].find("```").unwrap();
        let c = RunConfig::from_str(&md[start..end]).unwrap();
        assert_eq!(c, RunConfig::default());
    }
}
