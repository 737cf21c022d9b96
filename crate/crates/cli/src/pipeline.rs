//! The subcommands. Each one writes `<out>/<name>.json` plus CSV tables and
//! fails with an error naming the violated invariant.

use crate::config::RunConfig;
use crate::json;
use gp3_core::coeffs::{self, GammaResult, MuResult};
use gp3_core::potential::{self, PotentialModel, P6};
use gp3_core::scatter6::{self, richardson, ScatteringSolution6};
use gp3_core::sigma9::{self, GridLadder, McConfig, SigmaEstimate};
use gp3_core::signscan::{self, ScanConfig};
use gp3_core::torus::{self, DecayFit, TorusModel};
use gp3_core::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Omega,
    Coeffs,
    Sigma,
    Scan,
    Torus,
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Omega => "omega",
            Command::Coeffs => "coeffs",
            Command::Sigma => "sigma",
            Command::Scan => "scan",
            Command::Torus => "torus",
            Command::Report => "report",
        }
    }
}

/// Tolerances for invariants the CLI asserts on top of the library's own.
pub const GRID_BOUND_TOL: f64 = 1e-8;
pub const Q_AUDIT_TOL: f64 = 1e-6;
/// points checked by `validate`
pub const CERTIFY_POINTS: usize = 4000;

#[derive(Debug, Clone, Default)]
pub struct Options {
    /// wall-time cap per stage, seconds
    pub budget: Option<f64>,
}

#[derive(Debug)]
pub struct Outcome {
    pub report: PathBuf,
    pub value: Value,
}

/// Machine-readable name of the failed invariant.
pub fn invariant_name(e: &Error) -> &'static str {
    match e {
        Error::InvalidPotential(_) => "invalid_potential",
        Error::SingularEvaluation(_) => "singular_evaluation",
        Error::CgNotConverged { .. } => "cg_converged",
        Error::Invariant(_) => "invariant",
        Error::UnboundedWeight { .. } => "bounded_mc_weight",
        Error::GammaTail { .. } => "gamma_tail_bound",
        Error::BracketInverted { .. } => "born_bracket_order",
        Error::MemoryBudget { .. } => "memory_budget",
        Error::Rung { source, .. } => invariant_name(source),
        Error::BadInput(_) => "valid_input",
        Error::Io(_) => "io",
    }
}

pub fn error_json(cmd: Option<Command>, e: &Error) -> Value {
    json!({
        "status": "error",
        "subcommand": cmd.map(|c| c.name()),
        "invariant": invariant_name(e),
        "message": e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// budget

/// Cost model behind `--budget`, fitted on one baseline x86-64 core:
/// active scattering points A(n) ≈ 2707·(n/8)^5.4, a Nyström matvec costs
/// 3 ns·A², a solve ~6 matvecs (plus the coarse Richardson solve), γ costs
/// 2 ms·A, the σ bracket 12 ns·A per sample, and one 9-D grid rung
/// 10 s·(n9/6)⁹.
pub mod cost {
    pub fn active(n6: usize) -> f64 {
        2707.0 * (n6 as f64 / 8.0).powf(5.4)
    }
    pub fn omega(n6: usize) -> f64 {
        let a = active(n6);
        let ac = active((2 * n6).div_ceil(3).max(6));
        6.0 * 3e-9 * (a * a + ac * ac)
    }
    pub fn gamma(n6: usize) -> f64 {
        2e-3 * active(n6)
    }
    pub fn bracket(n6: usize, samples: usize) -> f64 {
        1.2e-8 * active(n6) * samples as f64
    }
    pub fn grid(n9: usize, rungs: usize) -> f64 {
        10.0 * rungs as f64 * (n9 as f64 / 6.0).powi(9)
    }
}

/// Degrades resolutions until every stage fits the per-stage budget:
/// n6 along {n6, 10, 8, 6}, MC samples halving down to 10⁴, n9 down to 4.
pub fn plan(cfg: &RunConfig, budget: Option<f64>) -> (RunConfig, Vec<String>) {
    let mut c = cfg.clone();
    let mut notes = Vec::new();
    let Some(b) = budget else {
        return (c, notes);
    };
    let ladder: Vec<usize> = [cfg.grids.n6, 10, 8, 6]
        .into_iter()
        .filter(|&n| n <= cfg.grids.n6)
        .collect();
    let fits = |n: usize| cost::omega(n) <= b && cost::gamma(n) <= b;
    let n6 = ladder.iter().copied().find(|&n| fits(n)).unwrap_or(6);
    if n6 != cfg.grids.n6 {
        notes.push(format!("n6 {} -> {} (budget {b} s)", cfg.grids.n6, n6));
        c.grids.n6 = n6;
    }
    while c.mc.samples > 10_000 && cost::bracket(c.grids.n6, c.mc.samples) > b {
        c.mc.samples = (c.mc.samples / 2).max(10_000);
    }
    if c.mc.samples != cfg.mc.samples {
        notes.push(format!("mc samples {} -> {}", cfg.mc.samples, c.mc.samples));
    }
    let rungs = cfg.grids.ell_ladder.len();
    while c.grids.n9 > 4 && cost::grid(c.grids.n9, rungs) > b {
        c.grids.n9 -= 1;
    }
    if c.grids.n9 != cfg.grids.n9 {
        notes.push(format!("n9 {} -> {}", cfg.grids.n9, c.grids.n9));
    }
    (c, notes)
}

// ---------------------------------------------------------------------------
// output helpers

fn fmt(v: f64) -> String {
    json::fmt_f64(v)
}

fn write_csv(dir: &Path, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(name)).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// A value with its error bar, or null plus the reason it is missing.
#[derive(Debug, Clone, Serialize)]
pub struct Measured {
    pub value: Option<f64>,
    pub error: Option<f64>,
    pub reason: Option<String>,
}

impl Measured {
    pub fn some(value: f64, error: f64) -> Self {
        Self {
            value: Some(value),
            error: Some(error),
            reason: None,
        }
    }
    pub fn skipped(reason: impl Into<String>) -> Self {
        Self {
            value: None,
            error: None,
            reason: Some(reason.into()),
        }
    }
}

fn provenance(cfg: &RunConfig, cmd: Command, degradations: &[String]) -> Value {
    json!({
        "subcommand": cmd.name(),
        "config_hash": cfg.hash(),
        "seed": cfg.mc.seed,
        "workers": cfg.effective_workers(),
        "versions": {
            "gp3_core": env!("CARGO_PKG_VERSION"),
            "gp3_cli": env!("CARGO_PKG_VERSION"),
        },
        "degradations": degradations,
    })
}

// ---------------------------------------------------------------------------
// stages

pub struct Omega {
    pub sol: ScatteringSolution6,
    pub b_m_coarse: f64,
    pub n_coarse: usize,
    pub b_m_extrapolated: f64,
    pub b_m_err: f64,
}

pub fn solve(cfg: &RunConfig, v: &PotentialModel) -> Result<Omega> {
    let n = cfg.grids.n6;
    let sol = scatter6::solve_omega(v, n)?;
    let n_coarse = (2 * n).div_ceil(3).max(6);
    let coarse = scatter6::solve_omega(v, n_coarse)?;
    let (b_m_extrapolated, b_m_err) = richardson(coarse.b_m, n_coarse, sol.b_m, n);
    Ok(Omega {
        sol,
        b_m_coarse: coarse.b_m,
        n_coarse,
        b_m_extrapolated,
        b_m_err,
    })
}

/// Radii (units of R_V) for the far-field table.
pub const FAR_RADII: [f64; 5] = [2.0, 4.0, 8.0, 16.0, 32.0];

#[derive(Debug, Clone, Serialize)]
pub struct FarField {
    pub direction: [f64; 6],
    pub radius: f64,
    pub omega: f64,
    pub r4_omega: f64,
}

pub fn far_field(v: &PotentialModel, sol: &ScatteringSolution6) -> Vec<FarField> {
    let dirs: [[f64; 6]; 2] = [
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.3, -0.5, 0.2, 0.6, 0.1, -0.5],
    ];
    let mut out = Vec::new();
    for d in dirs {
        let n = potential::norm6(&d);
        let u: [f64; 6] = d.map(|c| c / n);
        for &r in &FAR_RADII {
            let t = r * v.support_radius;
            let x: P6 = u.map(|c| c * t);
            let w = sol.omega_at(&x);
            out.push(FarField {
                direction: u,
                radius: t,
                omega: w,
                r4_omega: t.powi(4) * w,
            });
        }
    }
    out
}

/// max/min − 1 of |x|⁴ω over the rays at 8, 16 and 32 R_V.
pub fn plateau_spread(rows: &[FarField], v: &PotentialModel) -> f64 {
    rows.chunks(FAR_RADII.len())
        .map(|ray| {
            let tail: Vec<f64> = ray
                .iter()
                .filter(|r| r.radius >= 8.0 * v.support_radius * (1.0 - 1e-12))
                .map(|r| r.r4_omega)
                .collect();
            let max = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
            if max > 0.0 {
                (max - min) / max
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

pub fn mc_config(cfg: &RunConfig, v: &PotentialModel) -> McConfig {
    McConfig::with_scales(
        v,
        cfg.mc.samples,
        cfg.mc.seed,
        (cfg.mc.r0, cfg.mc.tail, cfg.mc.r_s),
    )
}

/// Grid ladder plus the CLI's pointwise-bound and Q-audit assertions.
pub fn sigma_grid(
    cfg: &RunConfig,
    v: &PotentialModel,
    sol: &ScatteringSolution6,
) -> Result<GridLadder> {
    let ells: Vec<f64> = cfg
        .grids
        .ell_ladder
        .iter()
        .map(|l| l * v.support_radius)
        .collect();
    let ladder = sigma9::sigma_grid_ladder(v, sol, &ells, cfg.grids.n9, cfg.grids.memory_budget)?;
    for r in &ladder.rungs {
        if r.bound_violation > GRID_BOUND_TOL {
            return Err(Error::Invariant(format!(
                "eta <= (-2 Delta)^-1 f_l violated by {:e} (relative) at l = {}",
                r.bound_violation, r.ell
            )));
        }
        if r.min_eta < -GRID_BOUND_TOL * r.upper.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Invariant(format!(
                "eta >= 0 violated: min eta = {:e}",
                r.min_eta
            )));
        }
        if r.q_audit > Q_AUDIT_TOL {
            return Err(Error::Invariant(format!(
                "Q(0) - Q(eta) = sigma_l audit off by {:e} (relative) at l = {}",
                r.q_audit, r.ell
            )));
        }
    }
    Ok(ladder)
}

pub struct TorusRun {
    pub rows: Vec<Value>,
    pub csv: Vec<Vec<String>>,
    pub monotone: bool,
}

pub fn torus_runs(cfg: &RunConfig, v: &PotentialModel, b_m: f64) -> Result<TorusRun> {
    let mut rows = Vec::new();
    let mut csv = Vec::new();
    let mut devs = Vec::new();
    for &n in &cfg.torus.n_ladder {
        let model =
            TorusModel::with_resolution(v, cfg.torus.m_c, n, cfg.torus.k_cut, cfg.grids.fourier_n)?;
        let residual = torus::verify_block_identity(&model, cfg.torus.trials, cfg.mc.seed)?;
        let table = torus::lambda_table(&model)?;
        let coeff = table.coefficient();
        let mu = torus::mu_n(&table);
        let fit = DecayFit::from_table(&table);
        let (ls, ts) = fit.spread();
        let deviation = (coeff - b_m).abs();
        devs.push(deviation);
        csv.push(vec![
            fmt(n),
            cfg.torus.m_c.to_string(),
            fmt(cfg.torus.k_cut),
            fmt(table.lambda00()),
            fmt(coeff),
            fmt(b_m),
            fmt(deviation),
            fmt(residual),
            fmt(mu),
        ]);
        rows.push(json!({
            "n": n,
            "m_c": cfg.torus.m_c,
            "k_cut": cfg.torus.k_cut,
            "lambda00": table.lambda00(),
            "coefficient": {"value": coeff, "error": 6.0 * model.vhat_error},
            "b_m_ref": b_m,
            "deviation": deviation,
            "block_residual": residual,
            "mu_n": mu,
            "vhat_error": model.vhat_error,
            "decay_fit_spread": {"lambda": ls, "t": ts},
        }));
    }
    let monotone = devs.windows(2).all(|w| w[1] <= w[0]);
    Ok(TorusRun {
        rows,
        csv,
        monotone,
    })
}

fn mu_json(m: &MuResult) -> Value {
    json!({"value": m.value, "error": m.error, "warnings": m.warnings})
}

fn gamma_json(g: &GammaResult) -> Value {
    serde_json::to_value(g).expect("serializable")
}

fn sigma_json(s: &SigmaEstimate) -> Value {
    serde_json::to_value(s).expect("serializable")
}

fn mc_rows(s: &SigmaEstimate) -> Vec<Vec<String>> {
    s.csv_rows()
        .iter()
        .map(|e| {
            vec![
                e.term.to_string(),
                e.samples.to_string(),
                fmt(e.mean),
                fmt(e.stderr),
                fmt(e.max_weight),
                e.seed.to_string(),
            ]
        })
        .collect()
}

const MC_HEADER: [&str; 6] = ["term", "samples", "mean", "stderr", "max_weight", "seed"];

fn grid_rows(l: &GridLadder) -> Vec<Vec<String>> {
    l.rungs
        .iter()
        .map(|r| {
            vec![
                fmt(r.ell),
                fmt(r.half_width),
                r.n.to_string(),
                fmt(r.h),
                fmt(r.value),
                fmt(r.upper),
                fmt(r.bound_violation),
                fmt(r.q_audit),
            ]
        })
        .collect()
}

const GRID_HEADER: [&str; 8] = [
    "ell",
    "half_width",
    "n",
    "h",
    "sigma_l",
    "upper",
    "bound_violation",
    "q_audit",
];
const TORUS_HEADER: [&str; 9] = [
    "N",
    "m_c",
    "K",
    "lambda00",
    "coeff",
    "b_M_ref",
    "deviation",
    "block_residual",
    "mu_N",
];

/// Runs one subcommand inside a pool of the configured size.
pub fn run(cmd: Command, cfg: &RunConfig, opts: &Options) -> Result<Outcome> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.effective_workers() {
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::BadInput(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(cmd, cfg, opts))
}

fn run_inner(cmd: Command, cfg0: &RunConfig, opts: &Options) -> Result<Outcome> {
    cfg0.validate()?;
    let (cfg, degradations) = plan(cfg0, opts.budget);
    let cfg = &cfg;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let v = cfg.potential()?;
    let mut doc = json!({
        "status": "ok",
        "provenance": provenance(cfg0, cmd, &degradations),
        "lambda": cfg.potential.lambda,
    });
    let body = match cmd {
        Command::Validate => {
            let c = potential::validate(&v, CERTIFY_POINTS, cfg.mc.seed);
            let body = json!({
                "certification": c,
                "support_radius": v.support_radius,
                "integral_v": v.integral(),
            });
            if !c.passed {
                let first = &c.violations[0];
                write_report(&dir, cmd, merge(doc.clone(), body))?;
                return Err(Error::InvalidPotential(format!(
                    "{} violated by {:e} at {:?}",
                    first.identity, first.amount, first.witness
                )));
            }
            body
        }
        Command::Omega => {
            let o = solve(cfg, &v)?;
            o.sol.save(&dir.join("omega.rho"))?;
            let far = far_field(&v, &o.sol);
            for f in &far {
                if !(-scatter6::BRACKET_TOL..=1.0 + scatter6::BRACKET_TOL).contains(&f.omega) {
                    return Err(Error::Invariant(format!(
                        "0 <= omega <= 1 violated off-grid: {:e}",
                        f.omega
                    )));
                }
            }
            write_csv(
                &dir,
                "omega_far.csv",
                &["ray", "radius", "omega", "r4_omega"],
                &far.iter()
                    .enumerate()
                    .map(|(i, f)| {
                        vec![
                            (i / FAR_RADII.len()).to_string(),
                            fmt(f.radius),
                            fmt(f.omega),
                            fmt(f.r4_omega),
                        ]
                    })
                    .collect::<Vec<_>>(),
            )?;
            json!({
                "n6": cfg.grids.n6,
                "active_points": o.sol.nys.len(),
                "b_m": Measured::some(o.sol.b_m, o.b_m_err),
                "b_m_coarse": {"n": o.n_coarse, "value": o.b_m_coarse},
                "b_m_extrapolated": Measured::some(o.b_m_extrapolated, o.b_m_err),
                "integral_v_lattice": o.sol.nys.integral_v(),
                "cg": {"iterations": o.sol.cg.iterations, "relative_residual": o.sol.cg.relative_residual},
                "brackets": o.sol.brackets(),
                "far_field": far,
                "far_field_plateau_spread": plateau_spread(&far, &v),
                "rho_file": "omega.rho",
            })
        }
        Command::Coeffs => {
            let o = solve(cfg, &v)?;
            let veff = o.sol.effective_potential();
            let mf = coeffs::mu_fourier(&veff);
            let mr = coeffs::mu_realspace(&veff);
            let g = coeffs::gamma(&v, &o.sol, cfg.grids.gamma_z * v.support_radius)?;
            write_csv(
                &dir,
                "coeffs.csv",
                &["name", "value", "error"],
                &[
                    vec!["b_M".into(), fmt(o.sol.b_m), fmt(o.b_m_err)],
                    vec!["gamma".into(), fmt(g.value), fmt(g.error)],
                    vec!["mu_fourier".into(), fmt(mf.value), fmt(mf.error)],
                    vec!["mu_realspace".into(), fmt(mr.value), fmt(mr.error)],
                ],
            )?;
            json!({
                "b_m": Measured::some(o.sol.b_m, o.b_m_err),
                "gamma": gamma_json(&g),
                "mu_fourier": mu_json(&mf),
                "mu_realspace": mu_json(&mr),
                "mu_variational": Measured::some(mf.variational_value(), 0.5 * mf.error),
            })
        }
        Command::Sigma => {
            let o = solve(cfg, &v)?;
            let s = sigma9::sigma_bracket(&v, &o.sol, &mc_config(cfg, &v))?;
            write_csv(&dir, "sigma_mc.csv", &MC_HEADER, &mc_rows(&s))?;
            let grid = if cfg.grids.sigma_grid {
                let l = sigma_grid(cfg, &v, &o.sol)?;
                write_csv(&dir, "sigma_grid.csv", &GRID_HEADER, &grid_rows(&l))?;
                serde_json::to_value(&l).expect("serializable")
            } else {
                serde_json::to_value(Measured::skipped("sigma_grid = false in [grids]"))
                    .expect("serializable")
            };
            json!({"sigma": sigma_json(&s), "sigma_grid": grid})
        }
        Command::Scan => {
            let sc = ScanConfig {
                n6: cfg.grids.n6,
                mc_samples: cfg.mc.samples,
                seed: cfg.mc.seed,
                gamma_z: cfg.grids.gamma_z,
                mc_scales: (cfg.mc.r0, cfg.mc.tail, cfg.mc.r_s),
            };
            let (res, details) =
                signscan::scan_detailed(&v.with_coupling(1.0), &cfg.scan_lambdas, &sc)?;
            let verdict = res.verdict.as_str();
            let rows: Vec<Vec<String>> = res
                .rows
                .iter()
                .map(|r| {
                    vec![
                        fmt(r.lambda),
                        fmt(r.b_m),
                        fmt(r.gamma),
                        fmt(r.mu),
                        fmt(r.sigma),
                        fmt(r.combo),
                        fmt(r.combo_err),
                        verdict.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &dir,
                "scan.csv",
                &[
                    "lambda",
                    "b_M",
                    "gamma",
                    "mu",
                    "sigma",
                    "combo",
                    "combo_err",
                    "verdict",
                ],
                &rows,
            )?;
            json!({"scan": res, "rungs": details})
        }
        Command::Torus => {
            let o = solve(cfg, &v)?;
            let t = torus_runs(cfg, &v, o.sol.b_m)?;
            write_csv(&dir, "torus.csv", &TORUS_HEADER, &t.csv)?;
            json!({
                "b_m_ref": Measured::some(o.sol.b_m, o.b_m_err),
                "rows": t.rows,
                "deviation_monotone": t.monotone,
            })
        }
        Command::Report => report_body(cfg, &v, &dir)?,
    };
    doc = merge(doc, body);
    write_report(&dir, cmd, doc)
}

fn merge(mut doc: Value, body: Value) -> Value {
    if let (Some(d), Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    doc
}

fn write_report(dir: &Path, cmd: Command, doc: Value) -> Result<Outcome> {
    let doc = json::finalize(doc);
    let path = dir.join(format!("{}.json", cmd.name()));
    std::fs::write(&path, json::to_string(&doc))?;
    Ok(Outcome {
        report: path,
        value: doc,
    })
}

/// The full coefficient report at the configured coupling. Every field is
/// present; stages that cannot run report null with a reason.
fn report_body(cfg: &RunConfig, v: &PotentialModel, dir: &Path) -> Result<Value> {
    let o = solve(cfg, v)?;
    let veff = o.sol.effective_potential();
    let mf = coeffs::mu_fourier(&veff);
    let mr = coeffs::mu_realspace(&veff);
    let mu_err = mf.error.max((mf.value - mr.value).abs());
    let g = coeffs::gamma(v, &o.sol, cfg.grids.gamma_z * v.support_radius);
    let gamma = match &g {
        Ok(g) => Measured::some(g.value, g.error),
        Err(e) => Measured::skipped(e.to_string()),
    };
    let s = sigma9::sigma_bracket(v, &o.sol, &mc_config(cfg, v));
    let sigma = match &s {
        Ok(s) => {
            write_csv(dir, "sigma_mc.csv", &MC_HEADER, &mc_rows(s))?;
            Measured::some(s.value, s.error)
        }
        Err(e @ Error::BracketInverted { .. }) => Measured::skipped(e.to_string()),
        Err(e) => return Err(Error::Invariant(e.to_string())),
    };
    let sigma_bracket = match &s {
        Ok(s) => json!({"lower": s.lower, "upper": s.upper, "stderr": s.stderr}),
        Err(e) => json!({"lower": null, "upper": null, "stderr": null, "reason": e.to_string()}),
    };
    let grid = if cfg.grids.sigma_grid {
        let l = sigma_grid(cfg, v, &o.sol)?;
        write_csv(dir, "sigma_grid.csv", &GRID_HEADER, &grid_rows(&l))?;
        json!({"value": l.extrapolated, "error": l.error, "rate": l.rate, "reason": null})
    } else {
        serde_json::to_value(Measured::skipped("sigma_grid = false in [grids]"))
            .expect("serializable")
    };
    let combo = match (gamma.value, sigma.value) {
        (Some(gv), Some(sv)) => Measured::some(
            gv - mf.value - sv,
            gamma.error.unwrap() + mu_err + sigma.error.unwrap(),
        ),
        _ => Measured::skipped("gamma or sigma unavailable"),
    };
    let torus = match torus_runs(cfg, v, o.sol.b_m) {
        Ok(t) => {
            write_csv(dir, "torus.csv", &TORUS_HEADER, &t.csv)?;
            json!({"rows": t.rows, "deviation_monotone": t.monotone, "reason": null})
        }
        Err(e @ Error::BadInput(_)) => {
            json!({"rows": null, "deviation_monotone": null, "reason": e.to_string()})
        }
        Err(e) => return Err(e),
    };
    Ok(json!({
        "b_m": Measured::some(o.sol.b_m, o.b_m_err),
        "b_m_extrapolated": Measured::some(o.b_m_extrapolated, o.b_m_err),
        "gamma": gamma,
        "mu": Measured::some(mf.value, mu_err),
        "mu_fourier": mu_json(&mf),
        "mu_realspace": mu_json(&mr),
        "mu_variational": Measured::some(mf.variational_value(), 0.5 * mu_err),
        "sigma": sigma,
        "sigma_bracket": sigma_bracket,
        "sigma_grid": grid,
        "combo": combo,
        "torus": torus,
    }))
}
