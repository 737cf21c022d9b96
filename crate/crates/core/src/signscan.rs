//! Coupling sweep certifying γ(λV) − μ(λV) − σ(λV) < 0 at weak coupling.
//!
//! μ is O(λ²) while γ = O(λ³) and σ = O(λ⁴), so at small enough λ the sign
//! is fixed by μ. The scan runs the whole pipeline per rung, checks the
//! scaling fingerprints and only then reports the sign.

use crate::coeffs::{self, GammaResult, MuResult};
use crate::error::{Error, Result};
use crate::potential::PotentialModel;
use crate::scatter6::{self, richardson, ScatteringSolution6};
use crate::sigma9::{self, McConfig, SigmaEstimate};
use serde::Serialize;

/// Allowed relative drift of μ/λ² and γ/λ³ along the ladder (on top of
/// the error bars).
pub const FINGERPRINT_TOL: f64 = 0.25;
/// The sign must clear this many combined errors.
pub const MARGIN: f64 = 3.0;

#[derive(Debug, Clone, Serialize)]
pub struct ScanConfig {
    /// scattering grid resolution
    pub n6: usize,
    pub mc_samples: usize,
    pub seed: u64,
    /// γ truncation radius in units of R_V
    pub gamma_z: f64,
    /// MC proposal scales (r₀, L, r_s) in units of R_V
    pub mc_scales: (f64, f64, f64),
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            n6: 12,
            mc_samples: 100_000,
            seed: 1,
            gamma_z: 8.0,
            mc_scales: McConfig::SCALES,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub lambda: f64,
    pub b_m: f64,
    pub b_m_err: f64,
    pub gamma: f64,
    pub gamma_err: f64,
    pub mu: f64,
    pub mu_err: f64,
    pub sigma: f64,
    pub sigma_err: f64,
    pub combo: f64,
    pub combo_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    SignConfirmed,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::SignConfirmed => "SIGN_CONFIRMED",
            Verdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Fingerprint {
    pub name: &'static str,
    /// (λ, value/λ^k, error/λ^k) for the non-zero rungs
    pub points: Vec<(f64, f64, f64)>,
    pub stable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    /// sorted by increasing λ
    pub rows: Vec<ScanRow>,
    pub verdict: Verdict,
    pub fingerprints: Vec<Fingerprint>,
    pub diagnostics: Vec<String>,
}

/// Everything computed at one rung, kept for reports.
#[derive(Debug, Clone, Serialize)]
pub struct RungDetail {
    pub lambda: f64,
    pub b_m_fine: f64,
    pub b_m_coarse: f64,
    pub mu_fourier: MuResult,
    pub mu_realspace: MuResult,
    pub gamma: GammaResult,
    pub sigma: SigmaEstimate,
}

pub fn validate_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 3 {
        return Err(Error::BadInput(format!(
            "coupling ladder needs at least 3 rungs, got {}",
            ladder.len()
        )));
    }
    if ladder.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::BadInput("couplings must be finite and ≥ 0".into()));
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::BadInput(
            "coupling ladder must be strictly decreasing".into(),
        ));
    }
    Ok(())
}

/// Full pipeline at a single coupling.
pub fn rung(base: &PotentialModel, lambda: f64, cfg: &ScanConfig) -> Result<(ScanRow, RungDetail)> {
    let v = base.with_coupling(lambda);
    let sol: ScatteringSolution6 = scatter6::solve_omega(&v, cfg.n6)?;
    let n_c = (2 * cfg.n6).div_ceil(3).max(6);
    let coarse = scatter6::solve_omega(&v, n_c)?;
    let (_, b_m_err) = richardson(coarse.b_m, n_c, sol.b_m, cfg.n6);

    let veff = sol.effective_potential();
    let mu_f = coeffs::mu_fourier(&veff);
    let mu_r = coeffs::mu_realspace(&veff);
    // the two routes discretise differently; their spread is part of the error
    let mu_err = mu_f.error.max((mu_f.value - mu_r.value).abs());

    let g = coeffs::gamma(&v, &sol, cfg.gamma_z * v.support_radius)?;
    let s = sigma9::sigma_bracket(
        &v,
        &sol,
        &McConfig::with_scales(&v, cfg.mc_samples, cfg.seed, cfg.mc_scales),
    )?;

    let row = ScanRow {
        lambda,
        b_m: sol.b_m,
        b_m_err,
        gamma: g.value,
        gamma_err: g.error,
        mu: mu_f.value,
        mu_err,
        sigma: s.value,
        sigma_err: s.error,
        combo: g.value - mu_f.value - s.value,
        combo_err: g.error + mu_err + s.error,
    };
    let detail = RungDetail {
        lambda,
        b_m_fine: sol.b_m,
        b_m_coarse: coarse.b_m,
        mu_fourier: mu_f,
        mu_realspace: mu_r,
        gamma: g,
        sigma: s,
    };
    Ok((row, detail))
}

pub fn scan(base: &PotentialModel, ladder: &[f64], cfg: &ScanConfig) -> Result<ScanResult> {
    scan_detailed(base, ladder, cfg).map(|(r, _)| r)
}

pub fn scan_detailed(
    base: &PotentialModel,
    ladder: &[f64],
    cfg: &ScanConfig,
) -> Result<(ScanResult, Vec<RungDetail>)> {
    validate_ladder(ladder)?;
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for &lambda in ladder {
        let (row, d) = rung(base, lambda, cfg).map_err(|e| Error::Rung {
            lambda,
            source: Box::new(e),
        })?;
        rows.push(row);
        details.push(d);
    }
    rows.reverse();
    details.reverse();
    Ok((judge(rows), details))
}

fn fingerprint(
    name: &'static str,
    rows: &[ScanRow],
    k: i32,
    pick: impl Fn(&ScanRow) -> (f64, f64),
) -> Fingerprint {
    let points: Vec<_> = rows
        .iter()
        .filter(|r| r.lambda > 0.0)
        .map(|r| {
            let (v, e) = pick(r);
            let s = r.lambda.powi(k);
            (r.lambda, v / s, e / s)
        })
        .collect();
    let stable = points.len() >= 2
        && points.iter().all(|a| {
            points.iter().all(|b| {
                let scale = a.1.abs().max(b.1.abs());
                (a.1 - b.1).abs() <= FINGERPRINT_TOL * scale + a.2 + b.2
            })
        });
    Fingerprint {
        name,
        points,
        stable,
    }
}

/// Applies the verdict rule to finished rows (sorted by increasing λ).
pub fn judge(rows: Vec<ScanRow>) -> ScanResult {
    let fps = vec![
        fingerprint("mu/lambda^2", &rows, 2, |r| (r.mu, r.mu_err)),
        fingerprint("gamma/lambda^3", &rows, 3, |r| (r.gamma, r.gamma_err)),
    ];
    let mut diagnostics = Vec::new();
    for r in &rows {
        for (name, v, e) in [
            ("b_M", r.b_m, r.b_m_err),
            ("gamma", r.gamma, r.gamma_err),
            ("mu", r.mu, r.mu_err),
            ("sigma", r.sigma, r.sigma_err),
        ] {
            if v < -e {
                diagnostics.push(format!(
                    "{name} = {v:e} is negative beyond its error {e:e} at lambda = {}",
                    r.lambda
                ));
            }
        }
    }
    for f in &fps {
        if !f.stable {
            diagnostics.push(format!(
                "scaling fingerprint {} is not stable along the ladder",
                f.name
            ));
        }
    }
    let smallest = rows.first();
    let sign_ok = smallest.is_some_and(|r| r.combo < 0.0 && -r.combo > MARGIN * r.combo_err);
    if let Some(r) = smallest {
        if !sign_ok {
            diagnostics.push(format!(
                "at lambda = {}: combo = {:e} does not clear {MARGIN} x error {:e}",
                r.lambda, r.combo, r.combo_err
            ));
        }
    }
    let verdict = if sign_ok && fps.iter().all(|f| f.stable) && diagnostics.is_empty() {
        Verdict::SignConfirmed
    } else {
        Verdict::Inconclusive
    };
    ScanResult {
        rows,
        verdict,
        fingerprints: fps,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(lambda: f64, mu1: f64, g1: f64) -> ScanRow {
        let (mu, gamma) = (mu1 * lambda * lambda, g1 * lambda.powi(3));
        ScanRow {
            lambda,
            b_m: lambda,
            b_m_err: 0.0,
            gamma,
            gamma_err: 0.1 * gamma,
            mu,
            mu_err: 0.01 * mu,
            sigma: 0.0,
            sigma_err: 0.0,
            combo: gamma - mu,
            combo_err: 0.1 * gamma + 0.01 * mu,
        }
    }

    #[test]
    fn ladder_validation() {
        assert!(validate_ladder(&[0.4, 0.2, 0.1]).is_ok());
        assert!(validate_ladder(&[0.4, 0.2, 0.0]).is_ok());
        assert!(validate_ladder(&[0.4, 0.2]).is_err());
        assert!(validate_ladder(&[0.4, 0.4, 0.1]).is_err());
        assert!(validate_ladder(&[0.1, 0.2, 0.4]).is_err());
        assert!(validate_ladder(&[0.4, 0.2, -0.1]).is_err());
    }

    #[test]
    fn clean_scaling_confirms_the_sign() {
        let rows = vec![
            row(0.1, 0.03, 1e-4),
            row(0.2, 0.03, 1e-4),
            row(0.4, 0.03, 1e-4),
        ];
        let r = judge(rows);
        assert_eq!(r.verdict, Verdict::SignConfirmed, "{:?}", r.diagnostics);
    }

    #[test]
    fn broken_fingerprint_is_inconclusive() {
        let rows = vec![
            row(0.1, 0.03, 1e-4),
            row(0.2, 0.05, 1e-4),
            row(0.4, 0.03, 1e-4),
        ];
        let r = judge(rows);
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(r.diagnostics.iter().any(|d| d.contains("mu/lambda^2")));
    }

    #[test]
    fn positive_combo_is_inconclusive() {
        let rows = vec![
            row(0.1, 1e-6, 1.0),
            row(0.2, 1e-6, 1.0),
            row(0.4, 1e-6, 1.0),
        ];
        assert_eq!(judge(rows).verdict, Verdict::Inconclusive);
    }

    #[test]
    fn zero_coupling_rung_is_all_zero() {
        let cfg = ScanConfig {
            n6: 6,
            mc_samples: 1000,
            ..Default::default()
        };
        let (r, _) = rung(&PotentialModel::default_bump(1.0), 0.0, &cfg).unwrap();
        assert_eq!(
            (r.b_m, r.gamma, r.mu, r.sigma, r.combo),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(r.combo_err, 0.0);
    }
}
