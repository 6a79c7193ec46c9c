//! The inclusion-process generator `L_k`, its spectrum, Dirichlet form,
//! gap sandwich against the random walk, and the total-variation bounds.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config_space::{sip_measure, state_cap, ConfigSpace, SipMeasure};
use crate::error::{Result, SipError};
use crate::graph::{build_rw_generator, rw_spectrum, Graph};
use crate::linalg::{self, IdentityReport, Spectrum};

/// Slack allowed on the gap sandwich and on monotonicity in k.
pub const GAP_TOL: f64 = 1e-8;

/// Rate matrix of `L_k` together with its reversible law.
#[derive(Debug, Clone)]
pub struct SipGenerator {
    pub space: ConfigSpace,
    pub matrix: DMatrix<f64>,
    pub measure: SipMeasure,
}

pub fn build_sip_generator(g: &Graph, k: usize) -> Result<SipGenerator> {
    build_sip_generator_with_cap(g, k, state_cap()?)
}

pub fn build_sip_generator_with_cap(g: &Graph, k: usize, cap: usize) -> Result<SipGenerator> {
    let space = ConfigSpace::with_cap(g.n(), k, cap)?;
    let matrix = sip_rate_matrix(g, &space);
    let measure = sip_measure(g, &space)?;
    Ok(SipGenerator {
        space,
        matrix,
        measure,
    })
}

/// Off-diagonal rate `eta -> eta - delta_x + delta_y` is `eta_x c_xy (alpha_y + eta_y)`.
pub fn sip_rate_matrix(g: &Graph, space: &ConfigSpace) -> DMatrix<f64> {
    let n = g.n();
    let size = space.size();
    let mut m = DMatrix::<f64>::zeros(size, size);
    for (i, eta) in space.iter() {
        let occ = eta.occupations();
        let mut out = 0.0;
        for x in 0..n {
            if occ[x] == 0 {
                continue;
            }
            for (y, c) in g.neighbours(x) {
                let rate = occ[x] as f64 * c * (g.alpha()[y] + occ[y] as f64);
                let target = eta.moved(x, y).expect("occupied site");
                let j = space.rank_of(&target);
                m[(i, j)] += rate;
                out += rate;
            }
        }
        m[(i, i)] = -out;
    }
    m
}

impl SipGenerator {
    pub fn k(&self) -> usize {
        self.space.k()
    }

    pub fn size(&self) -> usize {
        self.space.size()
    }

    pub fn rate_scale(&self) -> f64 {
        linalg::max_abs(&self.matrix).max(1.0)
    }

    /// Largest `|mu(eta) L(eta,eta') - mu(eta') L(eta',eta)|` relative to the max flux.
    pub fn reversibility_residual(&self) -> f64 {
        let mu = &self.measure.probabilities;
        let size = self.size();
        let mut worst = 0.0_f64;
        let mut scale = 0.0_f64;
        for i in 0..size {
            for j in 0..size {
                let a = mu[i] * self.matrix[(i, j)];
                let b = mu[j] * self.matrix[(j, i)];
                worst = worst.max((a - b).abs());
                scale = scale.max(a.abs());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.size() {
            return Err(SipError::DimensionMismatch {
                expected: self.size(),
                got: f.len(),
            });
        }
        let v = &self.matrix * nalgebra::DVector::from_column_slice(f);
        Ok(v.iter().copied().collect())
    }
}

pub fn sip_spectrum(gen: &SipGenerator) -> Result<Spectrum> {
    linalg::reversible_spectrum(&gen.matrix, &gen.measure.probabilities, true)
}

pub fn sip_eigenvalues(gen: &SipGenerator) -> Result<Vec<f64>> {
    Ok(linalg::reversible_spectrum(&gen.matrix, &gen.measure.probabilities, false)?.eigenvalues)
}

/// `E_{alpha,k}(f) = <f, -L_k f>_{alpha,k}`.
pub fn sip_dirichlet_form(gen: &SipGenerator, f: &[f64]) -> Result<f64> {
    let lf = gen.apply(f)?;
    Ok(-gen.measure.inner_product(f, &lf)?)
}

/// Outcome of one named check inside a report.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapCheck {
    pub name: String,
    pub k: Option<usize>,
    pub status: CheckStatus,
    pub detail: String,
}

impl GapCheck {
    fn new(name: &str, k: Option<usize>, pass: bool, detail: String) -> Self {
        GapCheck {
            name: name.into(),
            k,
            status: if pass { CheckStatus::Pass } else { CheckStatus::Fail },
            detail,
        }
    }
}

/// Spectral gaps of `SIP_k` for `k = 1..=K` against the random-walk gap.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub gap_rw: f64,
    pub alpha_min: f64,
    /// `(k, gap_k)` for `k = 1..=K`.
    pub gap_k: Vec<(usize, f64)>,
    /// Minimum of `gap_k` over the computed `2 <= k <= K`.
    pub gap_sip: f64,
    pub lower_bound: f64,
    /// `gap_k / gap_rw` for each computed k.
    pub ratios: Vec<(usize, f64)>,
    pub checks: Vec<GapCheck>,
    pub note: String,
}

impl GapReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    /// Converts the first failing check into an error.
    pub fn ensure(&self) -> Result<()> {
        match self.checks.iter().find(|c| c.status == CheckStatus::Fail) {
            None => Ok(()),
            Some(c) => Err(SipError::verification(&c.name, c.detail.clone())),
        }
    }
}

/// Gap of `SIP_k` on `g` (eigenvalues only).
pub fn sip_gap(g: &Graph, k: usize) -> Result<f64> {
    let gen = build_sip_generator(g, k)?;
    let ev = sip_eigenvalues(&gen)?;
    Ok(ev.get(1).copied().unwrap_or(0.0))
}

/// Checks `(1 ^ alpha_min) gap_RW <= gap_k <= gap_RW` for `2 <= k <= max_k`,
/// equality when `alpha_min >= 1`, and `gap_k` non-increasing in k.
pub fn verify_theorem_1(g: &Graph, max_k: usize) -> Result<GapReport> {
    if max_k < 2 {
        return Err(SipError::InvalidInput(format!("K must be at least 2, got {max_k}")));
    }
    let gap_rw = rw_spectrum(&build_rw_generator(g))?.gap();
    let spectra: Vec<(usize, Vec<f64>)> = (1..=max_k)
        .into_par_iter()
        .map(|k| {
            let gen = build_sip_generator(g, k)?;
            Ok((k, sip_eigenvalues(&gen)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(gap_report_from_spectra(g, gap_rw, &spectra))
}

fn gap_report_from_spectra(g: &Graph, gap_rw: f64, spectra: &[(usize, Vec<f64>)]) -> GapReport {
    let alpha_min = g.alpha_min();
    let lower_bound = alpha_min.min(1.0) * gap_rw;
    let tol = GAP_TOL * (1.0 + gap_rw);
    let gap_k: Vec<(usize, f64)> = spectra
        .iter()
        .map(|(k, ev)| (*k, ev.get(1).copied().unwrap_or(0.0)))
        .collect();
    let gap_sip = gap_k
        .iter()
        .filter(|(k, _)| *k >= 2)
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let ratios = gap_k
        .iter()
        .map(|&(k, v)| (k, if gap_rw > 0.0 { v / gap_rw } else { f64::NAN }))
        .collect();

    let mut checks = Vec::new();
    for &(k, gap) in gap_k.iter().filter(|(k, _)| *k >= 2) {
        checks.push(GapCheck::new(
            "lower-bound",
            Some(k),
            lower_bound - tol <= gap,
            format!("(1 ^ alpha_min) gap_RW = {lower_bound:.17e}, gap_k = {gap:.17e}"),
        ));
        checks.push(GapCheck::new(
            "upper-bound",
            Some(k),
            gap <= gap_rw + tol,
            format!("gap_k = {gap:.17e}, gap_RW = {gap_rw:.17e}"),
        ));
        if alpha_min >= 1.0 {
            checks.push(GapCheck::new(
                "equality",
                Some(k),
                (gap - gap_rw).abs() <= tol,
                format!("|gap_k - gap_RW| = {:.3e}", (gap - gap_rw).abs()),
            ));
        } else {
            checks.push(GapCheck {
                name: "equality".into(),
                k: Some(k),
                status: CheckStatus::NotApplicable,
                detail: format!("alpha_min = {alpha_min} < 1"),
            });
        }
    }
    for w in gap_k.windows(2) {
        let ((k0, a), (k1, b)) = (w[0], w[1]);
        checks.push(GapCheck::new(
            "monotone-in-k",
            Some(k1),
            b <= a + tol,
            format!("gap_{k1} = {b:.17e} vs gap_{k0} = {a:.17e}"),
        ));
    }
    for w in spectra.windows(2) {
        let missing = linalg::unmatched_eigenvalues(&w[0].1, &w[1].1);
        checks.push(GapCheck::new(
            "spectrum-inclusion",
            Some(w[1].0),
            missing.is_empty(),
            format!("{} eigenvalues of -L_{} not found in -L_{}", missing.len(), w[0].0, w[1].0),
        ));
    }
    if let Some((_, rw_from_sip)) = gap_k.first() {
        checks.push(GapCheck::new(
            "gap-1-equals-gap-rw",
            Some(1),
            (rw_from_sip - gap_rw).abs() <= tol,
            format!("gap_1 = {rw_from_sip:.17e}, gap_RW = {gap_rw:.17e}"),
        ));
    }

    GapReport {
        gap_rw,
        alpha_min,
        gap_k,
        gap_sip,
        lower_bound,
        ratios,
        checks,
        note: "gap_SIP is the minimum over the computed range 2 <= k <= K only; \
               the bounds are checked for each computed k"
            .into(),
    }
}

/// Transition matrix `exp(t L)` from an eigendecomposition orthonormal in `L^2(pi)`.
pub fn semigroup(spectrum: &Spectrum, t: f64) -> Result<DMatrix<f64>> {
    let v = spectrum
        .eigenvectors
        .as_ref()
        .ok_or_else(|| SipError::InvalidInput("semigroup needs eigenvectors".into()))?;
    let size = v.nrows();
    let pi = &spectrum.stationary;
    let mut scaled = v.clone();
    for (j, lambda) in spectrum.eigenvalues.iter().enumerate() {
        let w = (-lambda * t).exp();
        scaled.column_mut(j).scale_mut(w);
    }
    let mut p = scaled * v.transpose();
    for i in 0..size {
        for j in 0..size {
            p[(i, j)] *= pi[j];
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TvRow {
    pub t: f64,
    /// `sup_eta 2 ||mu_t^eta - mu||_TV`.
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

/// Slack on either side of the total-variation sandwich.
pub const TV_SLACK: f64 = 1e-8;

/// Exact `sup_eta 2 TV` against `exp(-lambda_1 t)` and `(min mu)^{-1/2} exp(-lambda_1 t)`.
pub fn tv_sandwich(gen: &SipGenerator, times: &[f64]) -> Result<Vec<TvRow>> {
    let spectrum = sip_spectrum(gen)?;
    tv_sandwich_from_spectrum(&spectrum, times)
}

pub fn tv_sandwich_from_spectrum(spectrum: &Spectrum, times: &[f64]) -> Result<Vec<TvRow>> {
    let pi = &spectrum.stationary;
    let min_mu = pi.iter().copied().fold(f64::INFINITY, f64::min);
    let gap = spectrum.gap();
    times
        .iter()
        .map(|&t| {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(SipError::InvalidInput(format!("time {t} must be finite and >= 0")));
            }
            let p = semigroup(spectrum, t)?;
            let value = (0..p.nrows())
                .map(|i| (0..p.ncols()).map(|j| (p[(i, j)] - pi[j]).abs()).sum::<f64>())
                .fold(0.0_f64, f64::max);
            let lower = (-gap * t).exp();
            let upper = lower / min_mu.sqrt();
            let pass = lower - TV_SLACK <= value && value <= upper + TV_SLACK;
            Ok(TvRow {
                t,
                value,
                lower,
                upper,
                pass,
            })
        })
        .collect()
}

/// Row sums and positivity of `exp(t L)`.
pub fn semigroup_stochasticity(spectrum: &Spectrum, t: f64) -> Result<IdentityReport> {
    let p = semigroup(spectrum, t)?;
    let row_err = (0..p.nrows())
        .map(|i| (p.row(i).sum() - 1.0).abs())
        .fold(0.0_f64, f64::max);
    let neg = p.iter().copied().fold(0.0_f64, |a, v| a.max(-v));
    Ok(IdentityReport::new(
        format!("exp(tL) stochastic at t={t}"),
        row_err.max(if neg > 1e-12 { neg } else { 0.0 }),
        1e-9,
    ))
}
