//! Brownian energy process through exact polynomial calculus on the
//! homogeneous carrier. The simplex constraint is never substituted.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::config_space::{ln_factorial, rank, unrank, ConfigSpace};
use crate::error::{Result, SipError};
use crate::graph::{build_rw_generator, rw_spectrum, Graph};
use crate::linalg::{self, identity_report, IdentityReport, EIGEN_MATCH_TOL, IDENTITY_TOL};
use crate::sip::{build_sip_generator, sip_eigenvalues, GAP_TOL};

/// Sparse polynomial in `n` variables with arbitrary (possibly mixed) degrees.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    pub n: usize,
    pub terms: BTreeMap<Vec<u32>, f64>,
}

impl Poly {
    pub fn zero(n: usize) -> Self {
        Poly {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn monomial(exponents: Vec<u32>, coeff: f64) -> Self {
        let mut p = Poly::zero(exponents.len());
        p.add_term(exponents, coeff);
        p
    }

    pub fn add_term(&mut self, exponents: Vec<u32>, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let slot = self.terms.entry(exponents).or_insert(0.0);
        *slot += coeff;
    }

    pub fn add_scaled(&mut self, other: &Poly, s: f64) {
        for (e, &c) in &other.terms {
            self.add_term(e.clone(), s * c);
        }
    }

    pub fn partial(&self, x: usize) -> Poly {
        let mut out = Poly::zero(self.n);
        for (e, &c) in &self.terms {
            if e[x] > 0 {
                let mut d = e.clone();
                d[x] -= 1;
                out.add_term(d, c * e[x] as f64);
            }
        }
        out
    }

    pub fn times_var(&self, x: usize) -> Poly {
        let mut out = Poly::zero(self.n);
        for (e, &c) in &self.terms {
            let mut d = e.clone();
            d[x] += 1;
            out.add_term(d, c);
        }
        out
    }

    pub fn prune(&mut self) {
        self.terms.retain(|_, c| *c != 0.0);
    }

    pub fn degrees(&self) -> Vec<u32> {
        let mut d: Vec<u32> = self.terms.keys().map(|e| e.iter().sum()).collect();
        d.sort_unstable();
        d.dedup();
        d
    }
}

/// Homogeneous polynomial of fixed degree, keyed by the lexicographic rank of
/// the exponent vector in `Xi_degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogPolynomial {
    n: usize,
    degree: usize,
    coeffs: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Term {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

impl HomogPolynomial {
    pub fn zero(n: usize, degree: usize) -> Self {
        HomogPolynomial {
            n,
            degree,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn from_terms(n: usize, degree: usize, terms: &[Term]) -> Result<Self> {
        let mut p = HomogPolynomial::zero(n, degree);
        for t in terms {
            if t.exponents.len() != n {
                return Err(SipError::DimensionMismatch {
                    expected: n,
                    got: t.exponents.len(),
                });
            }
            let d: u32 = t.exponents.iter().sum();
            if d as usize != degree {
                return Err(SipError::InvalidInput(format!(
                    "monomial {:?} has degree {d}, expected {degree}",
                    t.exponents
                )));
            }
            *p.coeffs.entry(rank(&t.exponents)).or_insert(0.0) += t.coeff;
        }
        p.coeffs.retain(|_, c| *c != 0.0);
        Ok(p)
    }

    /// Rejects polynomials with more than one degree among their terms.
    pub fn from_poly(p: &Poly, degree: usize) -> Result<Self> {
        let terms: Vec<Term> = p
            .terms
            .iter()
            .map(|(e, &c)| Term {
                exponents: e.clone(),
                coeff: c,
            })
            .collect();
        Self::from_terms(p.n, degree, &terms)
    }

    pub fn to_poly(&self) -> Poly {
        let mut p = Poly::zero(self.n);
        for (&r, &c) in &self.coeffs {
            p.add_term(unrank(self.n, self.degree, r), c);
        }
        p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, exponents: &[u32]) -> f64 {
        self.coeffs.get(&rank(exponents)).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> Vec<Term> {
        self.coeffs
            .iter()
            .map(|(&r, &c)| Term {
                exponents: unrank(self.n, self.degree, r),
                coeff: c,
            })
            .collect()
    }

    /// Evaluation at an arbitrary point (not necessarily on the simplex).
    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms()
            .iter()
            .map(|t| {
                t.coeff
                    * t.exponents
                        .iter()
                        .zip(z)
                        .map(|(&e, &v)| v.powi(e as i32))
                        .product::<f64>()
            })
            .sum()
    }

    pub fn max_coeff_diff(&self, other: &HomogPolynomial) -> f64 {
        let keys: std::collections::BTreeSet<usize> =
            self.coeffs.keys().chain(other.coeffs.keys()).copied().collect();
        keys.into_iter()
            .map(|r| {
                (self.coeffs.get(&r).copied().unwrap_or(0.0)
                    - other.coeffs.get(&r).copied().unwrap_or(0.0))
                .abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> HomogPolynomial {
        let mut out = self.clone();
        for c in out.coeffs.values_mut() {
            *c *= s;
        }
        out.coeffs.retain(|_, c| *c != 0.0);
        out
    }
}

impl Serialize for HomogPolynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.terms().serialize(s)
    }
}

impl<'de> Deserialize<'de> for HomogPolynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let terms = Vec::<Term>::deserialize(d)?;
        let first = terms
            .first()
            .ok_or_else(|| serde::de::Error::custom("empty term list carries no degree"))?;
        let n = first.exponents.len();
        let degree = first.exponents.iter().sum::<u32>() as usize;
        HomogPolynomial::from_terms(n, degree, &terms).map_err(serde::de::Error::custom)
    }
}

/// Dirichlet law on the simplex; only its normalization is kept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimplexMeasure {
    pub alpha: Vec<f64>,
    /// `log B(alpha) = sum log Gamma(alpha_x) - log Gamma(|alpha|)`.
    pub log_beta: f64,
}

impl SimplexMeasure {
    pub fn new(alpha: &[f64]) -> Result<Self> {
        if alpha.is_empty() || alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(SipError::InvalidInput("alpha must be positive and finite".into()));
        }
        let total: f64 = alpha.iter().sum();
        let log_beta = alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(total);
        Ok(SimplexMeasure {
            alpha: alpha.to_vec(),
            log_beta,
        })
    }
}

/// `f -> sum_eta f(eta) zeta^eta / eta!`.
pub fn lambda_operator(n: usize, k: usize, f: &[f64]) -> Result<HomogPolynomial> {
    let space = ConfigSpace::new(n, k)?;
    if f.len() != space.size() {
        return Err(SipError::DimensionMismatch {
            expected: space.size(),
            got: f.len(),
        });
    }
    let mut p = HomogPolynomial::zero(n, k);
    for (r, eta) in space.iter() {
        let c = f[r] / eta_factorial(&eta.0);
        if c != 0.0 {
            p.coeffs.insert(r, c);
        }
    }
    Ok(p)
}

/// Inverse of [`lambda_operator`] on degree-k polynomials.
pub fn lambda_inverse(p: &HomogPolynomial) -> Result<Vec<f64>> {
    let space = ConfigSpace::new(p.n, p.degree)?;
    Ok(space
        .iter()
        .map(|(r, eta)| p.coeffs.get(&r).copied().unwrap_or(0.0) * eta_factorial(&eta.0))
        .collect())
}

fn eta_factorial(eta: &[u32]) -> f64 {
    eta.iter().map(|&e| ln_factorial(e)).sum::<f64>().exp().round()
}

/// Symbolic BEP generator on an arbitrary polynomial.
pub fn apply_bep_generator_poly(p: &Poly, g: &Graph) -> Poly {
    let n = g.n();
    let alpha = g.alpha();
    let mut out = Poly::zero(n);
    let first: Vec<Poly> = (0..n).map(|x| p.partial(x)).collect();
    for x in 0..n {
        for y in 0..n {
            let c = g.c(x, y);
            if x == y || c == 0.0 {
                continue;
            }
            let half = 0.5 * c;
            // (d_x - d_y) p
            let mut grad = first[x].clone();
            grad.add_scaled(&first[y], -1.0);
            // -(alpha_y zeta_x - alpha_x zeta_y)(d_x - d_y) p
            out.add_scaled(&grad.times_var(x), -half * alpha[y]);
            out.add_scaled(&grad.times_var(y), half * alpha[x]);
            // zeta_x zeta_y (d_x - d_y)^2 p
            let mut second = grad.partial(x);
            second.add_scaled(&grad.partial(y), -1.0);
            out.add_scaled(&second.times_var(x).times_var(y), half);
        }
    }
    out.prune();
    out
}

/// Symbolic BEP generator on the homogeneous carrier; the output degree is checked.
pub fn apply_bep_generator(p: &HomogPolynomial, g: &Graph) -> Result<HomogPolynomial> {
    if p.n != g.n() {
        return Err(SipError::DimensionMismatch {
            expected: g.n(),
            got: p.n,
        });
    }
    let out = apply_bep_generator_poly(&p.to_poly(), g);
    let degrees = out.degrees();
    if degrees.iter().any(|&d| d as usize != p.degree) {
        return Err(SipError::verification(
            "bep degree preservation",
            format!("input degree {}, output degrees {degrees:?}", p.degree),
        ));
    }
    HomogPolynomial::from_poly(&out, p.degree)
}

/// Matrix of the BEP generator in the basis `zeta^eta / eta!` of degree-k polynomials.
pub fn bep_matrix(g: &Graph, k: usize) -> Result<DMatrix<f64>> {
    let n = g.n();
    let size = ConfigSpace::new(n, k)?.size();
    let columns: Vec<Vec<f64>> = (0..size)
        .into_par_iter()
        .map(|col| {
            let mut e = vec![0.0; size];
            e[col] = 1.0;
            let image = apply_bep_generator(&lambda_operator(n, k, &e)?, g)?;
            lambda_inverse(&image)
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(size, size, |i, j| columns[j][i]))
}

pub fn check_bep_intertwining(g: &Graph, k: usize) -> Result<IdentityReport> {
    let m = bep_matrix(g, k)?;
    let l = build_sip_generator(g, k)?.matrix;
    Ok(identity_report(
        format!("BEP matrix equals L_k, k={k}"),
        &m,
        &l,
        IDENTITY_TOL,
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BepLevel {
    pub k: usize,
    /// Eigenvalues of minus the BEP matrix, ascending.
    pub eigenvalues: Vec<f64>,
    /// Relative asymmetry of the matrix after symmetrization by `mu_{alpha,k}`.
    pub asymmetry: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BepReport {
    pub max_degree: usize,
    pub gap_rw: f64,
    pub alpha_min: f64,
    pub log_beta: f64,
    pub levels: Vec<BepLevel>,
    /// Multiset union of the level spectra, ascending.
    pub truncated_spectrum: Vec<f64>,
    pub gap_bep: f64,
    pub lower_bound: f64,
    pub checks: Vec<IdentityReport>,
    pub note: String,
}

impl BepReport {
    pub fn passed(&self) -> bool {
        linalg::all_pass(&self.checks)
    }
}

/// Spectrum of minus `m` through its `mu`-symmetrization, with the relative
/// asymmetry left after symmetrizing.
fn level_spectrum(m: &DMatrix<f64>, mu: &[f64]) -> (Vec<f64>, f64) {
    let sq: Vec<f64> = mu.iter().map(|p| p.sqrt()).collect();
    let sym = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * sq[i] / sq[j]);
    let asymmetry = linalg::max_abs(&(&sym - sym.transpose())) / linalg::max_abs(&sym).max(1.0);
    let eigenvalues = linalg::reversible_spectrum(m, mu, false)
        .map(|s| s.eigenvalues)
        .unwrap_or_default();
    (eigenvalues, asymmetry)
}

/// Spectral checks of the BEP generator truncated to homogeneous degrees `0..=K`.
pub fn verify_theorem_2(g: &Graph, max_degree: usize) -> Result<BepReport> {
    if max_degree < 1 {
        return Err(SipError::InvalidInput("K must be at least 1".into()));
    }
    let n = g.n();
    let rw = rw_spectrum(&build_rw_generator(g))?;
    let gap_rw = rw.gap();
    let alpha_min = g.alpha_min();
    let lower_bound = alpha_min.min(1.0) * gap_rw;
    let tol = GAP_TOL * (1.0 + gap_rw);
    let mut checks = Vec::new();

    let per_level: Vec<(BepLevel, IdentityReport, Vec<f64>)> = (0..=max_degree)
        .into_par_iter()
        .map(|k| {
            let m = bep_matrix(g, k)?;
            let gen = build_sip_generator(g, k)?;
            let report = identity_report(
                format!("BEP matrix equals L_k, k={k}"),
                &m,
                &gen.matrix,
                IDENTITY_TOL,
            );
            let (eigenvalues, asymmetry) = level_spectrum(&m, &gen.measure.probabilities);
            let gap = eigenvalues.get(1).copied().unwrap_or(0.0);
            Ok((
                BepLevel {
                    k,
                    eigenvalues,
                    asymmetry,
                    gap,
                },
                report,
                sip_eigenvalues(&gen)?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut levels = Vec::new();
    let mut truncated = Vec::new();
    for (level, matrix_check, sip_ev) in per_level {
        let k = level.k;
        checks.push(matrix_check);
        let scale = 1.0 + sip_ev.last().copied().unwrap_or(0.0);
        checks.push(IdentityReport::new(
            format!("BEP matrix reversible w.r.t. mu_(alpha,k), k={k}"),
            level.asymmetry,
            EIGEN_MATCH_TOL,
        ));
        let worst = if level.eigenvalues.len() == sip_ev.len() {
            level
                .eigenvalues
                .iter()
                .zip(&sip_ev)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        checks.push(IdentityReport::new(
            format!("BEP level spectrum equals spec(-L_k), k={k}"),
            worst,
            EIGEN_MATCH_TOL * scale,
        ));
        truncated.extend_from_slice(&level.eigenvalues);
        levels.push(level);
    }
    truncated.sort_by(f64::total_cmp);

    let zero_tol = EIGEN_MATCH_TOL * (1.0 + truncated.last().copied().unwrap_or(0.0));
    let gap_bep = truncated
        .iter()
        .copied()
        .find(|&v| v > zero_tol)
        .unwrap_or(f64::INFINITY);
    let min_level_gap = levels
        .iter()
        .filter(|l| l.k >= 1)
        .map(|l| l.gap)
        .fold(f64::INFINITY, f64::min);
    checks.push(IdentityReport::new(
        "truncated gap equals min over levels of gap_k",
        (gap_bep - min_level_gap).abs(),
        tol,
    ));
    checks.push(IdentityReport::new(
        "zero has multiplicity K+1 in the truncation",
        (truncated.iter().filter(|&&v| v.abs() <= zero_tol).count() as f64 - (max_degree + 1) as f64).abs(),
        0.0,
    ));
    checks.push(IdentityReport::new(
        "(1 ^ alpha_min) gap_RW <= gap_BEP(K)",
        (lower_bound - gap_bep).max(0.0),
        tol,
    ));
    checks.push(IdentityReport::new(
        "gap_BEP(K) <= gap_RW",
        (gap_bep - gap_rw).max(0.0),
        tol,
    ));
    if alpha_min >= 1.0 {
        checks.push(IdentityReport::new(
            "gap_BEP(K) = gap_RW (alpha_min >= 1)",
            (gap_bep - gap_rw).abs(),
            tol,
        ));
    }
    let nearest = truncated
        .iter()
        .map(|v| (v - gap_rw).abs())
        .fold(f64::INFINITY, f64::min);
    checks.push(IdentityReport::new(
        "gap_RW is an eigenvalue of the truncation",
        nearest,
        tol,
    ));

    // The first-order polynomial of the gap eigenfunction of A_alpha.
    let psi = rw
        .eigenvector(1)
        .ok_or_else(|| SipError::Eigen("random-walk eigenvector unavailable".into()))?;
    let linear: Vec<Term> = psi
        .iter()
        .enumerate()
        .map(|(x, &v)| Term {
            exponents: (0..n).map(|y| u32::from(y == x)).collect(),
            coeff: v,
        })
        .collect();
    let f_psi = HomogPolynomial::from_terms(n, 1, &linear)?;
    let image = apply_bep_generator(&f_psi, g)?;
    let psi_scale = psi.iter().map(|v| v.abs()).fold(0.0, f64::max);
    checks.push(IdentityReport::new(
        "BEP generator maps f_psi to -gap_RW f_psi",
        image.max_coeff_diff(&f_psi.scaled(-gap_rw)),
        IDENTITY_TOL * (1.0 + g.max_weight() * g.alpha_total()) * psi_scale.max(1.0),
    ));

    Ok(BepReport {
        max_degree,
        gap_rw,
        alpha_min,
        log_beta: SimplexMeasure::new(g.alpha())?.log_beta,
        levels,
        truncated_spectrum: truncated,
        gap_bep,
        lower_bound,
        checks,
        note: "spectrum of the homogeneous carrier of degrees 0..=K; on the simplex lower degrees embed into higher ones, so only the eigenvalue set (not multiplicity) transfers".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_examples() {
        let p = lambda_operator(3, 1, &[1.0, 1.0, 1.0]).unwrap();
        for x in 0..3 {
            let mut e = vec![0; 3];
            e[x] = 1;
            assert_eq!(p.coeff(&e), 1.0);
        }
        let space = ConfigSpace::new(3, 4).unwrap();
        let target = [2u32, 0, 2];
        let mut f = vec![0.0; space.size()];
        f[rank(&target)] = 1.0;
        let p = lambda_operator(3, 4, &f).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.coeff(&target), 0.25);
        assert_eq!(lambda_inverse(&p).unwrap(), f);
    }

    #[test]
    fn constant_is_annihilated() {
        let g = Graph::path(vec![0.5, 2.0]).unwrap();
        let one = HomogPolynomial::from_terms(2, 0, &[Term { exponents: vec![0, 0], coeff: 3.0 }]).unwrap();
        assert!(apply_bep_generator(&one, &g).unwrap().is_empty());
    }

    #[test]
    fn two_site_linear_eigenfunction() {
        let (a1, a2, c) = (0.7, 1.6, 1.0);
        let g = Graph::path(vec![a1, a2]).unwrap();
        let p = HomogPolynomial::from_terms(
            2,
            1,
            &[
                Term { exponents: vec![1, 0], coeff: a2 },
                Term { exponents: vec![0, 1], coeff: -a1 },
            ],
        )
        .unwrap();
        let out = apply_bep_generator(&p, &g).unwrap();
        assert!(out.max_coeff_diff(&p.scaled(-c * (a1 + a2))) < 1e-14);
    }

    #[test]
    fn mixed_degree_rejected() {
        let terms = [
            Term { exponents: vec![1, 0], coeff: 1.0 },
            Term { exponents: vec![1, 1], coeff: 1.0 },
        ];
        assert!(HomogPolynomial::from_terms(2, 1, &terms).is_err());
    }

    #[test]
    fn matrix_level_one_is_walk() {
        let g = Graph::cycle(vec![0.3, 1.0, 4.0, 0.9]).unwrap();
        let m = bep_matrix(&g, 1).unwrap();
        let a = build_rw_generator(&g).matrix;
        let space = ConfigSpace::new(4, 1).unwrap();
        let site = |r: usize| space.state(r).0.iter().position(|&e| e == 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((m[(i, j)] - a[(site(i), site(j))]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn matrix_two_site_pair() {
        let g = Graph::path(vec![1.0, 1.0]).unwrap();
        let m = bep_matrix(&g, 2).unwrap();
        let l = build_sip_generator(&g, 2).unwrap().matrix;
        assert!(linalg::max_abs(&(m - l)) < 1e-14);
    }

    #[test]
    fn complete_graph_union() {
        let alpha = vec![0.4, 1.3, 2.0];
        let total: f64 = alpha.iter().sum();
        let g = Graph::complete(alpha).unwrap();
        let r = verify_theorem_2(&g, 3).unwrap();
        assert!(r.passed(), "{:#?}", r.checks);
        let distinct = linalg::cluster_sorted(&r.truncated_spectrum);
        assert_eq!(distinct.len(), 4);
        for (l, (v, _)) in distinct.iter().enumerate() {
            let l = l as f64;
            assert!((v - l * (total + l - 1.0) / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_alpha_path_equality() {
        let g = Graph::path(vec![1.0; 4]).unwrap();
        let r = verify_theorem_2(&g, 3).unwrap();
        assert!(r.passed(), "{:#?}", r.checks);
        assert!((r.gap_bep - r.gap_rw).abs() < 1e-8);
    }

    #[test]
    fn json_round_trip() {
        let g = Graph::path(vec![1.0, 2.0, 0.5]).unwrap();
        let p = lambda_operator(3, 2, &[1.0, -2.0, 0.5, 3.0, 0.0, 1.5]).unwrap();
        let q = apply_bep_generator(&p, &g).unwrap();
        let s = serde_json::to_string(&q).unwrap();
        let back: HomogPolynomial = serde_json::from_str(&s).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn simplex_normalization() {
        let m = SimplexMeasure::new(&[1.0, 1.0, 1.0]).unwrap();
        // B(1,1,1) = 1/2
        assert!((m.log_beta + 2f64.ln()).abs() < 1e-14);
    }
}
