//! Dense linear-algebra helpers shared by every generator in the crate.
//!
//! A reversible rate matrix `Q` with reversible law `pi` is similar to the
//! symmetric matrix `D^{1/2} (-Q) D^{-1/2}`, `D = diag(pi)`. All spectra are
//! computed through that similarity, so eigenvalues come out real and the
//! eigenvectors, mapped back by `D^{-1/2}`, are orthonormal in `L^2(pi)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SipError};

/// Relative tolerance for eigenvalue equality (scaled by `1 + |lambda|`).
pub const EIGEN_MATCH_TOL: f64 = 1e-8;

/// Relative tolerance for exact matrix identities (scaled by the max-norm).
pub const IDENTITY_TOL: f64 = 1e-10;

/// Ascending spectrum of a negative reversible generator.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    /// Columns are eigenvectors, orthonormal in `L^2(stationary)`.
    pub eigenvectors: Option<DMatrix<f64>>,
    pub stationary: Vec<f64>,
}

impl Spectrum {
    /// Smallest eigenvalue above the ground state; zero for a one-state chain.
    pub fn gap(&self) -> f64 {
        self.eigenvalues.get(1).copied().unwrap_or(0.0)
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues
            .iter()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// Number of eigenvalues within `EIGEN_MATCH_TOL * (1 + radius)` of zero.
    pub fn zero_multiplicity(&self) -> usize {
        let tol = EIGEN_MATCH_TOL * (1.0 + self.spectral_radius());
        self.eigenvalues.iter().filter(|v| v.abs() <= tol).count()
    }

    pub fn eigenvector(&self, j: usize) -> Option<Vec<f64>> {
        self.eigenvectors
            .as_ref()
            .map(|v| v.column(j).iter().copied().collect())
    }

    /// Distinct eigenvalues, merging neighbours closer than the match tolerance.
    pub fn distinct(&self) -> Vec<f64> {
        cluster_sorted(&self.eigenvalues)
            .into_iter()
            .map(|(v, _)| v)
            .collect()
    }
}

/// Groups an ascending list into `(representative, multiplicity)` clusters.
pub fn cluster_sorted(values: &[f64]) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        match out.last_mut() {
            Some((rep, m)) if close(*rep, v) => *m += 1,
            _ => out.push((v, 1)),
        }
    }
    out
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= EIGEN_MATCH_TOL * (1.0 + a.abs().max(b.abs()))
}

/// Greedy sorted pairing: every entry of `sub` is matched to a distinct entry
/// of `sup`. Returns the unmatched entries of `sub`.
pub fn unmatched_eigenvalues(sub: &[f64], sup: &[f64]) -> Vec<f64> {
    let mut used = vec![false; sup.len()];
    let mut missing = Vec::new();
    let mut start = 0;
    for &v in sub {
        let mut found = false;
        for j in start..sup.len() {
            if used[j] {
                continue;
            }
            if close(v, sup[j]) {
                used[j] = true;
                found = true;
                break;
            }
            if sup[j] > v && !close(v, sup[j]) {
                break;
            }
        }
        if !found {
            missing.push(v);
        }
        while start < sup.len() && used[start] {
            start += 1;
        }
    }
    missing
}

/// Eigendecomposition of `-rates` through the `pi`-symmetrization.
///
/// `rates` must be a generator (zero row sums) reversible w.r.t. `pi`; the
/// residual of the symmetrized matrix is folded into the diagnostics.
pub fn reversible_spectrum(
    rates: &DMatrix<f64>,
    pi: &[f64],
    with_vectors: bool,
) -> Result<Spectrum> {
    let n = rates.nrows();
    if rates.ncols() != n || pi.len() != n {
        return Err(SipError::DimensionMismatch {
            expected: n,
            got: pi.len(),
        });
    }
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let mut sym = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            sym[(i, j)] = -rates[(i, j)] * sq[i] / sq[j];
        }
    }
    let asym = max_abs(&(&sym - sym.transpose()));
    let scale = max_abs(&sym).max(1.0);
    if asym > 1e-8 * scale {
        return Err(SipError::Eigen(format!(
            "generator is not reversible w.r.t. the supplied measure (asymmetry {asym:.3e})"
        )));
    }
    let sym = (&sym + sym.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(sym.clone(), 1e-15, 10_000)
        .ok_or_else(|| SipError::Eigen("symmetric QR iteration did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();

    let residual = order
        .iter()
        .map(|&j| {
            let v = eig.eigenvectors.column(j);
            (&sym * v - v * eig.eigenvalues[j]).amax()
        })
        .fold(0.0_f64, f64::max);
    if residual > 1e-9 * scale {
        return Err(SipError::Eigen(format!(
            "eigenpair residual {residual:.3e} exceeds {:.3e}",
            1e-9 * scale
        )));
    }

    let eigenvectors = with_vectors.then(|| {
        let mut out = DMatrix::<f64>::zeros(n, n);
        for (col, &j) in order.iter().enumerate() {
            for i in 0..n {
                out[(i, col)] = eig.eigenvectors[(i, j)] / sq[i];
            }
        }
        out
    });

    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
        stationary: pi.to_vec(),
    })
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Max-norm residual of `lhs - rhs`, with both sides' max-norm as scale.
pub fn identity_report(
    identity: impl Into<String>,
    lhs: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    rel_tol: f64,
) -> IdentityReport {
    let identity = identity.into();
    if lhs.shape() != rhs.shape() {
        return IdentityReport {
            identity,
            residual: f64::INFINITY,
            tolerance: 0.0,
            pass: false,
        };
    }
    let residual = max_abs(&(lhs - rhs));
    let scale = max_abs(lhs).max(max_abs(rhs)).max(1.0);
    IdentityReport::new(identity, residual, rel_tol * scale)
}

/// One residual check: `{identity, residual, tolerance, pass}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct IdentityReport {
    pub identity: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityReport {
    pub fn new(identity: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        IdentityReport {
            identity: identity.into(),
            residual,
            tolerance,
            pass: residual.is_finite() && residual <= tolerance,
        }
    }

    /// A boolean check that carries no numeric residual.
    pub fn flag(identity: impl Into<String>, pass: bool) -> Self {
        IdentityReport {
            identity: identity.into(),
            residual: if pass { 0.0 } else { 1.0 },
            tolerance: 0.0,
            pass,
        }
    }

    pub fn ensure(&self) -> Result<()> {
        if self.pass {
            Ok(())
        } else {
            Err(SipError::verification(
                &self.identity,
                format!(
                    "residual {:.3e} exceeds tolerance {:.3e}",
                    self.residual, self.tolerance
                ),
            ))
        }
    }
}

pub fn all_pass(reports: &[IdentityReport]) -> bool {
    reports.iter().all(|r| r.pass)
}

/// Orthonormal basis (Euclidean) of the null space of `m`.
///
/// Rank is decided by singular values above `1e-10 * sigma_max`; the kernel is
/// read off the spectral projector onto the orthogonal complement of the row
/// space, whose eigenvalues are exactly 0 or 1.
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    let svd = m.transpose().svd(true, false);
    let sigma_max = svd.singular_values.max();
    let u = svd.u.expect("requested U");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * sigma_max)
        .collect();
    let mut proj = DMatrix::<f64>::identity(cols, cols);
    for &i in &keep {
        let c = u.column(i);
        proj -= c * c.transpose();
    }
    let proj = (&proj + proj.transpose()) * 0.5;
    let eig = SymmetricEigen::new(proj);
    let picked: Vec<usize> = (0..cols).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    let mut out = DMatrix::<f64>::zeros(cols, picked.len());
    for (c, &i) in picked.iter().enumerate() {
        out.set_column(c, &eig.eigenvectors.column(i));
    }
    out
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v))
}
