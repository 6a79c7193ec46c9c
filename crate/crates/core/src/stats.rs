//! Goodness-of-fit and regression helpers for the Monte-Carlo checks.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Result, SipError};

/// Bins with smaller expected count are pooled.
pub const MIN_EXPECTED: f64 = 5.0;
/// Probabilities below this are treated as impossible cells.
pub const ZERO_PROB: f64 = 1e-13;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
    /// Largest `|obs - N p| / sqrt(N p (1 - p))` over the unpooled cells.
    pub max_z: f64,
}

fn upper_tail(statistic: f64, dof: usize) -> Result<f64> {
    let dist = ChiSquared::new(dof as f64).map_err(|e| SipError::InvalidInput(e.to_string()))?;
    Ok(dist.sf(statistic))
}

/// Pearson test of observed counts against cell probabilities.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<ChiSquareResult> {
    if counts.len() != probs.len() {
        return Err(SipError::DimensionMismatch {
            expected: probs.len(),
            got: counts.len(),
        });
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(SipError::InvalidInput("no observations".into()));
    }
    let n = total as f64;
    let mass: f64 = probs.iter().filter(|&&p| p > ZERO_PROB).sum();
    let mut max_z = 0.0_f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= ZERO_PROB {
            if c > 0 {
                return Ok(ChiSquareResult {
                    statistic: f64::INFINITY,
                    dof: 0,
                    p_value: 0.0,
                    bins: 0,
                    max_z: f64::INFINITY,
                });
            }
            continue;
        }
        let p = p / mass;
        if p < 1.0 {
            max_z = max_z.max((c as f64 - n * p).abs() / (n * p * (1.0 - p)).sqrt());
        }
        cells.push((c as f64, n * p));
    }

    cells.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for cell in cells {
        if cell.1 >= MIN_EXPECTED && acc.1 == 0.0 {
            pooled.push(cell);
        } else {
            acc.0 += cell.0;
            acc.1 += cell.1;
            if acc.1 >= MIN_EXPECTED {
                pooled.push(acc);
                acc = (0.0, 0.0);
            }
        }
    }
    if acc.1 > 0.0 {
        match pooled.first_mut() {
            Some(first) => {
                first.0 += acc.0;
                first.1 += acc.1;
            }
            None => pooled.push(acc),
        }
    }
    if pooled.len() < 2 {
        return Ok(ChiSquareResult {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
            bins: pooled.len(),
            max_z,
        });
    }
    let statistic = pooled.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = pooled.len() - 1;
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value: upper_tail(statistic, dof)?,
        bins: pooled.len(),
        max_z,
    })
}

/// Two-sample chi-square test of homogeneity for count vectors over the same cells.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Result<ChiSquareResult> {
    if a.len() != b.len() {
        return Err(SipError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(SipError::InvalidInput("empty sample".into()));
    }
    let mut cells: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| **x + **y > 0)
        .map(|(&x, &y)| (x as f64, y as f64))
        .collect();
    cells.sort_by(|p, q| (p.0 + p.1).total_cmp(&(q.0 + q.1)));
    let frac = na.min(nb) / (na + nb);
    let small = |c: &(f64, f64)| (c.0 + c.1) * frac < MIN_EXPECTED;
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for cell in cells {
        if !small(&cell) && acc == (0.0, 0.0) {
            pooled.push(cell);
        } else {
            acc.0 += cell.0;
            acc.1 += cell.1;
            if !small(&acc) {
                pooled.push(acc);
                acc = (0.0, 0.0);
            }
        }
    }
    if acc != (0.0, 0.0) {
        match pooled.first_mut() {
            Some(first) => {
                first.0 += acc.0;
                first.1 += acc.1;
            }
            None => pooled.push(acc),
        }
    }
    if pooled.len() < 2 {
        return Ok(ChiSquareResult {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
            bins: pooled.len(),
            max_z: 0.0,
        });
    }
    let (ka, kb) = ((nb / na).sqrt(), (na / nb).sqrt());
    let statistic = pooled
        .iter()
        .map(|(x, y)| (ka * x - kb * y).powi(2) / (x + y))
        .sum();
    let dof = pooled.len() - 1;
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value: upper_tail(statistic, dof)?,
        bins: pooled.len(),
        max_z: 0.0,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = intercept + slope x`; needs two distinct abscissae.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let m = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Bonferroni-adjusted level for `m` simultaneous tests.
pub fn bonferroni(level: f64, m: usize) -> f64 {
    level / m.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit_has_unit_p() {
        let r = chi_square_gof(&[100, 200, 700], &[0.1, 0.2, 0.7]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        assert_eq!(r.dof, 2);
    }

    #[test]
    fn gross_misfit_rejected() {
        let r = chi_square_gof(&[500, 500], &[0.9, 0.1]).unwrap();
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn known_statistic() {
        // (45-50)^2/50 + (55-50)^2/50 = 1, chi2_1 upper tail at 1
        let r = chi_square_gof(&[45, 55], &[0.5, 0.5]).unwrap();
        assert!((r.statistic - 1.0).abs() < 1e-12);
        assert!((r.p_value - 0.317_310_507_862_914_1).abs() < 1e-9);
    }

    #[test]
    fn impossible_cell_and_point_mass() {
        assert_eq!(chi_square_gof(&[3, 1], &[1.0, 0.0]).unwrap().p_value, 0.0);
        assert_eq!(chi_square_gof(&[4, 0], &[1.0, 0.0]).unwrap().p_value, 1.0);
    }

    #[test]
    fn small_cells_pooled() {
        let r = chi_square_gof(&[990, 4, 3, 3], &[0.99, 0.004, 0.003, 0.003]).unwrap();
        assert_eq!(r.bins, 2);
    }

    #[test]
    fn two_sample_identical() {
        let r = chi_square_two_sample(&[10, 20, 30], &[20, 40, 60]).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        let r = chi_square_two_sample(&[100, 0], &[0, 100]).unwrap();
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn regression() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 2.0 * v).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-14 && (f.intercept - 1.5).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
        assert!(linear_fit(&[1.0], &[2.0]).is_none());
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_none());
    }
}
