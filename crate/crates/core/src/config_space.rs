//! The k-particle configuration space, its lexicographic ranking, and the
//! reversible measure of the inclusion process on it.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SipError};
use crate::graph::Graph;

/// Default upper bound on `|Xi_k|` for dense work.
pub const DEFAULT_STATE_CAP: usize = 20_000;

/// Environment variable overriding [`DEFAULT_STATE_CAP`].
pub const STATE_CAP_ENV: &str = "SIPLAB_STATE_CAP";

/// Active state cap: `SIPLAB_STATE_CAP` when set, the default otherwise.
pub fn state_cap() -> Result<usize> {
    match std::env::var(STATE_CAP_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            SipError::InvalidInput(format!("{STATE_CAP_ENV} must be a positive integer, got '{v}'"))
        }),
        Err(_) => Ok(DEFAULT_STATE_CAP),
    }
}

/// Occupation vector `eta` with `|eta| = k`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParticleConfig(pub Vec<u32>);

impl ParticleConfig {
    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Single particle at `x`.
    pub fn delta(n: usize, x: usize) -> Self {
        let mut v = vec![0; n];
        v[x] = 1;
        ParticleConfig(v)
    }

    pub fn occupations(&self) -> &[u32] {
        &self.0
    }

    /// `eta - delta_x + delta_y`; `None` when site `x` is empty.
    pub fn moved(&self, x: usize, y: usize) -> Option<Self> {
        if self.0[x] == 0 {
            return None;
        }
        let mut v = self.0.clone();
        v[x] -= 1;
        v[y] += 1;
        Some(ParticleConfig(v))
    }

    pub fn removed(&self, x: usize) -> Option<Self> {
        if self.0[x] == 0 {
            return None;
        }
        let mut v = self.0.clone();
        v[x] -= 1;
        Some(ParticleConfig(v))
    }

    pub fn added(&self, x: usize) -> Self {
        let mut v = self.0.clone();
        v[x] += 1;
        ParticleConfig(v)
    }
}

/// Number of weak compositions of `m` into `parts` parts, `C(m+parts-1, parts-1)`.
pub fn weak_compositions(m: usize, parts: usize) -> usize {
    if parts == 0 {
        return usize::from(m == 0);
    }
    binomial(m + parts - 1, parts - 1)
}

/// Exact binomial coefficient, saturating at `usize::MAX`.
pub fn binomial(n: usize, r: usize) -> usize {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for i in 0..r {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

/// Lexicographic rank of `eta` among weak compositions of `|eta|` into `eta.len()` parts.
pub fn rank(eta: &[u32]) -> usize {
    let n = eta.len();
    let mut remaining: usize = eta.iter().map(|&v| v as usize).sum();
    let mut r = 0;
    for (i, &v) in eta.iter().enumerate().take(n.saturating_sub(1)) {
        let tail = n - i - 1;
        for smaller in 0..v as usize {
            r += weak_compositions(remaining - smaller, tail);
        }
        remaining -= v as usize;
    }
    r
}

/// Inverse of [`rank`].
pub fn unrank(n: usize, k: usize, mut r: usize) -> Vec<u32> {
    let mut eta = vec![0u32; n];
    let mut remaining = k;
    for (i, slot) in eta.iter_mut().enumerate().take(n.saturating_sub(1)) {
        let tail = n - i - 1;
        let mut v = 0;
        loop {
            let block = weak_compositions(remaining - v, tail);
            if r < block {
                break;
            }
            r -= block;
            v += 1;
        }
        *slot = v as u32;
        remaining -= v;
    }
    if n > 0 {
        eta[n - 1] = remaining as u32;
    }
    eta
}

/// `Xi_k` over `n` sites, listed lexicographically.
#[derive(Debug, Clone)]
pub struct ConfigSpace {
    n: usize,
    k: usize,
    states: Vec<ParticleConfig>,
}

impl ConfigSpace {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        Self::with_cap(n, k, state_cap()?)
    }

    pub fn with_cap(n: usize, k: usize, cap: usize) -> Result<Self> {
        if n == 0 {
            return Err(SipError::InvalidInput("configuration space needs n >= 1".into()));
        }
        let size = weak_compositions(k, n);
        if size > cap {
            return Err(SipError::StateCapExceeded { size, cap });
        }
        let mut states = Vec::with_capacity(size);
        let mut cur = vec![0u32; n];
        enumerate_into(&mut cur, 0, k as u32, &mut states);
        debug_assert_eq!(states.len(), size);
        Ok(ConfigSpace { n, k, states })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn size(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[ParticleConfig] {
        &self.states
    }

    pub fn state(&self, r: usize) -> &ParticleConfig {
        &self.states[r]
    }

    pub fn rank_of(&self, eta: &ParticleConfig) -> usize {
        debug_assert_eq!(eta.total() as usize, self.k);
        rank(&eta.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ParticleConfig)> {
        self.states.iter().enumerate()
    }
}

fn enumerate_into(cur: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<ParticleConfig>) {
    let n = cur.len();
    if pos == n - 1 {
        cur[pos] = remaining;
        out.push(ParticleConfig(cur.clone()));
        return;
    }
    for v in 0..=remaining {
        cur[pos] = v;
        enumerate_into(cur, pos + 1, remaining - v, out);
    }
    cur[pos] = 0;
}

/// `ln Gamma(a + m) - ln Gamma(a)` as a sum of logs of the rising factorial.
pub fn ln_rising(a: f64, m: u32) -> f64 {
    (0..m).map(|j| (a + j as f64).ln()).sum()
}

pub fn ln_factorial(m: u32) -> f64 {
    (2..=m).map(|j| (j as f64).ln()).sum()
}

/// `ln Z_{alpha,k} = ln Gamma(|alpha|+k) - ln Gamma(|alpha|) - ln k!`.
pub fn ln_partition(alpha_total: f64, k: usize) -> f64 {
    ln_rising(alpha_total, k as u32) - ln_factorial(k as u32)
}

/// Reversible law `mu_{alpha,k}` on `Xi_k`.
#[derive(Debug, Clone)]
pub struct SipMeasure {
    pub probabilities: Vec<f64>,
    /// `ln Z_{alpha,k}` obtained by summing the unnormalized weights.
    pub log_normalization: f64,
}

/// Unnormalized log weight `sum_x [ln Gamma(alpha_x+eta_x) - ln Gamma(alpha_x) - ln eta_x!]`.
pub fn ln_weight(alpha: &[f64], eta: &[u32]) -> f64 {
    alpha
        .iter()
        .zip(eta)
        .map(|(&a, &m)| ln_rising(a, m) - ln_factorial(m))
        .sum()
}

pub fn sip_measure(g: &Graph, space: &ConfigSpace) -> Result<SipMeasure> {
    measure_for_weights(g.alpha(), space)
}

pub fn measure_for_weights(alpha: &[f64], space: &ConfigSpace) -> Result<SipMeasure> {
    if alpha.len() != space.n() {
        return Err(SipError::DimensionMismatch {
            expected: space.n(),
            got: alpha.len(),
        });
    }
    let logs: Vec<f64> = space.states().iter().map(|s| ln_weight(alpha, &s.0)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    let log_z = top + sum.ln();
    let mut probabilities: Vec<f64> = logs.iter().map(|l| (l - log_z).exp()).collect();
    let total: f64 = probabilities.iter().sum();
    probabilities.iter_mut().for_each(|p| *p /= total);
    Ok(SipMeasure {
        probabilities,
        log_normalization: log_z,
    })
}

impl SipMeasure {
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn min_mass(&self) -> f64 {
        self.probabilities.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(SipError::DimensionMismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// `<f, g>_{alpha,k}`.
    pub fn inner_product(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        self.check_len(f)?;
        self.check_len(g)?;
        Ok(self
            .probabilities
            .iter()
            .zip(f.iter().zip(g))
            .map(|(p, (a, b))| p * a * b)
            .sum())
    }

    pub fn mean(&self, f: &[f64]) -> Result<f64> {
        self.check_len(f)?;
        Ok(self.probabilities.iter().zip(f).map(|(p, a)| p * a).sum())
    }

    /// `<f,f> - <f,1>^2`.
    pub fn variance(&self, f: &[f64]) -> Result<f64> {
        let m = self.mean(f)?;
        Ok(self.inner_product(f, f)? - m * m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_enumerations() {
        let s = ConfigSpace::new(2, 2).unwrap();
        let got: Vec<Vec<u32>> = s.states().iter().map(|c| c.0.clone()).collect();
        assert_eq!(got, vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
        assert_eq!(ConfigSpace::new(3, 2).unwrap().size(), 6);
        assert_eq!(ConfigSpace::new(4, 5).unwrap().size(), 56);
        assert_eq!(ConfigSpace::new(3, 0).unwrap().size(), 1);
    }

    #[test]
    fn cap_is_enforced() {
        let err = ConfigSpace::with_cap(5, 10, 100).unwrap_err();
        assert!(matches!(err, SipError::StateCapExceeded { size: 1001, cap: 100 }));
    }

    #[test]
    fn uniform_measure_for_unit_weights_on_two_sites() {
        let g = Graph::path(vec![1.0, 1.0]).unwrap();
        for k in 0..6 {
            let s = ConfigSpace::new(2, k).unwrap();
            let mu = sip_measure(&g, &s).unwrap();
            for p in &mu.probabilities {
                assert!((p - 1.0 / (k as f64 + 1.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_particle_measure_is_alpha_over_total() {
        let g = Graph::path(vec![2.0, 1.0]).unwrap();
        let s = ConfigSpace::new(2, 1).unwrap();
        let mu = sip_measure(&g, &s).unwrap();
        // states [(0,1),(1,0)]
        assert!((mu.probabilities[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((mu.probabilities[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_particles_has_unit_mass() {
        let g = Graph::path(vec![0.3, 4.0, 1.2]).unwrap();
        let mu = sip_measure(&g, &ConfigSpace::new(3, 0).unwrap()).unwrap();
        assert_eq!(mu.probabilities, vec![1.0]);
        assert!(mu.log_normalization.abs() < 1e-15);
    }

    #[test]
    fn inner_product_and_variance_examples() {
        let g = Graph::path(vec![1.0, 1.0]).unwrap();
        let mu1 = sip_measure(&g, &ConfigSpace::new(2, 1).unwrap()).unwrap();
        assert!((mu1.inner_product(&[1.0, -1.0], &[1.0, -1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((mu1.inner_product(&[1.0, 1.0], &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let mu2 = sip_measure(&g, &ConfigSpace::new(2, 2).unwrap()).unwrap();
        assert!((mu2.variance(&[1.0, 0.0, -1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(mu2.variance(&[5.0; 3]).unwrap().abs() < 1e-14);
        assert!(mu2.variance(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn rising_factorial_matches_gamma_ratio() {
        for &a in &[0.1, 0.5, 1.0, 2.7, 9.0] {
            for m in 0..8u32 {
                let want = statrs::function::gamma::ln_gamma(a + m as f64)
                    - statrs::function::gamma::ln_gamma(a);
                assert!((ln_rising(a, m) - want).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn rank_unrank_round_trip(n in 1usize..=5, k in 0usize..=7) {
            let s = ConfigSpace::new(n, k).unwrap();
            prop_assert_eq!(s.size(), weak_compositions(k, n));
            for (r, eta) in s.iter() {
                prop_assert_eq!(rank(&eta.0), r);
                prop_assert_eq!(&unrank(n, k, r), &eta.0);
            }
        }

        #[test]
        fn measure_normalizes_and_matches_closed_form(
            alpha in proptest::collection::vec(0.1f64..10.0, 2..=4),
            k in 0usize..=6,
        ) {
            let g = Graph::complete(alpha.clone()).unwrap();
            let s = ConfigSpace::new(alpha.len(), k).unwrap();
            let mu = sip_measure(&g, &s).unwrap();
            let total: f64 = mu.probabilities.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(mu.probabilities.iter().all(|&p| p > 0.0));
            let a: f64 = alpha.iter().sum();
            let closed = statrs::function::gamma::ln_gamma(a + k as f64)
                - statrs::function::gamma::ln_gamma(a)
                - statrs::function::factorial::ln_factorial(k as u64);
            prop_assert!((mu.log_normalization - closed).abs() < 1e-10);
        }
    }
}
