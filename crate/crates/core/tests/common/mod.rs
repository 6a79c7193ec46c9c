//! Brute-force reference implementations used as oracles by the integration tests.
//! Nothing here goes through the library's generator or measure code.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use siplab::Graph;
use statrs::function::gamma::ln_gamma;

/// All occupation vectors with `k` particles on `n` sites, in arbitrary order.
pub fn states(n: usize, k: usize) -> Vec<Vec<u32>> {
    fn rec(n: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == n {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for m in 0..=left {
            prefix.push(m);
            rec(n, left - m, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k as u32, &mut Vec::new(), &mut out);
    out
}

/// Dense generator of the k-particle inclusion process straight from the jump rates.
pub fn generator(g: &Graph, k: usize) -> (Vec<Vec<u32>>, DMatrix<f64>) {
    let n = g.n();
    let st = states(n, k);
    let pos = |eta: &Vec<u32>| st.iter().position(|s| s == eta).unwrap();
    let mut q = DMatrix::zeros(st.len(), st.len());
    for (i, eta) in st.iter().enumerate() {
        for x in 0..n {
            for y in 0..n {
                let c = g.c(x, y);
                if x == y || c == 0.0 || eta[x] == 0 {
                    continue;
                }
                let rate = c * eta[x] as f64 * (g.alpha()[y] + eta[y] as f64);
                let mut to = eta.clone();
                to[x] -= 1;
                to[y] += 1;
                let j = pos(&to);
                q[(i, j)] += rate;
                q[(i, i)] -= rate;
            }
        }
    }
    (st, q)
}

/// Product of Gamma-ratio weights, normalised.
pub fn measure(alpha: &[f64], st: &[Vec<u32>]) -> Vec<f64> {
    let w: Vec<f64> = st
        .iter()
        .map(|eta| {
            eta.iter()
                .zip(alpha)
                .map(|(&m, &a)| ln_gamma(a + m as f64) - ln_gamma(a) - ln_gamma(m as f64 + 1.0))
                .sum::<f64>()
                .exp()
        })
        .collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// Ascending eigenvalues of `-q` for a generator reversible w.r.t. `pi`.
pub fn reversible_eigenvalues(q: &DMatrix<f64>, pi: &[f64]) -> Vec<f64> {
    let s = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| {
        let a = -q[(i, j)] * (pi[i] / pi[j]).sqrt();
        let b = -q[(j, i)] * (pi[j] / pi[i]).sqrt();
        0.5 * (a + b)
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn spectrum(g: &Graph, k: usize) -> Vec<f64> {
    let (st, q) = generator(g, k);
    reversible_eigenvalues(&q, &measure(g.alpha(), &st))
}

/// Gap of the walk jumping `x -> y` at rate `c_xy alpha_y`.
pub fn rw_gap(g: &Graph) -> f64 {
    let n = g.n();
    let mut q = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            if x != y {
                q[(x, y)] = g.c(x, y) * g.alpha()[y];
                q[(x, x)] -= q[(x, y)];
            }
        }
    }
    let total = g.alpha_total();
    let pi: Vec<f64> = g.alpha().iter().map(|a| a / total).collect();
    reversible_eigenvalues(&q, &pi)[1]
}

/// Connected graph on `n` sites: a random spanning tree plus random extra edges.
pub fn random_connected<R: Rng>(rng: &mut R, n: usize, alpha: Vec<f64>) -> Graph {
    let mut edges = Vec::new();
    for y in 1..n {
        let x = rng.random_range(0..y);
        edges.push((x, y, rng.random_range(0.2..2.0)));
    }
    for x in 0..n {
        for y in x + 1..n {
            if !edges.iter().any(|&(a, b, _)| a == x && b == y) && rng.random_bool(0.4) {
                edges.push((x, y, rng.random_range(0.2..2.0)));
            }
        }
    }
    Graph::from_edges(n, &edges, alpha).unwrap()
}

/// Weights in `[alpha_min, alpha_min + spread]` with one site pinned at `alpha_min`.
pub fn random_alpha<R: Rng>(rng: &mut R, n: usize, alpha_min: f64, spread: f64) -> Vec<f64> {
    let mut a: Vec<f64> = (0..n).map(|_| alpha_min + rng.random_range(0.0..spread)).collect();
    a[rng.random_range(0..n)] = alpha_min;
    a
}
