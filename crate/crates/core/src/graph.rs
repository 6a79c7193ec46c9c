//! Weighted graphs, site weights and the single-particle random walk.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SipError};
use crate::linalg::{self, Spectrum};

/// Finite graph with symmetric edge weights `c` and positive site weights `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    weights: DMatrix<f64>,
    alpha: Vec<f64>,
    components: usize,
}

impl Graph {
    pub fn new(weights: DMatrix<f64>, alpha: Vec<f64>) -> Result<Self> {
        let n = weights.nrows();
        if weights.ncols() != n {
            return Err(SipError::InvalidGraph("edge weights must be square".into()));
        }
        if n < 2 {
            return Err(SipError::InvalidGraph(format!("need at least 2 vertices, got {n}")));
        }
        if alpha.len() != n {
            return Err(SipError::DimensionMismatch {
                expected: n,
                got: alpha.len(),
            });
        }
        for (x, a) in alpha.iter().enumerate() {
            if !(a.is_finite() && *a > 0.0) {
                return Err(SipError::InvalidGraph(format!(
                    "site weight alpha[{x}] = {a} must be strictly positive"
                )));
            }
        }
        for x in 0..n {
            if weights[(x, x)] != 0.0 {
                return Err(SipError::InvalidGraph(format!("self-loop weight at vertex {x}")));
            }
            for y in 0..n {
                let c = weights[(x, y)];
                if !(c.is_finite() && c >= 0.0) {
                    return Err(SipError::InvalidGraph(format!(
                        "edge weight c[{x},{y}] = {c} must be finite and nonnegative"
                    )));
                }
                if c != weights[(y, x)] {
                    return Err(SipError::InvalidGraph(format!(
                        "edge weights are not symmetric at ({x},{y})"
                    )));
                }
            }
        }
        let components = count_components(&weights);
        Ok(Graph {
            weights,
            alpha,
            components,
        })
    }

    /// Undirected edge list, 0-based. A repeated pair is an error.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)], alpha: Vec<f64>) -> Result<Self> {
        let mut w = DMatrix::<f64>::zeros(n, n);
        let mut seen = vec![false; n * n];
        for &(x, y, c) in edges {
            if x >= n || y >= n {
                return Err(SipError::InvalidGraph(format!("edge ({x},{y}) out of range")));
            }
            if x == y {
                return Err(SipError::InvalidGraph(format!("self-loop at vertex {x}")));
            }
            let (a, b) = (x.min(y), x.max(y));
            if seen[a * n + b] {
                return Err(SipError::InvalidGraph(format!("duplicate edge ({a},{b})")));
            }
            seen[a * n + b] = true;
            w[(x, y)] = c;
            w[(y, x)] = c;
        }
        Graph::new(w, alpha)
    }

    /// Complete graph with `c = 1/n` on every pair.
    pub fn complete(alpha: Vec<f64>) -> Result<Self> {
        let n = alpha.len();
        let c = 1.0 / n as f64;
        let mut w = DMatrix::from_element(n, n, c);
        w.fill_diagonal(0.0);
        Graph::new(w, alpha)
    }

    pub fn path(alpha: Vec<f64>) -> Result<Self> {
        let n = alpha.len();
        let edges: Vec<_> = (0..n.saturating_sub(1)).map(|x| (x, x + 1, 1.0)).collect();
        Graph::from_edges(n, &edges, alpha)
    }

    pub fn cycle(alpha: Vec<f64>) -> Result<Self> {
        let n = alpha.len();
        if n < 3 {
            return Graph::path(alpha);
        }
        let edges: Vec<_> = (0..n).map(|x| (x, (x + 1) % n, 1.0)).collect();
        Graph::from_edges(n, &edges, alpha)
    }

    /// Same edges, new site weights.
    pub fn with_alpha(&self, alpha: Vec<f64>) -> Result<Self> {
        Graph::new(self.weights.clone(), alpha)
    }

    /// Relabels vertices: new vertex `i` is old vertex `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let w = DMatrix::from_fn(n, n, |i, j| self.weights[(perm[i], perm[j])]);
        let alpha = perm.iter().map(|&p| self.alpha[p]).collect();
        Graph::new(w, alpha)
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn c(&self, x: usize, y: usize) -> f64 {
        self.weights[(x, y)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_total(&self) -> f64 {
        self.alpha.iter().sum()
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn is_connected(&self) -> bool {
        self.components == 1
    }

    pub fn max_weight(&self) -> f64 {
        linalg::max_abs(&self.weights)
    }

    /// Positive-weight neighbours of `x`.
    pub fn neighbours(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n()).filter_map(move |y| {
            let c = self.weights[(x, y)];
            (c > 0.0).then_some((y, c))
        })
    }
}

fn count_components(w: &DMatrix<f64>) -> usize {
    let n = w.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut components = n;
    for x in 0..n {
        for y in (x + 1)..n {
            if w[(x, y)] > 0.0 {
                let (a, b) = (find(&mut parent, x), find(&mut parent, y));
                if a != b {
                    parent[a] = b;
                    components -= 1;
                }
            }
        }
    }
    components
}

/// On-disk graph description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub alpha: Vec<f64>,
}

impl GraphFile {
    pub fn parse(json: &str) -> Result<Graph> {
        let file: GraphFile = serde_json::from_str(json)?;
        file.into_graph()
    }

    pub fn into_graph(self) -> Result<Graph> {
        Graph::from_edges(self.n, &self.edges, self.alpha)
    }

    pub fn from_graph(g: &Graph) -> Self {
        let n = g.n();
        let mut edges = Vec::new();
        for x in 0..n {
            for y in (x + 1)..n {
                if g.c(x, y) > 0.0 {
                    edges.push((x, y, g.c(x, y)));
                }
            }
        }
        GraphFile {
            n,
            edges,
            alpha: g.alpha().to_vec(),
        }
    }
}

/// Named graph families accepted wherever a graph file is expected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Complete(usize),
    Path(usize),
    Cycle(usize),
}

impl Preset {
    /// Parses `complete(n)`, `path(n)` or `cycle(n)`.
    pub fn parse(s: &str) -> Option<Preset> {
        let s = s.trim();
        let open = s.find('(')?;
        let inner = s.strip_suffix(')')?.get(open + 1..)?;
        let n: usize = inner.trim().parse().ok()?;
        match &s[..open] {
            "complete" => Some(Preset::Complete(n)),
            "path" => Some(Preset::Path(n)),
            "cycle" => Some(Preset::Cycle(n)),
            _ => None,
        }
    }

    pub fn n(self) -> usize {
        match self {
            Preset::Complete(n) | Preset::Path(n) | Preset::Cycle(n) => n,
        }
    }

    pub fn build(self, alpha: Vec<f64>) -> Result<Graph> {
        if alpha.len() != self.n() {
            return Err(SipError::DimensionMismatch {
                expected: self.n(),
                got: alpha.len(),
            });
        }
        match self {
            Preset::Complete(_) => Graph::complete(alpha),
            Preset::Path(_) => Graph::path(alpha),
            Preset::Cycle(_) => Graph::cycle(alpha),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Preset::Complete(n) => write!(f, "complete({n})"),
            Preset::Path(n) => write!(f, "path({n})"),
            Preset::Cycle(n) => write!(f, "cycle({n})"),
        }
    }
}

/// Generator `A_alpha` of the random walk jumping `x -> y` at rate `c_xy alpha_y`.
#[derive(Debug, Clone)]
pub struct RwGenerator {
    pub matrix: DMatrix<f64>,
    pub stationary: Vec<f64>,
}

pub fn build_rw_generator(g: &Graph) -> RwGenerator {
    let n = g.n();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        let mut out = 0.0;
        for y in 0..n {
            if y != x {
                let r = g.c(x, y) * g.alpha()[y];
                a[(x, y)] = r;
                out += r;
            }
        }
        a[(x, x)] = -out;
    }
    let total = g.alpha_total();
    RwGenerator {
        matrix: a,
        stationary: g.alpha().iter().map(|a| a / total).collect(),
    }
}

impl RwGenerator {
    /// `max |pi_x A(x,y) - pi_y A(y,x)|`.
    pub fn detailed_balance_residual(&self) -> f64 {
        let n = self.matrix.nrows();
        let mut r = 0.0_f64;
        for x in 0..n {
            for y in 0..n {
                let d = self.stationary[x] * self.matrix[(x, y)]
                    - self.stationary[y] * self.matrix[(y, x)];
                r = r.max(d.abs());
            }
        }
        r
    }
}

pub fn rw_spectrum(gen: &RwGenerator) -> Result<Spectrum> {
    linalg::reversible_spectrum(&gen.matrix, &gen.stationary, true)
}

/// `gap_RW` of a graph; convenience for sweeps over site weights.
pub fn rw_gap(g: &Graph) -> Result<f64> {
    let gen = build_rw_generator(g);
    Ok(linalg::reversible_spectrum(&gen.matrix, &gen.stationary, false)?.gap())
}

/// Dirichlet form `D_alpha(phi) = (1/|alpha|) sum alpha_x alpha_y c_xy phi(x)(phi(x) - phi(y))`.
pub fn rw_dirichlet_form(g: &Graph, phi: &[f64]) -> Result<f64> {
    dirichlet_form_with_weights(g, g.alpha(), phi)
}

/// `D_beta(phi)` for arbitrary site weights `beta` on the edges of `g`.
pub fn dirichlet_form_with_weights(g: &Graph, beta: &[f64], phi: &[f64]) -> Result<f64> {
    let n = g.n();
    if phi.len() != n {
        return Err(SipError::DimensionMismatch {
            expected: n,
            got: phi.len(),
        });
    }
    if beta.len() != n {
        return Err(SipError::DimensionMismatch {
            expected: n,
            got: beta.len(),
        });
    }
    let total: f64 = beta.iter().sum();
    let mut s = 0.0;
    for x in 0..n {
        for y in 0..n {
            s += beta[x] * beta[y] * g.c(x, y) * phi[x] * (phi[x] - phi[y]);
        }
    }
    Ok(s / total)
}

/// Mean and variance of `phi` under `beta / |beta|`.
pub fn weighted_mean_var(beta: &[f64], phi: &[f64]) -> (f64, f64) {
    let total: f64 = beta.iter().sum();
    let mean: f64 = beta.iter().zip(phi).map(|(b, p)| b * p).sum::<f64>() / total;
    let second: f64 = beta.iter().zip(phi).map(|(b, p)| b * p * p).sum::<f64>() / total;
    (mean, second - mean * mean)
}
