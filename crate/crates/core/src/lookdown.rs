//! Labeled particles on `V^k`: the symmetric and lookdown generators,
//! symmetrization, top-particle annihilation, label removal, and the
//! invariant law `omega_k` shared by both labeled models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config_space::{ConfigSpace, ParticleConfig};
use crate::error::{Result, SipError};
use crate::graph::{build_rw_generator, Graph};
use crate::intertwiners::build_annihilation;
use crate::linalg::{self, identity_report, IdentityReport, IDENTITY_TOL};
use crate::sip::build_sip_generator;

/// Default bound on `n^k` for labeled matrices.
pub const LABELED_CAP: usize = 4096;

/// `V^k` with mixed-radix indexing; `x_1` is the most significant digit, so
/// dropping the top particle is integer division by `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledSpace {
    n: usize,
    k: usize,
    size: usize,
}

impl LabeledSpace {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        Self::with_cap(n, k, LABELED_CAP)
    }

    pub fn with_cap(n: usize, k: usize, cap: usize) -> Result<Self> {
        let size = n
            .checked_pow(k as u32)
            .filter(|&s| s <= cap)
            .ok_or(SipError::StateCapExceeded {
                size: n.saturating_pow(k as u32),
                cap,
            })?;
        Ok(LabeledSpace { n, k, size })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn index(&self, positions: &[usize]) -> usize {
        positions.iter().fold(0, |acc, &x| acc * self.n + x)
    }

    pub fn positions(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.k];
        for slot in out.iter_mut().rev() {
            *slot = idx % self.n;
            idx /= self.n;
        }
        out
    }

    /// `Phi_k`: occupation vector of a labeled configuration.
    pub fn unlabel(&self, positions: &[usize]) -> ParticleConfig {
        let mut occ = vec![0u32; self.n];
        for &x in positions {
            occ[x] += 1;
        }
        ParticleConfig(occ)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorRole {
    Symmetric,
    Lookdown,
    Symmetrizer,
    TopAnnihilation,
}

#[derive(Debug, Clone)]
pub struct LabeledOperator {
    pub role: OperatorRole,
    pub matrix: DMatrix<f64>,
}

/// Interaction weight of particle `i` jumping to `y`.
fn interaction(positions: &[usize], i: usize, y: usize, lookdown: bool) -> f64 {
    if lookdown {
        2.0 * positions[..i].iter().filter(|&&p| p == y).count() as f64
    } else {
        positions.iter().filter(|&&p| p == y).count() as f64
    }
}

fn labeled_generator(g: &Graph, space: &LabeledSpace, lookdown: bool) -> DMatrix<f64> {
    let size = space.size();
    let mut m = DMatrix::<f64>::zeros(size, size);
    for idx in 0..size {
        let pos = space.positions(idx);
        let mut out = 0.0;
        for i in 0..pos.len() {
            for (y, c) in g.neighbours(pos[i]) {
                let rate = c * (g.alpha()[y] + interaction(&pos, i, y, lookdown));
                let mut next = pos.clone();
                next[i] = y;
                m[(idx, space.index(&next))] += rate;
                out += rate;
            }
        }
        m[(idx, idx)] = -out;
    }
    m
}

/// Symmetric and lookdown generators on `V^k`.
pub fn build_labeled_generators(g: &Graph, k: usize) -> Result<(LabeledOperator, LabeledOperator)> {
    let space = LabeledSpace::new(g.n(), k)?;
    Ok((
        LabeledOperator {
            role: OperatorRole::Symmetric,
            matrix: labeled_generator(g, &space, false),
        },
        LabeledOperator {
            role: OperatorRole::Lookdown,
            matrix: labeled_generator(g, &space, true),
        },
    ))
}

/// All permutations of `0..k` (Heap's algorithm).
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..k).collect();
    let mut out = vec![a.clone()];
    let mut c = vec![0; k];
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// `S_k`, `J_k`, and the pullback `f -> f o Phi_k`.
#[derive(Debug, Clone)]
pub struct ProjectionOps {
    pub symmetrizer: LabeledOperator,
    pub top_annihilation: LabeledOperator,
    /// `n^k x |Xi_k|` matrix of `f -> f o Phi_k`.
    pub unlabel_pullback: DMatrix<f64>,
}

pub fn symmetrizer(space: &LabeledSpace) -> DMatrix<f64> {
    let perms = permutations(space.k());
    let w = 1.0 / perms.len() as f64;
    let mut s = DMatrix::<f64>::zeros(space.size(), space.size());
    for idx in 0..space.size() {
        let pos = space.positions(idx);
        for p in &perms {
            let permuted: Vec<usize> = p.iter().map(|&j| pos[j]).collect();
            s[(idx, space.index(&permuted))] += w;
        }
    }
    s
}

/// `(J_k phi)(x_1..x_k) = phi(x_1..x_{k-1})`.
pub fn top_annihilation(n: usize, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(SipError::InvalidInput("J_k needs k >= 1".into()));
    }
    let upper = LabeledSpace::new(n, k)?;
    let mut j = DMatrix::<f64>::zeros(upper.size(), upper.size() / n);
    for idx in 0..upper.size() {
        j[(idx, idx / n)] = 1.0;
    }
    Ok(j)
}

pub fn unlabel_pullback(n: usize, k: usize) -> Result<DMatrix<f64>> {
    let labeled = LabeledSpace::new(n, k)?;
    let unlabeled = ConfigSpace::new(n, k)?;
    let mut p = DMatrix::<f64>::zeros(labeled.size(), unlabeled.size());
    for idx in 0..labeled.size() {
        let eta = labeled.unlabel(&labeled.positions(idx));
        p[(idx, unlabeled.rank_of(&eta))] = 1.0;
    }
    Ok(p)
}

pub fn build_projection_ops(n: usize, k: usize) -> Result<ProjectionOps> {
    let space = LabeledSpace::new(n, k)?;
    Ok(ProjectionOps {
        symmetrizer: LabeledOperator {
            role: OperatorRole::Symmetrizer,
            matrix: symmetrizer(&space),
        },
        top_annihilation: LabeledOperator {
            role: OperatorRole::TopAnnihilation,
            matrix: top_annihilation(n, k)?,
        },
        unlabel_pullback: unlabel_pullback(n, k)?,
    })
}

/// Residual checks of the labeled-particle calculus at level `k >= 1`.
pub fn check_lookdown_identities(g: &Graph, k: usize) -> Result<Vec<IdentityReport>> {
    if k == 0 {
        return Err(SipError::InvalidInput("labeled identities need k >= 1".into()));
    }
    let n = g.n();
    let tol = IDENTITY_TOL;
    let (sym_k, look_k) = build_labeled_generators(g, k)?;
    let (sym_km1, look_km1) = build_labeled_generators(g, k - 1)?;
    let (sym_k, look_k) = (sym_k.matrix, look_k.matrix);
    let (sym_km1, look_km1) = (sym_km1.matrix, look_km1.matrix);
    let s_k = symmetrizer(&LabeledSpace::new(n, k)?);
    let s_km1 = symmetrizer(&LabeledSpace::new(n, k - 1)?);
    let j_k = top_annihilation(n, k)?;
    let p_k = unlabel_pullback(n, k)?;
    let p_km1 = unlabel_pullback(n, k - 1)?;
    let l_k = build_sip_generator(g, k)?.matrix;
    let l_km1 = build_sip_generator(g, k - 1)?.matrix;
    let a_k = build_annihilation(g, k)?.matrix;
    let kf = k as f64;

    let mut out = vec![
        identity_report(format!("S_k^2 = S_k, k={k}"), &(&s_k * &s_k), &s_k, tol),
        identity_report(
            format!("(a_k g) o Phi_k = k S_k J_k (g o Phi_(k-1)), k={k}"),
            &(&p_k * &a_k),
            &(&s_k * &j_k * &p_km1 * kf),
            tol,
        ),
        identity_report(
            format!("J_k Lhat_(k-1) = Lhat_k J_k, k={k}"),
            &(&j_k * &look_km1),
            &(&look_k * &j_k),
            tol,
        ),
        identity_report(
            format!("S_k Lhat_k = Lsym_k S_k, k={k}"),
            &(&s_k * &look_k),
            &(&sym_k * &s_k),
            tol,
        ),
        identity_report(
            format!("S_k Lsym_k (f o Phi_k) = Lsym_k S_k (f o Phi_k), k={k}"),
            &(&s_k * &sym_k * &p_k),
            &(&sym_k * &s_k * &p_k),
            tol,
        ),
        identity_report(
            format!("Lsym_k S_k (f o Phi_k) = (L_k f) o Phi_k, k={k}"),
            &(&sym_k * &s_k * &p_k),
            &(&p_k * &l_k),
            tol,
        ),
        identity_report(
            format!("S_k Lhat_k (f o Phi_k) = (L_k f) o Phi_k, k={k}"),
            &(&s_k * &look_k * &p_k),
            &(&p_k * &l_k),
            tol,
        ),
        identity_report(
            format!("S_k J_k = S_k J_k S_(k-1), k={k}"),
            &(&s_k * &j_k),
            &(&s_k * &j_k * &s_km1),
            tol,
        ),
    ];

    // The labeled route to a_k L_(k-1) = L_k a_k, one matrix per line of the chain.
    let sj = &s_k * &j_k;
    let chain = [
        &p_k * &a_k * &l_km1 / kf,
        &sj * &p_km1 * &l_km1,
        &sj * &sym_km1 * &s_km1 * &p_km1,
        &sj * &s_km1 * &look_km1 * &p_km1,
        &sj * &look_km1 * &p_km1,
        &s_k * &look_k * &j_k * &p_km1,
        &sym_k * &sj * &p_km1,
        &sym_k * &s_k * &p_k * &a_k / kf,
        &p_k * &l_k * &a_k / kf,
    ];
    for (step, w) in chain.windows(2).enumerate() {
        out.push(identity_report(
            format!("labeled chain step {} -> {}, k={k}", step, step + 1),
            &w[0],
            &w[1],
            tol,
        ));
    }
    // Strip the pullback (left inverse of an injective 0/1 matrix) and compare
    // against the directly assembled intertwining matrices.
    let left_inv = pullback_left_inverse(&p_k);
    out.push(identity_report(
        format!("labeled route reproduces a_k L_(k-1), k={k}"),
        &(&left_inv * &chain[0] * kf),
        &(&a_k * &l_km1),
        tol,
    ));
    out.push(identity_report(
        format!("labeled route reproduces L_k a_k, k={k}"),
        &(&left_inv * &chain[8] * kf),
        &(&l_k * &a_k),
        tol,
    ));

    // Bottom particle of the lookdown process is RW(G, alpha).
    let mut lift = DMatrix::<f64>::identity(n, n);
    for level in 2..=k {
        lift = top_annihilation(n, level)? * lift;
    }
    let a = build_rw_generator(g).matrix;
    out.push(identity_report(
        format!("Lhat_k on functions of x_1 equals A_alpha, k={k}"),
        &(&look_k * &lift),
        &(&lift * &a),
        tol,
    ));
    out.push(IdentityReport::flag(
        format!("J_k injective, k={k}"),
        rank_is_full(&j_k),
    ));
    Ok(out)
}

fn pullback_left_inverse(p: &DMatrix<f64>) -> DMatrix<f64> {
    let mut inv = p.transpose();
    for r in 0..inv.nrows() {
        let count = inv.row(r).sum();
        inv.row_mut(r).scale_mut(1.0 / count);
    }
    inv
}

fn rank_is_full(m: &DMatrix<f64>) -> bool {
    let s = linalg::singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    s.len() == m.ncols() && s.iter().all(|&v| v > 1e-8 * top)
}

/// `omega_k` over `V^k`, indexed like [`LabeledSpace`].
#[derive(Debug, Clone)]
pub struct LookdownMeasure {
    pub probabilities: Vec<f64>,
}

pub fn omega(g: &Graph, k: usize) -> Result<LookdownMeasure> {
    let space = LabeledSpace::new(g.n(), k)?;
    let total = g.alpha_total();
    let denom: f64 = (0..k).map(|i| total + i as f64).product();
    let probabilities = (0..space.size())
        .map(|idx| {
            let pos = space.positions(idx);
            let num: f64 = (0..k)
                .map(|i| g.alpha()[pos[i]] + pos[..i].iter().filter(|&&p| p == pos[i]).count() as f64)
                .product();
            num / denom
        })
        .collect();
    Ok(LookdownMeasure { probabilities })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceWitness {
    pub from: Vec<usize>,
    pub to: Vec<usize>,
    pub forward_flux: f64,
    pub backward_flux: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OmegaReport {
    pub k: usize,
    pub checks: Vec<IdentityReport>,
    /// A pair violating detailed balance for the lookdown generator.
    pub lookdown_witness: Option<BalanceWitness>,
}

impl OmegaReport {
    pub fn pass(&self) -> bool {
        linalg::all_pass(&self.checks)
    }
}

fn stationarity_residual(w: &[f64], m: &DMatrix<f64>) -> (f64, f64) {
    let row = DVector::from_column_slice(w).transpose() * m;
    let scale = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| (w[i] * m[(i, j)]).abs())
        .fold(0.0_f64, f64::max)
        .max(1e-300);
    (row.amax(), scale)
}

fn worst_balance(w: &[f64], m: &DMatrix<f64>) -> (f64, usize, usize, f64) {
    let mut worst = (0.0, 0, 0);
    let mut scale = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let a = w[i] * m[(i, j)];
            let d = (a - w[j] * m[(j, i)]).abs();
            scale = scale.max(a.abs());
            if d > worst.0 {
                worst = (d, i, j);
            }
        }
    }
    (worst.0, worst.1, worst.2, scale.max(1e-300))
}

/// Stationarity of `omega_k` for both labeled generators, reversibility for the
/// symmetric one, a non-reversibility witness for the lookdown one (`k >= 2`),
/// the pushforward to `mu_{alpha,k}`, and consistency under dropping the top particle.
pub fn omega_checks(g: &Graph, k: usize) -> Result<OmegaReport> {
    let n = g.n();
    let space = LabeledSpace::new(n, k)?;
    let w = omega(g, k)?.probabilities;
    let (sym, look) = build_labeled_generators(g, k)?;
    let mut checks = Vec::new();

    let total: f64 = w.iter().sum();
    checks.push(IdentityReport::new(format!("omega_k sums to 1, k={k}"), (total - 1.0).abs(), 1e-12));
    checks.push(IdentityReport::flag(
        format!("omega_k strictly positive, k={k}"),
        w.iter().all(|&p| p > 0.0),
    ));
    for (name, m) in [("Lsym_k", &sym.matrix), ("Lhat_k", &look.matrix)] {
        let (res, scale) = stationarity_residual(&w, m);
        checks.push(IdentityReport::new(
            format!("omega_k {name} = 0, k={k}"),
            res,
            IDENTITY_TOL * scale,
        ));
    }
    let (res, _, _, scale) = worst_balance(&w, &sym.matrix);
    checks.push(IdentityReport::new(
        format!("Lsym_k reversible w.r.t. omega_k, k={k}"),
        res,
        IDENTITY_TOL * scale,
    ));

    let (res, i, j, scale) = worst_balance(&w, &look.matrix);
    let has_edges = g.max_weight() > 0.0;
    let lookdown_witness = (res > 1e-6 * scale).then(|| BalanceWitness {
        from: space.positions(i),
        to: space.positions(j),
        forward_flux: w[i] * look.matrix[(i, j)],
        backward_flux: w[j] * look.matrix[(j, i)],
    });
    if k >= 2 && has_edges {
        checks.push(IdentityReport::flag(
            format!("Lhat_k not reversible w.r.t. omega_k (witness found), k={k}"),
            lookdown_witness.is_some(),
        ));
    }

    let p = unlabel_pullback(n, k)?;
    let pushed = p.transpose() * DVector::from_column_slice(&w);
    let mu = build_sip_generator(g, k)?.measure.probabilities;
    let push_res = pushed
        .iter()
        .zip(&mu)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    checks.push(IdentityReport::new(
        format!("Phi_k pushforward of omega_k equals mu_(alpha,k), k={k}"),
        push_res,
        1e-12,
    ));

    if k >= 1 {
        let j = top_annihilation(n, k)?;
        let marginal = j.transpose() * DVector::from_column_slice(&w);
        let lower = omega(g, k - 1)?.probabilities;
        let res = marginal
            .iter()
            .zip(&lower)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        checks.push(IdentityReport::new(
            format!("dropping the top particle maps omega_k to omega_(k-1), k={k}"),
            res,
            1e-12,
        ));
    }

    Ok(OmegaReport {
        k,
        checks,
        lookdown_witness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_pair() -> Graph {
        Graph::path(vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn mixed_radix_round_trip() {
        let s = LabeledSpace::new(3, 4).unwrap();
        for idx in 0..s.size() {
            assert_eq!(s.index(&s.positions(idx)), idx);
        }
        assert!(LabeledSpace::new(10, 4).is_err());
    }

    #[test]
    fn heap_permutations() {
        let p = permutations(4);
        assert_eq!(p.len(), 24);
        let mut sorted = p.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 24);
        assert_eq!(permutations(0).len(), 1);
    }

    #[test]
    fn single_particle_generators_are_the_walk() {
        let g = Graph::cycle(vec![0.4, 1.0, 2.5]).unwrap();
        let (sym, look) = build_labeled_generators(&g, 1).unwrap();
        let a = build_rw_generator(&g).matrix;
        assert_eq!(sym.matrix, a);
        assert_eq!(look.matrix, a);
    }

    #[test]
    fn two_particle_rates() {
        let g = unit_pair();
        let s = LabeledSpace::new(2, 2).unwrap();
        let (sym, look) = build_labeled_generators(&g, 2).unwrap();
        // sites 1,2 are 0,1 here: (1,2) -> (1,1)
        let from = s.index(&[0, 1]);
        let to = s.index(&[0, 0]);
        assert_eq!(look.matrix[(from, to)], 3.0);
        assert_eq!(sym.matrix[(from, to)], 2.0);
    }

    #[test]
    fn symmetrizer_is_projection_fixing_symmetric_functions() {
        let space = LabeledSpace::new(3, 3).unwrap();
        let s = symmetrizer(&space);
        assert!(linalg::max_abs(&(&s * &s - &s)) < 1e-15);
        for i in 0..s.nrows() {
            assert!((s.row(i).sum() - 1.0).abs() < 1e-15);
        }
        let p = unlabel_pullback(3, 3).unwrap();
        assert!(linalg::max_abs(&(&s * &p - &p)) < 1e-15);
    }

    #[test]
    fn displayed_two_particle_computation() {
        let g = Graph::path(vec![0.7, 1.9]).unwrap();
        let c = g.c(0, 1);
        let (ax, ay) = (g.alpha()[0], g.alpha()[1]);
        let space = LabeledSpace::new(2, 2).unwrap();
        let (_, look) = build_labeled_generators(&g, 2).unwrap();
        let s = symmetrizer(&space);
        let phi = DVector::from_vec(vec![0.3, -1.1, 2.0, 0.6]);
        let lhs = &s * &look.matrix * &phi;
        let v = |a: usize, b: usize| phi[space.index(&[a, b])];
        let (x, y) = (0, 1);
        let want = c * ay / 2.0 * (2.0 * v(y, y) - v(y, x) - v(x, y))
            + c * ax / 2.0 * (2.0 * v(x, x) - v(y, x) - v(x, y))
            + c / 2.0 * (2.0 * v(y, y) - 2.0 * v(x, y) + 2.0 * v(x, x) - 2.0 * v(y, x));
        assert!((lhs[space.index(&[x, y])] - want).abs() < 1e-14);
    }

    #[test]
    fn identities_small() {
        let g = Graph::complete(vec![1.0, 1.0]).unwrap();
        for k in 1..=3 {
            for r in check_lookdown_identities(&g, k).unwrap() {
                assert!(r.pass, "{r:?}");
            }
        }
    }

    #[test]
    fn top_annihilation_intertwining_at_two() {
        let g = Graph::path(vec![0.3, 2.0, 1.1]).unwrap();
        let reports = check_lookdown_identities(&g, 2).unwrap();
        let r = reports.iter().find(|r| r.identity.starts_with("J_k Lhat")).unwrap();
        assert!(r.pass && r.residual < 1e-14);
    }

    #[test]
    fn omega_two_site_table() {
        let w = omega(&unit_pair(), 2).unwrap().probabilities;
        let want = [1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        let r = omega_checks(&unit_pair(), 2).unwrap();
        assert!(r.pass(), "{r:#?}");
        assert!(r.lookdown_witness.is_some());
    }

    #[test]
    fn omega_single_particle() {
        let g = Graph::path(vec![2.0, 1.0, 1.0]).unwrap();
        let w = omega(&g, 1).unwrap().probabilities;
        assert_eq!(w, vec![0.5, 0.25, 0.25]);
        let r = omega_checks(&g, 1).unwrap();
        assert!(r.pass());
        assert!(r.lookdown_witness.is_none());
    }
}
