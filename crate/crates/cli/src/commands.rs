use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use siplab::bep::verify_theorem_2;
use siplab::graph::{build_rw_generator, rw_gap, rw_spectrum};
use siplab::intertwiners::{
    annihilation_injectivity, check_adjoint, check_intertwinings, dirichlet_decomposition_check,
    eigen_dichotomy, kernel_lower_bound_chain, lift_eigenfunction, minmax_comparison_check,
};
use siplab::lookdown::{check_lookdown_identities, omega_checks, LabeledSpace, LABELED_CAP};
use siplab::sim::{
    bottom_marginal_test, default_relaxation_times, law_test, path_rng, projection_test,
    relaxation_estimate, simulate as run_simulation, Initial, Mode, RelaxationStatus, SimConfig,
};
use siplab::sip::{build_sip_generator, sip_eigenvalues, sip_gap, tv_sandwich, verify_theorem_1, CheckStatus};
use siplab::{ConfigSpace, Graph, IdentityReport};

use crate::input::{exit_code, load_graph, parse_initial, AlphaSpec, CliError, CliResult, LoadedGraph, SweepSpec};
use crate::manifest::RunManifest;
use crate::{Format, GraphArgs, SimTest, Suite};

/// Times at which the total-variation sandwich is checked inside `verify`.
const TV_TIMES: [f64; 4] = [0.1, 0.5, 1.0, 2.0];
/// Random kernel functions per k in the Dirichlet decomposition check.
const DECOMPOSITION_SAMPLES: usize = 5;

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn graph_json(g: &LoadedGraph) -> Value {
    json!({ "id": g.id, "n": g.graph.n(), "alpha": g.graph.alpha() })
}

fn load(args: &GraphArgs) -> CliResult<LoadedGraph> {
    load_graph(&args.graph, args.alpha.as_deref())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

pub fn spectrum(args: &GraphArgs, k: usize, format: Format) -> CliResult<(String, u8)> {
    let lg = load(args)?;
    let g = &lg.graph;
    let rw = rw_spectrum(&build_rw_generator(g))?.eigenvalues;
    let sip = sip_eigenvalues(&build_sip_generator(g, k)?)?;
    let manifest = RunManifest::new("spectrum", &lg.source, json!({ "graph": lg.id, "k": k }), None);
    let out = match format {
        Format::Csv => {
            let mut s = manifest.csv_header();
            s.push_str("operator,k,index,eigenvalue\n");
            for (i, v) in rw.iter().enumerate() {
                writeln!(s, "rw,1,{i},{}", num(*v)).unwrap();
            }
            for (i, v) in sip.iter().enumerate() {
                writeln!(s, "sip,{k},{i},{}", num(*v)).unwrap();
            }
            s
        }
        Format::Json => to_json(&json!({
            "manifest": manifest,
            "graph": graph_json(&lg),
            "k": k,
            "rw_eigenvalues": rw,
            "sip_eigenvalues": sip,
            "gap_rw": rw.get(1),
            "gap_k": sip.get(1),
        })),
    };
    Ok((out, 0))
}

#[derive(Debug, Clone, Serialize)]
struct CheckLine {
    suite: &'static str,
    name: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detail: Option<String>,
}

impl CheckLine {
    fn identity(suite: &'static str, r: &IdentityReport) -> Self {
        CheckLine {
            suite,
            name: r.identity.clone(),
            status: if r.pass { "pass" } else { "fail" },
            residual: Some(r.residual),
            tolerance: Some(r.tolerance),
            detail: None,
        }
    }

    fn flag(suite: &'static str, name: String, pass: bool, detail: Option<String>) -> Self {
        CheckLine {
            suite,
            name,
            status: if pass { "pass" } else { "fail" },
            residual: None,
            tolerance: None,
            detail,
        }
    }

    fn skipped(suite: &'static str, name: String, detail: String) -> Self {
        CheckLine {
            suite,
            name,
            status: "not-applicable",
            residual: None,
            tolerance: None,
            detail: Some(detail),
        }
    }
}

struct SuiteOutput {
    checks: Vec<CheckLine>,
    details: Value,
}

fn sip_suite(g: &Graph, max_k: usize, seed: u64) -> CliResult<SuiteOutput> {
    const S: &str = "sip";
    let mut checks = Vec::new();
    let gap = verify_theorem_1(g, max_k)?;
    for c in &gap.checks {
        let name = match c.k {
            Some(k) => format!("{}, k={k}", c.name),
            None => c.name.clone(),
        };
        let status = match c.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::NotApplicable => "not-applicable",
        };
        checks.push(CheckLine {
            suite: S,
            name,
            status,
            residual: None,
            tolerance: None,
            detail: Some(c.detail.clone()),
        });
    }

    let rw = rw_spectrum(&build_rw_generator(g))?;
    let psi = rw.eigenvector(1).unwrap_or_default();
    let per_k: Vec<CliResult<(Vec<CheckLine>, Value)>> = (1..=max_k)
        .into_par_iter()
        .map(|k| {
            let mut lines = Vec::new();
            lines.push(CheckLine::identity(S, &check_adjoint(g, k)?));
            let (ann, cre) = check_intertwinings(g, k)?;
            lines.push(CheckLine::identity(S, &ann));
            lines.push(CheckLine::identity(S, &cre));
            let inj = annihilation_injectivity(g, k)?;
            lines.push(CheckLine::flag(
                S,
                format!("a_k injective, k={k}"),
                inj.pass,
                Some(format!("rank {} of {}", inj.numerical_rank, inj.columns)),
            ));
            let dich = eigen_dichotomy(g, k)?;
            lines.push(CheckLine::flag(
                S,
                format!("eigenbasis splits into Im a_k and Ker a+_(k-1), k={k}"),
                dich.pass,
                Some(format!(
                    "image {} (expected {}), kernel {} (expected {}), worst mixing {:e}",
                    dich.image_dim, dich.expected_image_dim, dich.kernel_dim, dich.expected_kernel_dim, dich.worst_mixing
                )),
            ));
            match lift_eigenfunction(g, &psi, k) {
                Ok(l) => lines.push(CheckLine::flag(
                    S,
                    format!("lifted walk eigenfunction is an eigenfunction of -L_k, k={k}"),
                    true,
                    Some(format!("residual {:e}", l.residual)),
                )),
                Err(e) => lines.push(CheckLine::flag(
                    S,
                    format!("lifted walk eigenfunction is an eigenfunction of -L_k, k={k}"),
                    false,
                    Some(e.to_string()),
                )),
            }
            let size = ConfigSpace::new(g.n(), k)?.size();
            let mut rng = path_rng(seed, k as u64);
            for _ in 0..DECOMPOSITION_SAMPLES {
                let f: Vec<f64> = (0..size).map(|_| rng.random_range(-1.0..1.0)).collect();
                let d = dirichlet_decomposition_check(g, k, &f)?;
                lines.extend(d.checks.iter().map(|r| CheckLine::identity(S, r)));
            }
            let mm = minmax_comparison_check(g, k, seed)?;
            lines.extend(mm.checks.iter().map(|r| CheckLine::identity(S, r)));
            lines.extend(kernel_lower_bound_chain(g, k)?.iter().map(|r| CheckLine::identity(S, r)));
            let tv = tv_sandwich(&build_sip_generator(g, k)?, &TV_TIMES)?;
            for row in &tv {
                lines.push(CheckLine::flag(
                    S,
                    format!("TV sandwich at t={}, k={k}", row.t),
                    row.pass,
                    Some(format!("{:e} in [{:e}, {:e}]", row.value, row.lower, row.upper)),
                ));
            }
            Ok((lines, json!({ "k": k, "dichotomy": dich, "tv": tv })))
        })
        .collect();
    let mut levels = Vec::new();
    for r in per_k {
        let (lines, detail) = r?;
        checks.extend(lines);
        levels.push(detail);
    }
    Ok(SuiteOutput {
        checks,
        details: json!({ "gap_report": gap, "levels": levels }),
    })
}

fn lookdown_suite(g: &Graph, max_k: usize) -> CliResult<SuiteOutput> {
    const S: &str = "lookdown";
    let mut checks = Vec::new();
    let mut witnesses = Vec::new();
    for k in 1..=max_k {
        if LabeledSpace::with_cap(g.n(), k, LABELED_CAP).is_err() {
            checks.push(CheckLine::skipped(
                S,
                format!("labeled identities, k={k}"),
                format!("n^k exceeds the labeled cap {LABELED_CAP}"),
            ));
            continue;
        }
        checks.extend(check_lookdown_identities(g, k)?.iter().map(|r| CheckLine::identity(S, r)));
        let om = omega_checks(g, k)?;
        checks.extend(om.checks.iter().map(|r| CheckLine::identity(S, r)));
        witnesses.push(json!({ "k": k, "witness": om.lookdown_witness }));
    }
    Ok(SuiteOutput {
        checks,
        details: json!({ "lookdown_witnesses": witnesses }),
    })
}

fn bep_suite(g: &Graph, max_k: usize) -> CliResult<SuiteOutput> {
    let r = verify_theorem_2(g, max_k)?;
    Ok(SuiteOutput {
        checks: r.checks.iter().map(|c| CheckLine::identity("bep", c)).collect(),
        details: serde_json::to_value(&r).expect("bep report serializes"),
    })
}

struct VerifyOutcome {
    checks: Vec<CheckLine>,
    details: serde_json::Map<String, Value>,
}

fn run_suites(g: &Graph, max_k: usize, suite: Suite, seed: u64) -> CliResult<VerifyOutcome> {
    if max_k < 2 {
        return Err(CliError::input(format!("--K must be at least 2, got {max_k}")));
    }
    let mut checks = Vec::new();
    let mut details = serde_json::Map::new();
    if matches!(suite, Suite::All | Suite::Sip) {
        let s = sip_suite(g, max_k, seed)?;
        checks.extend(s.checks);
        details.insert("sip".into(), s.details);
    }
    if matches!(suite, Suite::All | Suite::Lookdown) {
        let s = lookdown_suite(g, max_k)?;
        checks.extend(s.checks);
        details.insert("lookdown".into(), s.details);
    }
    if matches!(suite, Suite::All | Suite::Bep) {
        let s = bep_suite(g, max_k)?;
        checks.extend(s.checks);
        details.insert("bep".into(), s.details);
    }
    Ok(VerifyOutcome { checks, details })
}

fn count(checks: &[CheckLine], status: &str) -> usize {
    checks.iter().filter(|c| c.status == status).count()
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::All => "all",
        Suite::Sip => "sip",
        Suite::Lookdown => "lookdown",
        Suite::Bep => "bep",
    }
}

pub fn verify(args: &GraphArgs, max_k: usize, suite: Suite, seed: u64) -> CliResult<(String, u8)> {
    let lg = load(args)?;
    let outcome = run_suites(&lg.graph, max_k, suite, seed)?;
    let failed = count(&outcome.checks, "fail");
    let manifest = RunManifest::new(
        "verify",
        &lg.source,
        json!({ "graph": lg.id, "K": max_k, "suite": suite_name(suite) }),
        Some(seed),
    );
    let report = json!({
        "manifest": manifest,
        "graph": graph_json(&lg),
        "pass": failed == 0,
        "summary": {
            "total": outcome.checks.len(),
            "passed": count(&outcome.checks, "pass"),
            "failed": failed,
            "not_applicable": count(&outcome.checks, "not-applicable"),
        },
        "checks": outcome.checks,
        "details": outcome.details,
    });
    Ok((to_json(&report), u8::from(failed > 0)))
}

pub fn report(args: &GraphArgs, max_k: usize, seed: u64) -> CliResult<(String, u8)> {
    let lg = load(args)?;
    let g = &lg.graph;
    let outcome = run_suites(g, max_k, Suite::All, seed)?;
    let manifest = RunManifest::new("report", &lg.source, json!({ "graph": lg.id, "K": max_k }), Some(seed));
    let gap_rw = rw_gap(g)?;
    let mut s = manifest.csv_header();
    writeln!(s, "graph {} (n = {}, alpha = {:?})", lg.id, g.n(), g.alpha()).unwrap();
    writeln!(s, "components {}, alpha_min {}", g.components(), num(g.alpha_min())).unwrap();
    writeln!(s, "gap_RW {}", num(gap_rw)).unwrap();
    writeln!(s, "\nk  gap_k                    gap_k/gap_RW").unwrap();
    for k in 1..=max_k {
        let gk = sip_gap(g, k)?;
        writeln!(s, "{k:<2} {} {}", num(gk), num(gk / gap_rw)).unwrap();
    }
    writeln!(s).unwrap();
    for suite in ["sip", "lookdown", "bep"] {
        let lines: Vec<&CheckLine> = outcome.checks.iter().filter(|c| c.suite == suite).collect();
        let failed = lines.iter().filter(|c| c.status == "fail").count();
        let skipped = lines.iter().filter(|c| c.status == "not-applicable").count();
        writeln!(
            s,
            "suite {suite}: {} checks, {failed} failed, {skipped} not applicable",
            lines.len()
        )
        .unwrap();
        for c in lines.iter().filter(|c| c.status != "pass") {
            writeln!(s, "  {} {}: {}", c.status, c.name, c.detail.as_deref().unwrap_or("")).unwrap();
        }
    }
    let failed = count(&outcome.checks, "fail");
    writeln!(s, "\noverall: {}", if failed == 0 { "pass" } else { "fail" }).unwrap();
    Ok((s, u8::from(failed > 0)))
}

struct SweepRow {
    graph_id: String,
    alpha_id: usize,
    k: usize,
    gap_k: Option<f64>,
    gap_rw: Option<f64>,
    alpha_min: f64,
    error: Option<(u8, String)>,
}

fn sweep_alphas(spec: &AlphaSpec, n: usize, seed: u64) -> CliResult<Vec<Vec<f64>>> {
    match spec {
        AlphaSpec::LogUniform { min, max, samples } => Ok((0..*samples)
            .map(|j| {
                let mut rng = path_rng(seed, j as u64);
                (0..n)
                    .map(|_| (min.ln() + rng.random::<f64>() * (max.ln() - min.ln())).exp())
                    .collect()
            })
            .collect()),
        AlphaSpec::Constant(cs) => Ok(cs.iter().map(|&c| vec![c; n]).collect()),
        AlphaSpec::Explicit(rows) => {
            if let Some(bad) = rows.iter().find(|r| r.len() != n) {
                return Err(CliError::input(format!(
                    "explicit alpha {bad:?} does not match a graph with {n} sites"
                )));
            }
            Ok(rows.clone())
        }
    }
}

pub fn sweep(path: &Path) -> CliResult<(String, u8)> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::input("sweep spec is not UTF-8"))?;
    let spec = SweepSpec::parse(&text)?;
    let mut tasks = Vec::new();
    for id in &spec.graphs {
        let base = load_graph(id, None)?;
        for (a, alpha) in sweep_alphas(&spec.alpha, base.graph.n(), spec.seed)?.into_iter().enumerate() {
            tasks.push((id.clone(), a, base.graph.with_alpha(alpha)));
        }
    }
    let rows: Vec<Vec<SweepRow>> = tasks
        .into_par_iter()
        .map(|(graph_id, alpha_id, g)| {
            let g = match g {
                Ok(g) => g,
                Err(e) => {
                    return vec![SweepRow {
                        graph_id,
                        alpha_id,
                        k: 0,
                        gap_k: None,
                        gap_rw: None,
                        alpha_min: f64::NAN,
                        error: Some((exit_code(&e), e.to_string())),
                    }]
                }
            };
            let gap_rw = rw_gap(&g);
            (1..=spec.k_max)
                .into_par_iter()
                .map(|k| {
                    let res = match &gap_rw {
                        Ok(rw) => sip_gap(&g, k).map(|gk| (*rw, gk)),
                        Err(e) => Err(siplab::SipError::InvalidInput(e.to_string())),
                    };
                    let (gap_rw, gap_k, error) = match res {
                        Ok((rw, gk)) => (Some(rw), Some(gk), None),
                        Err(e) => (None, None, Some((exit_code(&e), e.to_string()))),
                    };
                    SweepRow {
                        graph_id: graph_id.clone(),
                        alpha_id,
                        k,
                        gap_k,
                        gap_rw,
                        alpha_min: g.alpha_min(),
                        error,
                    }
                })
                .collect()
        })
        .collect();

    let manifest = RunManifest::new(
        "sweep",
        &bytes,
        serde_json::from_str(&text).unwrap_or(Value::Null),
        Some(spec.seed),
    );
    let mut s = manifest.csv_header();
    s.push_str("graph_id,alpha_id,k,gap_k,gap_rw,ratio,alpha_min,error\n");
    let mut code = 0;
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    for r in rows.iter().flatten() {
        let ratio = match (r.gap_k, r.gap_rw) {
            (Some(a), Some(b)) => Some(a / b),
            _ => None,
        };
        let error = match &r.error {
            Some((c, m)) => {
                code = code.max(*c);
                m.replace([',', '\n'], ";")
            }
            None => String::new(),
        };
        writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.graph_id,
            r.alpha_id,
            r.k,
            opt(r.gap_k),
            opt(r.gap_rw),
            opt(ratio),
            num(r.alpha_min),
            error
        )
        .unwrap();
    }
    Ok((s, code))
}

pub struct SimulateRequest {
    pub graph: GraphArgs,
    pub mode: String,
    pub k: usize,
    pub horizon: Option<f64>,
    pub paths: usize,
    pub seed: u64,
    pub times: Option<Vec<f64>>,
    pub initial: String,
    pub test: Option<SimTest>,
    pub format: Format,
}

pub fn simulate(req: SimulateRequest) -> CliResult<(String, u8)> {
    let lg = load(&req.graph)?;
    let mode: Mode = req.mode.parse()?;
    let initial = match parse_initial(&req.initial)? {
        Some(eta) => Initial::Fixed(eta),
        None => Initial::Stationary,
    };
    let times = match (&req.times, req.test) {
        (Some(t), _) => t.clone(),
        (None, Some(SimTest::Relaxation)) => default_relaxation_times(rw_gap(&lg.graph)?),
        (None, _) => vec![req.horizon.unwrap_or(1.0)],
    };
    let horizon = req
        .horizon
        .unwrap_or_else(|| times.iter().copied().fold(0.0, f64::max));
    let cfg = SimConfig {
        graph: lg.graph.clone(),
        k: req.k,
        mode,
        horizon,
        n_paths: req.paths,
        seed: req.seed,
        times: times.clone(),
        initial,
        observable: None,
    };
    let manifest = RunManifest::new(
        "simulate",
        &lg.source,
        json!({
            "graph": lg.id,
            "mode": mode,
            "k": req.k,
            "horizon": horizon,
            "paths": req.paths,
            "times": times,
            "initial": cfg.initial,
            "test": req.test.map(|t| match t {
                SimTest::Law => "law",
                SimTest::Projection => "projection",
                SimTest::Bottom => "bottom",
                SimTest::Relaxation => "relaxation",
            }),
        }),
        Some(req.seed),
    );

    if let Some(test) = req.test {
        let (report, pass) = match test {
            SimTest::Law => {
                let r = law_test(&cfg)?;
                let pass = r.pass;
                (serde_json::to_value(r), pass)
            }
            SimTest::Projection => {
                let r = projection_test(&cfg)?;
                let pass = r.pass;
                (serde_json::to_value(r), pass)
            }
            SimTest::Bottom => {
                let r = bottom_marginal_test(&cfg)?;
                let pass = r.pass;
                (serde_json::to_value(r), pass)
            }
            SimTest::Relaxation => {
                let r = relaxation_estimate(&cfg)?;
                let pass = r.status != RelaxationStatus::Fail;
                (serde_json::to_value(r), pass)
            }
        };
        let out = json!({ "manifest": manifest, "report": report.expect("report serializes") });
        return Ok((to_json(&out), u8::from(!pass)));
    }

    let summary = run_simulation(&cfg)?;
    let out = match req.format {
        Format::Json => to_json(&json!({ "manifest": manifest, "summary": summary })),
        Format::Csv => {
            let n = lg.graph.n();
            let mut s = manifest.csv_header();
            s.push_str("time,state_rank,count\n");
            for (i, t) in summary.times.iter().enumerate() {
                let ranked: Vec<(usize, u64)> = match mode {
                    Mode::Sip => summary.histograms[i]
                        .iter()
                        .map(|e| (siplab::config_space::rank(&e.state), e.count))
                        .collect(),
                    Mode::Lookdown => {
                        let space = LabeledSpace::with_cap(n, req.k, usize::MAX)?;
                        summary.histograms[i]
                            .iter()
                            .map(|e| {
                                let pos: Vec<usize> = e.state.iter().map(|&v| v as usize).collect();
                                (space.index(&pos), e.count)
                            })
                            .collect()
                    }
                };
                let mut ranked = ranked;
                ranked.sort_unstable();
                for (r, c) in ranked {
                    writeln!(s, "{},{r},{c}", num(*t)).unwrap();
                }
            }
            s
        }
    };
    Ok((out, 0))
}

pub fn tv_curve(args: &GraphArgs, k: usize, times: &[f64], format: Format) -> CliResult<(String, u8)> {
    let lg = load(args)?;
    let rows = tv_sandwich(&build_sip_generator(&lg.graph, k)?, times)?;
    let fail = rows.iter().any(|r| !r.pass);
    let manifest = RunManifest::new("tv-curve", &lg.source, json!({ "graph": lg.id, "k": k, "times": times }), None);
    let out = match format {
        Format::Json => to_json(&json!({ "manifest": manifest, "rows": rows })),
        Format::Csv => {
            let mut s = manifest.csv_header();
            s.push_str("t,tv,lower,upper,pass\n");
            for r in &rows {
                writeln!(s, "{},{},{},{},{}", num(r.t), num(r.value), num(r.lower), num(r.upper), r.pass).unwrap();
            }
            s
        }
    };
    Ok((out, u8::from(fail)))
}
