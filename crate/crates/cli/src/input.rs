//! Graph sources, sweep specifications, and exit-code mapping.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use siplab::{Graph, GraphFile, ParticleConfig, Preset, SipError};

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub fn exit_code(e: &SipError) -> u8 {
    match e {
        SipError::StateCapExceeded { .. } => 3,
        SipError::Verification { .. } | SipError::NotEigenfunction { .. } | SipError::Eigen(_) => 1,
        _ => 2,
    }
}

impl From<SipError> for CliError {
    fn from(e: SipError) -> Self {
        CliError {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// A loaded graph together with the bytes that identify it.
pub struct LoadedGraph {
    pub graph: Graph,
    pub id: String,
    pub source: Vec<u8>,
}

/// `spec` is a preset such as `cycle(4)` or a path to a graph JSON file.
/// `alpha` replaces the file's alpha (or the all-ones default of a preset).
pub fn load_graph(spec: &str, alpha: Option<&[f64]>) -> CliResult<LoadedGraph> {
    if let Some(preset) = Preset::parse(spec) {
        let alpha = alpha.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; preset.n()]);
        if alpha.len() != preset.n() {
            return Err(CliError::input(format!(
                "{spec} has {} sites but alpha has {} entries",
                preset.n(),
                alpha.len()
            )));
        }
        let graph = preset.build(alpha.clone())?;
        let source = format!("{preset} alpha={alpha:?}").into_bytes();
        return Ok(LoadedGraph {
            graph,
            id: preset.to_string(),
            source,
        });
    }
    let bytes = fs::read(Path::new(spec)).map_err(|e| CliError::input(format!("cannot read {spec}: {e}")))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::input(format!("{spec} is not UTF-8")))?;
    let mut graph = GraphFile::parse(&text)?;
    let mut source = bytes;
    if let Some(a) = alpha {
        graph = graph.with_alpha(a.to_vec())?;
        source.extend_from_slice(format!(" alpha={a:?}").as_bytes());
    }
    Ok(LoadedGraph {
        graph,
        id: spec.to_string(),
        source,
    })
}

/// `stationary` or a JSON occupation array such as `[2,0,1]`.
pub fn parse_initial(s: &str) -> CliResult<Option<ParticleConfig>> {
    if s == "stationary" {
        return Ok(None);
    }
    serde_json::from_str::<Vec<u32>>(s)
        .map(|v| Some(ParticleConfig(v)))
        .map_err(|e| CliError::input(format!("bad initial configuration '{s}': {e}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaSpec {
    /// Each coordinate drawn independently log-uniformly in `[min, max]`.
    LogUniform { min: f64, max: f64, samples: usize },
    /// `alpha = c * ones` for each listed `c`.
    Constant(Vec<f64>),
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub graphs: Vec<String>,
    pub alpha: AlphaSpec,
    pub k_max: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SweepSpec {
    pub fn parse(text: &str) -> CliResult<Self> {
        let spec: SweepSpec =
            serde_json::from_str(text).map_err(|e| CliError::input(format!("bad sweep spec: {e}")))?;
        let empty_alpha = match &spec.alpha {
            AlphaSpec::LogUniform { min, max, samples } => {
                if !(*min > 0.0 && min <= max && max.is_finite()) {
                    return Err(CliError::input("log_uniform needs 0 < min <= max < inf"));
                }
                *samples == 0
            }
            AlphaSpec::Constant(v) => v.is_empty(),
            AlphaSpec::Explicit(v) => v.is_empty(),
        };
        if spec.graphs.is_empty() || empty_alpha || spec.k_max == 0 {
            return Err(CliError::input("empty sweep: need at least one graph, one alpha and k_max >= 1"));
        }
        Ok(spec)
    }
}
