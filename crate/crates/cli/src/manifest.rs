use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Provenance block embedded in every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub input_digest: String,
    pub parameters: Value,
    /// Seconds since the epoch from `SOURCE_DATE_EPOCH`; null otherwise so
    /// that repeated runs stay byte-identical.
    pub timestamp: Option<u64>,
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn new(subcommand: &str, input: &[u8], parameters: Value, seed: Option<u64>) -> Self {
        RunManifest {
            tool: "siplab",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.into(),
            input_digest: format!("sha256:{}", hex::encode(Sha256::digest(input))),
            parameters,
            timestamp: std::env::var("SOURCE_DATE_EPOCH")
                .ok()
                .and_then(|v| v.trim().parse().ok()),
            seed,
        }
    }

    pub fn csv_header(&self) -> String {
        format!("# manifest: {}\n", serde_json::to_string(self).expect("manifest serializes"))
    }
}
