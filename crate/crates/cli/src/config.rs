use serde::Serialize;
use sha2::{Digest, Sha256};

use tiegrid::harness::OutputMeta;

pub const TOOL: &str = "tiegrid";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything that determines a run's outputs. Hashed into the metadata of
/// every file written; the worker count and output directory are left out
/// since they do not change the results.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub case: String,
    /// SHA-256 of the case file, or of the bundled case name.
    pub case_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<(u32, u32)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dispatch: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub switching: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub alphas: Vec<f64>,
    pub dual_threshold: f64,
    pub agr_tol: f64,
    pub max_stages: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub strict_parse: bool,
    #[serde(skip)]
    pub workers: Option<usize>,
    #[serde(skip)]
    pub out: Option<std::path::PathBuf>,
}

impl RunConfig {
    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("run configs always serialize");
        hex_prefix(&Sha256::digest(json.as_bytes()))
    }

    pub fn meta(&self) -> OutputMeta {
        OutputMeta {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash: self.hash(),
        }
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex_prefix(&Sha256::digest(bytes))
}

fn hex_prefix(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Metadata plus a payload, flattened into one JSON object.
#[derive(Serialize)]
pub struct Stamped<'a, T: Serialize> {
    #[serde(flatten)]
    pub meta: &'a OutputMeta,
    pub config: &'a RunConfig,
    #[serde(flatten)]
    pub body: T,
}

pub fn banner(meta: &OutputMeta) -> String {
    format!("{} {} config {}", meta.tool, meta.version, meta.config_hash)
}
