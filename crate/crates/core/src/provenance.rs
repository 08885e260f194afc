use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "cood-bench";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where an artifact came from. Contains nothing host- or time-dependent so
/// identical inputs always produce identical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 over the canonical JSON of the run parameters.
    pub config_hash: String,
    /// SHA-256 of each input file's bytes, keyed by role.
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
}

impl Provenance {
    pub fn new<P: Serialize>(command: &str, params: &P, seed: u64) -> Self {
        let canonical = serde_json::to_vec(params).expect("run parameters serialize");
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config_hash: sha256_hex(&canonical),
            inputs: BTreeMap::new(),
            seed,
        }
    }

    pub fn with_input(mut self, role: &str, bytes: &[u8]) -> Self {
        self.inputs.insert(role.to_string(), sha256_hex(bytes));
        self
    }

    /// `# key=value` comment lines for tab/CSV outputs.
    pub fn comment_block(&self) -> String {
        let mut out = format!(
            "# tool={}\n# version={}\n# command={}\n# config_hash={}\n# seed={}\n",
            self.tool, self.version, self.command, self.config_hash, self.seed
        );
        for (role, digest) in &self.inputs {
            out.push_str(&format!("# input.{role}={digest}\n"));
        }
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
