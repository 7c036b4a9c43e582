//! Run manifest: a JSON record of every command with content hashes of the
//! files it read and wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub command: String,
    pub args: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn load_or_new(path: &Path) -> Result<Manifest> {
        if !path.exists() {
            return Ok(Manifest {
                tool_version: env!("CARGO_PKG_VERSION").into(),
                steps: Vec::new(),
            });
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Latest hash recorded for `file`, as input or output of any step.
    fn recorded(&self, file: &str) -> Option<&String> {
        self.steps
            .iter()
            .rev()
            .find_map(|s| s.outputs.get(file).or_else(|| s.inputs.get(file)))
    }

    /// Fail when an input differs from the hash the manifest recorded for it.
    pub fn verify_inputs(&self, inputs: &[PathBuf]) -> Result<()> {
        for p in inputs {
            let key = p.display().to_string();
            if let Some(want) = self.recorded(&key) {
                let got = sha256_file(p)?;
                if &got != want {
                    bail!("hash mismatch for {key}: manifest has {want}, file has {got}");
                }
            }
        }
        Ok(())
    }

    pub fn record(
        &mut self,
        command: &str,
        args: Vec<String>,
        seed: Option<u64>,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<()> {
        let hash_all = |files: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            files
                .iter()
                .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
                .collect()
        };
        self.steps.push(Step {
            command: command.into(),
            args,
            seed,
            inputs: hash_all(inputs)?,
            outputs: hash_all(outputs)?,
        });
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}
