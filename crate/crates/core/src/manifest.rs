//! JSON run manifests: the full configuration, seed, derived sampler
//! hyperparameters, and SHA-256 digests of every input and output file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::diffusion::img2img_start_step;
use crate::error::{Error, Result};
use crate::matfile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub img2img_t_start: usize,
    pub diffusion_steps: usize,
    pub conditioning_weights: [f64; 2],
    /// Paths relative to the output root, mapped to hex SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = matfile::read_artifact(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            seed: config.seed,
            config: config.clone(),
            img2img_t_start: img2img_start_step(config.diffusion.strength, config.diffusion.steps)?,
            diffusion_steps: config.diffusion.steps,
            conditioning_weights: [config.diffusion.w_vision, config.diffusion.w_text],
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn add_input(&mut self, root: &Path, rel: &str) -> Result<()> {
        let h = sha256_file(&root.join(rel))?;
        self.inputs.insert(rel.to_string(), h);
        Ok(())
    }

    pub fn add_output(&mut self, root: &Path, rel: &str) -> Result<()> {
        let h = sha256_file(&root.join(rel))?;
        self.outputs.insert(rel.to_string(), h);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        matfile::write_new(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = matfile::read_artifact(path)?;
        let m: Manifest = serde_json::from_slice(&bytes)?;
        m.config.validate()?;
        Ok(m)
    }

    /// Re-hashes every recorded input under `root`. Returns the mismatching
    /// paths as an error.
    pub fn verify_inputs(&self, root: &Path) -> Result<()> {
        verify_set(&self.inputs, root, "input")
    }

    pub fn verify_outputs(&self, root: &Path) -> Result<()> {
        verify_set(&self.outputs, root, "output")
    }
}

fn verify_set(set: &BTreeMap<String, String>, root: &Path, what: &str) -> Result<()> {
    let mut bad: Vec<PathBuf> = Vec::new();
    for (rel, want) in set {
        let p = root.join(rel);
        if sha256_file(&p)? != *want {
            bad.push(p);
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{what} hash mismatch: {}",
            bad.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
        )))
    }
}
