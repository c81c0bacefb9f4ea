//! Checkpoint directories: a JSON manifest plus one little-endian f64 file
//! per parameter set. Values round-trip bit-exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::learner::{Mode, Nets};
use crate::nets::{Head, LayerShape, ParamSet};
use crate::runtime::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetEntry {
    pub name: String,
    pub file: String,
    pub head: Head,
    pub layers: Vec<LayerShape>,
    pub version: u64,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: String,
    pub env_id: EnvId,
    pub mode: Mode,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub env_steps: u64,
    pub learner_steps: u64,
    pub sets: Vec<SetEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub nets: Nets,
}

impl Checkpoint {
    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::parse_text(&self.manifest.config)
    }
}

fn named_sets(nets: &Nets) -> Vec<(String, &ParamSet)> {
    let mut out = vec![("policy".to_string(), &nets.policy)];
    for (k, c) in nets.critics.iter().enumerate() {
        out.push((format!("critic{k}"), c));
    }
    for (k, c) in nets.critic_targets.iter().enumerate() {
        out.push((format!("critic_target{k}"), c));
    }
    if let Some(g) = &nets.gate {
        out.push(("gate".to_string(), g));
    }
    out
}

pub fn save(dir: &Path, config: &RunConfig, nets: &Nets, env_steps: u64, learner_steps: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut sets = Vec::new();
    for (name, set) in named_sets(nets) {
        let file = format!("{name}.f64le");
        let bytes: Vec<u8> = set.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        sets.push(SetEntry {
            name,
            file,
            head: set.head(),
            layers: set.layers().to_vec(),
            version: set.version(),
            len: set.len(),
        });
    }
    let manifest = Manifest {
        config_hash: config.hash(),
        config: config.to_text(),
        env_id: config.env_id,
        mode: config.learner.mode,
        obs_dim: nets.obs_dim(),
        act_dim: nets.act_dim(),
        env_steps,
        learner_steps,
        sets,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(dir.to_path_buf())
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut policy = None;
    let mut critics = Vec::new();
    let mut critic_targets = Vec::new();
    let mut gate = None;
    for entry in &manifest.sets {
        let path = dir.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != entry.len * 8 {
            return Err(Error::Checkpoint(format!(
                "{}: {} bytes, manifest says {} values",
                path.display(),
                bytes.len(),
                entry.len
            )));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let set = ParamSet::from_parts(entry.layers.clone(), entry.head, values, entry.version)?;
        match entry.name.as_str() {
            "policy" => policy = Some(set),
            "gate" => gate = Some(set),
            n if n.starts_with("critic_target") => critic_targets.push(set),
            n if n.starts_with("critic") => critics.push(set),
            other => return Err(Error::Checkpoint(format!("unknown parameter set `{other}`"))),
        }
    }
    let policy = policy.ok_or_else(|| Error::Checkpoint("checkpoint has no policy".into()))?;
    if critics.len() != critic_targets.len() {
        return Err(Error::Checkpoint("critic and target counts differ".into()));
    }
    let nets = Nets {
        policy,
        critics,
        critic_targets,
        gate,
    };
    if nets.obs_dim() != manifest.obs_dim || nets.act_dim() != manifest.act_dim {
        return Err(Error::Checkpoint("network widths disagree with the manifest".into()));
    }
    Ok(Checkpoint { manifest, nets })
}
