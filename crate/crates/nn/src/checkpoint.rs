//! Versioned binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, a JSON header
//! (architectures, tensor table, optimizer state, step, config hash, caller
//! metadata), then every tensor as little-endian `f32` in table order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::net::{Architecture, PolicyValueNet};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CHOLECKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AgentEntry {
    agent: String,
    architecture: Architecture,
    params: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimizerEntry {
    config: AdamConfig,
    step: u64,
    m: Vec<TensorEntry>,
    v: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    version: u32,
    /// Hex FNV hash of the training configuration.
    config_hash: String,
    step: u64,
    agents: Vec<AgentEntry>,
    metadata: serde_json::Value,
}

/// One agent's network and (optionally) optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub net: PolicyValueNet<f32>,
    pub optimizer: Option<Adam<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub step: u64,
    pub agents: Vec<AgentState>,
    /// Caller-defined state (trainer progress, RNG positions, ...).
    pub metadata: serde_json::Value,
}

fn push_tensors(data: &mut Vec<f32>, names: &ParamSet<f32>, values: &[Vec<f32>]) -> Vec<TensorEntry> {
    names
        .tensors
        .iter()
        .zip(values)
        .map(|(t, v)| {
            let e = TensorEntry { name: t.name.clone(), shape: t.shape, offset: data.len() };
            data.extend_from_slice(v);
            e
        })
        .collect()
}

impl Checkpoint {
    pub fn agent(&self, name: &str) -> Option<&AgentState> {
        self.agents.iter().find(|a| a.net.agent == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut data = Vec::new();
        let mut agents = Vec::new();
        for a in &self.agents {
            let p = &a.net.params;
            let values: Vec<Vec<f32>> = p.tensors.iter().map(|t| t.data.clone()).collect();
            let params = push_tensors(&mut data, p, &values);
            let optimizer = a.optimizer.as_ref().map(|o| OptimizerEntry {
                config: o.config,
                step: o.step,
                m: push_tensors(&mut data, p, &o.m),
                v: push_tensors(&mut data, p, &o.v),
            });
            agents.push(AgentEntry { agent: a.net.agent.clone(), architecture: a.net.arch.clone(), params, optimizer });
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            config_hash: format!("{:016x}", self.config_hash),
            step: self.step,
            agents,
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 4 * data.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, NnError> {
        let fail = |msg: String| NnError::Checkpoint { path: path.to_path_buf(), msg };
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(fail("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported version {version} (expected {CHECKPOINT_VERSION})")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| fail("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| fail(format!("bad header: {e}")))?;
        let raw = &bytes[20 + hlen..];
        if raw.len() % 4 != 0 {
            return Err(fail("tensor data is not a whole number of f32 values".into()));
        }
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let read = |e: &TensorEntry| -> Result<Vec<f32>, NnError> {
            let n = e.shape[0] * e.shape[1];
            data.get(e.offset..e.offset + n)
                .map(|s| s.to_vec())
                .ok_or_else(|| fail(format!("tensor {} lies outside the data section", e.name)))
        };
        let config_hash = u64::from_str_radix(&header.config_hash, 16).map_err(|_| fail("bad config hash".into()))?;
        let mut agents = Vec::new();
        for a in &header.agents {
            let mut net = PolicyValueNet::<f32>::new(a.architecture.clone(), a.agent.clone(), 0)
                .map_err(|e| fail(format!("agent {}: {e}", a.agent)))?;
            if a.params.len() != net.params.tensors.len() {
                return Err(fail(format!("agent {}: tensor table does not match its architecture", a.agent)));
            }
            let mut params = net.params.clone();
            for (t, e) in params.tensors.iter_mut().zip(&a.params) {
                if t.name != e.name || t.shape != e.shape {
                    return Err(fail(format!("agent {}: tensor {} does not match its architecture", a.agent, e.name)));
                }
                t.data = read(e)?;
            }
            net.set_params(params)?;
            let optimizer = match &a.optimizer {
                None => None,
                Some(o) => {
                    let mut opt = Adam::new(o.config, &net.params);
                    opt.step = o.step;
                    opt.m = o.m.iter().map(read).collect::<Result<_, _>>()?;
                    opt.v = o.v.iter().map(read).collect::<Result<_, _>>()?;
                    Some(opt)
                }
            };
            agents.push(AgentState { net, optimizer });
        }
        Ok(Self { config_hash, step: header.step, agents, metadata: header.metadata })
    }

    /// Writes through a temporary file so a crash never leaves a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let io = |context: String| move |source| NnError::Io { context, source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io(format!("creating {}", dir.display())))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(io(format!("creating {}", tmp.display())))?;
        f.write_all(&self.to_bytes()).map_err(io(format!("writing {}", tmp.display())))?;
        f.sync_all().map_err(io(format!("syncing {}", tmp.display())))?;
        fs::rename(&tmp, path).map_err(io(format!("renaming to {}", path.display())))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bytes = fs::read(path).map_err(|source| NnError::Io { context: format!("reading {}", path.display()), source })?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks that every expected agent is present with the given architecture.
    pub fn load_expecting(path: &Path, expected: &[(&str, &Architecture)]) -> Result<Self, NnError> {
        let ck = Self::load(path)?;
        for (name, arch) in expected {
            match ck.agent(name) {
                None => return Err(NnError::ArchitectureMismatch(format!("{}: no agent {name:?}", path.display()))),
                Some(a) if &a.net.arch != *arch => {
                    return Err(NnError::ArchitectureMismatch(format!(
                        "{}: agent {name:?} has architecture {}, expected {}",
                        path.display(),
                        serde_json::to_string(&a.net.arch)?,
                        serde_json::to_string(arch)?
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(ck)
    }
}
