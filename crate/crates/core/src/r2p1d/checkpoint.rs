//! Named-tensor checkpoints in the safetensors format.
//!
//! The header metadata carries the network config (JSON), its fingerprint and
//! the frame count, so a checkpoint alone is enough to rebuild the network.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use super::config::NetworkConfig;
use super::network::Network;
use super::tensor::Tensor;
use crate::error::{CoreError, IoContext, Result};
use crate::fsutil::write_atomic;

const FORMAT: &str = "foresight-r2p1d/1";

/// Named tensors plus header metadata read from a checkpoint.
#[derive(Debug, Clone, Default)]
pub struct WeightSource {
    pub tensors: BTreeMap<String, Tensor<f32>>,
    pub metadata: BTreeMap<String, String>,
}

impl WeightSource {
    pub fn from_network(net: &mut Network<f32>) -> Self {
        Self { tensors: net.state().into_iter().collect(), metadata: network_metadata(net) }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let st = SafeTensors::deserialize(bytes).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        let metadata = meta.metadata().clone().unwrap_or_default().into_iter().collect();
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(CoreError::Checkpoint(format!("tensor `{name}` is {:?}, expected F32", view.dtype())));
            }
            let data = view.data().chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
            tensors.insert(name, Tensor::from_vec(view.shape(), data));
        }
        Ok(Self { tensors, metadata })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().iter().flat_map(|v| v.to_le_bytes()).collect()))
            .collect();
        let views = raw
            .iter()
            .map(|(n, shape, bytes)| {
                TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| CoreError::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        let mut bytes = safetensors::serialize(views, &Some(meta)).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
        sort_header(&mut bytes)?;
        Ok(bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn config(&self) -> Result<NetworkConfig> {
        let json = self.metadata.get("config").ok_or_else(|| CoreError::Checkpoint("no config in metadata".into()))?;
        Ok(serde_json::from_str(json)?)
    }

    pub fn frames(&self) -> Result<usize> {
        self.metadata
            .get("frames")
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| CoreError::Checkpoint("no frame count in metadata".into()))
    }
}

/// Rewrites the JSON header with sorted keys so equal checkpoints are equal
/// bytes; the metadata map is hashed and its order would otherwise vary.
fn sort_header(bytes: &mut [u8]) -> Result<()> {
    let len = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte prefix")) as usize;
    let header = &bytes[8..8 + len];
    let trimmed = header.iter().rposition(|b| *b != b' ').map_or(0, |i| i + 1);
    let value: serde_json::Value = serde_json::from_slice(&header[..trimmed])?;
    let sorted = serde_json::to_vec(&value)?;
    if sorted.len() != trimmed {
        return Err(CoreError::Checkpoint("header changed length when sorted".into()));
    }
    bytes[8..8 + trimmed].copy_from_slice(&sorted);
    Ok(())
}

fn network_metadata(net: &Network<f32>) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("format".to_string(), FORMAT.to_string()),
        ("config".to_string(), serde_json::to_string(net.config()).expect("config serializes")),
        ("fingerprint".to_string(), net.config().fingerprint()),
        ("frames".to_string(), net.frames().to_string()),
    ])
}

pub fn save_checkpoint(net: &mut Network<f32>, path: &Path) -> Result<()> {
    WeightSource::from_network(net).write(path)
}

/// Rebuilds a network from a checkpoint, restoring every tensor exactly.
pub fn load_checkpoint(path: &Path) -> Result<Network<f32>> {
    let source = WeightSource::read(path)?;
    let mut net = Network::build(&source.config()?, source.frames()?, 0)?;
    let mut missing = Vec::new();
    let mut err = None;
    let mut restore = |name: String, t: &mut Tensor<f32>| match source.tensors.get(&name) {
        None => missing.push(name),
        Some(s) if s.shape() != t.shape() => {
            err.get_or_insert(CoreError::ShapeMismatch { name, expected: t.shape().to_vec(), found: s.shape().to_vec() });
        }
        Some(s) => *t = s.clone(),
    };
    net.visit_params(&mut |n, p| restore(n, &mut p.value));
    net.visit_buffers(&mut |n, b| restore(n, b));
    if let Some(e) = err {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(CoreError::MissingTensors(missing));
    }
    Ok(net)
}

/// Outcome of [`load_pretrained`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Backbone tensors copied from the source.
    pub matched: Vec<String>,
    /// Head tensors present in the source but left at their fresh values.
    pub head_skipped: Vec<String>,
    /// Head tensors the network has but the source lacks.
    pub head_missing: Vec<String>,
    /// Source tensors the network has no slot for.
    pub unused: Vec<String>,
}

fn is_head(name: &str) -> bool {
    name.starts_with("fc.")
}

/// Copies backbone parameters and batch-norm statistics from `source` into
/// `net`, leaving the head as initialised. On error `net` is unchanged.
pub fn load_pretrained(net: &mut Network<f32>, source: &WeightSource) -> Result<LoadReport> {
    let mut staged = net.clone();
    let mut report = LoadReport::default();
    let mut missing = Vec::new();
    let mut mismatch = None;
    let mut seen = std::collections::BTreeSet::new();
    let mut copy = |name: String, t: &mut Tensor<f32>| {
        seen.insert(name.clone());
        match (source.tensors.get(&name), is_head(&name)) {
            (Some(_), true) => report.head_skipped.push(name),
            (None, true) => report.head_missing.push(name),
            (None, false) => missing.push(name),
            (Some(s), false) => {
                if s.shape() != t.shape() {
                    if mismatch.is_none() {
                        mismatch = Some(CoreError::ShapeMismatch {
                            name,
                            expected: t.shape().to_vec(),
                            found: s.shape().to_vec(),
                        });
                    }
                } else {
                    *t = s.clone();
                    report.matched.push(name);
                }
            }
        }
    };
    staged.visit_params(&mut |n, p| copy(n, &mut p.value));
    staged.visit_buffers(&mut |n, b| copy(n, b));
    if let Some(e) = mismatch {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(CoreError::MissingTensors(missing));
    }
    *net = staged;
    report.unused = source.tensors.keys().filter(|k| !seen.contains(*k)).cloned().collect();
    Ok(report)
}
