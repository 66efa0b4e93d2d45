//! Versioned JSON checkpoints for network parameters.
//!
//! Weights are serialized as JSON numbers in shortest round-trip decimal
//! form, which reconstructs every 64-bit value bit-exactly on load. The
//! optional `correction` block records how a posterior model was produced.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{Activation, Architecture, Layer, NetParams};

pub const FORMAT_VERSION: u32 = 1;

/// Training provenance kept alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainProvenance {
    /// Last few entries of the per-epoch loss history.
    pub loss_history_tail: Vec<f64>,
    pub epochs_run: usize,
}

/// Numerical-rank report from a rank-deficient least-squares solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankWarning {
    pub numerical_rank: usize,
    pub columns: usize,
}

/// How a corrected model was obtained from its prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionBlock {
    /// One of `tl-adam`, `tl-lsq`, `tl-recurrent`, `gresnet`.
    pub method: String,
    pub freeze_index: usize,
    pub hf_count: usize,
    pub prior_checkpoint_hash: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank_deficiency: Option<RankWarning>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArchDoc {
    input_dim: usize,
    hidden_layers: usize,
    hidden_width: usize,
    activation: String,
    residual: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerDoc {
    /// Row-major rows of the `out x in` weight matrix.
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointDoc {
    format_version: u32,
    arch: ArchDoc,
    layers: Vec<LayerDoc>,
    seed: u64,
    provenance: TrainProvenance,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    correction: Option<CorrectionBlock>,
}

/// A checkpoint loaded back into memory.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: NetParams,
    pub seed: u64,
    pub provenance: TrainProvenance,
    pub correction: Option<CorrectionBlock>,
}

/// Serialize a checkpoint document to bytes (LF-terminated pretty JSON).
pub fn to_bytes(
    params: &NetParams,
    seed: u64,
    provenance: &TrainProvenance,
    correction: Option<&CorrectionBlock>,
) -> Result<Vec<u8>> {
    let doc = CheckpointDoc {
        format_version: FORMAT_VERSION,
        arch: ArchDoc {
            input_dim: params.arch.input_dim,
            hidden_layers: params.arch.hidden_layers,
            hidden_width: params.arch.hidden_width,
            activation: params.arch.activation.name().to_string(),
            residual: params.arch.residual,
        },
        layers: params
            .layers
            .iter()
            .map(|l| LayerDoc {
                weights: l.weights.chunks_exact(l.in_dim).map(|r| r.to_vec()).collect(),
                bias: l.bias.clone(),
            })
            .collect(),
        seed,
        provenance: provenance.clone(),
        correction: correction.cloned(),
    };
    let mut bytes = serde_json::to_vec_pretty(&doc)
        .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn save(
    path: &Path,
    params: &NetParams,
    seed: u64,
    provenance: &TrainProvenance,
    correction: Option<&CorrectionBlock>,
) -> Result<()> {
    let bytes = to_bytes(params, seed, provenance, correction)?;
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let doc: CheckpointDoc = serde_json::from_slice(bytes)
        .map_err(|e| Error::Checkpoint(format!("parse: {e}")))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            doc.format_version
        )));
    }
    let arch = Architecture {
        input_dim: doc.arch.input_dim,
        hidden_layers: doc.arch.hidden_layers,
        hidden_width: doc.arch.hidden_width,
        activation: Activation::from_name(&doc.arch.activation)?,
        residual: doc.arch.residual,
    };
    arch.validate()?;
    let dims = arch.layer_dims();
    if dims.len() != doc.layers.len() {
        return Err(Error::Checkpoint(format!(
            "layer count {} does not match architecture ({})",
            doc.layers.len(),
            dims.len()
        )));
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (idx, (ld, (in_dim, out_dim))) in doc.layers.into_iter().zip(dims).enumerate() {
        if ld.weights.len() != out_dim
            || ld.weights.iter().any(|r| r.len() != in_dim)
            || ld.bias.len() != out_dim
        {
            return Err(Error::Checkpoint(format!("layer {idx} has inconsistent shape")));
        }
        layers.push(Layer {
            in_dim,
            out_dim,
            weights: ld.weights.into_iter().flatten().collect(),
            bias: ld.bias,
        });
    }
    Ok(Checkpoint {
        params: NetParams { arch, layers },
        seed: doc.seed,
        provenance: doc.provenance,
        correction: doc.correction,
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    from_bytes(&bytes)
}
