//! Checkpoints, layer re-initialization and per-block learning rates.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! 0       "NBTL"
//! 4       u32  format version
//! 8       u64  header length H
//! 16      H bytes of JSON: {"spec", "meta", "n_values", "digest"}
//! 16+H    n_values f64 (IEEE-754 LE), block by block, weights then bias
//! ```
//!
//! `digest` is the hex SHA-256 of the value payload.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Block, NetworkSpec, ParamSet, Tensor2D};

pub const MAGIC: &[u8; 4] = b"NBTL";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE_LEN: u64 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: NetworkSpec,
    meta: BTreeMap<String, String>,
    n_values: u64,
    digest: String,
}

impl Checkpoint {
    pub fn new(spec: NetworkSpec, params: ParamSet, meta: BTreeMap<String, String>) -> Result<Self> {
        spec.validate()?;
        params.check_matches(&spec)?;
        Ok(Self { spec, params, meta })
    }

    pub fn n_blocks(&self) -> usize {
        self.spec.n_blocks()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::with_capacity(self.params.n_params() * 8);
        for block in &self.params.blocks {
            for v in block.values() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            spec: self.spec.clone(),
            meta: self.meta.clone(),
            n_values: self.params.n_params() as u64,
            digest: hex::encode(Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREAMBLE_LEN as usize + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: u64, message: &str| Error::Format {
            offset,
            message: message.to_string(),
        };
        if bytes.len() < PREAMBLE_LEN as usize {
            return Err(fail(bytes.len() as u64, "truncated preamble"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(fail(0, "bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version == 0 || version > FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = PREAMBLE_LEN
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| fail(bytes.len() as u64, "truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE_LEN as usize..header_end as usize])
            .map_err(|e| fail(PREAMBLE_LEN, &format!("bad header json: {e}")))?;
        header
            .spec
            .validate()
            .map_err(|e| fail(PREAMBLE_LEN, &e.to_string()))?;
        let n_values = header.spec.n_params() as u64;
        if header.n_values != n_values {
            return Err(fail(
                PREAMBLE_LEN,
                &format!("header claims {} values, spec needs {n_values}", header.n_values),
            ));
        }
        let payload_end = header_end + n_values * 8;
        if (bytes.len() as u64) < payload_end {
            return Err(fail(bytes.len() as u64, "truncated payload"));
        }
        if (bytes.len() as u64) > payload_end {
            return Err(fail(payload_end, "trailing bytes after payload"));
        }
        let payload = &bytes[header_end as usize..];
        if hex::encode(Sha256::digest(payload)) != header.digest {
            return Err(fail(header_end, "payload digest mismatch"));
        }

        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut blocks = Vec::with_capacity(header.spec.n_blocks());
        for b in 0..header.spec.n_blocks() {
            let (o, i) = header.spec.block_shape(b);
            let w: Vec<f64> = values.by_ref().take(o * i).collect();
            let bias: Vec<f64> = values.by_ref().take(o).collect();
            blocks.push(Block {
                weights: Tensor2D::from_vec(o, i, w)
                    .map_err(|e| fail(header_end, &e.to_string()))?,
                bias,
            });
        }
        Checkpoint::new(header.spec, ParamSet { blocks }, header.meta)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Copies the checkpoint's lower blocks and re-initializes the top `k`.
///
/// The classifier is rebuilt for `n_classes` outputs. Re-initialized blocks
/// are identical to the same blocks of `init_params(target_spec, seed)`.
pub fn reinit_top_layers(
    checkpoint: &Checkpoint,
    k: usize,
    n_classes: usize,
    seed: u64,
) -> Result<ParamSet> {
    let n_blocks = checkpoint.n_blocks();
    if k == 0 {
        return Err(Error::InvalidArgument(
            "at least the final classifier must be re-initialized (k >= 1)".into(),
        ));
    }
    if k > n_blocks {
        return Err(Error::InvalidArgument(format!(
            "cannot re-initialize {k} of {n_blocks} blocks"
        )));
    }
    if n_classes == 0 {
        return Err(Error::InvalidArgument("n_classes must be >= 1".into()));
    }
    let target = checkpoint.spec.with_classes(n_classes);
    let keep = n_blocks - k;
    let blocks = (0..n_blocks)
        .map(|b| {
            if b < keep {
                checkpoint.params.blocks[b].clone()
            } else {
                let (o, i) = target.block_shape(b);
                Block::he_init(o, i, seed, b)
            }
        })
        .collect();
    Ok(ParamSet { blocks })
}

/// The non-binary fine-tuning hyperparameters for one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTunePlan {
    /// Number of top blocks re-initialized (1 = classifier only).
    pub reinit_count: usize,
    pub high_lr: f64,
    pub low_lr: f64,
    /// Blocks `[0, low_layer_count)` train at `low_lr`.
    pub low_layer_count: usize,
    /// Overrides the final block's rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fc_lr: Option<f64>,
    /// Blocks `[0, l2sp_layer_count)` decay toward their pre-trained values.
    pub l2sp_layer_count: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl FineTunePlan {
    /// Classifier-only re-initialization, one learning rate, plain L2 with `beta`.
    pub fn uniform(lr: f64, beta: f64) -> Self {
        Self {
            reinit_count: 1,
            high_lr: lr,
            low_lr: lr,
            low_layer_count: 0,
            fc_lr: None,
            l2sp_layer_count: 0,
            alpha: 0.0,
            beta,
        }
    }

    /// Stable 64-bit identity of the plan's contents.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("plan serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

impl fmt::Display for FineTunePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "k={} lr={}/{}x{}",
            self.reinit_count, self.high_lr, self.low_lr, self.low_layer_count
        )?;
        if let Some(fc) = self.fc_lr {
            write!(f, " fc={fc}")?;
        }
        write!(
            f,
            " l2sp={} a={} b={}",
            self.l2sp_layer_count, self.alpha, self.beta
        )
    }
}

/// One violated plan invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanViolation {
    pub fields: Vec<&'static str>,
    pub message: String,
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.fields.join(", "), self.message)
    }
}

/// Reports every invariant `plan` violates on a network of `n_blocks`.
pub fn validate_plan(plan: &FineTunePlan, n_blocks: usize) -> Vec<PlanViolation> {
    let mut out = Vec::new();
    let mut push = |fields: Vec<&'static str>, message: String| out.push(PlanViolation { fields, message });
    let k = plan.reinit_count;
    if k == 0 {
        push(vec!["reinit_count"], "must be >= 1 (the classifier is always re-initialized)".into());
    }
    if k > n_blocks {
        push(vec!["reinit_count"], format!("{k} exceeds the {n_blocks} blocks"));
    }
    if !(plan.high_lr.is_finite() && plan.high_lr > 0.0) {
        push(vec!["high_lr"], format!("must be finite and > 0, got {}", plan.high_lr));
    }
    if !(plan.low_lr.is_finite() && plan.low_lr >= 0.0) {
        push(vec!["low_lr"], format!("must be finite and >= 0, got {}", plan.low_lr));
    }
    if let Some(fc) = plan.fc_lr {
        if !(fc.is_finite() && fc > 0.0) {
            push(vec!["fc_lr"], format!("must be finite and > 0, got {fc}"));
        }
    }
    for (name, v) in [("alpha", plan.alpha), ("beta", plan.beta)] {
        if !(v.is_finite() && v >= 0.0) {
            push(vec![name], format!("must be finite and >= 0, got {v}"));
        }
    }
    let transferred = n_blocks.saturating_sub(k);
    if plan.low_layer_count > transferred {
        push(
            vec!["low_layer_count", "reinit_count"],
            format!(
                "low-rate blocks [0, {}) overlap re-initialized blocks [{transferred}, {n_blocks})",
                plan.low_layer_count
            ),
        );
    }
    if plan.l2sp_layer_count > transferred {
        push(
            vec!["l2sp_layer_count", "reinit_count"],
            format!(
                "anchored blocks [0, {}) extend past the transferred blocks [0, {transferred})",
                plan.l2sp_layer_count
            ),
        );
    }
    out
}

/// Per-block learning rates, ordered by block index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrMap(pub Vec<f64>);

impl LrMap {
    pub fn uniform(n_blocks: usize, lr: f64) -> Self {
        Self(vec![lr; n_blocks])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rates(&self) -> &[f64] {
        &self.0
    }

    /// Lowest block with a non-zero rate, if any.
    pub fn lowest_trainable(&self) -> Option<usize> {
        self.0.iter().position(|&r| r != 0.0)
    }
}

pub fn build_lr_map(plan: &FineTunePlan, n_blocks: usize) -> Result<LrMap> {
    let violations = validate_plan(plan, n_blocks);
    if !violations.is_empty() {
        return Err(Error::InvalidPlan(
            violations.iter().map(ToString::to_string).collect(),
        ));
    }
    let mut rates: Vec<f64> = (0..n_blocks)
        .map(|b| {
            if b < plan.low_layer_count {
                plan.low_lr
            } else {
                plan.high_lr
            }
        })
        .collect();
    if let Some(fc) = plan.fc_lr {
        rates[n_blocks - 1] = fc;
    }
    Ok(LrMap(rates))
}
