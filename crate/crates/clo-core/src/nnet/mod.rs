//! A tiny decoder-only transformer with hand-rolled reverse-mode
//! differentiation, all in f64.
//!
//! Architecture: learned token + position embeddings, pre-norm blocks
//! (RMSNorm, causal multi-head attention, GELU MLP), a final RMSNorm, and an
//! untied output head. No biases. The attention projections q/k/v/o form
//! their own parameter group so they can be trained in isolation.

mod forward;
mod generate;
mod graph;

pub use forward::ScoredSequence;
pub use generate::{generate, Decode};
pub use graph::{sigmoid, softplus, Graph, NodeId};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthlang::tokens;

/// Model shape and initialization. `max_seq_len` bounds `|prompt| +
/// |response|`; the two framing tokens around the prompt get their own
/// positions on top of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub init_seed: u64,
    pub init_scale: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < tokens::NUM_SPECIALS as usize {
            return Err(Error::Config(format!(
                "vocab_size must be >= {} (ids 0..{} are reserved), got {}",
                tokens::NUM_SPECIALS,
                tokens::NUM_SPECIALS,
                self.vocab_size
            )));
        }
        if self.d_model == 0 || self.n_heads == 0 {
            return Err(Error::Config("d_model and n_heads must be >= 1".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be >= 2".into()));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::Config(format!(
                "init_scale must be finite and >= 0, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Total positions a framed sequence may occupy (BOS + prompt + SEP +
    /// response).
    pub(crate) fn position_capacity(&self) -> usize {
        self.max_seq_len + 2
    }
}

/// Row-major matrix, `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = W x  (W: [rows, cols], x: [cols], y: [rows])
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = 0.0;
            for c in 0..self.cols {
                acc += row[c] * x[c];
            }
            *out = acc;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerParams {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub o: Mat,
    pub w1: Mat,
    pub w2: Mat,
    pub norm1: Vec<f64>,
    pub norm2: Vec<f64>,
}

/// The full parameter set, mirrored by gradient and optimizer-moment
/// stores. Canonical names follow the struct layout: `embed.tok`,
/// `embed.pos`, `layer{i}.attn.{q,k,v,o}`, `layer{i}.mlp.{w1,w2}`,
/// `layer{i}.norm{1,2}`, `final_norm`, `head`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params {
    pub tok: Mat,
    pub pos: Mat,
    pub layers: Vec<LayerParams>,
    pub final_norm: Vec<f64>,
    pub head: Mat,
}

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let hidden = 4 * d;
        Params {
            tok: Mat::zeros(config.vocab_size, d),
            pos: Mat::zeros(config.position_capacity(), d),
            layers: (0..config.n_layers)
                .map(|_| LayerParams {
                    q: Mat::zeros(d, d),
                    k: Mat::zeros(d, d),
                    v: Mat::zeros(d, d),
                    o: Mat::zeros(d, d),
                    w1: Mat::zeros(hidden, d),
                    w2: Mat::zeros(d, hidden),
                    norm1: vec![0.0; d],
                    norm2: vec![0.0; d],
                })
                .collect(),
            final_norm: vec![0.0; d],
            head: Mat::zeros(config.vocab_size, d),
        }
    }

    /// Canonical parameter names, in storage order.
    pub fn names(n_layers: usize) -> Vec<String> {
        let mut names = vec!["embed.tok".to_string(), "embed.pos".to_string()];
        for i in 0..n_layers {
            for part in ["attn.q", "attn.k", "attn.v", "attn.o", "mlp.w1", "mlp.w2", "norm1", "norm2"] {
                names.push(format!("layer{i}.{part}"));
            }
        }
        names.push("final_norm".to_string());
        names.push("head".to_string());
        names
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        match name {
            "embed.tok" => return Some(&self.tok.data),
            "embed.pos" => return Some(&self.pos.data),
            "final_norm" => return Some(&self.final_norm),
            "head" => return Some(&self.head.data),
            _ => {}
        }
        let rest = name.strip_prefix("layer")?;
        let dot = rest.find('.')?;
        let idx: usize = rest[..dot].parse().ok()?;
        let layer = self.layers.get(idx)?;
        match &rest[dot + 1..] {
            "attn.q" => Some(&layer.q.data),
            "attn.k" => Some(&layer.k.data),
            "attn.v" => Some(&layer.v.data),
            "attn.o" => Some(&layer.o.data),
            "mlp.w1" => Some(&layer.w1.data),
            "mlp.w2" => Some(&layer.w2.data),
            "norm1" => Some(&layer.norm1),
            "norm2" => Some(&layer.norm2),
            _ => None,
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        match name {
            "embed.tok" => return Some(&mut self.tok.data),
            "embed.pos" => return Some(&mut self.pos.data),
            "final_norm" => return Some(&mut self.final_norm),
            "head" => return Some(&mut self.head.data),
            _ => {}
        }
        let rest = name.strip_prefix("layer")?;
        let dot = rest.find('.')?;
        let idx: usize = rest[..dot].parse().ok()?;
        let layer = self.layers.get_mut(idx)?;
        match &rest[dot + 1..] {
            "attn.q" => Some(&mut layer.q.data),
            "attn.k" => Some(&mut layer.k.data),
            "attn.v" => Some(&mut layer.v.data),
            "attn.o" => Some(&mut layer.o.data),
            "mlp.w1" => Some(&mut layer.w1.data),
            "mlp.w2" => Some(&mut layer.w2.data),
            "norm1" => Some(&mut layer.norm1),
            "norm2" => Some(&mut layer.norm2),
            _ => None,
        }
    }

    pub fn num_values(&self) -> usize {
        Params::names(self.layers.len())
            .iter()
            .map(|n| self.get(n).unwrap().len())
            .sum()
    }
}

/// Which update group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Attention projections q/k/v/o.
    Attention,
    /// Embeddings, MLPs, norms, output head.
    Other,
}

/// Classifies a canonical parameter name.
pub fn classify_param(name: &str) -> ParamGroup {
    if name.contains(".attn.") {
        ParamGroup::Attention
    } else {
        ParamGroup::Other
    }
}

/// The trainable policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    config: ModelConfig,
    pub(crate) params: Params,
    step: u64,
}

impl PolicyModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn param_names(&self) -> Vec<String> {
        Params::names(self.config.n_layers)
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.params.get_mut(name)
    }

    pub fn num_params(&self) -> usize {
        self.params.num_values()
    }

    /// Log-probability of `response` conditioned on `prompt`, summed over
    /// the response tokens. Prompt and framing positions are excluded.
    pub fn sequence_logprob(&self, prompt: &[u32], response: &[u32]) -> Result<ScoredSequence> {
        forward::sequence_logprob(self, prompt, response)
    }

    /// Logits at every position of a raw framed sequence. Diagnostic
    /// surface, used by causality checks.
    pub fn full_logits(&self, tokens: &[u32]) -> Result<Vec<Vec<f64>>> {
        forward::full_logits(self, tokens)
    }

    /// Teacher-forced argmax predictions for each response position.
    pub fn response_predictions(&self, prompt: &[u32], response: &[u32]) -> Result<Vec<u32>> {
        forward::response_predictions(self, prompt, response)
    }
}

/// Frozen copy of a policy; scores never change once taken.
#[derive(Debug, Clone)]
pub struct ReferenceSnapshot {
    inner: PolicyModel,
}

impl ReferenceSnapshot {
    pub fn config(&self) -> &ModelConfig {
        self.inner.config()
    }

    pub fn sequence_logprob(&self, prompt: &[u32], response: &[u32]) -> Result<ScoredSequence> {
        self.inner.sequence_logprob(prompt, response)
    }

    /// Read-only view of the frozen policy.
    pub fn as_model(&self) -> &PolicyModel {
        &self.inner
    }
}

/// Initializes a model with Gaussian weights of standard deviation
/// `init_scale` drawn from `init_seed`. Norm gains start at 1.
pub fn init_model(config: &ModelConfig) -> Result<PolicyModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut params = Params::zeros(config);
    let scale = config.init_scale;
    let fill = |data: &mut [f64], rng: &mut ChaCha8Rng| {
        for x in data.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *x = z * scale;
        }
    };
    fill(&mut params.tok.data, &mut rng);
    fill(&mut params.pos.data, &mut rng);
    for layer in params.layers.iter_mut() {
        fill(&mut layer.q.data, &mut rng);
        fill(&mut layer.k.data, &mut rng);
        fill(&mut layer.v.data, &mut rng);
        fill(&mut layer.o.data, &mut rng);
        fill(&mut layer.w1.data, &mut rng);
        fill(&mut layer.w2.data, &mut rng);
        layer.norm1.fill(1.0);
        layer.norm2.fill(1.0);
    }
    params.final_norm.fill(1.0);
    fill(&mut params.head.data, &mut rng);
    Ok(PolicyModel {
        config: config.clone(),
        params,
        step: 0,
    })
}

/// Deep-copies the policy into an immutable reference.
pub fn snapshot_reference(model: &PolicyModel) -> ReferenceSnapshot {
    ReferenceSnapshot {
        inner: model.clone(),
    }
}

/// Full classification of every parameter name.
pub fn parameter_groups(model: &PolicyModel) -> Vec<(String, ParamGroup)> {
    model
        .param_names()
        .into_iter()
        .map(|n| {
            let g = classify_param(&n);
            (n, g)
        })
        .collect()
}

/// Per-parameter gradients, same layout and names as the model parameters.
#[derive(Debug, Clone)]
pub struct GradStore {
    pub(crate) params: Params,
    n_layers: usize,
}

impl GradStore {
    pub fn zeros(config: &ModelConfig) -> Self {
        GradStore {
            params: Params::zeros(config),
            n_layers: config.n_layers,
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.params.get_mut(name)
    }

    pub fn set(&mut self, name: &str, index: usize, value: f64) {
        self.params.get_mut(name).expect("unknown parameter")[index] = value;
    }

    pub fn names(&self) -> Vec<String> {
        Params::names(self.n_layers)
    }

    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0;
        for name in self.names() {
            for &g in self.params.get(&name).unwrap() {
                acc += g * g;
            }
        }
        acc.sqrt()
    }

    pub(crate) fn scale_all(&mut self, factor: f64) {
        for name in self.names() {
            for g in self.params.get_mut(&name).unwrap() {
                *g *= factor;
            }
        }
    }
}

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    schema_version: u32,
    config: ModelConfig,
    step: u64,
}

/// Writes a checkpoint: a JSON header line, then one `name<TAB>hex` line per
/// parameter with the raw little-endian f64 bytes. Loading reproduces the
/// parameters bit for bit.
pub fn save_checkpoint(path: &std::path::Path, model: &PolicyModel) -> Result<()> {
    use std::io::Write;
    let header = CheckpointHeader {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        config: model.config.clone(),
        step: model.step,
    };
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&header)?);
    out.push('\n');
    for name in model.param_names() {
        let data = model.param(&name).unwrap();
        out.push_str(&name);
        out.push('\t');
        for v in data {
            for b in v.to_le_bytes() {
                out.push_str(&format!("{b:02x}"));
            }
        }
        out.push('\n');
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<PolicyModel> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Integrity("checkpoint file is empty".into()))?;
    let header: CheckpointHeader = serde_json::from_str(header_line)
        .map_err(|e| Error::Integrity(format!("malformed checkpoint header: {e}")))?;
    if header.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: header.schema_version,
            expected: CHECKPOINT_SCHEMA_VERSION,
        });
    }
    header.config.validate()?;
    let mut model = PolicyModel {
        params: Params::zeros(&header.config),
        config: header.config,
        step: header.step,
    };
    let mut filled = std::collections::BTreeSet::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let (name, hex) = line
            .split_once('\t')
            .ok_or_else(|| Error::Integrity("malformed checkpoint line".into()))?;
        let slot = model
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Integrity(format!("unknown parameter {name}")))?;
        if hex.len() != slot.len() * 16 {
            return Err(Error::Integrity(format!(
                "parameter {name}: expected {} f64 values, got {} hex chars",
                slot.len(),
                hex.len()
            )));
        }
        for (i, v) in slot.iter_mut().enumerate() {
            let mut bytes = [0u8; 8];
            for (j, b) in bytes.iter_mut().enumerate() {
                let s = &hex[i * 16 + j * 2..i * 16 + j * 2 + 2];
                *b = u8::from_str_radix(s, 16)
                    .map_err(|_| Error::Integrity(format!("bad hex in parameter {name}")))?;
            }
            *v = f64::from_le_bytes(bytes);
        }
        filled.insert(name.to_string());
    }
    for name in model.param_names() {
        if !filled.contains(&name) {
            return Err(Error::Integrity(format!("missing parameter {name}")));
        }
    }
    Ok(model)
}
