//! Toy audio-visual language model: modality compressors, the adapted LM and
//! the mask decoder, plus decoding and checkpoint I/O.

mod compressor;
mod lm;
pub mod vocab;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use compressor::QueryCompressor;
pub use lm::{sinusoidal_positions, Block, LmOutput, ToyTransformerLM};
pub use vocab::{TokenId, Vocabulary, MASK_GROUPS, MASK_PER_GROUP, MASK_TOKENS};

use crate::error::{contract, Error, Result};
use crate::lora::{RouterTrace, DEFAULT_HEADS, DEFAULT_RANK};
use crate::mask_decoder::MaskDecoder;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub const CHECKPOINT_FORMAT: &str = "avcoop-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub blocks: usize,
    pub mlp_hidden: usize,
    pub rank: usize,
    pub n_heads: usize,
    /// Number tokens in the vocabulary (timesteps, coordinates, answers).
    pub num_tokens: usize,
    pub frames: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub k_visual: usize,
    pub k_audio: usize,
    pub key_dim: usize,
    pub max_len: usize,
    /// Pixel feature width of the mask decoder pyramid.
    pub mask_feat_dim: usize,
    pub categories: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            blocks: 2,
            mlp_hidden: 64,
            rank: DEFAULT_RANK,
            n_heads: DEFAULT_HEADS,
            num_tokens: 8,
            frames: 4,
            visual_dim: 8,
            audio_dim: 8,
            k_visual: 4,
            k_audio: 4,
            key_dim: 16,
            max_len: 64,
            mask_feat_dim: 8,
            categories: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("mlp_hidden", self.mlp_hidden),
            ("rank", self.rank),
            ("n_heads", self.n_heads),
            ("frames", self.frames),
            ("visual_dim", self.visual_dim),
            ("audio_dim", self.audio_dim),
            ("k_visual", self.k_visual),
            ("k_audio", self.k_audio),
            ("key_dim", self.key_dim),
            ("mask_feat_dim", self.mask_feat_dim),
            ("categories", self.categories),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be >= 1")));
        }
        if self.max_len <= self.prefix_len() {
            return Err(Error::Config(format!(
                "max_len {} leaves no room for text after {} modality tokens",
                self.max_len,
                self.prefix_len()
            )));
        }
        Ok(())
    }

    /// Modality tokens ahead of the text, `T*K_v + T*K_a`.
    pub fn prefix_len(&self) -> usize {
        self.frames * (self.k_visual + self.k_audio)
    }
}

/// Per-frame feature sequences, `visual: [T x L_v x D_v]`, `audio: [T x L_a x D_a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityFeatures {
    pub visual: Tensor,
    pub audio: Tensor,
}

impl ModalityFeatures {
    pub fn new(visual: Tensor, audio: Tensor) -> Result<Self> {
        let (v, a) = (visual.shape(), audio.shape());
        if v.len() != 3 || a.len() != 3 || v[0] != a[0] {
            return Err(Error::Shape { op: "modality features", lhs: v.to_vec(), rhs: a.to_vec() });
        }
        if !visual.is_finite() || !audio.is_finite() {
            return Err(Error::NonFinite("modality features".into()));
        }
        Ok(Self { visual, audio })
    }

    pub fn frames(&self) -> usize {
        self.visual.shape()[0]
    }
}

/// `H_0 = [H_v; H_a; H_t]` along the token axis.
pub fn assemble_input(tape: &mut Tape, hv: Var, ha: Var, ht: Option<Var>) -> Result<Var> {
    let mut parts = vec![hv, ha];
    parts.extend(ht);
    let width = tape.shape(hv).get(1).copied();
    for &p in &parts {
        let s = tape.shape(p);
        if s.len() != 2 || Some(s[1]) != width {
            return Err(Error::Shape { op: "assemble_input", lhs: tape.shape(hv).to_vec(), rhs: s.to_vec() });
        }
    }
    tape.concat_rows(&parts)
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Hidden states at the six mask-token positions, grouped by token id:
/// `[group 0 rows; group 1 rows]`, each `[3 x h]`.
///
/// `ids` is aligned with the last `ids.len()` rows of `hidden`.
pub fn extract_mask_embeddings(tape: &mut Tape, hidden: Var, ids: &[TokenId], vocab: &Vocabulary) -> Result<[Var; MASK_GROUPS]> {
    let rows = tape.shape(hidden)[0];
    if ids.len() > rows {
        return Err(Error::Shape { op: "extract_mask_embeddings", lhs: vec![rows], rhs: vec![ids.len()] });
    }
    let offset = rows - ids.len();
    let mut positions: BTreeMap<TokenId, Vec<usize>> = BTreeMap::new();
    for (p, &id) in ids.iter().enumerate() {
        if vocab.mask_slot(id).is_some() {
            positions.entry(id).or_default().push(offset + p);
        }
    }
    let mask_ids = vocab.mask_ids();
    let missing: Vec<usize> = mask_ids.iter().copied().filter(|id| !positions.contains_key(id)).collect();
    let duplicated: Vec<usize> = positions.iter().filter(|(_, p)| p.len() > 1).map(|(&id, _)| id).collect();
    if !missing.is_empty() || !duplicated.is_empty() {
        return Err(Error::MaskTokens { missing, duplicated });
    }
    let mut out = Vec::with_capacity(MASK_GROUPS);
    for g in 0..MASK_GROUPS {
        let rows: Vec<usize> = (0..MASK_PER_GROUP).map(|s| positions[&vocab.mask(g, s)][0]).collect();
        out.push(tape.gather_rows(hidden, &rows)?);
    }
    Ok([out[0], out[1]])
}

/// One parameter in a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub values: Vec<f64>,
}

/// JSON checkpoint: the model config plus every parameter by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: Vec<NamedArray>,
}

/// The full model. Parameters live in `params`; the component structs hold
/// ids into it.
#[derive(Debug, Clone)]
pub struct AvModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub lm: ToyTransformerLM,
    pub visual: QueryCompressor,
    pub audio: QueryCompressor,
    pub decoder: MaskDecoder,
    tracing: bool,
}

impl AvModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = Vocabulary::new(config.num_tokens);
        let mut params = ParamStore::new();
        let c = &config;
        let lm = ToyTransformerLM::new(
            &mut params,
            vocab.size(),
            c.hidden,
            c.blocks,
            c.mlp_hidden,
            c.max_len,
            c.rank,
            c.n_heads,
            &mut rng,
        )?;
        let visual = QueryCompressor::new(&mut params, "visual", c.visual_dim, c.key_dim, c.hidden, c.k_visual, &mut rng);
        let audio = QueryCompressor::new(&mut params, "audio", c.audio_dim, c.key_dim, c.hidden, c.k_audio, &mut rng);
        let decoder = MaskDecoder::new(&mut params, c.hidden, c.mask_feat_dim, c.categories, &mut rng)?;
        Ok(Self { config, vocab, params, lm, visual, audio, decoder, tracing: false })
    }

    pub fn set_tracing(&mut self, on: bool) {
        self.tracing = on;
    }

    pub fn tracing(&self) -> bool {
        self.tracing
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.params.trainable().collect()
    }

    /// Compressed modality tokens `(H_v [T*K_v x h], H_a [T*K_a x h])`.
    pub fn encode_modalities(&self, tape: &mut Tape, feats: &ModalityFeatures) -> Result<(Var, Var)> {
        if feats.frames() != self.config.frames {
            return Err(Error::Shape { op: "frames", lhs: vec![feats.frames()], rhs: vec![self.config.frames] });
        }
        let run = |tape: &mut Tape, comp: &QueryCompressor, x: &Tensor| -> Result<Var> {
            let s = x.shape();
            let flat = tape.constant(x.clone().reshape(&[s[0] * s[1], s[2]])?);
            let frames = (0..s[0])
                .map(|t| {
                    let frame = tape.slice_rows(flat, t * s[1], s[1])?;
                    comp.compress(tape, &self.params, frame)
                })
                .collect::<Result<Vec<_>>>()?;
            tape.concat_rows(&frames)
        };
        Ok((run(tape, &self.visual, &feats.visual)?, run(tape, &self.audio, &feats.audio)?))
    }

    /// `H_0` for a sample with text `ids`.
    pub fn embed_inputs(&self, tape: &mut Tape, feats: &ModalityFeatures, ids: &[TokenId]) -> Result<Var> {
        let (hv, ha) = self.encode_modalities(tape, feats)?;
        let ht = if ids.is_empty() { None } else { Some(self.lm.embed(tape, &self.params, ids)?) };
        assemble_input(tape, hv, ha, ht)
    }

    pub fn forward_lm(&self, tape: &mut Tape, h0: Var) -> Result<LmOutput> {
        self.lm.forward(tape, &self.params, h0, true)
    }

    /// The same network with every adapter bypass removed.
    pub fn forward_base(&self, tape: &mut Tape, h0: Var) -> Result<LmOutput> {
        self.lm.forward(tape, &self.params, h0, false)
    }

    pub fn forward(&self, tape: &mut Tape, feats: &ModalityFeatures, ids: &[TokenId]) -> Result<LmOutput> {
        let h0 = self.embed_inputs(tape, feats, ids)?;
        self.forward_lm(tape, h0)
    }

    /// Greedy continuation of `prompt`; stops after EOS or `max_new` tokens.
    /// Returns only the generated tokens.
    pub fn greedy_decode(&self, feats: &ModalityFeatures, prompt: &[TokenId], max_new: usize) -> Result<Vec<TokenId>> {
        if max_new == 0 {
            return Err(Error::Config("max_len must be >= 1".into()));
        }
        let mut ids = prompt.to_vec();
        let mut out = Vec::new();
        let room = self.config.max_len - self.config.prefix_len();
        while out.len() < max_new && ids.len() < room {
            let mut tape = Tape::new();
            let o = self.forward(&mut tape, feats, &ids)?;
            let logits = tape.value(o.logits);
            let next = argmax(logits.row(logits.rows() - 1));
            ids.push(next);
            out.push(next);
            if next == Vocabulary::EOS {
                break;
            }
        }
        Ok(out)
    }

    /// Appends the route rows of one traced forward to `trace`.
    pub fn record_trace(&self, tape: &Tape, out: &LmOutput, sample_index: usize, trace: &mut RouterTrace) -> Result<()> {
        if !self.tracing {
            return Err(contract("router tracing is disabled"));
        }
        for (layer_id, &s) in out.scores.iter().enumerate() {
            trace.record(sample_index, layer_id, tape.value(s))?;
        }
        Ok(())
    }

    /// Runs each `(features, text)` pair and collects every layer's route rows.
    pub fn collect_trace(&self, batch: &[(&ModalityFeatures, &[TokenId])], task_tag: &str) -> Result<RouterTrace> {
        if !self.tracing {
            return Err(contract("router tracing is disabled"));
        }
        let mut trace = RouterTrace::new(task_tag, self.config.n_heads);
        for (i, (feats, ids)) in batch.iter().enumerate() {
            let mut tape = Tape::new();
            let out = self.forward(&mut tape, feats, ids)?;
            self.record_trace(&tape, &out, i, &mut trace)?;
        }
        Ok(trace)
    }

    pub fn drop_heads(&mut self, heads: &[usize]) -> Result<()> {
        for layer in self.lm.layers_mut() {
            layer.drop_heads(heads)?;
        }
        Ok(())
    }

    pub fn reset_drops(&mut self) {
        for layer in self.lm.layers_mut() {
            layer.reset_drops();
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config,
            params: self
                .params
                .iter()
                .map(|(_, p)| NamedArray {
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    frozen: p.frozen,
                    values: p.tensor.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format {} v{}", ckpt.format, ckpt.version)));
        }
        let mut model = Self::new(ckpt.config, 0)?;
        if ckpt.params.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                ckpt.params.len()
            )));
        }
        for arr in &ckpt.params {
            let id = model
                .params
                .find(&arr.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", arr.name)))?;
            let p = model.params.get(id);
            if p.tensor.shape() != arr.shape.as_slice() || p.frozen != arr.frozen {
                return Err(Error::Checkpoint(format!("parameter {} does not match the config", arr.name)));
            }
            model.params.set_values(id, &arr.values)?;
        }
        Ok(model)
    }

    pub fn save_json(&self) -> Result<String> {
        serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn load_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&ckpt)
    }
}
