//! Toy transformer bi-encoder.
//!
//! A post-layer-norm transformer with learned absolute positions. Dense
//! embeddings are the final hidden state of the `[CLS]` token; sparse term
//! weights max-pool `log(1 + relu(logit))` of the vocabulary head over the
//! sequence. [`RetroMaeDecoder`] is the single-layer reconstruction decoder
//! used for retrieval-oriented pretraining.
//!
//! Batches are packed: real tokens of every sequence sit in contiguous rows
//! and attention never crosses sequence boundaries, so padding cannot leak
//! into any embedding.

pub mod checkpoint;
pub mod masking;
pub mod vocab;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::par;
use crate::retrieval::SparseVector;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

pub use checkpoint::{Checkpoint, Params};
pub use masking::{apply_mask, MaskSpec, MaskedSequence};
pub use vocab::{Encoding, TokenBatch, Vocab};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const FORMAT_VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Cls,
    MaxSparse,
}

impl Pooling {
    fn as_str(self) -> &'static str {
        match self {
            Pooling::Cls => "cls",
            Pooling::MaxSparse => "max_sparse",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub hidden: usize,
    pub intermediate: usize,
    pub heads: usize,
    pub max_seq: usize,
    pub pooling: Pooling,
    /// Whether the model carries a hidden→vocabulary head (sparse mode, MLM).
    pub lm_head: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 2048,
            layers: 2,
            hidden: 64,
            intermediate: 256,
            heads: 4,
            max_seq: 512,
            pooling: Pooling::Cls,
            lm_head: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden {} must be divisible by heads {}",
                self.hidden, self.heads
            ));
        }
        if self.max_seq < 2 {
            return fail(format!("max_seq must be at least 2, got {}", self.max_seq));
        }
        if self.vocab_size < 5 {
            return fail("vocab_size must cover the five special tokens".into());
        }
        if self.hidden == 0 || self.intermediate == 0 {
            return fail("hidden and intermediate sizes must be positive".into());
        }
        if self.pooling == Pooling::MaxSparse && !self.lm_head {
            return fail("max_sparse pooling needs an LM head".into());
        }
        Ok(())
    }

    pub fn to_meta(&self) -> Vec<(String, String)> {
        [
            ("format", FORMAT_VERSION.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("layers", self.layers.to_string()),
            ("hidden", self.hidden.to_string()),
            ("intermediate", self.intermediate.to_string()),
            ("heads", self.heads.to_string()),
            ("max_seq", self.max_seq.to_string()),
            ("pooling", self.pooling.as_str().to_string()),
            ("lm_head", self.lm_head.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_meta(meta: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| {
            meta.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Format(format!("checkpoint header lacks {k}")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("checkpoint header {k} is not a count")))
        };
        if get("format")? != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint format {}",
                get("format")?
            )));
        }
        let pooling = match get("pooling")? {
            "cls" => Pooling::Cls,
            "max_sparse" => Pooling::MaxSparse,
            other => return Err(Error::Format(format!("unknown pooling {other}"))),
        };
        let cfg = EncoderConfig {
            vocab_size: num("vocab_size")?,
            layers: num("layers")?,
            hidden: num("hidden")?,
            intermediate: num("intermediate")?,
            heads: num("heads")?,
            max_seq: num("max_seq")?,
            pooling,
            lm_head: get("lm_head")? == "true",
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let (h, v) = (self.hidden, self.vocab_size);
        let mut out = vec![
            ("embeddings.token".to_string(), vec![v, h], Init::Normal),
            ("embeddings.position".to_string(), vec![self.max_seq, h], Init::Normal),
            ("embeddings.norm.gamma".to_string(), vec![h], Init::Ones),
            ("embeddings.norm.beta".to_string(), vec![h], Init::Zeros),
        ];
        for l in 0..self.layers {
            out.extend(block_layout(&format!("layers.{l}."), h, self.intermediate));
        }
        if self.lm_head {
            out.push(("lm_head.weight".to_string(), vec![h, v], Init::Normal));
            out.push(("lm_head.bias".to_string(), vec![v], Init::Zeros));
        }
        out
    }
}

#[derive(Clone, Copy)]
enum Init {
    Normal,
    Ones,
    Zeros,
}

fn block_layout(prefix: &str, h: usize, inter: usize) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    for m in ["q", "k", "v", "o"] {
        out.push((format!("{prefix}attn.{m}.weight"), vec![h, h], Init::Normal));
        out.push((format!("{prefix}attn.{m}.bias"), vec![h], Init::Zeros));
    }
    out.push((format!("{prefix}attn_norm.gamma"), vec![h], Init::Ones));
    out.push((format!("{prefix}attn_norm.beta"), vec![h], Init::Zeros));
    out.push((format!("{prefix}ffn.up.weight"), vec![h, inter], Init::Normal));
    out.push((format!("{prefix}ffn.up.bias"), vec![inter], Init::Zeros));
    out.push((format!("{prefix}ffn.down.weight"), vec![inter, h], Init::Normal));
    out.push((format!("{prefix}ffn.down.bias"), vec![h], Init::Zeros));
    out.push((format!("{prefix}ffn_norm.gamma"), vec![h], Init::Ones));
    out.push((format!("{prefix}ffn_norm.beta"), vec![h], Init::Zeros));
    out
}

fn init_params(mut layout: Vec<(String, Vec<usize>, Init)>, seed: u64) -> Params {
    layout.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut params = Params::new();
    for (name, shape, init) in layout {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
            Init::Ones => vec![1.0; n],
            Init::Zeros => vec![0.0; n],
        };
        params.insert(name, Tensor::new(shape, data).expect("layout shape"));
    }
    params
}

fn check_layout(params: &Params, layout: &[(String, Vec<usize>, Init)]) -> Result<()> {
    let mut bad = Vec::new();
    for (name, shape, _) in layout {
        match params.get(name) {
            None => bad.push(format!("missing {name}")),
            Some(t) if t.shape() != &shape[..] => {
                bad.push(format!("{name}: shape {:?}, expected {shape:?}", t.shape()))
            }
            _ => {}
        }
    }
    if params.len() != layout.len() {
        bad.push(format!("{} parameters, expected {}", params.len(), layout.len()));
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "parameters do not match config: {}",
            bad.join("; ")
        )))
    }
}

/// Real tokens of a batch laid out back to back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packed {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    /// `(first row, length)` per sequence.
    pub segments: Vec<(usize, usize)>,
}

impl Packed {
    pub fn from_batch(batch: &TokenBatch, max_seq: usize) -> Result<Self> {
        let mut p = Packed {
            ids: Vec::new(),
            positions: Vec::new(),
            segments: Vec::with_capacity(batch.len()),
        };
        for (ids, mask) in batch.ids.iter().zip(&batch.mask) {
            if mask.len() != ids.len() {
                return Err(Error::shape("encode", "mask and ids differ in length"));
            }
            let start = p.ids.len();
            for (pos, (&id, &m)) in ids.iter().zip(mask).enumerate() {
                if m {
                    if pos >= max_seq {
                        return Err(Error::Length {
                            len: pos + 1,
                            max: max_seq,
                        });
                    }
                    p.ids.push(id as usize);
                    p.positions.push(pos);
                }
            }
            let len = p.ids.len() - start;
            if len == 0 {
                return Err(Error::EmptySequence);
            }
            p.segments.push((start, len));
        }
        if p.segments.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(p)
    }

    pub fn from_sequences(seqs: &[Vec<u32>], max_seq: usize) -> Result<Self> {
        let enc: Vec<Encoding> = seqs
            .iter()
            .map(|s| Encoding {
                ids: s.clone(),
                mask: vec![true; s.len()],
            })
            .collect();
        Packed::from_batch(&TokenBatch::new(&enc), max_seq)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn starts(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.0).collect()
    }
}

/// Encoder parameters plus configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    config: EncoderConfig,
    params: Params,
}

impl EncoderModel {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(config.layout(), seed);
        Ok(EncoderModel { config, params })
    }

    pub fn from_params(config: EncoderConfig, params: Params) -> Result<Self> {
        config.validate()?;
        check_layout(&params, &config.layout())?;
        Ok(EncoderModel { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: self.config.to_meta(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let config = EncoderConfig::from_meta(&ckpt.meta)?;
        EncoderModel::from_params(config, ckpt.params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        EncoderModel::from_checkpoint(Checkpoint::read(path)?)
    }

    /// Registers every parameter on `graph`, as trainable leaves or constants.
    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> BoundEncoder<'g> {
        BoundEncoder {
            config: self.config.clone(),
            vars: bind_params(&self.params, graph, trainable),
        }
    }

    /// CLS-pooled final hidden states, one row per sequence.
    pub fn encode_dense(&self, batch: &TokenBatch) -> Result<Tensor> {
        let g = Graph::new();
        let packed = Packed::from_batch(batch, self.config.max_seq)?;
        Ok(self.bind(&g, false).dense(&packed)?.value())
    }

    /// Max-pooled `log(1 + relu(logit))` term weights, zero weights dropped.
    pub fn encode_sparse(&self, batch: &TokenBatch) -> Result<Vec<SparseVector>> {
        let g = Graph::new();
        let packed = Packed::from_batch(batch, self.config.max_seq)?;
        let w = self.bind(&g, false).sparse(&packed)?.value();
        Ok((0..w.rows()).map(|i| SparseVector::from_dense(w.row(i))).collect())
    }
}

fn bind_params<'g>(params: &Params, graph: &'g Graph, trainable: bool) -> BTreeMap<String, Var<'g>> {
    params
        .iter()
        .map(|(k, v)| (k.clone(), graph.leaf(v.clone(), trainable)))
        .collect()
}

fn grads_of(vars: &BTreeMap<String, Var<'_>>) -> BTreeMap<String, Tensor> {
    vars.iter()
        .map(|(k, v)| {
            let g = v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape()));
            (k.clone(), g)
        })
        .collect()
}

fn lookup<'g>(vars: &BTreeMap<String, Var<'g>>, name: &str) -> Result<Var<'g>> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::Config(format!("model has no parameter {name}")))
}

fn linear<'g>(vars: &BTreeMap<String, Var<'g>>, prefix: &str, x: Var<'g>) -> Result<Var<'g>> {
    x.matmul(lookup(vars, &format!("{prefix}.weight"))?)?
        .add_bias(lookup(vars, &format!("{prefix}.bias"))?)
}

fn norm<'g>(vars: &BTreeMap<String, Var<'g>>, prefix: &str, x: Var<'g>) -> Result<Var<'g>> {
    x.layer_norm(
        lookup(vars, &format!("{prefix}.gamma"))?,
        lookup(vars, &format!("{prefix}.beta"))?,
        LN_EPS,
    )
}

/// One post-norm transformer block over packed rows.
fn block<'g>(
    vars: &BTreeMap<String, Var<'g>>,
    prefix: &str,
    x: Var<'g>,
    segments: &[(usize, usize)],
    heads: usize,
) -> Result<Var<'g>> {
    let q = linear(vars, &format!("{prefix}attn.q"), x)?;
    let k = linear(vars, &format!("{prefix}attn.k"), x)?;
    let v = linear(vars, &format!("{prefix}attn.v"), x)?;
    let a = Var::attention(q, k, v, segments, heads)?;
    let o = linear(vars, &format!("{prefix}attn.o"), a)?;
    let x = norm(vars, &format!("{prefix}attn_norm"), x.add(o)?)?;
    let up = linear(vars, &format!("{prefix}ffn.up"), x)?.gelu()?;
    let down = linear(vars, &format!("{prefix}ffn.down"), up)?;
    norm(vars, &format!("{prefix}ffn_norm"), x.add(down)?)
}

/// Encoder parameters registered on a graph.
pub struct BoundEncoder<'g> {
    config: EncoderConfig,
    vars: BTreeMap<String, Var<'g>>,
}

impl<'g> BoundEncoder<'g> {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn var(&self, name: &str) -> Result<Var<'g>> {
        lookup(&self.vars, name)
    }

    /// Token plus position embeddings, layer-normalized.
    pub fn embed(&self, packed: &Packed) -> Result<Var<'g>> {
        if let Some(&bad) = packed.ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Config(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let tok = self.var("embeddings.token")?.gather_rows(&packed.ids)?;
        let pos = self.var("embeddings.position")?.gather_rows(&packed.positions)?;
        norm(&self.vars, "embeddings.norm", tok.add(pos)?)
    }

    /// Final-layer hidden states, `T×hidden` over packed rows.
    pub fn hidden(&self, packed: &Packed) -> Result<Var<'g>> {
        let mut x = self.embed(packed)?;
        for l in 0..self.config.layers {
            x = block(
                &self.vars,
                &format!("layers.{l}."),
                x,
                &packed.segments,
                self.config.heads,
            )?;
        }
        Ok(x)
    }

    /// CLS embeddings, `B×hidden`.
    pub fn dense(&self, packed: &Packed) -> Result<Var<'g>> {
        self.hidden(packed)?.gather_rows(&packed.starts())
    }

    /// Vocabulary logits for the given hidden rows.
    pub fn lm_logits(&self, hidden: Var<'g>) -> Result<Var<'g>> {
        if !self.config.lm_head {
            return Err(Error::Config("model has no LM head".into()));
        }
        linear(&self.vars, "lm_head", hidden)
    }

    /// Per-sequence term weights, `B×vocab`.
    pub fn sparse(&self, packed: &Packed) -> Result<Var<'g>> {
        let logits = self.lm_logits(self.hidden(packed)?)?;
        sparse_pool(logits, &packed.segments)
    }

    /// Embeddings under the model's own pooling: CLS rows, or sparse weights.
    pub fn pooled(&self, packed: &Packed) -> Result<Var<'g>> {
        match self.config.pooling {
            Pooling::Cls => self.dense(packed),
            Pooling::MaxSparse => self.sparse(packed),
        }
    }

    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        grads_of(&self.vars)
    }
}

/// Max-pools `log(1 + relu(·))` of packed logits per segment.
pub fn sparse_pool<'g>(logits: Var<'g>, segments: &[(usize, usize)]) -> Result<Var<'g>> {
    let rows = segments
        .iter()
        .map(|&(start, len)| {
            logits
                .slice_rows(start, len)?
                .max_over_positions(&vec![true; len])?
                .relu()?
                .log1p()
        })
        .collect::<Result<Vec<_>>>()?;
    Var::concat_rows(&rows)
}

/// Encodes texts in parallel chunks. Every row is independent of its chunk,
/// so results do not depend on the chunk size or thread count.
pub struct TextEncoder<'a> {
    pub model: &'a EncoderModel,
    pub vocab: &'a Vocab,
    pub chunk: usize,
}

impl<'a> TextEncoder<'a> {
    pub fn new(model: &'a EncoderModel, vocab: &'a Vocab) -> Self {
        TextEncoder {
            model,
            vocab,
            chunk: 32,
        }
    }

    pub fn embed_dense<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Tensor> {
        if texts.is_empty() {
            return Ok(Tensor::zeros(&[0, self.model.config.hidden]));
        }
        let max_seq = self.model.config.max_seq;
        let parts = par::map(&texts.chunks(self.chunk.max(1)).collect::<Vec<_>>(), |chunk| {
            self.model
                .encode_dense(&TokenBatch::tokenize(chunk, self.vocab, max_seq))
        });
        let mut data = Vec::new();
        for p in parts {
            data.extend(p?.into_data());
        }
        Tensor::matrix(texts.len(), self.model.config.hidden, data)
    }

    pub fn embed_sparse<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<SparseVector>> {
        let max_seq = self.model.config.max_seq;
        let parts = par::map(&texts.chunks(self.chunk.max(1)).collect::<Vec<_>>(), |chunk| {
            self.model
                .encode_sparse(&TokenBatch::tokenize(chunk, self.vocab, max_seq))
        });
        let mut out = Vec::with_capacity(texts.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Anything that maps texts to dense embedding rows.
pub trait EmbedText: Sync {
    fn embed(&self, texts: &[String]) -> Result<Tensor>;
}

impl EmbedText for TextEncoder<'_> {
    fn embed(&self, texts: &[String]) -> Result<Tensor> {
        self.embed_dense(texts)
    }
}

/// Single-layer decoder that reconstructs a heavily masked sentence from its
/// own embeddings plus the encoder's sentence embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct RetroMaeDecoder {
    config: EncoderConfig,
    params: Params,
}

impl RetroMaeDecoder {
    fn layout(enc: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
        let mut out = block_layout("layer.", enc.hidden, enc.intermediate);
        out.push((
            "lm_head.weight".to_string(),
            vec![enc.hidden, enc.vocab_size],
            Init::Normal,
        ));
        out.push(("lm_head.bias".to_string(), vec![enc.vocab_size], Init::Zeros));
        out
    }

    pub fn init(enc: &EncoderConfig, layers: usize, seed: u64) -> Result<Self> {
        if layers != 1 {
            return Err(Error::Config(format!(
                "the reconstruction decoder has exactly one layer, got {layers}"
            )));
        }
        enc.validate()?;
        Ok(RetroMaeDecoder {
            config: enc.clone(),
            params: init_params(Self::layout(enc), seed),
        })
    }

    pub fn from_params(enc: &EncoderConfig, params: Params) -> Result<Self> {
        if params.names().any(|n| n.starts_with("layers.")) {
            return Err(Error::Config("the reconstruction decoder has exactly one layer".into()));
        }
        check_layout(&params, &Self::layout(enc))?;
        Ok(RetroMaeDecoder {
            config: enc.clone(),
            params,
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> BoundDecoder<'g> {
        BoundDecoder {
            heads: self.config.heads,
            vars: bind_params(&self.params, graph, trainable),
        }
    }
}

pub struct BoundDecoder<'g> {
    heads: usize,
    vars: BTreeMap<String, Var<'g>>,
}

impl<'g> BoundDecoder<'g> {
    /// Recovery logits (`T×vocab`) for a packed decoder input whose first row
    /// in each segment is replaced by the matching row of `cls`.
    pub fn forward(&self, enc: &BoundEncoder<'g>, packed: &Packed, cls: Var<'g>) -> Result<Var<'g>> {
        let emb = enc.embed(packed)?;
        let cls_shape = cls.shape();
        if cls_shape.len() != 2 || cls_shape[0] != packed.segments.len() {
            return Err(Error::shape("decoder", "one sentence embedding per sequence required"));
        }
        let mut parts = Vec::with_capacity(2 * packed.segments.len());
        for (s, &(start, len)) in packed.segments.iter().enumerate() {
            parts.push(cls.gather_rows(&[s])?);
            if len > 1 {
                parts.push(emb.slice_rows(start + 1, len - 1)?);
            }
        }
        let x = Var::concat_rows(&parts)?;
        let x = block(&self.vars, "layer.", x, &packed.segments, self.heads)?;
        linear(&self.vars, "lm_head", x)
    }

    pub fn grads(&self) -> BTreeMap<String, Tensor> {
        grads_of(&self.vars)
    }
}

/// One sentence masked twice: moderately for the encoder, aggressively for
/// the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct RetroMaeInput {
    pub encoder: MaskedSequence,
    pub decoder: MaskedSequence,
}

impl RetroMaeInput {
    pub fn new<R: rand::Rng + ?Sized>(seq: &[u32], enc: &MaskSpec, dec: &MaskSpec, rng: &mut R) -> Self {
        RetroMaeInput {
            encoder: apply_mask(seq, enc, rng),
            decoder: apply_mask(seq, dec, rng),
        }
    }
}

pub struct RetroMaeOutput<'g> {
    /// Encoder MLM logits over its (moderately masked) packed rows.
    pub encoder_logits: Var<'g>,
    /// Decoder recovery logits over its (aggressively masked) packed rows.
    pub decoder_logits: Var<'g>,
    /// Sentence embeddings, `B×hidden`.
    pub cls: Var<'g>,
    pub encoder_packed: Packed,
    pub decoder_packed: Packed,
}

impl RetroMaeOutput<'_> {
    /// `(packed row, original id)` for every masked encoder token.
    pub fn encoder_labels(&self, inputs: &[RetroMaeInput]) -> Vec<(usize, u32)> {
        packed_labels(&self.encoder_packed, inputs.iter().map(|i| &i.encoder))
    }

    pub fn decoder_labels(&self, inputs: &[RetroMaeInput]) -> Vec<(usize, u32)> {
        packed_labels(&self.decoder_packed, inputs.iter().map(|i| &i.decoder))
    }
}

fn packed_labels<'a>(packed: &Packed, seqs: impl Iterator<Item = &'a MaskedSequence>) -> Vec<(usize, u32)> {
    seqs.zip(&packed.segments)
        .flat_map(|(m, &(start, _))| m.labels.iter().map(move |&(p, id)| (start + p, id)))
        .collect()
}

pub fn retromae_forward<'g>(
    enc: &BoundEncoder<'g>,
    dec: &BoundDecoder<'g>,
    inputs: &[RetroMaeInput],
) -> Result<RetroMaeOutput<'g>> {
    let max_seq = enc.config.max_seq;
    let enc_seqs: Vec<Vec<u32>> = inputs.iter().map(|i| i.encoder.ids.clone()).collect();
    let dec_seqs: Vec<Vec<u32>> = inputs.iter().map(|i| i.decoder.ids.clone()).collect();
    let encoder_packed = Packed::from_sequences(&enc_seqs, max_seq)?;
    let decoder_packed = Packed::from_sequences(&dec_seqs, max_seq)?;
    let hidden = enc.hidden(&encoder_packed)?;
    let cls = hidden.gather_rows(&encoder_packed.starts())?;
    let encoder_logits = enc.lm_logits(hidden)?;
    let decoder_logits = dec.forward(enc, &decoder_packed, cls)?;
    Ok(RetroMaeOutput {
        encoder_logits,
        decoder_logits,
        cls,
        encoder_packed,
        decoder_packed,
    })
}
