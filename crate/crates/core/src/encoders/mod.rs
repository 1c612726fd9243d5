//! The attention-based sequence encoder, the neighborhood-mean graph encoder
//! and the MLP predictors, plus the [`CoModel`] bundle that holds them.

mod comodel;

use std::cell::Cell;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::data::{BeadGraph, TokenSequence, ALPHABET, BEAD_VOCAB};
use crate::fusion::FusionError;
use crate::params::{Binder, MissingParam, ParamStore};

pub use comodel::{Architecture, CoModel, Route};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("sequence length {len} exceeds positional table size {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("cannot encode an empty {0}")]
    Empty(&'static str),
    #[error("predictor layer `{layer}` expects width {expected}, got {got}")]
    Width { layer: String, expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error("model has no {0} route")]
    MissingRoute(&'static str),
    #[error(transparent)]
    Param(#[from] MissingParam),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

type Result<T> = std::result::Result<T, EncoderError>;

/// Variance floor of the attention blocks' layer norms.
pub const SEQ_NORM_EPS: f64 = 1.0;

/// Uniform `±sqrt(1 / fan_in)` initialisation.
fn init_weight(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::uniform(shape, (1.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqEncoderConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for SeqEncoderConfig {
    fn default() -> Self {
        SeqEncoderConfig { d: 64, heads: 4, layers: 2, d_ff: 128, max_len: 50 }
    }
}

impl SeqEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(EncoderError::Config(format!(
                "heads ({}) must divide the hidden size ({})",
                self.heads, self.d
            )));
        }
        if self.d_ff == 0 || self.max_len == 0 {
            return Err(EncoderError::Config("d_ff and max_len must be positive".into()));
        }
        Ok(())
    }

    pub fn init_params(&self, prefix: &str, store: &mut ParamStore, rng: &mut impl Rng) {
        let d = self.d;
        store.insert(format!("{prefix}.tok_emb"), init_weight(&[ALPHABET.len(), d], d, rng));
        store.insert(format!("{prefix}.pos_emb"), init_weight(&[self.max_len, d], d, rng));
        for l in 0..self.layers {
            let p = format!("{prefix}.block{l}");
            store.insert(format!("{p}.ln1.gain"), Tensor::filled(&[d], 1.0));
            store.insert(format!("{p}.ln1.bias"), Tensor::zeros(&[d]));
            for proj in ["q", "k", "v", "o"] {
                store.insert(format!("{p}.attn.{proj}"), init_weight(&[d, d], d, rng));
            }
            store.insert(format!("{p}.ln2.gain"), Tensor::filled(&[d], 1.0));
            store.insert(format!("{p}.ln2.bias"), Tensor::zeros(&[d]));
            store.insert(format!("{p}.ff.w1"), init_weight(&[d, self.d_ff], d, rng));
            store.insert(format!("{p}.ff.b1"), Tensor::zeros(&[self.d_ff]));
            store.insert(format!("{p}.ff.w2"), init_weight(&[self.d_ff, d], self.d_ff, rng));
            store.insert(format!("{p}.ff.b2"), Tensor::zeros(&[d]));
        }
    }

    /// Token plus positional embedding, `[n, d]`. This is the continuous
    /// input that attribution scales.
    pub fn embed(&self, tape: &mut Tape, binder: &mut Binder, prefix: &str, seq: &TokenSequence) -> Result<Var> {
        if seq.is_empty() {
            return Err(EncoderError::Empty("sequence"));
        }
        if seq.len() > self.max_len {
            return Err(EncoderError::SequenceTooLong { len: seq.len(), max: self.max_len });
        }
        let tok = binder.var(tape, &format!("{prefix}.tok_emb"))?;
        let pos = binder.var(tape, &format!("{prefix}.pos_emb"))?;
        let t = tape.embedding_gather(tok, &seq.tokens)?;
        let p = tape.embedding_gather(pos, &seq.positions)?;
        Ok(tape.add(t, p)?)
    }

    /// Pre-norm attention blocks over an embedded `[n, d]` input, mean-pooled to `[d]`.
    pub fn encode_embedded(&self, tape: &mut Tape, binder: &mut Binder, prefix: &str, h: Var) -> Result<Var> {
        let d = self.d;
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = h;
        for l in 0..self.layers {
            let p = format!("{prefix}.block{l}");
            let mut w = |name: &str| binder.var(tape, &format!("{p}.{name}"));
            let (g1, b1) = (w("ln1.gain")?, w("ln1.bias")?);
            let (wq, wk, wv, wo) = (w("attn.q")?, w("attn.k")?, w("attn.v")?, w("attn.o")?);
            let (g2, b2) = (w("ln2.gain")?, w("ln2.bias")?);
            let (w1, c1, w2, c2) = (w("ff.w1")?, w("ff.b1")?, w("ff.w2")?, w("ff.b2")?);

            let a = affine_norm(tape, x, g1, b1)?;
            let q = tape.matmul(a, wq)?;
            let k = tape.matmul(a, wk)?;
            let v = tape.matmul(a, wv)?;
            let mut heads = Vec::with_capacity(self.heads);
            for hd in 0..self.heads {
                let (s, e) = (hd * dh, (hd + 1) * dh);
                let qh = tape.slice_cols(q, s, e)?;
                let kh = tape.slice_cols(k, s, e)?;
                let vh = tape.slice_cols(v, s, e)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale)?;
                let attn = tape.softmax(scores, 1)?;
                heads.push(tape.matmul(attn, vh)?);
            }
            let joined = if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1)? };
            let attn_out = tape.matmul(joined, wo)?;
            x = tape.add(x, attn_out)?;

            let f = affine_norm(tape, x, g2, b2)?;
            let f = tape.matmul(f, w1)?;
            let f = tape.add_row(f, c1)?;
            let f = tape.leaky_relu(f)?;
            let f = tape.matmul(f, w2)?;
            let f = tape.add_row(f, c2)?;
            x = tape.add(x, f)?;
        }
        Ok(tape.mean_pool(x, 0)?)
    }

    pub fn encode(&self, tape: &mut Tape, binder: &mut Binder, prefix: &str, seq: &TokenSequence) -> Result<Var> {
        let h = self.embed(tape, binder, prefix, seq)?;
        self.encode_embedded(tape, binder, prefix, h)
    }
}

fn affine_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Result<Var> {
    let n = tape.layer_norm_eps(x, 1, SEQ_NORM_EPS)?;
    let n = tape.mul_row(n, gain)?;
    Ok(tape.add_row(n, bias)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphEncoderConfig {
    pub d: usize,
    pub layers: usize,
    pub vocab: usize,
}

impl Default for GraphEncoderConfig {
    fn default() -> Self {
        GraphEncoderConfig { d: 64, layers: 3, vocab: BEAD_VOCAB }
    }
}

thread_local! {
    static GRAPH_ENCODES: Cell<u64> = const { Cell::new(0) };
}

/// Number of graph-encoder passes run on the current thread.
pub fn graph_encode_count() -> u64 {
    GRAPH_ENCODES.with(|c| c.get())
}

pub fn reset_graph_encode_count() {
    GRAPH_ENCODES.with(|c| c.set(0));
}

impl GraphEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.layers == 0 || self.vocab == 0 {
            return Err(EncoderError::Config("graph encoder needs d, layers and vocab >= 1".into()));
        }
        Ok(())
    }

    pub fn init_params(&self, prefix: &str, store: &mut ParamStore, rng: &mut impl Rng) {
        let d = self.d;
        store.insert(format!("{prefix}.bead_emb"), init_weight(&[self.vocab, d], d, rng));
        for l in 0..self.layers {
            store.insert(format!("{prefix}.layer{l}.w"), init_weight(&[2 * d, d], 2 * d, rng));
            store.insert(format!("{prefix}.layer{l}.b"), Tensor::zeros(&[d]));
        }
    }

    /// Bead-type embeddings, `[nodes, d]`.
    pub fn embed(&self, tape: &mut Tape, binder: &mut Binder, prefix: &str, g: &BeadGraph) -> Result<Var> {
        GRAPH_ENCODES.with(|c| c.set(c.get() + 1));
        if g.num_nodes() == 0 {
            return Err(EncoderError::Empty("graph"));
        }
        let table = binder.var(tape, &format!("{prefix}.bead_emb"))?;
        Ok(tape.embedding_gather(table, &g.node_types)?)
    }

    /// Message passing over an embedded `[nodes, d]` input with the graph's
    /// adjacency held fixed, mean-read out to `[d]`.
    pub fn encode_embedded(
        &self,
        tape: &mut Tape,
        binder: &mut Binder,
        prefix: &str,
        g: &BeadGraph,
        h: Var,
    ) -> Result<Var> {
        let mut x = h;
        for l in 0..self.layers {
            let w = binder.var(tape, &format!("{prefix}.layer{l}.w"))?;
            let b = binder.var(tape, &format!("{prefix}.layer{l}.b"))?;
            let nbr = tape.neighbor_mean(x, g.neighbors.clone())?;
            let cat = tape.concat(&[x, nbr], 1)?;
            let y = tape.matmul(cat, w)?;
            let y = tape.add_row(y, b)?;
            x = tape.leaky_relu(y)?;
        }
        Ok(tape.mean_pool(x, 0)?)
    }

    pub fn encode(&self, tape: &mut Tape, binder: &mut Binder, prefix: &str, g: &BeadGraph) -> Result<Var> {
        let h = self.embed(tape, binder, prefix, g)?;
        self.encode_embedded(tape, binder, prefix, g, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictorConfig {
    pub input: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub output: usize,
}

impl PredictorConfig {
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(std::iter::repeat_n(self.hidden, self.hidden_layers));
        w.push(self.output);
        w
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_layers + 1
    }

    pub fn init_params(&self, prefix: &str, store: &mut ParamStore, rng: &mut impl Rng) {
        for (i, pair) in self.widths().windows(2).enumerate() {
            store.insert(format!("{prefix}.layer{i}.w"), init_weight(&[pair[0], pair[1]], pair[0], rng));
            store.insert(format!("{prefix}.layer{i}.b"), Tensor::zeros(&[pair[1]]));
        }
    }

    /// Affine stack with leaky ReLU between layers. Accepts a vector `[w]`
    /// (returns `[output]`) or a batch `[B, w]` (returns `[B, output]`).
    pub fn forward(&self, tape: &mut Tape, binder: &mut Binder, prefix: &str, h: Var) -> Result<Var> {
        let vector = tape.shape(h).len() == 1;
        let mut x = if vector {
            let w = tape.shape(h)[0];
            tape.reshape(h, &[1, w])?
        } else {
            h
        };
        let layers = self.num_layers();
        for i in 0..layers {
            let name = format!("{prefix}.layer{i}");
            let w = binder.var(tape, &format!("{name}.w"))?;
            let b = binder.var(tape, &format!("{name}.b"))?;
            let (expected, got) = (tape.shape(w)[0], tape.shape(x)[1]);
            if expected != got {
                return Err(EncoderError::Width { layer: name, expected, got });
            }
            let y = tape.matmul(x, w)?;
            x = tape.add_row(y, b)?;
            if i + 1 < layers {
                x = tape.leaky_relu(x)?;
            }
        }
        if vector {
            let out = tape.shape(x)[1];
            x = tape.reshape(x, &[out])?;
        }
        Ok(x)
    }
}

/// Evaluates a predictor on a plain vector.
pub fn mlp_predict(cfg: &PredictorConfig, store: &ParamStore, prefix: &str, h: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mut binder = Binder::frozen(store);
    let x = tape.constant(Tensor::vector(h.to_vec()));
    let out = cfg.forward(&mut tape, &mut binder, prefix, x)?;
    Ok(tape.value(out).data().to_vec())
}
