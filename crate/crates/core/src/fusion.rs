//! Fusion of sequence and graph representations: the four baseline operators
//! and the in-batch contrastive (InfoNCE) regulariser.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::{spectral, AutodiffError, Tape, Tensor, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("representation widths differ: h_seq has {seq}, h_graph has {graph}")]
    DimMismatch { seq: usize, graph: usize },
    #[error("contrastive loss needs at least 2 samples per batch, got {0}")]
    BatchTooSmall(usize),
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error(
        "{0} produces no fused vector: each encoder keeps its own predictor; \
         use the per-route predictions instead"
    )]
    NoFusedVector(FusionKind),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionKind {
    WeightedSum,
    Concat,
    CrossAttention,
    CompactBilinear,
    RepCon,
    /// Sequence backbone trained alone.
    SeqOnly,
    /// Graph backbone trained alone.
    GraphOnly,
}

impl FusionKind {
    pub const ALL: [FusionKind; 7] = [
        FusionKind::WeightedSum,
        FusionKind::Concat,
        FusionKind::CrossAttention,
        FusionKind::CompactBilinear,
        FusionKind::RepCon,
        FusionKind::SeqOnly,
        FusionKind::GraphOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::WeightedSum => "ws",
            FusionKind::Concat => "concat",
            FusionKind::CrossAttention => "ca",
            FusionKind::CompactBilinear => "cbp",
            FusionKind::RepCon => "repcon",
            FusionKind::SeqOnly => "seq-only",
            FusionKind::GraphOnly => "graph-only",
        }
    }

    pub fn code(self) -> usize {
        FusionKind::ALL.iter().position(|k| *k == self).unwrap()
    }

    pub fn from_code(code: usize) -> Option<Self> {
        FusionKind::ALL.get(code).copied()
    }

    /// Whether training feeds a single fused vector to a shared predictor.
    pub fn is_fused(self) -> bool {
        matches!(
            self,
            FusionKind::WeightedSum | FusionKind::Concat | FusionKind::CrossAttention | FusionKind::CompactBilinear
        )
    }

    pub fn uses_seq(self) -> bool {
        self != FusionKind::GraphOnly
    }

    pub fn uses_graph(self) -> bool {
        self != FusionKind::SeqOnly
    }

    /// Width of the fused vector for encoder width `d`, if this kind fuses.
    pub fn fused_width(self, d: usize) -> Option<usize> {
        match self {
            FusionKind::Concat => Some(2 * d),
            k if k.is_fused() => Some(d),
            _ => None,
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = FusionError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FusionKind::ALL.iter().copied().find(|k| k.name().eq_ignore_ascii_case(s)).ok_or_else(|| {
            FusionError::Config(format!(
                "unknown fusion kind {s:?} (expected one of ws, concat, ca, cbp, repcon, seq-only, graph-only)"
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub kind: FusionKind,
    /// Weighted-sum balance, in `[0, 1]`.
    pub delta: f64,
    /// Weight of the contrastive term in the training loss.
    pub lambda: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    /// l2-normalise representations before the contrastive dot products.
    pub normalize: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { kind: FusionKind::RepCon, delta: 0.5, lambda: 1e-4, tau: 0.5, normalize: false }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(FusionError::Config(format!("delta must be in [0, 1], got {}", self.delta)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(FusionError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FusionError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), FusionError> {
    if a.len() != b.len() {
        return Err(FusionError::DimMismatch { seq: a.len(), graph: b.len() });
    }
    Ok(())
}

/// `delta * h_seq + (1 - delta) * h_graph`.
pub fn fuse_ws(h_seq: &[f64], h_graph: &[f64], delta: f64) -> Result<Vec<f64>, FusionError> {
    check_dims(h_seq, h_graph)?;
    Ok(h_seq.iter().zip(h_graph).map(|(s, g)| delta * s + (1.0 - delta) * g).collect())
}

pub fn fuse_concat(h_seq: &[f64], h_graph: &[f64]) -> Vec<f64> {
    h_seq.iter().chain(h_graph).copied().collect()
}

/// Cross attention with `h_graph` as query and key and `h_seq` as value:
/// `softmax(h_graph h_graph^T / sqrt(d)) h_seq`.
pub fn fuse_ca(h_seq: &[f64], h_graph: &[f64]) -> Result<Vec<f64>, FusionError> {
    check_dims(h_seq, h_graph)?;
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::vector(h_seq.to_vec()));
    let g = tape.constant(Tensor::vector(h_graph.to_vec()));
    let out = tape_ca(&mut tape, s, g)?;
    Ok(tape.value(out).data().to_vec())
}

/// Real part of `IDFT(DFT(h_seq) * DFT(h_graph))`, i.e. circular convolution.
pub fn fuse_cbp(h_seq: &[f64], h_graph: &[f64]) -> Result<Vec<f64>, FusionError> {
    check_dims(h_seq, h_graph)?;
    Ok(spectral::circular_convolution(h_seq, h_graph))
}

/// Mean symmetric InfoNCE loss over a batch of representation pairs.
pub fn infonce_loss(h_seq: &[Vec<f64>], h_graph: &[Vec<f64>], tau: f64) -> Result<f64, FusionError> {
    let b = h_seq.len();
    if h_graph.len() != b {
        return Err(FusionError::Config(format!("batch sizes differ: {b} vs {}", h_graph.len())));
    }
    let d = h_seq.first().map_or(0, Vec::len);
    for (s, g) in h_seq.iter().zip(h_graph) {
        check_dims(s, g)?;
        if s.len() != d {
            return Err(FusionError::DimMismatch { seq: s.len(), graph: d });
        }
    }
    let mut tape = Tape::new();
    let flat = |rows: &[Vec<f64>]| Tensor::new(vec![b, d], rows.concat());
    let s = tape.constant(flat(h_seq)?);
    let g = tape.constant(flat(h_graph)?);
    let loss = tape_infonce(&mut tape, s, g, tau, false)?;
    Ok(tape.value(loss).item())
}

fn tape_dims(tape: &Tape, a: Var, b: Var) -> Result<(), FusionError> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(FusionError::DimMismatch {
            seq: sa.last().copied().unwrap_or(0),
            graph: sb.last().copied().unwrap_or(0),
        });
    }
    Ok(())
}

pub fn tape_ws(tape: &mut Tape, h_seq: Var, h_graph: Var, delta: f64) -> Result<Var, FusionError> {
    tape_dims(tape, h_seq, h_graph)?;
    let a = tape.scale(h_seq, delta)?;
    let b = tape.scale(h_graph, 1.0 - delta)?;
    Ok(tape.add(a, b)?)
}

pub fn tape_ca(tape: &mut Tape, h_seq: Var, h_graph: Var) -> Result<Var, FusionError> {
    tape_dims(tape, h_seq, h_graph)?;
    let d = tape.shape(h_graph)[0];
    let col = tape.reshape(h_graph, &[d, 1])?;
    let row = tape.reshape(h_graph, &[1, d])?;
    let outer = tape.matmul(col, row)?;
    let logits = tape.scale(outer, 1.0 / (d as f64).sqrt())?;
    let attn = tape.softmax(logits, 1)?;
    let value = tape.reshape(h_seq, &[d, 1])?;
    let out = tape.matmul(attn, value)?;
    Ok(tape.reshape(out, &[d])?)
}

/// Fused vector handed to the shared predictor of a baseline model.
pub fn fuse_for_predictor(tape: &mut Tape, h_seq: Var, h_graph: Var, cfg: &FusionConfig) -> Result<Var, FusionError> {
    match cfg.kind {
        FusionKind::WeightedSum => tape_ws(tape, h_seq, h_graph, cfg.delta),
        FusionKind::Concat => {
            if tape.shape(h_seq).len() != 1 || tape.shape(h_graph).len() != 1 {
                return Err(FusionError::Config("concat expects vectors".into()));
            }
            Ok(tape.concat(&[h_seq, h_graph], 0)?)
        }
        FusionKind::CrossAttention => tape_ca(tape, h_seq, h_graph),
        FusionKind::CompactBilinear => {
            tape_dims(tape, h_seq, h_graph)?;
            Ok(tape.circular_conv(h_seq, h_graph)?)
        }
        kind => Err(FusionError::NoFusedVector(kind)),
    }
}

/// Symmetric InfoNCE over `[B, d]` batches of sequence and graph representations.
///
/// Every representation anchors one row: its positive is the other view of
/// the same peptide and its negatives are both views of every other peptide
/// in the batch (`2(B-1)` terms). The positive sits in the denominator and the
/// result is the mean over all `2B` anchors.
pub fn tape_infonce(tape: &mut Tape, h_seq: Var, h_graph: Var, tau: f64, normalize: bool) -> Result<Var, FusionError> {
    tape_dims(tape, h_seq, h_graph)?;
    if tape.shape(h_seq).len() != 2 {
        return Err(FusionError::Config("contrastive loss expects [B, d] batches".into()));
    }
    let b = tape.shape(h_seq)[0];
    if b < 2 {
        return Err(FusionError::BatchTooSmall(b));
    }
    if !(tau > 0.0) {
        return Err(FusionError::Config(format!("tau must be positive, got {tau}")));
    }
    let mut z = tape.concat(&[h_seq, h_graph], 0)?;
    if normalize {
        z = tape.l2_normalize_rows(z)?;
    }
    let zt = tape.transpose(z)?;
    let sim = tape.matmul(z, zt)?;
    let sim = tape.scale(sim, 1.0 / tau)?;

    let n = 2 * b;
    let mut idx = Vec::with_capacity(n * (n - 1));
    for a in 0..n {
        let pos = (a + b) % n;
        idx.push(a * n + pos);
        idx.extend((0..n).filter(|&j| j != a && j != pos).map(|j| a * n + j));
    }
    let logits = tape.select(sim, &idx)?;
    let logits = tape.reshape(logits, &[n, n - 1])?;
    Ok(tape.cross_entropy_loss(logits, &vec![0; n])?)
}
