//! Integrated-gradients attribution over the embedded input of either route,
//! aggregated to normalised per-residue scores.

use std::fmt::Write as _;

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::data::{build_graph, encode_sequence, BeadGraph, Sequence, TaskKind, TokenSequence};
use crate::encoders::{CoModel, EncoderError, Route};
use crate::params::Binder;

/// Steps used when none is configured.
pub const DEFAULT_STEPS: usize = 300;

/// Grand totals smaller than this are treated as degenerate.
pub const MIN_TOTAL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error("classification attribution needs the originally predicted class")]
    MissingClass,
    #[error("integrated gradients needs at least one step")]
    NoSteps,
    #[error("non-finite gradient at step {k}")]
    NonFiniteGradient { k: usize },
    #[error("graph structure changed during integration (step {k})")]
    StructureChanged { k: usize },
    #[error("attribution total {total:e} is too close to zero to normalise")]
    DegenerateTotal { total: f64 },
    #[error("saliency has {rows} rows but the residue mapping has {mapping} entries")]
    Mapping { rows: usize, mapping: usize },
    #[error("model has no {0} route to attribute")]
    MissingRoute(&'static str),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

type Result<T> = std::result::Result<T, AttributionError>;

/// Objective whose gradient drives attribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttributionLoss {
    /// `|f(X)|` for a scalar regression output.
    Regression,
    /// Cross-entropy against the originally predicted class.
    Classification { original_class: usize },
}

impl AttributionLoss {
    pub fn for_task(task: TaskKind, original_class: Option<usize>) -> Result<Self> {
        match task {
            TaskKind::Regression => Ok(AttributionLoss::Regression),
            TaskKind::Classification => original_class
                .map(|c| AttributionLoss::Classification { original_class: c })
                .ok_or(AttributionError::MissingClass),
        }
    }
}

pub fn attribution_loss(tape: &mut Tape, output: Var, loss: AttributionLoss) -> Result<Var> {
    Ok(match loss {
        AttributionLoss::Regression => {
            let a = tape.abs(output)?;
            tape.sum(a)?
        }
        AttributionLoss::Classification { original_class } => tape.cross_entropy_loss(output, &[original_class])?,
    })
}

/// Attribution loss of plain model outputs.
pub fn attribution_loss_values(output: &[f64], task: TaskKind, original_class: Option<usize>) -> Result<f64> {
    let loss = AttributionLoss::for_task(task, original_class)?;
    let mut tape = Tape::new();
    let out = tape.constant(Tensor::vector(output.to_vec()));
    let l = attribution_loss(&mut tape, out, loss)?;
    Ok(tape.value(l).item())
}

/// A model viewed as a function of its embedded input `H`.
pub trait EmbeddedModel {
    /// Model output for the embedded input `h` (same shape as [`Self::embedded`]).
    fn forward_embedded(&self, tape: &mut Tape, h: Var) -> Result<Var>;

    /// Embedding of the actual input.
    fn embedded(&self) -> Result<Tensor>;

    /// Structure that must stay fixed while `H` is scaled (graph adjacency).
    fn structure(&self) -> Option<Vec<(usize, usize)>> {
        None
    }
}

/// `L(H)` for the given embedded input.
pub fn loss_at(model: &dyn EmbeddedModel, h: &Tensor, loss: AttributionLoss) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(h.clone());
    let out = model.forward_embedded(&mut tape, x)?;
    let l = attribution_loss(&mut tape, out, loss)?;
    Ok(tape.value(l).item())
}

/// Averaged Riemann-sum integrated gradients from the zero embedding:
/// `H ∘ (1/m) Σ_{k=1..m} ∂L((k/m) H)/∂H`.
pub fn integrated_gradients(model: &dyn EmbeddedModel, h: &Tensor, loss: AttributionLoss, m: usize) -> Result<Tensor> {
    if m == 0 {
        return Err(AttributionError::NoSteps);
    }
    let structure = model.structure();
    let mut total = Tensor::zeros(h.shape());
    for k in 1..=m {
        let alpha = k as f64 / m as f64;
        let mut tape = Tape::new();
        let x = tape.leaf(h.map(|v| alpha * v));
        let out = model.forward_embedded(&mut tape, x)?;
        let l = attribution_loss(&mut tape, out, loss)?;
        let g = tape.backward(l)?.wrt(x);
        if !g.is_finite() {
            return Err(AttributionError::NonFiniteGradient { k });
        }
        if model.structure() != structure {
            return Err(AttributionError::StructureChanged { k });
        }
        total.add_assign(&g);
    }
    Ok(h.zip_map(&total, |hv, gv| hv * gv / m as f64))
}

/// `|Σ saliency − (L(H) − L(0))| / |L(H) − L(0)|`.
pub fn completeness_gap(
    model: &dyn EmbeddedModel,
    h: &Tensor,
    loss: AttributionLoss,
    saliency: &Tensor,
) -> Result<f64> {
    let full = loss_at(model, h, loss)?;
    let base = loss_at(model, &Tensor::zeros(h.shape()), loss)?;
    let delta = full - base;
    Ok((saliency.sum() - delta).abs() / delta.abs())
}

/// Normalised per-residue attribution of one peptide.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionProfile {
    pub id: String,
    pub residues: Vec<char>,
    pub scores: Vec<f64>,
}

impl AttributionProfile {
    /// `[W:0.28, F:0.28, ...]`.
    pub fn formatted(&self) -> String {
        let parts: Vec<String> = self.residues.iter().zip(&self.scores).map(|(r, s)| format!("{r}:{s:.2}")).collect();
        format!("[{}]", parts.join(", "))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Sums saliency rows into their residues and divides by the signed grand total.
pub fn aggregate_to_residues(
    id: &str,
    saliency: &Tensor,
    residue_of_row: &[usize],
    residues: &[char],
) -> Result<AttributionProfile> {
    let rows = saliency.shape().first().copied().unwrap_or(0);
    if rows != residue_of_row.len() || residue_of_row.iter().any(|&r| r >= residues.len()) {
        return Err(AttributionError::Mapping { rows, mapping: residue_of_row.len() });
    }
    let cols = saliency.len().checked_div(rows).unwrap_or(0);
    let mut sums = vec![0.0; residues.len()];
    for (row, &res) in residue_of_row.iter().enumerate() {
        sums[res] += saliency.data()[row * cols..(row + 1) * cols].iter().sum::<f64>();
    }
    let total: f64 = sums.iter().sum();
    if !(total.abs() >= MIN_TOTAL) {
        return Err(AttributionError::DegenerateTotal { total });
    }
    Ok(AttributionProfile {
        id: id.to_string(),
        residues: residues.to_vec(),
        scores: sums.iter().map(|s| s / total).collect(),
    })
}

/// Sequence route of a trained model as a function of its token+position embedding.
pub struct SeqRouteModel<'a> {
    model: &'a CoModel,
    tokens: TokenSequence,
}

impl<'a> SeqRouteModel<'a> {
    pub fn new(model: &'a CoModel, tokens: TokenSequence) -> Result<Self> {
        if !model.has_route(Route::Seq) {
            return Err(AttributionError::MissingRoute("seq"));
        }
        Ok(SeqRouteModel { model, tokens })
    }
}

impl EmbeddedModel for SeqRouteModel<'_> {
    fn forward_embedded(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let mut binder = Binder::frozen(&self.model.params);
        let rep = self.model.arch.seq.encode_embedded(tape, &mut binder, "seq", h)?;
        Ok(self.model.predict_route(tape, &mut binder, Route::Seq, rep)?)
    }

    fn embedded(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(&self.model.params);
        let h = self.model.arch.seq.embed(&mut tape, &mut binder, "seq", &self.tokens)?;
        Ok(tape.value(h).clone())
    }
}

/// Graph route of a trained model as a function of its bead embeddings;
/// the adjacency is never scaled.
pub struct GraphRouteModel<'a> {
    model: &'a CoModel,
    graph: BeadGraph,
}

impl<'a> GraphRouteModel<'a> {
    pub fn new(model: &'a CoModel, graph: BeadGraph) -> Result<Self> {
        if !model.has_route(Route::Graph) {
            return Err(AttributionError::MissingRoute("graph"));
        }
        Ok(GraphRouteModel { model, graph })
    }
}

impl EmbeddedModel for GraphRouteModel<'_> {
    fn forward_embedded(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let mut binder = Binder::frozen(&self.model.params);
        let rep = self.model.arch.graph.encode_embedded(tape, &mut binder, "graph", &self.graph, h)?;
        Ok(self.model.predict_route(tape, &mut binder, Route::Graph, rep)?)
    }

    fn embedded(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(&self.model.params);
        let h = self.model.arch.graph.embed(&mut tape, &mut binder, "graph", &self.graph)?;
        Ok(tape.value(h).clone())
    }

    fn structure(&self) -> Option<Vec<(usize, usize)>> {
        let mut edges: Vec<(usize, usize)> =
            self.graph.neighbors.iter().enumerate().flat_map(|(i, ns)| ns.iter().map(move |&j| (i, j))).collect();
        edges.sort_unstable();
        Some(edges)
    }
}

fn argmax(xs: &[f64]) -> usize {
    (0..xs.len()).fold(0, |best, i| if xs[i] > xs[best] { i } else { best })
}

/// Attribution profile of one peptide under one route of `model`.
pub fn attribute_sequence(
    model: &CoModel,
    route: Route,
    id: &str,
    seq: &Sequence,
    m: usize,
) -> Result<AttributionProfile> {
    let residues: Vec<char> = seq.residues().collect();
    let (embedded_model, mapping): (Box<dyn EmbeddedModel>, Vec<usize>) = match route {
        Route::Seq => {
            let tokens = encode_sequence(seq);
            let mapping = tokens.positions.clone();
            (Box::new(SeqRouteModel::new(model, tokens)?), mapping)
        }
        Route::Graph => {
            let graph = build_graph(seq);
            let mapping = graph.residue_of_node.clone();
            (Box::new(GraphRouteModel::new(model, graph)?), mapping)
        }
    };
    let h = embedded_model.embedded()?;
    let loss = match model.arch.task {
        TaskKind::Regression => AttributionLoss::Regression,
        TaskKind::Classification => {
            let mut tape = Tape::new();
            let x = tape.constant(h.clone());
            let out = embedded_model.forward_embedded(&mut tape, x)?;
            AttributionLoss::Classification { original_class: argmax(tape.value(out).data()) }
        }
    };
    let saliency = integrated_gradients(embedded_model.as_ref(), &h, loss, m)?;
    aggregate_to_residues(id, &saliency, &mapping, &residues)
}

/// One profile per `(id, sequence)` pair, in input order.
pub fn attribute_dataset<'a>(
    model: &CoModel,
    route: Route,
    peptides: impl IntoIterator<Item = (&'a str, &'a Sequence)>,
    m: usize,
) -> Result<Vec<AttributionProfile>> {
    peptides.into_iter().map(|(id, seq)| attribute_sequence(model, route, id, seq, m)).collect()
}

/// Profile CSV with header `id,position,residue,score`; positions are 1-based.
pub fn profiles_to_csv(profiles: &[AttributionProfile]) -> String {
    let mut out = String::from("id,position,residue,score\n");
    for p in profiles {
        for (i, (r, s)) in p.residues.iter().zip(&p.scores).enumerate() {
            let _ = writeln!(out, "{},{},{},{:.6}", p.id, i + 1, r, s);
        }
    }
    out
}

/// Parses a profile CSV; rows of one id must be contiguous and in position order.
pub fn profiles_from_csv(text: &str) -> std::result::Result<Vec<AttributionProfile>, String> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "position", "residue", "score"] {
        return Err(format!("unexpected profile header {:?}", header.iter().collect::<Vec<_>>()));
    }
    let mut out: Vec<AttributionProfile> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| format!("row {}: {e}", i + 1))?;
        let bad = |what: &str| format!("row {}: bad {what}", i + 1);
        let id = row.get(0).ok_or_else(|| bad("id"))?.to_string();
        let pos: usize = row.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("position"))?;
        let residue = row.get(2).and_then(|v| v.chars().next()).ok_or_else(|| bad("residue"))?;
        let score: f64 = row.get(3).and_then(|v| v.parse().ok()).ok_or_else(|| bad("score"))?;
        match out.last_mut() {
            Some(p) if p.id == id => {
                if pos != p.len() + 1 {
                    return Err(bad("position order"));
                }
                p.residues.push(residue);
                p.scores.push(score);
            }
            _ => {
                if pos != 1 || out.iter().any(|p| p.id == id) {
                    return Err(bad("profile grouping"));
                }
                out.push(AttributionProfile { id, residues: vec![residue], scores: vec![score] });
            }
        }
    }
    Ok(out)
}
