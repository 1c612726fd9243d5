//! Similarity between attribution profiles, and amino-acid level statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::attribution::AttributionProfile;
use crate::data::{PeptideRecord, ALPHABET};
use crate::encoders::CoModel;
use crate::training::{predict, prepare_samples, TrainError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("rank metrics need at least 2 entries, got {0}")]
    TooShort(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cosine similarity of an all-zero vector")]
    ZeroVector,
    #[error("distribution has no positive mass after clamping")]
    EmptyDistribution,
    #[error("top-{i} requested but peptide {id:?} has only {len} residues")]
    TopTooLarge { i: usize, len: usize, id: String },
    #[error("profiles are not paired; offending ids: {0:?}")]
    Unpaired(Vec<String>),
    #[error("no profiles given")]
    NoProfiles,
}

type Result<T> = std::result::Result<T, MetricsError>;

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

fn check_rank_len(a: &[f64], b: &[f64]) -> Result<()> {
    check_len(a, b)?;
    if a.len() < 2 {
        return Err(MetricsError::TooShort(a.len()));
    }
    Ok(())
}

/// Kendall's tau-a: `(concordant − discordant) / (n(n−1)/2)`; tied pairs count as neither.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<f64> {
    check_rank_len(a, b)?;
    let n = a.len();
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let s = (a[i] - a[j]).signum_or_zero() * (b[i] - b[j]).signum_or_zero();
            score += s as i64;
        }
    }
    Ok(score as f64 / (n * (n - 1) / 2) as f64)
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(self) -> f64 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Positions ordered from highest to lowest score; ties keep position order.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
    idx
}

/// 1-based rank of each position (rank 1 = highest score).
pub fn ranks(scores: &[f64]) -> Vec<usize> {
    let mut r = vec![0; scores.len()];
    for (rank, pos) in descending_order(scores).into_iter().enumerate() {
        r[pos] = rank + 1;
    }
    r
}

/// Footrule similarity `1 − Σ|rank_a − rank_b| / ⌊n²/2⌋`, in `[0, 1]`.
pub fn spearman_footrule(a: &[f64], b: &[f64]) -> Result<f64> {
    check_rank_len(a, b)?;
    let (ra, rb) = (ranks(a), ranks(b));
    let dist: usize = ra.iter().zip(&rb).map(|(x, y)| x.abs_diff(*y)).sum();
    let fmax = a.len() * a.len() / 2;
    Ok(1.0 - dist as f64 / fmax as f64)
}

/// Whether the `i` highest-scoring positions of two profiles share a position.
pub fn top_i_overlapped(a: &AttributionProfile, b: &AttributionProfile, i: usize) -> Result<bool> {
    for p in [a, b] {
        if i > p.len() || i == 0 {
            return Err(MetricsError::TopTooLarge { i, len: p.len(), id: p.id.clone() });
        }
    }
    let ta = &descending_order(&a.scores)[..i];
    let tb = &descending_order(&b.scores)[..i];
    Ok(ta.iter().any(|x| tb.contains(x)))
}

/// Fraction of peptides whose top-`i` position sets intersect.
pub fn top_i_overlap(a: &[AttributionProfile], b: &[AttributionProfile], i: usize) -> Result<f64> {
    check_paired(a, b)?;
    let hits = a.iter().zip(b).map(|(x, y)| top_i_overlapped(x, y, i)).collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
}

/// Clamps at zero and renormalises to unit mass.
pub fn to_distribution(p: &[f64]) -> Result<Vec<f64>> {
    let clamped: Vec<f64> = p.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if !(total > 0.0) {
        return Err(MetricsError::EmptyDistribution);
    }
    Ok(clamped.iter().map(|v| v / total).collect())
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum()
}

/// Jensen–Shannon divergence in nats, after clamping and renormalising both inputs.
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    let (p, q) = (to_distribution(p)?, to_distribution(q)?);
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)).max(0.0))
}

pub fn cosine_similarity(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (np, nq) = (norm(p), norm(q));
    if np == 0.0 || nq == 0.0 {
        return Err(MetricsError::ZeroVector);
    }
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    Ok((dot / (np * nq)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidueStat {
    /// Mean score over all occurrences; `None` when the letter never occurs.
    pub mean_attribution: Option<f64>,
    /// Share of peptides in which this letter holds the maximum score.
    pub top_frequency: f64,
    pub occurrences: usize,
}

/// Per-letter mean attribution and most-important frequency. Tied maxima
/// split one unit of credit equally between the tied positions.
pub fn residue_stats(profiles: &[AttributionProfile]) -> Result<BTreeMap<char, ResidueStat>> {
    if profiles.is_empty() {
        return Err(MetricsError::NoProfiles);
    }
    let mut sums: BTreeMap<char, (f64, usize, f64)> = ALPHABET.iter().map(|&c| (c, (0.0, 0, 0.0))).collect();
    for p in profiles {
        for (r, s) in p.residues.iter().zip(&p.scores) {
            let e = sums.entry(*r).or_default();
            e.0 += s;
            e.1 += 1;
        }
        let max = p.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<char> = p.residues.iter().zip(&p.scores).filter(|(_, s)| **s == max).map(|(r, _)| *r).collect();
        for r in &tied {
            sums.entry(*r).or_default().2 += 1.0 / tied.len() as f64;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(c, (sum, n, top))| {
            let stat = ResidueStat {
                mean_attribution: (n > 0).then(|| sum / n as f64),
                top_frequency: top / profiles.len() as f64,
                occurrences: n,
            };
            (c, stat)
        })
        .collect())
}

/// Per-letter MAE over the peptides containing that letter; `None` marks
/// letters absent from every record.
pub fn residue_mae_from_predictions(records: &[PeptideRecord], preds: &[f64]) -> BTreeMap<char, Option<f64>> {
    ALPHABET
        .iter()
        .map(|&c| {
            let errs: Vec<f64> = records
                .iter()
                .zip(preds)
                .filter(|(r, _)| r.sequence.residues().any(|x| x == c))
                .map(|(r, p)| (p - r.label.value()).abs())
                .collect();
            let mae = (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);
            (c, mae)
        })
        .collect()
}

pub fn residue_mae(
    model: &CoModel,
    records: &[PeptideRecord],
) -> std::result::Result<BTreeMap<char, Option<f64>>, TrainError> {
    let samples = prepare_samples(records, model.kind().uses_graph());
    let preds = samples.iter().map(|s| predict(model, s).map(|o| o[0])).collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(residue_mae_from_predictions(records, &preds))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanVar {
    pub mean: f64,
    pub var: f64,
}

impl MeanVar {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        MeanVar { mean, var }
    }
}

/// Agreement between two models' attributions over the same peptides.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub kendall_tau: MeanVar,
    pub spearman_footrule: MeanVar,
    /// `(i, mean and variance of the per-peptide overlap indicator)` for i = 1, 2.
    pub top_i_overlap: Vec<(usize, MeanVar)>,
    pub js_divergence: MeanVar,
    pub cosine_similarity: MeanVar,
}

impl SimilarityReport {
    /// Rows `metric,statistic,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,statistic,value\n");
        let mut row = |name: &str, mv: &MeanVar| {
            let _ = writeln!(out, "{name},mean,{:.6}", mv.mean);
            let _ = writeln!(out, "{name},var,{:.6}", mv.var);
        };
        row("kendall_tau", &self.kendall_tau);
        row("spearman_footrule", &self.spearman_footrule);
        for (i, mv) in &self.top_i_overlap {
            row(&format!("top_{i}_overlap"), mv);
        }
        row("js_divergence", &self.js_divergence);
        row("cosine_similarity", &self.cosine_similarity);
        out
    }
}

fn check_paired(a: &[AttributionProfile], b: &[AttributionProfile]) -> Result<()> {
    if a.is_empty() && b.is_empty() {
        return Err(MetricsError::NoProfiles);
    }
    let mut offenders: Vec<String> = Vec::new();
    for i in 0..a.len().max(b.len()) {
        match (a.get(i), b.get(i)) {
            (Some(x), Some(y)) if x.id == y.id && x.residues == y.residues => {}
            (x, y) => {
                for p in [x, y].into_iter().flatten() {
                    if !offenders.contains(&p.id) {
                        offenders.push(p.id.clone());
                    }
                }
            }
        }
    }
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(MetricsError::Unpaired(offenders))
    }
}

pub fn compare_models(a: &[AttributionProfile], b: &[AttributionProfile]) -> Result<SimilarityReport> {
    check_paired(a, b)?;
    let per = |f: fn(&[f64], &[f64]) -> Result<f64>| -> Result<MeanVar> {
        let xs = a.iter().zip(b).map(|(x, y)| f(&x.scores, &y.scores)).collect::<Result<Vec<_>>>()?;
        Ok(MeanVar::of(&xs))
    };
    let mut top = Vec::new();
    for i in [1, 2] {
        let hits = a
            .iter()
            .zip(b)
            .map(|(x, y)| top_i_overlapped(x, y, i).map(|h| if h { 1.0 } else { 0.0 }))
            .collect::<Result<Vec<_>>>()?;
        top.push((i, MeanVar::of(&hits)));
    }
    Ok(SimilarityReport {
        kendall_tau: per(kendall_tau)?,
        spearman_footrule: per(spearman_footrule)?,
        top_i_overlap: top,
        js_divergence: per(js_divergence)?,
        cosine_similarity: per(cosine_similarity)?,
    })
}
