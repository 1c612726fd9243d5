//! Peptide datasets: parsing, token encoding, bead graphs, splits and batches.

use std::cell::Cell;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// One-letter amino-acid codes in token order.
pub const ALPHABET: [char; 20] =
    ['A', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L', 'M', 'N', 'P', 'Q', 'R', 'S', 'T', 'V', 'W', 'Y'];

pub const DEFAULT_MAX_LEN: usize = 50;

/// Bead type shared by every backbone bead.
pub const BACKBONE_BEAD: usize = 0;

/// Number of distinct bead types: one backbone type plus one per (letter, side slot).
pub const BEAD_VOCAB: usize = 1 + side_bead_total();

const AROMATIC: [char; 3] = ['F', 'W', 'Y'];

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("malformed header {found:?}: expected `sequence,label`")]
    Header { found: String },
    #[error("row {row}: invalid amino-acid character {ch:?}")]
    Alphabet { row: usize, ch: char },
    #[error("row {row}: empty sequence")]
    EmptySequence { row: usize },
    #[error("row {row}: sequence length {len} exceeds maximum {max}")]
    TooLong { row: usize, len: usize, max: usize },
    #[error("row {row}: cannot parse label {raw:?} for {task} task")]
    Label { row: usize, raw: String, task: TaskKind },
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("dataset needs at least {needed} records, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("split ratios must be positive and sum to 1, got {0:?}")]
    Ratios((f64, f64, f64)),
    #[error("batch size must be at least 2, got {0}")]
    BatchSize(usize),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Regression,
    Classification,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Regression => f.write_str("regression"),
            TaskKind::Classification => f.write_str("classification"),
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regression" => Ok(TaskKind::Regression),
            "classification" => Ok(TaskKind::Classification),
            other => Err(format!("unknown task {other:?} (expected regression|classification)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Label {
    Value(f64),
    Class(usize),
}

impl Label {
    pub fn value(&self) -> f64 {
        match *self {
            Label::Value(v) => v,
            Label::Class(c) => c as f64,
        }
    }
}

/// A validated peptide sequence over [`ALPHABET`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sequence(String);

impl Sequence {
    /// Validates `raw` (already upper-cased) against the alphabet and length limit.
    /// `row` is only used for error reporting.
    pub fn parse(raw: &str, max_len: usize, row: usize) -> Result<Self, DataError> {
        if raw.is_empty() {
            return Err(DataError::EmptySequence { row });
        }
        if let Some(ch) = raw.chars().find(|c| letter_index(*c).is_none()) {
            return Err(DataError::Alphabet { row, ch });
        }
        let len = raw.chars().count();
        if len > max_len {
            return Err(DataError::TooLong { row, len, max: max_len });
        }
        Ok(Sequence(raw.to_string()))
    }

    pub fn new(raw: &str) -> Result<Self, DataError> {
        Self::parse(raw, DEFAULT_MAX_LEN, 1)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn residues(&self) -> impl Iterator<Item = char> + '_ {
        self.0.chars()
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeptideRecord {
    pub id: String,
    pub sequence: Sequence,
    pub label: Label,
}

/// Unlabelled peptide read from FASTA.
#[derive(Debug, Clone, PartialEq)]
pub struct FastaRecord {
    pub id: String,
    pub sequence: Sequence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<usize>,
    pub positions: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Coarse-grained bead graph of a peptide.
///
/// Nodes are laid out residue by residue: the backbone bead first, then that
/// residue's side-chain beads in chain order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeadGraph {
    pub node_types: Vec<usize>,
    /// Undirected edges, each stored once with `a < b`.
    pub edges: Vec<(usize, usize)>,
    /// Symmetric adjacency lists derived from `edges`.
    pub neighbors: Arc<Vec<Vec<usize>>>,
    pub residue_of_node: Vec<usize>,
}

impl BeadGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_residues(&self) -> usize {
        self.residue_of_node.iter().max().map_or(0, |m| m + 1)
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> BeadGraph {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n, "permutation length");
        let mut node_types = vec![0; n];
        let mut residue_of_node = vec![0; n];
        for i in 0..n {
            node_types[perm[i]] = self.node_types[i];
            residue_of_node[perm[i]] = self.residue_of_node[i];
        }
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (perm[a], perm[b]);
                (x.min(y), x.max(y))
            })
            .collect();
        let neighbors = adjacency_lists(n, &edges);
        BeadGraph { node_types, edges, neighbors, residue_of_node }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PeptideRecord>,
    pub validation: Vec<PeptideRecord>,
    pub test: Vec<PeptideRecord>,
    pub seed: u64,
}

pub fn letter_index(c: char) -> Option<usize> {
    ALPHABET.iter().position(|&a| a == c)
}

pub fn is_aromatic(c: char) -> bool {
    AROMATIC.contains(&c)
}

/// Side-chain bead count of each residue in the simplified coarse-grained mapping.
pub const fn side_beads(c: char) -> usize {
    match c {
        'G' | 'A' => 0,
        'F' | 'H' | 'R' | 'Y' => 2,
        'W' => 3,
        _ => 1,
    }
}

const fn side_bead_total() -> usize {
    let mut total = 0;
    let mut i = 0;
    while i < ALPHABET.len() {
        total += side_beads(ALPHABET[i]);
        i += 1;
    }
    total
}

/// Bead type of side bead `slot` (0-based) of residue `c`.
fn side_bead_type(c: char, slot: usize) -> usize {
    let offset: usize = ALPHABET.iter().take_while(|&&a| a != c).map(|&a| side_beads(a)).sum();
    1 + offset + slot
}

pub fn encode_sequence(seq: &Sequence) -> TokenSequence {
    let tokens: Vec<usize> = seq.residues().map(|c| letter_index(c).expect("validated sequence")).collect();
    let positions = (0..tokens.len()).collect();
    TokenSequence { tokens, positions }
}

thread_local! {
    static GRAPH_BUILDS: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`build_graph`] calls made on the current thread.
pub fn graph_build_count() -> u64 {
    GRAPH_BUILDS.with(|c| c.get())
}

pub fn reset_graph_build_count() {
    GRAPH_BUILDS.with(|c| c.set(0));
}

pub fn build_graph(seq: &Sequence) -> BeadGraph {
    GRAPH_BUILDS.with(|c| c.set(c.get() + 1));

    let mut node_types = Vec::new();
    let mut residue_of_node = Vec::new();
    let mut edges = Vec::new();
    let mut prev_backbone: Option<usize> = None;
    for (res, c) in seq.residues().enumerate() {
        let bb = node_types.len();
        node_types.push(BACKBONE_BEAD);
        residue_of_node.push(res);
        if let Some(p) = prev_backbone {
            edges.push((p, bb));
        }
        let mut prev = bb;
        for slot in 0..side_beads(c) {
            let node = node_types.len();
            node_types.push(side_bead_type(c, slot));
            residue_of_node.push(res);
            edges.push((prev, node));
            prev = node;
        }
        prev_backbone = Some(bb);
    }
    let neighbors = adjacency_lists(node_types.len(), &edges);
    BeadGraph { node_types, edges, neighbors, residue_of_node }
}

fn adjacency_lists(n: usize, edges: &[(usize, usize)]) -> Arc<Vec<Vec<usize>>> {
    let mut neighbors = vec![Vec::new(); n];
    for &(a, b) in edges {
        neighbors[a].push(b);
        neighbors[b].push(a);
    }
    Arc::new(neighbors)
}

/// Parses a `sequence,label` CSV file.
pub fn parse_dataset(path: impl AsRef<Path>, task: TaskKind, max_len: usize) -> Result<Vec<PeptideRecord>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| DataError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    parse_dataset_str(&text, task, max_len)
}

pub fn parse_dataset_str(text: &str, task: TaskKind, max_len: usize) -> Result<Vec<PeptideRecord>, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| DataError::Header { found: e.to_string() })?.clone();
    if header.len() != 2 || &header[0] != "sequence" || &header[1] != "label" {
        return Err(DataError::Header { found: header.iter().collect::<Vec<_>>().join(",") });
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| DataError::Row { row: row_no, msg: e.to_string() })?;
        if row.len() != 2 {
            return Err(DataError::Row { row: row_no, msg: format!("expected 2 fields, found {}", row.len()) });
        }
        let sequence = Sequence::parse(&row[0], max_len, row_no)?;
        let raw = &row[1];
        let label = match task {
            TaskKind::Regression => raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(Label::Value),
            TaskKind::Classification => raw.parse::<usize>().ok().map(Label::Class),
        }
        .ok_or_else(|| DataError::Label { row: row_no, raw: raw.to_string(), task })?;
        records.push(PeptideRecord { id: row_no.to_string(), sequence, label });
    }
    Ok(records)
}

/// Parses FASTA text; sequence lines are concatenated and upper-cased.
pub fn parse_fasta_str(text: &str, max_len: usize) -> Result<Vec<FastaRecord>, DataError> {
    let mut out = Vec::new();
    let mut current: Option<(String, String)> = None;
    let mut record_no = 0;
    let finish = |cur: Option<(String, String)>, out: &mut Vec<FastaRecord>, n: usize| -> Result<(), DataError> {
        if let Some((id, seq)) = cur {
            let sequence = Sequence::parse(&seq, max_len, n)?;
            out.push(FastaRecord { id, sequence });
        }
        Ok(())
    };
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            finish(current.take(), &mut out, record_no)?;
            record_no += 1;
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            let id = if id.is_empty() { record_no.to_string() } else { id };
            current = Some((id, String::new()));
        } else {
            match current.as_mut() {
                Some((_, seq)) => seq.push_str(&line.to_ascii_uppercase()),
                None => return Err(DataError::Row { row: 1, msg: "sequence data before the first `>` header".into() }),
            }
        }
    }
    finish(current, &mut out, record_no)?;
    Ok(out)
}

pub fn parse_fasta(path: impl AsRef<Path>, max_len: usize) -> Result<Vec<FastaRecord>, DataError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| DataError::Io { path: path.display().to_string(), msg: e.to_string() })?;
    parse_fasta_str(&text, max_len)
}

/// Deterministic shuffle under `seed`, then a contiguous train/validation/test cut.
pub fn split_dataset(records: &[PeptideRecord], ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit, DataError> {
    let (r_tr, r_va, r_te) = ratios;
    if !(r_tr > 0.0 && r_va > 0.0 && r_te > 0.0) || ((r_tr + r_va + r_te) - 1.0).abs() > 1e-9 {
        return Err(DataError::Ratios(ratios));
    }
    let n = records.len();
    if n < 3 {
        return Err(DataError::TooFew { needed: 3, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_tr = ((n as f64) * r_tr).round() as usize;
    let n_va = (((n as f64) * r_va).round() as usize).min(n - n_tr);
    let take = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: take(&order[..n_tr]),
        validation: take(&order[n_tr..n_tr + n_va]),
        test: take(&order[n_tr + n_va..]),
        seed,
    })
}

/// Shuffled index batches over `n` records. A trailing batch of one is folded
/// into the previous batch so every batch has in-batch negatives.
pub fn make_batches(n: usize, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size < 2 {
        return Err(DataError::BatchSize(batch_size));
    }
    if n < 2 {
        return Err(DataError::TooFew { needed: 2, got: n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    Ok(batches)
}

/// Fraction of aromatic residues (F, W, Y).
pub fn aromatic_fraction(seq: &Sequence) -> f64 {
    let n = seq.len();
    seq.residues().filter(|c| is_aromatic(*c)).count() as f64 / n as f64
}

/// Uniform random peptides with lengths in `2..=max_len`, labelled by aromatic fraction.
pub fn synthetic_aromatic_dataset(n: usize, max_len: usize, seed: u64) -> Vec<PeptideRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_len = max_len.max(2);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(2..=max_len);
            let raw: String = (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect();
            let sequence = Sequence(raw);
            let label = Label::Value(aromatic_fraction(&sequence));
            PeptideRecord { id: (i + 1).to_string(), sequence, label }
        })
        .collect()
}

/// Writes records as a `sequence,label` CSV.
pub fn write_dataset_csv(records: &[PeptideRecord]) -> String {
    let mut out = String::from("sequence,label\n");
    for r in records {
        match r.label {
            Label::Value(v) => out.push_str(&format!("{},{:.6}\n", r.sequence, v)),
            Label::Class(c) => out.push_str(&format!("{},{}\n", r.sequence, c)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> Sequence {
        Sequence::new(s).unwrap()
    }

    #[test]
    fn parses_single_row() {
        let recs = parse_dataset_str("sequence,label\nFLER,1.0\n", TaskKind::Regression, 50).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].sequence.as_str(), "FLER");
        assert_eq!(recs[0].label, Label::Value(1.0));
    }

    #[test]
    fn crlf_and_classification() {
        let recs = parse_dataset_str("sequence,label\r\nAC,1\r\nWW,0\r\n", TaskKind::Classification, 50).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].label, Label::Class(0));
    }

    #[test]
    fn rejects_bad_alphabet_with_row() {
        let err = parse_dataset_str("sequence,label\nFLXR,1.0\n", TaskKind::Regression, 50).unwrap_err();
        assert_eq!(err, DataError::Alphabet { row: 1, ch: 'X' });
    }

    #[test]
    fn rejects_header_label_and_length() {
        assert!(matches!(
            parse_dataset_str("seq,label\nA,1\n", TaskKind::Regression, 50),
            Err(DataError::Header { .. })
        ));
        assert!(matches!(
            parse_dataset_str("sequence,label\nAA,abc\n", TaskKind::Regression, 50),
            Err(DataError::Label { row: 1, .. })
        ));
        assert!(matches!(
            parse_dataset_str("sequence,label\nAA,1.5\n", TaskKind::Classification, 50),
            Err(DataError::Label { row: 1, .. })
        ));
        assert!(matches!(
            parse_dataset_str("sequence,label\nAA,1\nAAAA,1\n", TaskKind::Regression, 3),
            Err(DataError::TooLong { row: 2, len: 4, max: 3 })
        ));
    }

    #[test]
    fn fasta_concatenates_and_upcases() {
        let recs = parse_fasta_str(">p1 some text\nfl\nER\n>p2\nWFCW\n", 50).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, "p1");
        assert_eq!(recs[0].sequence.as_str(), "FLER");
        assert_eq!(recs[1].sequence.as_str(), "WFCW");
        assert!(parse_fasta_str(">p\nAZ\n", 50).is_err());
    }

    #[test]
    fn token_ids_follow_alphabet() {
        assert_eq!(encode_sequence(&seq("FLER")).tokens, vec![4, 9, 3, 14]);
        assert_eq!(encode_sequence(&seq("A")).tokens, vec![0]);
        let yy = encode_sequence(&seq("YY"));
        assert_eq!(yy.tokens, vec![19, 19]);
        assert_eq!(yy.positions, vec![0, 1]);
    }

    #[test]
    fn bead_graph_small_cases() {
        let ga = build_graph(&seq("GA"));
        assert_eq!(ga.num_nodes(), 2);
        assert_eq!(ga.edges, vec![(0, 1)]);

        let w = build_graph(&seq("W"));
        assert_eq!(w.num_nodes(), 4);
        assert_eq!(w.edges, vec![(0, 1), (1, 2), (2, 3)]);
        assert_eq!(w.node_types[0], BACKBONE_BEAD);
    }

    #[test]
    fn bead_types_are_distinct_per_slot() {
        let mut seen = std::collections::HashSet::new();
        for &c in ALPHABET.iter() {
            for slot in 0..side_beads(c) {
                let t = side_bead_type(c, slot);
                assert!(t > 0 && t < BEAD_VOCAB);
                assert!(seen.insert(t));
            }
        }
        assert_eq!(seen.len() + 1, BEAD_VOCAB);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let recs = synthetic_aromatic_dataset(100, 10, 1);
        let a = split_dataset(&recs, (0.8, 0.1, 0.1), 5).unwrap();
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (80, 10, 10));
        let b = split_dataset(&recs, (0.8, 0.1, 0.1), 5).unwrap();
        assert_eq!(a, b);

        let ten = synthetic_aromatic_dataset(10, 10, 1);
        let s = split_dataset(&ten, (0.8, 0.1, 0.1), 0).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));

        assert!(matches!(split_dataset(&recs[..2], (0.8, 0.1, 0.1), 5), Err(DataError::TooFew { .. })));
        assert!(split_dataset(&recs, (0.8, 0.1, 0.2), 5).is_err());
    }

    #[test]
    fn batches_fold_trailing_singleton() {
        let sizes = |n, b| make_batches(n, b, 3).unwrap().iter().map(Vec::len).collect::<Vec<_>>();
        assert_eq!(sizes(10, 4), vec![4, 4, 2]);
        assert_eq!(sizes(9, 4), vec![4, 5]);
        assert_eq!(make_batches(10, 1, 3), Err(DataError::BatchSize(1)));
        assert_eq!(make_batches(10, 4, 3), make_batches(10, 4, 3));
    }

    #[test]
    fn synthetic_labels_count_aromatics() {
        assert_eq!(aromatic_fraction(&seq("WFCW")), 0.75);
        assert_eq!(aromatic_fraction(&seq("GRAK")), 0.0);
        let a = synthetic_aromatic_dataset(50, 10, 7);
        assert_eq!(a, synthetic_aromatic_dataset(50, 10, 7));
        assert!(a.iter().all(|r| (2..=10).contains(&r.sequence.len())));
    }
}
