use std::collections::BTreeSet;

use comodel::data::*;
use proptest::prelude::*;

/// All bonded pairs found by testing every node pair against the bonding rules:
/// consecutive backbone beads bond, and within a residue the beads form a chain
/// starting at the backbone bead.
fn brute_force_edges(g: &BeadGraph) -> BTreeSet<(usize, usize)> {
    let n = g.num_nodes();
    // Position of each node inside its residue chain (0 = backbone).
    let mut slot = vec![0usize; n];
    for i in 1..n {
        if g.residue_of_node[i] == g.residue_of_node[i - 1] {
            slot[i] = slot[i - 1] + 1;
        }
    }
    let mut out = BTreeSet::new();
    for a in 0..n {
        for b in a + 1..n {
            let (ra, rb) = (g.residue_of_node[a], g.residue_of_node[b]);
            let backbone_link = slot[a] == 0 && slot[b] == 0 && rb == ra + 1;
            let side_link = ra == rb && slot[b] == slot[a] + 1;
            if backbone_link || side_link {
                out.insert((a, b));
            }
        }
    }
    out
}

#[test]
fn wf_graph_matches_enumeration() {
    let g = build_graph(&Sequence::new("WF").unwrap());
    assert_eq!(g.num_nodes(), 7);
    assert_eq!(g.num_edges(), 6);
    let expected: BTreeSet<_> = [(0, 1), (0, 4), (1, 2), (2, 3), (4, 5), (5, 6)].into_iter().collect();
    let got: BTreeSet<_> = g.edges.iter().copied().collect();
    assert_eq!(got, expected);
    assert_eq!(brute_force_edges(&g), expected);
    assert_eq!(g.residue_of_node, vec![0, 0, 0, 0, 1, 1, 1]);
    assert_eq!(g.node_types.iter().filter(|&&t| t == BACKBONE_BEAD).count(), 2);
}

#[test]
fn side_bead_counts() {
    for (c, k) in [('G', 0), ('A', 0), ('F', 2), ('H', 2), ('R', 2), ('Y', 2), ('W', 3), ('K', 1), ('L', 1)] {
        assert_eq!(side_beads(c), k, "{c}");
        let g = build_graph(&Sequence::new(&c.to_string()).unwrap());
        assert_eq!(g.num_nodes(), 1 + k);
    }
}

#[test]
fn csv_and_fasta_errors() {
    let bad = parse_dataset_str("sequence,label\nAXK,1.0\n", TaskKind::Regression, 50);
    assert!(matches!(bad, Err(DataError::Alphabet { row: 1, ch: 'X' })));
    let ok = parse_dataset_str("sequence,label\nACDK, 0.5\nWW,1\n", TaskKind::Regression, 50).unwrap();
    assert_eq!(ok.len(), 2);
    assert_eq!(ok[1].label, Label::Value(1.0));
    let fa = parse_fasta_str(">p1\nacd\nKW\n>p2\nGG\n", 50).unwrap();
    assert_eq!(fa[0].sequence.as_str(), "ACDKW");
    assert_eq!(fa[1].id, "p2");
}

#[test]
fn synthetic_dataset_is_deterministic() {
    let a = write_dataset_csv(&synthetic_aromatic_dataset(1000, 10, 7));
    let b = write_dataset_csv(&synthetic_aromatic_dataset(1000, 10, 7));
    assert_eq!(a, b);
    assert_ne!(a, write_dataset_csv(&synthetic_aromatic_dataset(1000, 10, 8)));
}

fn peptide() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(ALPHABET.to_vec()), 1..30).prop_map(|v| v.into_iter().collect())
}

proptest! {
    #[test]
    fn graph_invariants(s in peptide()) {
        let seq = Sequence::new(&s).unwrap();
        let g = build_graph(&seq);
        let beads: usize = s.chars().map(|c| 1 + side_beads(c)).sum();
        prop_assert_eq!(g.num_nodes(), beads);
        // A chain-only bead graph is a tree.
        prop_assert_eq!(g.num_edges(), beads - 1);
        prop_assert!(g.edges.iter().all(|&(a, b)| a < b));
        let edges: BTreeSet<_> = g.edges.iter().copied().collect();
        prop_assert_eq!(edges, brute_force_edges(&g));
        prop_assert_eq!(g.num_residues(), s.len());
        prop_assert!(g.node_types.iter().all(|&t| t < BEAD_VOCAB));
        let degree_sum: usize = g.neighbors.iter().map(Vec::len).sum();
        prop_assert_eq!(degree_sum, 2 * g.num_edges());
    }

    #[test]
    fn encoding_roundtrip(s in peptide()) {
        let t = encode_sequence(&Sequence::new(&s).unwrap());
        let back: String = t.tokens.iter().map(|&i| ALPHABET[i]).collect();
        prop_assert_eq!(back, s.clone());
        prop_assert_eq!(t.positions, (0..s.len()).collect::<Vec<_>>());
    }

    #[test]
    fn split_partitions_records(n in 3usize..120, seed in 0u64..1000) {
        let recs = synthetic_aromatic_dataset(n, 6, seed);
        let split = split_dataset(&recs, (0.8, 0.1, 0.1), seed).unwrap();
        let mut ids: Vec<String> = split.train.iter().chain(&split.validation).chain(&split.test).map(|r| r.id.clone()).collect();
        ids.sort();
        let mut all: Vec<String> = recs.iter().map(|r| r.id.clone()).collect();
        all.sort();
        prop_assert_eq!(ids, all);
    }

    #[test]
    fn batches_cover_and_never_hold_one(n in 2usize..200, bs in 2usize..40, seed in 0u64..100) {
        let batches = make_batches(n, bs, seed).unwrap();
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        prop_assert!(batches.iter().all(|b| b.len() >= 2));
    }

    #[test]
    fn synthetic_labels_are_aromatic_fraction(seed in 0u64..1000) {
        for r in synthetic_aromatic_dataset(20, 10, seed) {
            let count = r.sequence.residues().filter(|c| "FWY".contains(*c)).count();
            prop_assert_eq!(r.label.value(), count as f64 / r.sequence.len() as f64);
            prop_assert!((2..=10).contains(&r.sequence.len()));
        }
    }
}
