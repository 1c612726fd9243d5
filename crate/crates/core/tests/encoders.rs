use comodel::autodiff::Tape;
use comodel::data::{build_graph, encode_sequence, Sequence, BEAD_VOCAB};
use comodel::encoders::{GraphEncoderConfig, SeqEncoderConfig};
use comodel::params::{Binder, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph_rep(cfg: &GraphEncoderConfig, store: &ParamStore, g: &comodel::data::BeadGraph) -> Vec<f64> {
    let mut tape = Tape::new();
    let mut binder = Binder::frozen(store);
    let h = cfg.encode(&mut tape, &mut binder, "graph", g).unwrap();
    tape.value(h).data().to_vec()
}

#[test]
fn graph_encoder_is_permutation_invariant() {
    let cfg = GraphEncoderConfig { d: 16, layers: 3, vocab: BEAD_VOCAB };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    cfg.init_params("graph", &mut store, &mut rng);
    for s in ["WF", "ACDEFGHIKLMNPQRSTVWY", "GAGA", "YYRW"] {
        let g = build_graph(&Sequence::new(s).unwrap());
        let base = graph_rep(&cfg, &store, &g);
        for _ in 0..5 {
            let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
            perm.shuffle(&mut rng);
            let other = graph_rep(&cfg, &store, &g.permuted(&perm));
            let diff = base.iter().zip(&other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-12, "{s}: {diff}");
        }
    }
}

#[test]
fn encoders_produce_finite_d_vectors() {
    let seq_cfg = SeqEncoderConfig { d: 8, heads: 2, layers: 2, d_ff: 16, max_len: 12 };
    let graph_cfg = GraphEncoderConfig { d: 8, layers: 2, vocab: BEAD_VOCAB };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    seq_cfg.init_params("seq", &mut store, &mut rng);
    graph_cfg.init_params("graph", &mut store, &mut rng);
    for s in ["G", "A", "W", "KLVFFAE", "ACDEFGHIKLMN"] {
        let seq = Sequence::new(s).unwrap();
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(&store);
        let hs = seq_cfg.encode(&mut tape, &mut binder, "seq", &encode_sequence(&seq)).unwrap();
        let hg = graph_cfg.encode(&mut tape, &mut binder, "graph", &build_graph(&seq)).unwrap();
        for h in [hs, hg] {
            assert_eq!(tape.shape(h), &[8]);
            assert!(tape.value(h).is_finite());
        }
    }
    let too_long = encode_sequence(&Sequence::new("ACDEFGHIKLMNP").unwrap());
    let mut tape = Tape::new();
    assert!(seq_cfg.encode(&mut tape, &mut Binder::frozen(&store), "seq", &too_long).is_err());
}
