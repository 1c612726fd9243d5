use std::cell::Cell;

use comodel::attribution::*;
use comodel::autodiff::{Tape, Tensor, Var};
use comodel::data::{encode_sequence, synthetic_aromatic_dataset, Sequence, TaskKind};
use comodel::encoders::{CoModel, Route, SeqEncoderConfig};
use comodel::fusion::FusionKind;
use comodel::training::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type R<T> = Result<T, AttributionError>;

/// `f(H) = 5 + Σ_rows w2 · leaky(H W1 + b1)`; the offset keeps `f` positive on the path.
struct TwoLayer {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    offset: f64,
}

impl TwoLayer {
    fn random(rng: &mut ChaCha8Rng, d: usize, k: usize) -> Self {
        let mut u = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        TwoLayer {
            w1: Tensor::matrix(d, k, u(d * k)).unwrap(),
            b1: Tensor::vector(u(k)),
            w2: Tensor::vector(u(k)),
            offset: 5.0,
        }
    }

    /// Plain evaluation of `|f(H)|`, independent of the tape.
    fn loss_direct(&self, h: &Tensor) -> f64 {
        let (n, d) = (h.shape()[0], h.shape()[1]);
        let k = self.w2.len();
        let mut f = self.offset;
        for r in 0..n {
            for j in 0..k {
                let z: f64 =
                    (0..d).map(|i| h.data()[r * d + i] * self.w1.data()[i * k + j]).sum::<f64>() + self.b1.data()[j];
                let a = if z > 0.0 { z } else { 0.01 * z };
                f += a * self.w2.data()[j];
            }
        }
        f.abs()
    }
}

impl EmbeddedModel for TwoLayer {
    fn forward_embedded(&self, t: &mut Tape, h: Var) -> R<Var> {
        let w1 = t.constant(self.w1.clone());
        let b1 = t.constant(self.b1.clone());
        let w2 = t.constant(self.w2.clone());
        let z = t.matmul(h, w1)?;
        let z = t.add_row(z, b1)?;
        let a = t.leaky_relu(z)?;
        let y = t.mul_row(a, w2)?;
        let s = t.sum(y)?;
        let off = t.constant(Tensor::scalar(self.offset));
        let out = t.add(s, off)?;
        Ok(t.reshape(out, &[1])?)
    }

    fn embedded(&self) -> R<Tensor> {
        unreachable!()
    }
}

fn gap(model: &TwoLayer, h: &Tensor, m: usize) -> f64 {
    let s = integrated_gradients(model, h, AttributionLoss::Regression, m).unwrap();
    let delta = model.loss_direct(h) - model.loss_direct(&Tensor::zeros(h.shape()));
    (s.sum() - delta).abs() / delta.abs()
}

#[test]
fn completeness_on_a_nonlinear_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let model = TwoLayer::random(&mut rng, 6, 5);
    let h = Tensor::matrix(4, 6, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let g = gap(&model, &h, 300);
    assert!(g <= 0.01, "completeness gap {g}");
}

#[test]
fn refinement_never_hurts() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..20 {
        let model = TwoLayer::random(&mut rng, 6, 5);
        let h = Tensor::matrix(4, 6, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (g300, g10) = (gap(&model, &h, 300), gap(&model, &h, 10));
        assert!(g300 <= g10, "refinement: {g300} > {g10}");
    }
}

#[test]
fn m1_is_gradient_times_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = TwoLayer::random(&mut rng, 3, 4);
    let h = Tensor::matrix(2, 3, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let s = integrated_gradients(&model, &h, AttributionLoss::Regression, 1).unwrap();
    let mut t = Tape::new();
    let x = t.leaf(h.clone());
    let out = model.forward_embedded(&mut t, x).unwrap();
    let l = attribution_loss(&mut t, out, AttributionLoss::Regression).unwrap();
    let g = t.backward(l).unwrap().wrt(x);
    assert_eq!(s, h.zip_map(&g, |a, b| a * b));
}

struct Shifty {
    calls: Cell<usize>,
}

impl EmbeddedModel for Shifty {
    fn forward_embedded(&self, t: &mut Tape, h: Var) -> R<Var> {
        let s = t.sum(h)?;
        Ok(t.reshape(s, &[1])?)
    }
    fn embedded(&self) -> R<Tensor> {
        unreachable!()
    }
    fn structure(&self) -> Option<Vec<(usize, usize)>> {
        let c = self.calls.get();
        self.calls.set(c + 1);
        Some(if c < 3 { vec![(0, 1)] } else { vec![(0, 1), (1, 2)] })
    }
}

#[test]
fn structure_guard_rejects_a_changing_graph() {
    let model = Shifty { calls: Cell::new(0) };
    let h = Tensor::vector(vec![1.0, 2.0]);
    let err = integrated_gradients(&model, &h, AttributionLoss::Regression, 10).unwrap_err();
    assert_eq!(err, AttributionError::StructureChanged { k: 3 });
}

fn tiny_model(kind: FusionKind, task: TaskKind) -> CoModel {
    let mut cfg = TrainConfig::for_task(task);
    cfg.num_classes = 3;
    cfg.seq = SeqEncoderConfig { d: 8, heads: 2, layers: 1, d_ff: 8, max_len: 10 };
    cfg.graph_layers = 2;
    cfg.fusion.kind = kind;
    CoModel::init(cfg.architecture(), 21).unwrap()
}

#[test]
fn profiles_are_normalised_and_deterministic() {
    for task in [TaskKind::Regression, TaskKind::Classification] {
        let model = tiny_model(FusionKind::RepCon, task);
        let recs = synthetic_aromatic_dataset(5, 10, 6);
        let peptides: Vec<(&str, &Sequence)> = recs.iter().map(|r| (r.id.as_str(), &r.sequence)).collect();
        for route in [Route::Seq, Route::Graph] {
            let a = attribute_dataset(&model, route, peptides.iter().copied(), 50).unwrap();
            let b = attribute_dataset(&model, route, peptides.iter().copied(), 50).unwrap();
            assert_eq!(a.len(), 5);
            for (p, r) in a.iter().zip(&recs) {
                assert_eq!(p.len(), r.sequence.len());
                assert!((p.scores.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            }
            let bits = |ps: &[AttributionProfile]| {
                ps.iter().flat_map(|p| p.scores.iter().map(|s| s.to_bits())).collect::<Vec<_>>()
            };
            assert_eq!(bits(&a), bits(&b));
        }
    }
}

#[test]
fn fused_baselines_have_no_route_to_attribute() {
    let model = tiny_model(FusionKind::Concat, TaskKind::Regression);
    let seq = Sequence::new("WFCW").unwrap();
    assert_eq!(
        attribute_sequence(&model, Route::Seq, "x", &seq, 5).unwrap_err(),
        AttributionError::MissingRoute("seq")
    );
    let seq_only = tiny_model(FusionKind::SeqOnly, TaskKind::Regression);
    assert!(attribute_sequence(&seq_only, Route::Graph, "x", &seq, 5).is_err());
    let p = attribute_sequence(&seq_only, Route::Seq, "x", &seq, 5).unwrap();
    assert_eq!(p.formatted().matches(':').count(), 4);
    assert!(SeqRouteModel::new(&seq_only, encode_sequence(&seq)).is_ok());
}
