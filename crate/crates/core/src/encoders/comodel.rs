use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EncoderError, GraphEncoderConfig, PredictorConfig, Result, SeqEncoderConfig};
use crate::autodiff::{write_checkpoint, Tape, Tensor, Var};
use crate::data::{BeadGraph, TaskKind, TokenSequence};
use crate::fusion::{fuse_for_predictor, FusionConfig, FusionKind};
use crate::params::{Binder, ParamStore};

const META_NAME: &str = "meta.arch";
const META_VERSION: f64 = 1.0;

/// Which backbone an operation runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Route {
    Seq,
    Graph,
}

impl Route {
    pub fn name(self) -> &'static str {
        match self {
            Route::Seq => "seq",
            Route::Graph => "graph",
        }
    }

    pub fn predictor_prefix(self) -> &'static str {
        match self {
            Route::Seq => "pred_seq",
            Route::Graph => "pred_graph",
        }
    }
}

impl std::str::FromStr for Route {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "seq" => Ok(Route::Seq),
            "graph" => Ok(Route::Graph),
            other => Err(format!("unknown route {other:?} (expected seq|graph)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Architecture {
    pub task: TaskKind,
    /// 1 for regression, the class count for classification.
    pub num_outputs: usize,
    pub seq: SeqEncoderConfig,
    pub graph: GraphEncoderConfig,
    pub pred_hidden_layers: usize,
    pub fusion: FusionConfig,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            task: TaskKind::Regression,
            num_outputs: 1,
            seq: SeqEncoderConfig::default(),
            graph: GraphEncoderConfig::default(),
            pred_hidden_layers: 1,
            fusion: FusionConfig::default(),
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        self.seq.validate()?;
        self.graph.validate()?;
        self.fusion.validate()?;
        if self.seq.d != self.graph.d {
            return Err(EncoderError::Config(format!(
                "sequence width {} and graph width {} differ",
                self.seq.d, self.graph.d
            )));
        }
        match (self.task, self.num_outputs) {
            (TaskKind::Regression, 1) => {}
            (TaskKind::Classification, c) if c >= 2 => {}
            (task, n) => return Err(EncoderError::Config(format!("{task} task cannot have {n} outputs"))),
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.seq.d
    }

    fn predictor(&self, input: usize) -> PredictorConfig {
        PredictorConfig { input, hidden: self.d(), hidden_layers: self.pred_hidden_layers, output: self.num_outputs }
    }

    pub fn route_predictor(&self) -> PredictorConfig {
        self.predictor(self.d())
    }

    pub fn fused_predictor(&self) -> Option<PredictorConfig> {
        self.fusion.kind.fused_width(self.d()).map(|w| self.predictor(w))
    }

    fn to_meta(self) -> Tensor {
        let f = |v: usize| v as f64;
        Tensor::vector(vec![
            META_VERSION,
            match self.task {
                TaskKind::Regression => 0.0,
                TaskKind::Classification => 1.0,
            },
            f(self.num_outputs),
            f(self.seq.d),
            f(self.seq.heads),
            f(self.seq.layers),
            f(self.seq.d_ff),
            f(self.seq.max_len),
            f(self.graph.d),
            f(self.graph.layers),
            f(self.graph.vocab),
            f(self.pred_hidden_layers),
            f(self.fusion.kind.code()),
            self.fusion.delta,
            self.fusion.lambda,
            self.fusion.tau,
            if self.fusion.normalize { 1.0 } else { 0.0 },
        ])
    }

    fn from_meta(t: &Tensor) -> Result<Self> {
        let m = t.data();
        if m.len() != 17 || m[0] != META_VERSION {
            return Err(EncoderError::Config("unrecognised checkpoint metadata".into()));
        }
        let u = |i: usize| m[i] as usize;
        let kind = FusionKind::from_code(u(12))
            .ok_or_else(|| EncoderError::Config(format!("unknown fusion code {}", m[12])))?;
        let arch = Architecture {
            task: if m[1] == 0.0 { TaskKind::Regression } else { TaskKind::Classification },
            num_outputs: u(2),
            seq: SeqEncoderConfig { d: u(3), heads: u(4), layers: u(5), d_ff: u(6), max_len: u(7) },
            graph: GraphEncoderConfig { d: u(8), layers: u(9), vocab: u(10) },
            pred_hidden_layers: u(11),
            fusion: FusionConfig { kind, delta: m[13], lambda: m[14], tau: m[15], normalize: m[16] != 0.0 },
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Parameter bundle for both encoders, their predictors and the fusion setup.
#[derive(Debug, Clone, PartialEq)]
pub struct CoModel {
    pub arch: Architecture,
    pub params: ParamStore,
}

fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl CoModel {
    /// Seeded initialisation. Each component draws from its own stream, so a
    /// component's initial weights depend only on the seed and its shape.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let kind = arch.fusion.kind;
        if kind.uses_seq() {
            arch.seq.init_params("seq", &mut params, &mut component_rng(seed, 1));
        }
        if kind.uses_graph() {
            arch.graph.init_params("graph", &mut params, &mut component_rng(seed, 2));
        }
        match arch.fused_predictor() {
            Some(p) => p.init_params("pred_fused", &mut params, &mut component_rng(seed, 5)),
            None => {
                if kind.uses_seq() {
                    arch.route_predictor().init_params("pred_seq", &mut params, &mut component_rng(seed, 3));
                }
                if kind.uses_graph() {
                    arch.route_predictor().init_params("pred_graph", &mut params, &mut component_rng(seed, 4));
                }
            }
        }
        Ok(CoModel { arch, params })
    }

    pub fn kind(&self) -> FusionKind {
        self.arch.fusion.kind
    }

    /// Whether `route` has its own encoder and predictor.
    pub fn has_route(&self, route: Route) -> bool {
        let kind = self.kind();
        !kind.is_fused()
            && match route {
                Route::Seq => kind.uses_seq(),
                Route::Graph => kind.uses_graph(),
            }
    }

    pub fn seq_repr(&self, tape: &mut Tape, binder: &mut Binder, seq: &TokenSequence) -> Result<Var> {
        self.arch.seq.encode(tape, binder, "seq", seq)
    }

    pub fn graph_repr(&self, tape: &mut Tape, binder: &mut Binder, g: &BeadGraph) -> Result<Var> {
        self.arch.graph.encode(tape, binder, "graph", g)
    }

    /// Route-specific predictor on `h` (`[d]` or `[B, d]`).
    pub fn predict_route(&self, tape: &mut Tape, binder: &mut Binder, route: Route, h: Var) -> Result<Var> {
        if !self.has_route(route) {
            return Err(EncoderError::MissingRoute(route.name()));
        }
        self.arch.route_predictor().forward(tape, binder, route.predictor_prefix(), h)
    }

    /// Shared predictor on the fused representation of one sample.
    pub fn predict_fused(&self, tape: &mut Tape, binder: &mut Binder, h_seq: Var, h_graph: Var) -> Result<Var> {
        let cfg = self.arch.fused_predictor().ok_or(crate::fusion::FusionError::NoFusedVector(self.kind()))?;
        let fused = fuse_for_predictor(tape, h_seq, h_graph, &self.arch.fusion)?;
        cfg.forward(tape, binder, "pred_fused", fused)
    }

    /// Route-only prediction (encoder then predictor) as plain values.
    pub fn predict_route_values(
        &self,
        route: Route,
        seq: Option<&TokenSequence>,
        g: Option<&BeadGraph>,
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(&self.params);
        let h = match route {
            Route::Seq => self.seq_repr(&mut tape, &mut binder, seq.ok_or(EncoderError::MissingRoute("seq input"))?)?,
            Route::Graph => {
                self.graph_repr(&mut tape, &mut binder, g.ok_or(EncoderError::MissingRoute("graph input"))?)?
            }
        };
        let out = self.predict_route(&mut tape, &mut binder, route, h)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Fused-baseline prediction as plain values.
    pub fn predict_fused_values(&self, seq: &TokenSequence, g: &BeadGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let mut binder = Binder::frozen(&self.params);
        let hs = self.seq_repr(&mut tape, &mut binder, seq)?;
        let hg = self.graph_repr(&mut tape, &mut binder, g)?;
        let out = self.predict_fused(&mut tape, &mut binder, hs, hg)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// `PCN1` checkpoint: all parameters followed by the architecture record.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.arch.to_meta();
        write_checkpoint(self.params.iter().chain(std::iter::once((META_NAME, &meta))))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let all = ParamStore::from_bytes(bytes)?;
        let meta =
            all.get(META_NAME).ok_or_else(|| EncoderError::Config("checkpoint has no architecture record".into()))?;
        let arch = Architecture::from_meta(meta)?;
        let mut params = ParamStore::new();
        for (name, t) in all.iter().filter(|(n, _)| *n != META_NAME) {
            params.insert(name, t.clone());
        }
        let reference = CoModel::init(arch, 0)?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(EncoderError::Config(format!("checkpoint parameter `{name}` missing or misshapen"))),
            }
        }
        Ok(CoModel { arch, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: FusionKind) -> Architecture {
        let mut a = Architecture {
            seq: SeqEncoderConfig { d: 8, heads: 2, layers: 1, d_ff: 8, max_len: 12 },
            ..Architecture::default()
        };
        a.graph.d = 8;
        a.graph.layers = 2;
        a.fusion.kind = kind;
        a
    }

    #[test]
    fn namespaces_follow_kind() {
        let m = CoModel::init(small(FusionKind::RepCon), 3).unwrap();
        for ns in ["seq", "graph", "pred_seq", "pred_graph"] {
            assert!(m.params.names_with_prefix(ns).next().is_some(), "{ns}");
        }
        let c = CoModel::init(small(FusionKind::Concat), 3).unwrap();
        assert!(c.params.names_with_prefix("pred_fused").next().is_some());
        assert!(c.params.names_with_prefix("pred_seq").next().is_none());
        assert_eq!(c.params.get("pred_fused.layer0.w").unwrap().shape(), &[16, 8]);
        let s = CoModel::init(small(FusionKind::SeqOnly), 3).unwrap();
        assert!(s.params.names_with_prefix("graph").next().is_none());
    }

    #[test]
    fn seq_init_independent_of_graph_components() {
        let a = CoModel::init(small(FusionKind::RepCon), 11).unwrap();
        let b = CoModel::init(small(FusionKind::SeqOnly), 11).unwrap();
        for (name, t) in b.params.iter() {
            assert_eq!(a.params.get(name), Some(t), "{name}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut arch = small(FusionKind::CompactBilinear);
        arch.fusion.delta = 0.25;
        let m = CoModel::init(arch, 9).unwrap();
        let back = CoModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), m.to_bytes());
    }
}
