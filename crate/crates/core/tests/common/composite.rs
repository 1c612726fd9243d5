use comodel::autodiff::{compare_gradients, Tape, Tensor};
use comodel::data::{synthetic_aromatic_dataset, Label, TaskKind};
use comodel::encoders::{CoModel, SeqEncoderConfig};
use comodel::fusion::FusionKind;
use comodel::params::Binder;
use comodel::training::*;

pub fn small_config(kind: FusionKind, lambda: f64) -> TrainConfig {
    let mut cfg = TrainConfig::for_task(TaskKind::Regression);
    cfg.seq = SeqEncoderConfig { d: 8, heads: 2, layers: 1, d_ff: 8, max_len: 6 };
    cfg.graph_layers = 2;
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.fusion.kind = kind;
    cfg.fusion.lambda = lambda;
    cfg
}

/// Tape gradient of the full objective against central differences for every parameter.
pub fn check_composite(kind: FusionKind, task: TaskKind, seed: u64) -> Result<(), String> {
    let mut cfg = small_config(kind, 0.3);
    cfg.task = task;
    cfg.num_classes = 3;
    cfg.fusion.tau = 0.7;
    let mut records = synthetic_aromatic_dataset(2, 5, seed);
    if task == TaskKind::Classification {
        records[0].label = Label::Class(2);
        records[1].label = Label::Class(0);
    }
    let model = CoModel::init(cfg.architecture(), seed).unwrap();
    let samples = prepare_samples(&records, true);
    let batch: Vec<_> = samples.iter().collect();

    let mut tape = Tape::new();
    let mut binder = Binder::new(&model.params);
    let loss = batch_loss(&model, &mut tape, &mut binder, &batch).unwrap();
    let grads = binder.collect_grads(&tape.backward(loss.total).unwrap());

    for (name, point) in model.params.iter() {
        let value = |p: &Tensor| {
            let mut m = model.clone();
            *m.params.get_mut(name).unwrap() = p.clone();
            let mut tape = Tape::new();
            let mut binder = Binder::frozen(&m.params);
            let l = batch_loss(&m, &mut tape, &mut binder, &batch).map_err(|e| match e {
                TrainError::Autodiff(a) => a,
                other => panic!("{other}"),
            })?;
            Ok(tape.value(l.total).item())
        };
        let analytic = grads.get(name).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));
        let report = compare_gradients(&analytic, value, point, 1e-5, 1e-3).unwrap();
        if !report.passed {
            return Err(format!("{kind} {task} seed {seed} {name}: {report:?}"));
        }
    }
    Ok(())
}

/// The composite sweep: RepCon over ten seeds plus classification and two fused baselines.
pub fn composite_failures() -> Vec<String> {
    let mut runs: Vec<(FusionKind, TaskKind, u64)> =
        (0..10).map(|s| (FusionKind::RepCon, TaskKind::Regression, s)).collect();
    runs.push((FusionKind::RepCon, TaskKind::Classification, 3));
    runs.push((FusionKind::Concat, TaskKind::Regression, 4));
    runs.push((FusionKind::CompactBilinear, TaskKind::Regression, 5));
    runs.into_iter().filter_map(|(k, t, s)| check_composite(k, t, s).err()).collect()
}
