use std::sync::Arc;

use comodel::autodiff::{grad_check, AutodiffError, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type R<T> = Result<T, AutodiffError>;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const POINTS: usize = 10;

/// Carves consecutive slices of the flat input `x` into tensors of the given shapes.
pub fn split(tape: &mut Tape, x: Var, shapes: &[&[usize]]) -> R<Vec<Var>> {
    let mut start = 0;
    let mut out = Vec::new();
    for s in shapes {
        let n: usize = s.iter().product();
        let idx: Vec<usize> = (start..start + n).collect();
        let v = tape.select(x, &idx)?;
        out.push(tape.reshape(v, s)?);
        start += n;
    }
    Ok(out)
}

/// Contracts a non-scalar output with fixed irregular weights.
pub fn reduce(tape: &mut Tape, y: Var) -> R<Var> {
    if tape.value(y).len() == 1 && tape.shape(y).is_empty() {
        return Ok(y);
    }
    let shape = tape.shape(y).to_vec();
    let n = tape.value(y).len();
    let w: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.7).sin() + 0.3).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    tape.dot(w, y)
}

pub struct Case {
    pub name: &'static str,
    pub len: usize,
    /// Maps raw uniform samples into the primitive's smooth domain.
    pub domain: fn(f64) -> f64,
    pub f: fn(&mut Tape, Var) -> R<Var>,
}

pub fn ident(x: f64) -> f64 {
    x
}

pub fn away_from_zero(x: f64) -> f64 {
    x + 0.1 * x.signum()
}

pub fn positive(x: f64) -> f64 {
    0.2 + x.abs()
}

pub fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "matmul",
            len: 18,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[2, 3], &[3, 4]])?;
                t.matmul(v[0], v[1])
            },
        },
        Case {
            name: "add",
            len: 12,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[2, 3], &[2, 3]])?;
                let y = t.add(v[0], v[1])?;
                let y = t.elementwise_mul(y, v[0])?;
                reduce(t, y)
            },
        },
        Case {
            name: "sub",
            len: 12,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[2, 3], &[2, 3]])?;
                let y = t.sub(v[0], v[1])?;
                let y = t.elementwise_mul(y, y)?;
                reduce(t, y)
            },
        },
        Case {
            name: "elementwise_mul",
            len: 12,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[2, 3], &[2, 3]])?;
                t.elementwise_mul(v[0], v[1])
            },
        },
        Case {
            name: "add_row",
            len: 16,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[3, 4], &[4]])?;
                let y = t.add_row(v[0], v[1])?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "mul_row",
            len: 16,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[3, 4], &[4]])?;
                t.mul_row(v[0], v[1])
            },
        },
        Case {
            name: "scale",
            len: 6,
            domain: ident,
            f: |t, x| {
                let y = t.scale(x, -2.5)?;
                t.elementwise_mul(y, x)
            },
        },
        Case { name: "leaky_relu", len: 6, domain: away_from_zero, f: |t, x| t.leaky_relu(x) },
        Case {
            name: "softmax_axis1",
            len: 12,
            domain: ident,
            f: |t, x| {
                let x = t.reshape(x, &[3, 4])?;
                t.softmax(x, 1)
            },
        },
        Case {
            name: "softmax_axis0",
            len: 12,
            domain: ident,
            f: |t, x| {
                let x = t.reshape(x, &[3, 4])?;
                t.softmax(x, 0)
            },
        },
        Case {
            name: "layer_norm_axis1",
            len: 12,
            domain: ident,
            f: |t, x| {
                let x = t.reshape(x, &[3, 4])?;
                t.layer_norm(x, 1)
            },
        },
        Case {
            name: "layer_norm_axis0",
            len: 12,
            domain: ident,
            f: |t, x| {
                let x = t.reshape(x, &[3, 4])?;
                t.layer_norm(x, 0)
            },
        },
        Case {
            name: "embedding_gather",
            len: 15,
            domain: ident,
            f: |t, x| {
                let table = t.reshape(x, &[5, 3])?;
                let y = t.embedding_gather(table, &[4, 0, 4, 2])?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "mean_pool_axis0",
            len: 12,
            domain: ident,
            f: |t, x| {
                let x = t.reshape(x, &[3, 4])?;
                let y = t.mean_pool(x, 0)?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "mean_pool_axis1",
            len: 12,
            domain: ident,
            f: |t, x| {
                let x = t.reshape(x, &[3, 4])?;
                let y = t.mean_pool(x, 1)?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "concat_axis1",
            len: 10,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[2, 3], &[2, 2]])?;
                let y = t.concat(&[v[0], v[1]], 1)?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "concat_axis0",
            len: 9,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[2, 3], &[1, 3]])?;
                let y = t.concat(&[v[0], v[1]], 0)?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "stack",
            len: 12,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[4], &[4], &[4]])?;
                let y = t.stack(&[v[2], v[0], v[1]])?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "dot",
            len: 10,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[5], &[5]])?;
                t.dot(v[0], v[1])
            },
        },
        Case {
            name: "sum",
            len: 6,
            domain: ident,
            f: |t, x| {
                let y = t.elementwise_mul(x, x)?;
                t.sum(y)
            },
        },
        Case { name: "exp", len: 5, domain: ident, f: |t, x| t.exp(x) },
        Case { name: "log", len: 5, domain: positive, f: |t, x| t.log(x) },
        Case { name: "abs", len: 5, domain: away_from_zero, f: |t, x| t.abs(x) },
        Case {
            name: "mse_loss",
            len: 8,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[4], &[4]])?;
                t.mse_loss(v[0], v[1])
            },
        },
        Case {
            name: "cross_entropy_loss",
            len: 12,
            domain: ident,
            f: |t, x| {
                let x = t.reshape(x, &[3, 4])?;
                t.cross_entropy_loss(x, &[1, 0, 3])
            },
        },
        Case {
            name: "transpose",
            len: 6,
            domain: ident,
            f: |t, x| {
                let x = t.reshape(x, &[2, 3])?;
                let y = t.transpose(x)?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "reshape",
            len: 6,
            domain: ident,
            f: |t, x| {
                let y = t.reshape(x, &[3, 2])?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "slice_cols",
            len: 15,
            domain: ident,
            f: |t, x| {
                let x = t.reshape(x, &[3, 5])?;
                let y = t.slice_cols(x, 1, 4)?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "select",
            len: 6,
            domain: ident,
            f: |t, x| {
                let y = t.select(x, &[5, 0, 0, 3])?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "neighbor_mean",
            len: 12,
            domain: ident,
            f: |t, x| {
                let x = t.reshape(x, &[4, 3])?;
                let nbrs = Arc::new(vec![vec![1, 2], vec![0], vec![0, 1], vec![]]);
                let y = t.neighbor_mean(x, nbrs)?;
                t.elementwise_mul(y, y)
            },
        },
        Case {
            name: "circular_conv",
            len: 16,
            domain: ident,
            f: |t, x| {
                let v = split(t, x, &[&[8], &[8]])?;
                t.circular_conv(v[0], v[1])
            },
        },
        Case {
            name: "l2_normalize_rows",
            len: 12,
            domain: ident,
            f: |t, x| {
                let x = t.reshape(x, &[3, 4])?;
                t.l2_normalize_rows(x)
            },
        },
    ]
}

pub fn random_point(rng: &mut ChaCha8Rng, len: usize, domain: fn(f64) -> f64) -> Tensor {
    Tensor::vector((0..len).map(|_| domain(rng.gen_range(-1.0..1.0))).collect())
}

/// Every primitive checked at `POINTS` random points; returns one line per failure.
pub fn primitive_failures(seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for case in cases() {
        for p in 0..POINTS {
            let point = random_point(&mut rng, case.len, case.domain);
            let f = case.f;
            let report = grad_check(
                |t, x| {
                    let y = f(t, x)?;
                    reduce(t, y)
                },
                &point,
                EPS,
                TOL,
            )
            .unwrap();
            if !report.passed {
                failures.push(format!("{} point {p}: {report:?}", case.name));
            }
        }
    }
    failures
}
