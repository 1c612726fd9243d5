use comodel::attribution::AttributionProfile;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn direct_circular_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len();
    (0..d).map(|k| (0..d).map(|j| a[j] * b[(k + d - j) % d]).sum()).collect()
}

/// Straight transcription of the symmetric loss: each of the 2B representations
/// anchors one softmax over its positive and the 2(B-1) cross-peptide views.
pub fn infonce_oracle(s: &[Vec<f64>], g: &[Vec<f64>], tau: f64) -> f64 {
    let b = s.len();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>() / tau;
    let mut total = 0.0;
    for i in 0..b {
        for (anchor, positive) in [(&s[i], &g[i]), (&g[i], &s[i])] {
            let pos = dot(anchor, positive).exp();
            let mut denom = pos;
            for j in (0..b).filter(|&j| j != i) {
                denom += dot(anchor, &s[j]).exp() + dot(anchor, &g[j]).exp();
            }
            total += -(pos / denom).ln();
        }
    }
    total / (2 * b) as f64
}

pub fn random_batch(rng: &mut ChaCha8Rng, b: usize, d: usize) -> Vec<Vec<f64>> {
    (0..b).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn kendall_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let (mut c, mut d) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i < j {
                let s = (a[i] - a[j]) * (b[i] - b[j]);
                if s > 0.0 {
                    c += 1.0;
                } else if s < 0.0 {
                    d += 1.0;
                }
            }
        }
    }
    (c - d) / (n * (n - 1) / 2) as f64
}

/// Rank by counting how many entries beat each position (earlier index wins ties).
pub fn rank_oracle(x: &[f64]) -> Vec<usize> {
    (0..x.len()).map(|i| 1 + (0..x.len()).filter(|&j| x[j] > x[i] || (x[j] == x[i] && j < i)).count()).collect()
}

pub fn footrule_oracle(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (rank_oracle(a), rank_oracle(b));
    let d: f64 = ra.iter().zip(&rb).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum();
    1.0 - d / ((a.len() * a.len()) / 2) as f64
}

pub fn top_oracle(a: &[f64], b: &[f64], i: usize) -> bool {
    let (ra, rb) = (rank_oracle(a), rank_oracle(b));
    (0..a.len()).any(|p| ra[p] <= i && rb[p] <= i)
}

pub fn js_oracle(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| {
        let c: Vec<f64> = v.iter().map(|x| if *x < 0.0 { 0.0 } else { *x }).collect();
        let s: f64 = c.iter().sum();
        c.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (p, q) = (norm(a), norm(b));
    let mut js = 0.0;
    for k in 0..p.len() {
        let m = (p[k] + q[k]) / 2.0;
        if p[k] > 0.0 {
            js += 0.5 * p[k] * (p[k] / m).ln();
        }
        if q[k] > 0.0 {
            js += 0.5 * q[k] * (q[k] / m).ln();
        }
    }
    js
}

pub fn cosine_oracle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = (0..a.len()).map(|k| a[k] * b[k]).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn random_profile(rng: &mut ChaCha8Rng, id: usize, n: usize) -> AttributionProfile {
    // Coarse values so ties occur; a few negatives as in real signed profiles.
    let raw: Vec<f64> = (0..n).map(|_| (rng.gen_range(-2..10) as f64) / 10.0).collect();
    let scores = if raw.iter().sum::<f64>() > 0.0 { raw } else { vec![1.0; n] };
    AttributionProfile { id: id.to_string(), residues: (0..n).map(|_| 'A').collect(), scores }
}
