//! Circular convolution and correlation through the discrete Fourier transform.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn spectrum(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn inverse_real(mut buf: Vec<Complex<f64>>, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = buf.len();
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// `out[k] = sum_i a[i] * b[(k - i) mod n]`, computed as `IDFT(DFT(a) * DFT(b))`.
pub fn circular_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let fa = spectrum(a, &mut planner);
    let fb = spectrum(b, &mut planner);
    let prod = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    inverse_real(prod, &mut planner)
}

/// `out[i] = sum_k g[k] * b[(k - i) mod n]`, the adjoint of convolution by `b`.
pub fn circular_correlation(g: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(g.len(), b.len());
    if g.is_empty() {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let fg = spectrum(g, &mut planner);
    let fb = spectrum(b, &mut planner);
    let prod = fg.iter().zip(&fb).map(|(x, y)| x * y.conj()).collect();
    inverse_real(prod, &mut planner)
}
