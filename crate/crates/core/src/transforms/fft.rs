//! FFT front end. Real inputs are zero-padded to the next power of two.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Padded transform length for an input of `n` samples.
pub fn padded_len(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Forward DFT of `x` zero-padded to a power of two (unnormalised).
pub fn fft(x: &[f64]) -> Vec<Complex64> {
    let n = padded_len(x.len());
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    plan(n, false).process(&mut buf);
    buf
}

/// Forward DFT at the input's own length (no padding).
pub fn dft_exact(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf);
    buf
}

/// In-place forward DFT of arbitrary length.
pub fn fft_in_place(buf: &mut [Complex64]) {
    if !buf.is_empty() {
        plan(buf.len(), false).process(buf);
    }
}

/// Inverse DFT with 1/N normalisation, so `ifft(fft(x))` returns `x`.
pub fn ifft(spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buf = spectrum.to_vec();
    ifft_in_place(&mut buf);
    buf
}

pub fn ifft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    let n = buf.len();
    plan(n, true).process(buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
}

/// Biased autocorrelation for lags `0..x.len()`.
pub fn autocorrelation(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = padded_len(2 * x.len());
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    fft_in_place(&mut buf);
    buf.iter_mut().for_each(|c| *c = Complex64::new(c.norm_sqr(), 0.0));
    ifft_in_place(&mut buf);
    buf.truncate(x.len());
    buf.into_iter().map(|c| c.re).collect()
}
