//! Thin FFT helpers shared by the channel, ranging and waveform modules.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn plan_forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub fn plan_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// In-place forward FFT (unnormalized).
pub fn fft_in_place(buf: &mut [Complex64]) {
    plan_forward(buf.len()).process(buf);
}

/// In-place inverse FFT, scaled by 1/len.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    plan_inverse(buf.len()).process(buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
}

/// Forward FFT of `data` (unnormalized).
pub fn fft(data: &[Complex64]) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    fft_in_place(&mut buf);
    buf
}

/// Inverse FFT of `data`, scaled by 1/len so `ifft(fft(x)) == x`.
pub fn ifft(data: &[Complex64]) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    ifft_in_place(&mut buf);
    buf
}

/// Signed frequency of FFT bin `k` for a transform of length `n`, in cycles
/// per sample. The Nyquist bin of an even-length transform maps to -0.5.
pub fn bin_frequency(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64 / n as f64
    } else {
        k as f64 / n as f64 - 1.0
    }
}

/// Smallest length >= `n` whose only prime factors are 2, 3 and 5.
pub fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}
