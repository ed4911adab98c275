//! Thin FFT layer over `rustfft` with plan caching and 1d/2d transforms.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((n, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

/// In-place unnormalized forward/inverse FFT of a length-`n` buffer.
pub fn fft1(buf: &mut [Complex64], inverse: bool) {
    plan(buf.len(), inverse).process(buf);
}

/// In-place unnormalized 2d FFT of an `n x n` row-major buffer.
pub fn fft2(buf: &mut [Complex64], n: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), n * n);
    let p = plan(n, inverse);
    for row in buf.chunks_exact_mut(n) {
        p.process(row);
    }
    let mut col = vec![Complex64::default(); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = buf[i * n + j];
        }
        p.process(&mut col);
        for i in 0..n {
            buf[i * n + j] = col[i];
        }
    }
}

/// Dimension-dispatching transform; `len` is samples per axis.
pub fn fft_nd(buf: &mut [Complex64], dim: usize, len: usize, inverse: bool) {
    match dim {
        1 => fft1(buf, inverse),
        2 => fft2(buf, len, inverse),
        _ => unreachable!("only d = 1, 2 are supported"),
    }
}
