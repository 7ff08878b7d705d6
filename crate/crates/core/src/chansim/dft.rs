//! Unitary DFT over the antenna axis.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

type Plans = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

thread_local! {
    static PLANS: RefCell<HashMap<usize, Plans>> = RefCell::new(HashMap::new());
}

fn plans(len: usize) -> Plans {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry(len)
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
            })
            .clone()
    })
}

fn transform(x: &[Complex64], inverse: bool) -> Vec<Complex64> {
    if x.is_empty() {
        return Vec::new();
    }
    let (fwd, inv) = plans(x.len());
    let mut buf = x.to_vec();
    if inverse {
        inv.process(&mut buf);
    } else {
        fwd.process(&mut buf);
    }
    let scale = 1.0 / (x.len() as f64).sqrt();
    for v in &mut buf {
        *v *= scale;
    }
    buf
}

/// Forward DFT scaled by `1/sqrt(R)`, so that norms and white-noise
/// variances are preserved.
pub fn dft_preprocess(x: &[Complex64]) -> Vec<Complex64> {
    transform(x, false)
}

/// Inverse of [`dft_preprocess`].
pub fn idft(x: &[Complex64]) -> Vec<Complex64> {
    transform(x, true)
}
