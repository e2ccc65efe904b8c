#![allow(dead_code)]

use dladmm::{Activation, NetState64};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| scale * (2.0 * rng.random::<f64>() - 1.0))
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| scale * (2.0 * rng.random::<f64>() - 1.0))
}

/// Random one-hot columns.
pub fn labels(rng: &mut ChaCha8Rng, classes: usize, n: usize) -> Array2<f64> {
    let mut y = Array2::zeros((classes, n));
    for j in 0..n {
        y[[rng.random_range(0..classes), j]] = 1.0;
    }
    y
}

/// Random block values with no consistency between them. Pre-activations are
/// kept at least `margin` away from the ReLU kink.
pub fn random_state(rng: &mut ChaCha8Rng, dims: &[usize], n: usize, activation: Activation, margin: f64) -> NetState64 {
    let l_count = dims.len() - 1;
    let mut w = Vec::new();
    let mut b = Vec::new();
    let mut z = Vec::new();
    let mut a = Vec::new();
    for l in 1..=l_count {
        w.push(uniform(rng, dims[l], dims[l - 1], 1.0));
        b.push(uniform_vec(rng, dims[l], 0.5));
        let mut zl = uniform(rng, dims[l], n, 1.5);
        zl.mapv_inplace(|v| if v.abs() < margin { v.signum() * margin + v } else { v });
        z.push(zl);
        if l < l_count {
            a.push(uniform(rng, dims[l], n, 1.0));
        }
    }
    let u = uniform(rng, dims[l_count], n, 0.5);
    NetState64 {
        activation,
        w,
        b,
        z,
        a,
        u,
    }
}

/// Small random architecture: 2 or 3 layers, at most 4 units per layer.
pub fn tiny_dims(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let layers = rng.random_range(2..=3);
    (0..=layers).map(|_| rng.random_range(2..=4)).collect()
}

/// `‖a − b‖ / max(‖b‖, 1e-12)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Central differences of `f` over every entry of `m`.
pub fn central_diff(m: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut out = Array2::zeros(m.dim());
    let mut probe = m.clone();
    for idx in ndarray::indices(m.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        out[idx] = (up - down) / (2.0 * h);
    }
    out
}

/// Largest singular value by power iteration on `MᵀM`.
pub fn sigma_max(m: &Array2<f64>) -> f64 {
    let mut v = Array1::from_elem(m.ncols(), 1.0);
    let mut est = 0.0;
    for _ in 0..5000 {
        let w = m.t().dot(&m.dot(&v));
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        est = norm;
    }
    est.sqrt()
}
