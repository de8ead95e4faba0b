#![allow(dead_code)]

use vir_core::tensor::fill_uniform;
use vir_core::{Rng, Tensor};

pub fn random(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    fill_uniform(rng, [rows, cols], -1.0, 1.0).unwrap()
}

pub fn qkv(seed: u64, n: usize, dk: usize, dv: usize) -> (Tensor, Tensor, Tensor) {
    let mut rng = Rng::new(seed);
    let q = random(&mut rng, n, dk);
    let k = random(&mut rng, n, dk);
    let v = random(&mut rng, n, dv);
    (q, k, v)
}

/// `gamma^e` with `0^0 = 1`, by repeated multiplication.
pub fn gpow(gamma: f64, e: usize) -> f64 {
    (0..e).fold(1.0, |acc, _| acc * gamma)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Explicit double sum over causal sources.
pub fn retention_1d_oracle(q: &Tensor, k: &Tensor, v: &Tensor, gamma: f64, scale: f64) -> Tensor {
    let (n, dv) = (q.rows(), v.cols());
    let mut out = Tensor::zeros([n, dv]);
    for i in 0..n {
        for m in 0..=i {
            let w = dot(q.row(i), k.row(m)) / scale * gpow(gamma, i - m);
            for j in 0..dv {
                out.row_mut(i)[j] += w * v.get2(m, j);
            }
        }
    }
    out
}

/// Explicit quadruple loop over the upper-left quadrant of each reader.
pub fn retention_2d_oracle(q: &Tensor, k: &Tensor, v: &Tensor, w: usize, h: usize, gamma: f64, scale: f64) -> Tensor {
    let dv = v.cols();
    let mut out = Tensor::zeros([w * h, dv]);
    for y in 0..h {
        for x in 0..w {
            let r = y * w + x;
            for g in 0..=y {
                for f in 0..=x {
                    let s = g * w + f;
                    let wt = dot(q.row(r), k.row(s)) / scale * gpow(gamma, (x - f) + (y - g));
                    for j in 0..dv {
                        out.row_mut(r)[j] += wt * v.get2(s, j);
                    }
                }
            }
        }
    }
    out
}
