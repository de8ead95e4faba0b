use std::fmt;

use serde::Serialize;
use vir_core::retention1d::{retention_parallel, retention_parallel_backward};
use vir_core::tensor::fill_uniform;
use vir_core::{Rng, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-6;
/// Denominator floor for the relative error of near-zero gradient entries.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCase {
    pub seed: u64,
    pub gamma: f64,
    pub max_rel_error: [f64; 3],
}

impl GradCase {
    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradReport {
    pub cases: Vec<GradCase>,
    pub tolerance: f64,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.cases.iter().map(GradCase::worst).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cases {
            writeln!(
                f,
                "seed {:>4} gamma {:<4} rel err q {:.2e} k {:.2e} v {:.2e}",
                c.seed, c.gamma, c.max_rel_error[0], c.max_rel_error[1], c.max_rel_error[2]
            )?;
        }
        write!(
            f,
            "{} max relative error {:.3e} (tolerance {:e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error(),
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Analytic gradients of `Σ(out ⊙ R)` versus central differences for
/// `N = 6`, `Dk = Dv = 4`, `gamma ∈ {0.5, 0.9}` and seeds `seed..seed+3`.
pub fn run_gradcheck(seed: u64) -> GradReport {
    let (n, d) = (6, 4);
    let scale = (d as f64).sqrt();
    let mut cases = Vec::new();
    for gamma in [0.5, 0.9] {
        for s in (0..3).map(|i| seed.wrapping_add(i)) {
            let mut rng = Rng::new(s);
            let mut draw = || -> Tensor { fill_uniform(&mut rng, [n, d], -1.0, 1.0).expect("valid range") };
            let inputs = [draw(), draw(), draw()];
            let r = draw();
            let loss = |x: &[Tensor; 3]| -> f64 {
                let out = retention_parallel(&x[0], &x[1], &x[2], gamma, scale).expect("valid inputs");
                out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
            };
            let grads = retention_parallel_backward(&inputs[0], &inputs[1], &inputs[2], gamma, scale, &r)
                .expect("valid inputs");
            let analytic = [&grads.q, &grads.k, &grads.v];
            let mut max_rel_error = [0.0; 3];
            for which in 0..3 {
                for idx in 0..n * d {
                    let mut plus = inputs.clone();
                    let mut minus = inputs.clone();
                    plus[which].data_mut()[idx] += STEP;
                    minus[which].data_mut()[idx] -= STEP;
                    let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
                    let e = relative_error(analytic[which].data()[idx], numeric);
                    max_rel_error[which] = f64::max(max_rel_error[which], e);
                }
            }
            cases.push(GradCase {
                seed: s,
                gamma,
                max_rel_error,
            });
        }
    }
    GradReport {
        cases,
        tolerance: TOLERANCE,
    }
}
