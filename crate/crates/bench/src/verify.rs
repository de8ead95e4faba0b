use std::fmt;

use serde::Serialize;
use vir_core::encoder::{encoder_forward, encoder_forward_streaming, EncoderConfig, ExecMode, MaskMode, WeightStore};
use vir_core::retention1d::{retention_chunkwise, retention_parallel, retention_recurrent, ChunkParams};
use vir_core::retention2d::{retention_2d_parallel, retention_2d_recurrent, retention_2d_simplified, Grid};
use vir_core::tensor::fill_uniform;
use vir_core::{Rng, Tensor};

pub const LENGTHS_1D: [usize; 8] = [1, 2, 3, 5, 8, 16, 33, 64];
pub const GAMMAS_1D: [f64; 4] = [0.0, 0.25, 0.9, 1.0 - 1.0 / 32.0];
pub const DIMS_1D: [usize; 2] = [4, 16];
pub const GAMMAS_2D: [f64; 3] = [0.0, 0.5, 0.9];

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub case: String,
    pub seed: u64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub cases: usize,
    pub max_deviation: f64,
    pub failures: Vec<Failure>,
}

impl PropertyResult {
    fn new(name: &str) -> Self {
        Self {
            name: name.into(),
            cases: 0,
            max_deviation: 0.0,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, a: &Tensor, b: &Tensor, tol: f64, seed: u64, case: impl FnOnce() -> String) {
        let dev = a.max_abs_diff(b).unwrap_or(f64::INFINITY);
        self.cases += 1;
        self.max_deviation = self.max_deviation.max(dev);
        if dev.is_nan() || dev > tol {
            self.failures.push(Failure {
                case: case(),
                seed,
                deviation: dev,
            });
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceReport {
    pub tolerance: f64,
    pub seeds: Vec<u64>,
    pub properties: Vec<PropertyResult>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(PropertyResult::passed)
    }

    pub fn property(&self, name: &str) -> Option<&PropertyResult> {
        self.properties.iter().find(|p| p.name == name)
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tolerance {:e}, seeds {:?}", self.tolerance, self.seeds)?;
        for p in &self.properties {
            writeln!(
                f,
                "{} {:<44} cases {:>5}  max|Δ| {:.3e}",
                if p.passed() { "PASS" } else { "FAIL" },
                p.name,
                p.cases,
                p.max_deviation
            )?;
            for fail in p.failures.iter().take(10) {
                writeln!(f, "    seed {} {}: {:.3e}", fail.seed, fail.case, fail.deviation)?;
            }
            if p.failures.len() > 10 {
                writeln!(f, "    ... {} more", p.failures.len() - 10)?;
            }
        }
        write!(
            f,
            "{}",
            if self.passed() {
                "all properties hold"
            } else {
                "property failures"
            }
        )
    }
}

fn qkv(seed: u64, n: usize, dk: usize, dv: usize) -> (Tensor, Tensor, Tensor) {
    let mut rng = Rng::new(seed);
    let mut draw = |c| fill_uniform(&mut rng, [n, c], -1.0, 1.0).expect("valid range");
    (draw(dk), draw(dk), draw(dv))
}

/// Runs every cross-mode equivalence property for seeds `seed..seed+3`.
pub fn run_equivalence_suite(tolerance: f64, seed: u64) -> EquivalenceReport {
    let seeds: Vec<u64> = (0..3).map(|i| seed.wrapping_add(i)).collect();
    let mut rec_1d = PropertyResult::new("retention1d parallel vs recurrent");
    let mut chk_1d = PropertyResult::new("retention1d parallel vs chunkwise");
    let mut ie_2d = PropertyResult::new("retention2d parallel vs inclusion-exclusion");
    let mut rs_2d = PropertyResult::new("retention2d parallel vs row-state");
    let mut ie_rs = PropertyResult::new("retention2d inclusion-exclusion vs row-state");
    let mut row_1d = PropertyResult::new("retention2d 1xN grid vs 1d modes");
    let mut enc_stream = PropertyResult::new("encoder parallel vs streaming");
    let mut enc_chunk = PropertyResult::new("encoder parallel vs chunkwise");
    let mut enc_2d = PropertyResult::new("encoder 2d parallel vs streaming");

    for &s in &seeds {
        for &n in &LENGTHS_1D {
            for &gamma in &GAMMAS_1D {
                for &d in &DIMS_1D {
                    let (q, k, v) = qkv(s, n, d, d);
                    let scale = (d as f64).sqrt();
                    let par = retention_parallel(&q, &k, &v, gamma, scale).expect("valid inputs");
                    let rec = retention_recurrent(&q, &k, &v, gamma, scale).expect("valid inputs");
                    rec_1d.check(&par, &rec, tolerance, s, || format!("N={n} gamma={gamma} D={d}"));
                    for c in [1, 3, 8, n, n + 7] {
                        let params = ChunkParams::new(c, gamma).expect("valid chunk");
                        let chk = retention_chunkwise(&q, &k, &v, &params, scale).expect("valid inputs");
                        chk_1d.check(&par, &chk, tolerance, s, || format!("N={n} gamma={gamma} D={d} C={c}"));
                    }
                }
            }
        }

        for w in 1..=8 {
            for h in 1..=8 {
                let grid = Grid::new(w, h).expect("non-empty grid");
                for &gamma in &GAMMAS_2D {
                    let (q, k, v) = qkv(s, w * h, 4, 4);
                    let par = retention_2d_parallel(&q, &k, &v, grid, gamma, 2.0).expect("valid inputs");
                    let ie = retention_2d_recurrent(&q, &k, &v, grid, gamma, 2.0).expect("valid inputs");
                    let rs = retention_2d_simplified(&q, &k, &v, grid, gamma, 2.0).expect("valid inputs");
                    let case = || format!("W={w} H={h} gamma={gamma}");
                    ie_2d.check(&par, &ie, tolerance, s, case);
                    rs_2d.check(&par, &rs, tolerance, s, case);
                    ie_rs.check(&ie, &rs, tolerance, s, case);
                    if h == 1 {
                        let one_d = [
                            retention_parallel(&q, &k, &v, gamma, 2.0).expect("valid inputs"),
                            retention_recurrent(&q, &k, &v, gamma, 2.0).expect("valid inputs"),
                            retention_chunkwise(&q, &k, &v, &ChunkParams::new(3, gamma).expect("valid"), 2.0)
                                .expect("valid inputs"),
                        ];
                        for a in &one_d {
                            for b in [&par, &ie, &rs] {
                                row_1d.check(a, b, tolerance, s, || format!("W={w} gamma={gamma}"));
                            }
                        }
                    }
                }
            }
        }

        let cfg = EncoderConfig::tiny();
        let weights = WeightStore::init_uniform(&cfg, s, 0.25).expect("valid config");
        let image: Tensor = fill_uniform(&mut Rng::new(s ^ 0xA5A5), [32, 32, 3], 0.0, 1.0).expect("valid range");
        let par = encoder_forward(&image, &weights, &cfg).expect("valid encoder").logits;
        let stream = encoder_forward_streaming(&image, &weights, &cfg).expect("valid encoder");
        enc_stream.check(&par, &stream, tolerance, s, || "tiny 1d".into());
        for c in [1, 4, cfg.seq_len()] {
            let chunked = cfg.clone().with_mode(ExecMode::Chunkwise { chunk_size: c });
            let out = encoder_forward(&image, &weights, &chunked)
                .expect("valid encoder")
                .logits;
            enc_chunk.check(&par, &out, tolerance, s, || format!("tiny C={c}"));
        }
        let cfg2 = cfg.clone().with_mask(MaskMode::TwoD);
        let par2 = encoder_forward(&image, &weights, &cfg2).expect("valid encoder").logits;
        let stream2 = encoder_forward_streaming(&image, &weights, &cfg2).expect("valid encoder");
        enc_2d.check(&par2, &stream2, tolerance, s, || "tiny 2d".into());
    }

    EquivalenceReport {
        tolerance,
        seeds,
        properties: vec![
            rec_1d, chk_1d, ie_2d, rs_2d, ie_rs, row_1d, enc_stream, enc_chunk, enc_2d,
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tolerance_passes() {
        let r = run_equivalence_suite(1e-9, 42);
        assert!(r.passed(), "{r}");
        assert_eq!(r.seeds, vec![42, 43, 44]);
        assert_eq!(
            r.property("retention1d parallel vs chunkwise").unwrap().cases,
            3 * 8 * 4 * 2 * 5
        );
    }

    #[test]
    fn zero_tolerance_fails_and_lists_cases() {
        let r = run_equivalence_suite(0.0, 1);
        assert!(!r.passed());
        let text = r.to_string();
        assert!(text.contains("FAIL"));
        assert!(text.contains("seed "));
    }
}
