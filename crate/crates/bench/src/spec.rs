use std::fmt;

use anyhow::{bail, ensure, Result};
use serde::{Deserialize, Serialize};
use vir_core::encoder::{EncoderConfig, ExecMode, MaskMode};
use vir_core::DType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Parallel,
    Recurrent,
    Chunkwise,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Parallel => "parallel",
            Mode::Recurrent => "recurrent",
            Mode::Chunkwise => "chunkwise",
        }
    }

    pub fn exec(self, chunk: usize) -> ExecMode {
        match self {
            Mode::Parallel => ExecMode::Parallel,
            Mode::Recurrent => ExecMode::Recurrent,
            Mode::Chunkwise => ExecMode::Chunkwise { chunk_size: chunk },
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
pub enum Mask {
    #[serde(rename = "1d")]
    #[value(name = "1d")]
    OneD,
    #[serde(rename = "2d")]
    #[value(name = "2d")]
    TwoD,
}

impl Mask {
    pub fn as_str(self) -> &'static str {
        match self {
            Mask::OneD => "1d",
            Mask::TwoD => "2d",
        }
    }

    pub fn mask_mode(self) -> MaskMode {
        match self {
            Mask::OneD => MaskMode::OneD,
            Mask::TwoD => MaskMode::TwoD,
        }
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Oom,
}

/// One benchmark sweep. Sequence lengths come either from square images
/// (`resolutions`, `N = (res/patch)²`) or, for the 1D mask only, directly
/// from `lengths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub mode: Mode,
    pub mask: Mask,
    pub resolutions: Vec<usize>,
    pub lengths: Vec<usize>,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub chunk: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub dtype: DType,
    pub seed: u64,
    pub full_model: bool,
    pub depth: usize,
    pub exclude_io: bool,
    pub batch_parallel: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            mode: Mode::Parallel,
            mask: Mask::OneD,
            resolutions: vec![224, 448, 768, 1024],
            lengths: Vec::new(),
            patch: 16,
            dim: 256,
            heads: 4,
            chunk: 64,
            repeats: 5,
            warmup: 2,
            dtype: DType::F64,
            seed: 42,
            full_model: false,
            depth: 1,
            exclude_io: false,
            batch_parallel: 1,
        }
    }
}

/// A single measured sequence length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Point {
    pub resolution: Option<usize>,
    pub n: usize,
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("patch", self.patch),
            ("dim", self.dim),
            ("heads", self.heads),
            ("chunk", self.chunk),
            ("repeats", self.repeats),
            ("depth", self.depth),
            ("batch-parallel", self.batch_parallel),
        ] {
            ensure!(v > 0, "{name} must be positive");
        }
        ensure!(
            self.dim.is_multiple_of(self.heads),
            "dim {} not divisible by {} heads",
            self.dim,
            self.heads
        );
        match (self.resolutions.is_empty(), self.lengths.is_empty()) {
            (true, true) => bail!("no resolutions or lengths given"),
            (false, false) => bail!("give either resolutions or lengths, not both"),
            _ => {}
        }
        for &r in &self.resolutions {
            ensure!(
                r > 0 && r % self.patch == 0,
                "resolution {r} not a positive multiple of patch {}",
                self.patch
            );
        }
        if !self.lengths.is_empty() {
            ensure!(self.lengths.iter().all(|&n| n > 0), "lengths must be positive");
            ensure!(self.mask == Mask::OneD, "explicit lengths need the 1d mask");
            ensure!(!self.full_model, "explicit lengths cannot drive the full model");
        }
        if self.mask == Mask::TwoD && self.mode == Mode::Chunkwise {
            bail!("chunkwise mode is 1d only");
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<Point> {
        if self.lengths.is_empty() {
            self.resolutions
                .iter()
                .map(|&r| Point {
                    resolution: Some(r),
                    n: (r / self.patch).pow(2),
                })
                .collect()
        } else {
            self.lengths.iter().map(|&n| Point { resolution: None, n }).collect()
        }
    }

    /// Encoder config for one point. Explicit lengths use a one-patch dummy
    /// image; the causal layout ignores the grid.
    pub fn encoder_config(&self, point: Point) -> EncoderConfig {
        let image = point.resolution.unwrap_or(self.patch);
        let mut cfg = EncoderConfig::new(image, self.patch, self.dim, self.depth, self.heads)
            .with_mask(self.mask.mask_mode())
            .with_mode(self.mode.exec(self.chunk));
        if !self.full_model {
            cfg.depth = 1;
        }
        cfg
    }
}

/// One measured point. `peak_live_f64` counts accounted elements of the
/// benchmark dtype, whatever its width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub mode: Mode,
    pub mask: Mask,
    pub resolution: Option<usize>,
    pub patch: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub dim: usize,
    pub heads: usize,
    pub chunk: Option<usize>,
    pub dtype: DType,
    pub median_seconds: f64,
    pub tokens_per_sec: f64,
    pub peak_live_f64: usize,
    pub status: Status,
    #[serde(default)]
    pub timings: Vec<f64>,
}

impl BenchRecord {
    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_from_resolutions() {
        let spec = BenchSpec::default();
        let n: Vec<_> = spec.points().iter().map(|p| p.n).collect();
        assert_eq!(n, vec![196, 784, 2304, 4096]);
    }

    #[test]
    fn rejects_bad_specs() {
        let ok = BenchSpec::default();
        ok.validate().unwrap();
        let mut s = ok.clone();
        s.resolutions = vec![230];
        assert!(s.validate().is_err());
        let mut s = ok.clone();
        s.heads = 3;
        assert!(s.validate().is_err());
        let mut s = ok.clone();
        s.lengths = vec![10];
        assert!(s.validate().is_err());
        s.resolutions.clear();
        s.validate().unwrap();
        s.mask = Mask::TwoD;
        assert!(s.validate().is_err());
        let mut s = ok.clone();
        s.mask = Mask::TwoD;
        s.mode = Mode::Chunkwise;
        assert!(s.validate().is_err());
        let mut s = ok;
        s.repeats = 0;
        assert!(s.validate().is_err());
    }
}
