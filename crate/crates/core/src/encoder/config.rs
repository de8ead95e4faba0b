use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::retention2d::Grid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaskMode {
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "2d")]
    TwoD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Parallel,
    Recurrent,
    Chunkwise { chunk_size: usize },
}

/// Per-head decays `1 − 2^(−5−h)`.
pub fn default_gamma_schedule(heads: usize) -> Vec<f64> {
    (0..heads).map(|h| 1.0 - 2f64.powi(-5 - h as i32)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub model_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_ratio: usize,
    pub gamma_schedule: Vec<f64>,
    pub mask_mode: MaskMode,
    pub mode: ExecMode,
    pub num_classes: usize,
}

impl EncoderConfig {
    /// Config with 3 channels, MLP ratio 4, 10 classes, the default decay
    /// schedule, a 1D mask and parallel execution.
    pub fn new(image_size: usize, patch_size: usize, model_dim: usize, depth: usize, heads: usize) -> Self {
        Self {
            image_size,
            patch_size,
            channels: 3,
            model_dim,
            depth,
            heads,
            head_dim: model_dim.checked_div(heads).unwrap_or(0),
            mlp_ratio: 4,
            gamma_schedule: default_gamma_schedule(heads),
            mask_mode: MaskMode::OneD,
            mode: ExecMode::Parallel,
            num_classes: 10,
        }
    }

    /// 32px images, 8px patches, width 16, two heads, two layers.
    pub fn tiny() -> Self {
        Self::new(32, 8, 16, 2, 2)
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_mask(mut self, mask_mode: MaskMode) -> Self {
        self.mask_mode = mask_mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0 || self.image_size == 0 {
            return fail("image and patch size must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!(
                "image size {} not divisible by patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.heads == 0 || self.model_dim == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "model dim {} not divisible by {} heads",
                self.model_dim, self.heads
            ));
        }
        if self.head_dim != self.model_dim / self.heads {
            return fail(format!(
                "head_dim {} != model_dim / heads = {}",
                self.head_dim,
                self.model_dim / self.heads
            ));
        }
        if self.gamma_schedule.len() != self.heads {
            return fail(format!("{} decays for {} heads", self.gamma_schedule.len(), self.heads));
        }
        if let Some(g) = self.gamma_schedule.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return fail(format!("decay {g} outside [0, 1]"));
        }
        if self.channels == 0 || self.mlp_ratio == 0 || self.num_classes == 0 {
            return fail("channels, mlp_ratio and num_classes must be positive".into());
        }
        if let ExecMode::Chunkwise { chunk_size: 0 } = self.mode {
            return fail("chunk size must be ≥ 1".into());
        }
        if self.mask_mode == MaskMode::TwoD && matches!(self.mode, ExecMode::Chunkwise { .. }) {
            return Err(Error::Unsupported("chunkwise execution with a 2D mask".into()));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid_side(), self.grid_side())
    }

    /// Patch tokens, excluding the class token.
    pub fn num_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn hidden_dim(&self) -> usize {
        self.model_dim * self.mlp_ratio
    }

    pub fn scale(&self) -> f64 {
        (self.head_dim as f64).sqrt()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
