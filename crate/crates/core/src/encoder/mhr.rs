//! Multi-head retention: `qkv = z·A_qkv`, per-head retention with a
//! head-specific decay and `scale = sqrt(head_dim)`, head concatenation, then a
//! LayerNorm. There is no output projection and no gate.
//!
//! The token layout follows from the config and the row count:
//!
//! * 1D mask: every row is a step of one causal sequence;
//! * 2D mask, `rows = W·H`: a raster-ordered patch grid;
//! * 2D mask, `rows = W·H + 1`: the grid followed by a summary token at virtual
//!   cell `(W+1, H+1)`, which retains every patch and is retained by none.

use super::config::{EncoderConfig, ExecMode, MaskMode};
use super::weights::{layer_key, WeightStore};
use crate::retention1d::{build_decay_mask_1d, masked_retention, ChunkwiseState, RetentionState1D};
use crate::retention2d::{build_decay_mask_2d, Grid, RowState2D};
use crate::tensor::{layer_norm_row, matmul, matmul_into, Element, Tensor, DEFAULT_LN_EPS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct MhrWeights<'a, T: Element> {
    pub qkv: &'a Tensor<T>,
    pub norm_gain: &'a Tensor<T>,
    pub norm_bias: &'a Tensor<T>,
}

impl<'a, T: Element> MhrWeights<'a, T> {
    pub fn from_store(store: &'a WeightStore<T>, layer: usize, cfg: &EncoderConfig) -> Result<Self> {
        let d = cfg.model_dim;
        Ok(Self {
            qkv: store.expect(&layer_key(layer, "qkv.weight"), &[d, 3 * d])?,
            norm_gain: store.expect(&layer_key(layer, "retention_norm.gain"), &[d])?,
            norm_bias: store.expect(&layer_key(layer, "retention_norm.bias"), &[d])?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenLayout {
    Causal,
    Grid { grid: Grid, summary: bool },
}

impl TokenLayout {
    pub fn resolve(cfg: &EncoderConfig, rows: usize) -> Result<Self> {
        match cfg.mask_mode {
            MaskMode::OneD => Ok(TokenLayout::Causal),
            MaskMode::TwoD => {
                let grid = cfg.grid()?;
                if rows == grid.len() {
                    Ok(TokenLayout::Grid { grid, summary: false })
                } else if rows == grid.len() + 1 {
                    Ok(TokenLayout::Grid { grid, summary: true })
                } else {
                    Err(Error::shape(
                        "2D retention token count",
                        &[rows],
                        &[grid.width(), grid.height()],
                    ))
                }
            }
        }
    }
}

/// Decay mask for `rows` tokens under `layout`.
pub fn layout_mask<T: Element>(layout: TokenLayout, rows: usize, gamma: f64) -> Result<Tensor<T>> {
    match layout {
        TokenLayout::Causal => Ok(build_decay_mask_1d::<T>(rows, gamma)?.into_entries()),
        TokenLayout::Grid { grid, summary: false } => Ok(build_decay_mask_2d::<T>(grid, gamma)?.into_entries()),
        TokenLayout::Grid { grid, summary: true } => summary_mask_2d(grid, gamma),
    }
}

/// 2D mask extended by a summary row at virtual cell `(W+1, H+1)`.
pub fn summary_mask_2d<T: Element>(grid: Grid, gamma: f64) -> Result<Tensor<T>> {
    let n = grid.len();
    let inner = build_decay_mask_2d::<T>(grid, gamma)?.into_entries();
    let mut mask = Tensor::try_zeros([n + 1, n + 1])?;
    for r in 0..n {
        mask.row_mut(r)[..n].copy_from_slice(inner.row(r));
    }
    drop(inner);
    let last = mask.row_mut(n);
    for (c, e) in last[..n].iter_mut().enumerate() {
        let (x, y) = grid.coords(c);
        let dist = (grid.width() - x) + (grid.height() - y);
        *e = T::from_f64(gamma.powi(dist as i32));
    }
    last[n] = T::one();
    Ok(mask)
}

fn check_input<T: Element>(z: &Tensor<T>, w: &MhrWeights<T>, cfg: &EncoderConfig) -> Result<usize> {
    cfg.validate()?;
    let (rows, d) = z.dims2("multi_head_retention")?;
    if d != cfg.model_dim || w.qkv.shape() != [d, 3 * d] {
        return Err(Error::shape("multi_head_retention", z.shape(), w.qkv.shape()));
    }
    Ok(rows)
}

/// Column slice `[off + h·dh, off + (h+1)·dh)` of a `rows×3D` qkv block.
fn head_slice<T: Element>(qkv: &Tensor<T>, cfg: &EncoderConfig, part: usize, head: usize) -> Result<Tensor<T>> {
    let start = part * cfg.model_dim + head * cfg.head_dim;
    qkv.slice_cols(start, start + cfg.head_dim)
}

fn write_head<T: Element>(dst: &mut Tensor<T>, src: &Tensor<T>, row0: usize, head: usize, dh: usize) {
    for r in 0..src.rows() {
        dst.row_mut(row0 + r)[head * dh..(head + 1) * dh].copy_from_slice(src.row(r));
    }
}

fn norm_rows<T: Element>(t: &mut Tensor<T>, rows: std::ops::Range<usize>, w: &MhrWeights<T>) {
    let eps = T::from_f64(DEFAULT_LN_EPS);
    for r in rows {
        layer_norm_row(t.row_mut(r), w.norm_gain.data(), w.norm_bias.data(), eps);
    }
}

pub fn multi_head_retention<T: Element>(z: &Tensor<T>, w: &MhrWeights<T>, cfg: &EncoderConfig) -> Result<Tensor<T>> {
    match cfg.mode {
        ExecMode::Parallel => mhr_parallel(z, w, cfg),
        ExecMode::Recurrent => mhr_recurrent(z, w, cfg),
        ExecMode::Chunkwise { chunk_size } => mhr_chunkwise(z, w, cfg, chunk_size),
    }
}

fn mhr_parallel<T: Element>(z: &Tensor<T>, w: &MhrWeights<T>, cfg: &EncoderConfig) -> Result<Tensor<T>> {
    let rows = check_input(z, w, cfg)?;
    let layout = TokenLayout::resolve(cfg, rows)?;
    let qkv = matmul(z, w.qkv)?;
    let mut out = Tensor::zeros([rows, cfg.model_dim]);
    for (h, &gamma) in cfg.gamma_schedule.iter().enumerate() {
        let q = head_slice(&qkv, cfg, 0, h)?;
        let k = head_slice(&qkv, cfg, 1, h)?;
        let v = head_slice(&qkv, cfg, 2, h)?;
        let mask = layout_mask::<T>(layout, rows, gamma)?;
        let head = masked_retention(&q, &k, &v, &mask, cfg.scale())?;
        write_head(&mut out, &head, 0, h, cfg.head_dim);
    }
    norm_rows(&mut out, 0..rows, w);
    Ok(out)
}

fn mhr_recurrent<T: Element>(z: &Tensor<T>, w: &MhrWeights<T>, cfg: &EncoderConfig) -> Result<Tensor<T>> {
    let rows = check_input(z, w, cfg)?;
    let layout = TokenLayout::resolve(cfg, rows)?;
    let mut state = MhrState::new(cfg, layout)?;
    let mut out = Tensor::zeros([rows, cfg.model_dim]);
    for r in 0..rows {
        state.step(z.row(r), w, cfg, out.row_mut(r))?;
    }
    Ok(out)
}

fn mhr_chunkwise<T: Element>(
    z: &Tensor<T>,
    w: &MhrWeights<T>,
    cfg: &EncoderConfig,
    chunk_size: usize,
) -> Result<Tensor<T>> {
    let rows = check_input(z, w, cfg)?;
    if cfg.mask_mode != MaskMode::OneD {
        return Err(Error::Unsupported("chunkwise execution with a 2D mask".into()));
    }
    let dh = cfg.head_dim;
    let mut states = cfg
        .gamma_schedule
        .iter()
        .map(|&g| ChunkwiseState::<T>::new(dh, dh, g))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Tensor::zeros([rows, cfg.model_dim]);
    let mut start = 0;
    while start < rows {
        let end = (start + chunk_size).min(rows);
        let qkv = matmul(&z.slice_rows(start, end)?, w.qkv)?;
        for (h, state) in states.iter_mut().enumerate() {
            let q = head_slice(&qkv, cfg, 0, h)?;
            let k = head_slice(&qkv, cfg, 1, h)?;
            let v = head_slice(&qkv, cfg, 2, h)?;
            let block = state.process_chunk(&q, &k, &v, cfg.scale())?;
            write_head(&mut out, &block, start, h, dh);
        }
        norm_rows(&mut out, start..end, w);
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum HeadStates<T: Element> {
    Causal(Vec<RetentionState1D<T>>),
    Grid {
        heads: Vec<RowState2D<T>>,
        summary: bool,
        summarized: bool,
    },
}

/// Recurrent state of one multi-head retention layer.
#[derive(Debug, Clone)]
pub struct MhrState<T: Element = f64> {
    heads: HeadStates<T>,
    qkv: Tensor<T>,
}

impl<T: Element> MhrState<T> {
    pub fn new(cfg: &EncoderConfig, layout: TokenLayout) -> Result<Self> {
        cfg.validate()?;
        let dh = cfg.head_dim;
        let heads = match layout {
            TokenLayout::Causal => HeadStates::Causal(
                cfg.gamma_schedule
                    .iter()
                    .map(|&g| RetentionState1D::new(dh, dh, g))
                    .collect::<Result<_>>()?,
            ),
            TokenLayout::Grid { grid, summary } => HeadStates::Grid {
                heads: cfg
                    .gamma_schedule
                    .iter()
                    .map(|&g| RowState2D::new(grid, dh, dh, g))
                    .collect::<Result<_>>()?,
                summary,
                summarized: false,
            },
        };
        Ok(Self {
            heads,
            qkv: Tensor::zeros([3 * cfg.model_dim]),
        })
    }

    /// Elements held across calls, excluding the per-step projection buffer.
    pub fn elements(&self) -> usize {
        match &self.heads {
            HeadStates::Causal(h) => h.iter().map(|s| s.state().len()).sum(),
            HeadStates::Grid { heads, .. } => heads.iter().map(RowState2D::elements).sum(),
        }
    }

    /// Consumes one normalized token row and writes the layer output row.
    pub fn step(&mut self, z_row: &[T], w: &MhrWeights<T>, cfg: &EncoderConfig, out: &mut [T]) -> Result<()> {
        let d = cfg.model_dim;
        if z_row.len() != d || out.len() != d {
            return Err(Error::shape("mhr step", &[z_row.len(), out.len()], &[d]));
        }
        matmul_into(z_row, w.qkv.data(), self.qkv.data_mut(), 1, d, 3 * d);
        let dh = cfg.head_dim;
        let scale = cfg.scale();
        let qkv = self.qkv.data();
        let part = |p: usize, h: usize| &qkv[p * d + h * dh..p * d + (h + 1) * dh];
        match &mut self.heads {
            HeadStates::Causal(heads) => {
                for (h, st) in heads.iter_mut().enumerate() {
                    st.step_into(
                        part(0, h),
                        part(1, h),
                        part(2, h),
                        scale,
                        &mut out[h * dh..(h + 1) * dh],
                    )?;
                }
            }
            HeadStates::Grid {
                heads,
                summary,
                summarized,
            } => {
                if *summarized {
                    return Err(Error::StreamOrder("token after the summary token".into()));
                }
                let grid_done = heads[0].is_complete();
                if grid_done && !*summary {
                    return Err(Error::StreamOrder("grid already complete".into()));
                }
                for (h, st) in heads.iter_mut().enumerate() {
                    let o = &mut out[h * dh..(h + 1) * dh];
                    if grid_done {
                        st.summary_into(part(0, h), part(1, h), part(2, h), scale, o)?;
                    } else {
                        st.step_into(part(0, h), part(1, h), part(2, h), scale, o)?;
                    }
                }
                *summarized = grid_done;
            }
        }
        layer_norm_row(out, w.norm_gain.data(), w.norm_bias.data(), T::from_f64(DEFAULT_LN_EPS));
        Ok(())
    }
}
