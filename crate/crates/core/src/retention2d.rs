//! Retention over a `W×H` patch grid with L1-distance decay.
//!
//! A reader at 1-based cell `(x, y)` retains every source `(f, g)` with `f ≤ x`
//! and `g ≤ y`, weighted by `gamma^((x-f) + (y-g))`. With `z = kᵀv`:
//!
//! ```text
//! p(x, y) = Σ_{g ≤ y} Σ_{f ≤ x} gamma^(Δx+Δy) z(f, g)                     parallel
//! r(x, y) = gamma r(x-1, y) + gamma r(x, y-1) - gamma² r(x-1, y-1) + z(x, y)   inclusion-exclusion
//! s_x(x, y) = gamma s_x(x-1, y) + z(x, y);  s(x, y) = gamma s(x, y-1) + s_x(x, y)   row-state
//! ```
//!
//! and the output at a cell is `(q/scale)` read against that accumulator.
//! Tokens are serialized in raster order, `s = (y-1)·W + (x-1)`.

use crate::retention1d::{check_gamma, check_qkv, check_scale, masked_retention};
use crate::tensor::{axpy, Element, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    width: usize,
    height: usize,
}

impl Grid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!(
                "grid extents must be ≥ 1, got {width}×{height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Raster index of the 1-based cell `(x, y)`.
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!((1..=self.width).contains(&x) && (1..=self.height).contains(&y));
        (y - 1) * self.width + (x - 1)
    }

    /// 0-based `(x', y')` of raster index `s`.
    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s % self.width, s / self.width)
    }

    /// 1-based `(x, y)` of raster index `s`.
    pub fn cell(&self, s: usize) -> (usize, usize) {
        let (x, y) = self.coords(s);
        (x + 1, y + 1)
    }

    fn check_tokens(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::shape("grid token count", &[n], &[self.width, self.height]));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DecayMask2D<T: Element = f64> {
    grid: Grid,
    gamma: f64,
    entries: Tensor<T>,
}

impl<T: Element> DecayMask2D<T> {
    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Row = reader, column = source.
    pub fn entries(&self) -> &Tensor<T> {
        &self.entries
    }

    pub fn into_entries(self) -> Tensor<T> {
        self.entries
    }
}

/// `M[r][c] = gamma^(Δx'+Δy')` with `Δ = reader − source`, zero unless both
/// deltas are non-negative.
pub fn build_decay_mask_2d<T: Element>(grid: Grid, gamma: f64) -> Result<DecayMask2D<T>> {
    check_gamma(gamma)?;
    let n = grid.len();
    let powers: Vec<T> = (0..grid.width + grid.height - 1)
        .map(|d| T::from_f64(gamma.powi(d as i32)))
        .collect();
    let mut entries = Tensor::try_zeros([n, n])?;
    for (r, row) in entries.data_mut().chunks_exact_mut(n).enumerate() {
        let (rx, ry) = grid.coords(r);
        for sy in 0..=ry {
            let base = sy * grid.width;
            for sx in 0..=rx {
                row[base + sx] = powers[(rx - sx) + (ry - sy)];
            }
        }
    }
    Ok(DecayMask2D { grid, gamma, entries })
}

pub fn retention_2d_parallel<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    grid: Grid,
    gamma: f64,
    scale: f64,
) -> Result<Tensor<T>> {
    let (n, _, _) = check_qkv(q, k, v)?;
    grid.check_tokens(n)?;
    check_scale(scale)?;
    let mask = build_decay_mask_2d::<T>(grid, gamma)?;
    masked_retention(q, k, v, mask.entries(), scale)
}

/// Evaluates the four-case inclusion-exclusion recursion, keeping one row of
/// `Dk×Dv` accumulators.
pub fn retention_2d_recurrent<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    grid: Grid,
    gamma: f64,
    scale: f64,
) -> Result<Tensor<T>> {
    let (n, dk, dv) = check_qkv(q, k, v)?;
    grid.check_tokens(n)?;
    check_gamma(gamma)?;
    check_scale(scale)?;
    let w = grid.width;
    let cell = dk * dv;
    let g = T::from_f64(gamma);
    let g2 = T::from_f64(gamma * gamma);
    let sc = T::from_f64(scale);

    // row[x] holds r(x, y-1) until overwritten with r(x, y)
    let mut row = Tensor::<T>::zeros([w, cell]);
    let mut up = Tensor::<T>::zeros([cell]);
    let mut diag = Tensor::<T>::zeros([cell]);
    let mut out = Tensor::zeros([n, dv]);

    for y in 0..grid.height {
        for x in 0..w {
            let s = y * w + x;
            let (ks, vs) = (k.row(s), v.row(s));
            up.data_mut().copy_from_slice(row.row(x));
            let (before, rest) = row.data_mut().split_at_mut(x * cell);
            let cur = &mut rest[..cell];
            let left = if x > 0 { Some(&before[(x - 1) * cell..]) } else { None };
            for (a, &ka) in ks.iter().enumerate() {
                for (b, &vb) in vs.iter().enumerate() {
                    let i = a * dv + b;
                    let mut acc = ka * vb;
                    if let Some(left) = left {
                        acc = acc + g * left[i];
                    }
                    if y > 0 {
                        acc = acc + g * up.data()[i];
                        if x > 0 {
                            acc = acc - g2 * diag.data()[i];
                        }
                    }
                    cur[i] = acc;
                }
            }
            let out_row = out.row_mut(s);
            let qs = q.row(s);
            for a in 0..dk {
                axpy(qs[a] / sc, &cur[a * dv..(a + 1) * dv], out_row);
            }
            std::mem::swap(&mut up, &mut diag);
        }
    }
    Ok(out)
}

/// Raster-order streaming state of the row-state recursion: one running row
/// accumulator `s_x` plus one column-decayed accumulator per grid column.
#[derive(Debug, Clone)]
pub struct RowState2D<T: Element = f64> {
    grid: Grid,
    gamma: f64,
    dk: usize,
    dv: usize,
    row_acc: Tensor<T>,
    columns: Tensor<T>,
    position: usize,
}

impl<T: Element> RowState2D<T> {
    pub fn new(grid: Grid, dk: usize, dv: usize, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if dk == 0 || dv == 0 {
            return Err(Error::Parameter("state dimensions must be ≥ 1".into()));
        }
        Ok(Self {
            grid,
            gamma,
            dk,
            dv,
            row_acc: Tensor::zeros([dk, dv]),
            columns: Tensor::zeros([grid.width, dk * dv]),
            position: 0,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn is_complete(&self) -> bool {
        self.position == self.grid.len()
    }

    /// Elements held by the state, `(W + 1)·Dk·Dv`.
    pub fn elements(&self) -> usize {
        self.row_acc.len() + self.columns.len()
    }

    /// Accumulator `s(x, y)` of the 0-based column `x` for the most recent row
    /// that reached it.
    pub fn column(&self, x: usize) -> &[T] {
        self.columns.row(x)
    }

    pub fn step(&mut self, q: &[T], k: &[T], v: &[T], scale: f64) -> Result<Tensor<T>> {
        let mut out = Tensor::zeros([self.dv]);
        self.step_into(q, k, v, scale, out.data_mut())?;
        Ok(out)
    }

    pub fn step_into(&mut self, q: &[T], k: &[T], v: &[T], scale: f64, out: &mut [T]) -> Result<()> {
        self.check_token(q, k, v, out)?;
        if self.is_complete() {
            return Err(Error::StreamOrder(format!(
                "grid of {} cells already consumed",
                self.grid.len()
            )));
        }
        check_scale(scale)?;
        let dv = self.dv;
        let g = T::from_f64(self.gamma);
        let x = self.position % self.grid.width;
        let row_acc = self.row_acc.data_mut();
        let col = self.columns.row_mut(x);
        for (a, &ka) in k.iter().enumerate() {
            for (b, &vb) in v.iter().enumerate() {
                let i = a * dv + b;
                let z = ka * vb;
                row_acc[i] = if x == 0 { z } else { g * row_acc[i] + z };
                col[i] = g * col[i] + row_acc[i];
            }
        }
        read_into(q, col, dv, scale, out);
        self.position += 1;
        Ok(())
    }

    /// Output of a summary token placed diagonally past the bottom-right cell,
    /// at virtual cell `(W+1, H+1)`: it retains every cell with decay
    /// `gamma^((W+1-x) + (H+1-y))` and itself with weight 1.
    pub fn summary(&self, q: &[T], k: &[T], v: &[T], scale: f64) -> Result<Tensor<T>> {
        let mut out = Tensor::zeros([self.dv]);
        self.summary_into(q, k, v, scale, out.data_mut())?;
        Ok(out)
    }

    pub fn summary_into(&self, q: &[T], k: &[T], v: &[T], scale: f64, out: &mut [T]) -> Result<()> {
        self.check_token(q, k, v, out)?;
        if !self.is_complete() {
            return Err(Error::StreamOrder(format!(
                "summary requested after {} of {} cells",
                self.position,
                self.grid.len()
            )));
        }
        check_scale(scale)?;
        let g2 = T::from_f64(self.gamma * self.gamma);
        let corner = self.columns.row(self.grid.width - 1);
        let mut acc = Tensor::<T>::zeros([self.dk * self.dv]);
        for (i, a) in acc.data_mut().iter_mut().enumerate() {
            let (ai, bi) = (i / self.dv, i % self.dv);
            *a = g2 * corner[i] + k[ai] * v[bi];
        }
        read_into(q, acc.data(), self.dv, scale, out);
        Ok(())
    }

    fn check_token(&self, q: &[T], k: &[T], v: &[T], out: &[T]) -> Result<()> {
        if q.len() != self.dk || k.len() != self.dk || v.len() != self.dv || out.len() != self.dv {
            return Err(Error::shape(
                "row-state step",
                &[q.len(), k.len(), v.len()],
                &[self.dk, self.dk, self.dv],
            ));
        }
        Ok(())
    }
}

fn read_into<T: Element>(q: &[T], acc: &[T], dv: usize, scale: f64, out: &mut [T]) {
    let sc = T::from_f64(scale);
    out.fill(T::zero());
    for (a, &qa) in q.iter().enumerate() {
        axpy(qa / sc, &acc[a * dv..(a + 1) * dv], out);
    }
}

/// Single raster pass of the row-state recursion.
pub fn retention_2d_simplified<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    grid: Grid,
    gamma: f64,
    scale: f64,
) -> Result<Tensor<T>> {
    let (n, dk, dv) = check_qkv(q, k, v)?;
    grid.check_tokens(n)?;
    let mut state = RowState2D::new(grid, dk, dv, gamma)?;
    let mut out = Tensor::zeros([n, dv]);
    for s in 0..n {
        state.step_into(q.row(s), k.row(s), v.row(s), scale, out.row_mut(s))?;
    }
    Ok(out)
}
