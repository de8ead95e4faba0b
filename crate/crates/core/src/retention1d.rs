//! Causal retention over a token sequence.
//!
//! For queries `q`, keys `k` and values `v` (one row per token) and a decay
//! `gamma`, every mode computes
//!
//! ```text
//! out[n] = Σ_{m ≤ n} gamma^(n-m) · (q[n]/scale · k[m]) · v[m]
//! ```
//!
//! * parallel: `((q/scale)·kᵀ ⊙ M)·v` with `M[i][j] = gamma^(i-j)` for `i ≥ j`;
//! * recurrent: `s_n = gamma·s_{n-1} + k_nᵀ v_n`, `out[n] = (q_n/scale)·s_n`;
//! * chunkwise: parallel inside each chunk plus a recurrent carry `R` between
//!   chunks.
//!
//! Queries are divided by `scale` once, elementwise, in every mode. `0^0` is
//! taken as 1, so with `gamma = 0` each token still retains itself.

use crate::tensor::{axpy, hadamard_assign, matmul, Element, Tensor};
use crate::{Error, Result};

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Parameter(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    Ok(())
}

pub(crate) fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Parameter(format!("scale must be positive, got {scale}")));
    }
    Ok(())
}

/// Validates a `(q, k, v)` triple and returns `(n, dk, dv)`.
pub(crate) fn check_qkv<T: Element>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, dk) = q.dims2("retention q")?;
    let (nk, dk2) = k.dims2("retention k")?;
    let (nv, dv) = v.dims2("retention v")?;
    if n != nk || dk != dk2 {
        return Err(Error::shape("retention q/k", q.shape(), k.shape()));
    }
    if n != nv {
        return Err(Error::shape("retention q/v", q.shape(), v.shape()));
    }
    Ok((n, dk, dv))
}

/// `gamma^d` for `d = 0..len`, with `gamma^0 = 1` for every gamma.
pub(crate) fn decay_powers<T: Element>(gamma: f64, len: usize) -> Tensor<T> {
    let mut t = Tensor::zeros([len.max(1)]);
    for (d, p) in t.data_mut().iter_mut().enumerate() {
        *p = T::from_f64(gamma.powi(d as i32));
    }
    t
}

#[derive(Debug, Clone)]
pub struct DecayMask1D<T: Element = f64> {
    gamma: f64,
    entries: Tensor<T>,
}

impl<T: Element> DecayMask1D<T> {
    pub fn n(&self) -> usize {
        self.entries.rows()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn entries(&self) -> &Tensor<T> {
        &self.entries
    }

    pub fn into_entries(self) -> Tensor<T> {
        self.entries
    }
}

/// `M[i][j] = gamma^(i-j)` for `i ≥ j`, zero above the diagonal.
pub fn build_decay_mask_1d<T: Element>(n: usize, gamma: f64) -> Result<DecayMask1D<T>> {
    check_gamma(gamma)?;
    if n == 0 {
        return Err(Error::Parameter("mask length must be ≥ 1".into()));
    }
    let powers = decay_powers::<T>(gamma, n);
    let mut entries = Tensor::try_zeros([n, n])?;
    fill_causal(entries.data_mut(), powers.data(), n);
    Ok(DecayMask1D { gamma, entries })
}

fn fill_causal<T: Element>(dst: &mut [T], powers: &[T], n: usize) {
    for (i, row) in dst.chunks_exact_mut(n).enumerate() {
        for (j, e) in row[..=i].iter_mut().enumerate() {
            *e = powers[i - j];
        }
    }
}

pub(crate) fn scaled_queries<T: Element>(q: &Tensor<T>, scale: f64) -> Tensor<T> {
    let s = T::from_f64(scale);
    q.map(|x| x / s)
}

/// `(qs·kᵀ ⊙ mask)·v` for already-scaled queries.
pub(crate) fn retention_from_scaled<T: Element>(
    qs: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<Tensor<T>> {
    let kt = k.transpose()?;
    let mut scores = matmul(qs, &kt)?;
    drop(kt);
    hadamard_assign(&mut scores, mask)?;
    matmul(&scores, v)
}

/// `((q/scale)·kᵀ ⊙ mask)·v` for an arbitrary precomputed mask.
pub fn masked_retention<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    mask: &Tensor<T>,
    scale: f64,
) -> Result<Tensor<T>> {
    let (n, _, _) = check_qkv(q, k, v)?;
    check_scale(scale)?;
    if mask.shape() != [n, n] {
        return Err(Error::shape("masked_retention mask", mask.shape(), &[n, n]));
    }
    let qs = scaled_queries(q, scale);
    retention_from_scaled(&qs, k, v, mask)
}

pub fn retention_parallel<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    gamma: f64,
    scale: f64,
) -> Result<Tensor<T>> {
    let (n, _, _) = check_qkv(q, k, v)?;
    check_scale(scale)?;
    let mask = build_decay_mask_1d::<T>(n, gamma)?;
    masked_retention(q, k, v, mask.entries(), scale)
}

/// The `Dk×Dv` recurrent accumulator.
#[derive(Debug, Clone)]
pub struct RetentionState1D<T: Element = f64> {
    s: Tensor<T>,
    gamma: f64,
    position: usize,
}

impl<T: Element> RetentionState1D<T> {
    pub fn new(dk: usize, dv: usize, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if dk == 0 || dv == 0 {
            return Err(Error::Parameter("state dimensions must be ≥ 1".into()));
        }
        Ok(Self {
            s: Tensor::zeros([dk, dv]),
            gamma,
            position: 0,
        })
    }

    pub fn dk(&self) -> usize {
        self.s.rows()
    }

    pub fn dv(&self) -> usize {
        self.s.cols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Tokens absorbed so far.
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn state(&self) -> &Tensor<T> {
        &self.s
    }

    /// Absorbs one token and returns its output row.
    pub fn step(&mut self, q: &[T], k: &[T], v: &[T], scale: f64) -> Result<Tensor<T>> {
        let mut out = Tensor::zeros([self.dv()]);
        self.step_into(q, k, v, scale, out.data_mut())?;
        Ok(out)
    }

    /// [`step`](Self::step) writing the output row into `out`.
    pub fn step_into(&mut self, q: &[T], k: &[T], v: &[T], scale: f64, out: &mut [T]) -> Result<()> {
        let (dk, dv) = (self.dk(), self.dv());
        if q.len() != dk || k.len() != dk {
            return Err(Error::shape("recurrent step q/k", &[q.len(), k.len()], &[dk, dv]));
        }
        if v.len() != dv || out.len() != dv {
            return Err(Error::shape("recurrent step v/out", &[v.len(), out.len()], &[dk, dv]));
        }
        check_scale(scale)?;
        let g = T::from_f64(self.gamma);
        let sc = T::from_f64(scale);
        out.fill(T::zero());
        for (a, row) in self.s.data_mut().chunks_exact_mut(dv).enumerate() {
            for (s, &vj) in row.iter_mut().zip(v) {
                *s = g * *s + k[a] * vj;
            }
            axpy(q[a] / sc, row, out);
        }
        self.position += 1;
        Ok(())
    }
}

/// Functional form of [`RetentionState1D::step`].
pub fn retention_recurrent_step<T: Element>(
    mut state: RetentionState1D<T>,
    q: &[T],
    k: &[T],
    v: &[T],
    scale: f64,
) -> Result<(RetentionState1D<T>, Tensor<T>)> {
    let out = state.step(q, k, v, scale)?;
    Ok((state, out))
}

/// Streams every token through a fresh [`RetentionState1D`].
pub fn retention_recurrent<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    gamma: f64,
    scale: f64,
) -> Result<Tensor<T>> {
    let (n, dk, dv) = check_qkv(q, k, v)?;
    let mut state = RetentionState1D::new(dk, dv, gamma)?;
    let mut out = Tensor::zeros([n, dv]);
    for i in 0..n {
        state.step_into(q.row(i), k.row(i), v.row(i), scale, out.row_mut(i))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkParams {
    pub chunk_size: usize,
    pub gamma: f64,
}

impl ChunkParams {
    pub fn new(chunk_size: usize, gamma: f64) -> Result<Self> {
        let p = Self { chunk_size, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_size < 1 {
            return Err(Error::Parameter("chunk size must be ≥ 1".into()));
        }
        check_gamma(self.gamma)
    }
}

/// Cross-chunk carry `R` of chunkwise retention.
///
/// For a chunk of length `c` with inner index `i`:
///
/// ```text
/// out_i = (qs_c·k_cᵀ ⊙ M_c)·v_c + gamma^(i+1) · qs_i·R
/// R    ← gamma^c · R + Σ_i gamma^(c-1-i) · k_iᵀ v_i
/// ```
///
/// Exponents use the actual chunk length, so a short final chunk is exact.
#[derive(Debug, Clone)]
pub struct ChunkwiseState<T: Element = f64> {
    r: Tensor<T>,
    gamma: f64,
    position: usize,
}

impl<T: Element> ChunkwiseState<T> {
    pub fn new(dk: usize, dv: usize, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if dk == 0 || dv == 0 {
            return Err(Error::Parameter("state dimensions must be ≥ 1".into()));
        }
        Ok(Self {
            r: Tensor::zeros([dk, dv]),
            gamma,
            position: 0,
        })
    }

    pub fn state(&self) -> &Tensor<T> {
        &self.r
    }

    pub fn position(&self) -> usize {
        self.position
    }

    /// Processes the next chunk and returns its `c×Dv` output block.
    pub fn process_chunk(&mut self, q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
        let (c, dk, dv) = check_qkv(q, k, v)?;
        if self.r.shape() != [dk, dv] {
            return Err(Error::shape("chunk state", self.r.shape(), &[dk, dv]));
        }
        check_scale(scale)?;

        let powers = decay_powers::<T>(self.gamma, c + 1);
        let p = powers.data();
        let mut mask = Tensor::try_zeros([c, c])?;
        fill_causal(mask.data_mut(), p, c);

        let qs = scaled_queries(q, scale);
        let mut out = retention_from_scaled(&qs, k, v, &mask)?;
        drop(mask);

        // cross-chunk read: gamma^(i+1) · qs_i·R
        for i in 0..c {
            let qi = qs.row(i);
            let out_i = out.row_mut(i);
            for (a, r_row) in self.r.data().chunks_exact(dv).enumerate() {
                axpy(p[i + 1] * qi[a], r_row, out_i);
            }
        }

        // carry: R ← gamma^c R + Σ gamma^(c-1-i) k_iᵀ v_i
        let carry = p[c];
        for x in self.r.data_mut() {
            *x = carry * *x;
        }
        for i in 0..c {
            let w = p[c - 1 - i];
            let (ki, vi) = (k.row(i), v.row(i));
            for (a, r_row) in self.r.data_mut().chunks_exact_mut(dv).enumerate() {
                axpy(w * ki[a], vi, r_row);
            }
        }
        self.position += c;
        Ok(out)
    }
}

pub fn retention_chunkwise<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    params: &ChunkParams,
    scale: f64,
) -> Result<Tensor<T>> {
    params.validate()?;
    let (n, dk, dv) = check_qkv(q, k, v)?;
    check_scale(scale)?;
    let mut state = ChunkwiseState::new(dk, dv, params.gamma)?;
    let mut out = Tensor::zeros([n, dv]);
    let mut start = 0;
    while start < n {
        let end = (start + params.chunk_size).min(n);
        let block = state.process_chunk(
            &q.slice_rows(start, end)?,
            &k.slice_rows(start, end)?,
            &v.slice_rows(start, end)?,
            scale,
        )?;
        out.data_mut()[start * dv..end * dv].copy_from_slice(block.data());
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RetentionGrads<T: Element = f64> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
}

/// Gradients of [`retention_parallel`] with respect to `q`, `k` and `v`.
///
/// With `A = (q·kᵀ/scale) ⊙ M` and `G = (g·vᵀ) ⊙ M`:
/// `dv = Aᵀ·g`, `dq = G·k/scale`, `dk = Gᵀ·q/scale`.
pub fn retention_parallel_backward<T: Element>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    gamma: f64,
    scale: f64,
    grad_out: &Tensor<T>,
) -> Result<RetentionGrads<T>> {
    let (n, _, dv) = check_qkv(q, k, v)?;
    check_scale(scale)?;
    if grad_out.shape() != [n, dv] {
        return Err(Error::shape("retention backward grad_out", grad_out.shape(), &[n, dv]));
    }
    let mask = build_decay_mask_1d::<T>(n, gamma)?;
    let qs = scaled_queries(q, scale);

    let mut scores = matmul(&qs, &k.transpose()?)?;
    hadamard_assign(&mut scores, mask.entries())?;
    let grad_v = matmul(&scores.transpose()?, grad_out)?;
    drop(scores);

    let mut g = matmul(grad_out, &v.transpose()?)?;
    hadamard_assign(&mut g, mask.entries())?;
    let grad_q = scaled_queries(&matmul(&g, k)?, scale);
    let grad_k = matmul(&g.transpose()?, &qs)?;

    Ok(RetentionGrads {
        q: grad_q,
        k: grad_k,
        v: grad_v,
    })
}

/// `Σ_{m ≤ n} gamma^(n-m) k_mᵀ v_m`, the closed form of the recurrent state
/// after `n` tokens.
pub fn state_closed_form<T: Element>(k: &Tensor<T>, v: &Tensor<T>, gamma: f64, n: usize) -> Result<Tensor<T>> {
    let (nk, dk) = k.dims2("state_closed_form k")?;
    let (nv, dv) = v.dims2("state_closed_form v")?;
    if nk != nv || n > nk {
        return Err(Error::shape("state_closed_form", k.shape(), v.shape()));
    }
    check_gamma(gamma)?;
    let mut s = Tensor::zeros([dk, dv]);
    for m in 0..n {
        let w = T::from_f64(gamma.powi((n - 1 - m) as i32));
        for a in 0..dk {
            let coef = w * k.get2(m, a);
            axpy(coef, v.row(m), s.row_mut(a));
        }
    }
    Ok(s)
}

/// Single retention readout `(q/scale)·s`.
pub fn read_state<T: Element>(q: &[T], s: &Tensor<T>, scale: f64) -> Vec<T> {
    let sc = T::from_f64(scale);
    let mut out = vec![T::zero(); s.cols()];
    for (a, row) in s.data().chunks_exact(s.cols()).enumerate() {
        axpy(q[a] / sc, row, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{dot, fill_uniform};
    use crate::Rng;

    fn rand(rng: &mut Rng, r: usize, c: usize) -> Tensor {
        fill_uniform(rng, [r, c], -1.0, 1.0).unwrap()
    }

    /// out[n] = Σ_{m≤n} γ^(n-m) (q_n·k_m) v_m / scale, evaluated term by term.
    fn double_sum(q: &Tensor, k: &Tensor, v: &Tensor, gamma: f64, scale: f64) -> Tensor {
        let (n, dv) = (q.rows(), v.cols());
        let mut out = Tensor::zeros([n, dv]);
        for i in 0..n {
            for m in 0..=i {
                let qk: f64 = (0..q.cols()).map(|a| q.get2(i, a) * k.get2(m, a)).sum();
                let w = gamma.powi((i - m) as i32) * qk / scale;
                for j in 0..dv {
                    out.data_mut()[i * dv + j] += w * v.get2(m, j);
                }
            }
        }
        out
    }

    #[test]
    fn mask_examples() {
        let m = build_decay_mask_1d::<f64>(3, 0.5).unwrap();
        assert_eq!(m.entries().data(), &[1.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.25, 0.5, 1.0]);
        let m = build_decay_mask_1d::<f64>(2, 0.0).unwrap();
        assert_eq!(m.entries(), &Tensor::eye(2));
        let m = build_decay_mask_1d::<f64>(4, 1.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.entries().get2(i, j), if i >= j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn mask_rejects_bad_gamma() {
        assert!(build_decay_mask_1d::<f64>(3, 1.5).is_err());
        assert!(build_decay_mask_1d::<f64>(3, -0.1).is_err());
        assert!(build_decay_mask_1d::<f64>(3, f64::NAN).is_err());
        assert!(build_decay_mask_1d::<f64>(0, 0.5).is_err());
    }

    #[test]
    fn parallel_single_token() {
        let q = Tensor::from_rows(&[[1.0, 2.0]]);
        let k = Tensor::from_rows(&[[3.0, -1.0]]);
        let v = Tensor::from_rows(&[[0.5, 4.0, -2.0]]);
        let out = retention_parallel(&q, &k, &v, 0.7, 2.0).unwrap();
        // q·k/scale = 1/2
        assert_eq!(out.data(), &[0.25, 2.0, -1.0]);
    }

    #[test]
    fn parallel_gamma_zero_is_diagonal() {
        let mut rng = Rng::new(1);
        let (q, k, v) = (rand(&mut rng, 5, 3), rand(&mut rng, 5, 3), rand(&mut rng, 5, 2));
        let out = retention_parallel(&q, &k, &v, 0.0, 1.5).unwrap();
        for n in 0..5 {
            let w = dot(q.row(n), k.row(n)) / 1.5;
            for j in 0..2 {
                assert!((out.get2(n, j) - w * v.get2(n, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn parallel_matches_double_sum() {
        let mut rng = Rng::new(2);
        let (q, k, v) = (rand(&mut rng, 16, 8), rand(&mut rng, 16, 8), rand(&mut rng, 16, 8));
        let scale = 8f64.sqrt();
        let out = retention_parallel(&q, &k, &v, 0.9, scale).unwrap();
        let oracle = double_sum(&q, &k, &v, 0.9, scale);
        assert!(out.max_abs_diff(&oracle).unwrap() <= 1e-12);
    }

    #[test]
    fn parallel_errors() {
        let a = Tensor::<f64>::zeros([3, 2]);
        let b = Tensor::<f64>::zeros([4, 2]);
        assert!(matches!(
            retention_parallel(&a, &b, &a, 0.5, 1.0),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            retention_parallel(&a, &a, &a, 0.5, 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            retention_parallel(&a, &a, &a, 0.5, -1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn recurrent_first_step_and_gamma_zero() {
        let mut rng = Rng::new(3);
        let (q, k, v) = (rand(&mut rng, 6, 4), rand(&mut rng, 6, 4), rand(&mut rng, 6, 3));
        let mut state = RetentionState1D::<f64>::new(4, 3, 0.0).unwrap();
        for n in 0..6 {
            let out = state.step(q.row(n), k.row(n), v.row(n), 2.0).unwrap();
            let w = dot(q.row(n), k.row(n)) / 2.0;
            for j in 0..3 {
                assert!((out.data()[j] - w * v.get2(n, j)).abs() < 1e-15);
            }
        }
        assert_eq!(state.position(), 6);

        let state = RetentionState1D::<f64>::new(4, 3, 0.6).unwrap();
        let (state, out) = retention_recurrent_step(state, q.row(0), k.row(0), v.row(0), 2.0).unwrap();
        let w = dot(q.row(0), k.row(0)) / 2.0;
        for j in 0..3 {
            assert!((out.data()[j] - w * v.get2(0, j)).abs() < 1e-15);
        }
        assert_eq!(state.position(), 1);
    }

    #[test]
    fn recurrent_dimension_mismatch() {
        let mut state = RetentionState1D::<f64>::new(4, 3, 0.5).unwrap();
        assert!(state.step(&[0.0; 3], &[0.0; 4], &[0.0; 3], 1.0).is_err());
        assert!(state.step(&[0.0; 4], &[0.0; 4], &[0.0; 2], 1.0).is_err());
        assert_eq!(state.position(), 0);
    }

    #[test]
    fn recurrent_matches_parallel() {
        let mut rng = Rng::new(4);
        let (q, k, v) = (rand(&mut rng, 32, 6), rand(&mut rng, 32, 6), rand(&mut rng, 32, 5));
        let a = retention_parallel(&q, &k, &v, 0.9, 3.0).unwrap();
        let b = retention_recurrent(&q, &k, &v, 0.9, 3.0).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-9);
    }

    #[test]
    fn chunkwise_degenerate_cases() {
        let mut rng = Rng::new(5);
        let (q, k, v) = (rand(&mut rng, 9, 4), rand(&mut rng, 9, 4), rand(&mut rng, 9, 4));
        let par = retention_parallel(&q, &k, &v, 0.8, 2.0).unwrap();
        let rec = retention_recurrent(&q, &k, &v, 0.8, 2.0).unwrap();
        for c in [9, 20] {
            let ch = retention_chunkwise(&q, &k, &v, &ChunkParams::new(c, 0.8).unwrap(), 2.0).unwrap();
            // a single chunk runs exactly the parallel arithmetic
            assert_eq!(ch, par);
        }
        let ch1 = retention_chunkwise(&q, &k, &v, &ChunkParams::new(1, 0.8).unwrap(), 2.0).unwrap();
        assert!(ch1.max_abs_diff(&rec).unwrap() <= 1e-12);
    }

    #[test]
    fn chunkwise_ragged_last_chunk() {
        let mut rng = Rng::new(6);
        let (q, k, v) = (rand(&mut rng, 17, 4), rand(&mut rng, 17, 4), rand(&mut rng, 17, 3));
        let par = retention_parallel(&q, &k, &v, 0.9, 2.0).unwrap();
        let ch = retention_chunkwise(&q, &k, &v, &ChunkParams::new(5, 0.9).unwrap(), 2.0).unwrap();
        assert!(par.max_abs_diff(&ch).unwrap() <= 1e-9);
    }

    #[test]
    fn chunkwise_rejects_zero_chunk() {
        let a = Tensor::<f64>::zeros([3, 2]);
        let params = ChunkParams {
            chunk_size: 0,
            gamma: 0.5,
        };
        assert!(retention_chunkwise(&a, &a, &a, &params, 1.0).is_err());
        assert!(ChunkParams::new(0, 0.5).is_err());
    }

    #[test]
    fn backward_trivial_cases() {
        let mut rng = Rng::new(7);
        let (q, k, v) = (rand(&mut rng, 4, 3), rand(&mut rng, 4, 3), rand(&mut rng, 4, 2));
        let g = retention_parallel_backward(&q, &k, &v, 0.8, 1.7, &Tensor::zeros([4, 2])).unwrap();
        assert!(g.q.data().iter().chain(g.k.data()).chain(g.v.data()).all(|&x| x == 0.0));

        let (q, k, v) = (rand(&mut rng, 1, 3), rand(&mut rng, 1, 3), rand(&mut rng, 1, 2));
        let go = rand(&mut rng, 1, 2);
        let g = retention_parallel_backward(&q, &k, &v, 0.8, 1.7, &go).unwrap();
        let w = dot(q.row(0), k.row(0)) / 1.7;
        for j in 0..2 {
            assert!((g.v.data()[j] - w * go.data()[j]).abs() < 1e-15);
        }
        assert!(retention_parallel_backward(&q, &k, &v, 0.8, 1.7, &Tensor::zeros([2, 2])).is_err());
    }

    #[test]
    fn state_after_streaming_has_closed_form() {
        let mut rng = Rng::new(8);
        let (q, k, v) = (rand(&mut rng, 10, 3), rand(&mut rng, 10, 3), rand(&mut rng, 10, 4));
        let mut state = RetentionState1D::<f64>::new(3, 4, 0.75).unwrap();
        for n in 0..10 {
            state.step(q.row(n), k.row(n), v.row(n), 1.0).unwrap();
            let closed = state_closed_form(&k, &v, 0.75, n + 1).unwrap();
            assert!(state.state().max_abs_diff(&closed).unwrap() <= 1e-12);
        }
    }
}
