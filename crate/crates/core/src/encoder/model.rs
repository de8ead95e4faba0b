use super::config::{EncoderConfig, ExecMode};
use super::mhr::{layout_mask, multi_head_retention, MhrState, MhrWeights, TokenLayout};
use super::weights::{layer_key, WeightStore};
use crate::tensor::{add_assign, add_row_bias, dot, gelu, layer_norm, matmul, Element, Tensor, DEFAULT_LN_EPS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BlockWeights<'a, T: Element> {
    pub norm1_gain: &'a Tensor<T>,
    pub norm1_bias: &'a Tensor<T>,
    pub mhr: MhrWeights<'a, T>,
    pub norm2_gain: &'a Tensor<T>,
    pub norm2_bias: &'a Tensor<T>,
    pub fc1_weight: &'a Tensor<T>,
    pub fc1_bias: &'a Tensor<T>,
    pub fc2_weight: &'a Tensor<T>,
    pub fc2_bias: &'a Tensor<T>,
}

impl<'a, T: Element> BlockWeights<'a, T> {
    pub fn from_store(store: &'a WeightStore<T>, layer: usize, cfg: &EncoderConfig) -> Result<Self> {
        let d = cfg.model_dim;
        let hd = cfg.hidden_dim();
        let get = |suffix: &str, shape: &[usize]| store.expect(&layer_key(layer, suffix), shape);
        Ok(Self {
            norm1_gain: get("norm1.gain", &[d])?,
            norm1_bias: get("norm1.bias", &[d])?,
            mhr: MhrWeights::from_store(store, layer, cfg)?,
            norm2_gain: get("norm2.gain", &[d])?,
            norm2_bias: get("norm2.bias", &[d])?,
            fc1_weight: get("mlp.fc1.weight", &[d, hd])?,
            fc1_bias: get("mlp.fc1.bias", &[hd])?,
            fc2_weight: get("mlp.fc2.weight", &[hd, d])?,
            fc2_bias: get("mlp.fc2.bias", &[d])?,
        })
    }
}

/// Flattens one `P×P×C` patch (raster index `index`) in `(dy, dx, c)` order.
pub fn gather_patch<T: Element>(image: &Tensor<T>, cfg: &EncoderConfig, index: usize) -> Result<Tensor<T>> {
    check_image(image, cfg)?;
    let (p, c, side) = (cfg.patch_size, cfg.channels, cfg.grid_side());
    if index >= cfg.num_patches() {
        return Err(Error::Parameter(format!(
            "patch index {index} out of range for {} patches",
            cfg.num_patches()
        )));
    }
    let (py, px) = (index / side, index % side);
    let row_stride = cfg.image_size * c;
    let mut out = Tensor::zeros([1, cfg.patch_dim()]);
    let dst = out.data_mut();
    for dy in 0..p {
        let src = (py * p + dy) * row_stride + px * p * c;
        dst[dy * p * c..(dy + 1) * p * c].copy_from_slice(&image.data()[src..src + p * c]);
    }
    Ok(out)
}

fn check_image<T: Element>(image: &Tensor<T>, cfg: &EncoderConfig) -> Result<()> {
    let expected = [cfg.image_size, cfg.image_size, cfg.channels];
    if image.shape() != expected {
        return Err(Error::shape("image", image.shape(), &expected));
    }
    if !cfg.image_size.is_multiple_of(cfg.patch_size) {
        return Err(Error::Config(format!(
            "image size {} not divisible by patch size {}",
            cfg.image_size, cfg.patch_size
        )));
    }
    Ok(())
}

/// Non-overlapping patches in raster order, flattened and projected to the
/// model width. `image` is `H×W×C`.
pub fn patchify_embed<T: Element>(
    image: &Tensor<T>,
    weights: &WeightStore<T>,
    cfg: &EncoderConfig,
) -> Result<Tensor<T>> {
    check_image(image, cfg)?;
    cfg.validate()?;
    let n = cfg.num_patches();
    let pd = cfg.patch_dim();
    let proj = weights.expect("patch_embed.weight", &[pd, cfg.model_dim])?;
    let bias = weights.expect("patch_embed.bias", &[cfg.model_dim])?;
    let mut patches = Tensor::zeros([n, pd]);
    for i in 0..n {
        patches.row_mut(i).copy_from_slice(gather_patch(image, cfg, i)?.data());
    }
    let mut emb = matmul(&patches, proj)?;
    add_row_bias(&mut emb, bias)?;
    Ok(emb)
}

/// Adds the position embedding to the patch rows, then appends the class
/// token as the last row, without a position embedding.
pub fn assemble_sequence<T: Element>(patch_emb: &Tensor<T>, weights: &WeightStore<T>) -> Result<Tensor<T>> {
    let (n, d) = patch_emb.dims2("assemble_sequence")?;
    let pos = weights.expect("pos_embed", &[n, d])?;
    let cls = weights.expect("cls_token", &[1, d])?;
    let mut seq = Tensor::zeros([n + 1, d]);
    for i in 0..n {
        for ((o, &a), &b) in seq.row_mut(i).iter_mut().zip(patch_emb.row(i)).zip(pos.row(i)) {
            *o = a + b;
        }
    }
    seq.row_mut(n).copy_from_slice(cls.data());
    Ok(seq)
}

/// `Linear(D → rD) → GELU → Linear(rD → D)`
pub fn mlp<T: Element>(x: &Tensor<T>, w: &BlockWeights<T>) -> Result<Tensor<T>> {
    let mut h = matmul(x, w.fc1_weight)?;
    add_row_bias(&mut h, w.fc1_bias)?;
    let h = gelu(&h);
    let mut out = matmul(&h, w.fc2_weight)?;
    add_row_bias(&mut out, w.fc2_bias)?;
    Ok(out)
}

/// `Z' = MHR(LN(Z)) + Z;  Z = MLP(LN(Z')) + Z'`
pub fn block_forward<T: Element>(z: &Tensor<T>, w: &BlockWeights<T>, cfg: &EncoderConfig) -> Result<Tensor<T>> {
    let h = layer_norm(z, w.norm1_gain, w.norm1_bias, DEFAULT_LN_EPS)?;
    let mut z1 = multi_head_retention(&h, &w.mhr, cfg)?;
    drop(h);
    add_assign(&mut z1, z)?;
    let h2 = layer_norm(&z1, w.norm2_gain, w.norm2_bias, DEFAULT_LN_EPS)?;
    let m = mlp(&h2, w)?;
    add_assign(&mut z1, &m)?;
    Ok(z1)
}

/// Final LayerNorm and linear classifier on one `1×D` row.
pub fn classify<T: Element>(row: &Tensor<T>, weights: &WeightStore<T>, cfg: &EncoderConfig) -> Result<Tensor<T>> {
    let d = cfg.model_dim;
    let h = layer_norm(
        row,
        weights.expect("norm.gain", &[d])?,
        weights.expect("norm.bias", &[d])?,
        DEFAULT_LN_EPS,
    )?;
    let mut logits = matmul(&h, weights.expect("head.weight", &[d, cfg.num_classes])?)?;
    add_row_bias(&mut logits, weights.expect("head.bias", &[cfg.num_classes])?)?;
    logits.reshape([cfg.num_classes])
}

#[derive(Debug, Clone)]
pub struct EncoderOutput<T: Element = f64> {
    pub logits: Tensor<T>,
    pub tokens: Tensor<T>,
}

/// Full forward in the execution mode of `cfg`. `tokens` is the last block's
/// output; the classifier reads its final (class-token) row.
pub fn encoder_forward<T: Element>(
    image: &Tensor<T>,
    weights: &WeightStore<T>,
    cfg: &EncoderConfig,
) -> Result<EncoderOutput<T>> {
    cfg.validate()?;
    let mut z = assemble_sequence(&patchify_embed(image, weights, cfg)?, weights)?;
    for l in 0..cfg.depth {
        let bw = BlockWeights::from_store(weights, l, cfg)?;
        z = block_forward(&z, &bw, cfg)?;
    }
    let cls = z.slice_rows(cfg.num_patches(), cfg.seq_len())?;
    let logits = classify(&cls, weights, cfg)?;
    Ok(EncoderOutput { logits, tokens: z })
}

/// Token-at-a-time encoder. Patches are fed in raster order, then
/// [`finish`](Self::finish) feeds the class token and returns the logits.
/// Live state is one recurrent accumulator set per layer, independent of the
/// number of tokens fed.
#[derive(Debug)]
pub struct StreamSession<'w, T: Element = f64> {
    cfg: EncoderConfig,
    weights: &'w WeightStore<T>,
    blocks: Vec<BlockWeights<'w, T>>,
    states: Vec<MhrState<T>>,
    tokens_consumed: usize,
}

impl<'w, T: Element> StreamSession<'w, T> {
    pub fn new(weights: &'w WeightStore<T>, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = TokenLayout::resolve(cfg, cfg.seq_len())?;
        let blocks = (0..cfg.depth)
            .map(|l| BlockWeights::from_store(weights, l, cfg))
            .collect::<Result<Vec<_>>>()?;
        let states = (0..cfg.depth)
            .map(|_| MhrState::new(cfg, layout))
            .collect::<Result<Vec<_>>>()?;
        // checked up front so finish() cannot fail on a missing tensor
        weights.expect("pos_embed", &[cfg.num_patches(), cfg.model_dim])?;
        weights.expect("cls_token", &[1, cfg.model_dim])?;
        Ok(Self {
            cfg: cfg.clone(),
            weights,
            blocks,
            states,
            tokens_consumed: 0,
        })
    }

    pub fn tokens_consumed(&self) -> usize {
        self.tokens_consumed
    }

    /// Elements held by the per-layer recurrent states.
    pub fn state_elements(&self) -> usize {
        self.states.iter().map(MhrState::elements).sum()
    }

    /// Feeds one assembled token row (patch embedding plus position
    /// embedding) and returns the last block's output row.
    pub fn feed(&mut self, token: &[T]) -> Result<Tensor<T>> {
        if self.tokens_consumed >= self.cfg.num_patches() {
            return Err(Error::StreamOrder(format!(
                "all {} patch tokens already fed",
                self.cfg.num_patches()
            )));
        }
        let out = self.run_layers(token)?;
        self.tokens_consumed += 1;
        Ok(out)
    }

    /// Feeds a projected patch, adding the position embedding of the next slot.
    pub fn feed_patch(&mut self, patch_embedding: &[T]) -> Result<Tensor<T>> {
        let d = self.cfg.model_dim;
        if patch_embedding.len() != d {
            return Err(Error::shape("feed_patch", &[patch_embedding.len()], &[d]));
        }
        let slot = self.tokens_consumed.min(self.cfg.num_patches() - 1);
        let pos = self.weights.get("pos_embed")?.row(slot);
        let mut row = Tensor::zeros([1, d]);
        for ((o, &a), &b) in row.data_mut().iter_mut().zip(patch_embedding).zip(pos) {
            *o = a + b;
        }
        self.feed(row.data())
    }

    /// Feeds the class token and returns the logits.
    pub fn finish(mut self) -> Result<Tensor<T>> {
        if self.tokens_consumed != self.cfg.num_patches() {
            return Err(Error::StreamOrder(format!(
                "finish after {} of {} patch tokens",
                self.tokens_consumed,
                self.cfg.num_patches()
            )));
        }
        let cls = self.weights.get("cls_token")?;
        let out = self.run_layers(cls.data())?;
        classify(&out, self.weights, &self.cfg)
    }

    fn run_layers(&mut self, token: &[T]) -> Result<Tensor<T>> {
        let d = self.cfg.model_dim;
        if token.len() != d {
            return Err(Error::shape("stream token", &[token.len()], &[d]));
        }
        let mut x = Tensor::from_vec([1, d], token.to_vec())?;
        for (bw, state) in self.blocks.iter().zip(self.states.iter_mut()) {
            let h = layer_norm(&x, bw.norm1_gain, bw.norm1_bias, DEFAULT_LN_EPS)?;
            let mut r = Tensor::zeros([1, d]);
            state.step(h.data(), &bw.mhr, &self.cfg, r.data_mut())?;
            add_assign(&mut x, &r)?;
            let h2 = layer_norm(&x, bw.norm2_gain, bw.norm2_bias, DEFAULT_LN_EPS)?;
            add_assign(&mut x, &mlp(&h2, bw)?)?;
        }
        Ok(x)
    }
}

/// Streams `image` patch by patch through a [`StreamSession`], projecting
/// each patch on the fly, and returns the logits.
pub fn encoder_forward_streaming<T: Element>(
    image: &Tensor<T>,
    weights: &WeightStore<T>,
    cfg: &EncoderConfig,
) -> Result<Tensor<T>> {
    check_image(image, cfg)?;
    let mut session = StreamSession::new(weights, cfg)?;
    let proj = weights.expect("patch_embed.weight", &[cfg.patch_dim(), cfg.model_dim])?;
    let bias = weights.expect("patch_embed.bias", &[cfg.model_dim])?;
    for i in 0..cfg.num_patches() {
        let mut emb = matmul(&gather_patch(image, cfg, i)?, proj)?;
        add_row_bias(&mut emb, bias)?;
        session.feed_patch(emb.data())?;
    }
    session.finish()
}

/// Class-token retention scores of the last layer, averaged over heads and
/// laid out on the patch grid.
///
/// For each head the score row is `(q_cls·kᵀ/scale) ⊙ M[cls]`, the masked,
/// scaled scores before multiplication with `v`; the class token's own score
/// is dropped. No normalisation is applied.
pub fn retention_map<T: Element>(
    image: &Tensor<T>,
    weights: &WeightStore<T>,
    cfg: &EncoderConfig,
) -> Result<Tensor<T>> {
    if cfg.depth == 0 {
        return Err(Error::Config("retention map needs at least one layer".into()));
    }
    let cfg = cfg.clone().with_mode(ExecMode::Parallel);
    cfg.validate()?;
    let n = cfg.num_patches();
    let mut z = assemble_sequence(&patchify_embed(image, weights, &cfg)?, weights)?;
    for l in 0..cfg.depth - 1 {
        z = block_forward(&z, &BlockWeights::from_store(weights, l, &cfg)?, &cfg)?;
    }
    let last = BlockWeights::from_store(weights, cfg.depth - 1, &cfg)?;
    let h = layer_norm(&z, last.norm1_gain, last.norm1_bias, DEFAULT_LN_EPS)?;
    let qkv = matmul(&h, last.mhr.qkv)?;

    let layout = TokenLayout::resolve(&cfg, n + 1)?;
    let (d, dh) = (cfg.model_dim, cfg.head_dim);
    let scale = T::from_f64(cfg.scale());
    let inv_heads = T::from_f64(1.0 / cfg.heads as f64);
    let mut map = Tensor::zeros([cfg.grid_side(), cfg.grid_side()]);
    let q_cls = qkv.row(n);
    for (hd, &gamma) in cfg.gamma_schedule.iter().enumerate() {
        let mask = layout_mask::<T>(layout, n + 1, gamma)?;
        let mask_row = mask.row(n);
        let q = &q_cls[hd * dh..(hd + 1) * dh];
        for (j, m) in map.data_mut().iter_mut().enumerate() {
            let k = &qkv.row(j)[d + hd * dh..d + (hd + 1) * dh];
            let s = dot(q, k) / scale * mask_row[j];
            *m = *m + s * inv_heads;
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::config::MaskMode;
    use crate::tensor::fill_uniform;
    use crate::Rng;

    fn image(cfg: &EncoderConfig, seed: u64) -> Tensor {
        fill_uniform(
            &mut Rng::new(seed),
            [cfg.image_size, cfg.image_size, cfg.channels],
            -1.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn patch_order_is_raster() {
        let mut cfg = EncoderConfig::new(4, 2, 4, 0, 1);
        cfg.channels = 1;
        // one-hot pixel in each patch, at the patch's top-left corner
        for (patch, (y, x)) in [(0, 0), (0, 2), (2, 0), (2, 2)].into_iter().enumerate() {
            let mut img = Tensor::zeros([4, 4, 1]);
            img.data_mut()[y * 4 + x] = 1.0;
            for i in 0..4 {
                let p = gather_patch(&img, &cfg, i).unwrap();
                assert_eq!(p.data()[0], if i == patch { 1.0 } else { 0.0 });
                assert_eq!(p.data().iter().sum::<f64>(), if i == patch { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn patchify_matches_gather_then_matmul() {
        let cfg = EncoderConfig::new(16, 4, 8, 0, 2);
        let mut w = WeightStore::init(&cfg, 1).unwrap();
        *w.get_mut("patch_embed.bias").unwrap() = fill_uniform(&mut Rng::new(9), [8], -1.0, 1.0).unwrap();
        let img = image(&cfg, 2);
        let emb = patchify_embed(&img, &w, &cfg).unwrap();
        let proj = w.get("patch_embed.weight").unwrap();
        let bias = w.get("patch_embed.bias").unwrap();
        let (p, c) = (cfg.patch_size, cfg.channels);
        for t in 0..cfg.num_patches() {
            let (py, px) = (t / 4, t % 4);
            let mut v = Vec::new();
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..c {
                        v.push(img.data()[((py * p + dy) * 16 + px * p + dx) * c + ch]);
                    }
                }
            }
            for j in 0..8 {
                let mut acc = 0.0;
                for (i, &x) in v.iter().enumerate() {
                    acc += x * proj.get2(i, j);
                }
                assert_eq!(emb.get2(t, j), acc + bias.data()[j]);
            }
        }
    }

    #[test]
    fn zero_image_embeds_to_zero() {
        let cfg = EncoderConfig::new(16, 8, 8, 0, 2);
        let w: WeightStore = WeightStore::init(&cfg, 1).unwrap();
        let emb = patchify_embed(&Tensor::zeros([16, 16, 3]), &w, &cfg).unwrap();
        assert!(emb.data().iter().all(|&x| x == 0.0));
        assert!(patchify_embed(&Tensor::zeros([15, 16, 3]), &w, &cfg).is_err());
    }

    #[test]
    fn assemble_appends_class_token_last() {
        let cfg = EncoderConfig::new(16, 8, 8, 0, 2);
        let w: WeightStore = WeightStore::init(&cfg, 3).unwrap();
        let seq = assemble_sequence(&Tensor::zeros([4, 8]), &w).unwrap();
        assert_eq!(seq.rows(), 5);
        let pos = w.get("pos_embed").unwrap();
        for i in 0..4 {
            assert_eq!(seq.row(i), pos.row(i));
        }
        assert_eq!(seq.row(4), w.get("cls_token").unwrap().data());
        assert!(assemble_sequence(&Tensor::zeros([3, 8]), &w).is_err());
    }

    #[test]
    fn permuting_patches_permutes_prefix_only() {
        let cfg = EncoderConfig::new(16, 8, 8, 0, 2);
        let w = WeightStore::init(&cfg, 4).unwrap();
        let emb: Tensor = fill_uniform(&mut Rng::new(5), [4, 8], -1.0, 1.0).unwrap();
        let perm = [2, 0, 3, 1];
        let mut permuted = Tensor::zeros([4, 8]);
        for (i, &p) in perm.iter().enumerate() {
            permuted.row_mut(i).copy_from_slice(emb.row(p));
        }
        let a = assemble_sequence(&emb, &w).unwrap();
        let b = assemble_sequence(&permuted, &w).unwrap();
        let pos = w.get("pos_embed").unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..8 {
                // patch content moves, position embedding stays with the slot
                assert_eq!(b.get2(i, j), permuted.get2(i, j) + pos.get2(i, j));
                assert!((b.get2(i, j) - pos.get2(i, j) - (a.get2(p, j) - pos.get2(p, j))).abs() < 1e-12);
            }
        }
        assert_eq!(a.row(4), b.row(4));
    }

    #[test]
    fn empty_stack_classifies_class_token() {
        let cfg = EncoderConfig::new(16, 8, 8, 0, 2);
        let w = WeightStore::init_uniform(&cfg, 6, 0.5).unwrap();
        let out = encoder_forward(&image(&cfg, 7), &w, &cfg).unwrap();
        let expected = classify(w.get("cls_token").unwrap(), &w, &cfg).unwrap();
        assert_eq!(out.logits, expected);
        assert_eq!(out.tokens.shape(), &[5, 8]);
    }

    #[test]
    fn forward_is_deterministic_and_modes_agree() {
        let cfg = EncoderConfig::tiny();
        let w = WeightStore::init_uniform(&cfg, 8, 0.3).unwrap();
        let img = image(&cfg, 9);
        let a = encoder_forward(&img, &w, &cfg).unwrap();
        let b = encoder_forward(&img, &w, &cfg).unwrap();
        assert_eq!(a.logits, b.logits);
        assert_eq!(a.logits.shape(), &[10]);
        let s = encoder_forward_streaming(&img, &w, &cfg).unwrap();
        assert!(a.logits.max_abs_diff(&s).unwrap() <= 1e-9);
    }

    #[test]
    fn missing_weight_is_named() {
        let cfg = EncoderConfig::tiny();
        let mut w = WeightStore::init(&cfg, 1).unwrap();
        w.remove("blocks.1.norm2.gain");
        let err = encoder_forward(&image(&cfg, 1), &w, &cfg).unwrap_err();
        assert!(
            matches!(err, Error::MissingWeight(ref n) if n == "blocks.1.norm2.gain"),
            "{err}"
        );
    }

    #[test]
    fn stream_order_errors() {
        let cfg = EncoderConfig::new(16, 8, 8, 1, 2);
        let w = WeightStore::init(&cfg, 1).unwrap();
        let s = StreamSession::new(&w, &cfg).unwrap();
        assert!(matches!(s.finish(), Err(Error::StreamOrder(_))));
        let mut s = StreamSession::new(&w, &cfg).unwrap();
        for _ in 0..4 {
            s.feed(&[0.1; 8]).unwrap();
        }
        assert!(matches!(s.feed(&[0.1; 8]), Err(Error::StreamOrder(_))));
        assert_eq!(s.finish().unwrap().shape(), &[10]);
    }

    #[test]
    fn two_d_streaming_matches_parallel() {
        let cfg = EncoderConfig::new(24, 8, 8, 2, 2).with_mask(MaskMode::TwoD);
        let w = WeightStore::init_uniform(&cfg, 10, 0.4).unwrap();
        let img = image(&cfg, 11);
        let par = encoder_forward(&img, &w, &cfg).unwrap();
        let rec = encoder_forward(&img, &w, &cfg.clone().with_mode(ExecMode::Recurrent)).unwrap();
        let s = encoder_forward_streaming(&img, &w, &cfg).unwrap();
        assert!(par.logits.max_abs_diff(&rec.logits).unwrap() <= 1e-9);
        assert!(par.logits.max_abs_diff(&s).unwrap() <= 1e-9);
    }

    #[test]
    fn retention_map_shape() {
        let cfg = EncoderConfig::tiny();
        let w = WeightStore::init(&cfg, 12).unwrap();
        let m = retention_map(&image(&cfg, 13), &w, &cfg).unwrap();
        assert_eq!(m.shape(), &[4, 4]);
        let cfg0 = EncoderConfig::new(32, 8, 16, 0, 2);
        let w0 = WeightStore::init(&cfg0, 12).unwrap();
        assert!(retention_map(&image(&cfg0, 13), &w0, &cfg0).is_err());
    }
}
