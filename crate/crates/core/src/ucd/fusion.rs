//! Definition fusion: bilinear attention over definition embeddings with the
//! masked token's context vector as query, a highway layer over
//! `[pooled; E_w]`, a linear projection back to the context width, and the
//! splice of the result into the context matrix.
//!
//! Everything is batched; the single-instance functions are thin wrappers so
//! tests exercise the code used in training.

use candle_core::{DType, Device, Tensor, D};
use candle_nn::{ops, Linear, Module};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::nn::ParamStore;
use crate::error::{Error, Result};

/// Initial transform-gate bias; negative so the highway starts near carry.
const CARRY_BIAS: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    /// Context embedding width (D^B).
    pub context: usize,
    /// Definition embedding width (D^S).
    pub definition: usize,
}

impl FusionDims {
    fn joint(&self) -> usize {
        self.context + self.definition
    }
}

#[derive(Debug, Clone)]
pub struct FusionParams {
    pub dims: FusionDims,
    /// `(D^B, D^S)` bilinear attention map.
    pub w_a: Tensor,
    highway_h: Linear,
    highway_t: Linear,
    /// `(D^S + D^B) → D^B`, no bias.
    out: Linear,
}

impl FusionParams {
    /// Trainable parameters registered under `fusion.*`.
    pub fn new(store: &mut ParamStore, dims: FusionDims, rng: &mut ChaCha8Rng) -> Result<Self> {
        let j = dims.joint();
        let w_a = store.uniform("fusion.w_a", &[dims.context, dims.definition], 1.0 / (dims.context as f64).sqrt(), rng)?;
        let highway_h = store.linear("fusion.highway_h", j, j, true, rng)?;
        let scale = 1.0 / (j as f64).sqrt();
        let w_t = store.uniform("fusion.highway_t.weight", &[j, j], scale, rng)?;
        let b_t = store.constant("fusion.highway_t.bias", &[j], CARRY_BIAS)?;
        let highway_t = Linear::new(w_t, Some(b_t));
        // Pooled columns start small and the query columns as identity, so the
        // spliced row initially matches the encoder row it replaces.
        let mut w_o = vec![0.0; dims.context * j];
        for (r, row) in w_o.chunks_mut(j).enumerate() {
            for v in &mut row[..dims.definition] {
                *v = rng.random_range(-scale..=scale);
            }
            row[dims.definition + r] = 1.0;
        }
        let w_o = store.insert("fusion.out.weight", Tensor::from_vec(w_o, (dims.context, j), &Device::Cpu)?)?;
        let out = Linear::new(w_o, None);
        Ok(Self {
            dims,
            w_a,
            highway_h,
            highway_t,
            out,
        })
    }

    /// Explicit parameters: `w_h`, `w_t` are `(J, J)` and `w_o` is `(D^B, J)`
    /// with `J = D^S + D^B`.
    pub fn from_tensors(w_a: Tensor, w_h: Tensor, b_h: Tensor, w_t: Tensor, b_t: Tensor, w_o: Tensor) -> Result<Self> {
        let (context, definition) = w_a.dims2()?;
        let dims = FusionDims { context, definition };
        let j = dims.joint();
        for (name, t, shape) in [
            ("w_h", &w_h, vec![j, j]),
            ("w_t", &w_t, vec![j, j]),
            ("w_o", &w_o, vec![context, j]),
            ("b_h", &b_h, vec![j]),
            ("b_t", &b_t, vec![j]),
        ] {
            if t.dims() != shape.as_slice() {
                return Err(Error::invalid(format!("{name} has shape {:?}, expected {shape:?}", t.dims())));
            }
        }
        Ok(Self {
            dims,
            w_a,
            highway_h: Linear::new(w_h, Some(b_h)),
            highway_t: Linear::new(w_t, Some(b_t)),
            out: Linear::new(w_o, None),
        })
    }
}

/// Batched attention. `defs: (B, N, D^S)`, `def_bias: (B, 1, N)` (0 or large
/// negative for padding), `query: (B, D^B)`. Returns weights `(B, N)` and
/// pooled `(B, D^S)`.
pub fn attend_batch(defs: &Tensor, def_bias: &Tensor, query: &Tensor, w_a: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_, n, _) = defs.dims3()?;
    if n == 0 {
        return Err(Error::invalid("attention over zero definitions"));
    }
    let projected = query.matmul(w_a)?.unsqueeze(1)?;
    let scores = projected.matmul(&defs.transpose(1, 2)?.contiguous()?)?;
    let weights = ops::softmax(&scores.broadcast_add(def_bias)?, D::Minus1)?;
    let pooled = weights.matmul(defs)?.squeeze(1)?;
    Ok((weights.squeeze(1)?, pooled))
}

/// Batched highway fusion of `pooled: (B, D^S)` with `e_w: (B, D^B)`.
pub fn fuse_batch(pooled: &Tensor, e_w: &Tensor, params: &FusionParams) -> Result<Tensor> {
    let x = Tensor::cat(&[pooled, e_w], 1)?;
    let gate = ops::sigmoid(&params.highway_t.forward(&x)?)?;
    let h = params.highway_h.forward(&x)?.relu()?;
    let carry = gate.affine(-1.0, 1.0)?;
    let y = ((&gate * &h)? + (carry * &x)?)?;
    Ok(params.out.forward(&y)?)
}

/// `(B, L)` one-hot rows selecting each mask position.
pub fn mask_one_hot(mask_index: &[usize], len: usize, dtype: DType, device: &candle_core::Device) -> Result<Tensor> {
    let mut data = vec![0f64; mask_index.len() * len];
    for (b, &m) in mask_index.iter().enumerate() {
        if m >= len {
            return Err(Error::invalid(format!("mask index {m} outside length {len}")));
        }
        data[b * len + m] = 1.0;
    }
    Ok(Tensor::from_vec(data, (mask_index.len(), len), device)?.to_dtype(dtype)?)
}

/// Rows of `ctx: (B, L, D)` at the one-hot positions → `(B, D)`.
pub fn gather_rows(ctx: &Tensor, one_hot: &Tensor) -> Result<Tensor> {
    Ok(one_hot.unsqueeze(1)?.matmul(ctx)?.squeeze(1)?)
}

/// Batched splice: `ctx ⊙ (1 − onehot) + onehot ⊗ fused`. Bit-identical to
/// [`splice_embedding`] since the unselected terms are exact zeros.
pub fn splice_batch(ctx: &Tensor, one_hot: &Tensor, fused: &Tensor) -> Result<Tensor> {
    let sel = one_hot.unsqueeze(2)?;
    let keep = sel.affine(-1.0, 1.0)?;
    let kept = ctx.broadcast_mul(&keep)?;
    let placed = sel.broadcast_mul(&fused.unsqueeze(1)?)?;
    Ok((kept + placed)?)
}

/// Single instance: `defs: (N, D^S)`, `query: (D^B)` → weights `(N)`,
/// pooled `(D^S)`.
pub fn attend_definitions(defs: &Tensor, query: &Tensor, w_a: &Tensor) -> Result<(Tensor, Tensor)> {
    let (n, _) = defs.dims2()?;
    let bias = Tensor::zeros((1, 1, n), defs.dtype(), defs.device())?;
    let (w, p) = attend_batch(&defs.unsqueeze(0)?, &bias, &query.unsqueeze(0)?, w_a)?;
    Ok((w.squeeze(0)?, p.squeeze(0)?))
}

/// Single instance: `pooled: (D^S)`, `e_w: (D^B)` → `(D^B)`.
pub fn fuse_definition(pooled: &Tensor, e_w: &Tensor, params: &FusionParams) -> Result<Tensor> {
    Ok(fuse_batch(&pooled.unsqueeze(0)?, &e_w.unsqueeze(0)?, params)?.squeeze(0)?)
}

/// Replaces row `mask_index` of `ctx: (L, D)` with `fused: (D)`.
pub fn splice_embedding(ctx: &Tensor, mask_index: usize, fused: &Tensor) -> Result<Tensor> {
    let (l, d) = ctx.dims2()?;
    if mask_index >= l {
        return Err(Error::invalid(format!("mask index {mask_index} outside {l} rows")));
    }
    if fused.dims() != [d] {
        return Err(Error::invalid(format!("fused vector has shape {:?}, expected [{d}]", fused.dims())));
    }
    let mut parts = Vec::with_capacity(3);
    if mask_index > 0 {
        parts.push(ctx.narrow(0, 0, mask_index)?);
    }
    parts.push(fused.unsqueeze(0)?);
    if mask_index + 1 < l {
        parts.push(ctx.narrow(0, mask_index + 1, l - mask_index - 1)?);
    }
    Ok(Tensor::cat(&parts, 0)?)
}
