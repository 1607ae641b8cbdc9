use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{gemm, MatMut, MatRef, Scalar};
use super::params::ParameterSet;
use super::rope_table::RopeTable;
use super::ModelConfig;
use crate::error::{invalid_arg, Result};
use crate::posgen::Token;

const RMS_EPS: f64 = 1e-6;

/// Activations of one block kept for the backward pass.
#[derive(Debug, Clone)]
struct LayerCache<T> {
    x_in: Vec<T>,
    inv_rms1: Vec<T>,
    h1: Vec<T>,
    /// Queries and keys after rotation.
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Softmax weights, `batch x heads x seq x seq`, zero above the diagonal.
    att: Vec<T>,
    o: Vec<T>,
    x_mid: Vec<T>,
    inv_rms2: Vec<T>,
    h2: Vec<T>,
    /// ReLU output of the first feed-forward matrix.
    act: Vec<T>,
}

/// Everything produced by [`forward`]; `logits` is
/// `batch x seq_len x vocab`, row-major.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub batch: usize,
    pub seq_len: usize,
    layers: Vec<LayerCache<T>>,
    x_final: Vec<T>,
    inv_rms_final: Vec<T>,
    h_final: Vec<T>,
    pub logits: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Attention weights of `layer` for sequence `b`, head `h`, as a
    /// `seq_len x seq_len` row-major block (row = query position).
    pub fn attention(&self, layer: usize, b: usize, h: usize, n_heads: usize) -> &[T] {
        let t = self.seq_len;
        let start = (b * n_heads + h) * t * t;
        &self.layers[layer].att[start..start + t * t]
    }

    /// Logits of sequence `b` at `position`.
    pub fn logits_at(&self, b: usize, position: usize) -> &[T] {
        let v = self.logits.len() / (self.batch * self.seq_len);
        let row = b * self.seq_len + position;
        &self.logits[row * v..(row + 1) * v]
    }
}

fn rms_forward<T: Scalar>(x: &[T], gain: &[T], out: &mut [T], inv_rms: &mut [T]) {
    let d = gain.len();
    let eps = T::of(RMS_EPS);
    let inv_d = T::of(1.0 / d as f64);
    for ((row, o), r) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)).zip(inv_rms.iter_mut()) {
        let ms = row.iter().fold(T::zero(), |acc, &v| acc + v * v) * inv_d;
        let inv = (ms + eps).sqrt().recip();
        *r = inv;
        for ((o, &v), &g) in o.iter_mut().zip(row).zip(gain) {
            *o = v * inv * g;
        }
    }
}

/// Adds `d loss / d x` to `dx` and `d loss / d gain` to `dgain`.
fn rms_backward<T: Scalar>(dy: &[T], x: &[T], inv_rms: &[T], gain: &[T], dx: &mut [T], dgain: &mut [T]) {
    let d = gain.len();
    let inv_d = T::of(1.0 / d as f64);
    for (((dy, x), &r), dx) in dy
        .chunks_exact(d)
        .zip(x.chunks_exact(d))
        .zip(inv_rms)
        .zip(dx.chunks_exact_mut(d))
    {
        let mut dot = T::zero();
        for i in 0..d {
            let gdy = gain[i] * dy[i];
            dot = dot + gdy * x[i];
            dgain[i] = dgain[i] + dy[i] * x[i] * r;
        }
        let coeff = r * r * r * dot * inv_d;
        for i in 0..d {
            dx[i] = dx[i] + r * gain[i] * dy[i] - coeff * x[i];
        }
    }
}

fn matmul<T: Scalar>(x: &[T], rows: usize, inner: usize, w: &[T], cols: usize, out: &mut [T]) {
    gemm(
        T::one(),
        MatRef::new(x, rows, inner),
        MatRef::new(w, inner, cols),
        T::zero(),
        MatMut::new(out, rows, cols),
    );
}

fn check_inputs<T: Scalar>(
    params: &ParameterSet<T>,
    config: &ModelConfig,
    rope: &RopeTable<T>,
    tokens: &[Token],
    batch: usize,
    seq_len: usize,
) -> Result<()> {
    if batch == 0 || seq_len == 0 {
        return Err(invalid_arg!("empty batch"));
    }
    if tokens.len() != batch * seq_len {
        return Err(invalid_arg!(
            "{} tokens do not form a {batch} x {seq_len} batch",
            tokens.len()
        ));
    }
    if let Some(bad) = tokens.iter().find(|&&t| t as usize >= config.vocab_size) {
        return Err(invalid_arg!("token {bad} outside vocabulary of {}", config.vocab_size));
    }
    if seq_len > rope.positions() {
        return Err(invalid_arg!(
            "position {} exceeds the {}-position angle table",
            seq_len - 1,
            rope.positions()
        ));
    }
    if rope.schedule().head_dim() != config.head_dim {
        return Err(invalid_arg!("angle table head_dim differs from the model"));
    }
    if params.values().len() != params.layout().len()
        || *params.layout() != super::ParamLayout::new(config)
    {
        return Err(invalid_arg!("parameter layout does not match the model config"));
    }
    Ok(())
}

/// Teacher-forced forward pass over a `batch x seq_len` block of tokens.
pub fn forward<T: Scalar>(
    params: &ParameterSet<T>,
    config: &ModelConfig,
    rope: &RopeTable<T>,
    tokens: &[Token],
    batch: usize,
    seq_len: usize,
) -> Result<ForwardCache<T>> {
    check_inputs(params, config, rope, tokens, batch, seq_len)?;
    let layout = params.layout();
    let (t, d, nh, hd, f, v) = (
        seq_len,
        config.d_model,
        config.n_heads,
        config.head_dim,
        config.ffn_dim,
        config.vocab_size,
    );
    let n = batch * t;
    let scale = T::of(config.pe.logit_multiplier() / libm::sqrt(hd as f64));

    let emb = params.slice(layout.tok_emb, v * d);
    let mut x = vec![T::zero(); n * d];
    for (row, &tok) in x.chunks_exact_mut(d).zip(tokens) {
        row.copy_from_slice(&emb[tok as usize * d..(tok as usize + 1) * d]);
    }

    let mut layers = Vec::with_capacity(config.n_layers);
    for lo in &layout.layers {
        let x_in = x;
        let mut inv_rms1 = vec![T::zero(); n];
        let mut h1 = vec![T::zero(); n * d];
        rms_forward(&x_in, params.slice(lo.attn_norm, d), &mut h1, &mut inv_rms1);

        let mut q = vec![T::zero(); n * d];
        let mut k = vec![T::zero(); n * d];
        let mut vv = vec![T::zero(); n * d];
        matmul(&h1, n, d, params.slice(lo.wq, d * d), d, &mut q);
        matmul(&h1, n, d, params.slice(lo.wk, d * d), d, &mut k);
        matmul(&h1, n, d, params.slice(lo.wv, d * d), d, &mut vv);
        for (i, (qr, kr)) in q.chunks_exact_mut(d).zip(k.chunks_exact_mut(d)).enumerate() {
            rope.rotate_row(qr, i % t);
            rope.rotate_row(kr, i % t);
        }

        let mut att = vec![T::zero(); batch * nh * t * t];
        let mut o = vec![T::zero(); n * d];
        for b in 0..batch {
            for h in 0..nh {
                let off = b * t * d + h * hd;
                let block = &mut att[(b * nh + h) * t * t..(b * nh + h + 1) * t * t];
                gemm(
                    scale,
                    MatRef::view(&q, off, t, hd, d),
                    MatRef::view(&k, off, t, hd, d).t(),
                    T::zero(),
                    MatMut::new(block, t, t),
                );
                for (i, row) in block.chunks_exact_mut(t).enumerate() {
                    let max = row[..=i].iter().fold(T::neg_infinity(), |m, &s| m.max(s));
                    let mut sum = T::zero();
                    for s in &mut row[..=i] {
                        *s = (*s - max).exp();
                        sum = sum + *s;
                    }
                    let inv = sum.recip();
                    for s in &mut row[..=i] {
                        *s = *s * inv;
                    }
                    for s in &mut row[i + 1..] {
                        *s = T::zero();
                    }
                }
                gemm(
                    T::one(),
                    MatRef::new(block, t, t),
                    MatRef::view(&vv, off, t, hd, d),
                    T::zero(),
                    MatMut::view(&mut o, off, t, hd, d),
                );
            }
        }

        let mut x_mid = vec![T::zero(); n * d];
        matmul(&o, n, d, params.slice(lo.wo, d * d), d, &mut x_mid);
        for (m, &r) in x_mid.iter_mut().zip(&x_in) {
            *m = *m + r;
        }

        let mut inv_rms2 = vec![T::zero(); n];
        let mut h2 = vec![T::zero(); n * d];
        rms_forward(&x_mid, params.slice(lo.ffn_norm, d), &mut h2, &mut inv_rms2);
        let mut act = vec![T::zero(); n * f];
        matmul(&h2, n, d, params.slice(lo.w1, d * f), f, &mut act);
        for a in &mut act {
            *a = a.max(T::zero());
        }
        let mut x_out = vec![T::zero(); n * d];
        matmul(&act, n, f, params.slice(lo.w2, f * d), d, &mut x_out);
        for (out, &m) in x_out.iter_mut().zip(&x_mid) {
            *out = *out + m;
        }

        layers.push(LayerCache {
            x_in,
            inv_rms1,
            h1,
            q,
            k,
            v: vv,
            att,
            o,
            x_mid,
            inv_rms2,
            h2,
            act,
        });
        x = x_out;
    }

    let mut inv_rms_final = vec![T::zero(); n];
    let mut h_final = vec![T::zero(); n * d];
    rms_forward(&x, params.slice(layout.final_norm, d), &mut h_final, &mut inv_rms_final);
    let mut logits = vec![T::zero(); n * v];
    matmul(&h_final, n, d, params.slice(layout.lm_head, d * v), v, &mut logits);

    Ok(ForwardCache {
        batch,
        seq_len,
        layers,
        x_final: x,
        inv_rms_final,
        h_final,
        logits,
    })
}

/// Rows of the flattened batch whose next-token target is scored.
fn scored(position: usize, seq_len: usize, loss_mask_start: usize) -> bool {
    position + 1 < seq_len && position + 1 >= loss_mask_start
}

/// Mean next-token cross-entropy (in `f64`) over targets at positions
/// `>= loss_mask_start`, and its gradient with respect to the logits.
pub(crate) fn cross_entropy<T: Scalar>(
    logits: &[T],
    tokens: &[Token],
    batch: usize,
    seq_len: usize,
    vocab: usize,
    loss_mask_start: usize,
) -> Result<(f64, Vec<T>)> {
    let count = (0..seq_len).filter(|&p| scored(p, seq_len, loss_mask_start)).count() * batch;
    if count == 0 {
        return Err(invalid_arg!(
            "no targets at or after position {loss_mask_start} in sequences of {seq_len}"
        ));
    }
    let inv_count = 1.0 / count as f64;
    let mut dlogits = vec![T::zero(); logits.len()];
    let mut total = 0.0f64;
    for (row, (lg, dl)) in logits.chunks_exact(vocab).zip(dlogits.chunks_exact_mut(vocab)).enumerate() {
        let p = row % seq_len;
        if !scored(p, seq_len, loss_mask_start) {
            continue;
        }
        let target = tokens[row + 1] as usize;
        let max = lg.iter().fold(f64::NEG_INFINITY, |m, &z| m.max(z.f64()));
        let sum: f64 = lg.iter().map(|&z| libm::exp(z.f64() - max)).sum();
        let log_z = max + libm::log(sum);
        total += log_z - lg[target].f64();
        for (i, (dz, &z)) in dl.iter_mut().zip(lg).enumerate() {
            let prob = libm::exp(z.f64() - log_z);
            let onehot = if i == target { 1.0 } else { 0.0 };
            *dz = T::of((prob - onehot) * inv_count);
        }
    }
    Ok((total * inv_count, dlogits))
}

/// Loss, gradients and the forward pass they came from.
#[derive(Debug, Clone)]
pub struct LossAndGrad<T> {
    pub loss: f64,
    pub grads: ParameterSet<T>,
    pub cache: ForwardCache<T>,
}

/// Mean cross-entropy of next-token prediction over targets at positions
/// `>= loss_mask_start`, with exact gradients for every parameter.
pub fn loss_and_grad<T: Scalar>(
    params: &ParameterSet<T>,
    config: &ModelConfig,
    rope: &RopeTable<T>,
    tokens: &[Token],
    batch: usize,
    seq_len: usize,
    loss_mask_start: usize,
) -> Result<LossAndGrad<T>> {
    if loss_mask_start == 0 {
        return Err(invalid_arg!("loss_mask_start must be >= 1"));
    }
    let cache = forward(params, config, rope, tokens, batch, seq_len)?;
    let (loss, dlogits) =
        cross_entropy(&cache.logits, tokens, batch, seq_len, config.vocab_size, loss_mask_start)?;
    let grads = backward(params, config, rope, &cache, tokens, &dlogits);
    Ok(LossAndGrad { loss, grads, cache })
}

fn backward<T: Scalar>(
    params: &ParameterSet<T>,
    config: &ModelConfig,
    rope: &RopeTable<T>,
    cache: &ForwardCache<T>,
    tokens: &[Token],
    dlogits: &[T],
) -> ParameterSet<T> {
    let layout = params.layout().clone();
    let (batch, t) = (cache.batch, cache.seq_len);
    let (d, nh, hd, f, v) = (
        config.d_model,
        config.n_heads,
        config.head_dim,
        config.ffn_dim,
        config.vocab_size,
    );
    let n = batch * t;
    let scale = T::of(config.pe.logit_multiplier() / libm::sqrt(hd as f64));
    let mut grads = ParameterSet::zeros(config);
    let g = grads.values_mut();

    // output projection and final norm
    gemm(
        T::one(),
        MatRef::new(&cache.h_final, n, d).t(),
        MatRef::new(dlogits, n, v),
        T::zero(),
        MatMut::new(&mut g[layout.lm_head..layout.lm_head + d * v], d, v),
    );
    let mut dh = vec![T::zero(); n * d];
    gemm(
        T::one(),
        MatRef::new(dlogits, n, v),
        MatRef::new(params.slice(layout.lm_head, d * v), d, v).t(),
        T::zero(),
        MatMut::new(&mut dh, n, d),
    );
    let mut dx = vec![T::zero(); n * d];
    rms_backward(
        &dh,
        &cache.x_final,
        &cache.inv_rms_final,
        params.slice(layout.final_norm, d),
        &mut dx,
        &mut g[layout.final_norm..layout.final_norm + d],
    );

    let mut dact = vec![T::zero(); n * f];
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut dp = vec![T::zero(); t * t];
    for (lo, lc) in layout.layers.iter().zip(&cache.layers).rev() {
        // feed-forward: x_out = x_mid + relu(h2 W1) W2
        gemm(
            T::one(),
            MatRef::new(&lc.act, n, f).t(),
            MatRef::new(&dx, n, d),
            T::zero(),
            MatMut::new(&mut g[lo.w2..lo.w2 + f * d], f, d),
        );
        gemm(
            T::one(),
            MatRef::new(&dx, n, d),
            MatRef::new(params.slice(lo.w2, f * d), f, d).t(),
            T::zero(),
            MatMut::new(&mut dact, n, f),
        );
        for (da, &a) in dact.iter_mut().zip(&lc.act) {
            if a <= T::zero() {
                *da = T::zero();
            }
        }
        gemm(
            T::one(),
            MatRef::new(&lc.h2, n, d).t(),
            MatRef::new(&dact, n, f),
            T::zero(),
            MatMut::new(&mut g[lo.w1..lo.w1 + d * f], d, f),
        );
        gemm(
            T::one(),
            MatRef::new(&dact, n, f),
            MatRef::new(params.slice(lo.w1, d * f), d, f).t(),
            T::zero(),
            MatMut::new(&mut dh, n, d),
        );
        // dx now holds d/dx_mid
        rms_backward(
            &dh,
            &lc.x_mid,
            &lc.inv_rms2,
            params.slice(lo.ffn_norm, d),
            &mut dx,
            &mut g[lo.ffn_norm..lo.ffn_norm + d],
        );

        // attention: x_mid = x_in + attn(h1) Wo
        gemm(
            T::one(),
            MatRef::new(&lc.o, n, d).t(),
            MatRef::new(&dx, n, d),
            T::zero(),
            MatMut::new(&mut g[lo.wo..lo.wo + d * d], d, d),
        );
        let mut d_o = vec![T::zero(); n * d];
        gemm(
            T::one(),
            MatRef::new(&dx, n, d),
            MatRef::new(params.slice(lo.wo, d * d), d, d).t(),
            T::zero(),
            MatMut::new(&mut d_o, n, d),
        );
        for b in 0..batch {
            for h in 0..nh {
                let off = b * t * d + h * hd;
                let probs = &lc.att[(b * nh + h) * t * t..(b * nh + h + 1) * t * t];
                gemm(
                    T::one(),
                    MatRef::view(&d_o, off, t, hd, d),
                    MatRef::view(&lc.v, off, t, hd, d).t(),
                    T::zero(),
                    MatMut::new(&mut dp, t, t),
                );
                gemm(
                    T::one(),
                    MatRef::new(probs, t, t).t(),
                    MatRef::view(&d_o, off, t, hd, d),
                    T::zero(),
                    MatMut::view(&mut dv, off, t, hd, d),
                );
                // softmax backward, in place in dp
                for (i, (ds, p)) in dp.chunks_exact_mut(t).zip(probs.chunks_exact(t)).enumerate() {
                    let dot = (0..=i).fold(T::zero(), |acc, j| acc + ds[j] * p[j]);
                    for j in 0..=i {
                        ds[j] = p[j] * (ds[j] - dot);
                    }
                    for s in &mut ds[i + 1..] {
                        *s = T::zero();
                    }
                }
                gemm(
                    scale,
                    MatRef::new(&dp, t, t),
                    MatRef::view(&lc.k, off, t, hd, d),
                    T::zero(),
                    MatMut::view(&mut dq, off, t, hd, d),
                );
                gemm(
                    scale,
                    MatRef::new(&dp, t, t).t(),
                    MatRef::view(&lc.q, off, t, hd, d),
                    T::zero(),
                    MatMut::view(&mut dk, off, t, hd, d),
                );
            }
        }
        for (i, (qr, kr)) in dq.chunks_exact_mut(d).zip(dk.chunks_exact_mut(d)).enumerate() {
            rope.rotate_row_inverse(qr, i % t);
            rope.rotate_row_inverse(kr, i % t);
        }
        for (w, dw) in [(lo.wq, &dq), (lo.wk, &dk), (lo.wv, &dv)] {
            gemm(
                T::one(),
                MatRef::new(&lc.h1, n, d).t(),
                MatRef::new(dw, n, d),
                T::zero(),
                MatMut::new(&mut g[w..w + d * d], d, d),
            );
        }
        for (idx, (w, dw)) in [(lo.wq, &dq), (lo.wk, &dk), (lo.wv, &dv)].into_iter().enumerate() {
            gemm(
                T::one(),
                MatRef::new(dw, n, d),
                MatRef::new(params.slice(w, d * d), d, d).t(),
                if idx == 0 { T::zero() } else { T::one() },
                MatMut::new(&mut dh, n, d),
            );
        }
        rms_backward(
            &dh,
            &lc.x_in,
            &lc.inv_rms1,
            params.slice(lo.attn_norm, d),
            &mut dx,
            &mut g[lo.attn_norm..lo.attn_norm + d],
        );
    }

    let emb = &mut g[layout.tok_emb..layout.tok_emb + v * d];
    for (row, &tok) in dx.chunks_exact(d).zip(tokens) {
        let dst = &mut emb[tok as usize * d..(tok as usize + 1) * d];
        for (e, &r) in dst.iter_mut().zip(row) {
            *e = *e + r;
        }
    }
    grads
}
