//! Reverse-mode gradients of the masked flow-matching loss with respect to
//! the three learnable parameter groups. The block weights are frozen, so
//! the chain only has to reach the simulated key/value latents: loss →
//! scatter → blocks (FFN, attention, normalizations) → outer gather →
//! `simulate_kv` → (g, s, bias).

use crate::error::Result;
use crate::numerics::{
    gelu_grad, gsample_1d_backward, layer_norm_backward_row, matmul_into, real, Real,
    SamplingConvention,
};
use crate::tensorio::Tensor;

use super::forward::run_forward_traced;
use super::{
    flow_matching_mask_loss, residual_latent, DiffSimParams, GatherSource, LatentBundle,
    ToyDitBlock,
};

/// Gradients for the three groups, in the same layout as the parameters.
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    pub g: Vec<T>,
    /// `[eta, C]`
    pub s: Tensor<T>,
    /// `[eta, C]`
    pub bias: Tensor<T>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros(eta: usize, c: usize) -> Self {
        ParamGrads {
            g: vec![T::zero(); eta],
            s: Tensor::zeros(&[eta, c]),
            bias: Tensor::zeros(&[eta, c]),
        }
    }

    /// L2 norm over every component of every group.
    pub fn global_norm(&self) -> T {
        let mut sum = T::zero();
        for &x in self.g.iter().chain(self.s.data()).chain(self.bias.data()) {
            sum = sum + x * x;
        }
        sum.sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        for x in self.g.iter_mut() {
            *x = *x * factor;
        }
        for x in self.s.data_mut().iter_mut().chain(self.bias.data_mut()) {
            *x = *x * factor;
        }
    }

    /// Elementwise sum, for averaging gradients over a dataset.
    pub fn accumulate(&mut self, other: &Self) {
        for (a, &o) in self.g.iter_mut().zip(&other.g) {
            *a = *a + o;
        }
        for (a, &o) in self.s.data_mut().iter_mut().zip(other.s.data()) {
            *a = *a + o;
        }
        for (a, &o) in self.bias.data_mut().iter_mut().zip(other.bias.data()) {
            *a = *a + o;
        }
    }
}

/// Loss and exact gradients of [`flow_matching_mask_loss`] composed with the
/// forward run, with respect to `g`, `s`, and `bias` only.
pub fn grad_params<T: Real>(
    bundle: &LatentBundle<T>,
    params: &DiffSimParams<T>,
    blocks: &[ToyDitBlock<T>],
    target: &Tensor<T>,
    conv: SamplingConvention,
    source: GatherSource,
) -> Result<(T, ParamGrads<T>)> {
    let (b, l, c) = bundle.validate()?;
    let eta = blocks.len();
    let (out, trace) = run_forward_traced(bundle, params, blocks, conv, source)?;
    let loss = flow_matching_mask_loss(&out, target, &bundle.latent_mask)?;

    // dL/d out: 2·(out − target)/count on masked positions, 0 elsewhere.
    let count = bundle.latent_mask.data().iter().filter(|&&v| v == 1).count();
    let loss_scale = real::<T>(2.0 / count as f64);
    let mut dout = vec![T::zero(); b * l * c];
    for p in 0..b * l {
        if bundle.latent_mask.data()[p] == 1 {
            for ch in 0..c {
                dout[p * c + ch] = loss_scale * (out.data()[p * c + ch] - target.data()[p * c + ch]);
            }
        }
    }
    let dout = Tensor::new(vec![b, l, c], dout)?;

    // Through the final scatter (adjoint of the backward-index sampling).
    let mq = trace.inner.l_max;
    let mo = trace.outer.l_max;
    let mk = mo + mq;
    let mut dst: Vec<T> = gsample_1d_backward(&dout, &trace.inner.ind_b, mq)?.into_data();

    let mut grads = ParamGrads::zeros(eta, c);
    let res = residual_latent(&bundle.lat_nis, &bundle.lat_mask)?;
    let one = T::one();

    for i in (0..eta).rev() {
        let blk = &blocks[i];
        let tr = &trace.block_traces[i];
        let f = blk.w1.shape()[1];
        let rows = b * mq;

        // FFN: x_next = st1 + gelu(ln_st1·w1)·w2, with dst = d x_next.
        let w2t = transpose(blk.w2.data(), f, c);
        let mut dact = vec![T::zero(); rows * f];
        matmul_into(&dst, &w2t, &mut dact, rows, c, f);
        for (d, &hp) in dact.iter_mut().zip(tr.hidden_pre.data()) {
            *d = *d * gelu_grad(hp);
        }
        let w1t = transpose(blk.w1.data(), c, f);
        let mut dln1 = vec![T::zero(); rows * c];
        matmul_into(&dact, &w1t, &mut dln1, rows, f, c);

        let mut dst1 = dst.clone();
        let mut buf = vec![T::zero(); c];
        for r in 0..rows {
            layer_norm_backward_row(
                &dln1[r * c..(r + 1) * c],
                &tr.ln_st1.data()[r * c..(r + 1) * c],
                tr.inv_std_st1[r],
                &mut buf,
            );
            for (d, &x) in dst1[r * c..(r + 1) * c].iter_mut().zip(&buf) {
                *d = *d + x;
            }
        }

        // Output projection: st1 = st_in + attn·wo.
        let wot = transpose(blk.wo.data(), c, c);
        let mut dattn = vec![T::zero(); rows * c];
        matmul_into(&dst1, &wot, &mut dattn, rows, c, c);
        let mut dst_in = dst1; // residual path; more is added below

        // Attention core: per (batch, head) softmax backward.
        let heads = blk.heads;
        let dh = c / heads;
        let attn_scale = real::<T>(1.0 / (dh as f64).sqrt());
        let mut dq = vec![T::zero(); b * mq * c];
        let mut dk = vec![T::zero(); b * mk * c];
        let mut dv = vec![T::zero(); b * mk * c];

        let mut qh = vec![T::zero(); mq * dh];
        let mut kh = vec![T::zero(); mk * dh];
        let mut vt = vec![T::zero(); dh * mk];
        let mut doh = vec![T::zero(); mq * dh];
        let mut dw = vec![T::zero(); mq * mk];
        let mut ds = vec![T::zero(); mq * mk];
        let mut dst_t = vec![T::zero(); mk * mq];
        let mut wt = vec![T::zero(); mk * mq];
        let mut dqh = vec![T::zero(); mq * dh];
        let mut dkh = vec![T::zero(); mk * dh];
        let mut dvh = vec![T::zero(); mk * dh];

        for bi in 0..b {
            for h in 0..heads {
                let c0 = h * dh;
                for iq in 0..mq {
                    let src = (bi * mq + iq) * c + c0;
                    qh[iq * dh..(iq + 1) * dh].copy_from_slice(&tr.q.data()[src..src + dh]);
                    doh[iq * dh..(iq + 1) * dh].copy_from_slice(&dattn[src..src + dh]);
                }
                for jk in 0..mk {
                    let src = (bi * mk + jk) * c + c0;
                    kh[jk * dh..(jk + 1) * dh].copy_from_slice(&tr.k.data()[src..src + dh]);
                    for d in 0..dh {
                        vt[d * mk + jk] = tr.v.data()[src + d];
                    }
                }
                let wslice = &tr.attn_weights.data()[(bi * heads + h) * mq * mk..(bi * heads + h + 1) * mq * mk];

                // dW = dO·Vᵀ; dV = Wᵀ·dO.
                matmul_into(&doh, &vt, &mut dw, mq, dh, mk);
                transpose_into(wslice, mq, mk, &mut wt);
                matmul_into(&wt, &doh, &mut dvh, mk, mq, dh);

                // Softmax backward per query row: dS = W ⊙ (dW − ⟨dW, W⟩).
                for iq in 0..mq {
                    let wrow = &wslice[iq * mk..(iq + 1) * mk];
                    let dwrow = &dw[iq * mk..(iq + 1) * mk];
                    let mut dot = T::zero();
                    for (&a, &w) in dwrow.iter().zip(wrow) {
                        dot = dot + a * w;
                    }
                    for j in 0..mk {
                        ds[iq * mk + j] = wrow[j] * (dwrow[j] - dot);
                    }
                }

                // Scores were scale·(Q·Kᵀ) at valid positions.
                matmul_into(&ds, &kh, &mut dqh, mq, mk, dh);
                transpose_into(&ds, mq, mk, &mut dst_t);
                matmul_into(&dst_t, &qh, &mut dkh, mk, mq, dh);

                for iq in 0..mq {
                    let dstp = (bi * mq + iq) * c + c0;
                    for d in 0..dh {
                        dq[dstp + d] = attn_scale * dqh[iq * dh + d];
                    }
                }
                for jk in 0..mk {
                    let dstp = (bi * mk + jk) * c + c0;
                    for d in 0..dh {
                        dk[dstp + d] = attn_scale * dkh[jk * dh + d];
                        dv[dstp + d] = dvh[jk * dh + d];
                    }
                }
            }
        }

        // Key/value projections share the normalized input.
        let wkt = transpose(blk.wk.data(), c, c);
        let wvt = transpose(blk.wv.data(), c, c);
        let mut dkv_ln = vec![T::zero(); b * mk * c];
        matmul_into(&dk, &wkt, &mut dkv_ln, b * mk, c, c);
        let mut tmp = vec![T::zero(); b * mk * c];
        matmul_into(&dv, &wvt, &mut tmp, b * mk, c, c);
        for (a, &t) in dkv_ln.iter_mut().zip(&tmp) {
            *a = *a + t;
        }

        // Query projection feeds the same normalized inner tokens.
        let wqt = transpose(blk.wq.data(), c, c);
        let mut dln_x = vec![T::zero(); b * mq * c];
        matmul_into(&dq, &wqt, &mut dln_x, b * mq, c, c);

        // Split concat(outer, inner): outer rows leave via the KV proxy,
        // inner rows add to the query-side normalization gradient.
        let mut dln_o = vec![T::zero(); b * mo * c];
        for bi in 0..b {
            for j in 0..mo {
                let src = (bi * mk + j) * c;
                dln_o[(bi * mo + j) * c..(bi * mo + j + 1) * c]
                    .copy_from_slice(&dkv_ln[src..src + c]);
            }
            for j in 0..mq {
                let src = (bi * mk + mo + j) * c;
                for (d, &x) in dln_x[(bi * mq + j) * c..(bi * mq + j + 1) * c]
                    .iter_mut()
                    .zip(&dkv_ln[src..src + c])
                {
                    *d = *d + x;
                }
            }
        }

        // Inner normalization: x_pos = st_in + pos (pos is constant).
        for r in 0..rows {
            layer_norm_backward_row(
                &dln_x[r * c..(r + 1) * c],
                &tr.ln_x.data()[r * c..(r + 1) * c],
                tr.inv_std_x[r],
                &mut buf,
            );
            for (d, &x) in dst_in[r * c..(r + 1) * c].iter_mut().zip(&buf) {
                *d = *d + x;
            }
        }

        // Outer normalization, then the adjoint of the outer gather.
        let mut dkv_outer = vec![T::zero(); b * mo * c];
        for r in 0..b * mo {
            layer_norm_backward_row(
                &dln_o[r * c..(r + 1) * c],
                &tr.ln_kv_outer.data()[r * c..(r + 1) * c],
                tr.inv_std_kv[r],
                &mut dkv_outer[r * c..(r + 1) * c],
            );
        }
        let dkv_outer = Tensor::new(vec![b, mo, c], dkv_outer)?;
        let dkv_full = gsample_1d_backward(&dkv_outer, &trace.outer.ind_f, l)?;

        // simulate_kv backward: kv = (1 + s)·(g·lm + (1−g)·res) + bias.
        let g_i = params.g[i];
        let srow = &params.s.data()[i * c..(i + 1) * c];
        let mut dbias_acc = vec![T::zero(); c];
        let mut ds_acc = vec![T::zero(); c];
        let mut dg_acc = T::zero();
        for p in 0..b * l {
            for ch in 0..c {
                let dkv = dkv_full.data()[p * c + ch];
                let lm = bundle.lat_mask.data()[p * c + ch];
                let rs = res.data()[p * c + ch];
                let pre = g_i * lm + (one - g_i) * rs;
                dbias_acc[ch] = dbias_acc[ch] + dkv;
                ds_acc[ch] = ds_acc[ch] + dkv * pre;
                dg_acc = dg_acc + dkv * (one + srow[ch]) * (lm - rs);
            }
        }
        grads.g[i] = dg_acc;
        grads.s.data_mut()[i * c..(i + 1) * c].copy_from_slice(&ds_acc);
        grads.bias.data_mut()[i * c..(i + 1) * c].copy_from_slice(&dbias_acc);

        dst = dst_in;
    }

    Ok((loss, grads))
}

fn transpose<T: Real>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    transpose_into(src, rows, cols, &mut out);
    out
}

fn transpose_into<T: Real>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    debug_assert_eq!(src.len(), rows * cols);
    debug_assert_eq!(dst.len(), rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Central-difference gradient of the loss in one parameter coordinate;
/// shared by the unit tests here and the end-to-end gradient-check CLI.
#[allow(clippy::too_many_arguments)] // mirrors `grad_params` plus the probed coordinate and step
pub fn finite_difference<T: Real>(
    bundle: &LatentBundle<T>,
    params: &DiffSimParams<T>,
    blocks: &[ToyDitBlock<T>],
    target: &Tensor<T>,
    conv: SamplingConvention,
    source: GatherSource,
    coord: ParamCoord,
    epsilon: f64,
) -> Result<T> {
    let eps = real::<T>(epsilon);
    let eval = |p: &DiffSimParams<T>| -> Result<T> {
        let (o, _) = super::run_diffsim_detailed(bundle, p, blocks, conv, source)?;
        flow_matching_mask_loss(&o, target, &bundle.latent_mask)
    };
    let mut plus = params.clone();
    let mut minus = params.clone();
    match coord {
        ParamCoord::G(i) => {
            plus.g[i] = plus.g[i] + eps;
            minus.g[i] = minus.g[i] - eps;
        }
        ParamCoord::S(i, ch) => {
            let c = params.s.shape()[1];
            plus.s.data_mut()[i * c + ch] = plus.s.data()[i * c + ch] + eps;
            minus.s.data_mut()[i * c + ch] = minus.s.data()[i * c + ch] - eps;
        }
        ParamCoord::Bias(i, ch) => {
            let c = params.bias.shape()[1];
            plus.bias.data_mut()[i * c + ch] = plus.bias.data()[i * c + ch] + eps;
            minus.bias.data_mut()[i * c + ch] = minus.bias.data()[i * c + ch] - eps;
        }
    }
    let two = real::<T>(2.0);
    Ok((eval(&plus)? - eval(&minus)?) / (two * eps))
}

/// Addresses one scalar inside the three parameter groups.
#[derive(Clone, Copy, Debug)]
pub enum ParamCoord {
    G(usize),
    S(usize, usize),
    Bias(usize, usize),
}

/// Every coordinate of a parameter set, for exhaustive gradient checks.
pub fn all_coords<T: Real>(params: &DiffSimParams<T>) -> Vec<ParamCoord> {
    let eta = params.g.len();
    let c = params.s.shape()[1];
    let mut coords = Vec::with_capacity(eta * (1 + 2 * c));
    for i in 0..eta {
        coords.push(ParamCoord::G(i));
        for ch in 0..c {
            coords.push(ParamCoord::S(i, ch));
        }
        for ch in 0..c {
            coords.push(ParamCoord::Bias(i, ch));
        }
    }
    coords
}

/// Reads the analytic gradient component addressed by `coord`.
pub fn grad_component<T: Real>(grads: &ParamGrads<T>, coord: ParamCoord) -> T {
    let c = grads.s.shape()[1];
    match coord {
        ParamCoord::G(i) => grads.g[i],
        ParamCoord::S(i, ch) => grads.s.data()[i * c + ch],
        ParamCoord::Bias(i, ch) => grads.bias.data()[i * c + ch],
    }
}
