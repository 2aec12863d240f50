//! Single denoising step over the gathered inner tokens.

use std::time::Instant;

use crate::bvi::{build_indices, gather, scatter, BviIndex};
use crate::error::{Error, Result};
use crate::numerics::{
    attention_with_weights, dims2, dims3, gelu, layer_norm_with_stats, matmul_into, Real,
    SamplingConvention,
};
use crate::tensorio::Tensor;

use super::{simulate_kv, DiffSimParams, GatherSource, LatentBundle, ToyDitBlock};

/// Wall-clock accounting for one run, separating the token-mixing work that
/// scales with the mask from the fixed per-run cost.
#[derive(Clone, Debug)]
pub struct RunMetrics {
    /// Nanoseconds inside the transformer blocks: normalization, Q/K/V and
    /// output projections, attention, and the FFN.
    pub attention_ns: u64,
    /// Nanoseconds for the whole run, including index building, gathers,
    /// key/value simulation, and the final scatter.
    pub total_ns: u64,
    /// Queries processed per block — always the padded inner length, never
    /// the full sequence.
    pub queries_per_block: Vec<usize>,
}

/// Per-block intermediates retained for the analytic backward pass. Only
/// what the reverse sweep actually reads is kept: normalized activations
/// with their inverse standard deviations, the attention operands and
/// weights, and the pre-activation FFN hidden state.
pub(crate) struct BlockTrace<T> {
    pub ln_x: Tensor<T>,
    pub inv_std_x: Vec<T>,
    pub ln_kv_outer: Tensor<T>,
    pub inv_std_kv: Vec<T>,
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    pub attn_weights: Tensor<T>,
    pub ln_st1: Tensor<T>,
    pub inv_std_st1: Vec<T>,
    pub hidden_pre: Tensor<T>,
}

pub(crate) struct ForwardTrace<T> {
    pub inner: BviIndex,
    pub outer: BviIndex,
    pub block_traces: Vec<BlockTrace<T>>,
}

/// Runs the masked tokens through the block stack with simulated outer
/// context and scatters the result back to full length (zero outside the
/// mask). Inner tokens start from the masked-video latent.
pub fn run_diffsim<T: Real>(
    bundle: &LatentBundle<T>,
    params: &DiffSimParams<T>,
    blocks: &[ToyDitBlock<T>],
    conv: SamplingConvention,
) -> Result<Tensor<T>> {
    let (out, _, _) = run_forward(bundle, params, blocks, conv, GatherSource::default(), false)?;
    Ok(out)
}

/// [`run_diffsim`] with a selectable gather source and timing metrics.
pub fn run_diffsim_detailed<T: Real>(
    bundle: &LatentBundle<T>,
    params: &DiffSimParams<T>,
    blocks: &[ToyDitBlock<T>],
    conv: SamplingConvention,
    source: GatherSource,
) -> Result<(Tensor<T>, RunMetrics)> {
    let (out, metrics, _) = run_forward(bundle, params, blocks, conv, source, false)?;
    Ok((out, metrics))
}

/// Forward pass that retains every intermediate the backward pass needs.
pub(crate) fn run_forward_traced<T: Real>(
    bundle: &LatentBundle<T>,
    params: &DiffSimParams<T>,
    blocks: &[ToyDitBlock<T>],
    conv: SamplingConvention,
    source: GatherSource,
) -> Result<(Tensor<T>, ForwardTrace<T>)> {
    let (out, _, trace) = run_forward(bundle, params, blocks, conv, source, true)?;
    Ok((out, trace.expect("trace requested")))
}

fn run_forward<T: Real>(
    bundle: &LatentBundle<T>,
    params: &DiffSimParams<T>,
    blocks: &[ToyDitBlock<T>],
    conv: SamplingConvention,
    source: GatherSource,
    want_trace: bool,
) -> Result<(Tensor<T>, RunMetrics, Option<ForwardTrace<T>>)> {
    let t_start = Instant::now();
    let (b, l, c) = bundle.validate()?;
    if blocks.is_empty() {
        return Err(Error::invalid("run_diffsim: need at least one block"));
    }
    params.validate(blocks.len(), c)?;

    let inner = build_indices(&bundle.latent_mask, conv)?;
    let comp_data: Vec<u8> = bundle.latent_mask.data().iter().map(|&m| 1 - m).collect();
    let comp = Tensor::new(vec![b, l], comp_data)?;
    let outer = build_indices(&comp, conv)
        .map_err(|e| Error::invalid(format!("outer index from mask complement: {e}")))?;

    // Position embedding broadcast across the batch, gathered once per side.
    let mut pos_rep = vec![T::default(); b * l * c];
    for bi in 0..b {
        pos_rep[bi * l * c..(bi + 1) * l * c].copy_from_slice(bundle.pos_emb.data());
    }
    let pos_rep = Tensor::new(vec![b, l, c], pos_rep)?;
    let pos_in = gather(&pos_rep, &inner)?;
    let pos_out = gather(&pos_rep, &outer)?;

    let source_tokens = match source {
        GatherSource::MaskedLatent => &bundle.lat_mask,
        GatherSource::NoiseLatent => &bundle.lat_nis,
    };
    let mut st = gather(source_tokens, &inner)?;

    // Keys/values are [simulated outer | current inner]; pads on either side
    // are invalid.
    let (mq, mo) = (inner.l_max, outer.l_max);
    let mut kv_valid = vec![0u8; b * (mo + mq)];
    for bi in 0..b {
        let row = &mut kv_valid[bi * (mo + mq)..(bi + 1) * (mo + mq)];
        row[..mo].copy_from_slice(&outer.pad_mask.data()[bi * mo..(bi + 1) * mo]);
        row[mo..].copy_from_slice(&inner.pad_mask.data()[bi * mq..(bi + 1) * mq]);
    }
    let kv_valid = Tensor::new(vec![b, mo + mq], kv_valid)?;

    let mut metrics = RunMetrics {
        attention_ns: 0,
        total_ns: 0,
        queries_per_block: Vec::with_capacity(blocks.len()),
    };
    let mut block_traces = Vec::new();

    for (i, blk) in blocks.iter().enumerate() {
        let f = blk.validate(c)?;
        let kv_full = simulate_kv(bundle, params, i)?;
        let kv_outer = gather(&kv_full, &outer)?;
        let kv_out_pos = add(&kv_outer, &pos_out);

        let t_blk = Instant::now();
        let x_pos = add(&st, &pos_in);
        let (ln_x, inv_std_x) = layer_norm_with_stats(&x_pos)?;
        let q = matmul3(&ln_x, &blk.wq)?;
        let (ln_kv_outer, inv_std_kv) = layer_norm_with_stats(&kv_out_pos)?;
        let kv_ln = concat_tokens(&ln_kv_outer, &ln_x)?;
        let k = matmul3(&kv_ln, &blk.wk)?;
        let v = matmul3(&kv_ln, &blk.wv)?;
        let (attn, weights) = attention_with_weights(&q, &k, &v, blk.heads, &kv_valid, want_trace)?;
        let attn_o = matmul3(&attn, &blk.wo)?;
        let st1 = add(&st, &attn_o);

        let (ln_st1, inv_std_st1) = layer_norm_with_stats(&st1)?;
        let rows = b * mq;
        let mut hidden = vec![T::default(); rows * f];
        matmul_into(ln_st1.data(), blk.w1.data(), &mut hidden, rows, c, f);
        let hidden_pre = if want_trace {
            Some(Tensor::new(vec![b, mq, f], hidden.clone())?)
        } else {
            None
        };
        for h in hidden.iter_mut() {
            *h = gelu(*h);
        }
        let mut ffn_out = vec![T::default(); rows * c];
        matmul_into(&hidden, blk.w2.data(), &mut ffn_out, rows, f, c);
        let st2_data: Vec<T> = st1.data().iter().zip(&ffn_out).map(|(&a, &d)| a + d).collect();
        let st2 = Tensor::new(vec![b, mq, c], st2_data)?;
        metrics.attention_ns += t_blk.elapsed().as_nanos() as u64;
        metrics.queries_per_block.push(mq);

        if want_trace {
            block_traces.push(BlockTrace {
                ln_x,
                inv_std_x,
                ln_kv_outer,
                inv_std_kv,
                q,
                k,
                v,
                attn_weights: weights.expect("weights requested"),
                ln_st1,
                inv_std_st1,
                hidden_pre: hidden_pre.expect("trace requested"),
            });
        }
        st = st2;
    }

    let out = scatter(&st, &inner, &bundle.latent_mask)?;
    metrics.total_ns = t_start.elapsed().as_nanos() as u64;
    let trace = if want_trace {
        Some(ForwardTrace { inner, outer, block_traces })
    } else {
        None
    };
    Ok((out, metrics, trace))
}

/// Elementwise sum of two same-shaped tensors.
pub(crate) fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes already equal")
}

/// `[B, M, C] @ [C, N]`, the weight shared across batch rows.
pub(crate) fn matmul3<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, m, c) = dims3(x, "matmul3 x")?;
    let (wc, n) = dims2(w, "matmul3 w")?;
    if wc != c {
        return Err(Error::invalid(format!(
            "matmul3: weight rows {wc} do not match channels {c}"
        )));
    }
    let mut out = vec![T::default(); b * m * n];
    matmul_into(x.data(), w.data(), &mut out, b * m, c, n);
    Tensor::new(vec![b, m, n], out)
}

/// Concatenates two token tensors along the sequence axis.
pub(crate) fn concat_tokens<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, ma, ca) = dims3(a, "concat lhs")?;
    let (bb, mb, cb) = dims3(b, "concat rhs")?;
    if ba != bb || ca != cb {
        return Err(Error::invalid(format!(
            "concat: [{ba}, _, {ca}] and [{bb}, _, {cb}] do not line up"
        )));
    }
    let m = ma + mb;
    let mut out = vec![T::default(); ba * m * ca];
    for bi in 0..ba {
        out[bi * m * ca..bi * m * ca + ma * ca]
            .copy_from_slice(&a.data()[bi * ma * ca..(bi + 1) * ma * ca]);
        out[bi * m * ca + ma * ca..(bi + 1) * m * ca]
            .copy_from_slice(&b.data()[bi * mb * ca..(bi + 1) * mb * ca]);
    }
    Tensor::new(vec![ba, m, ca], out)
}
