//! Numeric kernels the rest of the pipeline is assembled from.
//!
//! Everything here is generic over [`Real`] (f32 or f64) and written as plain
//! loops over flat slices. Accumulations run in a fixed sequential order, so
//! results are deterministic and padded-out zero entries cannot perturb a
//! sum — the batch-invariance guarantees of the indexing layer depend on
//! that. Matrix products accumulate row-wise (axpy form), which vectorizes
//! without any floating-point reassociation.

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};
use crate::tensorio::Tensor;

/// Scalar type the kernels run in.
pub trait Real:
    Float + FromPrimitive + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an f64 constant to the kernel scalar type.
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in kernel float type")
}

/// How normalized sampling grids are constructed (see the indexing module).
///
/// The coordinate-to-index mapping itself is shared: `u = ((x+1)·L − 1) / 2`
/// with border clamping. The conventions differ only in where grid points
/// are placed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingConvention {
    /// Grid points land exactly on token centers `x_i = −1 + (2i+1)/L`, so a
    /// gather followed by a scatter restores masked values bit-exactly.
    ExactCenter,
    /// Grids are built with literal linspace endpoints `1/(2L) − 1` and
    /// `1 − 1/(2L)`, and the short grid is an affine ramp between them.
    /// Points do not land on interpolation centers, so round trips blend
    /// neighboring tokens instead of copying (error bounded by half the
    /// largest adjacent-token difference).
    Verbatim,
}

/// Normalization applied inside LayerNorm denominators.
pub const LN_EPS: f64 = 1e-6;

/// Coordinates closer than this to an integer grid index are snapped onto
/// it. Token centers expressed in normalized coordinates round-trip through
/// `((x+1)·L − 1) / 2` with a few ULPs of noise; snapping turns them back
/// into exact {0, 1} interpolation weights. Grid indices are 1.0 apart, so a
/// 1e-6 snap radius cannot reach across to a different token.
pub const SNAP_TOL: f64 = 1e-6;

/// Maps a normalized coordinate to interpolation endpoints and weight:
/// `u = ((x+1)·len − 1) / 2`, clamped to `[0, len−1]` (border padding), then
/// snapped to the nearest integer within [`SNAP_TOL`]. Returns `(i0, i1, w)`
/// with the sample being `(1−w)·values[i0] + w·values[i1]`.
///
/// Both the forward sampler and its adjoint derive their weights from this
/// single function, which is what makes the adjoint exact.
pub fn sample_weights(x: f64, len: usize) -> (usize, usize, f64) {
    debug_assert!(len >= 1);
    let l = len as f64;
    let mut u = ((x + 1.0) * l - 1.0) / 2.0;
    u = u.clamp(0.0, l - 1.0);
    let nearest = u.round();
    if (u - nearest).abs() <= SNAP_TOL {
        u = nearest;
    }
    let i0 = (u.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    let w = u - i0 as f64;
    (i0, i1, w)
}

/// `count` evenly spaced values from `start` to `end`, both inclusive.
/// `count == 1` returns `[start]`.
pub fn linspace<T: Real>(start: T, end: T, count: usize) -> Result<Tensor<T>> {
    if count == 0 {
        return Err(Error::invalid("linspace requires count ≥ 1"));
    }
    let mut data = Vec::with_capacity(count);
    if count == 1 {
        data.push(start);
    } else {
        let step = (end - start) / real::<T>((count - 1) as f64);
        for i in 0..count {
            data.push(start + step * real::<T>(i as f64));
        }
        // Pin the endpoint: accumulated rounding must not move it.
        data[count - 1] = end;
    }
    Tensor::new(vec![count], data)
}

/// Interpolated 1-D sampling. Reads `values` of shape `[B, L, C]` at the
/// normalized coordinates `coords` of shape `[B, M]`, producing `[B, M, C]`.
/// Out-of-range coordinates clamp to the border tokens. Coordinates are kept
/// in f64 regardless of the value type so that index arithmetic never loses
/// a token.
pub fn gsample_1d<T: Real>(values: &Tensor<T>, coords: &Tensor<f64>) -> Result<Tensor<T>> {
    let (b, l, c) = dims3(values, "gsample_1d values")?;
    let (cb, m) = dims2(coords, "gsample_1d coords")?;
    if cb != b {
        return Err(Error::invalid(format!(
            "gsample_1d: batch mismatch, values {b} vs coords {cb}"
        )));
    }

    let v = values.data();
    let mut out = vec![T::default(); b * m * c];
    for bi in 0..b {
        let vb = &v[bi * l * c..(bi + 1) * l * c];
        for mi in 0..m {
            let x = coords.data()[bi * m + mi];
            if !x.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite sampling coordinate {x} at batch {bi}, position {mi}"
                )));
            }
            let (i0, i1, w) = sample_weights(x, l);
            let dst = &mut out[(bi * m + mi) * c..(bi * m + mi + 1) * c];
            if w == 0.0 {
                dst.copy_from_slice(&vb[i0 * c..(i0 + 1) * c]);
            } else {
                let wt = real::<T>(w);
                let cw = T::one() - wt;
                let r0 = &vb[i0 * c..(i0 + 1) * c];
                let r1 = &vb[i1 * c..(i1 + 1) * c];
                for ((d, &a), &bv) in dst.iter_mut().zip(r0).zip(r1) {
                    *d = cw * a + wt * bv;
                }
            }
        }
    }
    Tensor::new(vec![b, m, c], out)
}

/// Adjoint of [`gsample_1d`] with respect to the sampled values: scatter-adds
/// each output gradient back onto the interpolation endpoints with the same
/// weights the forward pass used. `grad_out` is `[B, M, C]`, the result is
/// `[B, len, C]`.
pub fn gsample_1d_backward<T: Real>(
    grad_out: &Tensor<T>,
    coords: &Tensor<f64>,
    len: usize,
) -> Result<Tensor<T>> {
    let (b, m, c) = dims3(grad_out, "gsample_1d_backward grad_out")?;
    let (cb, cm) = dims2(coords, "gsample_1d_backward coords")?;
    if cb != b || cm != m {
        return Err(Error::invalid(format!(
            "gsample_1d_backward: grad_out [{b}, {m}, _] does not match coords [{cb}, {cm}]"
        )));
    }
    if len == 0 {
        return Err(Error::invalid("gsample_1d_backward: len must be ≥ 1"));
    }

    let g = grad_out.data();
    let mut grad_values = vec![T::default(); b * len * c];
    for bi in 0..b {
        let gv = &mut grad_values[bi * len * c..(bi + 1) * len * c];
        for mi in 0..m {
            let x = coords.data()[bi * m + mi];
            if !x.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite sampling coordinate {x} at batch {bi}, position {mi}"
                )));
            }
            let (i0, i1, w) = sample_weights(x, len);
            let src = &g[(bi * m + mi) * c..(bi * m + mi + 1) * c];
            if w == 0.0 {
                for (d, &s) in gv[i0 * c..(i0 + 1) * c].iter_mut().zip(src) {
                    *d = *d + s;
                }
            } else {
                let wt = real::<T>(w);
                let cw = T::one() - wt;
                for (d, &s) in gv[i0 * c..(i0 + 1) * c].iter_mut().zip(src) {
                    *d = *d + cw * s;
                }
                for (d, &s) in gv[i1 * c..(i1 + 1) * c].iter_mut().zip(src) {
                    *d = *d + wt * s;
                }
            }
        }
    }
    Tensor::new(vec![b, len, c], grad_values)
}

/// Multi-head scaled dot-product attention with a key-validity mask.
/// `q` is `[B, Mq, C]`, `k`/`v` are `[B, Mk, C]`, `kv_valid` is `[B, Mk]`
/// over {0, 1}. Invalid key positions receive exactly zero attention weight.
pub fn attention<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    kv_valid: &Tensor<u8>,
) -> Result<Tensor<T>> {
    let (out, _) = attention_with_weights(q, k, v, heads, kv_valid, false)?;
    Ok(out)
}

/// Attention that can also return the post-softmax weights (per batch, head,
/// query): needed by the analytic backward pass. Weights are stored as
/// `[B, heads, Mq, Mk]` when requested.
pub fn attention_with_weights<T: Real>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
    kv_valid: &Tensor<u8>,
    keep_weights: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let (b, mq, c) = dims3(q, "attention q")?;
    let (kb, mk, kc) = dims3(k, "attention k")?;
    let (vb, vm, vc) = dims3(v, "attention v")?;
    let (mb, mm) = dims2(kv_valid, "attention kv_valid")?;
    if kb != b || vb != b || mb != b {
        return Err(Error::invalid("attention: batch sizes disagree"));
    }
    if kc != c || vc != c {
        return Err(Error::invalid(format!(
            "attention: channel mismatch q={c} k={kc} v={vc}"
        )));
    }
    if vm != mk || mm != mk {
        return Err(Error::invalid(format!(
            "attention: key count mismatch k={mk} v={vm} kv_valid={mm}"
        )));
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::invalid(format!(
            "attention: channels {c} not divisible by heads {heads}"
        )));
    }
    if kv_valid.data().iter().any(|&x| x > 1) {
        return Err(Error::invalid("attention: kv_valid must contain only 0 or 1"));
    }
    for bi in 0..b {
        let row = &kv_valid.data()[bi * mk..(bi + 1) * mk];
        if row.iter().all(|&x| x == 0) {
            return Err(Error::invalid(format!(
                "attention: batch row {bi} has no valid key/value positions"
            )));
        }
    }

    let dh = c / heads;
    let scale = real::<T>(1.0 / (dh as f64).sqrt());
    let neg_inf = T::neg_infinity();

    let mut out = vec![T::default(); b * mq * c];
    let mut weights = if keep_weights {
        vec![T::default(); b * heads * mq * mk]
    } else {
        Vec::new()
    };

    // Per-(batch, head) scratch, reused across iterations.
    let mut qh = vec![T::default(); mq * dh];
    let mut kt = vec![T::default(); dh * mk]; // keys transposed: [dh, Mk]
    let mut vh = vec![T::default(); mk * dh];
    let mut scores = vec![T::default(); mq * mk];
    let mut oh = vec![T::default(); mq * dh];

    for bi in 0..b {
        let valid = &kv_valid.data()[bi * mk..(bi + 1) * mk];
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..mq {
                qh[i * dh..(i + 1) * dh]
                    .copy_from_slice(&q.data()[(bi * mq + i) * c + c0..(bi * mq + i) * c + c0 + dh]);
            }
            for j in 0..mk {
                let krow = &k.data()[(bi * mk + j) * c + c0..(bi * mk + j) * c + c0 + dh];
                for (d, &kx) in krow.iter().enumerate() {
                    kt[d * mk + j] = kx;
                }
                vh[j * dh..(j + 1) * dh]
                    .copy_from_slice(&v.data()[(bi * mk + j) * c + c0..(bi * mk + j) * c + c0 + dh]);
            }

            matmul_into(&qh, &kt, &mut scores, mq, dh, mk);

            for i in 0..mq {
                let row = &mut scores[i * mk..(i + 1) * mk];
                for (s, &ok) in row.iter_mut().zip(valid) {
                    *s = if ok == 1 { *s * scale } else { neg_inf };
                }
                softmax_row_in_place(row);
            }

            matmul_into(&scores, &vh, &mut oh, mq, mk, dh);

            for i in 0..mq {
                out[(bi * mq + i) * c + c0..(bi * mq + i) * c + c0 + dh]
                    .copy_from_slice(&oh[i * dh..(i + 1) * dh]);
            }
            if keep_weights {
                let base = ((bi * heads) + h) * mq * mk;
                weights[base..base + mq * mk].copy_from_slice(&scores);
            }
        }
    }

    let out = Tensor::new(vec![b, mq, c], out)?;
    let weights = if keep_weights {
        Some(Tensor::new(vec![b, heads, mq, mk], weights)?)
    } else {
        None
    };
    Ok((out, weights))
}

/// Position-wise feed-forward: `gelu(x · w1) · w2`.
/// `x` is `[B, M, C]`, `w1` is `[C, F]`, `w2` is `[F, C]`.
pub fn ffn<T: Real>(x: &Tensor<T>, w1: &Tensor<T>, w2: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, m, c) = dims3(x, "ffn x")?;
    let (wc, f) = dims2(w1, "ffn w1")?;
    let (wf, wc2) = dims2(w2, "ffn w2")?;
    if wc != c || wc2 != c || wf != f {
        return Err(Error::invalid(format!(
            "ffn: weight shapes [{wc}, {f}] / [{wf}, {wc2}] do not match channels {c}"
        )));
    }

    let rows = b * m;
    let mut hidden = vec![T::default(); rows * f];
    matmul_into(x.data(), w1.data(), &mut hidden, rows, c, f);
    for h in hidden.iter_mut() {
        *h = gelu(*h);
    }
    let mut out = vec![T::default(); rows * c];
    matmul_into(&hidden, w2.data(), &mut out, rows, f, c);
    Tensor::new(vec![b, m, c], out)
}

/// LayerNorm over the last axis, no learnable affine: per position, subtract
/// the channel mean and divide by `sqrt(var + 1e-6)`.
pub fn layer_norm<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(layer_norm_with_stats(x)?.0)
}

/// LayerNorm that also returns 1/sqrt(var + eps) per position, which the
/// analytic backward pass reuses.
pub fn layer_norm_with_stats<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<T>)> {
    let shape = x.shape().to_vec();
    let c = *shape
        .last()
        .ok_or_else(|| Error::invalid("layer_norm: tensor must have at least one axis"))?;
    if c == 0 {
        return Err(Error::invalid("layer_norm: channel axis must be ≥ 1"));
    }
    let rows = x.numel() / c;
    let inv_c = real::<T>(1.0 / c as f64);
    let eps = real::<T>(LN_EPS);

    let mut out = vec![T::default(); x.numel()];
    let mut inv_stds = Vec::with_capacity(rows);
    for r in 0..rows {
        let src = &x.data()[r * c..(r + 1) * c];
        let dst = &mut out[r * c..(r + 1) * c];
        let mut mean = T::zero();
        for &s in src {
            mean = mean + s;
        }
        mean = mean * inv_c;
        let mut var = T::zero();
        for &s in src {
            let d = s - mean;
            var = var + d * d;
        }
        var = var * inv_c;
        let inv_std = (var + eps).sqrt().recip();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * inv_std;
        }
        inv_stds.push(inv_std);
    }
    Ok((Tensor::new(shape, out)?, inv_stds))
}

/// Backward of [`layer_norm`] for one position: given upstream `dy`, the
/// normalized output `y`, and 1/sqrt(var+eps), writes the input gradient.
pub(crate) fn layer_norm_backward_row<T: Real>(dy: &[T], y: &[T], inv_std: T, dx: &mut [T]) {
    let c = dy.len();
    let inv_c = real::<T>(1.0 / c as f64);
    let mut mean_dy = T::zero();
    let mut mean_dy_y = T::zero();
    for (&g, &yv) in dy.iter().zip(y) {
        mean_dy = mean_dy + g;
        mean_dy_y = mean_dy_y + g * yv;
    }
    mean_dy = mean_dy * inv_c;
    mean_dy_y = mean_dy_y * inv_c;
    for ((d, &g), &yv) in dx.iter_mut().zip(dy).zip(y) {
        *d = (g - mean_dy - yv * mean_dy_y) * inv_std;
    }
}

/// GELU, tanh form: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let k = real::<T>(0.7978845608028654); // sqrt(2/pi)
    let a = real::<T>(0.044715);
    let half = real::<T>(0.5);
    let inner = k * (x + a * x * x * x);
    half * x * (T::one() + inner.tanh())
}

/// Derivative of [`gelu`].
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let k = real::<T>(0.7978845608028654);
    let a = real::<T>(0.044715);
    let half = real::<T>(0.5);
    let three = real::<T>(3.0);
    let inner = k * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * k * (T::one() + three * a * x * x)
}

/// `out = a @ b`, row-major, accumulating row-wise so the inner loop runs
/// over independent output lanes (vectorizes without reassociating sums).
pub(crate) fn matmul_into<T: Real>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k_dim: usize,
    n: usize,
) {
    debug_assert_eq!(a.len(), m * k_dim);
    debug_assert_eq!(b.len(), k_dim * n);
    debug_assert_eq!(out.len(), m * n);
    for o in out.iter_mut() {
        *o = T::zero();
    }
    for i in 0..m {
        let arow = &a[i * k_dim..(i + 1) * k_dim];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// Numerically stable softmax over one score row; `-inf` entries come out as
/// exactly 0. The sum runs left to right, so interleaved zero terms cannot
/// change the result.
fn softmax_row_in_place<T: Real>(row: &mut [T]) {
    let mut max = T::neg_infinity();
    for &s in row.iter() {
        if s > max {
            max = s;
        }
    }
    let mut sum = T::zero();
    for s in row.iter_mut() {
        *s = (*s - max).exp();
        sum = sum + *s;
    }
    let inv = sum.recip();
    for s in row.iter_mut() {
        *s = *s * inv;
    }
}

pub(crate) fn dims2<T>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)>
where
    T: Copy,
{
    match t.shape() {
        &[a, b] => Ok((a, b)),
        s => Err(Error::invalid(format!(
            "{what}: expected a 2-D tensor, got shape {s:?}"
        ))),
    }
}

pub(crate) fn dims3<T>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)>
where
    T: Copy,
{
    match t.shape() {
        &[a, b, c] => Ok((a, b, c)),
        s => Err(Error::invalid(format!(
            "{what}: expected a 3-D tensor, got shape {s:?}"
        ))),
    }
}
