//! Batch variable-length indexing: gathers the masked tokens of every batch
//! row into one short, right-padded sequence and scatters results back, all
//! through interpolated sampling on normalized coordinates so gradients flow
//! through both directions.
//!
//! For a full sequence of `L` tokens, each token has a normalized coordinate
//! on the sample grid. The *forward* index of a row lists the coordinates of
//! its masked tokens (padded with coordinate 1.0, which clamps onto the last
//! token and is flagged invalid in `pad_mask`). The *backward* index is a
//! full-length grid whose masked slots point at the short sequence position
//! that now holds their token; unmasked slots keep their own coordinate and
//! are discarded by the final mask multiply in [`scatter`].
//!
//! Rows with different mask counts share one `[B, l_max]` layout. With the
//! [`SamplingConvention::ExactCenter`] grids, every coordinate lands exactly
//! on a token center, so gather → scatter restores masked values bit-exactly;
//! the [`SamplingConvention::Verbatim`] grids interpolate between tokens and
//! trade that exactness away.

use crate::error::{Error, Result};
use crate::numerics::{dims2, dims3, gsample_1d, linspace, Real, SamplingConvention};
use crate::tensorio::Tensor;

/// Coordinate used for right-padding forward indices.
pub const PAD_COORD: f64 = 1.0;

/// Forward/backward coordinate grids for one batch of masks.
#[derive(Clone, Debug)]
pub struct BviIndex {
    /// `[B, l_max]` forward coordinates, right-padded with [`PAD_COORD`].
    pub ind_f: Tensor<f64>,
    /// `[B, L]` backward coordinates.
    pub ind_b: Tensor<f64>,
    /// Valid (masked) token count per batch row.
    pub lengths: Vec<usize>,
    /// `max(lengths)` — the padded short-sequence length.
    pub l_max: usize,
    /// `[B, l_max]` over {0, 1}; 1 marks a real token, 0 a pad.
    pub pad_mask: Tensor<u8>,
    /// Full sequence length `L` the indices were built for.
    pub full_len: usize,
}

impl BviIndex {
    pub fn batch(&self) -> usize {
        self.lengths.len()
    }
}

/// Normalized coordinate of token `i` in a length-`len` sequence for the
/// exact-center convention: `-1 + (2i+1)/len`.
fn center(i: usize, len: usize) -> f64 {
    -1.0 + (2.0 * i as f64 + 1.0) / len as f64
}

/// Builds forward and backward indices from a `[B, L]` binary mask.
pub fn build_indices(mask: &Tensor<u8>, conv: SamplingConvention) -> Result<BviIndex> {
    let (b, l) = dims2(mask, "build_indices mask")?;
    if mask.data().iter().any(|&v| v > 1) {
        return Err(Error::invalid("build_indices: mask values must be 0 or 1"));
    }

    let mut lengths = Vec::with_capacity(b);
    for bi in 0..b {
        let ones = mask.data()[bi * l..(bi + 1) * l]
            .iter()
            .filter(|&&v| v == 1)
            .count();
        if ones == 0 {
            return Err(Error::invalid(format!("empty mask row b={bi}")));
        }
        lengths.push(ones);
    }
    let l_max = *lengths.iter().max().expect("non-empty batch");

    // Full-length sample grid, shared by every row.
    let sample: Vec<f64> = match conv {
        SamplingConvention::ExactCenter => (0..l).map(|i| center(i, l)).collect(),
        SamplingConvention::Verbatim => {
            let half = 1.0 / (2.0 * l as f64);
            linspace(half - 1.0, 1.0 - half, l)?.into_data()
        }
    };

    let mut ind_f = vec![PAD_COORD; b * l_max];
    let mut ind_b = vec![0.0f64; b * l];
    let mut pad_mask = vec![0u8; b * l_max];

    for bi in 0..b {
        let row = &mask.data()[bi * l..(bi + 1) * l];
        let len = lengths[bi];

        // Short-grid coordinates the row's masked tokens map onto.
        let short: Vec<f64> = match conv {
            SamplingConvention::ExactCenter => (0..len).map(|j| center(j, l_max)).collect(),
            SamplingConvention::Verbatim => {
                let delta = 1.0 / (2.0 * l_max as f64);
                if l_max == 1 {
                    // The ramp formula divides by l_max - 1; a single-token
                    // short sequence degenerates to the grid start point.
                    vec![delta - 1.0]
                } else {
                    let start = delta - 1.0;
                    let end =
                        start + (len as f64 - 1.0) * (2.0 - 2.0 * delta) / (l_max as f64 - 1.0);
                    linspace(start, end, len)?.into_data()
                }
            }
        };

        ind_b[bi * l..(bi + 1) * l].copy_from_slice(&sample);
        let mut j = 0;
        for (p, &m) in row.iter().enumerate() {
            if m == 1 {
                ind_f[bi * l_max + j] = sample[p];
                ind_b[bi * l + p] = short[j];
                pad_mask[bi * l_max + j] = 1;
                j += 1;
            }
        }
    }

    Ok(BviIndex {
        ind_f: Tensor::new(vec![b, l_max], ind_f)?,
        ind_b: Tensor::new(vec![b, l], ind_b)?,
        lengths,
        l_max,
        pad_mask: Tensor::new(vec![b, l_max], pad_mask)?,
        full_len: l,
    })
}

/// Gathers masked tokens into the short padded layout: `[B, L, C]` tokens in,
/// `[B, l_max, C]` out. Padded slots hold the border-clamped last token and
/// are flagged 0 in `pad_mask`.
pub fn gather<T: Real>(tokens: &Tensor<T>, idx: &BviIndex) -> Result<Tensor<T>> {
    let (b, l, _c) = dims3(tokens, "gather tokens")?;
    if b != idx.batch() || l != idx.full_len {
        return Err(Error::invalid(format!(
            "gather: tokens [{b}, {l}, _] do not match index (batch {}, len {})",
            idx.batch(),
            idx.full_len
        )));
    }
    gsample_1d(tokens, &idx.ind_f)
}

/// Scatters a short sequence back to full length and zeroes everything
/// outside the mask: `[B, l_max, C]` in, `[B, L, C]` out. Output rows at
/// unmasked positions are exactly zero.
pub fn scatter<T: Real>(short: &Tensor<T>, idx: &BviIndex, mask: &Tensor<u8>) -> Result<Tensor<T>> {
    let (b, m, c) = dims3(short, "scatter short")?;
    if b != idx.batch() || m != idx.l_max {
        return Err(Error::invalid(format!(
            "scatter: short [{b}, {m}, _] does not match index (batch {}, l_max {})",
            idx.batch(),
            idx.l_max
        )));
    }
    let (mb, ml) = dims2(mask, "scatter mask")?;
    if mb != b || ml != idx.full_len {
        return Err(Error::invalid(format!(
            "scatter: mask [{mb}, {ml}] does not match index (batch {b}, len {})",
            idx.full_len
        )));
    }

    let sampled = gsample_1d(short, &idx.ind_b)?;
    let mut out = sampled.into_data();
    for bi in 0..b {
        for p in 0..ml {
            if mask.data()[bi * ml + p] == 0 {
                for x in &mut out[(bi * ml + p) * c..(bi * ml + p + 1) * c] {
                    *x = T::zero();
                }
            }
        }
    }
    Tensor::new(vec![b, idx.full_len, c], out)
}

/// Key-validity mask for attention over `[short tokens | extra tokens]`:
/// 1 for the real (unpadded) inner tokens and for every one of the
/// `extra_valid` appended positions, 0 for pads.
pub fn pad_attention_mask(idx: &BviIndex, extra_valid: usize) -> Tensor<u8> {
    let b = idx.batch();
    let width = idx.l_max + extra_valid;
    let mut data = vec![0u8; b * width];
    for bi in 0..b {
        let row = &mut data[bi * width..(bi + 1) * width];
        row[..idx.lengths[bi]].fill(1);
        row[idx.l_max..].fill(1);
    }
    Tensor::new(vec![b, width], data).expect("shape matches construction")
}
