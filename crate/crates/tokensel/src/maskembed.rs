//! Pixel-space masks to latent-token masks, and mask morphology.
//!
//! A video autoencoder downsamples by fixed strides per axis, so one latent
//! cell covers an `f_v × h_v × w_v` block of pixels. A latent cell must be
//! regenerated as soon as *any* pixel under it is masked: the embedding is a
//! logical OR over the block, written multiplicatively as
//! `1 − ∏ (1 − m_i)` so it stays differentiable in soft-mask variants.
//! Here masks are hard {0, 1} bytes and the OR is computed directly.

use crate::error::{Error, Result};
use crate::tensorio::Tensor;

/// Downsampling strides of the (stand-in) video autoencoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrideSpec {
    pub f_v: usize,
    pub h_v: usize,
    pub w_v: usize,
}

impl Default for StrideSpec {
    /// Common video-VAE layout: 4 frames and 8×8 pixels per latent cell.
    fn default() -> Self {
        StrideSpec { f_v: 4, h_v: 8, w_v: 8 }
    }
}

impl StrideSpec {
    pub fn new(f_v: usize, h_v: usize, w_v: usize) -> Result<Self> {
        if f_v == 0 || h_v == 0 || w_v == 0 {
            return Err(Error::invalid(format!(
                "strides must be ≥ 1, got ({f_v}, {h_v}, {w_v})"
            )));
        }
        Ok(StrideSpec { f_v, h_v, w_v })
    }
}

fn dims5(t: &Tensor<u8>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        &[b, 1, f, h, w] => Ok((b, f, h, w)),
        s => Err(Error::invalid(format!(
            "{what}: expected shape [B, 1, F, H, W], got {s:?}"
        ))),
    }
}

/// Collapses a pixel mask `[B, 1, F, H, W]` to a latent mask
/// `[B, 1, F/f_v, H/h_v, W/w_v]`: each latent cell is the OR of its pixel
/// block. Dimensions must divide evenly — implicit padding would silently
/// desynchronize the pixel and latent masks.
pub fn embed_mask(mask: &Tensor<u8>, s: StrideSpec) -> Result<Tensor<u8>> {
    let (b, f, h, w) = dims5(mask, "embed_mask mask")?;
    if mask.data().iter().any(|&v| v > 1) {
        return Err(Error::invalid("embed_mask: mask values must be 0 or 1"));
    }
    if f % s.f_v != 0 || h % s.h_v != 0 || w % s.w_v != 0 {
        return Err(Error::invalid(format!(
            "embed_mask: dims ({f}, {h}, {w}) not divisible by strides ({}, {}, {})",
            s.f_v, s.h_v, s.w_v
        )));
    }

    let (lf, lh, lw) = (f / s.f_v, h / s.h_v, w / s.w_v);
    let mut out = vec![0u8; b * lf * lh * lw];
    for bi in 0..b {
        let src = &mask.data()[bi * f * h * w..(bi + 1) * f * h * w];
        let dst = &mut out[bi * lf * lh * lw..(bi + 1) * lf * lh * lw];
        for zf in 0..lf {
            for zh in 0..lh {
                for zw in 0..lw {
                    let mut any = 0u8;
                    'block: for pf in zf * s.f_v..(zf + 1) * s.f_v {
                        for ph in zh * s.h_v..(zh + 1) * s.h_v {
                            for pw in zw * s.w_v..(zw + 1) * s.w_v {
                                if src[(pf * h + ph) * w + pw] == 1 {
                                    any = 1;
                                    break 'block;
                                }
                            }
                        }
                    }
                    dst[(zf * lh + zh) * lw + zw] = any;
                }
            }
        }
    }
    Tensor::new(vec![b, 1, lf, lh, lw], out)
}

/// Flattens `[B, 1, F, H, W]` to `[B, L]` token order: frame-major, then row,
/// then column. The storage is already row-major in that order, so this is a
/// reshape.
pub fn flatten_tokens<T: Copy>(latent: &Tensor<T>) -> Result<Tensor<T>> {
    match latent.shape() {
        &[b, 1, f, h, w] => latent.clone().reshape(vec![b, f * h * w]),
        s => Err(Error::invalid(format!(
            "flatten_tokens: expected shape [B, 1, F, H, W], got {s:?}"
        ))),
    }
}

/// Inverse of [`flatten_tokens`]: `[B, L]` back to `[B, 1, F, H, W]`.
pub fn unflatten_tokens<T: Copy>(
    flat: &Tensor<T>,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    match flat.shape() {
        &[b, l] if l == frames * height * width => {
            flat.clone().reshape(vec![b, 1, frames, height, width])
        }
        s => Err(Error::invalid(format!(
            "unflatten_tokens: shape {s:?} does not hold {frames}×{height}×{width} tokens"
        ))),
    }
}

/// Morphological dilation with a `(2r+1) × (2r+1)` square element applied
/// per frame — spatial only, no temporal growth. The output is a superset of
/// the input.
pub fn dilate_mask(mask: &Tensor<u8>, radius: usize) -> Result<Tensor<u8>> {
    let (b, f, h, w) = dims5(mask, "dilate_mask mask")?;
    if mask.data().iter().any(|&v| v > 1) {
        return Err(Error::invalid("dilate_mask: mask values must be 0 or 1"));
    }
    if radius == 0 {
        return Ok(mask.clone());
    }

    // Separable square dilation: horizontal sweep, then vertical.
    let mut horiz = vec![0u8; mask.numel()];
    let mut out = vec![0u8; mask.numel()];
    for frame0 in 0..b * f {
        let base = frame0 * h * w;
        for y in 0..h {
            let row = &mask.data()[base + y * w..base + (y + 1) * w];
            let dst = &mut horiz[base + y * w..base + (y + 1) * w];
            for (x, d) in dst.iter_mut().enumerate() {
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(w - 1);
                *d = u8::from(row[lo..=hi].contains(&1));
            }
        }
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(h - 1);
            for x in 0..w {
                let mut any = 0u8;
                for yy in lo..=hi {
                    if horiz[base + yy * w + x] == 1 {
                        any = 1;
                        break;
                    }
                }
                out[base + y * w + x] = any;
            }
        }
    }
    Tensor::new(mask.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask5(b: usize, f: usize, h: usize, w: usize, seed: u64, p: f64) -> Tensor<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * f * h * w)
            .map(|_| if rng.random_range(0.0..1.0) < p { 1u8 } else { 0 })
            .collect();
        Tensor::new(vec![b, 1, f, h, w], data).unwrap()
    }

    #[test]
    fn all_zero_embeds_to_all_zero() {
        let mask = Tensor::<u8>::zeros(&[1, 1, 4, 8, 8]);
        let out = embed_mask(&mask, StrideSpec::default()).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1, 1]);
        assert!(out.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn one_pixel_lights_its_latent_cell() {
        let mut mask = Tensor::<u8>::zeros(&[1, 1, 4, 8, 8]);
        mask.data_mut()[3 * 64 + 5 * 8 + 2] = 1;
        let out = embed_mask(&mask, StrideSpec::default()).unwrap();
        assert_eq!(out.data(), &[1]);
    }

    #[test]
    fn embed_matches_brute_force_or() {
        let s = StrideSpec::new(2, 4, 4).unwrap();
        let mask = random_mask5(2, 4, 8, 8, 31, 0.1);
        let out = embed_mask(&mask, s).unwrap();

        let (f, h, w) = (4, 8, 8);
        let (lf, lh, lw) = (2, 2, 2);
        for bi in 0..2 {
            for zf in 0..lf {
                for zh in 0..lh {
                    for zw in 0..lw {
                        let mut any = 0u8;
                        for pf in 0..s.f_v {
                            for ph in 0..s.h_v {
                                for pw in 0..s.w_v {
                                    let idx = bi * f * h * w
                                        + ((zf * s.f_v + pf) * h + zh * s.h_v + ph) * w
                                        + zw * s.w_v
                                        + pw;
                                    any |= mask.data()[idx];
                                }
                            }
                        }
                        let got = out.data()[bi * lf * lh * lw + (zf * lh + zh) * lw + zw];
                        assert_eq!(got, any);
                    }
                }
            }
        }
    }

    #[test]
    fn embed_rejects_bad_input() {
        let mask = Tensor::<u8>::zeros(&[1, 1, 3, 8, 8]);
        assert!(embed_mask(&mask, StrideSpec::default()).is_err()); // 3 % 4 != 0
        let mut bad = Tensor::<u8>::zeros(&[1, 1, 4, 8, 8]);
        bad.data_mut()[0] = 2;
        assert!(embed_mask(&bad, StrideSpec::default()).is_err());
    }

    #[test]
    fn flatten_order_is_frame_row_column() {
        let data: Vec<u8> = (0..4).collect();
        let t = Tensor::new(vec![1, 1, 1, 2, 2], data.clone()).unwrap();
        let flat = flatten_tokens(&t).unwrap();
        assert_eq!(flat.shape(), &[1, 4]);
        assert_eq!(flat.data(), &data[..]);

        let back = unflatten_tokens(&flat, 1, 2, 2).unwrap();
        assert_eq!(back, t);

        let single = Tensor::new(vec![1, 1, 1, 1, 1], vec![7u8]).unwrap();
        assert_eq!(flatten_tokens(&single).unwrap().data(), &[7]);
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let mask = random_mask5(1, 2, 6, 6, 8, 0.3);
        assert_eq!(dilate_mask(&mask, 0).unwrap(), mask);
    }

    #[test]
    fn dilate_single_pixel_makes_a_clipped_square() {
        let mut mask = Tensor::<u8>::zeros(&[1, 1, 1, 5, 5]);
        mask.data_mut()[2 * 5 + 2] = 1;
        let out = dilate_mask(&mask, 1).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let expect = (1..=3).contains(&y) && (1..=3).contains(&x);
                assert_eq!(out.data()[y * 5 + x] == 1, expect, "({y}, {x})");
            }
        }

        // Corner pixel: the square clips at the border.
        let mut corner = Tensor::<u8>::zeros(&[1, 1, 1, 4, 4]);
        corner.data_mut()[0] = 1;
        let out = dilate_mask(&corner, 1).unwrap();
        let ones: Vec<usize> = out
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ones, vec![0, 1, 4, 5]);
    }

    #[test]
    fn dilation_is_spatial_only() {
        let mut mask = Tensor::<u8>::zeros(&[1, 1, 3, 3, 3]);
        mask.data_mut()[9 + 3 + 1] = 1; // (t, y, x) = (1, 1, 1): center of frame 1
        let out = dilate_mask(&mask, 1).unwrap();
        assert!(out.data()[..9].iter().all(|&v| v == 0), "frame 0 untouched");
        assert!(out.data()[18..].iter().all(|&v| v == 0), "frame 2 untouched");
        assert_eq!(out.data()[9..18].iter().filter(|&&v| v == 1).count(), 9);
    }

    proptest! {
        #[test]
        fn dilation_is_a_superset(seed in 0u64..100, radius in 0usize..3) {
            let mask = random_mask5(1, 2, 8, 8, seed, 0.15);
            let out = dilate_mask(&mask, radius).unwrap();
            for (m, d) in mask.data().iter().zip(out.data()) {
                prop_assert!(d >= m);
            }
        }

        #[test]
        fn embedding_is_monotone(seed in 0u64..100) {
            let s = StrideSpec::new(1, 2, 2).unwrap();
            let base = random_mask5(1, 2, 4, 4, seed, 0.2);
            let mut bigger = base.clone();
            // Add one more masked pixel somewhere.
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 999);
            let pos = rng.random_range(0..bigger.numel());
            bigger.data_mut()[pos] = 1;

            let e1 = embed_mask(&base, s).unwrap();
            let e2 = embed_mask(&bigger, s).unwrap();
            for (a, b) in e1.data().iter().zip(e2.data()) {
                prop_assert!(b >= a, "adding pixels never unmasks a cell");
            }
        }

        #[test]
        fn overlap_band_is_disjoint_from_the_mask(seed in 0u64..100) {
            let mask = random_mask5(1, 1, 8, 8, seed, 0.2);
            let dil = dilate_mask(&mask, 1).unwrap();
            for (m, d) in mask.data().iter().zip(dil.data()) {
                let band = d - m; // well-defined: superset
                prop_assert!(band == 0 || *m == 0);
            }
        }
    }
}
