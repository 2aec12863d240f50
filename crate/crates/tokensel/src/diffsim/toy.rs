//! Deterministic desk-scale builders: frozen random blocks, sinusoidal
//! position embeddings, masks with exact per-row counts, and a synthetic
//! training case whose velocity target carries enough per-channel structure
//! for the three parameter groups to fit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::maskembed::{embed_mask, flatten_tokens, StrideSpec};
use crate::numerics::{dims2, real, Real};
use crate::tensorio::{synth_case, Tensor};

use super::{LatentBundle, ToyDitBlock, TrainCase};

fn randn_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            real::<T>(x * scale)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches element count")
}

/// `eta` frozen blocks with 1/√fan-in random projections, all drawn from one
/// seeded stream: the same seed always rebuilds byte-identical weights.
pub fn toy_blocks<T: Real>(
    seed: u64,
    eta: usize,
    c: usize,
    heads: usize,
    f: usize,
) -> Result<Vec<ToyDitBlock<T>>> {
    if eta == 0 {
        return Err(Error::invalid("toy_blocks: need at least one block"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ws = 1.0 / (c as f64).sqrt();
    (0..eta)
        .map(|_| {
            let block = ToyDitBlock {
                wq: randn_tensor(&mut rng, &[c, c], ws),
                wk: randn_tensor(&mut rng, &[c, c], ws),
                wv: randn_tensor(&mut rng, &[c, c], ws),
                wo: randn_tensor(&mut rng, &[c, c], ws),
                w1: randn_tensor(&mut rng, &[c, f], ws),
                w2: randn_tensor(&mut rng, &[f, c], 1.0 / (f as f64).sqrt()),
                heads,
            };
            block.validate(c)?;
            Ok(block)
        })
        .collect()
}

/// Additive sinusoidal position embedding `[L, C]`: interleaved sin/cos at
/// geometrically spaced frequencies, indexed by flattened token position.
pub fn sin_pos_emb<T: Real>(l: usize, c: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); l * c];
    for p in 0..l {
        for k in 0..c.div_ceil(2) {
            let omega = 10000f64.powf(-((2 * k) as f64) / c as f64);
            let ang = p as f64 * omega;
            data[p * c + 2 * k] = real::<T>(ang.sin());
            if 2 * k + 1 < c {
                data[p * c + 2 * k + 1] = real::<T>(ang.cos());
            }
        }
    }
    Tensor::new(vec![l, c], data).expect("shape matches element count")
}

/// `[B, L]` binary mask with exactly `counts[b]` ones per row, positions
/// drawn by a seeded partial shuffle.
pub fn latent_mask_with_counts(seed: u64, l: usize, counts: &[usize]) -> Result<Tensor<u8>> {
    if counts.is_empty() {
        return Err(Error::invalid("latent_mask_with_counts: need at least one row"));
    }
    for (bi, &cnt) in counts.iter().enumerate() {
        if cnt == 0 || cnt > l {
            return Err(Error::invalid(format!(
                "latent_mask_with_counts: count {cnt} for row {bi} is outside 1..={l}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = counts.len();
    let mut data = vec![0u8; b * l];
    for (bi, &cnt) in counts.iter().enumerate() {
        let mut idx: Vec<usize> = (0..l).collect();
        for j in 0..cnt {
            let pick = rng.random_range(j..l);
            idx.swap(j, pick);
        }
        for &p in &idx[..cnt] {
            data[bi * l + p] = 1;
        }
    }
    Tensor::new(vec![b, l], data)
}

/// Random latent bundle over a given mask: a noised latent, a masked-video
/// latent (zero inside the mask), and sinusoidal positions.
pub fn toy_bundle<T: Real>(seed: u64, latent_mask: &Tensor<u8>, c: usize) -> Result<LatentBundle<T>> {
    let (b, l) = dims2(latent_mask, "toy_bundle latent_mask")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lat_nis = randn_tensor::<T>(&mut rng, &[b, l, c], 0.8);
    let mut lat_mask = randn_tensor::<T>(&mut rng, &[b, l, c], 0.8);
    for p in 0..b * l {
        if latent_mask.data()[p] == 1 {
            for x in &mut lat_mask.data_mut()[p * c..(p + 1) * c] {
                *x = T::zero();
            }
        }
    }
    Ok(LatentBundle {
        lat_nis,
        lat_mask,
        latent_mask: latent_mask.clone(),
        pos_emb: sin_pos_emb(l, c),
    })
}

/// Pixel resolution of the synthetic training video.
const CASE_FRAMES: usize = 16;
const CASE_HEIGHT: usize = 32;
const CASE_WIDTH: usize = 32;
const CASE_CHANNELS: usize = 8;
/// Interpolation time of the noised latent; the velocity target is
/// `noise − clean` regardless.
const CASE_T: f64 = 0.35;

/// A full synthetic training example built from a random video: the clean
/// latent is the block-averaged video plus strong per-channel offsets (so
/// the velocity target has per-channel structure the bias/scale parameters
/// can reach), noised at a fixed interpolation time.
pub fn toy_train_case<T: Real>(seed: u64) -> Result<TrainCase<T>> {
    let strides = StrideSpec::default();
    let (video, mask_px) = synth_case(seed, CASE_FRAMES, CASE_HEIGHT, CASE_WIDTH, CASE_CHANNELS, 0.2)?;
    let latent_grid = embed_mask(&mask_px, strides)?;
    let latent_mask = flatten_tokens(&latent_grid)?;
    let l = latent_mask.shape()[1];
    let ones = latent_mask.data().iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == l {
        return Err(Error::invalid(format!(
            "toy_train_case: seed {seed} produced a degenerate latent mask ({ones}/{l} ones)"
        )));
    }

    // Average-pool the video into the latent grid (a stand-in encoder), one
    // latent channel per video channel.
    let (lf, lh, lw) = (
        CASE_FRAMES / strides.f_v,
        CASE_HEIGHT / strides.h_v,
        CASE_WIDTH / strides.w_v,
    );
    let block_px = (strides.f_v * strides.h_v * strides.w_v) as f64;
    let mut clean = vec![0.0f64; l * CASE_CHANNELS];
    for ch in 0..CASE_CHANNELS {
        for zf in 0..lf {
            for zh in 0..lh {
                for zw in 0..lw {
                    let mut sum = 0.0f64;
                    for df in 0..strides.f_v {
                        for dh in 0..strides.h_v {
                            for dw in 0..strides.w_v {
                                let fi = zf * strides.f_v + df;
                                let hi = zh * strides.h_v + dh;
                                let wi = zw * strides.w_v + dw;
                                let at = ((ch * CASE_FRAMES + fi) * CASE_HEIGHT + hi) * CASE_WIDTH + wi;
                                sum += video.data()[at] as f64;
                            }
                        }
                    }
                    let tok = (zf * lh + zh) * lw + zw;
                    clean[tok * CASE_CHANNELS + ch] = sum / block_px;
                }
            }
        }
    }

    // Alternating-sign per-channel offsets in roughly ±(0.8 … 1.5).
    for (ch, off) in channel_offsets(CASE_CHANNELS).into_iter().enumerate() {
        for tok in 0..l {
            clean[tok * CASE_CHANNELS + ch] += off;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut lat_nis = vec![T::zero(); l * CASE_CHANNELS];
    let mut lat_mask = vec![T::zero(); l * CASE_CHANNELS];
    let mut target = vec![T::zero(); l * CASE_CHANNELS];
    for tok in 0..l {
        let masked = latent_mask.data()[tok] == 1;
        for ch in 0..CASE_CHANNELS {
            let x0 = clean[tok * CASE_CHANNELS + ch];
            let x1: f64 = rng.sample(StandardNormal);
            lat_nis[tok * CASE_CHANNELS + ch] = real::<T>((1.0 - CASE_T) * x0 + CASE_T * x1);
            target[tok * CASE_CHANNELS + ch] = real::<T>(x1 - x0);
            if !masked {
                lat_mask[tok * CASE_CHANNELS + ch] = real::<T>(x0);
            }
        }
    }

    let bundle = LatentBundle {
        lat_nis: Tensor::new(vec![1, l, CASE_CHANNELS], lat_nis)?,
        lat_mask: Tensor::new(vec![1, l, CASE_CHANNELS], lat_mask)?,
        latent_mask,
        pos_emb: sin_pos_emb(l, CASE_CHANNELS),
    };
    Ok(TrainCase {
        bundle,
        target: Tensor::new(vec![1, l, CASE_CHANNELS], target)?,
    })
}

fn channel_offsets(c: usize) -> Vec<f64> {
    (0..c)
        .map(|ch| {
            let mag = 0.8 + 0.7 * ch as f64 / (c - 1).max(1) as f64;
            if ch % 2 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_rebuild_byte_identically_from_the_seed() {
        let a = toy_blocks::<f64>(7, 2, 8, 2, 16).unwrap();
        let b = toy_blocks::<f64>(7, 2, 8, 2, 16).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.wq, y.wq);
            assert_eq!(x.w2, y.w2);
        }
        let c = toy_blocks::<f64>(8, 2, 8, 2, 16).unwrap();
        assert_ne!(a[0].wq, c[0].wq);
    }

    #[test]
    fn position_embedding_starts_at_sin0_cos0_and_stays_bounded() {
        let pe = sin_pos_emb::<f64>(10, 6);
        for k in 0..3 {
            assert_eq!(pe.data()[2 * k], 0.0);
            assert_eq!(pe.data()[2 * k + 1], 1.0);
        }
        assert!(pe.data().iter().all(|x| x.abs() <= 1.0));
        assert_ne!(pe.data()[6..12], pe.data()[12..18]);
    }

    #[test]
    fn mask_counts_are_exact_and_reproducible() {
        let m = latent_mask_with_counts(9, 32, &[3, 17, 32, 1]).unwrap();
        for (bi, &want) in [3usize, 17, 32, 1].iter().enumerate() {
            let got = m.data()[bi * 32..(bi + 1) * 32].iter().filter(|&&v| v == 1).count();
            assert_eq!(got, want);
        }
        assert_eq!(m, latent_mask_with_counts(9, 32, &[3, 17, 32, 1]).unwrap());
        assert!(latent_mask_with_counts(9, 32, &[0]).is_err());
        assert!(latent_mask_with_counts(9, 32, &[33]).is_err());
    }

    #[test]
    fn toy_bundle_blanks_the_masked_region_of_the_video_latent() {
        let mask = latent_mask_with_counts(10, 16, &[5, 9]).unwrap();
        let bundle = toy_bundle::<f64>(11, &mask, 4).unwrap();
        bundle.validate().unwrap();
        for p in 0..32 {
            let row = &bundle.lat_mask.data()[p * 4..(p + 1) * 4];
            if mask.data()[p] == 1 {
                assert!(row.iter().all(|&x| x == 0.0));
            } else {
                assert!(row.iter().any(|&x| x != 0.0));
            }
        }
    }

    #[test]
    fn train_case_is_deterministic_and_well_formed() {
        let a = toy_train_case::<f64>(42).unwrap();
        let b = toy_train_case::<f64>(42).unwrap();
        assert_eq!(a.target, b.target);
        assert_eq!(a.bundle.lat_nis, b.bundle.lat_nis);

        let (bs, l, c) = a.bundle.validate().unwrap();
        assert_eq!((bs, l, c), (1, 64, 8));
        assert!(a.target.data().iter().all(|x| x.is_finite()));
        let ones = a.bundle.latent_mask.data().iter().filter(|&&v| v == 1).count();
        assert!(ones > 0 && ones < l, "mask covers {ones}/{l}");
    }

    #[test]
    fn velocity_target_keeps_the_per_channel_offsets() {
        // The offsets enter the clean latent, so the per-channel means of the
        // target should sit near the negated offsets.
        let case = toy_train_case::<f64>(43).unwrap();
        let offs = channel_offsets(8);
        let l = 64;
        for (ch, &off) in offs.iter().enumerate() {
            let mean: f64 = (0..l).map(|t| case.target.data()[t * 8 + ch]).sum::<f64>() / l as f64;
            assert!(
                (mean + off).abs() < 0.6,
                "channel {ch}: target mean {mean} vs offset {off}",
            );
        }
    }
}
