//! Masked-token denoising with simulated outer context.
//!
//! Only the tokens inside the mask are worth running through full
//! transformer blocks; the surrounding region mostly needs to *be seen*, not
//! recomputed. This module runs the gathered inner tokens through a stack of
//! toy DiT blocks while the outer region contributes keys/values built by a
//! cheap elementwise proxy: a learned interpolation between the masked-video
//! latent and the noise residual, followed by a per-channel affine
//! modulation. Three small parameter groups (`g`, `s`, `bias`) are the only
//! trainable state; the block weights stay frozen.
//!
//! The module also houses the mask-restricted flow-matching loss, exact
//! gradients of that loss with respect to the three parameter groups, and a
//! small gradient-descent fine-tuning loop.

mod backward;
mod forward;
pub mod toy;
mod train;

pub use backward::{all_coords, finite_difference, grad_component, grad_params, ParamCoord, ParamGrads};
pub use forward::{run_diffsim, run_diffsim_detailed, RunMetrics};
pub use train::{finetune, FinetuneConfig, FinetuneReport, TrainCase};

use crate::error::{Error, Result};
use crate::numerics::{dims2, dims3, Real};
use crate::tensorio::Tensor;

/// Everything a single denoising step consumes: the noised latent, the
/// masked-video latent, the token-level mask, and position embeddings.
#[derive(Clone, Debug)]
pub struct LatentBundle<T> {
    /// `[B, L, C]` noised input latent.
    pub lat_nis: Tensor<T>,
    /// `[B, L, C]` latent of the masked video (object region blanked).
    pub lat_mask: Tensor<T>,
    /// `[B, L]` over {0, 1}; 1 marks tokens inside the removal mask.
    pub latent_mask: Tensor<u8>,
    /// `[L, C]` additive position embedding, indexed by flattened position.
    pub pos_emb: Tensor<T>,
}

impl<T: Real> LatentBundle<T> {
    /// Checks the shapes agree and returns `(B, L, C)`.
    pub fn validate(&self) -> Result<(usize, usize, usize)> {
        let (b, l, c) = dims3(&self.lat_nis, "bundle lat_nis")?;
        if self.lat_mask.shape() != self.lat_nis.shape() {
            return Err(Error::invalid(format!(
                "bundle: lat_mask shape {:?} != lat_nis shape {:?}",
                self.lat_mask.shape(),
                self.lat_nis.shape()
            )));
        }
        let (mb, ml) = dims2(&self.latent_mask, "bundle latent_mask")?;
        if mb != b || ml != l {
            return Err(Error::invalid(format!(
                "bundle: latent_mask [{mb}, {ml}] does not match latents [{b}, {l}, _]"
            )));
        }
        let (pl, pc) = dims2(&self.pos_emb, "bundle pos_emb")?;
        if pl != l || pc != c {
            return Err(Error::invalid(format!(
                "bundle: pos_emb [{pl}, {pc}] does not match latents [_, {l}, {c}]"
            )));
        }
        Ok((b, l, c))
    }
}

/// Which parameter groups receive gradient updates. All default to on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainableGroups {
    pub g: bool,
    pub s: bool,
    pub bias: bool,
}

impl Default for TrainableGroups {
    fn default() -> Self {
        TrainableGroups { g: true, s: true, bias: true }
    }
}

/// The three learnable parameter groups: a per-block interpolation scalar
/// `g`, and per-block per-channel scale `s` and shift `bias`.
#[derive(Clone, Debug)]
pub struct DiffSimParams<T> {
    /// One interpolation ratio per block.
    pub g: Vec<T>,
    /// `[eta, C]` multiplicative modulation (applied as `1 + s`).
    pub s: Tensor<T>,
    /// `[eta, C]` additive modulation.
    pub bias: Tensor<T>,
    pub trainable: TrainableGroups,
}

impl<T: Real> DiffSimParams<T> {
    /// Identity-like start point: `g = 1` (context is the masked-video
    /// latent), `s = 0`, `bias = 0`.
    pub fn neutral(eta: usize, c: usize) -> Self {
        DiffSimParams {
            g: vec![T::one(); eta],
            s: Tensor::zeros(&[eta, c]),
            bias: Tensor::zeros(&[eta, c]),
            trainable: TrainableGroups::default(),
        }
    }

    /// Number of blocks the parameters cover.
    pub fn eta(&self) -> usize {
        self.g.len()
    }

    pub fn validate(&self, eta: usize, c: usize) -> Result<()> {
        if self.g.len() != eta {
            return Err(Error::invalid(format!(
                "params: {} g entries for {eta} blocks",
                self.g.len()
            )));
        }
        for t in [&self.s, &self.bias] {
            let (te, tc) = dims2(t, "params s/bias")?;
            if te != eta || tc != c {
                return Err(Error::invalid(format!(
                    "params: s/bias [{te}, {tc}] does not match {eta} blocks × {c} channels"
                )));
            }
        }
        Ok(())
    }
}

/// One frozen transformer block: attention projections, a two-layer FFN, and
/// (parameter-free) pre-norm stages before attention and FFN.
#[derive(Clone, Debug)]
pub struct ToyDitBlock<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    /// `[C, F]` FFN expansion.
    pub w1: Tensor<T>,
    /// `[F, C]` FFN contraction.
    pub w2: Tensor<T>,
    pub heads: usize,
}

impl<T: Real> ToyDitBlock<T> {
    pub fn validate(&self, c: usize) -> Result<usize> {
        for (name, w) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            if w.shape() != [c, c] {
                return Err(Error::invalid(format!(
                    "block: {name} shape {:?} is not [{c}, {c}]",
                    w.shape()
                )));
            }
        }
        let (wc, f) = dims2(&self.w1, "block w1")?;
        let (wf, wc2) = dims2(&self.w2, "block w2")?;
        if wc != c || wc2 != c || wf != f {
            return Err(Error::invalid(format!(
                "block: FFN shapes [{wc}, {f}] / [{wf}, {wc2}] do not match channels {c}"
            )));
        }
        if self.heads == 0 || !c.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "block: channels {c} not divisible by {} heads",
                self.heads
            )));
        }
        Ok(f)
    }
}

/// Where the inner tokens are initially gathered from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GatherSource {
    /// The masked-video latent (default).
    #[default]
    MaskedLatent,
    /// The noised input latent.
    NoiseLatent,
}

/// Noise residual `lat_nis − lat_mask`: what remains of the noised latent
/// once the visible content is subtracted.
pub fn residual_latent<T: Real>(lat_nis: &Tensor<T>, lat_mask: &Tensor<T>) -> Result<Tensor<T>> {
    if lat_nis.shape() != lat_mask.shape() {
        return Err(Error::invalid(format!(
            "residual_latent: shapes {:?} and {:?} differ",
            lat_nis.shape(),
            lat_mask.shape()
        )));
    }
    let data = lat_nis
        .data()
        .iter()
        .zip(lat_mask.data())
        .map(|(&n, &m)| n - m)
        .collect();
    Tensor::new(lat_nis.shape().to_vec(), data)
}

/// Simulated full-length key/value latent for block `i`:
/// `kv_pre = g[i]·lat_mask + (1−g[i])·(lat_nis − lat_mask)`, then the
/// per-channel modulation `(1 + s[i])·kv_pre + bias[i]`.
pub fn simulate_kv<T: Real>(
    bundle: &LatentBundle<T>,
    params: &DiffSimParams<T>,
    i: usize,
) -> Result<Tensor<T>> {
    let (b, l, c) = bundle.validate()?;
    params.validate(params.eta(), c)?;
    if i >= params.eta() {
        return Err(Error::invalid(format!(
            "simulate_kv: block index {i} out of range for {} blocks",
            params.eta()
        )));
    }

    let g = params.g[i];
    let one_minus_g = T::one() - g;
    let srow = &params.s.data()[i * c..(i + 1) * c];
    let brow = &params.bias.data()[i * c..(i + 1) * c];

    let mut out = vec![T::default(); b * l * c];
    for p in 0..b * l {
        for ch in 0..c {
            let lm = bundle.lat_mask.data()[p * c + ch];
            let ln = bundle.lat_nis.data()[p * c + ch];
            let pre = g * lm + one_minus_g * (ln - lm);
            out[p * c + ch] = (T::one() + srow[ch]) * pre + brow[ch];
        }
    }
    Tensor::new(vec![b, l, c], out)
}

/// Mask-restricted flow-matching loss: the summed squared error over masked
/// token positions (all channels), divided by the number of masked positions
/// counted over `[B, L]`.
pub fn flow_matching_mask_loss<T: Real>(
    out: &Tensor<T>,
    target: &Tensor<T>,
    latent_mask: &Tensor<u8>,
) -> Result<T> {
    let (b, l, c) = dims3(out, "loss out")?;
    if target.shape() != out.shape() {
        return Err(Error::invalid(format!(
            "loss: target shape {:?} != out shape {:?}",
            target.shape(),
            out.shape()
        )));
    }
    let (mb, ml) = dims2(latent_mask, "loss latent_mask")?;
    if mb != b || ml != l {
        return Err(Error::invalid(format!(
            "loss: mask [{mb}, {ml}] does not match tokens [{b}, {l}, _]"
        )));
    }
    if latent_mask.data().iter().any(|&v| v > 1) {
        return Err(Error::invalid("loss: mask must contain only 0 or 1"));
    }

    let count = latent_mask.data().iter().filter(|&&v| v == 1).count();
    if count == 0 {
        return Err(Error::invalid(
            "loss: mask has no masked positions — the normalizer would divide by zero",
        ));
    }

    let mut sum = T::zero();
    for p in 0..b * l {
        if latent_mask.data()[p] == 1 {
            for ch in 0..c {
                let d = out.data()[p * c + ch] - target.data()[p * c + ch];
                sum = sum + d * d;
            }
        }
    }
    Ok(sum / crate::numerics::real::<T>(count as f64))
}
