//! Plain gradient-descent fine-tuning of the three parameter groups.

use crate::error::{Error, Result};
use crate::numerics::{real, Real, SamplingConvention};
use crate::tensorio::Tensor;

use super::{
    flow_matching_mask_loss, grad_params, run_diffsim_detailed, DiffSimParams, GatherSource,
    LatentBundle, ParamGrads, ToyDitBlock,
};

/// One training example: the inputs of a denoising step and its regression
/// target (the flow-matching velocity).
#[derive(Clone, Debug)]
pub struct TrainCase<T> {
    pub bundle: LatentBundle<T>,
    pub target: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub lr: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub conv: SamplingConvention,
    pub source: GatherSource,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 200,
            lr: 1e-2,
            clip_norm: Some(1.0),
            conv: SamplingConvention::ExactCenter,
            source: GatherSource::MaskedLatent,
        }
    }
}

/// Updated parameters plus the loss trajectory: one mean loss per step
/// (measured before that step's update) and a final post-training entry,
/// `steps + 1` values in total.
#[derive(Clone, Debug)]
pub struct FinetuneReport<T> {
    pub params: DiffSimParams<T>,
    pub losses: Vec<T>,
}

/// Gradient descent on `(g, s, bias)` with the block weights frozen. Groups
/// whose `trainable` flag is off receive no updates. Aborts if the mean loss
/// ever becomes non-finite.
pub fn finetune<T: Real>(
    cases: &[TrainCase<T>],
    blocks: &[ToyDitBlock<T>],
    start: &DiffSimParams<T>,
    cfg: &FinetuneConfig,
) -> Result<FinetuneReport<T>> {
    if cases.is_empty() {
        return Err(Error::invalid("finetune: need at least one training case"));
    }
    if cfg.steps == 0 {
        return Err(Error::invalid("finetune: steps must be ≥ 1"));
    }
    let mut params = start.clone();
    let eta = params.eta();
    let c = params.s.shape()[1];
    let inv_cases = real::<T>(1.0 / cases.len() as f64);
    let lr = real::<T>(cfg.lr);

    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        let mut total = ParamGrads::zeros(eta, c);
        let mut loss_sum = T::zero();
        for case in cases {
            let (loss, grads) =
                grad_params(&case.bundle, &params, blocks, &case.target, cfg.conv, cfg.source)?;
            loss_sum = loss_sum + loss;
            total.accumulate(&grads);
        }
        let mean_loss = loss_sum * inv_cases;
        if !mean_loss.is_finite() {
            return Err(Error::invalid(format!(
                "finetune: non-finite loss at step {step} — training diverged"
            )));
        }
        losses.push(mean_loss);
        total.scale(inv_cases);

        if !params.trainable.g {
            total.g.iter_mut().for_each(|x| *x = T::zero());
        }
        if !params.trainable.s {
            total.s.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }
        if !params.trainable.bias {
            total.bias.data_mut().iter_mut().for_each(|x| *x = T::zero());
        }

        if let Some(clip) = cfg.clip_norm {
            let clip = real::<T>(clip);
            let norm = total.global_norm();
            if norm > clip {
                total.scale(clip / norm);
            }
        }

        for (p, &g) in params.g.iter_mut().zip(&total.g) {
            *p = *p - lr * g;
        }
        for (p, &g) in params.s.data_mut().iter_mut().zip(total.s.data()) {
            *p = *p - lr * g;
        }
        for (p, &g) in params.bias.data_mut().iter_mut().zip(total.bias.data()) {
            *p = *p - lr * g;
        }
    }

    let mut final_sum = T::zero();
    for case in cases {
        let (out, _) = run_diffsim_detailed(&case.bundle, &params, blocks, cfg.conv, cfg.source)?;
        final_sum = final_sum + flow_matching_mask_loss(&out, &case.target, &case.bundle.latent_mask)?;
    }
    let final_loss = final_sum * inv_cases;
    if !final_loss.is_finite() {
        return Err(Error::invalid(
            "finetune: non-finite loss after the last step — training diverged",
        ));
    }
    losses.push(final_loss);

    Ok(FinetuneReport { params, losses })
}

#[cfg(test)]
mod tests {
    use super::super::toy;
    use super::*;

    fn toy_case(seed: u64) -> (Vec<TrainCase<f64>>, Vec<ToyDitBlock<f64>>, DiffSimParams<f64>) {
        let case = toy::toy_train_case::<f64>(seed).unwrap();
        let blocks = toy::toy_blocks::<f64>(seed + 1, 2, 8, 2, 16).unwrap();
        let params = DiffSimParams::neutral(2, 8);
        (vec![case], blocks, params)
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (cases, blocks, params) = toy_case(300);
        let cfg = FinetuneConfig { steps: 3, lr: 0.0, ..FinetuneConfig::default() };
        let report = finetune(&cases, &blocks, &params, &cfg).unwrap();
        assert_eq!(report.params.g, params.g);
        assert_eq!(report.params.s.data(), params.s.data());
        assert_eq!(report.params.bias.data(), params.bias.data());
        // Loss is evaluated steps + 1 times and never moves.
        assert_eq!(report.losses.len(), 4);
        assert!(report.losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn a_few_steps_reduce_the_loss_on_a_fixed_case() {
        let (cases, blocks, params) = toy_case(301);
        let cfg = FinetuneConfig { steps: 30, ..FinetuneConfig::default() };
        let report = finetune(&cases, &blocks, &params, &cfg).unwrap();
        let first = report.losses[0];
        let last = *report.losses.last().unwrap();
        assert!(last < first, "loss went {first} → {last}");
    }

    #[test]
    fn frozen_groups_stay_fixed_while_others_move() {
        let (cases, blocks, mut params) = toy_case(302);
        params.trainable.s = false;
        let cfg = FinetuneConfig { steps: 5, ..FinetuneConfig::default() };
        let report = finetune(&cases, &blocks, &params, &cfg).unwrap();
        assert_eq!(report.params.s.data(), params.s.data());
        assert_ne!(report.params.bias.data(), params.bias.data());
    }

    #[test]
    fn block_weights_are_byte_identical_after_training() {
        let (cases, blocks, params) = toy_case(303);
        let before: Vec<Vec<u64>> = blocks
            .iter()
            .map(|b| {
                b.wq
                    .data()
                    .iter()
                    .chain(b.wk.data())
                    .chain(b.wv.data())
                    .chain(b.wo.data())
                    .chain(b.w1.data())
                    .chain(b.w2.data())
                    .map(|x| x.to_bits())
                    .collect()
            })
            .collect();
        let cfg = FinetuneConfig { steps: 5, ..FinetuneConfig::default() };
        finetune(&cases, &blocks, &params, &cfg).unwrap();
        let after: Vec<Vec<u64>> = blocks
            .iter()
            .map(|b| {
                b.wq
                    .data()
                    .iter()
                    .chain(b.wk.data())
                    .chain(b.wv.data())
                    .chain(b.wo.data())
                    .chain(b.w1.data())
                    .chain(b.w2.data())
                    .map(|x| x.to_bits())
                    .collect()
            })
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn poisoned_parameters_report_divergence() {
        let (cases, blocks, mut params) = toy_case(304);
        params.g[0] = f64::NAN;
        let cfg = FinetuneConfig { steps: 2, ..FinetuneConfig::default() };
        let err = finetune(&cases, &blocks, &params, &cfg).unwrap_err();
        assert!(err.to_string().contains("diverged"), "{err}");
    }

    #[test]
    fn empty_dataset_and_zero_steps_are_rejected() {
        let (cases, blocks, params) = toy_case(305);
        let cfg = FinetuneConfig::default();
        assert!(finetune(&[], &blocks, &params, &cfg).is_err());
        let cfg = FinetuneConfig { steps: 0, ..cfg };
        assert!(finetune(&cases, &blocks, &params, &cfg).is_err());
    }
}
