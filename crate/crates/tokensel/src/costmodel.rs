//! Analytical cost model of mask-aware transformer inference, plus measured
//! benchmark sweeps and mask-corpus statistics.
//!
//! The model: running a fraction γ of the tokens through η blocks costs
//! `G(γ) = γ·(49 + 12c + 4n + 4hn/c + 9f)·b·n·c·η` floating-point
//! operations, linear in γ. Work that does not shrink with the mask (VAE,
//! embeddings, …) is folded into a single dimensionless ratio φ of the
//! full-token cost, so end-to-end speedup is `(1 + φ)/(γ + φ)`.

use crate::diffsim::toy::{latent_mask_with_counts, toy_blocks, toy_bundle};
use crate::diffsim::{run_diffsim_detailed, DiffSimParams, GatherSource};
use crate::error::{Error, Result};
use crate::numerics::SamplingConvention;
use crate::tensorio::Tensor;

/// Problem-size constants plus the two dimensionless knobs γ (mask ratio)
/// and φ (fixed-overhead ratio).
#[derive(Clone, Copy, Debug)]
pub struct CostModelConfig {
    pub b: usize,
    /// Full token count n.
    pub n: usize,
    /// Channels c.
    pub c: usize,
    /// Attention heads h.
    pub h: usize,
    /// FFN width f.
    pub f: usize,
    /// Block count η.
    pub eta: usize,
    /// Fixed overhead as a fraction of the full-token block cost.
    pub phi: f64,
    /// Mask ratio in [0, 1].
    pub gamma: f64,
}

impl CostModelConfig {
    /// Production-scale constants of a 480p video DiT: b=1, n=89 040,
    /// c=1 536, h=12, f=8 960, η=30.
    pub fn full_scale() -> Self {
        CostModelConfig { b: 1, n: 89_040, c: 1536, h: 12, f: 8960, eta: 30, phi: 0.0, gamma: 1.0 }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_phi(mut self, phi: f64) -> Self {
        self.phi = phi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("b", self.b),
            ("n", self.n),
            ("c", self.c),
            ("h", self.h),
            ("f", self.f),
            ("eta", self.eta),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("cost model: {name} must be ≥ 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!(
                "cost model: gamma {} outside [0, 1]",
                self.gamma
            )));
        }
        if !self.phi.is_finite() || self.phi < 0.0 {
            return Err(Error::invalid(format!("cost model: phi {} must be ≥ 0", self.phi)));
        }
        Ok(())
    }
}

/// Per-token-per-channel-per-block factor: attention projections, score and
/// mix matmuls, and the FFN.
fn token_factor(cfg: &CostModelConfig) -> f64 {
    49.0 + 12.0 * cfg.c as f64
        + 4.0 * cfg.n as f64
        + 4.0 * (cfg.h * cfg.n) as f64 / cfg.c as f64
        + 9.0 * cfg.f as f64
}

/// Total FLOPs `G(γ) + φ·G(1)` with `G(γ)` linear in the mask ratio.
pub fn flops(cfg: &CostModelConfig) -> Result<f64> {
    cfg.validate()?;
    let beta_eta = (cfg.b * cfg.n * cfg.c) as f64 * cfg.eta as f64;
    let g1 = token_factor(cfg) * beta_eta;
    Ok(cfg.gamma * g1 + cfg.phi * g1)
}

/// End-to-end acceleration over full-token inference: `(1 + φ)/(γ + φ)`.
pub fn speedup(cfg: &CostModelConfig) -> Result<f64> {
    cfg.validate()?;
    Ok((1.0 + cfg.phi) / (cfg.gamma + cfg.phi))
}

/// Solves `(1 + φ) = s·(γ + φ)` for the fixed-overhead ratio that reproduces
/// a measured speedup `s` at mask ratio `γ`: `φ = (1 − s·γ)/(s − 1)`.
pub fn fit_phi(anchor_gamma: f64, anchor_speedup: f64) -> Result<f64> {
    if anchor_speedup.is_nan() || anchor_speedup <= 1.0 {
        return Err(Error::invalid(format!(
            "fit_phi: anchor speedup must exceed 1, got {anchor_speedup}"
        )));
    }
    if !(0.0..1.0).contains(&anchor_gamma) {
        return Err(Error::invalid(format!(
            "fit_phi: anchor mask ratio must lie in [0, 1), got {anchor_gamma}"
        )));
    }
    let phi = (1.0 - anchor_speedup * anchor_gamma) / (anchor_speedup - 1.0);
    if phi < 0.0 {
        return Err(Error::invalid(format!(
            "fit_phi: infeasible anchor — a {anchor_speedup}× speedup at ratio {anchor_gamma} \
             would need negative fixed overhead ({phi:.4})"
        )));
    }
    Ok(phi)
}

/// Mask-area distribution over a corpus: one ratio per mask, a 20-bin
/// histogram over [0, 1] (width 0.05), and the fraction under 20%.
#[derive(Clone, Debug)]
pub struct MaskRatioStats {
    pub ratios: Vec<f64>,
    pub histogram: [usize; 20],
    pub below_20: f64,
}

pub fn mask_ratio_stats(masks: &[Tensor<u8>]) -> Result<MaskRatioStats> {
    if masks.is_empty() {
        return Err(Error::invalid("mask_ratio_stats: no masks given"));
    }
    let mut ratios = Vec::with_capacity(masks.len());
    let mut histogram = [0usize; 20];
    let mut below = 0usize;
    for (i, mask) in masks.iter().enumerate() {
        if mask.numel() == 0 {
            return Err(Error::invalid(format!("mask_ratio_stats: mask {i} is empty")));
        }
        let mut ones = 0usize;
        for &v in mask.data() {
            if v > 1 {
                return Err(Error::invalid(format!(
                    "mask_ratio_stats: mask {i} contains values other than 0 and 1"
                )));
            }
            ones += usize::from(v == 1);
        }
        let ratio = ones as f64 / mask.numel() as f64;
        histogram[((ratio * 20.0).floor() as usize).min(19)] += 1;
        below += usize::from(ratio < 0.20);
        ratios.push(ratio);
    }
    let below_20 = below as f64 / masks.len() as f64;
    Ok(MaskRatioStats { ratios, histogram, below_20 })
}

/// Toy-run sizes for the measured sweep.
#[derive(Clone, Copy, Debug)]
pub struct BenchConfig {
    pub tokens: usize,
    pub channels: usize,
    pub heads: usize,
    pub ffn: usize,
    pub eta: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { tokens: 4096, channels: 64, heads: 2, ffn: 128, eta: 4, batch: 1, seed: 1 }
    }
}

/// One measured point of the sweep.
#[derive(Clone, Copy, Debug)]
pub struct BenchRow {
    pub gamma: f64,
    pub predicted_flops: f64,
    pub measured_ns_attention: u64,
    pub measured_ns_total: u64,
}

/// Runs the simulator once per γ on a random mask of that ratio and records
/// the median wall time of the block work and of the whole run (3 warmup
/// runs, median of 5 measured), next to the analytic FLOPs column.
pub fn bench_sweep(gammas: &[f64], cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if gammas.is_empty() {
        return Err(Error::invalid("bench: need at least one gamma"));
    }
    if cfg.tokens < 4 {
        return Err(Error::invalid("bench: need at least 4 tokens"));
    }
    for &g in gammas {
        if !(0.0 < g && g < 1.0) {
            return Err(Error::invalid(format!(
                "bench: gamma {g} outside (0, 1) — both mask and complement must be non-empty"
            )));
        }
    }

    let blocks = toy_blocks::<f32>(cfg.seed, cfg.eta, cfg.channels, cfg.heads, cfg.ffn)?;
    let params = DiffSimParams::<f32>::neutral(cfg.eta, cfg.channels);
    let conv = SamplingConvention::ExactCenter;

    let mut rows = Vec::with_capacity(gammas.len());
    for (gi, &gamma) in gammas.iter().enumerate() {
        let count = ((gamma * cfg.tokens as f64).round() as usize)
            .clamp(1, cfg.tokens - 1);
        let counts = vec![count; cfg.batch];
        let mask = latent_mask_with_counts(
            cfg.seed.wrapping_add(gi as u64 * 7919),
            cfg.tokens,
            &counts,
        )?;
        let bundle = toy_bundle::<f32>(cfg.seed.wrapping_add(gi as u64 * 104729 + 1), &mask, cfg.channels)?;

        for _ in 0..3 {
            run_diffsim_detailed(&bundle, &params, &blocks, conv, GatherSource::MaskedLatent)?;
        }
        let mut attention = Vec::with_capacity(5);
        let mut total = Vec::with_capacity(5);
        for _ in 0..5 {
            let (_, m) =
                run_diffsim_detailed(&bundle, &params, &blocks, conv, GatherSource::MaskedLatent)?;
            attention.push(m.attention_ns);
            total.push(m.total_ns);
        }

        let predicted = flops(&CostModelConfig {
            b: cfg.batch,
            n: cfg.tokens,
            c: cfg.channels,
            h: cfg.heads,
            f: cfg.ffn,
            eta: cfg.eta,
            phi: 0.0,
            gamma,
        })?;
        rows.push(BenchRow {
            gamma,
            predicted_flops: predicted,
            measured_ns_attention: median(&mut attention),
            measured_ns_total: median(&mut total),
        });
    }
    Ok(rows)
}

fn median(xs: &mut [u64]) -> u64 {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

/// CSV rendering of a sweep: header plus one row per γ, '.' decimals.
pub fn render_bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("gamma,predicted_flops,measured_ns_attention,measured_ns_total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.gamma, r.predicted_flops, r.measured_ns_attention, r.measured_ns_total
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn no_tokens_selected_and_no_overhead_costs_nothing() {
        let cfg = CostModelConfig::full_scale().with_gamma(0.0);
        assert_eq!(flops(&cfg).unwrap(), 0.0);
    }

    #[test]
    fn full_scale_constants_reproduce_the_published_total() {
        let cfg = CostModelConfig::full_scale();
        let total = flops(&cfg).unwrap();
        // Factor 458 063.5 per token·channel·block, β·η = 4.1029632e9.
        assert_eq!(total, 458_063.5 * 4.102_963_2e9);
        assert!((total / 1.879e15 - 1.0).abs() < 1e-3, "got {total:e}");
    }

    #[test]
    fn flops_is_linear_in_the_mask_ratio() {
        let full = CostModelConfig::full_scale();
        assert_eq!(
            flops(&full.with_gamma(0.5)).unwrap(),
            flops(&full).unwrap() / 2.0
        );
    }

    #[test]
    fn second_differences_vanish_on_an_even_gamma_grid() {
        let base = CostModelConfig::full_scale().with_phi(0.3);
        let f: Vec<f64> = (0..=10)
            .map(|i| flops(&base.with_gamma(i as f64 / 10.0)).unwrap())
            .collect();
        let scale = f[10];
        for w in f.windows(3) {
            let d2 = w[2] - 2.0 * w[1] + w[0];
            assert!(d2.abs() <= 1e-12 * scale, "second difference {d2}");
        }
    }

    #[test]
    fn pure_linear_speedup_at_half_ratio_is_two() {
        let cfg = CostModelConfig::full_scale().with_gamma(0.5);
        assert_eq!(speedup(&cfg).unwrap(), 2.0);
    }

    #[test]
    fn full_ratio_speedup_is_exactly_one_for_any_overhead() {
        for phi in [0.0, 0.1, 0.3630, 2.0, 17.5] {
            let cfg = CostModelConfig::full_scale().with_phi(phi).with_gamma(1.0);
            assert_eq!(speedup(&cfg).unwrap(), 1.0);
        }
    }

    #[test]
    fn overhead_fitted_at_the_5pct_anchor_lands_near_the_20pct_one() {
        // 3.3× at 5% masked ⇒ φ ≈ 0.36304; the model then puts 20% masked
        // within 4% of the published 2.5×.
        let phi = fit_phi(0.05, 3.3).unwrap();
        assert!((phi - 0.835 / 2.3).abs() < 1e-12);
        let s = speedup(&CostModelConfig::full_scale().with_phi(phi).with_gamma(0.20)).unwrap();
        assert!((2.25..=2.60).contains(&s), "speedup {s}");
        assert!((s / 2.5 - 1.0).abs() <= 0.04, "speedup {s} vs 2.5");
    }

    #[test]
    fn reciprocal_anchor_means_zero_overhead() {
        // s = 1/γ with dyadic γ is exact in floating point.
        assert_eq!(fit_phi(0.25, 4.0).unwrap(), 0.0);
    }

    #[test]
    fn impossible_anchors_are_rejected() {
        assert!(fit_phi(0.5, 20.0).is_err()); // implies φ < 0
        assert!(fit_phi(0.05, 1.0).is_err()); // speedup must exceed 1
        assert!(fit_phi(1.0, 2.0).is_err()); // ratio must stay below 1
        assert!(fit_phi(f64::NAN, 2.0).is_err());
        assert!(fit_phi(0.05, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn speedup_decreases_strictly_in_gamma(
            phi in 0.0f64..5.0,
            g1 in 0.0f64..0.9,
            gap in 1e-3f64..0.1,
        ) {
            let g2 = g1 + gap;
            let base = CostModelConfig::full_scale().with_phi(phi);
            let s1 = speedup(&base.with_gamma(g1)).unwrap();
            let s2 = speedup(&base.with_gamma(g2)).unwrap();
            prop_assert!(s1 > s2, "({g1}, {g2}) gave ({s1}, {s2})");
        }

        #[test]
        fn fitting_a_modeled_speedup_recovers_phi(
            phi in 1e-6f64..5.0,
            gamma in 0.01f64..0.99,
        ) {
            let s = (1.0 + phi) / (gamma + phi);
            let back = fit_phi(gamma, s).unwrap();
            prop_assert!((back - phi).abs() <= 1e-9 * (1.0 + phi), "{phi} → {back}");
        }
    }

    #[test]
    fn single_empty_mask_sits_entirely_below_20pct() {
        let masks = vec![Tensor::<u8>::zeros(&[1, 1, 2, 4, 4])];
        let st = mask_ratio_stats(&masks).unwrap();
        assert_eq!(st.ratios, vec![0.0]);
        assert_eq!(st.below_20, 1.0);
        assert_eq!(st.histogram[0], 1);
        assert_eq!(st.histogram[1..].iter().sum::<usize>(), 0);
    }

    #[test]
    fn mixed_corpus_counts_the_below_threshold_fraction() {
        let mk = |ones: usize| {
            let mut t = Tensor::<u8>::zeros(&[10]);
            t.data_mut()[..ones].fill(1);
            t
        };
        let st = mask_ratio_stats(&[mk(1), mk(3)]).unwrap(); // ratios 0.1, 0.3
        assert_eq!(st.below_20, 0.5);
        assert_eq!(st.histogram[2], 1);
        assert_eq!(st.histogram[6], 1);
    }

    #[test]
    fn histogram_recovers_a_corpus_generated_on_bin_centers() {
        // Masks constructed at exact ratios k/20 land in bin k.
        let l = 40usize;
        let mut masks = Vec::new();
        for k in 1..=19usize {
            let mut t = Tensor::<u8>::zeros(&[l]);
            t.data_mut()[..(k * l) / 20].fill(1);
            masks.push(t);
        }
        let st = mask_ratio_stats(&masks).unwrap();
        for k in 1..=19 {
            assert_eq!(st.histogram[k], 1, "bin {k}");
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(mask_ratio_stats(&[]).is_err());
    }

    #[test]
    fn sweep_rows_follow_the_requested_gammas() {
        let cfg = BenchConfig {
            tokens: 256,
            channels: 8,
            heads: 2,
            ffn: 16,
            eta: 1,
            batch: 1,
            seed: 5,
        };
        let rows = bench_sweep(&[0.25, 0.75], &cfg).unwrap();
        assert_eq!(rows.len(), 2);
        // The analytic column is exactly linear: 0.75 = 3 × 0.25.
        assert_eq!(rows[1].predicted_flops, 3.0 * rows[0].predicted_flops);
        for r in &rows {
            assert!(r.measured_ns_attention > 0);
            assert!(r.measured_ns_attention <= r.measured_ns_total);
        }
        let csv = render_bench_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "gamma,predicted_flops,measured_ns_attention,measured_ns_total"
        );
        assert_eq!(csv.lines().count(), 3);
        assert!(bench_sweep(&[1.0], &cfg).is_err());
    }

    #[test]
    fn more_mask_means_more_measured_block_time() {
        let cfg = BenchConfig {
            tokens: 2048,
            channels: 16,
            heads: 2,
            ffn: 32,
            eta: 1,
            batch: 1,
            seed: 6,
        };
        let rows = bench_sweep(&[0.25, 0.75], &cfg).unwrap();
        assert!(
            rows[0].measured_ns_attention < rows[1].measured_ns_attention,
            "γ=0.25 took {} ns, γ=0.75 took {} ns",
            rows[0].measured_ns_attention,
            rows[1].measured_ns_attention
        );
    }
}
