//! Command-line front end: index building, mask embedding, simulator runs
//! with optional boundary fusion, toy fine-tuning, cost-model queries,
//! benchmark sweeps, gradient checks, and mask-corpus statistics.
//!
//! Output conventions: results go to stdout as CSV with a header row and
//! '.' decimals; diagnostics go to stderr. Exit code 1 signals a pipeline
//! error (one line on stderr), exit code 2 a usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tokensel::bvi::build_indices;
use tokensel::costmodel::{
    bench_sweep, fit_phi, flops, mask_ratio_stats, render_bench_csv, speedup, BenchConfig,
    CostModelConfig,
};
use tokensel::diffsim::toy::{latent_mask_with_counts, sin_pos_emb, toy_blocks, toy_bundle, toy_train_case};
use tokensel::diffsim::{
    all_coords, finite_difference, grad_component, grad_params, run_diffsim_detailed, finetune,
    DiffSimParams, FinetuneConfig, GatherSource, LatentBundle,
};
use tokensel::fusion::{align, blend, overlap_stats};
use tokensel::maskembed::{dilate_mask, embed_mask, flatten_tokens, StrideSpec};
use tokensel::numerics::SamplingConvention;
use tokensel::tensorio::{load_tensor, save_tensor, Tensor};
use tokensel::{Error, Result};

/// Fixed-overhead ratio fitted from the published anchor of a 3.3×
/// end-to-end speedup at a 5% mask ratio; used as the default φ wherever a
/// model-implied speedup or FPS is reported.
const ANCHOR_PHI: f64 = 0.835 / 2.3;

#[derive(Parser)]
#[command(
    name = "tokensel",
    version,
    about = "Mask-aware token selection for diffusion-transformer video inpainting"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build gather/scatter coordinate files from a [B, L] binary mask.
    Index(IndexArgs),
    /// Embed a pixel-space [B, 1, F, H, W] mask onto the latent grid.
    EmbedMask(EmbedArgs),
    /// One simulator step over the masked tokens, optionally fused back.
    Run(Box<RunArgs>),
    /// Fine-tune the three simulator parameter groups on a synthetic case.
    Train(TrainArgs),
    /// Evaluate the analytical FLOPs/speedup model at one mask ratio.
    Flops(FlopsArgs),
    /// Fit the fixed-overhead ratio φ from a measured speedup anchor.
    FitPhi(FitPhiArgs),
    /// Measure wall time across mask ratios and compare with the model.
    Bench(BenchArgs),
    /// Check analytic parameter gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Mask-area histogram and P(ratio < 0.2) over a directory of masks.
    Maskstats(MaskstatsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ConvArg {
    /// Coordinates on exact interpolation-cell centers (bit-exact copies).
    Exact,
    /// The published linspace grid, off-center by half a step.
    Verbatim,
}

impl From<ConvArg> for SamplingConvention {
    fn from(v: ConvArg) -> Self {
        match v {
            ConvArg::Exact => SamplingConvention::ExactCenter,
            ConvArg::Verbatim => SamplingConvention::Verbatim,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    /// Inner tokens start from the masked-video latent.
    Mask,
    /// Inner tokens start from the noised latent.
    Noise,
}

impl From<SourceArg> for GatherSource {
    fn from(v: SourceArg) -> Self {
        match v {
            SourceArg::Mask => GatherSource::MaskedLatent,
            SourceArg::Noise => GatherSource::NoiseLatent,
        }
    }
}

#[derive(Args)]
struct IndexArgs {
    /// Binary mask tensor, u8, shaped [B, L].
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, value_enum, default_value = "exact")]
    conv: ConvArg,
    /// Prefix for the four output files (.ind_f/.ind_b/.lengths/.padmask).
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct EmbedArgs {
    /// Binary mask tensor, u8, shaped [B, 1, F, H, W].
    #[arg(long)]
    mask: PathBuf,
    /// VAE strides as frames,height,width.
    #[arg(long, value_parser = parse_strides, default_value = "4,8,8")]
    strides: (usize, usize, usize),
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Noised latent, f64, shaped [B, L, C].
    #[arg(long)]
    noise: PathBuf,
    /// Masked-video latent, f64, shaped [B, L, C].
    #[arg(long)]
    masked_latent: PathBuf,
    /// Latent mask, u8: [B, L] flat, or [B, 1, F, H, W] grid (required
    /// with --fusion so the band can be dilated).
    #[arg(long)]
    mask: PathBuf,
    /// Parameter file prefix as written by `train`.
    #[arg(long)]
    params: String,
    #[arg(long)]
    out: PathBuf,
    /// Dilate the mask, align band statistics, and blend the prediction
    /// back over the original latent.
    #[arg(long)]
    fusion: bool,
    /// Chebyshev dilation radius on the latent grid.
    #[arg(long, default_value_t = 2, requires = "fusion")]
    dilate_radius: usize,
    /// Compute band statistics per channel instead of pooled.
    #[arg(long, requires = "fusion")]
    per_channel: bool,
    #[arg(long, value_enum, default_value = "mask")]
    gather_source: SourceArg,
    #[arg(long, value_enum, default_value = "exact")]
    conv: ConvArg,
    /// Fixed-overhead ratio for the model-implied speedup report.
    #[arg(long, default_value_t = ANCHOR_PHI)]
    phi: f64,
    /// Full-token throughput the FPS report scales from.
    #[arg(long, default_value_t = 10.0)]
    baseline_fps: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    #[arg(long, default_value_t = 2)]
    eta: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 16)]
    ffn: usize,
    /// Prefix for the parameter files (.g/.s/.bias tensors plus .meta.txt).
    #[arg(long)]
    out: String,
}

#[derive(Args)]
struct FlopsArgs {
    /// Mask ratio γ in [0, 1].
    #[arg(long)]
    gamma: f64,
    /// Fixed-overhead ratio φ (fraction of the full-token cost).
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
    #[arg(long, default_value_t = 89_040)]
    n: usize,
    #[arg(long, default_value_t = 1536)]
    c: usize,
    #[arg(long, default_value_t = 12)]
    h: usize,
    #[arg(long, default_value_t = 8960)]
    f: usize,
    #[arg(long, default_value_t = 30)]
    eta: usize,
    #[arg(long, default_value_t = 1)]
    b: usize,
    #[arg(long, default_value_t = 10.0)]
    baseline_fps: f64,
}

#[derive(Args)]
struct FitPhiArgs {
    #[arg(long)]
    anchor_gamma: f64,
    #[arg(long)]
    anchor_speedup: f64,
    /// Ratio at which the fitted model is evaluated in the output.
    #[arg(long, default_value_t = 0.20)]
    eval_gamma: f64,
}

/// Parsed --gammas value; a newtype so clap treats the list as one argument.
#[derive(Clone)]
struct GammaList(Vec<f64>);

#[derive(Args)]
struct BenchArgs {
    /// Either start:end:step (inclusive) or a comma-separated list.
    #[arg(long, value_parser = parse_gammas, default_value = "0.1:0.9:0.1")]
    gammas: GammaList,
    #[arg(long, default_value_t = 4096)]
    tokens: usize,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 128)]
    ffn: usize,
    #[arg(long, default_value_t = 4)]
    eta: usize,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, value_enum, default_value = "exact")]
    conv: ConvArg,
}

#[derive(Args)]
struct MaskstatsArgs {
    /// Directory scanned (non-recursively) for .yt mask tensors.
    #[arg(long)]
    dir: PathBuf,
    /// Histogram output (bin_start,bin_end,count).
    #[arg(long)]
    csv: PathBuf,
}

fn parse_strides(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected frames,height,width — got '{s}'"));
    }
    let mut v = [0usize; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|e| format!("bad stride '{part}': {e}"))?;
    }
    Ok((v[0], v[1], v[2]))
}

fn parse_gammas(s: &str) -> std::result::Result<GammaList, String> {
    let parse_one =
        |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad ratio '{t}': {e}"));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected start:end:step — got '{s}'"));
        }
        let (start, end, step) = (parse_one(parts[0])?, parse_one(parts[1])?, parse_one(parts[2])?);
        if !start.is_finite() || !end.is_finite() || !step.is_finite() {
            return Err(format!("non-finite value in '{s}'"));
        }
        if step <= 0.0 || end < start {
            return Err(format!("empty range '{s}'"));
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        // Snap each point to 1e-9 so 0.1:0.9:0.1 yields 0.9, not 0.900…01.
        Ok(GammaList(
            (0..=n)
                .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                .collect(),
        ))
    } else {
        s.split(',').map(parse_one).collect::<std::result::Result<_, _>>().map(GammaList)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Index(a) => cmd_index(a)?,
        Cmd::EmbedMask(a) => cmd_embed(a)?,
        Cmd::Run(a) => cmd_run(*a)?,
        Cmd::Train(a) => cmd_train(a)?,
        Cmd::Flops(a) => cmd_flops(a)?,
        Cmd::FitPhi(a) => cmd_fit_phi(a)?,
        Cmd::Bench(a) => cmd_bench(a)?,
        Cmd::Gradcheck(a) => return cmd_gradcheck(a),
        Cmd::Maskstats(a) => cmd_maskstats(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn load_u8(path: &Path) -> Result<Tensor<u8>> {
    load_tensor(path)
        .and_then(|t| t.into_u8())
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn load_f64(path: &Path) -> Result<Tensor<f64>> {
    load_tensor(path)
        .and_then(|t| t.into_f64())
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn cmd_index(a: IndexArgs) -> Result<()> {
    let mask = load_u8(&a.mask)?;
    let idx = build_indices(&mask, a.conv.into())?;
    let lengths: Vec<f64> = idx.lengths.iter().map(|&n| n as f64).collect();
    let lengths = Tensor::new(vec![idx.batch()], lengths)?;
    save_tensor(&idx.ind_f, format!("{}.ind_f.yt", a.out_prefix))?;
    save_tensor(&idx.ind_b, format!("{}.ind_b.yt", a.out_prefix))?;
    save_tensor(&lengths, format!("{}.lengths.yt", a.out_prefix))?;
    save_tensor(&idx.pad_mask, format!("{}.padmask.yt", a.out_prefix))?;
    Ok(())
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let mask = load_u8(&a.mask)?;
    let (f, h, w) = a.strides;
    let emb = embed_mask(&mask, StrideSpec::new(f, h, w)?)?;
    save_tensor(&emb, &a.out)
}

/// Latent mask in both forms: flattened [B, L] for the simulator, plus the
/// grid shape when the file carried one (needed for dilation).
fn load_run_mask(path: &Path) -> Result<(Tensor<u8>, Option<Tensor<u8>>)> {
    let mask = load_u8(path)?;
    match mask.shape() {
        [_, _] => Ok((mask, None)),
        [_, 1, _, _, _] => Ok((flatten_tokens(&mask)?, Some(mask))),
        other => Err(Error::invalid(format!(
            "run mask must be [B, L] or [B, 1, F, H, W], got {other:?}"
        ))),
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let lat_nis = load_f64(&a.noise)?;
    let lat_mask = load_f64(&a.masked_latent)?;
    let (flat_mask, grid_mask) = load_run_mask(&a.mask)?;
    let (params, meta) = read_params(&a.params)?;
    if lat_nis.shape().len() != 3 {
        return Err(Error::invalid(format!(
            "noise latent must be [B, L, C], got {:?}",
            lat_nis.shape()
        )));
    }
    let (l, c) = (lat_nis.shape()[1], lat_nis.shape()[2]);
    if c != meta.channels {
        return Err(Error::invalid(format!(
            "latent has {c} channels but the parameter set was trained with {}",
            meta.channels
        )));
    }
    let blocks = toy_blocks::<f64>(meta.seed, meta.eta, meta.channels, meta.heads, meta.ffn)?;
    let conv = a.conv.into();
    let source = a.gather_source.into();

    let run_mask = if a.fusion {
        let grid = grid_mask.ok_or_else(|| {
            Error::invalid("fusion needs the [B, 1, F, H, W] latent-grid mask to dilate a band")
        })?;
        flatten_tokens(&dilate_mask(&grid, a.dilate_radius)?)?
    } else {
        flat_mask.clone()
    };

    let bundle = LatentBundle {
        lat_nis,
        lat_mask: lat_mask.clone(),
        latent_mask: run_mask.clone(),
        pos_emb: sin_pos_emb(l, c),
    };
    let (out, _) = run_diffsim_detailed(&bundle, &params, &blocks, conv, source)?;

    let result = if a.fusion {
        let band_data: Vec<u8> = run_mask
            .data()
            .iter()
            .zip(flat_mask.data())
            .map(|(&d, &m)| d & !m)
            .collect();
        let band = Tensor::new(flat_mask.shape().to_vec(), band_data)?;
        let stats = overlap_stats(&out, &lat_mask, &band, a.per_channel)?;
        let aligned = align(&out, &stats)?;
        blend(&lat_mask, &aligned, &flat_mask, &run_mask)?
    } else {
        out
    };
    save_tensor(&result, &a.out)?;

    // Model-implied cost at the effective (latent) mask ratio of this run.
    let ones = run_mask.data().iter().filter(|&&v| v == 1).count();
    let gamma = ones as f64 / run_mask.numel() as f64;
    let cfg = CostModelConfig::full_scale().with_phi(a.phi).with_gamma(gamma);
    let sp = speedup(&cfg)?;
    println!("gamma_latent,model_speedup,model_fps");
    println!("{gamma},{sp},{}", a.baseline_fps * sp);
    Ok(())
}

struct ParamsMeta {
    eta: usize,
    channels: usize,
    heads: usize,
    ffn: usize,
    seed: u64,
}

fn write_params(prefix: &str, params: &DiffSimParams<f64>, meta: &ParamsMeta) -> Result<()> {
    let g = Tensor::new(vec![params.g.len()], params.g.clone())?;
    save_tensor(&g, format!("{prefix}.g.yt"))?;
    save_tensor(&params.s, format!("{prefix}.s.yt"))?;
    save_tensor(&params.bias, format!("{prefix}.bias.yt"))?;
    let text = format!(
        "eta {}\nchannels {}\nheads {}\nffn {}\nseed {}\n",
        meta.eta, meta.channels, meta.heads, meta.ffn, meta.seed
    );
    fs::write(format!("{prefix}.meta.txt"), text)?;
    Ok(())
}

fn read_params(prefix: &str) -> Result<(DiffSimParams<f64>, ParamsMeta)> {
    let meta_path = format!("{prefix}.meta.txt");
    let text = fs::read_to_string(&meta_path)
        .map_err(|e| Error::invalid(format!("{meta_path}: {e}")))?;
    let mut fields = std::collections::HashMap::new();
    for line in text.lines() {
        if let Some((key, value)) = line.split_once(char::is_whitespace) {
            fields.insert(key.trim().to_string(), value.trim().to_string());
        }
    }
    let get = |key: &str| {
        fields
            .get(key)
            .ok_or_else(|| Error::invalid(format!("{meta_path}: missing field '{key}'")))
    };
    let count = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|e| Error::invalid(format!("{meta_path}: bad '{key}': {e}")))
    };
    let meta = ParamsMeta {
        eta: count("eta")?,
        channels: count("channels")?,
        heads: count("heads")?,
        ffn: count("ffn")?,
        seed: get("seed")?
            .parse()
            .map_err(|e| Error::invalid(format!("{meta_path}: bad 'seed': {e}")))?,
    };

    let g = load_f64(Path::new(&format!("{prefix}.g.yt")))?.into_data();
    let s = load_f64(Path::new(&format!("{prefix}.s.yt")))?;
    let bias = load_f64(Path::new(&format!("{prefix}.bias.yt")))?;
    let params = DiffSimParams { g, s, bias, trainable: Default::default() };
    params.validate(meta.eta, meta.channels)?;
    Ok((params, meta))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let case = toy_train_case::<f64>(a.seed)?;
    let (_, _, c) = case.bundle.validate()?;
    let blocks = toy_blocks::<f64>(a.seed, a.eta, c, a.heads, a.ffn)?;
    let start = DiffSimParams::<f64>::neutral(a.eta, c);
    let cfg = FinetuneConfig {
        steps: a.steps,
        lr: a.lr,
        clip_norm: (a.clip > 0.0).then_some(a.clip),
        ..FinetuneConfig::default()
    };
    let report = finetune(&[case], &blocks, &start, &cfg)?;

    let meta = ParamsMeta { eta: a.eta, channels: c, heads: a.heads, ffn: a.ffn, seed: a.seed };
    write_params(&a.out, &report.params, &meta)?;

    let first = report.losses[0];
    let last = *report.losses.last().expect("at least the initial loss");
    println!("initial_loss,final_loss,ratio");
    println!("{first},{last},{}", last / first);
    Ok(())
}

fn cmd_flops(a: FlopsArgs) -> Result<()> {
    let cfg = CostModelConfig {
        b: a.b,
        n: a.n,
        c: a.c,
        h: a.h,
        f: a.f,
        eta: a.eta,
        phi: a.phi,
        gamma: a.gamma,
    };
    let fl = flops(&cfg)?;
    let sp = speedup(&cfg)?;
    println!("gamma,phi,flops,speedup,fps");
    println!("{},{},{fl},{sp},{}", a.gamma, a.phi, a.baseline_fps * sp);
    Ok(())
}

fn cmd_fit_phi(a: FitPhiArgs) -> Result<()> {
    let phi = fit_phi(a.anchor_gamma, a.anchor_speedup)?;
    let cfg = CostModelConfig::full_scale().with_phi(phi).with_gamma(a.eval_gamma);
    let sp = speedup(&cfg)?;
    println!("phi,eval_gamma,speedup");
    println!("{phi},{},{sp}", a.eval_gamma);
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        tokens: a.tokens,
        channels: a.channels,
        heads: a.heads,
        ffn: a.ffn,
        eta: a.eta,
        batch: a.batch,
        seed: a.seed,
    };
    let rows = bench_sweep(&a.gammas.0, &cfg)?;
    let csv = render_bench_csv(&rows);
    match &a.csv {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    // Small enough that the exhaustive coordinate sweep stays instant, big
    // enough to exercise padding, both parameter matrices, and the FFN.
    let (l, c, eta, heads, ffn) = (12usize, 4usize, 2usize, 2usize, 8usize);
    let mask = latent_mask_with_counts(a.seed, l, &[5, 3])?;
    let bundle = toy_bundle::<f64>(a.seed.wrapping_add(1), &mask, c)?;
    let blocks = toy_blocks::<f64>(a.seed.wrapping_add(2), eta, c, heads, ffn)?;
    let target = toy_bundle::<f64>(a.seed.wrapping_add(3), &mask, c)?.lat_nis;

    // Perturb the parameters off their neutral point so no gradient is
    // trivially zero.
    let mut params = DiffSimParams::<f64>::neutral(eta, c);
    for (i, g) in params.g.iter_mut().enumerate() {
        *g = 0.85 + 0.1 * i as f64;
    }
    for (k, v) in params.s.data_mut().iter_mut().enumerate() {
        *v = 0.1 * (1.0 + 0.37 * k as f64).sin();
    }
    for (k, v) in params.bias.data_mut().iter_mut().enumerate() {
        *v = 0.1 * (2.0 + 0.53 * k as f64).cos();
    }

    let conv = a.conv.into();
    let source = GatherSource::MaskedLatent;
    let (_, grads) = grad_params(&bundle, &params, &blocks, &target, conv, source)?;
    let mut max_rel = 0.0f64;
    for coord in all_coords(&params) {
        let fd = finite_difference(&bundle, &params, &blocks, &target, conv, source, coord, a.eps)?;
        let an = grad_component(&grads, coord);
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }

    println!("max_rel_error");
    println!("{max_rel}");
    if max_rel <= a.tol {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed: {max_rel} > {}", a.tol);
        Ok(ExitCode::FAILURE)
    }
}

fn cmd_maskstats(a: MaskstatsArgs) -> Result<()> {
    let mut paths: Vec<PathBuf> = fs::read_dir(&a.dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "yt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!(
            "no .yt masks found in {}",
            a.dir.display()
        )));
    }
    let masks = paths
        .iter()
        .map(|p| load_u8(p))
        .collect::<Result<Vec<_>>>()?;
    let stats = mask_ratio_stats(&masks)?;

    let mut csv = String::from("bin_start,bin_end,count\n");
    for (k, count) in stats.histogram.iter().enumerate() {
        csv.push_str(&format!(
            "{:.2},{:.2},{count}\n",
            k as f64 * 0.05,
            (k + 1) as f64 * 0.05
        ));
    }
    fs::write(&a.csv, csv)?;

    println!("masks,p_below_0.2");
    println!("{},{}", stats.ratios.len(), stats.below_20);
    Ok(())
}
