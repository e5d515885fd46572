//! The `xq` command-line tool.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use image::{ImageError, RgbImage};
use log::{info, warn};
use xq_core::product::GridQuantizer;
use xq_core::training::{composite_loss, fit_codebooks, FitOptions, LossWeights};
use xq_core::{
    hier_decode, hier_encode, pq_split, BlendFilter, Codebook, Dropout, FeatureGrid, HierarchySpec, LeafKind,
    QuantError, ResidualConfig, Rng, ScaleSchedule, Variant,
};

use crate::error::FormatError;
use crate::format::codebook::{read_codebook, write_codebook};
use crate::format::stream::{read_stream, read_stream_checked, stream_bits, write_stream, CodeStream};
use crate::fsutil::{write_all_atomic, write_atomic};
use crate::patch::{grid_to_image, image_to_grid, psnr, PatchConfig};
use crate::samples::{encode_header, encode_samples, header_path, read_samples};

#[derive(Debug, Parser)]
#[command(name = "xq", version, about = "Hierarchical vector quantization toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn one codebook per product branch.
    Fit(FitArgs),
    /// Quantize an image or feature grid into a code stream.
    Encode(EncodeArgs),
    /// Reconstruct an image or feature grid from a code stream.
    Decode(DecodeArgs),
    /// Report token, bit and code usage statistics of a code stream.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct MultiscaleArgs {
    /// Comma-separated side of each residual step (default: geometric up to the grid side).
    #[arg(long, value_delimiter = ',')]
    pub schedule: Option<Vec<usize>>,
    /// Weight of the 3x3 box smoothing applied to upsampled multi-scale steps.
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// PNG image, directory of PNG images, or raw sample file with a `.hdr` sidecar.
    #[arg(long)]
    pub input: PathBuf,
    /// Expected channel count of the input vectors.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Variant name, e.g. XQ-MS-V-R4.
    #[arg(long, default_value = "XQ-V")]
    pub variant: String,
    /// Codewords per branch codebook.
    #[arg(long, default_value_t = 256)]
    pub codebook_size: usize,
    /// Lloyd iterations per clustering.
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Residual refinement rounds for multi-step variants.
    #[arg(long, default_value_t = 2)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Patch side used to cut images into vectors.
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    #[command(flatten)]
    pub multiscale: MultiscaleArgs,
    /// Output directory for branch-<b>.xqcb files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false, args = ["image", "features"])]
pub struct EncodeArgs {
    /// PNG image to encode.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Raw sample file holding a square grid of K*K vectors in row-major order.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub variant: String,
    /// Directory with branch-<b>.xqcb codebooks (VQ variants).
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    #[command(flatten)]
    pub multiscale: MultiscaleArgs,
    /// Apply quantizer dropout as during training.
    #[arg(long)]
    pub training: bool,
    /// Probability of truncating the residual steps in training mode.
    #[arg(long, default_value_t = 0.1)]
    pub dropout_ratio: f64,
    /// Minimum number of kept residual steps in training mode (default: min(3, N)).
    #[arg(long)]
    pub dropout_start: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Loss weights as name=value pairs, e.g. recon=1,vq=1,aux=0.1.
    #[arg(long)]
    pub loss_weights: Option<String>,
    /// Output code stream.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub stream: PathBuf,
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
    /// Output path; `.png` writes an image, anything else raw samples.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub patch: usize,
    /// Channel count, needed for LFQ/BSQ streams decoded to raw samples.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    /// Original image; prints the PSNR of the reconstruction.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub stream: PathBuf,
    /// Codebook directory; enables bit and utilization figures for VQ streams.
    #[arg(long)]
    pub codebooks: Option<PathBuf>,
    /// Channel count; enables bit and utilization figures for LFQ/BSQ streams.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Write the full code histograms as branch,step,code,count rows.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<QuantError> for CliError {
    fn from(e: QuantError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn in_file(path: &Path) -> impl Fn(FormatError) -> CliError + '_ {
    move |e| match e {
        FormatError::Io(e) => CliError::Io(format!("{}: {e}", path.display())),
        e => CliError::Data(format!("{}: {e}", path.display())),
    }
}

fn io_at(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

type CliResult<T> = Result<T, CliError>;

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XQ_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Executes `cli`, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    let report = match cli.command {
        Command::Fit(args) => cmd_fit(&args)?,
        Command::Encode(args) => cmd_encode(&args)?,
        Command::Decode(args) => cmd_decode(&args)?,
        Command::Stats(args) => cmd_stats(&args)?,
    };
    out.write_all(report.as_bytes())?;
    Ok(())
}

fn parse_variant(name: &str) -> CliResult<Variant> {
    Variant::parse(name).map_err(|e| CliError::Usage(format!("variant {name:?}: {e}")))
}

fn patch_config(patch: usize) -> CliResult<PatchConfig> {
    PatchConfig::new(patch).map_err(|e| CliError::Usage(e.to_string()))
}

fn blend_filter(gamma: f64) -> CliResult<BlendFilter> {
    BlendFilter::box3(gamma).map_err(|e| CliError::Usage(format!("--gamma: {e}")))
}

fn load_image(path: &Path) -> CliResult<RgbImage> {
    image::open(path).map(|img| img.to_rgb8()).map_err(|e| match e {
        ImageError::IoError(e) => CliError::Io(format!("{}: {e}", path.display())),
        e => CliError::Data(format!("{}: {e}", path.display())),
    })
}

fn encode_png(img: &RgbImage) -> CliResult<Vec<u8>> {
    let mut bytes = Vec::new();
    img.write_to(&mut io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| CliError::Data(format!("PNG encoding failed: {e}")))?;
    Ok(bytes)
}

fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn codebook_path(dir: &Path, branch: usize) -> PathBuf {
    dir.join(format!("branch-{branch}.xqcb"))
}

fn load_codebooks(dir: Option<&Path>, variant: &Variant) -> CliResult<Vec<Codebook>> {
    match (variant.leaf, dir) {
        (LeafKind::Vq, None) => Err(CliError::Usage(format!("{variant} needs --codebooks"))),
        (LeafKind::Vq, Some(dir)) => (0..variant.branches)
            .map(|b| {
                let path = codebook_path(dir, b);
                let bytes = std::fs::read(&path).map_err(io_at(&path))?;
                read_codebook(&bytes).map_err(in_file(&path))
            })
            .collect(),
        (kind, Some(_)) => {
            warn!("{} leaves have no codebook; ignoring --codebooks", kind.name());
            Ok(Vec::new())
        }
        (_, None) => Ok(Vec::new()),
    }
}

fn build_spec(variant: Variant, dim: usize, side: usize, ms: &MultiscaleArgs) -> CliResult<HierarchySpec> {
    let mut spec = HierarchySpec::new(variant, dim, side)?;
    if let Some(sides) = &ms.schedule {
        let schedule = ScaleSchedule::new(sides.clone()).map_err(|e| CliError::Usage(format!("--schedule: {e}")))?;
        spec = spec.with_schedule(schedule).map_err(|e| CliError::Usage(format!("--schedule: {e}")))?;
    }
    Ok(spec.with_blend(blend_filter(ms.gamma)?))
}

/// Square grid from a raw sample file of `K*K` vectors.
fn features_grid(path: &Path) -> CliResult<FeatureGrid> {
    let samples = read_samples(path).map_err(in_file(path))?;
    let count = samples.count();
    let side = (count as f64).sqrt().round() as usize;
    if side * side != count || count == 0 {
        return Err(CliError::Data(format!("{}: {count} vectors do not form a square grid", path.display())));
    }
    Ok(FeatureGrid::new(side, side, samples.dim, samples.data)?)
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

// fit

/// Training inputs: image grids (when the input is PNG) and the flat vectors.
struct FitInput {
    grids: Vec<FeatureGrid>,
    dim: usize,
}

fn fit_input(args: &FitArgs) -> CliResult<FitInput> {
    let path = &args.input;
    let images: Vec<PathBuf> = if path.is_dir() {
        let mut found = Vec::new();
        for entry in std::fs::read_dir(path).map_err(io_at(path))? {
            let p = entry.map_err(io_at(path))?.path();
            if is_png(&p) {
                found.push(p);
            }
        }
        found.sort();
        if found.is_empty() {
            return Err(CliError::Data(format!("{}: no PNG images found", path.display())));
        }
        found
    } else if is_png(path) {
        vec![path.clone()]
    } else {
        Vec::new()
    };

    let input = if images.is_empty() {
        let samples = read_samples(path).map_err(in_file(path))?;
        let (count, dim) = (samples.count(), samples.dim);
        FitInput { grids: vec![FeatureGrid::new(1, count, dim, samples.data)?], dim }
    } else {
        let cfg = patch_config(args.patch)?;
        let grids = images
            .iter()
            .map(|p| {
                let img = load_image(p)?;
                image_to_grid(&img, &cfg).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
            })
            .collect::<CliResult<Vec<_>>>()?;
        FitInput { grids, dim: cfg.dim() }
    };
    if let Some(dim) = args.dim {
        if dim != input.dim {
            return Err(CliError::Data(format!("--dim {dim} does not match the input dimension {}", input.dim)));
        }
    }
    Ok(input)
}

fn cmd_fit(args: &FitArgs) -> CliResult<String> {
    let variant = parse_variant(&args.variant)?;
    let input = fit_input(args)?;
    let dim = input.dim;

    let mut rng = Rng::new(args.seed);
    let all: Vec<&[f64]> = input.grids.iter().flat_map(|g| g.vectors()).collect();
    let mut order: Vec<usize> = (0..all.len()).collect();
    rng.shuffle(&mut order);
    let holdout_len = all.len() / 10;
    let (holdout_idx, train_idx) = order.split_at(holdout_len);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();
    let mut holdout_idx = holdout_idx.to_vec();
    holdout_idx.sort_unstable();
    let gather = |idx: &[usize]| -> CliResult<FeatureGrid> {
        let data = idx.iter().flat_map(|&i| all[i].iter().copied()).collect();
        Ok(FeatureGrid::new(1, idx.len(), dim, data)?)
    };

    if variant.leaf == LeafKind::Vq && args.codebook_size > train_idx.len() {
        return Err(CliError::Data(format!(
            "codebook size {} exceeds the {} training samples ({} samples, {} held out)",
            args.codebook_size,
            train_idx.len(),
            all.len(),
            holdout_len
        )));
    }

    // Multi-scale fitting needs the spatial layout of whole images; every
    // other variant trains on the flat training split.
    let (spec, train_grids) = if variant.multiscale {
        let side = match input.grids.first().and_then(FeatureGrid::side) {
            Some(side) if input.grids.iter().all(|g| g.side() == Some(side)) && input.grids[0].height() > 1 => side,
            _ => return Err(CliError::Data("multi-scale fitting needs square images of equal size".into())),
        };
        (build_spec(variant, dim, side, &args.multiscale)?, input.grids.clone())
    } else {
        (build_spec(variant, dim, 1, &args.multiscale)?, vec![gather(&train_idx)?])
    };
    info!("fitting {variant} on {} training vectors of dim {dim}", train_idx.len());

    let opts = FitOptions { codebook_size: args.codebook_size, iters: args.iters, refine_rounds: args.rounds };
    let fit = fit_codebooks(&train_grids, &spec, &opts, &mut rng)?;

    let mut report = String::new();
    writeln!(report, "variant={variant}").unwrap();
    writeln!(report, "samples={}", all.len()).unwrap();
    writeln!(report, "train_samples={}", train_idx.len()).unwrap();
    writeln!(report, "holdout_samples={holdout_len}").unwrap();
    for (b, obj) in fit.objectives.iter().enumerate() {
        writeln!(report, "branch.{b}.objective={}", fmt_f64(*obj.last().expect("nonempty trace"))).unwrap();
    }
    if let Some(obj) = fit.final_objective() {
        writeln!(report, "objective={}", fmt_f64(obj)).unwrap();
    }

    if holdout_len > 0 {
        let holdout = gather(&holdout_idx)?;
        let util = holdout_utilization(&holdout, &spec, &fit.codebooks)?;
        for (b, u) in util.iter().enumerate() {
            writeln!(report, "branch.{b}.utilization={}", fmt_f64(*u)).unwrap();
        }
        let mean = util.iter().sum::<f64>() / util.len() as f64;
        writeln!(report, "utilization={}", fmt_f64(mean)).unwrap();
    }

    if variant.leaf == LeafKind::Vq {
        std::fs::create_dir_all(&args.out).map_err(io_at(&args.out))?;
        let files: Vec<(PathBuf, Vec<u8>)> =
            fit.codebooks.iter().enumerate().map(|(b, cb)| (codebook_path(&args.out, b), write_codebook(cb))).collect();
        write_all_atomic(&files).map_err(io_at(&args.out))?;
        writeln!(report, "codebooks={}", files.len()).unwrap();
    } else {
        writeln!(report, "codebooks=0").unwrap();
    }
    Ok(report)
}

/// Fraction of each branch's code space hit when the held-out vectors pass
/// through the full-resolution residual chain.
fn holdout_utilization(holdout: &FeatureGrid, spec: &HierarchySpec, codebooks: &[Codebook]) -> CliResult<Vec<f64>> {
    let leaves = spec.leaves(codebooks)?;
    let parts = pq_split(holdout, &spec.product())?;
    let branch_dim = spec.branch_dim();
    parts
        .iter()
        .zip(&leaves)
        .map(|(part, leaf)| {
            let out = ResidualConfig::new(spec.variant.steps, *leaf)?.quantize(part)?;
            let mut hist = BTreeMap::new();
            for grid in &out.codes {
                for &c in grid.codes() {
                    *hist.entry(c).or_insert(0u64) += 1;
                }
            }
            Ok(code_space_fraction(hist.len(), leaf.code_limit(branch_dim)))
        })
        .collect()
}

fn code_space_fraction(used: usize, limit: u64) -> f64 {
    used as f64 / limit as f64
}

// encode

fn cmd_encode(args: &EncodeArgs) -> CliResult<String> {
    let variant = parse_variant(&args.variant)?;
    let weights = match &args.loss_weights {
        None => LossWeights::default(),
        Some(text) => {
            let (weights, ignored) =
                LossWeights::parse(text).map_err(|e| CliError::Usage(format!("--loss-weights: {e}")))?;
            for name in ignored {
                warn!("loss weight {name:?} has no effect without a neural decoder; ignored");
            }
            weights
        }
    };

    let (grid, image) = match (&args.image, &args.features) {
        (Some(path), None) => {
            let img = load_image(path)?;
            let cfg = patch_config(args.patch)?;
            let grid = image_to_grid(&img, &cfg).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            (grid, Some((img, cfg)))
        }
        (None, Some(path)) => (features_grid(path)?, None),
        _ => return Err(CliError::Usage("exactly one of --image and --features is required".into())),
    };
    let side = grid.side().ok_or_else(|| {
        CliError::Data(format!("input grid is {}x{}; only square grids can be encoded", grid.height(), grid.width()))
    })?;

    let codebooks = load_codebooks(args.codebooks.as_deref(), &variant)?;
    let mut spec = build_spec(variant, grid.dim(), side, &args.multiscale)?;
    if args.training {
        let default = Dropout::default_for(variant.steps);
        let dropout = Dropout { ratio: args.dropout_ratio, start: args.dropout_start.unwrap_or(default.start) };
        spec = spec.with_dropout(dropout).map_err(|e| CliError::Usage(format!("dropout: {e}")))?;
    }
    for (b, cb) in codebooks.iter().enumerate() {
        if cb.dim() != spec.branch_dim() {
            return Err(CliError::Data(format!(
                "codebook {b} has dim {} but {variant} on {}-channel input needs {}",
                cb.dim(),
                spec.dim,
                spec.branch_dim()
            )));
        }
    }

    let mut rng = Rng::new(args.seed);
    let outcome = hier_encode(&grid, &spec, &codebooks, args.training, &mut rng)?;
    let stream = CodeStream::from_outcome(&spec, &outcome).map_err(in_file(&args.out))?;
    let bytes = write_stream(&stream);

    let elements = grid.data().len() as f64;
    let mut report = String::new();
    writeln!(report, "variant={variant}").unwrap();
    writeln!(report, "side={side}").unwrap();
    writeln!(report, "schedule={}", join(spec.schedule.sides())).unwrap();
    writeln!(report, "active_steps={}", outcome.active_steps()).unwrap();
    writeln!(report, "tokens={}", stream.tokens()).unwrap();
    writeln!(report, "bits={}", outcome.total_bits).unwrap();
    for (i, e) in outcome.step_sq_errors.iter().enumerate() {
        writeln!(report, "step.{}.sq_error={}", i + 1, fmt_f64(*e)).unwrap();
        writeln!(report, "step.{}.mse={}", i + 1, fmt_f64(e / elements)).unwrap();
    }
    let l = outcome.losses;
    writeln!(report, "loss.recon={}", fmt_f64(l.recon)).unwrap();
    writeln!(report, "loss.vq={}", fmt_f64(l.vq)).unwrap();
    writeln!(report, "loss.aux={}", fmt_f64(l.aux)).unwrap();
    writeln!(report, "loss.total={}", fmt_f64(composite_loss(l.recon, l.vq, l.aux, &weights))).unwrap();
    if let Some((img, cfg)) = image {
        let recon = grid_to_image(&outcome.quantized, &cfg)?;
        writeln!(report, "psnr={}", fmt_f64(psnr(&img, &recon)?)).unwrap();
    }

    write_atomic(&args.out, &bytes).map_err(io_at(&args.out))?;
    Ok(report)
}

fn join(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

// decode

fn code_limits(variant: &Variant, codebooks: &[Codebook], branch_dim: Option<usize>) -> Option<Vec<u64>> {
    match variant.leaf {
        LeafKind::Vq => Some(codebooks.iter().map(|cb| cb.size() as u64).collect()),
        _ => branch_dim.map(|d| vec![1u64 << d; variant.branches]),
    }
}

fn stream_dim(variant: &Variant, codebooks: &[Codebook], dim: Option<usize>) -> CliResult<Option<usize>> {
    let from_codebooks = codebooks.first().map(|cb| cb.dim() * variant.branches);
    match (from_codebooks, dim) {
        (Some(a), Some(b)) if a != b => Err(CliError::Data(format!(
            "--dim {b} does not match the codebooks ({} branches of dim {})",
            variant.branches,
            a / variant.branches
        ))),
        (a, b) => Ok(a.or(b)),
    }
}

fn read_stream_file(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(io_at(path))
}

fn cmd_decode(args: &DecodeArgs) -> CliResult<String> {
    let bytes = read_stream_file(&args.stream)?;
    let header = read_stream(&bytes).map_err(in_file(&args.stream))?;
    let variant = *header.variant();
    let codebooks = load_codebooks(args.codebooks.as_deref(), &variant)?;
    let png = is_png(&args.out);
    let cfg = patch_config(args.patch)?;
    let dim = match stream_dim(&variant, &codebooks, args.dim)? {
        Some(d) => d,
        None if png => cfg.dim(),
        None => return Err(CliError::Usage(format!("{variant} streams need --dim to decode raw samples"))),
    };
    if png && dim != cfg.dim() {
        return Err(CliError::Data(format!(
            "stream has {dim} channels but {p}x{p} RGB patches need {}",
            cfg.dim(),
            p = cfg.patch
        )));
    }
    if dim % variant.branches != 0 {
        return Err(CliError::Data(format!("dim {dim} does not split into {} branches", variant.branches)));
    }
    let limits = code_limits(&variant, &codebooks, Some(dim / variant.branches)).expect("dim known");
    let stream = read_stream_checked(&bytes, &limits).map_err(in_file(&args.stream))?;
    let spec = stream.spec(dim, blend_filter(args.gamma)?).map_err(in_file(&args.stream))?;
    let grid = hier_decode(stream.codes(), &spec, &codebooks)?;

    let mut report = String::new();
    writeln!(report, "variant={variant}").unwrap();
    writeln!(report, "active_steps={}", stream.active_steps()).unwrap();
    writeln!(report, "tokens={}", stream.tokens()).unwrap();
    if png {
        let img = grid_to_image(&grid, &cfg)?;
        if let Some(reference) = &args.reference {
            let original = load_image(reference)?;
            writeln!(report, "psnr={}", fmt_f64(psnr(&original, &img)?)).unwrap();
        }
        write_atomic(&args.out, &encode_png(&img)?).map_err(io_at(&args.out))?;
    } else {
        if args.reference.is_some() {
            warn!("--reference only applies to PNG output; ignored");
        }
        let files = vec![
            (header_path(&args.out), encode_header(grid.positions(), dim).into_bytes()),
            (args.out.clone(), encode_samples(grid.data())),
        ];
        write_all_atomic(&files).map_err(io_at(&args.out))?;
    }
    Ok(report)
}

// stats

fn cmd_stats(args: &StatsArgs) -> CliResult<String> {
    let bytes = read_stream_file(&args.stream)?;
    let header = read_stream(&bytes).map_err(in_file(&args.stream))?;
    let variant = *header.variant();
    let codebooks = match (&args.codebooks, variant.leaf) {
        (Some(_), LeafKind::Vq) => load_codebooks(args.codebooks.as_deref(), &variant)?,
        _ => Vec::new(),
    };
    let dim = stream_dim(&variant, &codebooks, args.dim)?;
    if let Some(d) = dim {
        if d % variant.branches != 0 {
            return Err(CliError::Data(format!("dim {d} does not split into {} branches", variant.branches)));
        }
    }
    let branch_dim = dim.map(|d| d / variant.branches);
    if let (LeafKind::Lfq | LeafKind::Bsq, Some(d)) = (variant.leaf, branch_dim) {
        if d > xq_core::leaf::MAX_BINARY_DIM {
            return Err(CliError::Data(format!("binary leaves support at most 32 channels per branch, got {d}")));
        }
    }
    let limits = if variant.leaf == LeafKind::Vq && codebooks.is_empty() {
        None
    } else {
        code_limits(&variant, &codebooks, branch_dim)
    };
    let stream = match &limits {
        Some(l) => read_stream_checked(&bytes, l),
        None => Ok(header),
    }
    .map_err(in_file(&args.stream))?;

    let mut report = String::new();
    writeln!(report, "variant={variant}").unwrap();
    writeln!(report, "side={}", stream.side()).unwrap();
    writeln!(report, "schedule={}", join(stream.schedule().sides())).unwrap();
    writeln!(report, "branches={}", variant.branches).unwrap();
    writeln!(report, "steps={}", variant.steps).unwrap();
    writeln!(report, "active_steps={}", stream.active_steps()).unwrap();
    writeln!(report, "tokens={}", stream.tokens()).unwrap();
    if let Some(limits) = &limits {
        let widths: Vec<u32> = limits.iter().map(|&l| ceil_log2(l)).collect();
        writeln!(report, "bits={}", stream_bits(&stream, &widths)).unwrap();
    }

    let mut csv = String::from("branch,step,code,count\n");
    let mut used_per_branch = Vec::new();
    for (b, steps) in stream.codes().branches().iter().enumerate() {
        let mut branch_codes = BTreeMap::new();
        for (i, grid) in steps.iter().enumerate() {
            let mut hist: BTreeMap<u32, u64> = BTreeMap::new();
            for &c in grid.codes() {
                *hist.entry(c).or_insert(0) += 1;
                *branch_codes.entry(c).or_insert(0u64) += 1;
            }
            for (code, count) in &hist {
                writeln!(csv, "{b},{},{code},{count}", i + 1).unwrap();
            }
            let mut top: Vec<(u32, u64)> = hist.iter().map(|(&c, &n)| (c, n)).collect();
            top.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
            let top: Vec<String> = top.iter().take(5).map(|(c, n)| format!("{c}:{n}")).collect();
            writeln!(report, "step.{}.branch.{b}.distinct={}", i + 1, hist.len()).unwrap();
            writeln!(report, "step.{}.branch.{b}.top={}", i + 1, top.join(",")).unwrap();
        }
        used_per_branch.push(branch_codes.len());
    }
    if let Some(limits) = &limits {
        let util: Vec<f64> =
            used_per_branch.iter().zip(limits).map(|(&used, &limit)| code_space_fraction(used, limit)).collect();
        for (b, u) in util.iter().enumerate() {
            writeln!(report, "branch.{b}.utilization={}", fmt_f64(*u)).unwrap();
        }
        writeln!(report, "utilization={}", fmt_f64(util.iter().sum::<f64>() / util.len() as f64)).unwrap();
    }
    if let Some(path) = &args.csv {
        write_atomic(path, csv.as_bytes()).map_err(io_at(path))?;
    }
    Ok(report)
}

fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage(String::new()).exit_code(), 2);
        assert_eq!(CliError::Data(String::new()).exit_code(), 3);
        assert_eq!(CliError::Io(String::new()).exit_code(), 4);
    }

    #[test]
    fn code_widths() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(256), 8);
        assert_eq!(ceil_log2(257), 9);
        assert_eq!(ceil_log2(1 << 32), 32);
    }

    #[test]
    fn help_lists_every_flag() {
        use clap::CommandFactory;
        let mut cmd = Cli::command();
        cmd.build();
        for sub in cmd.get_subcommands_mut() {
            let help = sub.render_long_help().to_string();
            for arg in sub.get_arguments() {
                if let Some(long) = arg.get_long() {
                    assert!(help.contains(&format!("--{long}")), "{} --{long}", sub.get_name());
                }
            }
        }
    }

    #[test]
    fn unknown_flags_rejected() {
        let err = Cli::try_parse_from(["xq", "stats", "--stream", "a", "--bogus"]).unwrap_err();
        assert!(err.use_stderr());
    }
}
