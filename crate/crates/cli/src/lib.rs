//! The `lumactl` command line.
//!
//! Exit status is 0 on success, 2 on a usage error and 1 when the command
//! itself fails.

use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lumactl_core::config::Config;
use lumactl_core::diffusion::{train_toy_denoiser, AuxWeights, ToyConfig};
use lumactl_core::image::{load_image, save_image, ImageFormat};
use lumactl_core::mask::SeedPoint;
use lumactl_core::pipeline::{
    enhance, parse_instruction, synthetic_training_set, EnhanceOptions, EnhanceRequest, MaskSource, Mode,
    PipelineError,
};
use lumactl_core::prompt::{Scope, VocabularyTable};
use lumactl_core::quality::{angular_color_loss, psnr, ssim, SsimParams};
use lumactl_core::relight::make_training_pair;
use lumactl_core::retinex::decompose;
use lumactl_service::{BusyPolicy, ServiceConfig};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "lumactl", version, about = "Prompt-driven low-light relighting")]
struct Cli {
    /// TOML config; defaults to $LUMACTL_CONFIG, then ./lumactl.toml.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply a lighting instruction to an image.
    Enhance(EnhanceArgs),
    /// Split an image into illumination and reflection.
    Decompose(DecomposeArgs),
    /// Compare two images: PSNR, SSIM and angular color loss.
    Metrics(MetricsArgs),
    /// Write the ten-level supervision targets for a low/high pair.
    MakePairs(MakePairsArgs),
    /// Train the toy conditioned denoiser on synthetic scenes.
    TrainToy(TrainToyArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Deterministic,
    Diffusion,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long)]
    output: PathBuf,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "deterministic")]
    mode: ModeArg,
    /// Pixel `x,y` that seeds the region grower.
    #[arg(long)]
    seed_point: Option<SeedPoint>,
    /// `full`, or a mask image path.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replace the parsed magnitude, in [0, 1].
    #[arg(long)]
    ratio: Option<f64>,
    /// Adjustment-map smoothing; overrides tbc.sigma.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    feather: Option<f64>,
    #[arg(long)]
    color_tol: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// Use a uniform map equal to the ratio.
    #[arg(long)]
    no_tbc: bool,
    /// Condition the denoiser on the raw maps instead of the fused features.
    #[arg(long)]
    no_acc: bool,
    #[arg(long)]
    max_side: Option<usize>,
    /// Denoiser checkpoint stem from `train-toy`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    train_steps: Option<usize>,
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    illumination: PathBuf,
    #[arg(long)]
    reflection: PathBuf,
    /// Overrides retinex.lambda.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Debug, Args)]
struct MakePairsArgs {
    #[arg(long)]
    low: PathBuf,
    #[arg(long)]
    high: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value = "pair")]
    stem: String,
    /// Comma-separated subset of 1..=10.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u32).range(1..=10))]
    levels: Vec<u32>,
}

#[derive(Debug, Args)]
struct TrainToyArgs {
    /// Checkpoint stem; writes `<stem>.bin` and `<stem>.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    count: usize,
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    /// Add the color and SSIM auxiliary terms.
    #[arg(long)]
    aux: bool,
    /// CSV of `step,loss`.
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long, default_value = "lumactl-data")]
    data_dir: PathBuf,
    /// Edits arriving for a busy session: `queue` or `reject`.
    #[arg(long, default_value = "queue")]
    policy: BusyPolicy,
    /// Allowed browser origin; repeat for several. Any origin when absent.
    #[arg(long)]
    cors_origin: Vec<String>,
    #[arg(long, default_value_t = 16 << 20)]
    max_upload_bytes: usize,
    #[arg(long, default_value_t = 4096)]
    max_image_side: usize,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn base_options(config: Option<&Path>) -> Result<EnhanceOptions> {
    let cfg = Config::discover(config).context("loading config")?;
    let mut o = EnhanceOptions::default();
    cfg.apply(&mut o).context("applying config")?;
    Ok(o)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Enhance(a) => run_enhance(a, config),
        Command::Decompose(a) => Ok(run_decompose(a, config)?),
        Command::Metrics(a) => Ok(run_metrics(a)?),
        Command::MakePairs(a) => Ok(run_make_pairs(a, config)?),
        Command::TrainToy(a) => Ok(run_train_toy(a, config)?),
        Command::Serve(a) => Ok(run_serve(a, config)?),
    }
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_image(path: &Path) -> Result<lumactl_core::image::RgbImage> {
    load_image(path).with_context(|| format!("reading {}", path.display()))
}

fn stage_error(e: PipelineError) -> anyhow::Error {
    anyhow::anyhow!("{} stage failed: {e}", e.stage())
}

fn run_enhance(a: EnhanceArgs, config: Option<&Path>) -> Result<(), Failure> {
    let mut o = base_options(config)?;
    o.seed = a.seed;
    o.ratio_override = a.ratio;
    o.no_tbc = a.no_tbc;
    o.no_acc = a.no_acc;
    o.checkpoint = a.checkpoint;
    if let Some(v) = a.sigma {
        o.smooth_sigma = v;
    }
    if let Some(v) = a.feather {
        o.feather_sigma = v;
    }
    if let Some(v) = a.color_tol {
        o.color_tol = v;
    }
    if let Some(v) = a.eta {
        o.eta = v;
    }
    if let Some(v) = a.max_side {
        o.max_side = v;
    }
    if let Some(v) = a.train_steps {
        o.train_steps = v;
    }
    if let Some(p) = &a.vocab {
        o.vocab = VocabularyTable::load(p).with_context(|| format!("reading {}", p.display()))?;
    }

    let mask_source = match (a.mask.as_deref(), a.seed_point) {
        (Some("full"), _) => MaskSource::Full,
        (Some(path), _) => MaskSource::File(PathBuf::from(path)),
        (None, Some(p)) => MaskSource::Heuristic(p),
        (None, None) => {
            let ins = parse_instruction(&a.prompt, &o).map_err(stage_error)?;
            if ins.scope != Scope::Global {
                return Err(Failure::Usage("region and background prompts need --seed-point or --mask".into()));
            }
            MaskSource::Full
        }
    };
    let mode = match a.mode {
        ModeArg::Deterministic => Mode::Deterministic,
        ModeArg::Diffusion => Mode::Diffusion,
    };
    let image = read_image(&a.input)?;
    let req = EnhanceRequest { image, prompt: a.prompt, mode, mask_source, options: o };
    let (out, report) = enhance(&req).map_err(stage_error)?;
    save_image(&out, &a.output, ImageFormat::from_path(&a.output))
        .with_context(|| format!("writing {}", a.output.display()))?;
    if let Some(p) = &a.report {
        write_json(p, &serde_json::to_value(&report).map_err(anyhow::Error::from)?)?;
    }
    Ok(())
}

fn run_decompose(a: DecomposeArgs, config: Option<&Path>) -> Result<()> {
    let mut params = base_options(config)?.retinex;
    if let Some(l) = a.lambda {
        params.lambda = l;
    }
    let img = read_image(&a.input)?;
    let pair = decompose(&img, &params)?;
    save_image(&pair.illumination, &a.illumination, ImageFormat::from_path(&a.illumination))
        .with_context(|| format!("writing {}", a.illumination.display()))?;
    save_image(&pair.reflection, &a.reflection, ImageFormat::from_path(&a.reflection))
        .with_context(|| format!("writing {}", a.reflection.display()))?;
    Ok(())
}

fn run_metrics(a: MetricsArgs) -> Result<()> {
    let (x, y) = (read_image(&a.a)?, read_image(&a.b)?);
    let (h, w) = x.dims();
    let out = json!({
        "psnr_db": psnr(&x, &y, 1.0)?,
        "ssim": ssim(&x, &y, &SsimParams::default().fit_to(h, w))?,
        "color_loss_rad": angular_color_loss(&x, &y)?,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_make_pairs(a: MakePairsArgs, config: Option<&Path>) -> Result<()> {
    let params = base_options(config)?.retinex;
    let (low, high) = (read_image(&a.low)?, read_image(&a.high)?);
    let levels = if a.levels.is_empty() { (1..=10).collect() } else { a.levels };
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut entries = Vec::new();
    for level in levels {
        let (_, target) = make_training_pair(&low, &high, level, &params)?;
        let name = format!("{}_L{level}.png", a.stem);
        save_image(&target, a.out_dir.join(&name), ImageFormat::Png)?;
        entries.push(json!({ "level": level, "target": name }));
    }
    let manifest = json!({
        "input": a.low,
        "high": a.high,
        "retinex": params,
        "pairs": entries,
    });
    write_json(&a.out_dir.join(format!("{}_manifest.json", a.stem)), &manifest)
}

fn run_train_toy(a: TrainToyArgs, config: Option<&Path>) -> Result<()> {
    if a.count == 0 || a.size == 0 {
        bail!("--count and --size must be positive");
    }
    let o = base_options(config)?;
    let data = synthetic_training_set(a.count, a.size, a.seed, &o)?;
    let cfg = ToyConfig {
        hidden: a.hidden,
        schedule: o.schedule,
        steps: a.steps,
        batch: a.batch,
        learning_rate: a.lr,
        seed: a.seed,
        aux: if a.aux { AuxWeights::default() } else { AuxWeights::ZERO },
        ..ToyConfig::default()
    };
    let report = train_toy_denoiser(&data, &cfg)?;
    report.denoiser.save(&a.out, a.seed)?;
    if let Some(p) = &a.loss_csv {
        let mut f = fs::File::create(p).with_context(|| format!("writing {}", p.display()))?;
        report.write_csv(&mut f)?;
    }
    let summary = json!({
        "checkpoint": a.out,
        "steps": a.steps,
        "parameters": report.denoiser.parameter_count(),
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn run_serve(a: ServeArgs, config: Option<&Path>) -> Result<()> {
    let mut options = base_options(config)?;
    options.checkpoint = a.checkpoint;
    let cfg = ServiceConfig {
        busy_policy: a.policy,
        cors_origins: a.cors_origin,
        max_upload_bytes: a.max_upload_bytes,
        max_image_side: a.max_image_side,
        options,
        ..ServiceConfig::new(a.data_dir)
    };
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    eprintln!("listening on http://{addr}");
    rt.block_on(lumactl_service::serve(cfg, addr))?;
    Ok(())
}
