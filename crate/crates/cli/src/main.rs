//! `sra`: command line front end for sra-core.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sra_core::dsnet::{load_weights, save_weights, DsNetConfig, ModelWeights};
use sra_core::image::yuv::{count_frames, read_yuv, write_yuv, YuvGeometry};
use sra_core::image::{frame_plane, ChromaFormat, Frame, Tensor3};
use sra_core::metrics::msssim::max_scales;
use sra_core::metrics::{bd_rate, ms_ssim, psnr_luma_sequence, RdCurve};
use sra_core::pipeline::{compare_scenarios, dsnet_downsample_frame, run_scenario, ScenarioConfig, VideoSpec};
use sra_core::resample::{resample_frame, Direction, FilterKind};
use sra_core::tiling::{extract_training_blocks, BLOCK_SIZE};
use sra_core::training::{synthetic_blocks, TrainConfig, Trainer};

#[derive(Parser, Debug)]
#[command(name = "sra", version, about = "Spatial resolution adaptation toolkit")]
struct Cli {
    /// TOML configuration (training or scenario, depending on the command).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Resample a raw YUV sequence by 2 with a fixed filter.
    Resample(ResampleArgs),
    /// Down-sample a raw YUV sequence by 2 with DSNet.
    Infer(InferArgs),
    /// Train DSNet weights.
    Train(TrainArgs),
    /// Compare two raw YUV sequences.
    Metrics(MetricsArgs),
    /// BD-rate of a test curve against an anchor curve, in percent.
    Bdrate { anchor: PathBuf, test: PathBuf },
    /// Run or compare coding scenarios.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
    /// Create or inspect DSNet weight files.
    #[command(subcommand)]
    Weights(WeightsCommand),
}

#[derive(Args, Debug, Clone)]
struct Geometry {
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    #[arg(long, default_value_t = 10)]
    bit_depth: u8,
    #[arg(long, default_value = "420")]
    format: ChromaFormat,
    /// Frames to read; the whole file when absent.
    #[arg(long)]
    frames: Option<usize>,
}

impl Geometry {
    fn yuv(&self) -> YuvGeometry {
        YuvGeometry::new(self.width, self.height, self.bit_depth, self.format)
    }

    fn read(&self, path: &Path) -> Result<Vec<Frame>> {
        let geom = self.yuv();
        let count = match self.frames {
            Some(n) => n,
            None => count_frames(path, &geom)?,
        };
        if count == 0 {
            bail!("{} holds no whole {}x{} frame", path.display(), self.width, self.height);
        }
        Ok(read_yuv(path, &geom, count)?)
    }
}

#[derive(Args, Debug)]
struct ResampleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    geometry: Geometry,
    #[arg(long, default_value = "down")]
    direction: Direction,
    #[arg(long, default_value = "lanczos3")]
    filter: FilterKind,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    geometry: Geometry,
    #[arg(long)]
    weights: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Model {
    Tiny,
    Full,
}

impl Model {
    fn config(self) -> DsNetConfig {
        match self {
            Model::Tiny => DsNetConfig::tiny(),
            Model::Full => DsNetConfig::default(),
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Where to write the trained weights.
    #[arg(long)]
    output: PathBuf,
    /// Train on this many synthetic textured blocks.
    #[arg(long, conflicts_with = "input")]
    synthetic: Option<usize>,
    /// Raw YUV sequence to sample training blocks from.
    #[arg(long, requires = "width")]
    input: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long, default_value_t = 10)]
    bit_depth: u8,
    #[arg(long, default_value = "420")]
    format: ChromaFormat,
    /// Blocks to sample from `--input`.
    #[arg(long, default_value_t = 256)]
    blocks: usize,
    #[arg(long, value_enum, default_value = "tiny")]
    model: Model,
    /// Overrides the configured number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Save a checkpoint here after every epoch.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint directory.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Metric {
    Psnr,
    Msssim,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(value_enum)]
    metric: Metric,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    geometry: Geometry,
}

#[derive(Subcommand, Debug)]
enum PipelineCommand {
    /// Code a sequence at every QP of a scenario configuration.
    Run {
        /// Run directory for the reports.
        #[arg(long)]
        out: PathBuf,
        /// Source sequence; overrides the `[video]` section of the config.
        #[arg(long, requires = "width")]
        video: Option<PathBuf>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        bit_depth: Option<u8>,
        #[arg(long)]
        format: Option<ChromaFormat>,
        #[arg(long)]
        frames: Option<usize>,
    },
    /// BD-rate and timing ratios of a test run against an anchor run.
    Compare { anchor: PathBuf, test: PathBuf },
}

#[derive(Subcommand, Debug)]
enum WeightsCommand {
    /// Print the configuration and layer table of a weight file.
    Inspect { path: PathBuf },
    /// Write freshly initialized weights.
    Init {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "tiny")]
        model: Model,
        /// All-zero weights instead of a random initialization.
        #[arg(long)]
        zeros: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Resample(a) => resample(a),
        Command::Infer(a) => infer(a),
        Command::Train(a) => train(cli, a),
        Command::Metrics(a) => metrics(a),
        Command::Bdrate { anchor, test } => {
            let a = RdCurve::read(anchor).with_context(|| format!("reading {}", anchor.display()))?;
            let t = RdCurve::read(test).with_context(|| format!("reading {}", test.display()))?;
            println!("bd_rate_percent {}", bd_rate(&a, &t)?);
            Ok(())
        }
        Command::Pipeline(p) => pipeline(cli, p),
        Command::Weights(w) => weights(cli, w),
    }
}

fn resample(a: &ResampleArgs) -> Result<()> {
    let frames = a.geometry.read(&a.input)?;
    let out = frames
        .iter()
        .map(|f| resample_frame(f, a.direction, a.filter))
        .collect::<sra_core::Result<Vec<_>>>()?;
    write_yuv(&a.output, &out)?;
    log::info!("wrote {} frames of {}x{}", out.len(), out[0].width(), out[0].height());
    Ok(())
}

fn infer(a: &InferArgs) -> Result<()> {
    let weights = load_weights(&a.weights).with_context(|| format!("loading {}", a.weights.display()))?;
    let frames = a.geometry.read(&a.input)?;
    let out = frames
        .iter()
        .map(|f| dsnet_downsample_frame(f, &weights))
        .collect::<sra_core::Result<Vec<_>>>()?;
    write_yuv(&a.output, &out)?;
    log::info!("wrote {} frames of {}x{}", out.len(), out[0].width(), out[0].height());
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut trainer = match &a.resume {
        Some(dir) => Trainer::load_checkpoint(dir).with_context(|| format!("resuming from {}", dir.display()))?,
        None => {
            let mut cfg = match &cli.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    toml::from_str::<TrainConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => TrainConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let params = ModelWeights::<f64>::random(a.model.config(), cfg.seed)?;
            Trainer::new(cfg, params)?
        }
    };
    if let Some(e) = a.epochs {
        trainer.config.epochs = e;
    }
    let seed = trainer.config.seed;
    let blocks: Vec<Tensor3<f64>> = match (&a.input, a.synthetic) {
        (Some(input), _) => {
            let geometry = Geometry {
                width: a.width.context("--input needs --width")?,
                height: a.height.context("--input needs --height")?,
                bit_depth: a.bit_depth,
                format: a.format,
                frames: None,
            };
            let frames = geometry.read(input)?;
            extract_training_blocks(&frames, BLOCK_SIZE, a.blocks, seed)?
                .iter()
                .map(|t| t.cast())
                .collect()
        }
        (None, Some(n)) => synthetic_blocks(n, seed),
        (None, None) => bail!("give --input or --synthetic"),
    };
    while trainer.epoch < trainer.config.epochs {
        let stats = trainer.run_epoch(&blocks)?;
        println!(
            "epoch {} lr {:e} loss {:.6} distortion {:.6} rate_mse {:.6} rate_msssim {:.6}",
            stats.epoch,
            stats.learning_rate,
            stats.loss.total,
            stats.loss.distortion,
            stats.loss.rate_mse,
            stats.loss.rate_msssim
        );
        if let Some(dir) = &a.checkpoint {
            trainer.save_checkpoint(dir)?;
        }
    }
    save_weights(&trainer.params.cast(), &a.output)?;
    Ok(())
}

fn metrics(a: &MetricsArgs) -> Result<()> {
    let reference = a.geometry.read(&a.reference)?;
    let test = a.geometry.read(&a.test)?;
    match a.metric {
        Metric::Psnr => println!("psnr {}", psnr_luma_sequence(&reference, &test)?),
        Metric::Msssim => {
            if reference.len() != test.len() {
                bail!("sequences have {} and {} frames", reference.len(), test.len());
            }
            let scales = max_scales(a.geometry.width, a.geometry.height);
            let range = reference[0].max_value() as f64;
            let mut sum = 0.0;
            for (r, t) in reference.iter().zip(&test) {
                sum += ms_ssim(&frame_plane::<f64>(r, 0), &frame_plane::<f64>(t, 0), scales, range)?;
            }
            println!("msssim {}", sum / reference.len() as f64);
        }
    }
    Ok(())
}

fn pipeline(cli: &Cli, p: &PipelineCommand) -> Result<()> {
    match p {
        PipelineCommand::Run {
            out,
            video,
            width,
            height,
            bit_depth,
            format,
            frames,
        } => {
            let path = cli.config.as_ref().context("`pipeline run` needs --config")?;
            let cfg = ScenarioConfig::load(path)?;
            let spec = match video {
                Some(v) => VideoSpec {
                    path: v.clone(),
                    width: width.context("--video needs --width")?,
                    height: height.context("--video needs --height")?,
                    bit_depth: bit_depth.unwrap_or(10),
                    format: format.unwrap_or(ChromaFormat::YCbCr420),
                    frames: *frames,
                },
                None => {
                    let mut v = cfg.video.clone().context("no source: add a [video] section or pass --video")?;
                    if frames.is_some() {
                        v.frames = *frames;
                    }
                    v
                }
            };
            let report = run_scenario(&spec, &cfg, out)?;
            print!("{}", report.rd_curve_text());
            Ok(())
        }
        PipelineCommand::Compare { anchor, test } => {
            print!("{}", compare_scenarios(anchor, test)?);
            Ok(())
        }
    }
}

fn weights(cli: &Cli, w: &WeightsCommand) -> Result<()> {
    match w {
        WeightsCommand::Inspect { path } => {
            let weights = load_weights(path).with_context(|| format!("loading {}", path.display()))?;
            let c = weights.config();
            println!(
                "rdbs {} channels {} rdb_layers {} growth {} lrelu_slope {}",
                c.num_rdb, c.base_channels, c.rdb_layers, c.rdb_growth, c.lrelu_slope
            );
            println!("parameters {}", weights.param_count());
            for spec in c.schema() {
                let l = weights.layer(&spec.name)?;
                let max = l.weights.iter().chain(&l.bias).fold(0.0f32, |m, v| m.max(v.abs()));
                println!(
                    "{} {}x{}x{}x{} stride {} max_abs {max}",
                    spec.name, spec.out_channels, spec.in_channels, spec.kernel, spec.kernel, spec.stride
                );
            }
            Ok(())
        }
        WeightsCommand::Init { output, model, zeros } => {
            let weights = if *zeros {
                ModelWeights::<f32>::zeros(model.config())?
            } else {
                ModelWeights::<f32>::random(model.config(), cli.seed.unwrap_or(0))?
            };
            save_weights(&weights, output)?;
            Ok(())
        }
    }
}
