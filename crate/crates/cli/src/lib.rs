//! Commands behind the `cfpnet` binary. Each writes its report to the given
//! sink and returns a summary, so tests can drive them in-process.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cfpnet_core::gradcheck::{run_suite, CheckResult, DEFAULT_STEP, DEFAULT_TOLERANCE};
use cfpnet_core::io::{
    colorize, encode_pgm, encode_ppm, image_to_tensor, labels_to_gray, load_checkpoint, read_ppm, save_checkpoint,
    write_atomic,
};
use cfpnet_core::network::{factorization_savings, receptive_field_summary, Replacement};
use cfpnet_core::training::{dataset_mean, evaluate, gen_toy_dataset, train, History, TrainConfig};
use cfpnet_core::{Network32, VariantSpec};

/// Training images generated for `train-toy`.
pub const TRAIN_COUNT: usize = 200;
/// Held-out images used for the reported metrics.
pub const HELD_OUT_COUNT: usize = 50;
/// Mixed into the seed so the held-out split never repeats a training image.
pub const HELD_OUT_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Parser, Debug)]
#[command(name = "cfpnet", version, about = "Channel-wise feature pyramid segmentation network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print the layer table, parameter report, receptive fields and
    /// factorization savings of a variant.
    Analyze(VariantArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Train on generated toy scenes and report held-out metrics.
    TrainToy(TrainArgs),
    /// Segment a binary PPM image with a checkpoint.
    Infer(InferArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    V1,
    V2,
    V3,
    Toy,
}

impl Variant {
    pub fn spec(self, classes: usize) -> VariantSpec {
        match self {
            Variant::V1 => VariantSpec::v1(classes),
            Variant::V2 => VariantSpec::v2(classes),
            Variant::V3 => VariantSpec::v3(classes),
            Variant::Toy => VariantSpec::toy(classes),
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct VariantArgs {
    #[arg(long, value_enum, default_value = "v3", conflicts_with = "config")]
    pub variant: Variant,
    #[arg(long, default_value_t = 19)]
    pub classes: usize,
    /// Custom variant as `key=value` lines; its `classes` key wins over
    /// `--classes`.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl VariantArgs {
    pub fn resolve(&self) -> Result<VariantSpec> {
        match &self.config {
            Some(path) => read_config(path),
            None => {
                let spec = self.variant.spec(self.classes);
                spec.validate()?;
                Ok(spec)
            }
        }
    }
}

fn read_config(path: &Path) -> Result<VariantSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    VariantSpec::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Checkpoint path; the loss history goes beside it with a `.csv` extension.
    #[arg(long)]
    pub output: PathBuf,
    /// Custom variant; defaults to the width-reduced toy variant.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct InferArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Class indices as a binary PGM.
    #[arg(long)]
    pub output: PathBuf,
    /// Optional palette rendering as a binary PPM.
    #[arg(long)]
    pub color_output: Option<PathBuf>,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Analyze(args) => analyze(&args.resolve()?, out),
        Command::Gradcheck { seed, tolerance } => gradcheck(seed, tolerance, out).map(|_| ()),
        Command::TrainToy(args) => train_toy(&args, out).map(|_| ()),
        Command::Infer(args) => infer(&args, out).map(|_| ()),
    }
}

pub fn analyze(spec: &VariantSpec, out: &mut dyn Write) -> Result<()> {
    let net = Network32::new(spec.clone(), 0)?;
    writeln!(out, "variant {} ({} classes, {} CFP modules)", spec.name, spec.classes, spec.module_count())?;
    writeln!(out, "descriptor: {}", spec.descriptor())?;
    writeln!(out)?;
    write!(out, "{}", net.layer_table())?;
    writeln!(out)?;
    writeln!(
        out,
        "counting: conv weights and biases; then adding BN gamma/beta and PReLU slopes (trained). \
         BN running statistics and the input mean are buffers and excluded; 1 MB = 10^6 bytes."
    )?;
    write!(out, "{}", net.count_parameters())?;
    writeln!(out)?;
    writeln!(out, "receptive field (input pixels, widest path):")?;
    for stage in receptive_field_summary(spec) {
        writeln!(out, "  {:<14} {:>5}  (stride {})", stage.name, stage.receptive_field, stage.jump)?;
    }
    writeln!(out)?;
    writeln!(out, "factorization savings at equal width:")?;
    let rows = [
        ("5×5 -> two 3×3", 5, Replacement::StackedThreeByThree),
        ("7×7 -> three 3×3", 7, Replacement::StackedThreeByThree),
        ("3×3 -> 3×1 + 1×3", 3, Replacement::AsymmetricPair),
        ("Inception-v2 -> FP channel, uniform width", 7, Replacement::FpChannelUniform),
        ("Inception-v2 -> FP channel, N/4 N/4 N/2", 7, Replacement::FpChannelAllocated),
    ];
    for (label, k, rep) in rows {
        let s = factorization_savings(k, rep)?;
        writeln!(
            out,
            "  {:<42} {:>6} -> {:<6} saves {} = {:.2}%",
            label,
            s.original.to_string(),
            s.replacement.to_string(),
            s.saved,
            s.percent()
        )?;
    }
    writeln!(out, "  claimed FP channel saving: 67% (uniform-width convention)")?;
    Ok(())
}

/// Runs the suite, printing one line per check. Fails naming every check
/// at or above `tolerance`.
pub fn gradcheck(seed: u64, tolerance: f64, out: &mut dyn Write) -> Result<Vec<CheckResult>> {
    let results = run_suite(seed, DEFAULT_STEP)?;
    writeln!(out, "{:<34} {:>12} {:>8} {:>8}", "check", "max rel err", "checked", "skipped")?;
    for r in &results {
        writeln!(
            out,
            "{:<34} {:>12.3e} {:>8} {:>8}  {}",
            r.name,
            r.max_rel_error,
            r.checked,
            r.skipped,
            if r.passed(tolerance) { "ok" } else { "FAIL" }
        )?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed(tolerance)).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        bail!("gradient check above tolerance {tolerance:e}: {}", failed.join(", "));
    }
    Ok(results)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub history: History,
    pub pixel_accuracy: f64,
    pub mean_iou: f64,
    pub checkpoint: PathBuf,
    pub csv: PathBuf,
}

/// Path of the loss history written next to a checkpoint.
pub fn history_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("csv")
}

pub fn train_toy(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainSummary> {
    if args.size == 0 || !args.size.is_multiple_of(8) {
        bail!("--size {} must be a positive multiple of 8", args.size);
    }
    let spec = match &args.config {
        Some(path) => read_config(path)?,
        None => VariantSpec::toy(args.classes),
    };
    if spec.classes != args.classes {
        bail!("variant has {} classes but --classes is {}", spec.classes, args.classes);
    }
    let train_set = gen_toy_dataset::<f32>(args.classes, TRAIN_COUNT, args.size, args.seed)?;
    let held_out = gen_toy_dataset::<f32>(args.classes, HELD_OUT_COUNT, args.size, held_out_seed(args.seed))?;
    let mut net = Network32::new(spec, args.seed)?;
    let cfg = TrainConfig::toy(args.iters, args.size, args.seed, dataset_mean(&train_set));
    let start = Instant::now();
    let history = train(&mut net, &train_set, &cfg, |r| {
        if r.iter % 100 == 0 || r.iter + 1 == args.iters {
            log::info!("iter {:>5}  lr {:.3e}  loss {:.4}  {:.1?}", r.iter, r.lr, r.loss, start.elapsed());
        }
    })?;
    let eval = evaluate(&net, &held_out)?;
    let csv = history_path(&args.output);
    save_checkpoint(&net, &args.output)?;
    write_atomic(&csv, history.to_csv().as_bytes())?;
    writeln!(out, "trained {} iterations in {:.1?}", args.iters, start.elapsed())?;
    writeln!(out, "checkpoint: {}", args.output.display())?;
    writeln!(out, "history: {}", csv.display())?;
    writeln!(out, "held-out pixel accuracy: {:.4}", eval.pixel_accuracy())?;
    writeln!(out, "held-out mIoU: {:.4}", eval.mean_iou())?;
    Ok(TrainSummary {
        history,
        pixel_accuracy: eval.pixel_accuracy(),
        mean_iou: eval.mean_iou(),
        checkpoint: args.output.clone(),
        csv,
    })
}

pub fn held_out_seed(seed: u64) -> u64 {
    seed ^ HELD_OUT_SEED_MIX
}

#[derive(Clone, Debug)]
pub struct InferSummary {
    pub height: usize,
    pub width: usize,
    pub seconds: f64,
}

pub fn infer(args: &InferArgs, out: &mut dyn Write) -> Result<InferSummary> {
    let image = read_ppm(&args.input)?;
    if image.width % 8 != 0 || image.height % 8 != 0 || image.width == 0 || image.height == 0 {
        bail!(
            "{}: {}×{} image; both extents must be positive multiples of 8",
            args.input.display(),
            image.width,
            image.height
        );
    }
    let net: Network32 = load_checkpoint(&args.weights)?;
    let tensor = image_to_tensor(&image);
    let start = Instant::now();
    let labels = net.segment(&tensor)?;
    let seconds = start.elapsed().as_secs_f64();
    write_atomic(&args.output, &encode_pgm(&labels_to_gray(&labels)?))?;
    if let Some(path) = &args.color_output {
        write_atomic(path, &encode_ppm(&colorize(&labels)))?;
    }
    writeln!(out, "segmented {}×{} in {:.3} s", image.width, image.height, seconds)?;
    Ok(InferSummary {
        height: image.height,
        width: image.width,
        seconds,
    })
}
