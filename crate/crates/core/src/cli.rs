//! The `gpunet` command line.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage or data error, 3 divergence.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::blocks::BlockKind;
use crate::checks::{run_scope, tolerance, Scope};
use crate::cost::model_cost;
use crate::data::{
    contact_sheet, load_dataset, load_image, normalize_map, save_dataset, save_image, save_mask,
    split_dataset, synth_shapes, Sample, SplitSpec,
};
use crate::engine::gradcheck::GradReport;
use crate::engine::Mode;
use crate::error::{Error, Result};
use crate::metrics::{binarize, Averaging};
use crate::tensor::DType;
use crate::train::{evaluate, train, OptimizerKind, TrainConfig};
use crate::zoo::{load_checkpoint, FeatureLevel, LayerGraph, ModelConfig, FULL_WIDTHS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "gpunet",
    version,
    about = "Lightweight U-Net variants built from ghost and GP modules"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print parameter and FLOP counts for a model.
    Count(CountArgs),
    /// Train a model on a dataset directory or on synthetic shapes.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset directory.
    Eval(EvalArgs),
    /// Write the binary mask predicted for one image.
    Predict(PredictArgs),
    /// Write per-channel feature maps of the first or last block.
    Features(FeaturesArgs),
    /// Run finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic shapes dataset to disk.
    Synth(SynthArgs),
}

fn parse_model(s: &str) -> std::result::Result<BlockKind, String> {
    BlockKind::from_model_name(s)
        .ok_or_else(|| format!("unknown model `{s}` (expected unet, ghost-unet or gpu-net)"))
}

fn parse_bits(s: &str) -> std::result::Result<u32, String> {
    match s {
        "32" => Ok(32),
        "64" => Ok(64),
        _ => Err(format!("`{s}` is not 32 or 64")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long, value_parser = parse_model)]
    pub model: BlockKind,
    #[arg(long, default_value_t = 192)]
    pub height: usize,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    /// Five comma-separated widths, e.g. 8,16,32,64,128.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    pub in_channels: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file whose keys mirror the flag names; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<BlockKind>,
    #[arg(long, conflicts_with = "synthetic")]
    pub data_dir: Option<PathBuf>,
    /// Generate this many synthetic training samples (plus one eighth as many for validation).
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Side of the synthetic images.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch JSON lines; defaults to the checkpoint path with `.history.jsonl` appended.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerName>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Stop once validation JS reaches this value.
    #[arg(long)]
    pub stop_at_js: Option<f64>,
}

/// Keys accepted in a `train --config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainFile {
    pub model: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub synthetic: Option<usize>,
    pub size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub history: Option<PathBuf>,
    pub widths: Option<Vec<usize>>,
    pub optimizer: Option<OptimizerName>,
    pub eval_every: Option<usize>,
    pub split_seed: Option<u64>,
    pub stop_at_js: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    Pooled,
    PerImage,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, value_enum, default_value_t = AveragingArg::Pooled)]
    pub averaging: AveragingArg,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    First,
    Last,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_enum, default_value_t = LevelArg::First)]
    pub level: LevelArg,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Primitives,
    Blocks,
    Model,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = ScopeArg::Primitives)]
    pub scope: ScopeArg,
    #[arg(long, default_value_t = 32, value_parser = parse_bits)]
    pub dtype: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale one convolution's input gradient; the run must then fail.
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run_with<I, A>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match run(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                Error::Divergence { .. } => EXIT_DIVERGED,
                _ => EXIT_USAGE,
            }
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Count(a) => count(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Features(a) => features(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Synth(a) => synth(a, out),
    }
}

fn emit(out: &mut dyn Write, text: impl std::fmt::Display) -> Result<()> {
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn model_config(
    kind: BlockKind,
    widths: Option<&[usize]>,
    in_channels: usize,
) -> Result<ModelConfig> {
    let cfg = ModelConfig::new(kind)
        .with_widths(widths.unwrap_or(&FULL_WIDTHS))
        .with_in_channels(in_channels);
    cfg.validate()?;
    Ok(cfg)
}

fn count(a: CountArgs, out: &mut dyn Write) -> Result<i32> {
    let widths = a.widths.as_deref();
    let report_for = |kind| -> Result<_> {
        let model = LayerGraph::<f32>::uninit(&model_config(kind, widths, a.in_channels)?)?;
        model_cost(&model, a.height, a.width)
    };
    let mut report = report_for(a.model)?;
    if a.model != BlockKind::Ordinary {
        report = report.with_baseline(&report_for(BlockKind::Ordinary)?);
    }
    match a.format {
        Format::Table => emit(out, report.to_table())?,
        Format::Json => emit(out, report.to_json())?,
    }
    Ok(EXIT_OK)
}

fn history_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".history.jsonl");
    PathBuf::from(s)
}

fn resolve_train(a: TrainArgs) -> Result<(TrainSetup, TrainConfig)> {
    let file = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<TrainFile>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainFile::default(),
    };
    let model = match (a.model, file.model) {
        (Some(k), _) => k,
        (None, Some(name)) => parse_model(&name).map_err(Error::Config)?,
        (None, None) => return Err(Error::Config("--model is required".into())),
    };
    let source = match (a.data_dir, a.synthetic, file.data_dir, file.synthetic) {
        (Some(d), _, _, _) => Source::Dir(d),
        (None, Some(n), _, _) => Source::Synthetic(n),
        (None, None, Some(d), _) => Source::Dir(d),
        (None, None, None, Some(n)) => Source::Synthetic(n),
        _ => {
            return Err(Error::Config(
                "one of --data-dir or --synthetic is required".into(),
            ))
        }
    };
    let defaults = TrainConfig::default();
    let out = a
        .out
        .or(file.out)
        .unwrap_or_else(|| PathBuf::from("model.gpun"));
    let optimizer = match a.optimizer.or(file.optimizer) {
        None | Some(OptimizerName::Adam) => OptimizerKind::default(),
        Some(OptimizerName::Sgd) => OptimizerKind::Sgd,
    };
    let cfg = TrainConfig {
        epochs: a.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        learning_rate: a.lr.or(file.lr).unwrap_or(defaults.learning_rate),
        batch_size: a.batch.or(file.batch).unwrap_or(defaults.batch_size),
        seed: a.seed.or(file.seed).unwrap_or(defaults.seed),
        optimizer,
        eval_every: a
            .eval_every
            .or(file.eval_every)
            .unwrap_or(defaults.eval_every),
        checkpoint: Some(out.clone()),
        stop_at_js: a.stop_at_js.or(file.stop_at_js),
    };
    cfg.validate()?;
    let setup = TrainSetup {
        model,
        source,
        size: a.size.or(file.size).unwrap_or(96),
        widths: a.widths.or(file.widths),
        split_seed: a.split_seed.or(file.split_seed).unwrap_or(0),
        history: a
            .history
            .or(file.history)
            .unwrap_or_else(|| history_path(&out)),
        out,
    };
    Ok((setup, cfg))
}

enum Source {
    Dir(PathBuf),
    Synthetic(usize),
}

struct TrainSetup {
    model: BlockKind,
    source: Source,
    size: usize,
    widths: Option<Vec<usize>>,
    split_seed: u64,
    history: PathBuf,
    out: PathBuf,
}

fn pick(samples: &[Sample], ids: &[String]) -> Vec<Sample> {
    let wanted: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
    samples
        .iter()
        .filter(|s| wanted.contains(s.id.as_str()))
        .cloned()
        .collect()
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let (setup, cfg) = resolve_train(a)?;
    let (train_set, val_set) = match &setup.source {
        Source::Dir(dir) => {
            let all = load_dataset(dir)?;
            let ids: Vec<String> = all.iter().map(|s| s.id.clone()).collect();
            let splits = split_dataset(
                &ids,
                &SplitSpec {
                    seed: setup.split_seed,
                    ..SplitSpec::default()
                },
            )?;
            (pick(&all, &splits.train), pick(&all, &splits.val))
        }
        Source::Synthetic(n) => (
            synth_shapes(*n, setup.size, setup.size, cfg.seed)?,
            synth_shapes((*n / 8).max(1), setup.size, setup.size, cfg.seed ^ 0x7a1)?,
        ),
    };
    let first = train_set.first().ok_or(Error::Empty("training split"))?;
    let mc = model_config(setup.model, setup.widths.as_deref(), first.image.channels())?;
    let mut model = crate::zoo::build_model::<f32>(&mc, cfg.seed)?;
    emit(
        out,
        format!(
            "{}: {} params, {} train / {} val samples",
            setup.model.model_name(),
            model.param_count(),
            train_set.len(),
            val_set.len()
        ),
    )?;

    let mut lines = String::new();
    let mut write_err = None;
    let result = train(&mut model, &train_set, &val_set, &cfg, |rec| {
        let line = rec.to_json();
        if let Err(e) = writeln!(out, "{line}") {
            write_err.get_or_insert(e);
        }
        lines.push_str(&line);
        lines.push('\n');
    });
    // The history is written even when training diverges.
    fs::write(&setup.history, &lines).map_err(|e| Error::io(&setup.history, e))?;
    if let Some(e) = write_err {
        return Err(Error::io("<stdout>", e));
    }
    let outcome = result?;
    match (outcome.best_epoch, outcome.best_js) {
        (Some(epoch), Some(js)) => emit(out, format!("best val js {js:.4} at epoch {epoch}"))?,
        _ => emit(out, "no validation split; saved final weights")?,
    }
    emit(out, format!("checkpoint {}", setup.out.display()))?;
    Ok(EXIT_OK)
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let mut model = load_checkpoint::<f32>(&a.ckpt)?;
    let all = load_dataset(&a.data_dir)?;
    let samples = match a.split {
        SplitName::All => all,
        split => {
            let ids: Vec<String> = all.iter().map(|s| s.id.clone()).collect();
            let splits = split_dataset(
                &ids,
                &SplitSpec {
                    seed: a.split_seed,
                    ..SplitSpec::default()
                },
            )?;
            let chosen = match split {
                SplitName::Train => &splits.train,
                SplitName::Val => &splits.val,
                _ => &splits.test,
            };
            pick(&all, chosen)
        }
    };
    let averaging = match a.averaging {
        AveragingArg::Pooled => Averaging::Pooled,
        AveragingArg::PerImage => Averaging::PerImage,
    };
    let rec = evaluate(&mut model, &samples, averaging, a.batch)?;
    emit(out, rec.to_json())?;
    Ok(EXIT_OK)
}

fn load_input(model: &LayerGraph<f32>, path: &Path) -> Result<crate::tensor::Tensor4<f32>> {
    let x = load_image::<f32>(path)?;
    let [_, c, h, w] = x.shape();
    let div = 1 << crate::zoo::LEVELS;
    if c != model.config().in_channels {
        return Err(Error::shape(
            "image",
            format!(
                "{} has {c} channels, model expects {}",
                path.display(),
                model.config().in_channels
            ),
        ));
    }
    if h % div != 0 || w % div != 0 {
        return Err(Error::shape(
            "image",
            format!(
                "{} is {h}x{w}; height and width must be multiples of {div}",
                path.display()
            ),
        ));
    }
    Ok(x)
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let mut model = load_checkpoint::<f32>(&a.ckpt)?;
    let x = load_input(&model, &a.image)?;
    let mask = binarize(&model.forward(&x, Mode::Eval)?, a.threshold)?;
    save_mask(&mask, &a.out)?;
    emit(
        out,
        format!(
            "{}: {} of {} pixels foreground",
            a.out.display(),
            mask.count_ones(),
            mask.len()
        ),
    )?;
    Ok(EXIT_OK)
}

fn features(a: FeaturesArgs, out: &mut dyn Write) -> Result<i32> {
    let mut model = load_checkpoint::<f32>(&a.ckpt)?;
    let x = load_input(&model, &a.image)?;
    let level = match a.level {
        LevelArg::First => FeatureLevel::First,
        LevelArg::Last => FeatureLevel::Last,
    };
    let maps = model
        .collect_feature_maps(&x, level, Mode::Eval)?
        .iter()
        .map(normalize_map)
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for (i, m) in maps.iter().enumerate() {
        save_image(m, &a.out_dir.join(format!("map_{i:03}.pgm")))?;
    }
    save_image(&contact_sheet(&maps)?, &a.out_dir.join("sheet.pgm"))?;
    emit(
        out,
        format!(
            "{} maps and sheet.pgm in {}",
            maps.len(),
            a.out_dir.display()
        ),
    )?;
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let scope = match a.scope {
        ScopeArg::Primitives => Scope::Primitives,
        ScopeArg::Blocks => Scope::Blocks,
        ScopeArg::Model => Scope::Model,
    };
    let dtype = if a.dtype == 64 {
        DType::F64
    } else {
        DType::F32
    };
    let reports: Vec<GradReport> = match dtype {
        DType::F32 => run_scope::<f32>(scope, a.seed, a.corrupt)?,
        DType::F64 => run_scope::<f64>(scope, a.seed, a.corrupt)?,
    };
    let tol = tolerance(scope, dtype);
    let mut failed = 0;
    for r in &reports {
        let ok = r.passed(tol);
        failed += usize::from(!ok);
        let mut line = format!(
            "{:<28} {:.3e}  {}",
            r.op,
            r.worst(),
            if ok { "ok" } else { "FAIL" }
        );
        if r.skipped() > 0 {
            line.push_str(&format!("  ({} probes set aside at kinks)", r.skipped()));
        }
        emit(out, line)?;
    }
    emit(
        out,
        format!(
            "{} of {} checks passed at {tol:e} ({}-bit)",
            reports.len() - failed,
            reports.len(),
            dtype.size() * 8
        ),
    )?;
    Ok(if failed == 0 {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<i32> {
    let samples = synth_shapes(a.count, a.size, a.size, a.seed)?;
    save_dataset(&a.out_dir, &samples)?;
    emit(
        out,
        format!("{} samples in {}", samples.len(), a.out_dir.display()),
    )?;
    Ok(EXIT_OK)
}
