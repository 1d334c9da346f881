//! One function per subcommand. Results go to `out`; diagnostics go through
//! `log` to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use ducdlc::checkpoint;
use ducdlc::dlc::{receptive_field, stack_receptive_field, RfSpec};
use ducdlc::guided::{joint_upsample, psnr, GuidedFilterConfig};
use ducdlc::model::ModelParams;
use ducdlc::ops::bilinear_resize_forward;
use ducdlc::train::{evaluate, make_shapes_dataset, predict, train, RunConfig};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::io::{self, Manifest, MANIFEST};

pub const LOG_FILE: &str = "log.jsonl";
pub const FINAL_CKPT: &str = "final.ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const RESOLVED_CONFIG: &str = "config.txt";

/// Evaluation batch size; has no effect on the numbers.
const EVAL_BATCH: usize = 8;

fn emit(out: &mut dyn Write, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string(value).map_err(|e| CliError::Data(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| CliError::Data(format!("stdout: {e}")))
}

/// Logs a warning when the context module's receptive field is wider than
/// the feature map an `h x w` input produces.
fn warn_extent(model: &ducdlc::model::ModelConfig, h: usize, w: usize) {
    let dlc = model.dlc_config();
    let stride = model.total_stride();
    let (fh, fw) = (h.div_ceil(stride), w.div_ceil(stride));
    if !dlc.check_extent(fh, fw) {
        log::warn!(
            "context receptive field {} exceeds the {fh}x{fw} feature map of a {h}x{w} input; outer taps only see padding",
            dlc.stacked_receptive_field()
        );
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Args, Clone, Debug)]
pub struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Side length of the square images.
    #[arg(long)]
    pub size: usize,
    /// Number of classes including background (2..=255).
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub seed: u64,
}

pub fn cmd_gen(args: &GenArgs) -> CliResult<()> {
    if !(2..=255).contains(&args.classes) {
        return Err(CliError::Usage(format!("--classes must lie in 2..=255, got {}", args.classes)));
    }
    if args.size == 0 {
        return Err(CliError::Usage("--size must be positive".into()));
    }
    let samples = make_shapes_dataset(args.count, args.size, args.classes, args.seed)?;
    create_dir(&args.out.join("images"))?;
    create_dir(&args.out.join("labels"))?;
    let mut manifest = Manifest {
        classes: args.classes,
        pairs: Vec::with_capacity(samples.len()),
    };
    for (i, s) in samples.iter().enumerate() {
        let (img, lbl) = (format!("images/{i:04}.png"), format!("labels/{i:04}.png"));
        io::write_image(&args.out.join(&img), &s.image)?;
        io::write_labels(&args.out.join(&lbl), &s.label)?;
        manifest.pairs.push((img, lbl));
    }
    let path = args.out.join(MANIFEST);
    fs::write(&path, manifest.render()).map_err(|e| CliError::io(&path, e))?;
    log::info!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

#[derive(Args, Clone, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Flat key = value configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for checkpoints and the epoch log.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    final_loss: f64,
    best_epoch: Option<usize>,
    best_val_miou: Option<f64>,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    io::require_dir(&args.data)?;
    io::require_file(&args.config)?;
    let text = fs::read_to_string(&args.config).map_err(|e| CliError::io(&args.config, e))?;
    let mut cfg = RunConfig::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", args.config.display())))?;
    let (classes, samples) = io::load_dataset(&args.data)?;
    cfg.model.classes = classes;
    cfg.model.validate()?;

    let n_val = (samples.len() as f64 * cfg.val_fraction).round() as usize;
    let (train_set, val_set) = samples.split_at(samples.len() - n_val);
    warn_extent(&cfg.model, cfg.train.augment.crop_size, cfg.train.augment.crop_size);
    log::info!("{} training and {} validation samples, {classes} classes", train_set.len(), val_set.len());

    create_dir(&args.out)?;
    let cfg_path = args.out.join(RESOLVED_CONFIG);
    fs::write(&cfg_path, cfg.render()).map_err(|e| CliError::io(&cfg_path, e))?;
    let log_path = args.out.join(LOG_FILE);
    let mut log_file = std::io::BufWriter::new(fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?);
    let mut log_error = None;

    let init = ModelParams::init(&cfg.model, cfg.train.seed)?;
    let outcome = train(&cfg.model, init, train_set, val_set, &cfg.train, |record| {
        let line = serde_json::to_string(record).expect("epoch records serialize");
        if let Err(e) = writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
            log_error.get_or_insert(e);
        }
    });
    if let Some(e) = log_error {
        return Err(CliError::io(&log_path, e));
    }
    let outcome = outcome?;

    let final_path = args.out.join(FINAL_CKPT);
    checkpoint::save(&final_path, &cfg.model, &outcome.params).map_err(|e| CliError::io(&final_path, e))?;
    let best_path = args.out.join(BEST_CKPT);
    let best_params = outcome.best.as_ref().map_or(&outcome.params, |b| &b.2);
    checkpoint::save(&best_path, &cfg.model, best_params).map_err(|e| CliError::io(&best_path, e))?;

    emit(
        out,
        &TrainSummary {
            epochs: outcome.log.len(),
            final_loss: outcome.log.last().map_or(0.0, |r| r.mean_loss),
            best_epoch: outcome.best.as_ref().map(|b| b.0),
            best_val_miou: outcome.best.as_ref().map(|b| b.1),
        },
    )
}

fn load_checkpoint(path: &Path) -> CliResult<(ducdlc::model::ModelConfig, ModelParams)> {
    io::require_file(path)?;
    checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Args, Clone, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Inference scales whose class probabilities are averaged.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub scales: Vec<f64>,
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    if let Some(s) = args.scales.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(CliError::Usage(format!("--scales entries must be positive, got {s}")));
    }
    let (model, params) = load_checkpoint(&args.ckpt)?;
    let (classes, samples) = io::load_dataset(&args.data)?;
    if classes != model.classes {
        return Err(CliError::Data(format!(
            "dataset has {classes} classes, checkpoint was trained for {}",
            model.classes
        )));
    }
    if let Some(s) = samples.first() {
        let s = s.image.shape();
        warn_extent(&model, s.h, s.w);
    }
    let metrics = evaluate(&samples, &model, &params, &args.scales, EVAL_BATCH)?;
    emit(out, &metrics)
}

#[derive(Args, Clone, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Colorized output; the raw class indices go to `<stem>_index.png` beside it.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn cmd_infer(args: &InferArgs) -> CliResult<()> {
    io::require_file(&args.image)?;
    let (model, mut params) = load_checkpoint(&args.ckpt)?;
    let image = io::read_rgb(&args.image)?;
    warn_extent(&model, image.shape().h, image.shape().w);
    let labels = predict(&image, &model, &mut params, &[1.0])?;
    io::write_colorized(&args.out, &labels)?;
    io::write_labels(&io::index_path(&args.out), &labels)
}

#[derive(Args, Clone, Debug)]
pub struct GuidedUpsampleArgs {
    /// Low-resolution image to enlarge.
    #[arg(long)]
    pub target: PathBuf,
    /// High-resolution guide, read as luma.
    #[arg(long)]
    pub guide: PathBuf,
    #[arg(long)]
    pub radius: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground truth at guide resolution; prints PSNR of the result and of plain bilinear.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Serialize)]
struct PsnrReport {
    psnr_guided: f64,
    psnr_bilinear: f64,
}

pub fn cmd_guided_upsample(args: &GuidedUpsampleArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = GuidedFilterConfig::new(args.radius, args.eps)?;
    io::require_file(&args.target)?;
    io::require_file(&args.guide)?;
    let target = io::read_image(&args.target)?;
    let guide = io::read_gray(&args.guide)?;
    let result = joint_upsample(&target, &guide, &cfg)?;
    io::write_image(&args.out, &result)?;
    if let Some(path) = &args.reference {
        io::require_file(path)?;
        let mut reference = io::read_image(path)?;
        if reference.shape().c != result.shape().c {
            reference = if result.shape().c == 1 { io::read_gray(path)? } else { io::read_rgb(path)? };
        }
        let g = guide.shape();
        let bilinear = bilinear_resize_forward(&target, g.h, g.w)?;
        emit(
            out,
            &PsnrReport {
                psnr_guided: psnr(&reference, &result, 1.0)?,
                psnr_bilinear: psnr(&reference, &bilinear, 1.0)?,
            },
        )?;
    }
    Ok(())
}

#[derive(Args, Clone, Debug)]
pub struct RfArgs {
    /// Comma-separated kernel:dilation pairs, e.g. 3:3,3:6,3:12,3:18.
    #[arg(long)]
    pub layers: String,
}

/// Prints `k:d<TAB>rf` per layer, then `stacked<TAB>rf`.
pub fn cmd_rf(args: &RfArgs, out: &mut dyn Write) -> CliResult<()> {
    let spec: RfSpec = args.layers.parse().map_err(|e| CliError::Usage(format!("--layers: {e}")))?;
    let write = |out: &mut dyn Write, text: String| writeln!(out, "{text}").map_err(|e| CliError::Data(format!("stdout: {e}")));
    for &(k, d) in spec.layers() {
        write(out, format!("{k}:{d}\t{}", receptive_field(k, d)))?;
    }
    write(out, format!("stacked\t{}", stack_receptive_field(&spec)))
}
