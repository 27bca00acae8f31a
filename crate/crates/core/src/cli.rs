//! Command-line driver behind the `patchwork` binary.
//!
//! Exit codes are a stable contract: 0 success, 2 usage or configuration,
//! 3 runtime abort, 4 incompatible or corrupt checkpoint.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use image::RgbImage;
use patchwork_autograd::Array;
use serde::{Deserialize, Serialize};

use crate::batch::{AttrBatch, AttributeCode, ImageBatch};
use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::data::{load_index, split, Dataset};
use crate::error::{Error, Result};
use crate::imageio;
use crate::masking::apply_mask;
use crate::metrics::{self, Pipeline};
use crate::networks::discriminator_forward;
use crate::probe::{Probe, ProbeConfig};
use crate::trainer::{Observer, RunPaths, Trainer};
use crate::{fixture, losses::LossReport};

/// Default output root when `--out` is not given.
pub const OUT_ENV: &str = "PATCHWORK_OUT";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "patchwork", version, about = "Masked inpainting with attribute transfer")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train R, G and D jointly.
    Train(TrainArgs),
    /// Inpaint one image and flip attributes on it.
    Transfer(TransferArgs),
    /// Score a checkpoint on a labelled image directory.
    Eval(EvalArgs),
    /// Comparison grid of a finished run.
    Grid(GridArgs),
    /// Write the procedural face dataset.
    Fixture(FixtureArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory (default `$PATCHWORK_OUT/<config name>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub n_iter: Option<u64>,
    /// Feed the masked image straight to the generator.
    #[arg(long = "ablation-bypass-r", visible_alias = "ablation-bypass-R")]
    pub ablation_bypass_r: bool,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    /// Attribute to invert; repeat for several single-attribute flips.
    #[arg(long = "flip")]
    pub flips: Vec<String>,
    /// Original attribute bits, e.g. `01`; estimated by the critic if absent.
    #[arg(long)]
    pub code: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Image directory with an attribute file.
    pub test_dir: PathBuf,
    #[arg(long, default_value = fixture::ATTR_FILE)]
    pub attr_file: PathBuf,
    /// Images of `test_dir` used to fit the attribute probe instead of
    /// being scored (0 disables the probe and flip rates).
    #[arg(long, default_value_t = 0)]
    pub probe_images: usize,
    #[arg(long, default_value_t = 300)]
    pub probe_iterations: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    pub run_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub rows: usize,
    /// Checkpoint to use (default: the run's final checkpoint).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output file (default `<run_dir>/grid.png`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    pub out_dir: PathBuf,
    pub n: usize,
    /// Defaults to `--seed`, then 0.
    pub seed: Option<u64>,
}

/// Record of one training run, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub revision: String,
    pub started: String,
    pub finished: Option<String>,
    pub ablation_bypass_r: bool,
    pub resumed_from: Option<PathBuf>,
    pub loss_log: PathBuf,
    pub checkpoints: PathBuf,
    pub final_checkpoint: PathBuf,
    pub outcome: String,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let p = run_dir.join(MANIFEST);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(&p, e.to_string()))
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let p = run_dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }
}

/// `SOURCE_DATE_EPOCH` pins timestamps for reproducible manifests.
fn timestamp() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.parse::<i64>().ok())
        .and_then(|s| chrono::DateTime::from_timestamp(s, 0));
    pinned.unwrap_or_else(chrono::Utc::now).to_rfc3339()
}

fn revision() -> String {
    let git = std::process::Command::new("git")
        .args(["rev-parse", "--short", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
    format!(
        "patchwork {} ({})",
        env!("CARGO_PKG_VERSION"),
        git.unwrap_or_else(|| "unknown revision".into())
    )
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("patchwork-out"))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are printed to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a, cli.seed).map(|_| ()),
        Command::Transfer(a) => cmd_transfer(a).map(|_| ()),
        Command::Eval(a) => cmd_eval(a, cli.seed).map(|_| ()),
        Command::Grid(a) => cmd_grid(a).map(|_| ()),
        Command::Fixture(a) => {
            let seed = a.seed.or(cli.seed).unwrap_or(0);
            fixture::generate(&a.out_dir, a.n, seed)?;
            log::info!("wrote {} fixture images to {}", a.n, a.out_dir.display());
            Ok(())
        }
    }
}

struct LogProgress {
    every: u64,
}

impl Observer for LogProgress {
    fn iteration_done(&mut self, r: &LossReport) {
        if r.iteration.is_multiple_of(self.every) {
            log::info!(
                "iter {} ae {:.4}/{:.4} rec {:.3} gen {:.3} disc {:.3}",
                r.iteration,
                r.ae_contour,
                r.ae_patch,
                r.total_rec,
                r.total_gen,
                r.total_disc
            );
        }
    }
}

/// Returns the run directory.
pub fn cmd_train(a: TrainArgs, seed: Option<u64>) -> Result<PathBuf> {
    if !a.config.is_file() {
        return Err(Error::Config(format!("config file {} not found", a.config.display())));
    }
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(n) = a.n_iter {
        cfg.train.n_iter = n;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.train.ablation_bypass_r |= a.ablation_bypass_r;
    cfg.validate()?;

    let run_dir = a.out.clone().unwrap_or_else(|| {
        let stem = a.config.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "run".into());
        out_root().join(stem)
    });
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    let (train_index, _) = cfg.load_split()?;
    for w in &train_index.warnings {
        log::warn!("{w}");
    }
    let dataset = Arc::new(Dataset::new(train_index, cfg.net.image_size));

    let paths = RunPaths::new(&run_dir);
    let mut manifest = RunManifest {
        config: cfg.clone(),
        revision: revision(),
        started: timestamp(),
        finished: None,
        ablation_bypass_r: cfg.train.ablation_bypass_r,
        resumed_from: a.resume.clone(),
        loss_log: paths.loss_log(),
        checkpoints: paths.checkpoint_dir(),
        final_checkpoint: paths.final_checkpoint(),
        outcome: "running".into(),
    };
    manifest.save(&run_dir)?;

    let mut trainer = match &a.resume {
        Some(ckpt) => Trainer::resume(cfg.train.clone(), dataset, ckpt, Some(&run_dir))?,
        None => Trainer::new(cfg.train.clone(), &cfg.net(), dataset, Some(&run_dir))?,
    };
    let every = (cfg.train.n_iter / 20).max(1);
    let result = trainer.run(&mut LogProgress { every });
    manifest.finished = Some(timestamp());
    manifest.outcome = match &result {
        Ok(()) => "completed".into(),
        Err(e) => format!("failed: {e}"),
    };
    manifest.save(&run_dir)?;
    result.map(|_| run_dir)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::Argument(format!("checkpoint {} not found", path.display())));
    }
    checkpoint::load(path)
}

fn bypass_of(c: &Checkpoint) -> bool {
    c.train_config
        .get("ablation_bypass_r")
        .and_then(|v| v.as_bool())
        .unwrap_or(false)
}

fn parse_code(bits: &str, n: usize) -> Result<AttributeCode> {
    let v: Option<Vec<u8>> = bits
        .chars()
        .map(|c| match c {
            '0' => Some(0),
            '1' => Some(1),
            _ => None,
        })
        .collect();
    match v {
        Some(v) if v.len() == n => AttributeCode::new(v),
        _ => Err(Error::Argument(format!("--code must be {n} characters of 0/1, got {bits:?}"))),
    }
}

fn save_image(batch: &ImageBatch, path: &Path) -> Result<PathBuf> {
    imageio::save_png(&imageio::batch_image_to_rgb(batch, 0)?, path)?;
    Ok(path.to_path_buf())
}

/// Writes masked and inpainted images plus one transfer per `--flip`.
/// Returns the written paths.
pub fn cmd_transfer(a: TransferArgs) -> Result<Vec<PathBuf>> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let names = &ckpt.attributes;
    let mut flips = Vec::new();
    for f in &a.flips {
        let k = names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(f))
            .ok_or_else(|| Error::Argument(format!("unknown attribute {f:?}; valid names: {}", names.join(", "))))?;
        flips.push(k);
    }
    let bundle = &ckpt.bundle;
    let size = bundle.config.image_size;
    let raw = imageio::load_rgb(&a.image)?;
    let rgb = imageio::crop_resize_rgb(&raw, size as u32, &a.image)?;
    let chw = Array::from_vec(vec![1, 3, size, size], imageio::rgb_to_chw(&rgb)).expect("image shape");
    let x = ImageBatch::new(chw)?;
    let m = bundle.config.mask();
    let pipe = Pipeline {
        bundle,
        bypass_r: bypass_of(&ckpt),
    };
    let masked = apply_mask(&x, &m)?;
    let inpainted = metrics::modified(&pipe, &masked, &m)?;

    let out = a.out.clone().unwrap_or_else(|| out_root().join("transfer"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let stem = a.image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let mut written = vec![
        save_image(&masked, &out.join(format!("{stem}-masked.png")))?,
        save_image(&inpainted, &out.join(format!("{stem}-inpainted.png")))?,
    ];
    if flips.is_empty() {
        return Ok(written);
    }

    let original = match &a.code {
        Some(bits) => parse_code(bits, names.len())?,
        None => {
            let (_, _, logits) = discriminator_forward(bundle, &inpainted)?;
            AttributeCode::from_bools(&logits.data().iter().map(|&l| l > 0.0).collect::<Vec<_>>())
        }
    };
    let input = pipe.generator_input(&x, &m)?;
    for k in flips {
        let target = original.flipped(k);
        let y = pipe.translate(&input, &AttrBatch::new(vec![target.clone()])?)?;
        let name = format!("{stem}-{}-{}.png", names[k], target.to_bit_string());
        written.push(save_image(&y, &out.join(name))?);
    }
    Ok(written)
}

/// Writes `eval.json` and `eval.md`; returns the report.
pub fn cmd_eval(a: EvalArgs, seed: Option<u64>) -> Result<metrics::EvalReport> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    if !a.test_dir.is_dir() {
        return Err(Error::Argument(format!("test directory {} not found", a.test_dir.display())));
    }
    let attr = a.test_dir.join(&a.attr_file);
    let index = load_index(&a.test_dir, &attr, &ckpt.attributes)?;
    let size = ckpt.bundle.config.image_size;
    let seed = seed.unwrap_or(0);
    let (probe, scored) = if a.probe_images > 0 && !ckpt.attributes.is_empty() {
        // the probe trains on `probe_images` images, three quarters of
        // them for fitting and a quarter for its accuracy
        let (rest, probe_part) = split(&index, a.probe_images.min(index.len()), seed)?;
        let held = (probe_part.len() / 4).max(1);
        let (fit, check) = split(&probe_part, held, seed)?;
        let cfg = ProbeConfig {
            iterations: a.probe_iterations,
            seed,
            ..ProbeConfig::default()
        };
        let probe = Probe::fit(&Dataset::new(fit, size), &Dataset::new(check, size), &cfg)?;
        (Some(probe), rest)
    } else {
        (None, index)
    };
    let test = Dataset::new(scored, size);
    let pipe = Pipeline {
        bundle: &ckpt.bundle,
        bypass_r: bypass_of(&ckpt),
    };
    let report = metrics::evaluate(&pipe, probe.as_ref().map(|p| p as _), &test, 32)?;
    let out = a.out.clone().unwrap_or_else(|| out_root().join("eval"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    for (name, text) in [("eval.json", report.to_json()), ("eval.md", report.to_markdown())] {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    print!("{}", report.to_markdown());
    Ok(report)
}

/// Rows are held-out images; columns are original, masked, inpainted, then
/// one single-attribute flip per configured attribute.
pub fn cmd_grid(a: GridArgs) -> Result<PathBuf> {
    let manifest = RunManifest::load(&a.run_dir)?;
    let ckpt_path = a.checkpoint.clone().unwrap_or(manifest.final_checkpoint.clone());
    let ckpt = load_checkpoint(&ckpt_path)?;
    let (train, test) = manifest.config.load_split()?;
    let source = if test.is_empty() { train } else { test };
    let size = ckpt.bundle.config.image_size;
    let data = Dataset::new(source, size);
    let rows: Vec<usize> = (0..a.rows.min(data.len())).collect();
    if rows.is_empty() {
        return Err(Error::Argument("no images available for the grid".into()));
    }
    let (x, attrs) = data.gather(&rows)?;
    let m = ckpt.bundle.config.mask();
    let pipe = Pipeline {
        bundle: &ckpt.bundle,
        bypass_r: bypass_of(&ckpt),
    };
    let masked = apply_mask(&x, &m)?;
    let inpainted = metrics::modified(&pipe, &masked, &m)?;
    let input = pipe.generator_input(&x, &m)?;
    let n_attr = ckpt.bundle.config.n_attributes;
    let mut columns = vec![x.clone(), masked, inpainted];
    for k in 0..n_attr {
        let target = attrs.map(|c| c.flipped(k));
        columns.push(pipe.translate(&input, &target)?);
    }
    let mut tiles: Vec<RgbImage> = Vec::new();
    for i in 0..rows.len() {
        for col in &columns {
            tiles.push(imageio::batch_image_to_rgb(col, i)?);
        }
    }
    let grid = imageio::tile(&tiles, columns.len())?;
    let out = a.out.clone().unwrap_or_else(|| a.run_dir.join("grid.png"));
    imageio::save_png(&grid, &out)?;
    Ok(out)
}
