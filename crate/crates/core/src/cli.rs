//! The `sepl` command line: `make-toy`, `train`, `eval`, `robust`, `export`.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for runtime failures.
//! Outputs go to `--out`, or to `$SEPL_OUTPUT_ROOT/<subcommand>` (default
//! root `runs`) when it is omitted. Every artifact is a deterministic
//! function of the arguments; nothing carries a timestamp.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::Checkpoint;
use crate::config::{AdapterKind, Config, Fusion};
use crate::data::perturb::MAX_SEVERITY;
use crate::data::{load_manifest, make_toy_dataset, Family, Image, Split};
use crate::error::{Error, Result};
use crate::eval::export::{export_embeddings, Which};
use crate::eval::report::{evaluate, EvalReport, EvalSet};
use crate::eval::robust::robustness_sweep;
use crate::eval::saliency::{saliency, write_map_csv, write_overlay_png};
use crate::eval::tsne::TsneConfig;
use crate::model::Sepl;
use crate::trainer::{train, CheckpointEvery, InMemoryData, RunOptions, TrainState};

pub const OUTPUT_ROOT_ENV: &str = "SEPL_OUTPUT_ROOT";
pub const CHECKPOINT_FILE: &str = "checkpoint.sepl";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sepl", version, about = "Separable prompt learning for forgery detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic watermark dataset (PNG images plus manifest.jsonl).
    MakeToy(MakeToyArgs),
    /// Two-stage training on the train split of a manifest.
    Train(TrainArgs),
    /// Frame- and video-level AUC/AP/EER of a checkpoint on one split.
    Eval(EvalArgs),
    /// Perturbation sweep over families and severities.
    Robust(RobustArgs),
    /// Feature point files with t-SNE plots, and saliency maps.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct MakeToyArgs {
    /// Number of videos; must be even and at least 4.
    #[arg(long, default_value_t = 400)]
    pub videos: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 2)]
    pub frames: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; `$SEPL_OUTPUT_ROOT/<subcommand>` (or `runs/...`) by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FusionArg {
    Attention,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AdapterArg {
    None,
    Standard,
    #[value(alias = "plugin")]
    Svd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML configuration; the bundled toy preset when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Newline-delimited JSON manifest (path, label, video_id, method, split).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory; `$SEPL_OUTPUT_ROOT/<subcommand>` (or `runs/...`) by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the configured training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip the prompt pretraining stage.
    #[arg(long)]
    pub skip_pretrain: bool,
    /// Disable the disentanglement loss.
    #[arg(long)]
    pub no_dis: bool,
    /// Disable the prompt diversity loss.
    #[arg(long)]
    pub no_div: bool,
    /// Disable both cross-modality alignment terms.
    #[arg(long)]
    pub no_align: bool,
    /// Disable the supervised contrastive loss.
    #[arg(long)]
    pub no_con: bool,
    /// Number of learnable context vectors per prompt.
    #[arg(long)]
    pub context_len: Option<usize>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    /// `none` sets the adapter rank to 0.
    #[arg(long, value_enum)]
    pub adapter: Option<AdapterArg>,
    #[arg(long)]
    pub stage1_steps: Option<usize>,
    #[arg(long)]
    pub stage2_steps: Option<usize>,
    /// Continue from a checkpoint; its stored configuration is used.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after this many optimizer steps (the checkpoint is still written).
    #[arg(long)]
    pub stop_after: Option<usize>,
    /// Also write the checkpoint every N steps.
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Overwrite an existing checkpoint in the output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SetArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Newline-delimited JSON manifest (path, label, video_id, method, split).
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Output directory; `$SEPL_OUTPUT_ROOT/<subcommand>` (or `runs/...`) by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub set: SetArgs,
    /// Dataset name in the report; the manifest's directory name by default.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct RobustArgs {
    #[command(flatten)]
    pub set: SetArgs,
    /// Comma-separated families; all six by default.
    #[arg(long, value_delimiter = ',')]
    pub families: Vec<Family>,
    #[arg(long, value_delimiter = ',', default_values_t = [1u8, 2, 3, 4, 5])]
    pub severities: Vec<u8>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub set: SetArgs,
    /// Feature to export; all three by default.
    #[arg(long)]
    pub which: Option<Which>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub tsne_iters: usize,
    /// Saliency maps for the first N fake images of the split.
    #[arg(long, default_value_t = 8)]
    pub saliency: usize,
    /// Saliency map of one extra image file.
    #[arg(long)]
    pub image: Option<PathBuf>,
}

/// Default output directory of a subcommand.
pub fn output_dir(out: Option<&Path>, subcommand: &str) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(OUTPUT_ROOT_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"));
            root.join(subcommand)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dataset_name(manifest: &Path, name: Option<&str>) -> String {
    name.map(str::to_string).unwrap_or_else(|| {
        manifest
            .canonicalize()
            .ok()
            .and_then(|p| p.parent().and_then(|d| d.file_name()).map(|s| s.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "dataset".into())
    })
}

fn load_model(path: &Path) -> Result<(Sepl, String)> {
    let state = TrainState::from_checkpoint(Checkpoint::load(path)?)?;
    if !state.complete {
        eprintln!("warning: {} is from an unfinished run", path.display());
    }
    let hash = state.config().hash();
    Ok((state.model, hash))
}

pub fn cmd_make_toy(a: &MakeToyArgs) -> Result<PathBuf> {
    let ds = make_toy_dataset(a.videos, a.frames, a.seed)?;
    let dir = output_dir(a.out.as_deref(), "toy");
    let manifest = ds.write(&dir)?;
    println!("{}", manifest.display());
    Ok(manifest)
}

impl TrainArgs {
    fn usage_error(&self) -> Option<String> {
        (self.resume.is_some() && self.changes_config())
            .then(|| "--resume takes the configuration from the checkpoint; drop the config flags".into())
    }

    fn changes_config(&self) -> bool {
        self.config.is_some()
            || self.seed.is_some()
            || self.skip_pretrain
            || self.no_dis
            || self.no_div
            || self.no_align
            || self.no_con
            || self.context_len.is_some()
            || self.fusion.is_some()
            || self.adapter.is_some()
            || self.stage1_steps.is_some()
            || self.stage2_steps.is_some()
    }

    /// The run configuration: file (or toy preset) plus overrides.
    pub fn build_config(&self) -> Result<Config> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::toy(),
        };
        if let Some(s) = self.seed {
            c.train.seed = s;
        }
        c.train.skip_pretrain |= self.skip_pretrain;
        if self.no_dis {
            c.loss.lambda1 = 0.0;
        }
        if self.no_div {
            c.loss.lambda2 = 0.0;
        }
        if self.no_align {
            c.loss.lambda3_specific = 0.0;
            c.loss.lambda3_irrelevant = 0.0;
        }
        if self.no_con {
            c.loss.lambda4 = 0.0;
        }
        if let Some(k) = self.context_len {
            c.model.context_len = k;
        }
        match self.fusion {
            Some(FusionArg::Attention) => c.model.fusion = Fusion::Attention,
            Some(FusionArg::Concat) => c.model.fusion = Fusion::Concat,
            None => {}
        }
        match self.adapter {
            Some(AdapterArg::None) => c.model.adapter_rank = 0,
            Some(AdapterArg::Standard) => c.model.adapter = AdapterKind::Standard,
            Some(AdapterArg::Svd) => c.model.adapter = AdapterKind::Svd,
            None => {}
        }
        if let Some(n) = self.stage1_steps {
            c.train.stage1_steps = n;
        }
        if let Some(n) = self.stage2_steps {
            c.train.stage2_steps = n;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Outcome of `sepl train`, also printed as JSON.
#[derive(Debug, serde::Serialize)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub steps_run: usize,
    pub stage: u8,
    pub step: usize,
    pub complete: bool,
    pub config_hash: String,
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainOutcome> {
    if let Some(msg) = a.usage_error() {
        return Err(Error::InvalidArgument(msg));
    }
    let dir = output_dir(a.out.as_deref(), "train");
    let ckpt = dir.join(CHECKPOINT_FILE);
    let resuming_in_place = match &a.resume {
        Some(r) => ckpt.exists() && same_file(r, &ckpt),
        None => false,
    };
    if ckpt.exists() && !a.force && !resuming_in_place {
        return Err(Error::Checkpoint(format!(
            "{} exists; pass --force to overwrite",
            ckpt.display()
        )));
    }
    let mut state = match &a.resume {
        Some(r) => TrainState::from_checkpoint(Checkpoint::load(r)?)?,
        None => TrainState::new(a.build_config()?)?,
    };
    let manifest = load_manifest(&a.manifest)?;
    let train_set = EvalSet::from_manifest(&manifest, Split::Train)?;
    let data = InMemoryData::new(train_set.images, train_set.labels, state.config())?;

    create_dir(&dir)?;
    write_text(&dir.join(CONFIG_FILE), &state.config().to_toml_string())?;
    let log_path = dir.join(LOG_FILE);
    let log = if a.resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(log);
    let summary = {
        let mut opts = RunOptions {
            stop_after: a.stop_after,
            checkpoint: (a.checkpoint_every > 0).then(|| CheckpointEvery {
                every: a.checkpoint_every,
                path: ckpt.clone(),
            }),
            log: Some(&mut log),
            on_step: None,
        };
        train(&mut state, &data, &mut opts)?
    };
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    state.to_checkpoint()?.save(&ckpt, true)?;
    let out = TrainOutcome {
        checkpoint: ckpt,
        steps_run: summary.steps_run,
        stage: state.stage,
        step: state.step,
        complete: state.complete,
        config_hash: state.config().hash(),
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(out)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn load_set(s: &SetArgs) -> Result<(Sepl, String, EvalSet)> {
    let (model, hash) = load_model(&s.checkpoint)?;
    let manifest = load_manifest(&s.manifest)?;
    let set = EvalSet::from_manifest(&manifest, s.split)?;
    Ok((model, hash, set))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport> {
    let (model, hash, set) = load_set(&a.set)?;
    let (e, rows) = evaluate(&model, &set)?;
    let report = EvalReport::new(dataset_name(&a.set.manifest, a.name.as_deref()), a.set.split, hash, &e);
    let dir = output_dir(a.set.out.as_deref(), "eval");
    report.write(&dir, "report")?;
    let mut w = csv::Writer::from_path(dir.join("scores.csv"))?;
    w.write_record(["video_id", "frame", "score", "label"])?;
    for r in &rows {
        w.write_record([r.video_id.clone(), r.frame.to_string(), format!("{:.17e}", r.score), r.label.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&dir, e))?;
    print!("{}", report.to_json()?);
    Ok(report)
}

impl RobustArgs {
    fn usage_error(&self) -> Option<String> {
        self.severities
            .iter()
            .find(|&&s| s == 0 || s > MAX_SEVERITY)
            .map(|s| format!("severity {s} outside 1..={MAX_SEVERITY}"))
    }
}

pub fn cmd_robust(a: &RobustArgs) -> Result<EvalReport> {
    let (model, hash, set) = load_set(&a.set)?;
    let families: Vec<Family> = if a.families.is_empty() {
        Family::ALL.to_vec()
    } else {
        a.families.clone()
    };
    if let Some(msg) = a.usage_error() {
        return Err(Error::InvalidArgument(msg));
    }
    let (e, _) = evaluate(&model, &set)?;
    let grid = robustness_sweep(&model, &set, &families, &a.severities, a.seed)?;
    let mut report = EvalReport::new(dataset_name(&a.set.manifest, a.name.as_deref()), a.set.split, hash, &e);
    let dir = output_dir(a.set.out.as_deref(), "robust");
    grid.write_plot(dir.join("robust.svg"))?;
    report.robustness = Some(grid);
    report.write(&dir, "robust")?;
    print!("{}", report.to_json()?);
    Ok(report)
}

/// Files written by `sepl export`.
#[derive(Debug, Default, serde::Serialize)]
pub struct ExportOutcome {
    pub points: Vec<PathBuf>,
    pub saliency: Vec<PathBuf>,
}

pub fn cmd_export(a: &ExportArgs) -> Result<ExportOutcome> {
    let (model, _, set) = load_set(&a.set)?;
    let dir = output_dir(a.set.out.as_deref(), "export");
    create_dir(&dir)?;
    let cfg = TsneConfig {
        iters: a.tsne_iters,
        seed: a.seed,
        ..TsneConfig::default()
    };
    let mut out = ExportOutcome::default();
    let which: Vec<Which> = a.which.map(|w| vec![w]).unwrap_or_else(|| Which::ALL.to_vec());
    for w in which {
        out.points.push(export_embeddings(&model, &set, w, &cfg, &dir)?.points);
    }
    let sal_dir = dir.join("saliency");
    let mut targets: Vec<(String, Image)> = set
        .images
        .iter()
        .enumerate()
        .filter(|(i, _)| set.labels[*i] == 1)
        .take(a.saliency)
        .map(|(i, img)| (format!("{i:05}_{}", set.video_ids[i]), img.clone()))
        .collect();
    if let Some(p) = &a.image {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
        targets.push((stem, Image::load(p)?));
    }
    if !targets.is_empty() {
        create_dir(&sal_dir)?;
    }
    for (stem, img) in &targets {
        let map = saliency(&model, img)?;
        let png = sal_dir.join(format!("{stem}.png"));
        write_overlay_png(img, &map, 8, &png)?;
        write_map_csv(&map, sal_dir.join(format!("{stem}.csv")))?;
        out.saliency.push(png);
    }
    println!("{}", serde_json::to_string(&out)?);
    Ok(out)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::MakeToy(a) => cmd_make_toy(a).map(drop),
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Eval(a) => cmd_eval(a).map(drop),
        Command::Robust(a) => cmd_robust(a).map(drop),
        Command::Export(a) => cmd_export(a).map(drop),
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    // argument combinations clap cannot express
    let usage = match &cli.command {
        Command::Train(a) => a.usage_error(),
        Command::Robust(a) => a.usage_error(),
        _ => None,
    };
    if let Some(msg) = usage {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
