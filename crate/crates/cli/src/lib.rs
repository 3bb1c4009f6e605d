//! Command implementations behind the `ddrnn` binary.

pub mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ddrnn::bench::{time_forward, Variant};
use ddrnn::checkpoint::{load_model, save_model};
use ddrnn::data::{generate_cue_task, load_dataset, save_dataset, CueTaskConfig};
use ddrnn::eval::{evaluate, export_attention_map};
use ddrnn::gradcheck::GradCheckProblem;
use ddrnn::model::upsample_predictions;
use ddrnn::pnm::{load_ppm, save_gray, save_pgm};
use ddrnn::train::train_with;
use ddrnn::{Coord, DdRnnConfig, Dims, Direction, GridShape, LabelingModel};

use crate::config::{parse_config, RunConfig};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "ddrnn", version, about = "Dense DAG-RNNs with attention for grid labeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a history CSV.
    Train(TrainArgs),
    /// Print mIoU and accuracies of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Label one image and write the label map as PGM.
    Predict(PredictArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write where one grid cell attends as a PGM heatmap.
    AttentionMap(AttentionMapArgs),
    /// Generate a synthetic cue-task dataset.
    GenData(GenDataArgs),
    /// Time forward passes of the plain, dense and attentional variants.
    Bench(BenchArgs),
}

/// Ablation switches shared by several commands.
#[derive(Debug, Args, Clone, Copy)]
pub struct Ablation {
    /// Sum over predecessors instead of attending.
    #[arg(long)]
    pub no_attention: bool,
    /// Use the 3-neighbour stencil instead of the dominance rectangle.
    #[arg(long)]
    pub no_dense: bool,
    /// Drop the recurrence entirely (per-cell classifier).
    #[arg(long)]
    pub no_recurrence: bool,
    /// Number of sweep directions, taken in the order SE, SW, NE, NW.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    pub directions: Option<u8>,
}

impl Ablation {
    pub fn apply(&self, cfg: &mut DdRnnConfig) {
        if self.no_attention {
            cfg.attention = false;
        }
        if self.no_dense {
            cfg.dense = false;
        }
        if self.no_recurrence {
            cfg.recurrence = false;
            cfg.attention = false;
        }
        if let Some(n) = self.directions {
            cfg.directions = n as usize;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluation set for the per-epoch mIoU; defaults to the training data.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Overrides the config file seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub ablation: Ablation,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the label map at grid resolution instead of pixel resolution.
    #[arg(long)]
    pub grid_only: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "3x3")]
    pub grid: GridShape,
    #[arg(long, default_value_t = 4)]
    pub input: usize,
    #[arg(long, default_value_t = 6)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long)]
    pub shared_z: bool,
    #[command(flatten)]
    pub ablation: Ablation,
}

#[derive(Debug, Args)]
pub struct AttentionMapArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Query cell as `row,col`.
    #[arg(long, value_parser = parse_coord)]
    pub query: Coord,
    /// Restrict the map to one direction.
    #[arg(long)]
    pub direction: Option<Direction>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "8x8")]
    pub grid: GridShape,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub patch: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Grid sizes to time; repeatable.
    #[arg(long = "grid", default_values = ["8x8", "16x16"])]
    pub grids: Vec<GridShape>,
    #[arg(long, default_value_t = 16)]
    pub input: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 11)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_coord(s: &str) -> std::result::Result<Coord, String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected row,col, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad coordinate `{s}`"));
    Ok(Coord::new(parse(r)?, parse(c)?))
}

fn metric(name: &str, value: impl std::fmt::Display) {
    println!("{name},{value}");
}

/// Caps the worker pool at `DDRNN_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("DDRNN_THREADS") {
        let n: usize = raw
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("DDRNN_THREADS must be a positive integer, got `{raw}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::AttentionMap(a) => attention_map(a),
        Command::GenData(a) => gen_data(a),
        Command::Bench(a) => bench(a),
    }
}

fn load(path: &Path) -> Result<LabelingModel<f64>> {
    load_model(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn dataset(path: &Path) -> Result<Vec<ddrnn::data::Sample>> {
    let data = load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))?;
    if data.is_empty() {
        bail!("dataset {} is empty", path.display());
    }
    Ok(data)
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = match &a.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    a.ablation.apply(&mut cfg.model.rnn);
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let train_set = dataset(&a.data)?;
    let val = a.val.as_deref().map(dataset).transpose()?;
    let mut model = LabelingModel::<f64>::new(cfg.model, cfg.train.seed)?;
    let quiet = a.quiet;
    let history = train_with(&train_set, val.as_deref(), &mut model, &cfg.train, |r| {
        if !quiet {
            let miou = r.miou.map(|m| format!(" miou {m:.4}")).unwrap_or_default();
            eprintln!("epoch {:>3} loss {:.6}{miou}", r.epoch, r.loss);
        }
    })?;
    save_model(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let history_path = a.history.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        p.into()
    });
    history.save_csv(&history_path)?;
    if let Some(last) = history.epochs.last() {
        metric("final_loss", last.loss);
        if let Some(m) = last.miou {
            metric("miou", m);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let model = load(&a.model)?;
    let data = dataset(&a.data)?;
    let s = evaluate(&model, &data)?;
    metric("miou", s.miou()?);
    metric("accuracy", s.confusion.accuracy().unwrap_or(f64::NAN));
    metric("ambiguous_accuracy", s.ambiguous_accuracy);
    metric("cells", s.confusion.total());
    Ok(ExitCode::SUCCESS)
}

fn predict(a: PredictArgs) -> Result<ExitCode> {
    let model = load(&a.model)?;
    let image = load_ppm(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let pred = model.predict(&image)?;
    let labels = if a.grid_only {
        pred.labels
    } else {
        upsample_predictions(&pred.probs, image.shape())?.argmax()
    };
    save_pgm(&labels, &a.out)?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let mut rnn = DdRnnConfig {
        shared_z: a.shared_z,
        ..DdRnnConfig::default()
    };
    a.ablation.apply(&mut rnn);
    let dims = Dims {
        input: a.input,
        hidden: a.hidden,
        classes: a.classes,
    };
    let report = GradCheckProblem::random(a.grid, dims, rnn, a.seed)?.check(a.step)?;
    for t in &report.tensors {
        metric(&format!("rel_error[{}]", t.name), format!("{:.3e}", t.max_rel_error));
    }
    let worst = report.max_rel_error();
    metric("max_rel_error", format!("{worst:.3e}"));
    if worst < GRADCHECK_TOLERANCE {
        Ok(ExitCode::SUCCESS)
    } else {
        let name = report.worst().map(|t| t.name.as_str()).unwrap_or("?");
        eprintln!("gradient check failed: {name} exceeds {GRADCHECK_TOLERANCE:e}");
        Ok(ExitCode::FAILURE)
    }
}

fn attention_map(a: AttentionMapArgs) -> Result<ExitCode> {
    let model = load(&a.model)?;
    let image = load_ppm(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let map = export_attention_map(&model, &image, a.query, a.direction)?;
    save_gray(&map, &a.out)?;
    Ok(ExitCode::SUCCESS)
}

fn gen_data(a: GenDataArgs) -> Result<ExitCode> {
    let cfg = CueTaskConfig::new(a.grid, a.classes, a.patch);
    let samples = generate_cue_task(a.seed, a.count, &cfg)?;
    save_dataset(&a.out, &samples)?;
    metric("samples", samples.len());
    Ok(ExitCode::SUCCESS)
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let dims = Dims {
        input: a.input,
        hidden: a.hidden,
        classes: 3,
    };
    println!("variant,grid,median_us");
    for &grid in &a.grids {
        for v in Variant::ALL {
            let r = time_forward(v, grid, dims, a.reps, a.seed)?;
            println!("{},{},{:.1}", v.name(), grid, r.median.as_secs_f64() * 1e6);
        }
    }
    Ok(ExitCode::SUCCESS)
}
