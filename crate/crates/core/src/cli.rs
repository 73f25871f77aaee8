//! Command-line front end. `main` only forwards to [`run`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::evaluation::{mlc_classify, run_benchmark, score, BenchConfig};
use crate::inference::{infer_greedy, render_map, render_ppm};
use crate::learning::{em_fit, training_from_frame, EmOptions};
use crate::model::HmtParams;
use crate::raster::{assemble_frame, load_grid, read_labels, GridLayer, LabelRecord};
use crate::synthetic::{generate, SynthConfig, TrainingMode};
use crate::tree::{build_tree, Neighborhood};
use crate::Class;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "geohmt",
    version,
    about = "Elevation-constrained hidden Markov tree flood mapping"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene: elevation.asc, band1.asc, labels.csv, truth.asc.
    Synth(SynthArgs),
    /// Build the dependency tree and dump its edges as `parent_cell,child_cell`.
    Tree(TreeArgs),
    /// Fit model parameters by EM and print the per-iteration trace.
    Train(TrainArgs),
    /// Classify every valid cell with fitted parameters.
    Infer(InferArgs),
    /// Score a predicted class grid against ground truth.
    Eval(EvalArgs),
    /// Time tree construction, learning and inference on synthetic scenes.
    Bench(BenchArgs),
}

fn parse_neighborhood(s: &str) -> std::result::Result<Neighborhood, String> {
    let k: u32 = s
        .parse()
        .map_err(|_| format!("expected 4 or 8, got {s:?}"))?;
    Neighborhood::try_from(k).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TrainingModeArg {
    FeatureOnly,
    Cells,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub rows: usize,
    #[arg(long, default_value_t = 1000)]
    pub cols: usize,
    /// Side of the square blocks sharing one feature value; must divide rows and cols.
    #[arg(long, default_value_t = 50)]
    pub block: usize,
    /// Dry-class feature mean.
    #[arg(long, default_value_t = 110.0)]
    pub mu1: f64,
    /// Flood-class feature mean.
    #[arg(long, default_value_t = 150.0)]
    pub mu2: f64,
    /// Dry-class feature standard deviation.
    #[arg(long, default_value_t = 20.0)]
    pub sigma1: f64,
    /// Flood-class feature standard deviation.
    #[arg(long, default_value_t = 20.0)]
    pub sigma2: f64,
    /// Number of labeled cells written to labels.csv, split evenly by class.
    #[arg(long, default_value_t = 1000)]
    pub n_train: usize,
    /// Fraction of cells, by elevation rank, below the water level.
    #[arg(long, default_value_t = 0.5)]
    pub water_level_quantile: f64,
    /// Grid adjacency used for the flood region: 4 or 8.
    #[arg(long, default_value = "4", value_parser = parse_neighborhood)]
    pub neighborhood: Neighborhood,
    /// How the in-memory training set is drawn (labels.csv always holds sampled cells).
    #[arg(long, value_enum, default_value_t = TrainingModeArg::FeatureOnly)]
    pub training_mode: TrainingModeArg,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        SynthConfig {
            rows: self.rows,
            cols: self.cols,
            block: self.block,
            mu1: self.mu1,
            mu2: self.mu2,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            n_train: self.n_train,
            water_level_quantile: self.water_level_quantile,
            neighborhood: self.neighborhood,
            training_mode: match self.training_mode {
                TrainingModeArg::FeatureOnly => TrainingMode::FeatureOnly,
                TrainingModeArg::Cells => TrainingMode::Cells,
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    /// Elevation grid (ESRI ASCII).
    #[arg(long)]
    pub elev: PathBuf,
    /// Grid adjacency: 4 or 8.
    #[arg(long, default_value = "4", value_parser = parse_neighborhood)]
    pub neighborhood: Neighborhood,
    /// Edge CSV destination; stdout when absent. The summary line always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Elevation grid (ESRI ASCII).
    #[arg(long)]
    pub elev: PathBuf,
    /// Feature band grid; repeat once per band.
    #[arg(long = "band", required = true)]
    pub bands: Vec<PathBuf>,
    /// Grid adjacency: 4 or 8.
    #[arg(long, default_value = "4", value_parser = parse_neighborhood)]
    pub neighborhood: Neighborhood,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Training labels CSV with header `row,col,label`.
    #[arg(long)]
    pub labels: PathBuf,
    /// Convergence threshold on the largest absolute parameter change.
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Initial leaf flood prior. Final accuracy is insensitive to this value
    /// over 0.1 to 0.9 in the initial-prior sensitivity study.
    #[arg(long, default_value_t = 0.5)]
    pub init_pi: f64,
    /// Initial probability that a cell floods given its parents all flood.
    /// Values near 1 work best in the sensitivity study; small values lose accuracy.
    #[arg(long, default_value_t = 0.99)]
    pub init_rho: f64,
    /// Fitted parameter file.
    #[arg(long)]
    pub out_params: PathBuf,
    /// Trace CSV destination; stdout when absent.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Fix training cells to their labels during EM.
    #[arg(long)]
    pub clamp_labels: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Method {
    /// Tree-constrained inference.
    Hmt,
    /// Per-pixel maximum likelihood, ignoring the tree.
    Mlc,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Parameter file written by `train`.
    #[arg(long)]
    pub params: PathBuf,
    /// Class grid output (1 flood, 0 dry, NODATA elsewhere).
    #[arg(long)]
    pub out_map: PathBuf,
    /// Optional PPM rendering of the map.
    #[arg(long)]
    pub out_image: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Hmt)]
    pub method: Method,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted class grid.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth: a class grid, or a `row,col,label` CSV when the name ends in `.csv`.
    #[arg(long)]
    pub truth: PathBuf,
    /// Also write the CSV report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated target cell counts.
    #[arg(long, value_delimiter = ',', default_value = "2000000,4000000")]
    pub sizes: Vec<usize>,
    /// EM iterations per learning run.
    #[arg(long, default_value_t = 3)]
    pub iterations: usize,
    /// Runs averaged per size.
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Timing CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        e if e.is_numeric() => EXIT_NUMERIC,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match dispatch(&cli.command, &mut out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
}

pub fn dispatch(command: &Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, out),
        Command::Tree(a) => tree(a, out),
        Command::Train(a) => train(a, out),
        Command::Infer(a) => infer(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Bench(a) => bench(a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn emit_or_write(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => emit(out, text),
    }
}

fn synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let data = generate(&a.config())?;
    data.write_dir(&a.out)?;
    let floods = data.truth.iter().filter(|&&c| c == crate::FLOOD).count();
    emit(
        out,
        &format!(
            "cells={} flood={} labels={} dir={}\n",
            data.truth.len(),
            floods,
            data.label_records.len(),
            a.out.display()
        ),
    )
}

fn tree(a: &TreeArgs, out: &mut dyn Write) -> Result<()> {
    let elev = load_grid(&a.elev, None)?;
    // Placeholder band: only elevation and validity shape the tree.
    let n = elev.header.cell_count();
    let frame = crate::raster::RasterFrame::with_mask(
        elev.header.nrows,
        elev.header.ncols,
        elev.values.clone(),
        vec![0.0; n],
        1,
        Some(elev.valid.clone()),
    )?
    .with_header(elev.header.clone())?;
    let t = build_tree(&frame, a.neighborhood)?;
    let mut csv = String::from("parent_cell,child_cell\n");
    for (parent, child) in t.edges() {
        csv.push_str(&format!(
            "{},{}\n",
            t.cell_of_node(parent),
            t.cell_of_node(child)
        ));
    }
    emit_or_write(out, a.out.as_deref(), &csv)?;
    emit(out, &format!("{}\n", t.summary()))
}

fn load_scene(s: &SceneArgs, labels: Option<&[LabelRecord]>) -> Result<crate::raster::RasterFrame> {
    let elev = load_grid(&s.elev, None)?;
    let shape = Some(elev.shape());
    let bands = s
        .bands
        .iter()
        .map(|p| load_grid(p, shape))
        .collect::<Result<Vec<GridLayer>>>()?;
    assemble_frame(&elev, &bands, labels)
}

fn train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let labels = read_labels(&a.labels)?;
    let frame = load_scene(&a.scene, Some(&labels))?;
    let t = build_tree(&frame, a.scene.neighborhood)?;
    let training = training_from_frame(&frame);
    let opts = EmOptions {
        epsilon: a.epsilon,
        max_iters: a.max_iters,
        init_pi: a.init_pi,
        init_rho: a.init_rho,
        clamp_labels: a.clamp_labels,
    };
    let fit = em_fit(&t, &frame, &training, &opts)?;
    if !fit.converged {
        log::warn!(
            "EM stopped after {} iterations without converging",
            fit.iterations()
        );
    }
    log::info!("final log-likelihood {}", fit.final_log_likelihood);
    fit.params.write(&a.out_params)?;
    emit_or_write(out, a.trace.as_deref(), &fit.trace_csv())
}

fn infer(a: &InferArgs, out: &mut dyn Write) -> Result<()> {
    let params = HmtParams::read(&a.params)?;
    let frame = load_scene(&a.scene, None)?;
    if params.n_bands() != frame.n_bands() {
        return Err(Error::Dimension(format!(
            "parameters have {} bands, scene has {}",
            params.n_bands(),
            frame.n_bands()
        )));
    }
    let t = build_tree(&frame, a.scene.neighborhood)?;
    let map = match a.method {
        Method::Hmt => infer_greedy(&t, &frame, &params)?,
        Method::Mlc => mlc_classify(&t, &frame, &params)?,
    };
    render_map(&map, &t, &frame, &a.out_map)?;
    if let Some(img) = &a.out_image {
        render_ppm(&map, &t, &frame, img)?;
    }
    emit(
        out,
        &format!(
            "nodes={} flood={} objective={}\n",
            map.labels.len(),
            map.flood_count(),
            map.objective
        ),
    )
}

fn class_of(value: f64, path: &Path) -> Result<Class> {
    if value == 0.0 || value == 1.0 {
        Ok(value as Class)
    } else {
        Err(Error::Format {
            path: path.display().to_string(),
            line: 0,
            message: format!("class value {value} is neither 0 nor 1"),
        })
    }
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let pred_grid = load_grid(&a.pred, None)?;
    let predicted = pred_grid
        .values
        .iter()
        .zip(&pred_grid.valid)
        .map(|(&v, &ok)| {
            if ok {
                class_of(v, &a.pred).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let ncols = pred_grid.header.ncols;
    let truth: Vec<(usize, Class)> = if a
        .truth
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        read_labels(&a.truth)?
            .into_iter()
            .map(|r| {
                if r.row >= pred_grid.header.nrows || r.col >= ncols {
                    Err(Error::Bounds(format!(
                        "truth cell ({}, {}) outside the prediction grid",
                        r.row, r.col
                    )))
                } else {
                    Ok((r.row * ncols + r.col, r.label))
                }
            })
            .collect::<Result<_>>()?
    } else {
        let grid = load_grid(&a.truth, Some(pred_grid.shape()))?;
        let mut pairs = Vec::new();
        for (cell, (&v, &ok)) in grid.values.iter().zip(&grid.valid).enumerate() {
            if ok {
                pairs.push((cell, class_of(v, &a.truth)?));
            }
        }
        pairs
    };
    let report = score(&predicted, &truth)?;
    if let Some(p) = &a.out {
        write_text(p, &report.to_csv())?;
    }
    emit(out, &format!("{}\n{}", report.to_table(), report.to_csv()))
}

fn bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let config = BenchConfig {
        sizes: a.sizes.clone(),
        iterations: a.iterations,
        repeats: a.repeats,
        base: SynthConfig {
            seed: a.seed,
            ..SynthConfig::default()
        },
    };
    let report = run_benchmark(&config)?;
    emit_or_write(out, a.out.as_deref(), &report.to_csv())
}
