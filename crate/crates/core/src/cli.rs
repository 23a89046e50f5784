//! Command-line front end: `analyze`, `sweep`, `report` and `synth`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O or malformed
//! input file, 3 model and dataset do not fit together.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{load_idx_pair, DatasetError};
use crate::engine::{derive_seed, Engine, EngineError, EngineOptions, Mode, RunResult};
use crate::model::{ActivationKind, Model};
use crate::model_io::{load_model, save_model, ModelIoError};
use crate::mutation::MutationError;
use crate::neuron_clustering::cluster_model;
use crate::report::{
    compare_speedups, existing_cells, format_parameter, read_results, render, summarize,
    summary_csv, ReportError, ResultsWriter,
};
use crate::synthetic;
use crate::LabeledDataset32;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MUTACC_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "mutacc-out";

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_INCOMPATIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "mutacc",
    version,
    about = "Mutation analysis for small neural-network classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one mode at one parameter, plus a vanilla baseline.
    Analyze(AnalyzeArgs),
    /// Run every mode over its parameter grid; resumes an existing file.
    Sweep(SweepArgs),
    /// Summarise a results file.
    Report(ReportArgs),
    /// Write a seeded synthetic model and teacher-labelled IDX pair.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Vanilla,
    Neuron,
    Mutant,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Vanilla => Mode::Vanilla,
            ModeArg::Neuron => Mode::Neuron,
            ModeArg::Mutant => Mode::Mutant,
        }
    }
}

#[derive(Debug, Args)]
pub struct Inputs {
    /// Model file.
    #[arg(long)]
    pub model: PathBuf,
    /// IDX image file.
    #[arg(long)]
    pub images: PathBuf,
    /// IDX label file.
    #[arg(long)]
    pub labels: PathBuf,
    /// Number of classes.
    #[arg(long)]
    pub classes: usize,
    /// Evaluate on a seeded random subset of this many points.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Neurons per cluster (neuron mode) or similarity threshold (mutant mode).
    #[arg(long)]
    pub param: Option<f64>,
    /// Repetitions of the selected mode.
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Vanilla baseline repetitions (unused in vanilla mode).
    #[arg(long, default_value_t = 1)]
    pub vanilla_reps: usize,
    /// Also write the neuron dendrograms or mutant partition of repetition 0.
    #[arg(long)]
    pub dump: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Modes to sweep besides the vanilla baseline (default: both).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub mode: Vec<ModeArg>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
    pub s_grid: Vec<usize>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,0.99"
    )]
    pub p_grid: Vec<f64>,
    #[arg(long, default_value_t = 6)]
    pub reps: usize,
    #[arg(long, default_value_t = 30)]
    pub vanilla_reps: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results file written by `analyze` or `sweep`.
    pub results: PathBuf,
    /// Print the summary as CSV instead of a table.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    Fcnn,
    Lenet,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "fcnn")]
    pub arch: Arch,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Number of images.
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    /// Fraction of labels flipped away from the model's prediction.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn io(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: message.to_string(),
        }
    }

    fn incompatible(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_INCOMPATIBLE,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match &e {
            ReportError::Malformed { lines, .. } => {
                let mut msg = e.to_string();
                for (l, why) in lines {
                    msg.push_str(&format!("\n  line {l}: {why}"));
                }
                CliError::io(msg)
            }
            ReportError::Io { .. } => CliError::io(e),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::LabelOutOfRange { .. } => CliError::incompatible(e),
            DatasetError::SubsetSize { .. } => CliError::config(format!("--subset: {e}")),
            _ => CliError::io(e),
        }
    }
}

impl From<ModelIoError> for CliError {
    fn from(e: ModelIoError) -> Self {
        CliError::io(e)
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Incompatible { .. }
            | EngineError::ClassCount { .. }
            | EngineError::NoMutants
            | EngineError::Mutation(MutationError::NoMutableNeurons) => CliError::incompatible(e),
            EngineError::Parameter(_) | EngineError::ZeroBaseline(_) => {
                CliError::config(e.to_string())
            }
            _ => CliError::io(e),
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Diagnostics go to stderr.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(a) => analyze(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Report(a) => report(a, out),
        Command::Synth(a) => synth(a, out),
    }
}

fn check_threshold(flag: &str, p: f64) -> Result<(), CliError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(CliError::config(format!(
            "{flag}: threshold {p} must lie in (0, 1)"
        )))
    }
}

fn check_s(flag: &str, s: f64) -> Result<usize, CliError> {
    if s >= 1.0 && s.fract() == 0.0 && s <= u32::MAX as f64 {
        Ok(s as usize)
    } else {
        Err(CliError::config(format!(
            "{flag}: neurons per cluster must be a positive integer, got {s}"
        )))
    }
}

fn check_reps(flag: &str, n: usize) -> Result<(), CliError> {
    if n == 0 {
        Err(CliError::config(format!("{flag}: must be at least 1")))
    } else {
        Ok(())
    }
}

fn load_engine(inputs: &Inputs) -> Result<Engine<f32>, CliError> {
    if inputs.classes == 0 {
        return Err(CliError::config("--classes: must be at least 1"));
    }
    if inputs.subset == Some(0) {
        return Err(CliError::config("--subset: must be at least 1"));
    }
    let model: Model<f32> = load_model(&inputs.model)?;
    if model.num_classes() != inputs.classes {
        return Err(CliError::incompatible(format!(
            "--classes is {} but the model has {} classes",
            inputs.classes,
            model.num_classes()
        )));
    }
    let mut data: LabeledDataset32 = load_idx_pair(&inputs.images, &inputs.labels, inputs.classes)?;
    if let Some(k) = inputs.subset {
        data = data.subset(k, inputs.seed)?;
    }
    let options = EngineOptions {
        workers: inputs.workers,
        ..EngineOptions::default()
    };
    Ok(Engine::new(model, &data, options)?)
}

fn create_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn print(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io(format!("stdout: {e}")))
}

fn progress(r: &RunResult) {
    eprintln!(
        "{} {} rep {}: score {:.6}, {}/{} mutants tested, {:.3}s",
        r.mode,
        format_parameter(r.parameter),
        r.repetition,
        r.mutation_score,
        r.tested_mutants,
        r.total_mutants,
        r.test_time_s
    );
}

fn analyze(a: AnalyzeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_reps("--reps", a.reps)?;
    check_reps("--vanilla-reps", a.vanilla_reps)?;
    let mode = Mode::from(a.mode);
    let parameter = match (mode, a.param) {
        (Mode::Vanilla, None) => None,
        (Mode::Vanilla, Some(_)) => {
            return Err(CliError::config("--param: vanilla mode takes no parameter"))
        }
        (_, None) => {
            return Err(CliError::config(format!(
                "--param: required for {mode} mode"
            )))
        }
        (Mode::Neuron, Some(s)) => Some(check_s("--param", s)? as f64),
        (Mode::Mutant, Some(p)) => {
            check_threshold("--param", p)?;
            Some(p)
        }
    };

    let engine = load_engine(&a.inputs)?;
    let seed = a.inputs.seed;
    create_out_dir(&a.inputs.out)?;
    let path = a.inputs.out.join("analyze.csv");
    let mut writer = ResultsWriter::create(&path)?;
    let mut rows = Vec::new();
    let baseline = if mode == Mode::Vanilla {
        0
    } else {
        a.vanilla_reps
    };
    let mut cells: Vec<(Mode, Option<f64>, usize)> =
        (0..baseline).map(|r| (Mode::Vanilla, None, r)).collect();
    cells.extend((0..a.reps).map(|r| (mode, parameter, r)));
    for (m, p, rep) in cells {
        let (r, _) = engine.run_cell(m, p, rep, seed)?;
        progress(&r);
        writer.write(&r)?;
        rows.push(r);
    }

    if a.dump {
        match (mode, parameter) {
            (Mode::Neuron, Some(s)) => {
                let c = cluster_model(engine.model(), s as usize).map_err(EngineError::from)?;
                write_file(
                    &a.inputs.out.join("dendrograms.tsv"),
                    c.dendrogram_dump().as_bytes(),
                )?;
            }
            (Mode::Mutant, Some(p)) => {
                let mutants = engine.vanilla_mutants()?;
                let set = engine.mutant_clusters(
                    &mutants,
                    p,
                    derive_seed(seed, Mode::Mutant, Some(p), 0),
                )?;
                write_file(&a.inputs.out.join("partition.tsv"), set.dump().as_bytes())?;
            }
            _ => {}
        }
    }

    print(out, &render(&summarize(&rows), &compare_speedups(&rows)))?;
    eprintln!("results written to {}", path.display());
    Ok(())
}

fn sweep(a: SweepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    check_reps("--reps", a.reps)?;
    check_reps("--vanilla-reps", a.vanilla_reps)?;
    let modes: Vec<Mode> = if a.mode.is_empty() {
        vec![Mode::Neuron, Mode::Mutant]
    } else {
        a.mode.iter().map(|&m| Mode::from(m)).collect()
    };
    let mut cells: Vec<(Mode, Option<f64>, usize)> = (0..a.vanilla_reps)
        .map(|r| (Mode::Vanilla, None, r))
        .collect();
    if modes.contains(&Mode::Neuron) {
        if a.s_grid.is_empty() {
            return Err(CliError::config("--s-grid: must not be empty"));
        }
        for &s in &a.s_grid {
            check_s("--s-grid", s as f64)?;
            cells.extend((0..a.reps).map(|r| (Mode::Neuron, Some(s as f64), r)));
        }
    }
    if modes.contains(&Mode::Mutant) {
        if a.p_grid.is_empty() {
            return Err(CliError::config("--p-grid: must not be empty"));
        }
        for &p in &a.p_grid {
            check_threshold("--p-grid", p)?;
            cells.extend((0..a.reps).map(|r| (Mode::Mutant, Some(p), r)));
        }
    }

    let seed = a.inputs.seed;
    create_out_dir(&a.inputs.out)?;
    let path = a.inputs.out.join("sweep.csv");
    let mut writer = ResultsWriter::append(&path)?;
    let mut rows = read_results(&path)?;
    if let Some(r) = rows
        .iter()
        .find(|r| r.seed != derive_seed(seed, r.mode, r.parameter, r.repetition))
    {
        return Err(CliError::config(format!(
            "--seed: {} already holds rows from a different master seed ({} rep {})",
            path.display(),
            r.mode,
            r.repetition
        )));
    }
    let done = existing_cells(&rows);
    let todo: Vec<_> = cells
        .into_iter()
        .filter(|&(m, p, rep)| !done.contains(&(m, format_parameter(p), rep)))
        .collect();
    if !done.is_empty() {
        eprintln!(
            "resuming: {} rows present, {} to run",
            done.len(),
            todo.len()
        );
    }
    if !todo.is_empty() {
        let engine = load_engine(&a.inputs)?;
        for (m, p, rep) in todo {
            let (r, _) = engine.run_cell(m, p, rep, seed)?;
            progress(&r);
            writer.write(&r)?;
            rows.push(r);
        }
    }
    print(out, &render(&summarize(&rows), &compare_speedups(&rows)))?;
    eprintln!("results written to {}", path.display());
    Ok(())
}

fn report(a: ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rows = read_results(&a.results)?;
    let summary = summarize(&rows);
    if a.csv {
        print(out, &summary_csv(&summary))
    } else {
        print(out, &render(&summary, &compare_speedups(&rows)))
    }
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(2..=256).contains(&a.classes) {
        return Err(CliError::config("--classes: must lie in 2..=256"));
    }
    if a.count == 0 {
        return Err(CliError::config("--count: must be at least 1"));
    }
    if !(0.0..=1.0).contains(&a.noise) {
        return Err(CliError::config("--noise: must lie in [0, 1]"));
    }
    let model: Model<f32> = match a.arch {
        Arch::Fcnn => synthetic::fcnn(
            [28, 28],
            &[50, 50, 50],
            a.classes,
            ActivationKind::Relu,
            a.seed,
        ),
        Arch::Lenet => synthetic::lenet5([28, 28], a.classes, a.seed),
    };
    let data = synthetic::teacher_dataset(&model, a.count, a.noise, a.seed.wrapping_add(1));
    create_out_dir(&a.out)?;
    let model_path = a.out.join("model.mutacc");
    let mut metadata = std::collections::BTreeMap::new();
    metadata.insert(
        "source".to_string(),
        format!("synthetic {:?} seed {}", a.arch, a.seed).to_lowercase(),
    );
    save_model(&model, &metadata, &model_path)?;
    write_file(&a.out.join("images.idx"), &data.images_idx())?;
    write_file(&a.out.join("labels.idx"), &data.labels_idx())?;
    print(
        out,
        &format!(
            "wrote {}, images.idx and labels.idx ({} images, {} classes)\n",
            model_path.display(),
            a.count,
            a.classes
        ),
    )
}
