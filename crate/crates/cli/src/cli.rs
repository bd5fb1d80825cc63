//! Command-line interface.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};

use crate::pipeline::{
    evaluate, group_means, groups_csv, load_image, metrics_csv, read_channel_file, reconstruct,
    simulate, write_atomic, write_channel_file, write_reconstruction, Overrides,
    ReconstructOptions,
};
use crate::scenario::{Scenario, Weighting};
use crate::suite::{run_suite, SuiteOptions};
use ae_core::domain::default_pixel_grid;
use ae_core::{Method, PressureModel};

#[derive(Debug, Parser)]
#[command(
    name = "ae-synth",
    version,
    about = "Synthetic acoustoelectric imaging: simulate, reconstruct, evaluate"
)]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "AE_SYNTH_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write its channel file.
    Simulate(SimulateArgs),
    /// Reconstruct images (and coherence / beam maps) from a channel file.
    Reconstruct(ReconstructArgs),
    /// Compute target metrics for reconstructed images.
    Evaluate(EvaluateArgs),
    /// Run the bundled phantom experiments end to end.
    PaperSuite(SuiteArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Channel file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop thermal noise.
    #[arg(long)]
    pub no_noise: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Auto,
    Sa,
    Fus,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Channel file to reconstruct.
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Scenario supplying grid, F-number, weighting and beam model defaults.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub method: MethodArg,
    #[arg(long)]
    pub f_number: Option<f64>,
    #[arg(long)]
    pub weighting: Option<Weighting>,
    #[arg(long)]
    pub amplitude_correct: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Scenario declaring the targets.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Metrics CSV to write; group means go next to it as `<stem>_groups.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Image CSVs written by `reconstruct`.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long)]
    pub f_number: Option<f64>,
}

fn base_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Runs a parsed command line, returning the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Reconstruct(a) => cmd_reconstruct(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::PaperSuite(a) => cmd_paper_suite(&a),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<i32> {
    let scenario = Scenario::load(&a.scenario)?;
    let ov = Overrides {
        seed: a.seed,
        no_noise: a.no_noise,
        ..Default::default()
    };
    let ds = simulate(&scenario, base_dir(&a.scenario), &ov)?;
    let digest = write_channel_file(&ds, &a.out)?;
    println!("{} {digest}", a.out.display());
    Ok(0)
}

pub fn cmd_reconstruct(a: &ReconstructArgs) -> Result<i32> {
    let ds = read_channel_file(&a.input)?;
    let ov = Overrides {
        f_number: a.f_number,
        weighting: a.weighting,
        amplitude_correct: a.amplitude_correct,
        ..Default::default()
    };
    let mut opts = match &a.scenario {
        Some(path) => ReconstructOptions::from_scenario(&Scenario::load(path)?, &ov)?,
        None => {
            // image everything the record covers
            let fs = ds.sample_rate;
            let max_delay = ds.events.iter().map(|e| e.max_delay()).fold(0.0, f64::max);
            let usable = (ds.num_samples().saturating_sub(ds.pulse.length_samples())) as f64 / fs
                - max_delay;
            let grid =
                default_pixel_grid(&ds.geometry, &ds.medium, &ds.pulse, usable * ds.medium.sos)?;
            let weighting = a.weighting.unwrap_or_default();
            ReconstructOptions {
                method: None,
                grid,
                f_number: a.f_number.unwrap_or(1.5),
                weightings: if weighting == Weighting::None {
                    vec![]
                } else {
                    vec![weighting]
                },
                amplitude_correct: a.amplitude_correct,
                epsilon: ae_core::coherence::DEFAULT_EPSILON,
                cfpl_window: Default::default(),
                model: PressureModel::default(),
                dynamic_range_db: 40.0,
            }
        }
    };
    opts.method = match a.method {
        MethodArg::Auto => None,
        MethodArg::Sa => Some(Method::Sa),
        MethodArg::Fus => Some(Method::Fus),
    };
    let rec = reconstruct(&ds, &opts)?;
    let prefix = a
        .input
        .file_stem()
        .map(|s| format!("{}_", s.to_string_lossy()))
        .unwrap_or_default();
    for path in write_reconstruction(&rec, &a.out, &prefix, opts.dynamic_range_db)? {
        println!("{}", path.display());
    }
    Ok(0)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<i32> {
    let scenario = Scenario::load(&a.scenario)?;
    let images = a
        .images
        .iter()
        .map(|p| load_image(p))
        .collect::<Result<Vec<_>>>()?;
    let reports = evaluate(&images, &scenario.targets())?;
    write_atomic(&a.out, metrics_csv(&reports).as_bytes())?;
    let stem = a
        .out
        .file_stem()
        .context("--out needs a file name")?
        .to_string_lossy();
    let groups = a.out.with_file_name(format!("{stem}_groups.csv"));
    write_atomic(&groups, groups_csv(&group_means(&reports)).as_bytes())?;
    println!("{}\n{}", a.out.display(), groups.display());
    Ok(0)
}

pub fn cmd_paper_suite(a: &SuiteArgs) -> Result<i32> {
    if let Some(f) = a.f_number {
        if !(f > 0.0) {
            bail!("--f-number must be positive");
        }
    }
    let outcome = run_suite(
        &a.out,
        &SuiteOptions {
            seed: a.seed,
            no_noise: a.no_noise,
            f_number: a.f_number,
        },
    )?;
    print!("{}", std::fs::read_to_string(a.out.join("summary.txt"))?);
    Ok(if outcome.passed() { 0 } else { 1 })
}
