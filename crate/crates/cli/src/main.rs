use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fex_core::config::RunConfig;
use fex_core::io::{denormalize, save_csv};
use fex_core::pipeline::{
    evaluate, generate_dataset, prepare_data, run_pipeline, write_outputs, write_report, ErrorKind,
    PipelineError, ResultsDocument,
};
use fex_core::TrajectoryDataset;

/// Learn ODE right-hand sides as short symbolic expressions.
#[derive(Debug, Parser)]
#[command(name = "fex", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the configured compartmental model and write trajectories.csv.
    Generate(RunArgs),
    /// Run the full search and write results.json, equations.txt and mse.csv.
    Search(RunArgs),
    /// Re-run the rollouts of a results document and write forecast.csv and mse.csv.
    Forecast(ResultArgs),
    /// Write equations.txt and the MSE tables of a results document.
    Report(ResultArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the number of search epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct ResultArgs {
    /// results.json written by `fex search`.
    #[arg(long)]
    results: PathBuf,
    /// Output directory; defaults to the directory of the results file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(args: &RunArgs) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(epochs) = args.epochs {
        cfg.search.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(args: &ResultArgs) -> PathBuf {
    args.out.clone().unwrap_or_else(|| {
        args.results
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn write_dataset(
    data: &TrajectoryDataset,
    dir: &Path,
    name: &str,
) -> Result<PathBuf, PipelineError> {
    let out = |e: &dyn std::fmt::Display| PipelineError::new("output", ErrorKind::Data, e);
    std::fs::create_dir_all(dir).map_err(|e| out(&format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    save_csv(&path, data).map_err(|e| out(&e))?;
    Ok(path)
}

fn check_rollouts(doc: &ResultsDocument) -> Result<(), PipelineError> {
    match doc.metrics.rollout_failures.first() {
        None => Ok(()),
        Some(f) => Err(PipelineError::new(
            "forecast",
            ErrorKind::Numerical,
            format!(
                "{} rollout(s) diverged, first: trajectory {} at step {}; metrics cover the completed steps only",
                doc.metrics.rollout_failures.len(),
                f.trajectory,
                f.step
            ),
        )),
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = load_config(&args)?;
            let data = generate_dataset(&cfg)?;
            let path = write_dataset(&data, &cfg.output_dir, "trajectories.csv")?;
            println!(
                "wrote {} trajectories of {} rows to {}",
                data.trajectories().len(),
                data.trajectories()[0].len(),
                path.display()
            );
        }
        Command::Search(args) => {
            let cfg = load_config(&args)?;
            let doc = run_pipeline(&cfg)?;
            write_outputs(&doc, &cfg.output_dir)?;
            for line in doc.equations() {
                println!("{line}");
            }
            let worst = doc.metrics.per_step_mse.iter().copied().fold(0.0, f64::max);
            println!("max per-step forecast MSE: {worst:e}");
            if let Some(k) = doc.metrics.components_beating_persistence {
                println!(
                    "components beating persistence: {k}/{}",
                    doc.components.len()
                );
            }
            println!("results in {}", cfg.output_dir.display());
            check_rollouts(&doc)?;
        }
        Command::Forecast(args) => {
            let doc = ResultsDocument::load(&args.results)?;
            let model = doc.system()?;
            let data = prepare_data(&doc.config_echo)?;
            let ev = evaluate(&model, doc.config_echo.mode, &data)?;
            let dir = output_dir(&args);
            let doc = ResultsDocument {
                metrics: ev.metrics,
                ..doc
            };
            write_report(&doc, &dir)?;
            check_rollouts(&doc)?;
            let predicted =
                TrajectoryDataset::new(ev.forecasts, data.test.dt(), doc.var_names.clone())
                    .map_err(|e| PipelineError::new("forecast", ErrorKind::Numerical, e))?;
            let path = write_dataset(
                &denormalize(&predicted, &doc.scale_record),
                &dir,
                "forecast.csv",
            )?;
            println!("wrote {}", path.display());
        }
        Command::Report(args) => {
            let doc = ResultsDocument::load(&args.results)?;
            let dir = output_dir(&args);
            write_report(&doc, &dir)?;
            for line in doc.equations() {
                println!("{line}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
