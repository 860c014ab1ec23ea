use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sgdse::config::{load_config, RunConfig};
use sgdse::csv_io::{
    diagnostic_rows, estimate_rows, read_estimates_csv, read_pmu_csv, read_terminal_csv, read_truth_csv,
    write_diagnostics_csv, write_estimates_csv, write_key_values, write_playback_csv, write_pmu_csv,
    write_terminal_csv, write_truth_csv,
};
use sgdse::network::map_to_terminal;
use sgdse::pipeline::{
    auto_cross_validate, calibrate_delta2_ref, estimate, playback, reconstruct, simulate, x2_from_terminal,
    PreparedScenario,
};
use sgdse::DseError;

/// Exit code when the estimator input lacks excitation.
const EXIT_EXCITATION: u8 = 3;

#[derive(Parser)]
#[command(
    name = "sgdse",
    version,
    about = "Synchronous generator state and parameter estimation from PMU data"
)]
struct Cli {
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario: pmu.csv and truth.csv.
    Simulate {
        config: PathBuf,
        /// Output directory (default: paths.output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Map PMU phasors to the generator terminal.
    Map {
        config: PathBuf,
        pmu: PathBuf,
        /// Output file (default: <paths.output_dir>/terminal.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate states and parameters: estimates.csv and diagnostics.csv.
    Estimate {
        config: PathBuf,
        terminal: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-simulate the machine with the final estimated parameters.
    Playback {
        config: PathBuf,
        terminal: PathBuf,
        estimates: PathBuf,
        /// Ground truth to score the speed against.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Output file (default: <paths.output_dir>/playback.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Auto- and cross-validation: report.txt and report.csv.
    Validate {
        config: PathBuf,
        /// Directory with pmu.csv (and optionally truth.csv) of the tuning scenario.
        #[arg(long)]
        auto: PathBuf,
        /// Directory with pmu.csv (and optionally truth.csv) of the unseen scenario.
        #[arg(long)]
        cross: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config(path: &Path, seed: Option<u64>) -> Result<RunConfig, DseError> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(out: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, DseError> {
    let dir = out.unwrap_or_else(|| cfg.paths.output_dir.clone());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn out_file(out: Option<PathBuf>, cfg: &RunConfig, name: &str) -> Result<PathBuf, DseError> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            Ok(p)
        }
        None => Ok(out_dir(None, cfg)?.join(name)),
    }
}

fn load_scenario(dir: &Path, cfg: &RunConfig) -> Result<PreparedScenario, DseError> {
    let pmu = read_pmu_csv(&dir.join("pmu.csv"))?;
    let truth_path = dir.join("truth.csv");
    let truth = if truth_path.exists() {
        Some(read_truth_csv(&truth_path)?)
    } else {
        None
    };
    PreparedScenario::from_pmu(&pmu, truth.as_deref(), cfg)
}

/// Returns `true` if the run completed with an excitation warning.
fn run(cli: Cli) -> Result<bool, DseError> {
    match cli.command {
        Command::Simulate { config: c, out } => {
            let cfg = config(&c, cli.seed)?;
            let dir = out_dir(out, &cfg)?;
            let sim = simulate(&cfg)?;
            write_pmu_csv(&dir.join("pmu.csv"), &sim.pmu)?;
            write_truth_csv(&dir.join("truth.csv"), &sim.truth)?;
            log::info!("wrote {} samples to {}", sim.pmu.len(), dir.display());
            Ok(false)
        }
        Command::Map { config: c, pmu, out } => {
            let cfg = config(&c, cli.seed)?;
            let y = map_to_terminal(&read_pmu_csv(&pmu)?, &cfg.network)?;
            write_terminal_csv(&out_file(out, &cfg, "terminal.csv")?, &y)?;
            Ok(false)
        }
        Command::Estimate {
            config: c,
            terminal,
            out,
        } => {
            let cfg = config(&c, cli.seed)?;
            let dir = out_dir(out, &cfg)?;
            let y = read_terminal_csv(&terminal)?;
            let r = reconstruct(&y, &cfg.machine, &cfg.governor, &cfg.pipeline)?;
            let delta2_ref = match cfg.estimator.delta2_ref {
                Some(v) => v,
                None => {
                    let v = calibrate_delta2_ref(&r, &cfg.estimator)?;
                    log::info!("delta2_ref calibrated on this input: {v:e}");
                    v
                }
            };
            let e = estimate(r, &cfg.estimator, delta2_ref)?;
            write_estimates_csv(&dir.join("estimates.csv"), &estimate_rows(&e))?;
            write_diagnostics_csv(&dir.join("diagnostics.csv"), &diagnostic_rows(&e))?;
            let th = e.theta_hat();
            log::info!("a1_hat = {}, a2_hat = {}", th[0], th[1]);
            Ok(e.excitation_deficient)
        }
        Command::Playback {
            config: c,
            terminal,
            estimates,
            truth,
            out,
        } => {
            let cfg = config(&c, cli.seed)?;
            let y = read_terminal_csv(&terminal)?;
            let est = read_estimates_csv(&estimates)?;
            let last = est.last().ok_or(DseError::TooShort { need: 1, got: 0 })?;
            let x2_ref = match truth {
                Some(p) => read_truth_csv(&p)?.iter().map(|s| s.x2).collect(),
                None => x2_from_terminal(&y)?,
            };
            let r = reconstruct(&y, &cfg.machine, &cfg.governor, &cfg.pipeline)?;
            let pb = playback(&r, &y, [last.a1_hat, last.a2_hat], &x2_ref, &cfg.machine, &cfg.pipeline)?;
            write_playback_csv(&out_file(out, &cfg, "playback.csv")?, &pb)?;
            Ok(false)
        }
        Command::Validate {
            config: c,
            auto,
            cross,
            out,
        } => {
            let cfg = config(&c, cli.seed)?;
            let dir = out_dir(out, &cfg)?;
            let a = load_scenario(&auto, &cfg)?;
            let x = load_scenario(&cross, &cfg)?;
            let (ra, rc) = auto_cross_validate(
                &a.scenario("auto", &cfg),
                &x.scenario("cross", &cfg),
                &cfg.machine,
                &cfg.governor,
                &cfg.estimator,
                &cfg.pipeline,
            )?;
            let text = format!("{}\n{}", ra.report.to_text(), rc.report.to_text());
            std::fs::write(dir.join("report.txt"), &text)?;
            let kv: Vec<(String, String)> = [&ra, &rc]
                .iter()
                .flat_map(|run| {
                    let name = run.report.scenario.clone();
                    run.report
                        .to_key_values()
                        .into_iter()
                        .filter(|(k, _)| k != "scenario")
                        .map(move |(k, v)| (format!("{name}.{k}"), v))
                })
                .collect();
            write_key_values(&dir.join("report.csv"), &kv)?;
            write_playback_csv(&dir.join("playback_auto.csv"), &ra.playback)?;
            write_playback_csv(&dir.join("playback_cross.csv"), &rc.playback)?;
            print!("{text}");
            Ok(ra.report.excitation_deficient || rc.report.excitation_deficient)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("warning: kind=insufficient_excitation msg=estimator input is not persistently exciting");
            ExitCode::from(EXIT_EXCITATION)
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', "; ");
            eprintln!("error: kind={} msg={}", e.kind(), msg);
            ExitCode::FAILURE
        }
    }
}
