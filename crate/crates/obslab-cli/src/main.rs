//! Command-line harness: scenario runs, delay/gain sweeps, margin reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::exit;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use obslab::config::{parse_float_list, ScenarioConfig};
use obslab::margin::analyze_scenario;
use obslab::report::{
    error_svg, margin_text, run_csv, run_summary, sweep_csv, sweep_summary, PlotSeries,
};
use obslab::sim::{run, sweep, ObserverChoice, RunOptions, SimOutcome, Verdict};

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_DIVERGED: i32 = 2;
const EXIT_INFEASIBLE: i32 = 3;

#[derive(Parser)]
#[command(name = "obslab", version, about = "Delay-compensating observer lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObserverArg {
    Predictive,
    Standard,
    Both,
}

impl From<ObserverArg> for ObserverChoice {
    fn from(v: ObserverArg) -> Self {
        match v {
            ObserverArg::Predictive => ObserverChoice::Predictive,
            ObserverArg::Standard => ObserverChoice::Standard,
            ObserverArg::Both => ObserverChoice::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario; writes run.csv, run.svg and summary.txt.
    Run {
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = ObserverArg::Predictive)]
        observer: ObserverArg,
        /// Co-simulate the transport-grid observer form and record the full
        /// error norm plus the boundary gap.
        #[arg(long)]
        pde_validate: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Grid of runs over delays and gains; writes sweep.csv and a threshold
    /// summary.
    Sweep {
        config: PathBuf,
        /// Comma-separated delays in seconds.
        #[arg(long)]
        delays: String,
        /// Comma-separated observer gains.
        #[arg(long)]
        gains: String,
        #[arg(long, value_enum, default_value_t = ObserverArg::Predictive)]
        observer: ObserverArg,
        /// Re-run the grid at half the step and report verdict stability.
        #[arg(long)]
        check_dt: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Delay-margin and admissible-gain report; writes margin.txt.
    Margin {
        config: PathBuf,
        /// `auto` (log-grid minimizer of the gain inequality) or a positive
        /// value.
        #[arg(long, default_value = "auto")]
        kappa1: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests are not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            exit(code);
        }
    };
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    };
    exit(code);
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config, observer, pde_validate, out } => {
            cmd_run(&config, observer, pde_validate, &out)
        }
        Command::Sweep { config, delays, gains, observer, check_dt, out } => {
            cmd_sweep(&config, &delays, &gains, observer, check_dt, &out)
        }
        Command::Margin { config, kappa1, out } => cmd_margin(&config, &kappa1, &out),
    }
}

fn load(config: &Path) -> Result<ScenarioConfig> {
    ScenarioConfig::load(config).with_context(|| format!("loading {}", config.display()))
}

fn write(out_dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let path = out_dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_run(config: &Path, observer: ObserverArg, pde_validate: bool, out_dir: &Path) -> Result<i32> {
    let cfg = load(config)?;
    let opts = RunOptions { record_series: true, pde_validate, matched_start: false };
    let outcome: SimOutcome = run(&cfg.scenario, observer.into(), &opts)?;

    if let Some(series) = outcome.predictive.as_ref().and_then(|o| o.series.as_ref()) {
        write(out_dir, "run.csv", &run_csv(series, cfg.csv_stride))?;
    } else if let Some(series) = outcome.standard.as_ref().and_then(|o| o.series.as_ref()) {
        write(out_dir, "run.csv", &run_csv(series, cfg.csv_stride))?;
    }
    if outcome.predictive.is_some() {
        if let Some(series) = outcome.standard.as_ref().and_then(|o| o.series.as_ref()) {
            write(out_dir, "run_standard.csv", &run_csv(series, cfg.csv_stride))?;
        }
    }

    let mut curves = Vec::new();
    if let Some(s) = outcome.predictive.as_ref().and_then(|o| o.series.as_ref()) {
        curves.push(PlotSeries {
            label: "|x_tilde| predictive",
            values: &s.x_tilde_norm,
            color: "#c0392b",
        });
        curves.push(PlotSeries {
            label: "|y_tilde| predictive",
            values: &s.y_tilde_norm,
            color: "#e67e22",
        });
        if let Some(eq) = s.eq_norm.as_ref() {
            curves.push(PlotSeries { label: "full error norm", values: eq, color: "#8e44ad" });
        }
    }
    if let Some(s) = outcome.standard.as_ref().and_then(|o| o.series.as_ref()) {
        curves.push(PlotSeries {
            label: "|x_tilde| standard",
            values: &s.x_tilde_norm,
            color: "#2980b9",
        });
    }
    let t = outcome
        .predictive
        .as_ref()
        .or(outcome.standard.as_ref())
        .and_then(|o| o.series.as_ref())
        .map(|s| s.t.as_slice())
        .unwrap_or(&[]);
    if !t.is_empty() {
        write(out_dir, "run.svg", &error_svg(t, &curves, "estimation error"))?;
    }

    let summary = run_summary(
        &cfg,
        outcome.observability.ok,
        outcome.observability.rank,
        outcome.observability.min_eigenvalue,
        outcome.predictive.as_ref(),
        outcome.standard.as_ref(),
    );
    write(out_dir, "summary.txt", &summary)?;
    print!("{summary}");

    let diverged = outcome
        .predictive
        .iter()
        .chain(outcome.standard.iter())
        .any(|o| o.verdict == Verdict::Diverged);
    Ok(if diverged { EXIT_DIVERGED } else { EXIT_OK })
}

fn cmd_sweep(
    config: &Path,
    delays: &str,
    gains: &str,
    observer: ObserverArg,
    check_dt: bool,
    out_dir: &Path,
) -> Result<i32> {
    let cfg = load(config)?;
    let d_values = parse_float_list(delays).map_err(|e| anyhow::anyhow!("--delays: {e}"))?;
    let eps_values = parse_float_list(gains).map_err(|e| anyhow::anyhow!("--gains: {e}"))?;
    let table = sweep(&cfg.scenario, &d_values, &eps_values, observer.into())?;
    write(out_dir, "sweep.csv", &sweep_csv(&table))?;
    let mut summary = sweep_summary(&table);

    if check_dt {
        let mut finer = cfg.scenario.clone();
        finer.dt *= 0.5;
        let table2 = sweep(&finer, &d_values, &eps_values, observer.into())?;
        let stable = table
            .cells
            .iter()
            .zip(table2.cells.iter())
            .all(|(a, b)| a.verdict == b.verdict);
        summary.push_str(&format!(
            "dt-halving check: verdicts {} at dt = {:?}\n",
            if stable { "stable" } else { "CHANGED" },
            finer.dt
        ));
        write(out_dir, "sweep_dt_check.csv", &sweep_csv(&table2))?;
    }

    write(out_dir, "sweep_summary.txt", &summary)?;
    print!("{summary}");
    Ok(EXIT_OK)
}

fn cmd_margin(config: &Path, kappa1: &str, out_dir: &Path) -> Result<i32> {
    let cfg = load(config)?;
    let kappa1_override = match kappa1 {
        "auto" => None,
        v => {
            let parsed: f64 = v.parse().with_context(|| format!("--kappa1: `{v}` is not a number"))?;
            if !(parsed > 0.0 && parsed.is_finite()) {
                bail!("--kappa1 must be positive and finite");
            }
            Some(parsed)
        }
    };
    let report = analyze_scenario(&cfg.scenario, kappa1_override)?;
    let text = margin_text(&report);
    write(out_dir, "margin.txt", &text)?;
    print!("{text}");
    Ok(if report.feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}
