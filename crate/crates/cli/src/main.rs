//! `resolve`: resonator loss analysis from the command line.
//!
//! Exit status: 0 on success, 1 for input or I/O errors, 2 when a model
//! cannot be fitted.

mod campaign;
mod commands;
mod config;
mod failure;
mod simulate;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::campaign::{load_manifest, run_budget, Attribution};
use crate::commands::{
    emit, etch_rate_file, fit_power_file, fit_shift_file, fit_temp_file, fit_trace_file, resolve_temperature,
    trace_status, xps_file, TracePower,
};
use crate::config::{Config, LineName};
use crate::failure::{write_file, CmdResult, Failure, Stage};

#[derive(Parser)]
#[command(
    name = "resolve",
    version,
    about = "Resonator loss analysis: trace fits, TLS models, XPS oxides, loss budgets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one reflection trace (`freq_hz,s11_re,s11_im`).
    FitTrace {
        #[arg(long)]
        input: PathBuf,
        /// Settings file; may hold only the fit section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Power at the chip, W; adds the mean photon number to the result.
        #[arg(long)]
        power_w: Option<f64>,
        /// Source power, dBm; converted with the configured attenuation.
        #[arg(long, allow_hyphen_values = true)]
        source_dbm: Option<f64>,
    },
    /// Fit the power-saturation model to `photon_number,delta_int,sigma`.
    FitPower {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        f_r: f64,
        /// Stage temperature, K.
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the tanh temperature model to `temperature_k,delta_int,sigma`.
    FitTemp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        f_r: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the frequency-shift model to `temperature_k,frac_shift`.
    FitShift {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        f_r: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a core-level spectrum (`be_ev,counts`) and solve the oxide stack.
    Xps {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        line: LineName,
        /// Settings file; may hold only the xps section.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit etch rates to `etch_time_s,thickness_nm`.
    EtchRate {
        #[arg(long)]
        input: PathBuf,
        /// Fit two segments joined at the best interior time.
        #[arg(long)]
        breakpoint: bool,
        /// Rate of the faster-etching material, pm/s, for a selectivity ratio.
        #[arg(long)]
        fast_rate: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-chip statistics, interface attribution and thickness regression.
    Budget {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write `<out>_losses.svg` and `<out>_budget.svg`.
        #[arg(long)]
        svg: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Generate a synthetic campaign with its truth.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn set_jobs(jobs: Option<usize>) -> CmdResult<()> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Failure::Input("--jobs must be at least 1".to_string()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().input()?;
    }
    Ok(())
}

fn svg_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}_{suffix}.svg"))
}

fn run(cli: Cli) -> CmdResult<()> {
    match cli.command {
        Command::FitTrace {
            input,
            config,
            out,
            power_w,
            source_dbm,
        } => {
            let config = Config::load(config.as_deref(), "fit")?;
            let record = fit_trace_file(&input, &config, &TracePower { power_w, source_dbm })?;
            emit(&record, out.as_deref())?;
            trace_status(&record)
        }
        Command::FitPower {
            input,
            f_r,
            temperature,
            config,
            out,
        } => {
            let config = Config::load(config.as_deref(), "tls")?;
            let t = resolve_temperature(temperature, &config)?;
            emit(&fit_power_file(&input, f_r, t)?, out.as_deref())
        }
        Command::FitTemp { input, f_r, out } => emit(&fit_temp_file(&input, f_r)?, out.as_deref()),
        Command::FitShift { input, f_r, out } => emit(&fit_shift_file(&input, f_r)?, out.as_deref()),
        Command::Xps {
            input,
            line,
            config,
            out,
        } => {
            let config = Config::load(config.as_deref(), "xps")?;
            emit(&xps_file(&input, line, &config)?, out.as_deref())
        }
        Command::EtchRate {
            input,
            breakpoint,
            fast_rate,
            out,
        } => emit(&etch_rate_file(&input, breakpoint, fast_rate)?, out.as_deref()),
        Command::Budget {
            manifest,
            out,
            svg,
            config,
            jobs,
        } => {
            set_jobs(jobs)?;
            let config = Config::load(config.as_deref(), "budget")?;
            let parsed = load_manifest(&manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let out = match &parsed.output_dir {
                Some(dir) if out.is_relative() => base.join(dir).join(&out),
                _ => out,
            };
            let report = run_budget(&parsed, base, &config)?;
            emit(&report, Some(&out))?;
            if svg {
                write_file(&svg_path(&out, "losses"), &svg::loss_bars(&report.chips))?;
                if let Attribution::Computed(budget) = &report.attribution {
                    write_file(&svg_path(&out, "budget"), &svg::budget_bar(budget))?;
                }
            }
            if let Attribution::Skipped { reason } = &report.attribution {
                eprintln!("{reason}");
            }
            Ok(())
        }
        Command::Simulate { spec, out, jobs } => {
            set_jobs(jobs)?;
            let text = std::fs::read_to_string(&spec).input_at(&spec)?;
            let parsed = simulate::parse_spec(&text).map_err(|e| e.at(&spec))?;
            simulate::run_simulate(&parsed, &out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("resolve: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
