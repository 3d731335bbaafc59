use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rlvs_core::config::RunConfig;
use rlvs_core::ingest;
use rlvs_core::pipeline::{self, Checkpoint};
use rlvs_core::surface::{self, SurfaceFormat};
use rlvs_core::voltools;

#[derive(Parser)]
#[command(name = "rlvs", version, about = "Realized local volatility surfaces from tick data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults to the reference protocol.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Svg,
}

impl From<Format> for SurfaceFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => SurfaceFormat::Csv,
            Format::Json => SurfaceFormat::Json,
            Format::Svg => SurfaceFormat::Svg,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one session of geometric Brownian motion ticks.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Annual volatility.
        #[arg(long)]
        sigma: Option<f64>,
        /// Annual drift.
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        s0: Option<f64>,
        #[arg(long)]
        n_ticks: Option<usize>,
    },
    /// Fit the mixture model to a tick file and write a chain checkpoint.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Tick CSV with header `time_s,price`.
        #[arg(long)]
        ticks: Option<PathBuf>,
        #[arg(long)]
        n_burn: Option<usize>,
        #[arg(long)]
        n_draws: Option<usize>,
    },
    /// Build the volatility surface from a checkpoint.
    Surface {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Output format; inferred from the output extension when omitted.
        #[arg(long, value_enum)]
        format: Option<Format>,
    },
    /// Implied volatility curve from option quotes at one expiry.
    Implied {
        #[command(flatten)]
        common: Common,
        /// Quote CSV with header `strike,expiry_years,mid,flag`.
        #[arg(long)]
        quotes: Option<PathBuf>,
        #[arg(long)]
        spot: Option<f64>,
    },
    /// Compare the realized surface with an implied curve.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Surface CSV or JSON.
        #[arg(long)]
        surface: Option<PathBuf>,
        #[arg(long)]
        quotes: Option<PathBuf>,
        #[arg(long)]
        spot: Option<f64>,
        /// Normalized snapshot times, comma separated.
        #[arg(long, value_delimiter = ',')]
        snapshots: Option<Vec<f64>>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::paper_protocol(),
    };
    Ok(apply_seed(cfg, common))
}

fn apply_seed(cfg: RunConfig, common: &Common) -> RunConfig {
    match common.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    }
}

fn echo_config(cfg: &RunConfig) {
    eprintln!("# resolved config");
    for line in cfg.to_toml_string().lines() {
        eprintln!("#   {line}");
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("RLVS_THREADS") {
        let n: usize = value
            .trim()
            .parse()
            .with_context(|| format!("RLVS_THREADS must be a positive integer, got `{value}`"))?;
        if n == 0 {
            bail!("RLVS_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn infer_format(path: &Path) -> SurfaceFormat {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("json") => SurfaceFormat::Json,
        Some("svg") => SurfaceFormat::Svg,
        _ => SurfaceFormat::Csv,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            common,
            sigma,
            mu,
            s0,
            n_ticks,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(v) = sigma {
                cfg.synth.sigma = v;
            }
            if let Some(v) = mu {
                cfg.synth.mu = v;
            }
            if let Some(v) = s0 {
                cfg.synth.s0 = v;
            }
            if let Some(v) = n_ticks {
                cfg.synth.n_ticks = v;
            }
            cfg.validate()?;
            echo_config(&cfg);
            let out = common.out.unwrap_or(cfg.io.ticks.clone());
            let ticks = pipeline::synth(&cfg)?;
            ticks.write_csv(&out)?;
            println!("seed {}: wrote {} ticks to {}", cfg.seed, ticks.len(), out.display());
        }
        Command::Fit {
            common,
            ticks,
            n_burn,
            n_draws,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(v) = n_burn {
                cfg.hmc.n_burn = v;
            }
            if let Some(v) = n_draws {
                cfg.hmc.n_draws = v;
            }
            cfg.validate()?;
            echo_config(&cfg);
            let ticks_path = ticks.unwrap_or(cfg.io.ticks.clone());
            let out = common.out.unwrap_or(cfg.io.checkpoint.clone());
            let series = ingest::load_ticks(&ticks_path, cfg.data.session_length)?;
            let ck = pipeline::fit(&cfg, &series)?;
            ck.save(&out)?;
            let d = &ck.diagnostics;
            println!(
                "acceptance rate {:.4} (sampling {:.4}), step size {:.5}, divergences {}, mean |dH| {:.4}",
                d.acceptance_rate,
                d.acceptance_rate_sampling.unwrap_or(0.0),
                d.step_size,
                d.divergences,
                d.mean_abs_delta_h
            );
            if d.stuck {
                eprintln!("warning: every post-burn-in proposal was rejected");
            }
            println!("wrote checkpoint with {} draws to {}", ck.draws.len(), out.display());
        }
        Command::Surface {
            common,
            checkpoint,
            format,
        } => {
            // the checkpoint's own config is the default so synth -> fit -> surface agree
            let ck_path = match (&checkpoint, &common.config) {
                (Some(p), _) => p.clone(),
                (None, Some(_)) => load_config(&common)?.io.checkpoint,
                (None, None) => RunConfig::default().io.checkpoint,
            };
            let ck = Checkpoint::load(&ck_path)?;
            let cfg = match &common.config {
                Some(_) => load_config(&common)?,
                None => apply_seed(ck.config.clone(), &common),
            };
            cfg.validate()?;
            echo_config(&cfg);
            let out = common.out.unwrap_or(cfg.io.surface.clone());
            let format = format.map(SurfaceFormat::from).unwrap_or_else(|| infer_format(&out));
            let s = pipeline::build_surface(&cfg, &ck)?;
            surface::export_surface(&s, &out, format)?;
            let masked = s.cells.iter().filter(|c| c.masked).count();
            println!(
                "wrote {} cells ({} counterfactual) to {}",
                s.cells.len(),
                masked,
                out.display()
            );
        }
        Command::Implied { common, quotes, spot } => {
            let mut cfg = load_config(&common)?;
            if spot.is_some() {
                cfg.compare.spot = spot;
            }
            cfg.validate()?;
            echo_config(&cfg);
            let quotes = quotes.unwrap_or(cfg.io.quotes.clone());
            let out = common.out.unwrap_or(cfg.io.curve.clone());
            let curve = pipeline::implied(&cfg, &quotes)?;
            for s in &curve.skipped {
                eprintln!("skipped quote {} (strike {}): {}", s.index, s.strike, s.reason);
            }
            write(&out, &voltools::curve_to_csv(&curve))?;
            println!("wrote {} strikes to {}", curve.points.len(), out.display());
        }
        Command::Compare {
            common,
            surface,
            quotes,
            spot,
            snapshots,
        } => {
            let mut cfg = load_config(&common)?;
            if spot.is_some() {
                cfg.compare.spot = spot;
            }
            if let Some(s) = snapshots {
                cfg.compare.snapshots = s;
            }
            cfg.validate()?;
            echo_config(&cfg);
            let surface_path = surface.unwrap_or(cfg.io.surface.clone());
            let quotes = quotes.unwrap_or(cfg.io.quotes.clone());
            let out = common.out.unwrap_or(cfg.io.comparison.clone());
            let s = surface::read_surface(&surface_path)?;
            let curve = pipeline::implied(&cfg, &quotes)?;
            for sk in &curve.skipped {
                eprintln!("skipped quote {} (strike {}): {}", sk.index, sk.strike, sk.reason);
            }
            let rows = pipeline::compare(&s, &curve, &cfg.compare.snapshots)?;
            write(&out, &pipeline::comparison_to_csv(&rows))?;
            println!("wrote {} comparison rows to {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads().and_then(|_| run(cli)) {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
