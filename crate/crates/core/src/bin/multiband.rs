use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use multiband::scenario::{self, Scenario, SubspaceDim};
use multiband::window::WindowSpec;
use multiband::{Error, Result};

#[derive(Parser)]
#[command(name = "multiband", version, about = "Multi-rate sub-Nyquist sampling and reconstruction of multiband signals")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Scenario JSON file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Window constants and a (t, w, tail bound) table.
    WindowInfo {
        /// B_w·T; taken from the scenario when absent.
        #[arg(long)]
        bwt: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        period: f64,
        #[arg(long)]
        t1_over_t: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        /// Rows of the CSV table; 0 or 1 skips it.
        #[arg(long, default_value_t = 1001)]
        points: usize,
    },
    /// Index sets, sampling scheme, rank report, Γ curve and occupancy.
    Design {
        /// Comma-separated moduli replacing the scenario's scheme.
        #[arg(long, value_delimiter = ',')]
        moduli: Option<Vec<u32>>,
    },
    /// Sample file for the scheduled blocks.
    Generate {
        /// Write CSV instead of the binary format.
        #[arg(long)]
        csv: bool,
    },
    /// Block reconstruction of the signal and its components.
    Reconstruct {
        /// Sample file (.mbsp or .csv); generated from the scenario when absent.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        tau_step: Option<f64>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long)]
        out_rate: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        components: Option<Vec<usize>>,
    },
    /// Blind support estimation from block data.
    BlindScan {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        blocks: Option<usize>,
        /// Signal subspace dimension P, or `auto`.
        #[arg(long)]
        subspace_dim: Option<String>,
    },
}

fn load(global: &Global) -> Result<Scenario> {
    let path = global.config.as_ref().ok_or_else(|| Error::Invalid("--config is required".into()))?;
    let mut sc = Scenario::load(path)?;
    if let Some(seed) = global.seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn print<T: Serialize>(report: &T, files: &[PathBuf]) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(report)?);
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::WindowInfo { bwt, period, t1_over_t, delta, points } => {
            let window = match (bwt, &g.config) {
                (Some(bwt), _) => {
                    let t1 = t1_over_t.unwrap_or(0.5) * period;
                    match delta {
                        Some(d) => WindowSpec::with_delta(bwt / period, period, t1, d)?,
                        None => WindowSpec::design(bwt / period, period, t1)?,
                    }
                }
                (None, Some(_)) => {
                    let mut sc = load(g)?;
                    if let Some(r) = t1_over_t {
                        sc.window.t1_over_t = r;
                    }
                    if delta.is_some() {
                        sc.window.delta = delta;
                    }
                    sc.window_spec()?
                }
                (None, None) => return Err(Error::Invalid("window-info needs --bwt or --config".into())),
            };
            let (report, files) = scenario::window_info(&window, points, &g.out_dir)?;
            print(&report, &files)
        }
        Command::Design { moduli } => {
            let mut sc = load(g)?;
            if moduli.is_some() {
                sc.scheme.moduli = moduli;
            }
            let (report, files) = scenario::run_design(&sc, &g.out_dir)?;
            print(&report, &files)
        }
        Command::Generate { csv } => {
            let (report, files) = scenario::run_generate(&load(g)?, &g.out_dir, csv)?;
            print(&report, &files)
        }
        Command::Reconstruct { samples, tau_step, blocks, out_rate, components } => {
            let mut sc = load(g)?;
            if tau_step.is_some() {
                sc.blocks.tau_step = tau_step;
            }
            if let Some(b) = blocks {
                sc.blocks.count = b;
            }
            if let Some(r) = out_rate {
                sc.blocks.out_rate = r;
            }
            if components.is_some() {
                sc.blocks.components = components;
            }
            sc.validate()?;
            let (report, files) = scenario::run_reconstruct(&sc, &g.out_dir, samples.as_deref())?;
            print(&report, &files)
        }
        Command::BlindScan { samples, blocks, subspace_dim } => {
            let mut sc = load(g)?;
            let blind = sc.blind.as_mut().ok_or_else(|| Error::Invalid("scenario has no blind section".into()))?;
            if let Some(h) = blocks {
                blind.blocks = h;
            }
            if let Some(p) = subspace_dim {
                blind.subspace_dim = match p.as_str() {
                    "auto" => SubspaceDim::Auto,
                    n => SubspaceDim::Fixed(
                        n.parse().map_err(|_| Error::Invalid(format!("subspace dimension must be a count or `auto`, got {n}")))?,
                    ),
                };
            }
            sc.validate()?;
            let (report, files) = scenario::run_blind(&sc, &g.out_dir, samples.as_deref())?;
            print(&report, &files)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
