use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use starfd_core::experiments::{self, PowerAxis, Table};
use starfd_core::protocols::Scheme;
use starfd_core::{validate_config, Error, SystemConfig};

#[derive(Parser)]
#[command(name = "starfd", version, about = "Seeded WSR experiments for STAR-RIS assisted full-duplex links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV table.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Convergence,
    Elements,
    Location,
    Power,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Bs,
    Ul,
}

#[derive(clap::Args)]
struct RunArgs {
    experiment: Experiment,
    /// `key = value` configuration file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    /// Master seed, overriding the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32])]
    m_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0, 200.0])]
    x_list: Vec<f64>,
    /// Power values in dBm; defaults depend on the axis.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    dbm_list: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = Axis::Bs)]
    axis: Axis,
    /// Time-fraction grid spacing for time switching.
    #[arg(long)]
    grid_step: Option<f64>,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CAPS: u8 = 3;

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config { .. } | Error::Parse { .. } | Error::UnknownScheme(_))
}

fn run(args: RunArgs) -> Result<Table, Error> {
    let mut raw = match &args.config {
        Some(path) => SystemConfig::from_file(path)?,
        None => SystemConfig::default(),
    };
    if let Some(s) = args.seed {
        raw.seed = s;
    }
    if let Some(g) = args.grid_step {
        raw.ts_grid_step = g;
    }
    let cfg = validate_config(raw)?;
    let schemes: Vec<Scheme> = match &args.schemes {
        Some(list) => list.iter().filter(|s| !s.trim().is_empty()).map(|s| s.parse()).collect::<Result<_, _>>()?,
        None => match args.experiment {
            Experiment::Convergence => vec![Scheme::Es, Scheme::Ms, Scheme::Ts],
            _ => Scheme::ALL.to_vec(),
        },
    };
    match args.experiment {
        Experiment::Convergence => experiments::run_convergence(&cfg, &schemes, args.seeds),
        Experiment::Elements => experiments::sweep_elements(&cfg, &args.m_list, &schemes, args.seeds),
        Experiment::Location => experiments::sweep_location(&cfg, &args.x_list, &schemes, args.seeds),
        Experiment::Power => {
            let (axis, default) = match args.axis {
                Axis::Bs => (PowerAxis::Bs, vec![20.0, 25.0, 30.0, 35.0, 40.0]),
                Axis::Ul => (PowerAxis::Ul, vec![0.0, 5.0, 10.0, 15.0, 20.0]),
            };
            let dbm = args.dbm_list.clone().unwrap_or(default);
            experiments::sweep_power(&cfg, axis, &dbm, &schemes, args.seeds)
        }
    }
}

fn main() -> ExitCode {
    let Command::Run(args) = Cli::parse().command;
    let out = args.out.clone();
    let table = match run(args) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if is_config_error(&e) { EXIT_CONFIG } else { EXIT_FAILURE });
        }
    };
    let written = match &out {
        Some(path) => table.write(path),
        None => {
            print!("{}", table.to_csv());
            Ok(())
        }
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_FAILURE);
    }
    eprintln!("{}", experiments::summary(&table));
    if table.capped > 0 {
        ExitCode::from(EXIT_CAPS)
    } else {
        ExitCode::SUCCESS
    }
}
