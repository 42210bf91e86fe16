use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tstar::timegrid::StationId;
use tstar_cli::{configure_jobs, CliError, CliResult, CvMode, RunConfig, Stage};

#[derive(Parser, Debug)]
#[command(name = "tstar", version, about = "Two-stage probabilistic demand forecasting for bike-share stations")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, env = "TSTAR_SEED", global = true)]
    seed: Option<u64>,
    /// Worker threads for station-parallel phases (0 = all cores).
    #[arg(long, env = "TSTAR_JOBS", global = true)]
    jobs: Option<usize>,
    /// Print the effective configuration, defaults included, and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CvArg {
    None,
    Rolling,
    Sliding,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the input files into a dataset bundle.
    Ingest,
    /// Fit stage 1, stage 2, or both.
    Train {
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        #[arg(long)]
        target: Option<String>,
    },
    /// Forecast every test quarter.
    Forecast {
        #[arg(long)]
        target: Option<String>,
        /// Station file of ids to forecast through the mean station embedding.
        #[arg(long)]
        zero_shot: Option<PathBuf>,
        /// Comma-separated station ids (default: the trained stations).
        #[arg(long, value_delimiter = ',')]
        stations: Option<Vec<String>>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Score a forecast file, or backtest with retraining per fold.
    Evaluate {
        #[arg(long)]
        target: Option<String>,
        #[arg(long)]
        forecast: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "none")]
        cv: CvArg,
    },
    /// Write a synthetic dataset in the ingest schemas.
    Synth {
        /// `key = value` spec file (stations, days, seed, quarter_weights, ...).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Days at the end reserved for the test split in the generated config.
        #[arg(long, default_value_t = 14)]
        test_days: usize,
    },
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(jobs) = cli.jobs {
        cfg.set("jobs", &jobs.to_string())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = load_config(&cli)?;
    if cli.print_config {
        print!("{}", cfg.render());
        return Ok(());
    }
    let command = cli
        .command
        .ok_or_else(|| CliError::config("missing subcommand (see `tstar --help`)"))?;
    configure_jobs(cfg.jobs()?);
    match command {
        Command::Ingest => {
            let out = tstar_cli::cmd_ingest(&cfg)?;
            print!("{}", out.report);
            println!("wrote {}", out.bundle.display());
        }
        Command::Train { stage, target } => {
            if let Some(t) = target {
                cfg.set("target", &t)?;
            }
            let stage = match stage {
                StageArg::One => Stage::One,
                StageArg::Two => Stage::Two,
                StageArg::Both => Stage::Both,
            };
            let out = tstar_cli::cmd_train(&cfg, stage)?;
            for (name, loss) in &out.final_losses {
                println!("{name}: final loss {loss:.5}");
            }
            for p in &out.written {
                println!("wrote {}", p.display());
            }
        }
        Command::Forecast {
            target,
            zero_shot,
            stations,
            output,
        } => {
            if let Some(t) = target {
                cfg.set("target", &t)?;
            }
            let ids = stations.map(|v| v.iter().map(|s| StationId::from(s.as_str())).collect());
            let path = tstar_cli::cmd_forecast(&cfg, ids, zero_shot.as_deref(), output)?;
            println!("wrote {}", path.display());
        }
        Command::Evaluate { target, forecast, cv } => {
            if let Some(t) = target {
                cfg.set("target", &t)?;
            }
            let cv = match cv {
                CvArg::None => CvMode::None,
                CvArg::Rolling => CvMode::Rolling,
                CvArg::Sliding => CvMode::Sliding,
            };
            let out = tstar_cli::cmd_evaluate(&cfg, forecast.as_deref(), cv)?;
            for r in &out.reports {
                let s = &r.overall;
                println!("n={} mae={:.4} rmse={:.4} mcrps={:.4} mis={:.4}", s.count, s.mae, s.rmse, s.mcrps, s.mis);
            }
            for p in &out.written {
                println!("wrote {}", p.display());
            }
        }
        Command::Synth { spec, out, test_days } => {
            let text = match &spec {
                Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
                None => String::new(),
            };
            let mut spec = tstar_cli::parse_synth_spec(&text)?;
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            let conf = tstar_cli::cmd_synth(&spec, &out, test_days)?;
            println!("wrote {}", conf.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code as u8)
        }
    }
}
