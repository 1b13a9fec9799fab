use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dda_core::auction::run_auction;
use dda_core::harness::{
    emit_plot_data, evaluation_config, market_seeds, read_curves_csv, run_sweep, write_sweep,
    write_training_curves, ExperimentConfig, SweepResults,
};
use dda_core::market::{generate_market, MarketInstance};
use dda_core::policy::{Policy, PolicySpec};
use dda_core::rl::{train, write_curves_csv};
use dda_core::verify::{
    run_invariant_suite, run_oracle_suite, truthfulness_probe, InvariantSuiteConfig, ProbeConfig,
};
use dda_core::DdaError;

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "dda", version, about = "Double Dutch auction simulator")]
struct Cli {
    /// Master seed; overrides `master_seed` from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir`. Single-document commands
    /// print to stdout when it is absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyKind {
    Vanilla,
    Random,
    Learned,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write generated market instances as JSON.
    Generate {
        #[arg(long, default_value_t = 10)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Run one auction and write its trace.
    Run {
        /// Saved market JSON; a market of `--size` is generated otherwise.
        #[arg(long)]
        market: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        size: usize,
        #[arg(long, value_enum, default_value_t = PolicyKind::Vanilla)]
        policy: PolicyKind,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        k_min: u32,
        #[arg(long, default_value_t = 20)]
        k_max: u32,
    },
    /// Run every configured policy over every market size.
    Sweep,
    /// Train an auctioneer per market size.
    Train {
        #[arg(long = "size", default_values_t = [10])]
        sizes: Vec<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Compare a checkpoint with both baselines.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the protocol invariant suite; optionally report the oracle
    /// comparison and the truthfulness probe.
    Verify {
        #[arg(long, default_value_t = 1000)]
        markets: usize,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        probe: bool,
    },
}

enum Failure {
    Verify(String),
    Runtime(DdaError),
}

impl From<DdaError> for Failure {
    fn from(e: DdaError) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(EXIT_VERIFY)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, DdaError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

/// Writes `text` to `name` under `--out`, or to stdout without it.
fn emit(cli: &Cli, name: &str, text: &str) -> Result<(), Failure> {
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(name);
            fs::write(&path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Generate { size, count } => {
            let market_cfg = cfg.market_config();
            let markets: Vec<MarketInstance> = market_seeds(cfg.master_seed, *size, *count)
                .into_iter()
                .map(|s| generate_market(*size, s, &market_cfg))
                .collect::<Result<_, _>>()?;
            let text = if markets.len() == 1 {
                markets[0].to_json()?
            } else {
                serde_json::to_string_pretty(&markets).map_err(DdaError::from)?
            };
            emit(&cli, "market.json", &text)
        }
        Command::Run {
            market,
            size,
            policy,
            checkpoint,
            k_min,
            k_max,
        } => {
            let market = match market {
                Some(p) => MarketInstance::from_json(&fs::read_to_string(p)?)?,
                None => generate_market(*size, cfg.master_seed, &cfg.market_config())?,
            };
            let spec = match policy {
                PolicyKind::Vanilla => PolicySpec::Vanilla,
                PolicyKind::Random => PolicySpec::Random {
                    k_min: *k_min,
                    k_max: *k_max,
                    seed: cfg.master_seed,
                },
                PolicyKind::Learned => PolicySpec::Learned {
                    checkpoint: checkpoint.clone().ok_or_else(|| {
                        DdaError::Config("--policy learned needs --checkpoint".into())
                    })?,
                },
            };
            let mut p = Policy::from_spec(&spec)?;
            let (_, trace) = run_auction(&market, &mut p)?;
            emit(&cli, "trace.json", &trace.to_json()?)
        }
        Command::Sweep => {
            let results = run_sweep(&cfg)?;
            write_sweep(&results, &cfg.output_dir)?;
            let mut curves = Vec::new();
            for &size in &cfg.market_sizes {
                let p = cfg.output_dir.join(format!("curves_n{size}.csv"));
                if p.exists() {
                    curves.push((size, read_curves_csv(&p)?));
                }
            }
            emit_plot_data(&results, &curves, &cfg.output_dir.join("plots"))?;
            print_summary(&results);
            eprintln!("wrote {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Train { sizes, iterations } => {
            fs::create_dir_all(&cfg.output_dir)?;
            let mut all = Vec::new();
            for &size in sizes {
                let mut tc = cfg.train_config(size);
                if let Some(n) = iterations {
                    tc.iterations = *n;
                }
                let out = train(&tc)?;
                let ck = cfg.output_dir.join(format!("checkpoint_n{size}.json"));
                out.checkpoint.save(&ck)?;
                write_curves_csv(
                    &out.curves,
                    &cfg.output_dir.join(format!("curves_n{size}.csv")),
                )?;
                if let Some(last) = out.curves.last() {
                    println!(
                        "size {size}: {} steps, smoothed regret {:.3}",
                        last.env_steps, last.smoothed_regret
                    );
                }
                eprintln!("wrote {}", ck.display());
                all.push((size, out.curves));
            }
            let plots = cfg.output_dir.join("plots");
            fs::create_dir_all(&plots)?;
            write_training_curves(&all, &plots.join("training_curves.csv"))?;
            Ok(())
        }
        Command::Eval { checkpoint } => {
            let ecfg = evaluation_config(&cfg, checkpoint)?;
            let results = run_sweep(&ecfg)?;
            write_sweep(&results, &ecfg.output_dir)?;
            print_summary(&results);
            for &size in &ecfg.market_sizes {
                if let (Some(l), Some(v)) =
                    (results.cell("learned", size), results.cell("vanilla", size))
                {
                    println!(
                        "size {size}: learned/vanilla sw_econ {:.3} cost {:.3}",
                        l.sw_econ.mean / v.sw_econ.mean,
                        l.cost.mean / v.cost.mean
                    );
                }
            }
            Ok(())
        }
        Command::Verify {
            markets,
            oracle,
            probe,
        } => verify(&cfg, &cli, *markets, *oracle, *probe),
    }
}

fn verify(
    cfg: &ExperimentConfig,
    cli: &Cli,
    markets: usize,
    oracle: bool,
    probe: bool,
) -> Result<(), Failure> {
    let suite = InvariantSuiteConfig {
        markets,
        seed: cfg.master_seed,
        market: cfg.market_config(),
        ..InvariantSuiteConfig::default()
    };
    let report = run_invariant_suite(&suite)?;
    println!(
        "invariants: {} auctions, {} violations",
        report.auctions,
        report.violations.len()
    );
    for v in report.violations.iter().take(10) {
        println!("  {v:?}");
    }
    if oracle {
        let r = run_oracle_suite(500, 20, cfg.master_seed, &cfg.market_config())?;
        println!(
            "oracle: {} markets, {} differ from the greedy matching, {} exceed the regret bound",
            r.cases.len(),
            r.oracle_failures().len(),
            r.regret_failures().len()
        );
    }
    if probe {
        let r = truthfulness_probe(&ProbeConfig {
            seed: cfg.master_seed,
            market: cfg.market_config(),
            ..ProbeConfig::default()
        })?;
        println!(
            "probe: {} misreports over {} markets, {} profitable ({} buyer, {} seller), max gain {:.3}",
            r.misreports_tried,
            r.markets,
            r.deviations.len(),
            r.buyer_deviations,
            r.seller_deviations,
            r.max_gain
        );
        if let Some(dir) = &cli.out {
            fs::create_dir_all(dir)?;
            r.write_json(&dir.join("probe.json"))?;
        }
    }
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Verify(format!(
            "{} invariant violations",
            report.violations.len()
        )))
    }
}

fn print_summary(results: &SweepResults) {
    println!(
        "{:<10} {:>5} {:>10} {:>8} {:>10} {:>8} {:>8}",
        "policy", "size", "sw_econ", "se", "cost", "se", "rounds"
    );
    for c in &results.summary {
        println!(
            "{:<10} {:>5} {:>10.2} {:>8.2} {:>10.3} {:>8.3} {:>8.1}",
            c.policy,
            c.market_size,
            c.sw_econ.mean,
            c.sw_econ.stderr,
            c.cost.mean,
            c.cost.stderr,
            c.rounds.mean
        );
    }
}
