use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pseudomarket::bounds::{
    cdf_cap, fraction_bound, modified_utility, symmetric_optimum, stationary_adversary_cap, three_fifths_supremum, BoundReport,
    Method, UtilityVariant,
};
use pseudomarket::harness::{
    default_adversary_grid, estimate_robustness, parse_tie_break, reproduce_figure, run_experiment, with_thread_limit,
    ExperimentConfig, FigureConfig, RobustnessQuery,
};
use pseudomarket::strategies::{BidDistribution, StrategySpec};
use pseudomarket::values::{ideal_policy, ValueDistribution};

const GRAMMARS: &str = "\
Value distributions:
  bernoulli:<p>                      value 1 w.p. p, else 0
  discrete:<v1>:<p1>,<v2>:<p2>,...   finite support, probabilities sum to 1
  icdf:<path>                        two-column CSV of (u, Q(u)) knots, u from 0 to 1

Bid distributions:
  uniform:<lo>:<hi> | point:<x> | discrete:<v>:<p>,... | icdf:<path>

Strategies:
  rrb[:bbar]           uniform bids on [0, bbar] in top-quantile rounds (bbar = 1+sqrt2)
  det[:bid]            fixed bid (default 2) in top-quantile rounds
  fixed:<bid-dist>     i.i.d. bids from <bid-dist> in top-quantile rounds
  const:<c>            bid c every round while the budget covers it
  advcdf[:delta]       stationary adversary (delta defaults to sqrt(3 ln T / T))

Tie-break rules:
  tracked | uniform | priority:<i>,<j>,...

Set PSEUDOMARKET_THREADS to cap worker threads.
Exit codes: 0 success, 1 runtime error, 2 usage error.";

#[derive(Parser)]
#[command(name = "pseudomarket", version, about = "Repeated first-price auctions with artificial currency", after_help = GRAMMARS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ideal per-round utility and its acceptance policy.
    Ideal {
        #[arg(long)]
        dist: ValueDistribution,
        #[arg(long)]
        alpha: f64,
    },
    /// Run an experiment from a TOML file or from flags.
    #[command(after_help = GRAMMARS)]
    Simulate(SimulateArgs),
    /// Worst-case fraction of an agent over a grid of adversaries.
    #[command(after_help = GRAMMARS)]
    Robustness(RobustnessArgs),
    /// Analytic bounds, printed as JSON.
    Bounds {
        #[command(subcommand)]
        verb: BoundVerb,
    },
    /// Fraction-of-ideal curves for n agents, written as CSV.
    ReproduceFigure {
        #[arg(long = "T", default_value_t = 100_000)]
        horizon: usize,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        n_min: usize,
        #[arg(long, default_value_t = 30)]
        n_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML experiment file; other experiment flags are then rejected.
    #[arg(long, conflicts_with_all = ["agent", "dist", "shares", "horizon", "reps", "seed", "tie_break", "tracked"])]
    config: Option<PathBuf>,
    /// Strategy of each agent, in order (repeat once per agent).
    #[arg(long)]
    agent: Vec<StrategySpec>,
    /// Value distribution of each agent, in order.
    #[arg(long)]
    dist: Vec<ValueDistribution>,
    /// Fair shares (default: equal).
    #[arg(long, value_delimiter = ',')]
    shares: Vec<f64>,
    #[arg(long = "T")]
    horizon: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tie_break: Option<String>,
    #[arg(long)]
    tracked: Option<usize>,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the round-by-round transcript of replication 0 as CSV.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Args)]
struct RobustnessArgs {
    #[arg(long)]
    agent: StrategySpec,
    #[arg(long)]
    alpha: f64,
    /// Agent values (default bernoulli:<alpha>).
    #[arg(long)]
    agent_dist: Option<ValueDistribution>,
    /// Adversary strategies (default const:0.25..2.5 step 0.25 and advcdf).
    #[arg(long)]
    grid: Vec<StrategySpec>,
    #[arg(long = "T", default_value_t = 100_000)]
    horizon: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BoundVerb {
    /// 1 - F(b')/b' for an agent bid distribution.
    Fraction {
        #[arg(long)]
        dist: BidDistribution,
        #[arg(long)]
        b_prime: f64,
    },
    /// Largest admissible CDF value (1 - beta) x / (1 - alpha).
    Cdfcap {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        x: f64,
    },
    /// Expected fraction of one bid distribution against another.
    Modutil {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        agent: BidDistribution,
        #[arg(long)]
        adversary: BidDistribution,
        /// Ignore the adversary's spending in rounds the agent bids.
        #[arg(long)]
        simplified: bool,
    },
    /// Supremum of (2 - sqrt(y^2 - 4y + 5)) / y over [1, 100].
    Threefifths {
        #[arg(long, default_value_t = 1e-3)]
        step: f64,
    },
    /// 1 - (1 - 1/n)^n.
    Symopt {
        #[arg(long)]
        n: u64,
    },
    /// 1 - 1/e + alpha/e.
    Thm3 {
        #[arg(long)]
        alpha: f64,
    },
}

/// Six decimals without trailing zeros.
fn short(x: f64) -> String {
    let s = format!("{x:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn write_json<T: Serialize>(value: &T, out: Option<&PathBuf>) -> Result<(), String> {
    match out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
            serde_json::to_writer_pretty(BufWriter::new(file), value).map_err(|e| format!("{}: {e}", path.display()))
        }
        None => {
            let mut stdout = io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, value).map_err(|e| e.to_string())?;
            writeln!(stdout).map_err(|e| e.to_string())
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<(), String> {
    let cfg = match &args.config {
        Some(path) => {
            let mut cfg = ExperimentConfig::from_toml_path(path).map_err(|e| e.to_string())?;
            if args.out.is_some() {
                cfg.output_path = args.out.clone();
            }
            cfg
        }
        None => {
            if args.agent.is_empty() {
                return Err("give --config or at least one --agent".into());
            }
            let n = args.agent.len();
            let tracked = args.tracked.unwrap_or(0);
            let mut cfg = ExperimentConfig::new(
                args.horizon.unwrap_or(100_000),
                args.reps.unwrap_or(10),
                args.seed.unwrap_or(0),
                args.agent.clone(),
                args.dist.clone(),
            );
            if !args.shares.is_empty() {
                cfg.fair_shares = args.shares.clone();
            }
            cfg.tracked_agent = tracked;
            cfg.tie_break = parse_tie_break(args.tie_break.as_deref().unwrap_or("tracked"), n, tracked)
                .map_err(|e| e.to_string())?;
            cfg.output_path = args.out.clone();
            cfg
        }
    };
    cfg.validate().map_err(|e| e.to_string())?;

    if let Some(path) = &args.transcript {
        let transcript = cfg.transcript(0).map_err(|e| e.to_string())?;
        let file = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut w = BufWriter::new(file);
        transcript
            .write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    for a in &report.agents {
        println!(
            "agent {} ({}): v_star={} fraction={} std={} ci95={}",
            a.agent,
            cfg.profile[a.agent],
            short(a.v_star),
            short(a.fraction.mean),
            short(a.fraction.std),
            short(a.fraction.ci95)
        );
    }
    if let Some(path) = &cfg.output_path {
        report.write_json(path).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn robustness(args: RobustnessArgs) -> Result<(), String> {
    let mut query = RobustnessQuery::new(args.agent, args.alpha, args.horizon, args.reps, args.seed)
        .map_err(|e| e.to_string())?;
    if let Some(d) = args.agent_dist {
        query.agent_dist = d;
    }
    query.grid = if args.grid.is_empty() { default_adversary_grid() } else { args.grid };
    let result = estimate_robustness(&query).map_err(|e| e.to_string())?;
    for row in &result.table {
        eprintln!("{}: {} +/- {}", row.adversary, short(row.fraction.mean), short(row.fraction.ci95));
    }
    write_json(&result, args.out.as_ref())
}

fn bounds(verb: BoundVerb) -> Result<(), String> {
    let report = match verb {
        BoundVerb::Fraction { dist, b_prime } => {
            if !(b_prime >= 0.0) {
                return Err(format!("b' must be nonnegative, got {b_prime}"));
            }
            BoundReport {
                argpoint: Some(b_prime),
                ..BoundReport::closed_form("fraction_bound", fraction_bound(&dist, b_prime))
            }
        }
        BoundVerb::Cdfcap { beta, alpha, x } => BoundReport {
            argpoint: Some(x),
            ..BoundReport::closed_form("cdf_cap", cdf_cap(beta, alpha, x).map_err(|e| e.to_string())?)
        },
        BoundVerb::Modutil {
            alpha,
            agent,
            adversary,
            simplified,
        } => {
            let variant = if simplified { UtilityVariant::Simplified } else { UtilityVariant::Exact };
            BoundReport {
                quantity: "modified_utility".into(),
                value: modified_utility(alpha, &agent, &adversary, variant).map_err(|e| e.to_string())?,
                argpoint: None,
                method: Method::AtomProduct,
                resolution: None,
            }
        }
        BoundVerb::Threefifths { step } => three_fifths_supremum(step, 200).map_err(|e| e.to_string())?,
        BoundVerb::Symopt { n } => BoundReport {
            argpoint: Some(n as f64),
            ..BoundReport::closed_form("symmetric_optimum", symmetric_optimum(n).map_err(|e| e.to_string())?)
        },
        BoundVerb::Thm3 { alpha } => BoundReport {
            argpoint: Some(alpha),
            ..BoundReport::closed_form("stationary_adversary_cap", stationary_adversary_cap(alpha).map_err(|e| e.to_string())?)
        },
    };
    write_json(&report, None)
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Ideal { dist, alpha } => {
            let p = ideal_policy(&dist, alpha).map_err(|e| e.to_string())?;
            println!("v_star={}", short(p.v_star));
            println!("threshold={}", short(p.threshold));
            println!("q={}", short(p.accept_prob));
            Ok(())
        }
        Command::Simulate(args) => with_thread_limit(|| simulate(args)),
        Command::Robustness(args) => with_thread_limit(|| robustness(args)),
        Command::Bounds { verb } => bounds(verb),
        Command::ReproduceFigure {
            horizon,
            reps,
            n_min,
            n_max,
            seed,
            out,
        } => with_thread_limit(|| {
            let cfg = FigureConfig {
                horizon,
                reps,
                n_min,
                n_max,
                base_seed: seed,
            };
            let data = reproduce_figure(&cfg, &out).map_err(|e| e.to_string())?;
            for s in &data.summary {
                println!("n={} {}: {} +/- {}", s.n, s.profile, short(s.mean), short(s.ci95));
            }
            Ok(())
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
