//! Monte Carlo experiments on top of the auction engine.
//!
//! Replication `k` of an experiment runs with episode seed `base_seed + k`;
//! agent substreams are derived from that seed and the agent index. Results
//! are therefore identical whether replications run in parallel or not.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{run_episode, run_episode_summary, AuctionConfig, EpisodeSummary, TieBreak, Transcript};
use crate::strategies::{AgentContext, Strategy, StrategySpec};
use crate::values::{ideal_policy, ValueDistribution};

/// Environment variable capping worker threads (0 or unset = rayon default).
pub const THREADS_ENV: &str = "PSEUDOMARKET_THREADS";

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub horizon: usize,
    pub reps: usize,
    pub base_seed: u64,
    pub profile: Vec<StrategySpec>,
    pub dists: Vec<ValueDistribution>,
    pub fair_shares: Vec<f64>,
    pub tie_break: TieBreak,
    pub tracked_agent: usize,
    pub output_path: Option<PathBuf>,
}

impl Serialize for StrategySpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl Serialize for ValueDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// On-disk form of [`ExperimentConfig`].
///
/// ```toml
/// horizon = 100000
/// reps = 10
/// seed = 7
/// profile = ["rrb", "const:1"]
/// dists = ["bernoulli:0.5", "bernoulli:0.5"]
/// fair_shares = [0.5, 0.5]        # optional, default equal shares
/// tie_break = "tracked"           # "tracked" | "uniform" | "priority:1,0"
/// tracked_agent = 0
/// output = "report.json"          # optional
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n: Option<usize>,
    #[serde(alias = "T")]
    pub horizon: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    pub profile: Vec<String>,
    pub dists: Vec<String>,
    pub fair_shares: Option<Vec<f64>>,
    pub tie_break: Option<String>,
    #[serde(default)]
    pub tracked_agent: usize,
    pub output: Option<PathBuf>,
}

fn default_reps() -> usize {
    1
}

/// Parses `tracked`, `uniform` or `priority:<i>,<j>,...`.
pub fn parse_tie_break(s: &str, n: usize, tracked: usize) -> Result<TieBreak> {
    match s {
        "tracked" => Ok(TieBreak::favoring(tracked, n)),
        "uniform" => Ok(TieBreak::UniformRandom),
        _ => {
            let order = s
                .strip_prefix("priority:")
                .ok_or_else(|| Error::parse(s, "expected tracked, uniform or priority:<order>"))?;
            let order = order
                .split(',')
                .map(|i| i.trim().parse::<usize>().map_err(|_| Error::parse(s, format!("`{i}` is not an index"))))
                .collect::<Result<Vec<_>>>()?;
            Ok(TieBreak::FixedPriority(order))
        }
    }
}

impl ExperimentConfig {
    /// Equal fair shares, tracked agent 0 winning ties.
    pub fn new(horizon: usize, reps: usize, base_seed: u64, profile: Vec<StrategySpec>, dists: Vec<ValueDistribution>) -> Self {
        let n = profile.len();
        ExperimentConfig {
            n,
            horizon,
            reps,
            base_seed,
            profile,
            dists,
            fair_shares: vec![1.0 / n.max(1) as f64; n],
            tie_break: TieBreak::favoring(0, n),
            tracked_agent: 0,
            output_path: None,
        }
    }

    pub fn from_file(file: ConfigFile) -> Result<Self> {
        let n = file.n.unwrap_or(file.profile.len());
        let profile = file.profile.iter().map(|s| s.parse()).collect::<Result<Vec<StrategySpec>>>()?;
        let dists = file.dists.iter().map(|s| s.parse()).collect::<Result<Vec<ValueDistribution>>>()?;
        let tie_break = parse_tie_break(file.tie_break.as_deref().unwrap_or("tracked"), n, file.tracked_agent)?;
        let cfg = ExperimentConfig {
            n,
            horizon: file.horizon,
            reps: file.reps,
            base_seed: file.seed,
            profile,
            dists,
            fair_shares: file.fair_shares.unwrap_or_else(|| vec![1.0 / n.max(1) as f64; n]),
            tie_break,
            tracked_agent: file.tracked_agent,
            output_path: file.output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn auction(&self) -> Result<AuctionConfig> {
        AuctionConfig::new(self.horizon, self.fair_shares.clone(), self.tie_break.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.profile.len() != self.n || self.dists.len() != self.n || self.fair_shares.len() != self.n {
            return Err(Error::InvalidConfig(format!(
                "n = {} but got {} strategies, {} distributions, {} fair shares",
                self.n,
                self.profile.len(),
                self.dists.len(),
                self.fair_shares.len()
            )));
        }
        if self.tracked_agent >= self.n {
            return Err(Error::InvalidConfig(format!("tracked agent {} out of range", self.tracked_agent)));
        }
        self.auction()?;
        Ok(())
    }

    /// Fresh strategy instances for one episode.
    pub fn build_strategies(&self) -> Result<Vec<Box<dyn Strategy>>> {
        self.profile
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                spec.build(&AgentContext {
                    fair_share: self.fair_shares[i],
                    value_dist: &self.dists[i],
                    horizon: self.horizon,
                })
            })
            .collect()
    }

    pub fn episode_seed(&self, rep: usize) -> u64 {
        self.base_seed.wrapping_add(rep as u64)
    }

    /// Ideal per-round utility of every agent.
    pub fn ideal_utilities(&self) -> Result<Vec<f64>> {
        self.dists
            .iter()
            .zip(&self.fair_shares)
            .enumerate()
            .map(|(i, (d, &a))| {
                if a <= 0.0 {
                    return Err(Error::InvalidConfig(format!("agent {i} has zero fair share; fraction undefined")));
                }
                let v = ideal_policy(d, a)?.v_star;
                if v <= 0.0 {
                    return Err(Error::InvalidConfig(format!("agent {i} has zero ideal utility; fraction undefined")));
                }
                Ok(v)
            })
            .collect()
    }

    /// Full transcript of replication `rep`.
    pub fn transcript(&self, rep: usize) -> Result<Transcript> {
        self.validate()?;
        let mut strategies = self.build_strategies()?;
        run_episode(&self.auction()?, &mut strategies, &self.dists, self.episode_seed(rep))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub rep: usize,
    pub agent: usize,
    pub total_utility: f64,
    pub ideal_total: f64,
    pub fraction: f64,
    pub total_payment: f64,
    pub initial_budget: f64,
    pub positive_value_rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std: f64,
    pub ci95: f64,
}

impl Estimate {
    /// Mean, sample standard deviation and normal 95% half-width.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean,
            std,
            ci95: Z95 * std / n.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSummary {
    pub agent: usize,
    pub v_star: f64,
    pub fraction: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub n: usize,
    pub horizon: usize,
    pub reps: usize,
    pub base_seed: u64,
    pub tracked_agent: usize,
    pub rows: Vec<ReportRow>,
    pub agents: Vec<AgentSummary>,
    /// Mean fraction over all agents and replications.
    pub cross_agent_mean: f64,
}

impl Report {
    pub fn tracked(&self) -> &AgentSummary {
        &self.agents[self.tracked_agent]
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}

/// Runs `f` on a pool sized by `PSEUDOMARKET_THREADS`, or on rayon's global
/// pool when the variable is unset or 0.
pub fn with_thread_limit<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn run_rep(cfg: &ExperimentConfig, auction: &AuctionConfig, rep: usize) -> Result<EpisodeSummary> {
    let mut strategies = cfg.build_strategies()?;
    run_episode_summary(auction, &mut strategies, &cfg.dists, cfg.episode_seed(rep))
}

/// Runs all replications and aggregates fractions of ideal utility.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let v_star = cfg.ideal_utilities()?;
    let auction = cfg.auction()?;
    let episodes: Vec<EpisodeSummary> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_rep(cfg, &auction, rep))
        .collect::<Result<_>>()?;

    let t = cfg.horizon as f64;
    let mut rows = Vec::with_capacity(cfg.reps * cfg.n);
    for (rep, ep) in episodes.iter().enumerate() {
        for agent in 0..cfg.n {
            let ideal_total = v_star[agent] * t;
            rows.push(ReportRow {
                rep,
                agent,
                total_utility: ep.total_utility[agent],
                ideal_total,
                fraction: ep.total_utility[agent] / ideal_total,
                total_payment: ep.total_payment[agent],
                initial_budget: ep.initial_budgets[agent],
                positive_value_rounds: ep.positive_value_rounds[agent],
            });
        }
    }
    let agents = (0..cfg.n)
        .map(|agent| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.agent == agent).map(|r| r.fraction).collect();
            AgentSummary {
                agent,
                v_star: v_star[agent],
                fraction: Estimate::from_samples(&xs),
            }
        })
        .collect();
    let cross_agent_mean = rows.iter().map(|r| r.fraction).sum::<f64>() / rows.len() as f64;
    Ok(Report {
        n: cfg.n,
        horizon: cfg.horizon,
        reps: cfg.reps,
        base_seed: cfg.base_seed,
        tracked_agent: cfg.tracked_agent,
        rows,
        agents,
        cross_agent_mean,
    })
}

/// Constant bids 0.25, 0.5, ..., 2.5 plus the stationary adversary.
pub fn default_adversary_grid() -> Vec<StrategySpec> {
    let mut grid: Vec<StrategySpec> = (1..=10).map(|k| StrategySpec::Constant(k as f64 * 0.25)).collect();
    grid.push(StrategySpec::AdversaryCdf { delta: None });
    grid
}

#[derive(Debug, Clone)]
pub struct RobustnessQuery {
    pub agent: StrategySpec,
    pub agent_dist: ValueDistribution,
    pub alpha: f64,
    pub horizon: usize,
    pub grid: Vec<StrategySpec>,
    pub reps: usize,
    pub base_seed: u64,
}

impl RobustnessQuery {
    /// Agent with Bernoulli(alpha) values against the default grid.
    pub fn new(agent: StrategySpec, alpha: f64, horizon: usize, reps: usize, base_seed: u64) -> Result<Self> {
        Ok(RobustnessQuery {
            agent,
            agent_dist: ValueDistribution::bernoulli(alpha)?,
            alpha,
            horizon,
            grid: default_adversary_grid(),
            reps,
            base_seed,
        })
    }

    /// Two-agent experiment: the agent (index 0, wins ties) against one
    /// combined adversary holding the remaining `1 - alpha` share.
    pub fn experiment(&self, adversary: &StrategySpec) -> Result<ExperimentConfig> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        let mut cfg = ExperimentConfig::new(
            self.horizon,
            self.reps,
            self.base_seed,
            vec![self.agent.clone(), adversary.clone()],
            vec![self.agent_dist.clone(), ValueDistribution::bernoulli(1.0 - self.alpha)?],
        );
        cfg.fair_shares = vec![self.alpha, 1.0 - self.alpha];
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub adversary: String,
    pub fraction: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessResult {
    pub min_fraction: f64,
    pub argmin_adversary: String,
    pub table: Vec<RobustnessRow>,
}

/// Worst mean fraction of the agent over the adversary grid.
pub fn estimate_robustness(query: &RobustnessQuery) -> Result<RobustnessResult> {
    if query.grid.is_empty() {
        return Err(Error::InvalidConfig("adversary grid is empty".into()));
    }
    let table: Vec<RobustnessRow> = query
        .grid
        .par_iter()
        .map(|adv| {
            let report = run_experiment(&query.experiment(adv)?)?;
            Ok(RobustnessRow {
                adversary: adv.to_string(),
                fraction: report.agents[0].fraction,
            })
        })
        .collect::<Result<_>>()?;
    let worst = table
        .iter()
        .min_by(|a, b| a.fraction.mean.total_cmp(&b.fraction.mean))
        .expect("nonempty grid");
    Ok(RobustnessResult {
        min_fraction: worst.fraction.mean,
        argmin_adversary: worst.adversary.clone(),
        table: table.clone(),
    })
}

/// Strategy profiles of the comparison figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Profile {
    /// Everyone bids 2 in top-quantile rounds.
    Deterministic,
    /// Everyone plays RRB.
    Rrb,
    /// Agent 0 plays RRB, everyone else bids 1 every round.
    RrbVsAdversary,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Deterministic, Profile::Rrb, Profile::RrbVsAdversary];

    pub fn label(self) -> &'static str {
        match self {
            Profile::Deterministic => "deterministic",
            Profile::Rrb => "rrb",
            Profile::RrbVsAdversary => "rrb_vs_adversary",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Profile::ALL.into_iter().find(|p| p.label() == s)
    }

    /// Symmetric setting with `n` agents, Bernoulli(1/n) values, shares 1/n.
    pub fn experiment(self, n: usize, horizon: usize, reps: usize, base_seed: u64) -> Result<ExperimentConfig> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be at least 1".into()));
        }
        let share = 1.0 / n as f64;
        let dists = vec![ValueDistribution::bernoulli(share)?; n];
        let rrb = "rrb".parse::<StrategySpec>()?;
        let (profile, tie_break) = match self {
            Profile::Deterministic => (vec!["det:2".parse()?; n], TieBreak::UniformRandom),
            Profile::Rrb => (vec![rrb; n], TieBreak::UniformRandom),
            Profile::RrbVsAdversary => {
                let mut p = vec![StrategySpec::Constant(1.0); n];
                p[0] = rrb;
                (p, TieBreak::favoring(0, n))
            }
        };
        let mut cfg = ExperimentConfig::new(horizon, reps, base_seed, profile, dists);
        cfg.tie_break = tie_break;
        Ok(cfg)
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FigureConfig {
    pub horizon: usize,
    pub reps: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub base_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureRow {
    pub n: usize,
    pub profile: Profile,
    pub rep: usize,
    pub agent: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureSummary {
    pub n: usize,
    pub profile: Profile,
    /// Mean fraction of agent 0 over replications.
    pub mean: f64,
    pub ci95: f64,
    /// Mean over all agents and replications (all agents play the same
    /// strategy in the symmetric profiles).
    pub cross_agent_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FigureData {
    pub rows: Vec<FigureRow>,
    pub summary: Vec<FigureSummary>,
}

pub const FIGURE_DETAIL_HEADER: &str = "n,profile,rep,agent,fraction";
pub const FIGURE_SUMMARY_HEADER: &str = "n,profile,mean,ci95";

/// Runs the three profiles for every `n` in `[n_min, n_max]`.
pub fn run_figure(cfg: &FigureConfig) -> Result<FigureData> {
    if cfg.n_min < 2 || cfg.n_min > cfg.n_max {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= n_min <= n_max, got n_min = {}, n_max = {}",
            cfg.n_min, cfg.n_max
        )));
    }
    let jobs: Vec<(usize, Profile)> = (cfg.n_min..=cfg.n_max)
        .flat_map(|n| Profile::ALL.into_iter().map(move |p| (n, p)))
        .collect();
    let reports: Vec<Report> = jobs
        .par_iter()
        .map(|&(n, p)| run_experiment(&p.experiment(n, cfg.horizon, cfg.reps, cfg.base_seed)?))
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (&(n, profile), report) in jobs.iter().zip(&reports) {
        for r in &report.rows {
            if profile == Profile::RrbVsAdversary && r.agent != 0 {
                continue;
            }
            rows.push(FigureRow {
                n,
                profile,
                rep: r.rep,
                agent: r.agent,
                fraction: r.fraction,
            });
        }
        let tracked = report.agents[0].fraction;
        summary.push(FigureSummary {
            n,
            profile,
            mean: tracked.mean,
            ci95: tracked.ci95,
            cross_agent_mean: report.cross_agent_mean,
        });
    }
    Ok(FigureData { rows, summary })
}

impl FigureData {
    /// Detail block under `n,profile,rep,agent,fraction`, then a second header
    /// `n,profile,mean,ci95` followed by one summary row per `(n, profile)`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{FIGURE_DETAIL_HEADER}")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{}", r.n, r.profile, r.rep, r.agent, r.fraction)?;
        }
        writeln!(w, "{FIGURE_SUMMARY_HEADER}")?;
        for s in &self.summary {
            writeln!(w, "{},{},{},{}", s.n, s.profile, s.mean, s.ci95)?;
        }
        Ok(())
    }

    pub fn summary_for(&self, n: usize, profile: Profile) -> Option<&FigureSummary> {
        self.summary.iter().find(|s| s.n == n && s.profile == profile)
    }
}

/// Runs the figure experiment and writes its CSV to `out_path`.
pub fn reproduce_figure(cfg: &FigureConfig, out_path: &Path) -> Result<FigureData> {
    let data = run_figure(cfg)?;
    let file = fs::File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    let mut w = BufWriter::new(file);
    data.write_csv(&mut w).map_err(|e| Error::io(out_path, e))?;
    w.flush().map_err(|e| Error::io(out_path, e))?;
    Ok(data)
}

/// Summary row as read back from a figure CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRecord {
    pub n: usize,
    pub profile: String,
    pub mean: f64,
    pub ci95: f64,
}

/// Reads the summary block of a figure CSV.
pub fn read_figure_summary(text: &str) -> Result<Vec<SummaryRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(FIGURE_DETAIL_HEADER) => {}
        other => return Err(Error::parse("figure csv", format!("unexpected first line {other:?}"))),
    }
    let mut in_summary = false;
    let mut out = Vec::new();
    for line in lines {
        if line == FIGURE_SUMMARY_HEADER {
            in_summary = true;
            continue;
        }
        if !in_summary || line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::parse(line, "summary rows have 4 columns"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(line, format!("`{s}` is not a number")));
        out.push(SummaryRecord {
            n: cols[0].parse().map_err(|_| Error::parse(line, "bad n"))?,
            profile: cols[1].to_string(),
            mean: num(cols[2])?,
            ci95: num(cols[3])?,
        });
    }
    if !in_summary {
        return Err(Error::parse("figure csv", "missing summary block"));
    }
    Ok(out)
}
