//! Repeated first-price auction with artificial-currency budgets.
//!
//! Each agent starts with `alpha_i * T` tokens. Every round the highest
//! positive bid wins, the winner pays its bid and collects its value. Bids
//! above the current budget are clamped to the budget; a round where every
//! bid is zero allocates to nobody.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{agent_seed, engine_rng, value_rng};
use crate::strategies::{Observation, Strategy};
use crate::values::ValueDistribution;

const SHARE_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Earlier agents in the list win ties. Must be a permutation of `0..n`.
    FixedPriority(Vec<usize>),
    UniformRandom,
}

impl TieBreak {
    /// Priority order with `first` ahead of everyone else (in index order).
    pub fn favoring(first: usize, n: usize) -> Self {
        let mut order = vec![first];
        order.extend((0..n).filter(|&i| i != first));
        TieBreak::FixedPriority(order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuctionConfig {
    pub horizon: usize,
    pub fair_shares: Vec<f64>,
    pub tie_break: TieBreak,
}

impl AuctionConfig {
    pub fn new(horizon: usize, fair_shares: Vec<f64>, tie_break: TieBreak) -> Result<Self> {
        let cfg = AuctionConfig {
            horizon,
            fair_shares,
            tie_break,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n(&self) -> usize {
        self.fair_shares.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.fair_shares.is_empty() {
            return bad("at least one agent is required".into());
        }
        if let Some(a) = self.fair_shares.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return bad(format!("fair share {a} is negative"));
        }
        let total: f64 = self.fair_shares.iter().sum();
        if (total - 1.0).abs() > SHARE_SUM_TOL {
            return bad(format!("fair shares sum to {total}, not 1"));
        }
        if let TieBreak::FixedPriority(order) = &self.tie_break {
            let mut seen = vec![false; self.n()];
            for &i in order {
                if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                    return bad(format!("priority order {order:?} is not a permutation of 0..{}", self.n()));
                }
            }
            if seen.iter().any(|s| !s) {
                return bad(format!("priority order {order:?} is not a permutation of 0..{}", self.n()));
            }
        }
        Ok(())
    }
}

/// Initial budgets `alpha_i * T`.
pub fn init_state(config: &AuctionConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let t = config.horizon as f64;
    Ok(config.fair_shares.iter().map(|a| a * t).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundOutcome {
    /// 1-based round index.
    pub t: usize,
    /// Bids after clamping to budgets.
    pub bids: Vec<f64>,
    pub winner: Option<usize>,
    pub payments: Vec<f64>,
    pub values: Vec<f64>,
    pub utilities: Vec<f64>,
    pub budgets_after: Vec<f64>,
    /// Agents whose bid exceeded their budget and was clamped.
    pub clamped: Vec<usize>,
}

impl RoundOutcome {
    pub fn payment(&self) -> f64 {
        self.winner.map_or(0.0, |w| self.payments[w])
    }
}

/// Resolves one round.
pub fn step(
    t: usize,
    budgets: &[f64],
    bids: &[f64],
    values: &[f64],
    tie_break: &TieBreak,
    rng: &mut ChaCha8Rng,
) -> Result<RoundOutcome> {
    let n = budgets.len();
    if bids.len() != n || values.len() != n {
        return Err(Error::InvalidConfig(format!(
            "round {t}: {} bids and {} values for {n} agents",
            bids.len(),
            values.len()
        )));
    }
    let mut clamped = Vec::new();
    let mut effective = Vec::with_capacity(n);
    for (agent, (&b, &budget)) in bids.iter().zip(budgets).enumerate() {
        if !(b.is_finite() && b >= 0.0) {
            return Err(Error::InvalidBid { agent, round: t, bid: b });
        }
        if b > budget {
            clamped.push(agent);
            effective.push(budget.max(0.0));
        } else {
            effective.push(b);
        }
    }

    let top = effective.iter().copied().fold(0.0, f64::max);
    let winner = if top > 0.0 {
        match tie_break {
            TieBreak::FixedPriority(order) => order.iter().copied().find(|&i| effective[i] == top),
            TieBreak::UniformRandom => {
                let tied: Vec<usize> = (0..n).filter(|&i| effective[i] == top).collect();
                if tied.len() == 1 {
                    Some(tied[0])
                } else {
                    Some(tied[rng.random_range(0..tied.len())])
                }
            }
        }
    } else {
        None
    };

    let mut payments = vec![0.0; n];
    let mut utilities = vec![0.0; n];
    let mut budgets_after = budgets.to_vec();
    if let Some(w) = winner {
        payments[w] = effective[w];
        utilities[w] = values[w];
        budgets_after[w] = (budgets[w] - effective[w]).max(0.0);
    }
    Ok(RoundOutcome {
        t,
        bids: effective,
        winner,
        payments,
        values: values.to_vec(),
        utilities,
        budgets_after,
        clamped,
    })
}

/// Publicly observable record of past rounds: bids, winners and payments.
/// Values are private and never stored here.
#[derive(Debug, Clone, Default)]
pub struct PublicHistory {
    n: usize,
    bids: Vec<f64>,
    winners: Vec<Option<usize>>,
    payments: Vec<f64>,
}

impl PublicHistory {
    pub fn new(n: usize) -> Self {
        PublicHistory {
            n,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.winners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.winners.is_empty()
    }

    /// Bids of round `i` (0-based).
    pub fn bids(&self, i: usize) -> &[f64] {
        &self.bids[i * self.n..(i + 1) * self.n]
    }

    pub fn winner(&self, i: usize) -> Option<usize> {
        self.winners[i]
    }

    pub fn payment(&self, i: usize) -> f64 {
        self.payments[i]
    }

    pub fn push(&mut self, outcome: &RoundOutcome) {
        self.bids.extend_from_slice(&outcome.bids);
        self.winners.push(outcome.winner);
        self.payments.push(outcome.payment());
    }
}

/// Consumer of round outcomes produced by [`run_episode_with`].
pub trait RoundSink {
    fn record(&mut self, outcome: &RoundOutcome);
}

/// Full record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Transcript {
    pub config: AuctionConfig,
    pub rounds: Vec<RoundOutcome>,
    pub seed: u64,
}

impl RoundSink for Transcript {
    fn record(&mut self, outcome: &RoundOutcome) {
        self.rounds.push(outcome.clone());
    }
}

impl Transcript {
    /// Per-round CSV: `t,bid_0..,winner,payment,value_0..,utility_0..`,
    /// with winner `-1` when nobody wins.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.config.n();
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|i| format!("bid_{i}")));
        header.push("winner".into());
        header.push("payment".into());
        header.extend((0..n).map(|i| format!("value_{i}")));
        header.extend((0..n).map(|i| format!("utility_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rounds {
            let mut row = vec![r.t.to_string()];
            row.extend(r.bids.iter().map(f64::to_string));
            row.push(r.winner.map_or("-1".to_string(), |i| i.to_string()));
            row.push(r.payment().to_string());
            row.extend(r.values.iter().map(f64::to_string));
            row.extend(r.utilities.iter().map(f64::to_string));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// Per-agent totals of one episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub initial_budgets: Vec<f64>,
    pub final_budgets: Vec<f64>,
    pub total_utility: Vec<f64>,
    pub total_payment: Vec<f64>,
    pub wins: Vec<usize>,
    /// Rounds in which the agent's value was positive.
    pub positive_value_rounds: Vec<usize>,
    pub clamps: usize,
}

impl EpisodeSummary {
    pub fn new(initial_budgets: Vec<f64>) -> Self {
        let n = initial_budgets.len();
        EpisodeSummary {
            final_budgets: initial_budgets.clone(),
            initial_budgets,
            total_utility: vec![0.0; n],
            total_payment: vec![0.0; n],
            wins: vec![0; n],
            positive_value_rounds: vec![0; n],
            clamps: 0,
        }
    }
}

impl RoundSink for EpisodeSummary {
    fn record(&mut self, o: &RoundOutcome) {
        for i in 0..o.values.len() {
            self.total_utility[i] += o.utilities[i];
            self.total_payment[i] += o.payments[i];
            if o.values[i] > 0.0 {
                self.positive_value_rounds[i] += 1;
            }
        }
        if let Some(w) = o.winner {
            self.wins[w] += 1;
        }
        self.final_budgets.copy_from_slice(&o.budgets_after);
        self.clamps += o.clamped.len();
    }
}

/// Runs one episode, streaming every round into `sink`.
///
/// Agent `i`'s values come from its own value stream and its strategy is
/// reset with the agent substream seed; both depend only on `(seed, i)`.
pub fn run_episode_with<S: Strategy, K: RoundSink>(
    config: &AuctionConfig,
    strategies: &mut [S],
    dists: &[ValueDistribution],
    seed: u64,
    sink: &mut K,
) -> Result<()> {
    let mut budgets = init_state(config)?;
    let n = config.n();
    if strategies.len() != n || dists.len() != n {
        return Err(Error::InvalidConfig(format!(
            "{} strategies and {} distributions for {n} agents",
            strategies.len(),
            dists.len()
        )));
    }
    for d in dists {
        d.validate()?;
    }
    let mut value_rngs: Vec<ChaCha8Rng> = (0..n).map(|i| value_rng(seed, i)).collect();
    let mut tie_rng = engine_rng(seed);
    for (i, s) in strategies.iter_mut().enumerate() {
        s.reset(agent_seed(seed, i));
    }
    let keep_history = strategies.iter().any(|s| s.needs_history());
    let mut history = PublicHistory::new(n);
    let mut values = vec![0.0; n];
    let mut bids = vec![0.0; n];

    for t in 1..=config.horizon {
        for i in 0..n {
            values[i] = dists[i].sample(&mut value_rngs[i]);
        }
        for i in 0..n {
            let obs = Observation {
                own_value: values[i],
                own_budget: budgets[i],
                round: t,
                horizon: config.horizon,
                history: &history,
            };
            let b = strategies[i].next_bid(&obs);
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::InvalidBid { agent: i, round: t, bid: b });
            }
            bids[i] = b;
        }
        let outcome = step(t, &budgets, &bids, &values, &config.tie_break, &mut tie_rng)?;
        budgets.copy_from_slice(&outcome.budgets_after);
        if keep_history {
            history.push(&outcome);
        }
        sink.record(&outcome);
    }
    Ok(())
}

/// Runs one episode and returns its full transcript.
pub fn run_episode<S: Strategy>(
    config: &AuctionConfig,
    strategies: &mut [S],
    dists: &[ValueDistribution],
    seed: u64,
) -> Result<Transcript> {
    let mut transcript = Transcript {
        config: config.clone(),
        rounds: Vec::with_capacity(config.horizon),
        seed,
    };
    run_episode_with(config, strategies, dists, seed, &mut transcript)?;
    Ok(transcript)
}

/// Runs one episode keeping only per-agent totals.
pub fn run_episode_summary<S: Strategy>(
    config: &AuctionConfig,
    strategies: &mut [S],
    dists: &[ValueDistribution],
    seed: u64,
) -> Result<EpisodeSummary> {
    let mut summary = EpisodeSummary::new(init_state(config)?);
    run_episode_with(config, strategies, dists, seed, &mut summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::strategies::{constant_bid, Strategy};

    fn rng() -> ChaCha8Rng {
        stream_rng(0, 0)
    }

    #[test]
    fn init_state_examples() {
        let cfg = AuctionConfig::new(100, vec![0.3, 0.7], TieBreak::UniformRandom).unwrap();
        assert_eq!(init_state(&cfg).unwrap(), vec![30.0, 70.0]);
        let cfg = AuctionConfig::new(10, vec![1.0], TieBreak::UniformRandom).unwrap();
        assert_eq!(init_state(&cfg).unwrap(), vec![10.0]);
        let cfg = AuctionConfig::new(100_000, vec![0.25, 0.75], TieBreak::UniformRandom).unwrap();
        assert_eq!(init_state(&cfg).unwrap(), vec![25_000.0, 75_000.0]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(AuctionConfig::new(0, vec![1.0], TieBreak::UniformRandom).is_err());
        assert!(AuctionConfig::new(10, vec![0.5, 0.6], TieBreak::UniformRandom).is_err());
        assert!(AuctionConfig::new(10, vec![-0.5, 1.5], TieBreak::UniformRandom).is_err());
        assert!(AuctionConfig::new(10, vec![0.5, 0.5], TieBreak::FixedPriority(vec![0, 0])).is_err());
        assert!(AuctionConfig::new(10, vec![0.5, 0.5], TieBreak::FixedPriority(vec![1])).is_err());
    }

    #[test]
    fn step_strict_max() {
        let o = step(1, &[10.0, 10.0], &[2.0, 1.0], &[1.0, 1.0], &TieBreak::UniformRandom, &mut rng()).unwrap();
        assert_eq!(o.winner, Some(0));
        assert_eq!(o.payments, vec![2.0, 0.0]);
        assert_eq!(o.utilities, vec![1.0, 0.0]);
        assert_eq!(o.budgets_after, vec![8.0, 10.0]);
    }

    #[test]
    fn step_all_abstain() {
        let o = step(1, &[10.0, 10.0], &[0.0, 0.0], &[1.0, 1.0], &TieBreak::UniformRandom, &mut rng()).unwrap();
        assert_eq!(o.winner, None);
        assert_eq!(o.payments, vec![0.0, 0.0]);
        assert_eq!(o.utilities, vec![0.0, 0.0]);
    }

    #[test]
    fn step_fixed_priority_tie() {
        let tb = TieBreak::FixedPriority(vec![0, 1]);
        let o = step(1, &[10.0, 10.0], &[1.0, 1.0], &[1.0, 1.0], &tb, &mut rng()).unwrap();
        assert_eq!(o.winner, Some(0));
        assert_eq!(o.payments[0], 1.0);
        let tb = TieBreak::FixedPriority(vec![1, 0]);
        let o = step(1, &[10.0, 10.0], &[1.0, 1.0], &[1.0, 1.0], &tb, &mut rng()).unwrap();
        assert_eq!(o.winner, Some(1));
    }

    #[test]
    fn step_uniform_tie_hits_both() {
        let mut r = rng();
        let mut wins = [0; 2];
        for _ in 0..1000 {
            let o = step(1, &[10.0, 10.0], &[1.0, 1.0], &[1.0, 1.0], &TieBreak::UniformRandom, &mut r).unwrap();
            wins[o.winner.unwrap()] += 1;
        }
        assert!(wins[0] > 400 && wins[1] > 400, "{wins:?}");
    }

    #[test]
    fn step_clamps_over_budget() {
        let o = step(3, &[1.0, 10.0], &[5.0, 2.0], &[1.0, 1.0], &TieBreak::UniformRandom, &mut rng()).unwrap();
        assert_eq!(o.clamped, vec![0]);
        assert_eq!(o.bids, vec![1.0, 2.0]);
        assert_eq!(o.winner, Some(1));
    }

    #[test]
    fn step_rejects_negative_bid() {
        let err = step(4, &[1.0, 1.0], &[-1.0, 0.0], &[0.0, 0.0], &TieBreak::UniformRandom, &mut rng());
        assert!(matches!(err, Err(Error::InvalidBid { agent: 0, round: 4, .. })));
    }

    #[test]
    fn solo_agent_wins_everything() {
        let cfg = AuctionConfig::new(5, vec![1.0], TieBreak::UniformRandom).unwrap();
        let mut s = vec![constant_bid(1.0).unwrap()];
        let d = vec![ValueDistribution::bernoulli(1.0).unwrap()];
        let tr = run_episode(&cfg, &mut s, &d, 1).unwrap();
        assert!(tr.rounds.iter().all(|r| r.winner == Some(0)));
        let paid: f64 = tr.rounds.iter().map(|r| r.payment()).sum();
        assert_eq!(paid, 5.0);
    }

    #[test]
    fn two_constant_bidders_go_broke() {
        // budgets 2 each; agent 0 wins round 1, agent 1 round 2, then nobody
        let cfg = AuctionConfig::new(4, vec![0.5, 0.5], TieBreak::FixedPriority(vec![0, 1])).unwrap();
        let mut s = vec![constant_bid(2.0).unwrap(), constant_bid(2.0).unwrap()];
        let d = vec![ValueDistribution::bernoulli(1.0).unwrap(); 2];
        let tr = run_episode(&cfg, &mut s, &d, 1).unwrap();
        let winners: Vec<Option<usize>> = tr.rounds.iter().map(|r| r.winner).collect();
        assert_eq!(winners, vec![Some(0), Some(1), None, None]);
    }

    struct Nan;
    impl Strategy for Nan {
        fn reset(&mut self, _: u64) {}
        fn next_bid(&mut self, obs: &Observation<'_>) -> f64 {
            if obs.round == 3 {
                f64::NAN
            } else {
                0.0
            }
        }
    }

    #[test]
    fn strategy_errors_carry_agent_and_round() {
        let cfg = AuctionConfig::new(5, vec![0.5, 0.5], TieBreak::UniformRandom).unwrap();
        let mut s: Vec<Box<dyn Strategy>> = vec![Box::new(constant_bid(1.0).unwrap()), Box::new(Nan)];
        let d = vec![ValueDistribution::bernoulli(1.0).unwrap(); 2];
        let err = run_episode(&cfg, &mut s, &d, 1).unwrap_err();
        assert!(matches!(err, Error::InvalidBid { agent: 1, round: 3, .. }), "{err}");
    }

    struct HistoryProbe;
    impl Strategy for HistoryProbe {
        fn reset(&mut self, _: u64) {}
        fn next_bid(&mut self, obs: &Observation<'_>) -> f64 {
            assert_eq!(obs.history.len(), obs.round - 1);
            if let Some(last) = obs.history.len().checked_sub(1) {
                assert_eq!(obs.history.bids(last).len(), 2);
            }
            0.5
        }
        fn needs_history(&self) -> bool {
            true
        }
    }

    #[test]
    fn history_is_kept_on_request() {
        let cfg = AuctionConfig::new(6, vec![0.5, 0.5], TieBreak::UniformRandom).unwrap();
        let mut s: Vec<Box<dyn Strategy>> = vec![Box::new(HistoryProbe), Box::new(constant_bid(1.0).unwrap())];
        let d = vec![ValueDistribution::bernoulli(0.5).unwrap(); 2];
        run_episode(&cfg, &mut s, &d, 9).unwrap();
    }

    #[test]
    fn transcript_csv_layout() {
        let cfg = AuctionConfig::new(2, vec![0.5, 0.5], TieBreak::FixedPriority(vec![0, 1])).unwrap();
        let mut s = vec![constant_bid(1.0).unwrap(), constant_bid(0.0).unwrap()];
        let d = vec![ValueDistribution::bernoulli(1.0).unwrap(); 2];
        let csv = run_episode(&cfg, &mut s, &d, 1).unwrap().to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,bid_0,bid_1,winner,payment,value_0,value_1,utility_0,utility_1");
        assert_eq!(lines[1], "1,1,0,0,1,1,1,1,0");
        assert_eq!(lines[2], "2,0,0,-1,0,1,1,0,0");
    }
}
