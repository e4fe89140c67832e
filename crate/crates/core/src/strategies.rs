//! Bidding policies.
//!
//! Robust bidders ([`rrb`], [`deterministic_robust`], [`fixed_distribution`])
//! are written for Bernoulli(α) values and lifted to arbitrary value laws with
//! the Bernoulli reduction. They stop bidding for good once their budget
//! falls below their largest possible bid, so a drawn bid is never clamped.
//! Adversaries ([`constant_bid`], [`adversary_cdf`]) ignore their values.

use std::f64::consts::E;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mechanism::PublicHistory;
use crate::rng::stream_rng;
use crate::values::{
    bernoulli_reduction, discrete_quantile, parse_f64, parse_pairs, table_cdf, table_cdf_left, table_quantile,
    validate_quantile_grid, BernoulliReduction, ValueDistribution,
};

/// ChaCha stream used by strategies for their own bid draws.
pub const BID_STREAM: u64 = 1;

/// `1 + sqrt(2)`: RRB's default bid cap.
pub const RRB_DEFAULT_BBAR: f64 = 1.0 + std::f64::consts::SQRT_2;

/// Fixed bid of the deterministic robust strategy.
pub const DETERMINISTIC_DEFAULT_BID: f64 = 2.0;

/// Top of the stationary adversary's support, `(e - 1) / (e - 2)`.
pub const ADVERSARY_CDF_CAP: f64 = (E - 1.0) / (E - 2.0);

/// What a strategy sees before bidding in one round.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub own_value: f64,
    pub own_budget: f64,
    /// 1-based round index.
    pub round: usize,
    pub horizon: usize,
    /// Bids, winners and payments of earlier rounds. Only populated when some
    /// strategy in the episode asks for it via [`Strategy::needs_history`].
    pub history: &'a PublicHistory,
}

impl Observation<'_> {
    pub fn with_value(&self, own_value: f64) -> Self {
        Observation { own_value, ..*self }
    }
}

pub trait Strategy: Send {
    /// Re-seeds all internal randomness for a new episode.
    fn reset(&mut self, seed: u64);

    /// Bid for this round, expected in `[0, own_budget]`.
    fn next_bid(&mut self, obs: &Observation<'_>) -> f64;

    /// Whether the engine must keep the public history for this strategy.
    fn needs_history(&self) -> bool {
        false
    }
}

impl<S: Strategy + ?Sized> Strategy for Box<S> {
    fn reset(&mut self, seed: u64) {
        (**self).reset(seed)
    }

    fn next_bid(&mut self, obs: &Observation<'_>) -> f64 {
        (**self).next_bid(obs)
    }

    fn needs_history(&self) -> bool {
        (**self).needs_history()
    }
}

/// Law of a bidder's random bid multiplier.
#[derive(Debug, Clone, PartialEq)]
pub enum BidDistribution {
    Uniform { lo: f64, hi: f64 },
    FiniteDiscrete { points: Vec<(f64, f64)> },
    InverseCdfTable { grid: Vec<(f64, f64)> },
}

impl BidDistribution {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        let d = BidDistribution::Uniform { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn point(x: f64) -> Result<Self> {
        Self::finite(vec![(x, 1.0)])
    }

    pub fn finite(points: Vec<(f64, f64)>) -> Result<Self> {
        let d = BidDistribution::FiniteDiscrete { points };
        d.validate()?;
        Ok(d)
    }

    pub fn inverse_cdf(grid: Vec<(f64, f64)>) -> Result<Self> {
        let d = BidDistribution::InverseCdfTable { grid };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BidDistribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo <= hi) {
                    return Err(Error::InvalidDistribution(format!(
                        "uniform bounds [{lo}, {hi}] must satisfy 0 <= lo <= hi"
                    )));
                }
                Ok(())
            }
            BidDistribution::FiniteDiscrete { points } => {
                ValueDistribution::FiniteDiscrete { points: points.clone() }.validate()
            }
            BidDistribution::InverseCdfTable { grid } => validate_quantile_grid(grid),
        }
    }

    /// Draws one bid; consumes exactly one uniform.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            BidDistribution::Uniform { lo, hi } => lo + (hi - lo) * u,
            BidDistribution::FiniteDiscrete { points } => discrete_quantile(points, u),
            BidDistribution::InverseCdfTable { grid } => table_quantile(grid, u),
        }
    }

    /// Upper end of the support (the bid cap `b̄`).
    pub fn support_max(&self) -> f64 {
        match self {
            BidDistribution::Uniform { hi, .. } => *hi,
            BidDistribution::FiniteDiscrete { points } => points
                .iter()
                .filter(|p| p.1 > 0.0)
                .map(|p| p.0)
                .fold(0.0, f64::max),
            BidDistribution::InverseCdfTable { grid } => grid[grid.len() - 1].1,
        }
    }

    /// `F(x) = Pr(r <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            BidDistribution::Uniform { lo, hi } => {
                if x < *lo {
                    0.0
                } else if x >= *hi {
                    1.0
                } else {
                    (x - lo) / (hi - lo)
                }
            }
            BidDistribution::FiniteDiscrete { points } => {
                points.iter().filter(|p| p.0 <= x).map(|p| p.1).sum::<f64>().min(1.0)
            }
            BidDistribution::InverseCdfTable { grid } => table_cdf(grid, x),
        }
    }

    /// `F(x-) = Pr(r < x)`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        match self {
            BidDistribution::Uniform { lo, hi } => {
                if x <= *lo {
                    0.0
                } else if x >= *hi {
                    1.0
                } else {
                    (x - lo) / (hi - lo)
                }
            }
            BidDistribution::FiniteDiscrete { points } => {
                points.iter().filter(|p| p.0 < x).map(|p| p.1).sum::<f64>().min(1.0)
            }
            BidDistribution::InverseCdfTable { grid } => table_cdf_left(grid, x),
        }
    }

    /// Locations of positive-mass atoms.
    pub fn atom_locations(&self) -> Vec<f64> {
        match self {
            BidDistribution::Uniform { lo, hi } if lo == hi => vec![*lo],
            BidDistribution::Uniform { .. } => Vec::new(),
            BidDistribution::FiniteDiscrete { points } => {
                points.iter().filter(|p| p.1 > 0.0).map(|p| p.0).collect()
            }
            BidDistribution::InverseCdfTable { grid } => grid
                .windows(2)
                .filter(|w| w[0].1 == w[1].1 && w[1].0 > w[0].0)
                .map(|w| w[0].1)
                .collect(),
        }
    }

    /// Finite atom representation: exact for discrete laws, `resolution`
    /// equal-mass midpoint atoms otherwise.
    pub fn atoms(&self, resolution: usize) -> Vec<(f64, f64)> {
        match self {
            BidDistribution::FiniteDiscrete { points } => {
                points.iter().copied().filter(|p| p.1 > 0.0).collect()
            }
            _ => {
                let mass = 1.0 / resolution as f64;
                (0..resolution)
                    .map(|k| (self.quantile((k as f64 + 0.5) * mass), mass))
                    .collect()
            }
        }
    }
}

impl FromStr for BidDistribution {
    type Err = Error;

    /// `uniform:<lo>:<hi>`, `point:<x>`, `discrete:<v>:<p>,...`, `icdf:<csv path>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| Error::parse(s, "expected <kind>:<args>"))?;
        match kind {
            "uniform" => {
                let (lo, hi) = rest
                    .split_once(':')
                    .ok_or_else(|| Error::parse(s, "expected uniform:<lo>:<hi>"))?;
                Self::uniform(parse_f64(s, lo)?, parse_f64(s, hi)?)
            }
            "point" => Self::point(parse_f64(s, rest)?),
            "discrete" => Self::finite(parse_pairs(s, rest)?),
            "icdf" => match ValueDistribution::from_icdf_csv(Path::new(rest))? {
                ValueDistribution::InverseCdfTable { grid } => Self::inverse_cdf(grid),
                _ => unreachable!(),
            },
            other => Err(Error::parse(s, format!("unknown bid distribution `{other}`"))),
        }
    }
}

impl fmt::Display for BidDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BidDistribution::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            BidDistribution::FiniteDiscrete { points } if points.len() == 1 => {
                write!(f, "point:{}", points[0].0)
            }
            BidDistribution::FiniteDiscrete { points } => {
                write!(f, "{}", ValueDistribution::FiniteDiscrete { points: points.clone() })
            }
            BidDistribution::InverseCdfTable { grid } => write!(f, "icdf:<{} knots>", grid.len()),
        }
    }
}

/// Bernoulli-value bidder: when its value is positive and its budget covers
/// the top of the support, bids a fresh draw from `dist`.
#[derive(Debug, Clone)]
pub struct DistributionBidder {
    dist: BidDistribution,
    cap: f64,
    rng: ChaCha8Rng,
}

impl DistributionBidder {
    pub fn new(dist: BidDistribution) -> Result<Self> {
        dist.validate()?;
        let cap = dist.support_max();
        if cap <= 0.0 {
            return Err(Error::InvalidParameter("bid distribution must have positive support".into()));
        }
        Ok(DistributionBidder {
            dist,
            cap,
            rng: stream_rng(0, BID_STREAM),
        })
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }
}

impl Strategy for DistributionBidder {
    fn reset(&mut self, seed: u64) {
        self.rng = stream_rng(seed, BID_STREAM);
    }

    fn next_bid(&mut self, obs: &Observation<'_>) -> f64 {
        if obs.own_value > 0.0 && obs.own_budget >= self.cap {
            self.dist.sample(&mut self.rng)
        } else {
            0.0
        }
    }
}

/// Bernoulli-value bidder with a single fixed bid.
#[derive(Debug, Clone)]
pub struct FixedBidder {
    bid: f64,
}

impl Strategy for FixedBidder {
    fn reset(&mut self, _seed: u64) {}

    fn next_bid(&mut self, obs: &Observation<'_>) -> f64 {
        if obs.own_value > 0.0 && obs.own_budget >= self.bid {
            self.bid
        } else {
            0.0
        }
    }
}

pub type Rrb = BernoulliReduction<DistributionBidder>;
pub type DeterministicRobust = BernoulliReduction<FixedBidder>;

/// Randomized robust bidding: uniform bids on `[0, b_bar]` in top-α rounds.
pub fn rrb(alpha: f64, value_dist: &ValueDistribution, b_bar: f64) -> Result<Rrb> {
    if !(b_bar > 0.0 && b_bar.is_finite()) {
        return Err(Error::InvalidParameter(format!("b_bar must be positive, got {b_bar}")));
    }
    fixed_distribution(alpha, value_dist, BidDistribution::uniform(0.0, b_bar)?)
}

/// Fixed bid in top-α rounds while the budget covers it.
pub fn deterministic_robust(alpha: f64, value_dist: &ValueDistribution, bid: f64) -> Result<DeterministicRobust> {
    if !(bid > 0.0 && bid.is_finite()) {
        return Err(Error::InvalidParameter(format!("bid must be positive, got {bid}")));
    }
    bernoulli_reduction(value_dist, alpha, FixedBidder { bid })
}

/// Bids i.i.d. draws from `dist` in top-α rounds until the budget drops below
/// the top of the support.
pub fn fixed_distribution(alpha: f64, value_dist: &ValueDistribution, dist: BidDistribution) -> Result<Rrb> {
    bernoulli_reduction(value_dist, alpha, DistributionBidder::new(dist)?)
}

/// Bids `c` every round, regardless of value, while the budget covers it.
#[derive(Debug, Clone)]
pub struct ConstantBid {
    c: f64,
}

impl Strategy for ConstantBid {
    fn reset(&mut self, _seed: u64) {}

    fn next_bid(&mut self, obs: &Observation<'_>) -> f64 {
        if self.c > 0.0 && obs.own_budget >= self.c {
            self.c
        } else {
            0.0
        }
    }
}

pub fn constant_bid(c: f64) -> Result<ConstantBid> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("constant bid must be nonnegative, got {c}")));
    }
    Ok(ConstantBid { c })
}

/// Default slack `sqrt(3 ln T / T)` of the stationary adversary.
pub fn default_delta(horizon: usize) -> f64 {
    let t = horizon.max(1) as f64;
    (3.0 * t.ln() / t).sqrt()
}

/// Stationary adversary that caps any agent near `1 - 1/e` of ideal utility.
///
/// Bids i.i.d. from `F(x) = (1 - a - d) / (e - (e - 2) x) + a + d` on
/// `[0, (e-1)/(e-2)]` (with an atom at zero) until its budget drops below the
/// top of that support. `a` is the fair share of the agent being attacked.
#[derive(Debug, Clone)]
pub struct AdversaryCdf {
    alpha: f64,
    delta: f64,
    rng: ChaCha8Rng,
}

impl AdversaryCdf {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else if x >= ADVERSARY_CDF_CAP {
            1.0
        } else {
            let shift = self.alpha + self.delta;
            (1.0 - shift) / (E - (E - 2.0) * x) + shift
        }
    }

    /// Inverse-transform draw for uniform `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let shift = self.alpha + self.delta;
        if u <= self.cdf(0.0) {
            return 0.0;
        }
        let x = (E - (1.0 - shift) / (u - shift)) / (E - 2.0);
        x.clamp(0.0, ADVERSARY_CDF_CAP)
    }
}

impl Strategy for AdversaryCdf {
    fn reset(&mut self, seed: u64) {
        self.rng = stream_rng(seed, BID_STREAM);
    }

    fn next_bid(&mut self, obs: &Observation<'_>) -> f64 {
        if obs.own_budget < ADVERSARY_CDF_CAP {
            return 0.0;
        }
        let u: f64 = self.rng.random();
        self.quantile(u)
    }
}

/// Stationary adversary with the default `delta = sqrt(3 ln T / T)`.
pub fn adversary_cdf(alpha: f64, horizon: usize) -> Result<AdversaryCdf> {
    adversary_cdf_with_delta(alpha, default_delta(horizon))
}

pub fn adversary_cdf_with_delta(alpha: f64, delta: f64) -> Result<AdversaryCdf> {
    if !(0.0..1.0).contains(&alpha) || delta < 0.0 || alpha + delta >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "stationary adversary needs 0 <= alpha, 0 <= delta and alpha + delta < 1 (alpha={alpha}, delta={delta})"
        )));
    }
    Ok(AdversaryCdf {
        alpha,
        delta,
        rng: stream_rng(0, BID_STREAM),
    })
}

/// Textual strategy description:
/// `rrb[:bbar]`, `det[:bid]`, `fixed:<bid-dist>`, `const:<c>`, `advcdf[:delta]`.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategySpec {
    Rrb { b_bar: f64 },
    Deterministic { bid: f64 },
    Fixed(BidDistribution),
    Constant(f64),
    AdversaryCdf { delta: Option<f64> },
}

/// Per-agent inputs needed to instantiate a [`StrategySpec`].
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub fair_share: f64,
    pub value_dist: &'a ValueDistribution,
    pub horizon: usize,
}

impl StrategySpec {
    pub fn build(&self, ctx: &AgentContext<'_>) -> Result<Box<dyn Strategy>> {
        Ok(match self {
            StrategySpec::Rrb { b_bar } => Box::new(rrb(ctx.fair_share, ctx.value_dist, *b_bar)?),
            StrategySpec::Deterministic { bid } => {
                Box::new(deterministic_robust(ctx.fair_share, ctx.value_dist, *bid)?)
            }
            StrategySpec::Fixed(d) => Box::new(fixed_distribution(ctx.fair_share, ctx.value_dist, d.clone())?),
            StrategySpec::Constant(c) => Box::new(constant_bid(*c)?),
            StrategySpec::AdversaryCdf { delta } => {
                let target = (1.0 - ctx.fair_share).max(0.0);
                let delta = delta.unwrap_or_else(|| default_delta(ctx.horizon));
                Box::new(adversary_cdf_with_delta(target, delta)?)
            }
        })
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let num = |a: &str| parse_f64(s, a);
        match (kind, arg) {
            ("rrb", None) => Ok(StrategySpec::Rrb { b_bar: RRB_DEFAULT_BBAR }),
            ("rrb", Some(a)) => Ok(StrategySpec::Rrb { b_bar: num(a)? }),
            ("det", None) => Ok(StrategySpec::Deterministic {
                bid: DETERMINISTIC_DEFAULT_BID,
            }),
            ("det", Some(a)) => Ok(StrategySpec::Deterministic { bid: num(a)? }),
            ("fixed", Some(a)) => Ok(StrategySpec::Fixed(a.parse()?)),
            ("const", Some(a)) => Ok(StrategySpec::Constant(num(a)?)),
            ("advcdf", None) => Ok(StrategySpec::AdversaryCdf { delta: None }),
            ("advcdf", Some(a)) => Ok(StrategySpec::AdversaryCdf { delta: Some(num(a)?) }),
            ("fixed" | "const", None) => Err(Error::parse(s, format!("`{kind}` needs an argument"))),
            _ => Err(Error::parse(s, format!("unknown strategy `{kind}`"))),
        }
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrategySpec::Rrb { b_bar } if *b_bar == RRB_DEFAULT_BBAR => write!(f, "rrb"),
            StrategySpec::Rrb { b_bar } => write!(f, "rrb:{b_bar}"),
            StrategySpec::Deterministic { bid } => write!(f, "det:{bid}"),
            StrategySpec::Fixed(d) => write!(f, "fixed:{d}"),
            StrategySpec::Constant(c) => write!(f, "const:{c}"),
            StrategySpec::AdversaryCdf { delta: None } => write!(f, "advcdf"),
            StrategySpec::AdversaryCdf { delta: Some(d) } => write!(f, "advcdf:{d}"),
        }
    }
}
