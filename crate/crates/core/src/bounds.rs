//! Analytic bounds for bidding against a single combined adversary.
//!
//! Everything here is deterministic: moments of bid laws are computed exactly
//! on products of atoms, never by sampling, so the functions can serve as
//! oracles for the simulator.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::strategies::BidDistribution;

/// Largest atom count accepted by [`modified_utility`]; continuous laws are
/// discretized to exactly this many equal-mass atoms.
pub const MAX_ATOMS: usize = 256;

/// Tolerance used when comparing a CDF against its cap.
pub const CAP_TOLERANCE: f64 = 1e-12;

/// A bid CDF with left limits and a bounded support.
pub trait CdfFunction {
    /// `F(x)`.
    fn cdf(&self, x: f64) -> f64;
    /// `F(x-)`.
    fn cdf_left(&self, x: f64) -> f64;
    /// Top of the support, `b̄`.
    fn support_max(&self) -> f64;
}

impl CdfFunction for BidDistribution {
    fn cdf(&self, x: f64) -> f64 {
        BidDistribution::cdf(self, x)
    }

    fn cdf_left(&self, x: f64) -> f64 {
        BidDistribution::cdf_left(self, x)
    }

    fn support_max(&self) -> f64 {
        BidDistribution::support_max(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "closed-form")]
    ClosedForm,
    #[serde(rename = "grid+refine")]
    GridRefine,
    #[serde(rename = "atom-product")]
    AtomProduct,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub quantity: String,
    pub value: f64,
    pub argpoint: Option<f64>,
    pub method: Method,
    /// Width of the final bracket for grid+refine results.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resolution: Option<f64>,
}

impl BoundReport {
    pub fn closed_form(quantity: &str, value: f64) -> Self {
        BoundReport {
            quantity: quantity.to_string(),
            value,
            argpoint: None,
            method: Method::ClosedForm,
            resolution: None,
        }
    }
}

/// Fraction of her bidding rounds an agent with bid CDF `F` wins against an
/// adversary that bids `b_prime` every round until it is broke:
/// `1 - F(b') / b'`, and 1 when the adversary abstains.
pub fn fraction_bound<F: CdfFunction + ?Sized>(cdf: &F, b_prime: f64) -> f64 {
    if b_prime <= 0.0 {
        return 1.0;
    }
    (1.0 - cdf.cdf(b_prime) / b_prime).clamp(0.0, 1.0)
}

/// Largest `F(x-)` a `beta`-robust bid law may have at `x >= 1 - alpha`:
/// `(1 - beta) x / (1 - alpha)`.
pub fn cdf_cap(beta: f64, alpha: f64, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!("beta = {beta} outside [0, 1]")));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha = {alpha} outside [0, 1)")));
    }
    if x < 1.0 - alpha {
        return Err(Error::Domain(format!("x = {x} is below 1 - alpha = {}", 1.0 - alpha)));
    }
    Ok((1.0 - beta) * x / (1.0 - alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapViolation {
    pub x: f64,
    pub cdf_left: f64,
    pub cap: f64,
}

/// Scans `[1 - alpha, b̄]` (grid plus atoms) for points where the bid law puts
/// more mass strictly below `x` than a `beta`-robust law may.
pub fn check_cdf_restriction(
    dist: &BidDistribution,
    beta: f64,
    alpha: f64,
    grid_step: f64,
) -> Result<Vec<CapViolation>> {
    if !(grid_step > 0.0) {
        return Err(Error::InvalidParameter(format!("grid step must be positive, got {grid_step}")));
    }
    let lo = 1.0 - alpha;
    let hi = dist.support_max();
    let mut xs: Vec<f64> = Vec::new();
    if hi >= lo {
        let steps = ((hi - lo) / grid_step).floor() as usize;
        xs.extend((0..=steps).map(|k| lo + k as f64 * grid_step));
        xs.push(hi);
        xs.extend(dist.atom_locations().into_iter().filter(|&a| a >= lo && a <= hi));
        xs.sort_by(f64::total_cmp);
        xs.dedup();
    }
    let mut out = Vec::new();
    for x in xs {
        let cap = cdf_cap(beta, alpha, x)?;
        let f = dist.cdf_left(x);
        if f > cap + CAP_TOLERANCE {
            out.push(CapViolation { x, cdf_left: f, cap });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum UtilityVariant {
    /// Adversary pays only when it wins.
    #[default]
    Exact,
    /// Adversary pays its bid every round; an upper bound on `Exact`.
    Simplified,
}

/// Joint moments of independent `r ~ D` and `b' ~ D'` used by the
/// fixed-distribution utility formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DuelMoments {
    /// `Pr(r >= b')`.
    pub win_prob: f64,
    /// `E[r 1{r >= b'}]`.
    pub agent_spend: f64,
    /// `E[b']`.
    pub adversary_mean: f64,
    /// `E[b' 1{b' > r}]`.
    pub adversary_win_spend: f64,
    /// `E[r]`.
    pub agent_mean: f64,
}

fn atoms_of(d: &BidDistribution) -> Result<Vec<(f64, f64)>> {
    d.validate()?;
    let atoms = d.atoms(MAX_ATOMS);
    if atoms.len() > MAX_ATOMS {
        return Err(Error::Unsupported(format!(
            "bid distribution has {} atoms, more than {MAX_ATOMS}",
            atoms.len()
        )));
    }
    Ok(atoms)
}

pub fn duel_moments(agent: &BidDistribution, adversary: &BidDistribution) -> Result<DuelMoments> {
    let ra = atoms_of(agent)?;
    let ba = atoms_of(adversary)?;
    let mut m = DuelMoments {
        win_prob: 0.0,
        agent_spend: 0.0,
        adversary_mean: ba.iter().map(|&(b, p)| b * p).sum(),
        adversary_win_spend: 0.0,
        agent_mean: ra.iter().map(|&(r, p)| r * p).sum(),
    };
    for &(r, pr) in &ra {
        for &(b, pb) in &ba {
            let w = pr * pb;
            if r >= b {
                m.win_prob += w;
                m.agent_spend += w * r;
            } else {
                m.adversary_win_spend += w * b;
            }
        }
    }
    Ok(m)
}

/// Expected fraction of ideal utility for a Bernoulli(α) agent bidding i.i.d.
/// from `agent` against an adversary bidding i.i.d. from `adversary` until
/// either runs out of tokens. Ties go to the agent.
///
/// With `s` the adversary's lifetime as a fraction of the horizon, the value is
/// `Pr(r>=b') min{1, 1/E[r1{r>=b'}], s} + (min{1 - s, (1 - s E[r1{r>=b'}]) / E[r]})^+`.
pub fn modified_utility(
    alpha: f64,
    agent: &BidDistribution,
    adversary: &BidDistribution,
    variant: UtilityVariant,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} outside (0, 1)")));
    }
    let m = duel_moments(agent, adversary)?;
    let adversary_rate = match variant {
        UtilityVariant::Exact => (1.0 - alpha) * m.adversary_mean + alpha * m.adversary_win_spend,
        UtilityVariant::Simplified => m.adversary_mean,
    };
    let lifetime = if adversary_rate > 0.0 {
        (1.0 - alpha) / adversary_rate
    } else {
        f64::INFINITY
    };
    let agent_lifetime = if m.agent_spend > 0.0 {
        1.0 / m.agent_spend
    } else {
        f64::INFINITY
    };
    let contested = m.win_prob * 1f64.min(agent_lifetime).min(lifetime);
    let after = if lifetime.is_infinite() {
        0.0
    } else {
        let rounds_left = 1.0 - lifetime;
        let budget_left = 1.0 - lifetime * m.agent_spend;
        let by_budget = if m.agent_mean > 0.0 {
            budget_left / m.agent_mean
        } else if budget_left >= 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        rounds_left.min(by_budget).max(0.0)
    };
    Ok(contested + after)
}

/// `g(y) = (2 - sqrt(y^2 - 4y + 5)) / y`.
pub fn three_fifths_objective(y: f64) -> f64 {
    (2.0 - (y * y - 4.0 * y + 5.0).sqrt()) / y
}

pub const THREE_FIFTHS_DOMAIN: (f64, f64) = (1.0, 100.0);

/// Maximizes [`three_fifths_objective`] over `[1, 100]` by a grid scan followed
/// by golden-section refinement around the best grid point.
pub fn three_fifths_supremum(grid_step: f64, refine_iters: usize) -> Result<BoundReport> {
    if !(grid_step > 0.0) {
        return Err(Error::InvalidParameter(format!("grid step must be positive, got {grid_step}")));
    }
    let (lo, hi) = THREE_FIFTHS_DOMAIN;
    let steps = ((hi - lo) / grid_step).ceil() as usize;
    let (mut best_y, mut best_g) = (lo, three_fifths_objective(lo));
    for k in 1..=steps {
        let y = (lo + k as f64 * grid_step).min(hi);
        let g = three_fifths_objective(y);
        if g > best_g {
            best_y = y;
            best_g = g;
        }
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((best_y - grid_step).max(lo), (best_y + grid_step).min(hi));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut gc, mut gd) = (three_fifths_objective(c), three_fifths_objective(d));
    for _ in 0..refine_iters {
        if b - a < 1e-15 {
            break;
        }
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - inv_phi * (b - a);
            gc = three_fifths_objective(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + inv_phi * (b - a);
            gd = three_fifths_objective(d);
        }
    }
    let y = (a + b) / 2.0;
    let g = three_fifths_objective(y);
    if g > best_g {
        best_y = y;
        best_g = g;
    }
    Ok(BoundReport {
        quantity: "three_fifths_supremum".into(),
        value: best_g,
        argpoint: Some(best_y),
        method: Method::GridRefine,
        resolution: Some(b - a),
    })
}

/// `1 - (1 - 1/n)^n`: the best fraction any allocation can guarantee to each
/// of `n` symmetric agents with Bernoulli(1/n) values.
pub fn symmetric_optimum(n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let n = n as f64;
    Ok(1.0 - (n * (-1.0 / n).ln_1p()).exp())
}

/// Asymptotic cap `1 - 1/e + alpha/e` on any agent's fraction against the
/// stationary adversary (finite-horizon slack not included).
pub fn stationary_adversary_cap(alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} outside [0, 1]")));
    }
    let e = std::f64::consts::E;
    Ok(1.0 - 1.0 / e + alpha / e)
}
