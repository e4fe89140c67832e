//! Value distributions, the ideal-utility benchmark, and the Bernoulli
//! reduction.
//!
//! The ideal utility of an agent with fair share `alpha` is the best
//! per-round expected value obtainable when the item can be won with
//! probability at most `alpha`:
//!
//! ```text
//! v* = max_rho E[V rho(V)]   s.t.   E[rho(V)] <= alpha,   rho: R+ -> [0, 1]
//! ```
//!
//! This is a fractional knapsack over the value law: take the highest values
//! first and randomize on the atom where the mass budget runs out. The optimum
//! is described by [`IdealPolicy`] as a `(threshold, accept_prob)` pair.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::strategies::{Observation, Strategy};

const PROB_SUM_TOL: f64 = 1e-12;

/// Largest support accepted by [`ideal_utility_oracle`].
pub const ORACLE_MAX_SUPPORT: usize = 64;

/// Per-round value law of one agent. Values are i.i.d. across rounds.
#[derive(Debug, Clone, PartialEq)]
pub enum ValueDistribution {
    /// Value 1 with probability `p`, else 0.
    Bernoulli { p: f64 },
    /// `(value, probability)` atoms; probabilities sum to one.
    FiniteDiscrete { points: Vec<(f64, f64)> },
    /// Quantile function given as `(u, value)` knots, linearly interpolated.
    /// Flat stretches are atoms; the grid must span `u = 0` to `u = 1`.
    InverseCdfTable { grid: Vec<(f64, f64)> },
}

impl ValueDistribution {
    pub fn bernoulli(p: f64) -> Result<Self> {
        let d = ValueDistribution::Bernoulli { p };
        d.validate()?;
        Ok(d)
    }

    pub fn finite(points: Vec<(f64, f64)>) -> Result<Self> {
        let d = ValueDistribution::FiniteDiscrete { points };
        d.validate()?;
        Ok(d)
    }

    pub fn inverse_cdf(grid: Vec<(f64, f64)>) -> Result<Self> {
        let d = ValueDistribution::InverseCdfTable { grid };
        d.validate()?;
        Ok(d)
    }

    /// Uniform on `[lo, hi]`, as a two-knot quantile table.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::inverse_cdf(vec![(0.0, lo), (1.0, hi)])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        match self {
            ValueDistribution::Bernoulli { p } => {
                if !(0.0..=1.0).contains(p) {
                    return bad(format!("bernoulli probability {p} outside [0, 1]"));
                }
            }
            ValueDistribution::FiniteDiscrete { points } => {
                if points.is_empty() {
                    return bad("discrete distribution has no atoms".into());
                }
                for &(v, p) in points {
                    if !(v.is_finite() && v >= 0.0) {
                        return bad(format!("value {v} is not a nonnegative real"));
                    }
                    if !(0.0..=1.0).contains(&p) {
                        return bad(format!("probability {p} outside [0, 1]"));
                    }
                }
                let total: f64 = points.iter().map(|&(_, p)| p).sum();
                if (total - 1.0).abs() > PROB_SUM_TOL {
                    return bad(format!("probabilities sum to {total}, not 1"));
                }
            }
            ValueDistribution::InverseCdfTable { grid } => validate_quantile_grid(grid)?,
        }
        Ok(())
    }

    /// Draws one value. Consumes exactly one uniform from `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.quantile(u)
    }

    /// Left-continuous-in-mass quantile: the value returned for uniform draw `u`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            ValueDistribution::Bernoulli { p } => {
                if u < *p {
                    1.0
                } else {
                    0.0
                }
            }
            ValueDistribution::FiniteDiscrete { points } => discrete_quantile(points, u),
            ValueDistribution::InverseCdfTable { grid } => table_quantile(grid, u),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ValueDistribution::Bernoulli { p } => *p,
            ValueDistribution::FiniteDiscrete { points } => points.iter().map(|&(v, p)| v * p).sum(),
            ValueDistribution::InverseCdfTable { grid } => table_upper_integral(grid, 0.0),
        }
    }

    /// Atoms sorted by decreasing value with equal values merged.
    /// `None` for quantile tables.
    fn sorted_atoms(&self) -> Option<Vec<(f64, f64)>> {
        let mut atoms = match self {
            ValueDistribution::Bernoulli { p } => vec![(1.0, *p), (0.0, 1.0 - p)],
            ValueDistribution::FiniteDiscrete { points } => points.clone(),
            ValueDistribution::InverseCdfTable { .. } => return None,
        };
        atoms.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, p) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        Some(merged)
    }

    /// Reads a two-column `u,value` CSV into a quantile table. A leading
    /// non-numeric line is treated as a header.
    pub fn from_icdf_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec = format!("icdf:{}", path.display());
        let mut grid = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
                return Err(Error::parse(&spec, format!("line {} needs two columns", lineno + 1)));
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(u), Ok(v)) => grid.push((u, v)),
                _ if grid.is_empty() && lineno == 0 => continue,
                _ => return Err(Error::parse(&spec, format!("line {} is not numeric", lineno + 1))),
            }
        }
        Self::inverse_cdf(grid)
    }
}

impl FromStr for ValueDistribution {
    type Err = Error;

    /// `bernoulli:<p>`, `discrete:<v1>:<p1>,<v2>:<p2>,...`, `icdf:<csv path>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').ok_or_else(|| Error::parse(s, "expected <kind>:<args>"))?;
        match kind {
            "bernoulli" => {
                let p = parse_f64(s, rest)?;
                Self::bernoulli(p)
            }
            "discrete" => Self::finite(parse_pairs(s, rest)?),
            "icdf" => Self::from_icdf_csv(Path::new(rest)),
            other => Err(Error::parse(s, format!("unknown distribution kind `{other}`"))),
        }
    }
}

impl fmt::Display for ValueDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueDistribution::Bernoulli { p } => write!(f, "bernoulli:{p}"),
            ValueDistribution::FiniteDiscrete { points } => {
                write!(f, "discrete:")?;
                for (i, (v, p)) in points.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{v}:{p}")?;
                }
                Ok(())
            }
            ValueDistribution::InverseCdfTable { grid } => write!(f, "icdf:<{} knots>", grid.len()),
        }
    }
}

pub(crate) fn parse_f64(spec: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(spec, format!("`{s}` is not a number")))
}

pub(crate) fn parse_pairs(spec: &str, s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .map(|pair| {
            let (v, p) = pair
                .split_once(':')
                .ok_or_else(|| Error::parse(spec, format!("`{pair}` is not <value>:<prob>")))?;
            Ok((parse_f64(spec, v)?, parse_f64(spec, p)?))
        })
        .collect()
}

pub(crate) fn validate_quantile_grid(grid: &[(f64, f64)]) -> Result<()> {
    let bad = |msg: String| Err(Error::InvalidDistribution(msg));
    if grid.len() < 2 {
        return bad("quantile table needs at least two knots".into());
    }
    if grid[0].0 != 0.0 || grid[grid.len() - 1].0 != 1.0 {
        return bad("quantile table must start at u = 0 and end at u = 1".into());
    }
    for &(u, v) in grid {
        if !(0.0..=1.0).contains(&u) {
            return bad(format!("quantile level {u} outside [0, 1]"));
        }
        if !(v.is_finite() && v >= 0.0) {
            return bad(format!("value {v} is not a nonnegative real"));
        }
    }
    for w in grid.windows(2) {
        if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
            return bad("quantile table must be nondecreasing in both columns".into());
        }
    }
    Ok(())
}

/// Atom reached by walking cumulative mass up to `u`.
pub(crate) fn discrete_quantile(points: &[(f64, f64)], u: f64) -> f64 {
    let mut acc = 0.0;
    for &(v, p) in points {
        acc += p;
        if u < acc {
            return v;
        }
    }
    // u within rounding of 1: last atom with positive mass
    points
        .iter()
        .rev()
        .find(|&&(_, p)| p > 0.0)
        .map_or(points[points.len() - 1].0, |&(v, _)| v)
}

/// Piecewise-linear quantile at level `u`.
pub(crate) fn table_quantile(grid: &[(f64, f64)], u: f64) -> f64 {
    let idx = grid.partition_point(|&(gu, _)| gu <= u);
    if idx == 0 {
        return grid[0].1;
    }
    if idx == grid.len() {
        return grid[grid.len() - 1].1;
    }
    let (u0, v0) = grid[idx - 1];
    let (u1, v1) = grid[idx];
    v0 + (v1 - v0) * (u - u0) / (u1 - u0)
}

/// `sup { u : Q(u) <= x }`, i.e. the CDF at `x`.
pub(crate) fn table_cdf(grid: &[(f64, f64)], x: f64) -> f64 {
    let mut best: f64 = 0.0;
    for (i, &(u, v)) in grid.iter().enumerate() {
        if v <= x {
            best = best.max(u);
            if let Some(&(u1, v1)) = grid.get(i + 1) {
                if v1 > x && u1 > u {
                    best = best.max(u + (x - v) / (v1 - v) * (u1 - u));
                }
            }
        }
    }
    best
}

/// `inf { u : Q(u) >= x }`, i.e. the CDF just below `x`.
pub(crate) fn table_cdf_left(grid: &[(f64, f64)], x: f64) -> f64 {
    let mut best: f64 = 1.0;
    for (i, &(u, v)) in grid.iter().enumerate() {
        if v >= x {
            best = best.min(u);
        } else if let Some(&(u1, v1)) = grid.get(i + 1) {
            if v1 >= x && u1 > u {
                best = best.min(u + (x - v) / (v1 - v) * (u1 - u));
            }
        }
    }
    best
}

/// Exact `int_{from}^{1} Q(u) du` for the linear interpolant.
pub(crate) fn table_upper_integral(grid: &[(f64, f64)], from: f64) -> f64 {
    grid.windows(2)
        .filter(|w| w[1].0 > w[0].0 && w[1].0 > from)
        .map(|w| {
            let lo = w[0].0.max(from);
            let hi = w[1].0;
            let q = |u: f64| w[0].1 + (w[1].1 - w[0].1) * (u - w[0].0) / (w[1].0 - w[0].0);
            (hi - lo) * (q(lo) + q(hi)) / 2.0
        })
        .sum()
}

/// Solution of the ideal-utility program.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdealPolicy {
    pub alpha: f64,
    /// Values strictly above this are always accepted.
    pub threshold: f64,
    /// Acceptance probability for a value exactly at the threshold.
    pub accept_prob: f64,
    /// Ideal per-round utility.
    pub v_star: f64,
}

impl IdealPolicy {
    /// `rho*(v)`.
    pub fn acceptance_prob(&self, v: f64) -> f64 {
        if v > self.threshold {
            1.0
        } else if v == self.threshold {
            self.accept_prob
        } else {
            0.0
        }
    }
}

/// Free-function form of [`IdealPolicy::acceptance_prob`].
pub fn acceptance_prob(policy: &IdealPolicy, v: f64) -> f64 {
    policy.acceptance_prob(v)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("fair share {alpha} outside (0, 1]")))
    }
}

/// Greedy top-quantile solution of the ideal-utility program.
pub fn ideal_policy(dist: &ValueDistribution, alpha: f64) -> Result<IdealPolicy> {
    check_alpha(alpha)?;
    dist.validate()?;

    if let ValueDistribution::InverseCdfTable { grid } = dist {
        let threshold = table_quantile(grid, 1.0 - alpha);
        let below = table_cdf_left(grid, threshold);
        let upto = table_cdf(grid, threshold);
        let mass_above = 1.0 - upto;
        let mass_at = upto - below;
        let accept_prob = if mass_at > 0.0 {
            ((alpha - mass_above) / mass_at).clamp(0.0, 1.0)
        } else {
            1.0
        };
        return Ok(IdealPolicy {
            alpha,
            threshold,
            accept_prob,
            v_star: table_upper_integral(grid, 1.0 - alpha),
        });
    }

    let atoms = dist.sorted_atoms().expect("atomic distribution");
    let mut used = 0.0;
    let mut v_star = 0.0;
    for &(v, p) in &atoms {
        if p <= 0.0 {
            continue;
        }
        if used + p >= alpha {
            let q = ((alpha - used) / p).clamp(0.0, 1.0);
            return Ok(IdealPolicy {
                alpha,
                threshold: v,
                accept_prob: q,
                v_star: v_star + v * (alpha - used),
            });
        }
        used += p;
        v_star += v * p;
    }
    // Total mass below alpha (rounding only): accept everything.
    let lowest = atoms.iter().rev().find(|a| a.1 > 0.0).map_or(0.0, |a| a.0);
    Ok(IdealPolicy {
        alpha,
        threshold: lowest,
        accept_prob: 1.0,
        v_star,
    })
}

/// Exact fractional-knapsack value of the ideal-utility program on a finite
/// support. Kept separate from [`ideal_policy`] so it can serve as a check.
pub fn ideal_utility_oracle(points: &[(f64, f64)], alpha: f64) -> Result<f64> {
    if points.len() > ORACLE_MAX_SUPPORT {
        return Err(Error::Unsupported(format!(
            "support of {} points exceeds {ORACLE_MAX_SUPPORT}",
            points.len()
        )));
    }
    check_alpha(alpha)?;
    ValueDistribution::FiniteDiscrete { points: points.to_vec() }.validate()?;

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[b].0.total_cmp(&points[a].0));
    let mut capacity = alpha;
    let mut total = 0.0;
    for i in order {
        let (v, p) = points[i];
        let take = p.min(capacity);
        total += v * take;
        capacity -= take;
        if capacity <= 0.0 {
            break;
        }
    }
    Ok(total)
}

/// Index of the reduction's own ChaCha stream; inner strategies use others.
pub const REDUCTION_STREAM: u64 = 0;

/// Runs a strategy designed for Bernoulli(α) values on an arbitrary value law.
///
/// Each round the true value `V` is replaced by `V̂ ~ Bernoulli(rho*(V))`,
/// drawn independently, and the inner strategy sees only `V̂`.
#[derive(Debug, Clone)]
pub struct BernoulliReduction<S> {
    policy: IdealPolicy,
    inner: S,
    rng: ChaCha8Rng,
}

impl<S> BernoulliReduction<S> {
    pub fn policy(&self) -> &IdealPolicy {
        &self.policy
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

pub fn bernoulli_reduction<S: Strategy>(
    dist: &ValueDistribution,
    alpha: f64,
    inner: S,
) -> Result<BernoulliReduction<S>> {
    Ok(BernoulliReduction {
        policy: ideal_policy(dist, alpha)?,
        inner,
        rng: stream_rng(0, REDUCTION_STREAM),
    })
}

impl<S: Strategy> Strategy for BernoulliReduction<S> {
    fn reset(&mut self, seed: u64) {
        self.rng = stream_rng(seed, REDUCTION_STREAM);
        self.inner.reset(seed);
    }

    fn next_bid(&mut self, obs: &Observation<'_>) -> f64 {
        let rho = self.policy.acceptance_prob(obs.own_value);
        let u: f64 = self.rng.random();
        let v_hat = if u < rho { 1.0 } else { 0.0 };
        self.inner.next_bid(&obs.with_value(v_hat))
    }

    fn needs_history(&self) -> bool {
        self.inner.needs_history()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn point_masses_sample_exactly() {
        let mut rng = stream_rng(1, 0);
        let b = ValueDistribution::bernoulli(1.0).unwrap();
        let d = ValueDistribution::finite(vec![(5.0, 1.0)]).unwrap();
        for _ in 0..1000 {
            assert_eq!(b.sample(&mut rng), 1.0);
            assert_eq!(d.sample(&mut rng), 5.0);
        }
    }

    #[test]
    fn bernoulli_sample_mean() {
        // 4 sigma of the mean of 1e6 Bernoulli(0.3) draws is ~0.0018
        let d = ValueDistribution::bernoulli(0.3).unwrap();
        let mut rng = stream_rng(42, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert_close(mean, 0.3, 0.002);
    }

    #[test]
    fn table_sampling_interpolates() {
        let d = ValueDistribution::inverse_cdf(vec![(0.0, 0.0), (0.5, 1.0), (1.0, 3.0)]).unwrap();
        assert_eq!(d.quantile(0.25), 0.5);
        assert_eq!(d.quantile(0.75), 2.0);
        assert_eq!(d.quantile(0.0), 0.0);
        assert_close(d.mean(), 0.25 + 1.0, 1e-15);
    }

    #[test]
    fn rejects_malformed() {
        assert!(ValueDistribution::bernoulli(1.5).is_err());
        assert!(ValueDistribution::finite(vec![(1.0, 0.5)]).is_err());
        assert!(ValueDistribution::finite(vec![(-1.0, 1.0)]).is_err());
        assert!(ValueDistribution::inverse_cdf(vec![(0.0, 1.0), (1.0, 0.5)]).is_err());
        assert!(ValueDistribution::inverse_cdf(vec![(0.1, 0.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn parses_grammar() {
        assert_eq!(
            "bernoulli:0.25".parse::<ValueDistribution>().unwrap(),
            ValueDistribution::Bernoulli { p: 0.25 }
        );
        let d: ValueDistribution = "discrete:3:0.2,1:0.3,0:0.5".parse().unwrap();
        assert_eq!(d.to_string(), "discrete:3:0.2,1:0.3,0:0.5");
        assert!("gauss:1".parse::<ValueDistribution>().is_err());
        assert!("discrete:1".parse::<ValueDistribution>().is_err());
    }

    #[test]
    fn parses_icdf_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        std::fs::write(&path, "u,value\n0,0\n1,1\n").unwrap();
        let d: ValueDistribution = format!("icdf:{}", path.display()).parse().unwrap();
        assert_eq!(d, ValueDistribution::uniform(0.0, 1.0).unwrap());
        assert!(matches!(
            "icdf:/nonexistent/x.csv".parse::<ValueDistribution>(),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn ideal_policy_examples() {
        let p = ideal_policy(&ValueDistribution::bernoulli(0.25).unwrap(), 0.25).unwrap();
        assert_eq!((p.threshold, p.accept_prob), (1.0, 1.0));
        assert_close(p.v_star, 0.25, 1e-12);

        let d = ValueDistribution::finite(vec![(3.0, 0.2), (1.0, 0.3), (0.0, 0.5)]).unwrap();
        let p = ideal_policy(&d, 0.3).unwrap();
        assert_eq!(p.threshold, 1.0);
        assert_close(p.accept_prob, 1.0 / 3.0, 1e-12);
        assert_close(p.v_star, 0.7, 1e-12);

        let p = ideal_policy(&ValueDistribution::bernoulli(0.5).unwrap(), 0.25).unwrap();
        assert_eq!(p.threshold, 1.0);
        assert_close(p.accept_prob, 0.5, 1e-12);
        assert_close(p.v_star, 0.25, 1e-12);
    }

    #[test]
    fn ideal_policy_spills_onto_zero_atom() {
        let p = ideal_policy(&ValueDistribution::bernoulli(0.1).unwrap(), 0.25).unwrap();
        assert_eq!(p.threshold, 0.0);
        assert_close(p.accept_prob, 0.15 / 0.9, 1e-12);
        assert_close(p.v_star, 0.1, 1e-12);
        assert_eq!(p.acceptance_prob(1.0), 1.0);
    }

    #[test]
    fn ideal_policy_on_uniform_table() {
        let d = ValueDistribution::uniform(0.0, 1.0).unwrap();
        let p = ideal_policy(&d, 0.2).unwrap();
        assert_close(p.threshold, 0.8, 1e-12);
        assert_eq!(p.accept_prob, 1.0);
        assert_close(p.v_star, 0.18, 1e-12);
    }

    #[test]
    fn ideal_policy_on_table_with_atom() {
        // atom of mass 0.5 at 0, uniform on [0, 1] above
        let d = ValueDistribution::inverse_cdf(vec![(0.0, 0.0), (0.5, 0.0), (1.0, 1.0)]).unwrap();
        let p = ideal_policy(&d, 0.7).unwrap();
        assert_eq!(p.threshold, 0.0);
        assert_close(p.accept_prob, 0.4, 1e-12);
        assert_close(p.v_star, 0.25, 1e-12);
    }

    #[test]
    fn oracle_examples() {
        let d = [(3.0, 0.2), (1.0, 0.3), (0.0, 0.5)];
        assert_close(ideal_utility_oracle(&d, 0.3).unwrap(), 0.7, 1e-12);
        assert_eq!(ideal_utility_oracle(&[(1.0, 1.0)], 1.0).unwrap(), 1.0);
        assert_close(ideal_utility_oracle(&[(2.0, 0.5), (1.0, 0.5)], 0.75).unwrap(), 1.25, 1e-12);
        let big: Vec<(f64, f64)> = (0..65).map(|i| (i as f64, 1.0 / 65.0)).collect();
        assert!(matches!(ideal_utility_oracle(&big, 0.5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn acceptance_prob_examples() {
        let p = IdealPolicy {
            alpha: 0.3,
            threshold: 1.0,
            accept_prob: 1.0 / 3.0,
            v_star: 0.7,
        };
        assert_eq!(acceptance_prob(&p, 3.0), 1.0);
        assert_eq!(acceptance_prob(&p, 1.0), 1.0 / 3.0);
        assert_eq!(acceptance_prob(&p, 0.5), 0.0);
    }

    #[test]
    fn alpha_must_be_positive() {
        let d = ValueDistribution::bernoulli(0.5).unwrap();
        assert!(ideal_policy(&d, 0.0).is_err());
        assert!(ideal_policy(&d, 1.5).is_err());
    }
}
