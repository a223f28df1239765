//! Exact enumeration of the complete-graph process on tiny instances.
//!
//! Conditioned on the history, the number of declared ones at a step is the
//! sum of two independent binomials (one per inherent-opinion class), and
//! the urn parameters depend on the history only through the step index and
//! the cumulative number of declared ones. Enumerating every trajectory of
//! declared-one counts therefore gives the exact law of the process; the
//! transition probabilities here are computed directly from those counts,
//! independently of [`crate::model::ClassState`].

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{step_complete, ClassState};
use crate::replicas::map_replicas;
use crate::rng::replica_rng;

/// Largest number of enumerated trajectories, `(N+1)^T`.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// Slack for the sub-martingale inequality in floating point.
const MARGIN_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupportPoint {
    /// Declared-one counts `N Psi_0, ..., N Psi_{T-1}`.
    pub prefix: Vec<u32>,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactDistribution {
    pub n_agents: u64,
    /// `[|V^0|, |V^1|]`.
    pub class_sizes: [u64; 2],
    pub gamma: f64,
    pub horizon: usize,
    /// Every trajectory in lexicographic order, so that the position of a
    /// prefix equals its base-`(N+1)` code.
    pub support: Vec<SupportPoint>,
    /// `psi_marginals[t][k] = P(N Psi_t = k)`.
    pub psi_marginals: Vec<Vec<f64>>,
    /// `E[p_t^0]` for `t = 0..=T`.
    pub expected_p0: Vec<f64>,
    /// `E[p_t^1]` for `t = 0..=T`.
    pub expected_p1: Vec<f64>,
    /// `E[mean(Psi_0, ..., Psi_{T-1})]`.
    pub expected_psi_hat: f64,
}

/// Urn parameters after `t` steps with `ones` cumulative declared ones.
#[derive(Clone, Copy, Debug)]
struct Urns {
    p0: f64,
    p1: f64,
}

fn urns(n_agents: u64, gamma: f64, t: usize, ones: u64) -> Urns {
    let zeros = (n_agents * t as u64 - ones) as f64;
    let ones = ones as f64;
    let (a0, b0) = (1.0 + gamma * zeros, 1.0 + ones);
    let (a1, b1) = (1.0 + gamma * ones, 1.0 + zeros);
    Urns {
        p0: a0 / (a0 + b0),
        p1: a1 / (a1 + b1),
    }
}

fn binomial_pmf(m: u64, p: f64) -> Vec<f64> {
    let q = 1.0 - p;
    if m <= 60 {
        let mut coeff: u128 = 1;
        (0..=m)
            .map(|i| {
                if i > 0 {
                    coeff = coeff * (m - i + 1) as u128 / i as u128;
                }
                coeff as f64 * p.powi(i as i32) * q.powi((m - i) as i32)
            })
            .collect()
    } else {
        use statrs::function::factorial::ln_binomial;
        (0..=m)
            .map(|i| (ln_binomial(m, i) + i as f64 * p.ln() + (m - i) as f64 * q.ln()).exp())
            .collect()
    }
}

/// Law of the number of declared ones in one step.
fn step_law(class_sizes: [u64; 2], u: Urns) -> Vec<f64> {
    let from_zero = binomial_pmf(class_sizes[0], 1.0 - u.p0);
    let from_one = binomial_pmf(class_sizes[1], u.p1);
    let mut law = vec![0.0; from_zero.len() + from_one.len() - 1];
    // Far tails underflow to exactly zero; skipping them keeps large classes
    // cheap.
    let support = |pmf: &[f64]| -> Vec<(usize, f64)> {
        pmf.iter().copied().enumerate().filter(|&(_, p)| p > 0.0).collect()
    };
    let from_one = support(&from_one);
    for (i, a) in support(&from_zero) {
        for &(j, b) in &from_one {
            law[i + j] += a * b;
        }
    }
    law
}

pub fn enumerate_exact(n_agents: u64, gamma: f64, phi: f64, horizon: usize) -> Result<ExactDistribution> {
    if n_agents == 0 {
        return Err(Error::EmptyPopulation);
    }
    if !(gamma.is_finite() && gamma >= 1.0) {
        return Err(Error::Contract(format!("oracle needs gamma >= 1, got {gamma}")));
    }
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::Contract(format!("phi = {phi} outside [0, 1]")));
    }
    let leaves = (n_agents as f64 + 1.0).powi(horizon as i32);
    if leaves > ENUMERATION_LIMIT as f64 {
        return Err(Error::InstanceTooLarge {
            leaves,
            limit: ENUMERATION_LIMIT,
        });
    }
    let ones_class = ((phi * n_agents as f64) + 1e-9).floor().min(n_agents as f64) as u64;
    let class_sizes = [n_agents - ones_class, ones_class];

    let mut dist = ExactDistribution {
        n_agents,
        class_sizes,
        gamma,
        horizon,
        support: Vec::with_capacity(leaves as usize),
        psi_marginals: vec![vec![0.0; n_agents as usize + 1]; horizon],
        expected_p0: vec![0.0; horizon + 1],
        expected_p1: vec![0.0; horizon + 1],
        expected_psi_hat: 0.0,
    };
    let mut prefix = Vec::with_capacity(horizon);
    visit(&mut dist, &mut prefix, 0, 1.0);
    Ok(dist)
}

fn visit(dist: &mut ExactDistribution, prefix: &mut Vec<u32>, ones: u64, prob: f64) {
    let t = prefix.len();
    let u = urns(dist.n_agents, dist.gamma, t, ones);
    dist.expected_p0[t] += prob * u.p0;
    dist.expected_p1[t] += prob * u.p1;
    if t == dist.horizon {
        let mean = if t == 0 {
            0.0
        } else {
            ones as f64 / (dist.n_agents as f64 * t as f64)
        };
        dist.expected_psi_hat += prob * mean;
        dist.support.push(SupportPoint {
            prefix: prefix.clone(),
            probability: prob,
        });
        return;
    }
    let law = step_law(dist.class_sizes, u);
    for (k, &pk) in law.iter().enumerate() {
        dist.psi_marginals[t][k] += prob * pk;
        prefix.push(k as u32);
        visit(dist, prefix, ones + k as u64, prob * pk);
        prefix.pop();
    }
}

impl ExactDistribution {
    pub fn total_probability(&self) -> f64 {
        self.support.iter().map(|s| s.probability).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.support.iter().map(|s| s.probability).collect()
    }
}

/// Position of a prefix in [`ExactDistribution::support`].
pub fn encode_prefix(prefix: &[u32], n_agents: u64) -> u64 {
    prefix.iter().fold(0, |code, &k| code * (n_agents + 1) + k as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubmartingaleReport {
    pub states_checked: u64,
    pub violations: u64,
    pub min_margin: f64,
    pub max_margin: f64,
    /// `E[p_t]` never decreases in `t`.
    pub expected_p_nondecreasing: bool,
    /// Every `E[p_t]` lies in `[1/2, 1]`.
    pub expected_p_bounded: bool,
}

/// Checks `E[p_{t+1} | state] >= p_t` on every reachable state of a
/// homogeneous population.
pub fn submartingale_check(dist: &ExactDistribution) -> Result<SubmartingaleReport> {
    let class = match dist.class_sizes {
        [_, 0] => 0,
        [0, _] => 1,
        _ => {
            return Err(Error::Contract(
                "sub-martingale check needs a homogeneous population".into(),
            ))
        }
    };
    let truth = |u: Urns| if class == 0 { u.p0 } else { u.p1 };
    let mut report = SubmartingaleReport {
        states_checked: 0,
        violations: 0,
        min_margin: f64::INFINITY,
        max_margin: f64::NEG_INFINITY,
        expected_p_nondecreasing: true,
        expected_p_bounded: true,
    };
    for t in 0..dist.horizon {
        let reachable: BTreeSet<u64> = dist
            .support
            .iter()
            .map(|s| s.prefix[..t].iter().map(|&k| k as u64).sum())
            .collect();
        for ones in reachable {
            let now = urns(dist.n_agents, dist.gamma, t, ones);
            let law = step_law(dist.class_sizes, now);
            let next: f64 = law
                .iter()
                .enumerate()
                .map(|(k, pk)| pk * truth(urns(dist.n_agents, dist.gamma, t + 1, ones + k as u64)))
                .sum();
            let margin = next - truth(now);
            report.states_checked += 1;
            report.min_margin = report.min_margin.min(margin);
            report.max_margin = report.max_margin.max(margin);
            if margin < -MARGIN_SLACK {
                report.violations += 1;
            }
        }
    }
    let expected = if class == 0 {
        &dist.expected_p0
    } else {
        &dist.expected_p1
    };
    report.expected_p_nondecreasing = expected.windows(2).all(|w| w[1] >= w[0] - MARGIN_SLACK);
    report.expected_p_bounded = expected
        .iter()
        .all(|&e| (0.5 - MARGIN_SLACK..=1.0).contains(&e));
    if report.violations > 0 {
        return Err(Error::Consistency(format!(
            "sub-martingale inequality fails on {} of {} states (min margin {:e})",
            report.violations, report.states_checked, report.min_margin
        )));
    }
    Ok(report)
}

/// Counts of sampled trajectories, indexed like the exact support.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub n_agents: u64,
    pub horizon: usize,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(n_agents: u64, horizon: usize) -> Self {
        let cells = (n_agents + 1).pow(horizon as u32) as usize;
        Histogram {
            n_agents,
            horizon,
            counts: vec![0; cells],
        }
    }

    pub fn record(&mut self, prefix: &[u32]) -> Result<()> {
        if prefix.len() != self.horizon || prefix.iter().any(|&k| k as u64 > self.n_agents) {
            return Err(Error::MismatchedSupport(format!(
                "prefix {prefix:?} outside support (N = {}, T = {})",
                self.n_agents, self.horizon
            )));
        }
        self.counts[encode_prefix(prefix, self.n_agents) as usize] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Total variation distance between two laws on the same finite support.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::MismatchedSupport(format!(
            "supports of size {} and {}",
            p.len(),
            q.len()
        )));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

pub fn tv_distance(empirical: &Histogram, dist: &ExactDistribution) -> Result<f64> {
    if empirical.n_agents != dist.n_agents || empirical.horizon != dist.horizon {
        return Err(Error::MismatchedSupport(format!(
            "histogram for (N = {}, T = {}) against exact law for (N = {}, T = {})",
            empirical.n_agents, empirical.horizon, dist.n_agents, dist.horizon
        )));
    }
    let total = empirical.total();
    if total == 0 {
        return Err(Error::MismatchedSupport("empty histogram".into()));
    }
    let freq: Vec<f64> = empirical.counts.iter().map(|&c| c as f64 / total as f64).collect();
    total_variation(&freq, &dist.probabilities())
}

/// Samples `samples` trajectories of the class process and tallies their
/// declared-one prefixes. Work is split into fixed chunks, each with its own
/// stream, so the result does not depend on the thread count.
pub fn empirical_histogram(
    n_agents: u64,
    gamma: f64,
    phi: f64,
    horizon: usize,
    samples: u64,
    seed: u64,
) -> Histogram {
    const CHUNKS: u64 = 64;
    let ones_class = ((phi * n_agents as f64) + 1e-9).floor().min(n_agents as f64) as u64;
    let sizes = [n_agents - ones_class, ones_class];
    let parts = map_replicas(CHUNKS, |chunk| {
        let mut rng = replica_rng(seed, chunk);
        let mut hist = Histogram::new(n_agents, horizon);
        let share = samples / CHUNKS + u64::from(chunk < samples % CHUNKS);
        let mut prefix = vec![0u32; horizon];
        for _ in 0..share {
            let mut state = ClassState::with_sizes(gamma, sizes);
            for slot in prefix.iter_mut() {
                *slot = step_complete(&mut state, &mut rng).total() as u32;
            }
            hist.counts[encode_prefix(&prefix, n_agents) as usize] += 1;
        }
        hist
    });
    let mut hist = Histogram::new(n_agents, horizon);
    for part in &parts {
        hist.merge(part);
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_agent_first_step_is_fair() {
        let d = enumerate_exact(1, 2.0, 0.0, 1).unwrap();
        assert_eq!(d.support.len(), 2);
        assert!((d.support[0].probability - 0.5).abs() < 1e-15);
        assert!((d.support[1].probability - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_branch_expectation() {
        let d = enumerate_exact(1, 2.0, 0.0, 2).unwrap();
        assert!((d.expected_p0[1] - 13.0 / 24.0).abs() < 1e-15);
        assert_eq!(d.expected_p0[0], 0.5);
    }

    #[test]
    fn probabilities_sum_to_one() {
        for &(n, t, phi) in &[(1, 3, 0.0), (3, 4, 0.5), (9, 5, 0.3), (2, 10, 1.0)] {
            let d = enumerate_exact(n, 1.7, phi, t).unwrap();
            assert_eq!(d.support.len() as u64, (n + 1).pow(t as u32));
            assert!((d.total_probability() - 1.0).abs() < 1e-12);
            for marginal in &d.psi_marginals {
                assert!((marginal.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guard() {
        assert!(matches!(
            enumerate_exact(9, 2.0, 0.5, 7),
            Err(Error::InstanceTooLarge { .. })
        ));
        assert!(enumerate_exact(999_999, 2.0, 0.5, 1).is_ok());
    }

    #[test]
    fn large_class_pmf_normalized() {
        let pmf = binomial_pmf(500, 0.3);
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn submartingale_strict_for_gamma_two() {
        let d = enumerate_exact(1, 2.0, 0.0, 3).unwrap();
        let r = submartingale_check(&d).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.min_margin > 0.0);
        assert!(r.expected_p_nondecreasing && r.expected_p_bounded);
    }

    #[test]
    fn submartingale_margin_vanishes_near_gamma_one() {
        let d = enumerate_exact(2, 1.0 + 1e-9, 0.0, 2).unwrap();
        let r = submartingale_check(&d).unwrap();
        assert!(r.min_margin >= -1e-12 && r.max_margin < 1e-8, "{r:?}");
        let pure = enumerate_exact(2, 1.0, 0.0, 3).unwrap();
        let r = submartingale_check(&pure).unwrap();
        assert!(r.max_margin.abs() < 1e-15 && r.min_margin.abs() < 1e-15, "{r:?}");
    }

    #[test]
    fn opinion_one_population_mirrors_zero() {
        let zero = enumerate_exact(2, 2.0, 0.0, 3).unwrap();
        let one = enumerate_exact(2, 2.0, 1.0, 3).unwrap();
        for (a, b) in zero.expected_p0.iter().zip(&one.expected_p1) {
            assert!((a - b).abs() < 1e-15);
        }
        submartingale_check(&one).unwrap();
    }

    #[test]
    fn mixed_population_is_refused() {
        let d = enumerate_exact(2, 2.0, 0.5, 2).unwrap();
        assert!(matches!(submartingale_check(&d), Err(Error::Contract(_))));
    }

    #[test]
    fn expected_average_decreases_for_zero_population() {
        let values: Vec<f64> = (1..=6)
            .map(|t| enumerate_exact(2, 2.0, 0.0, t).unwrap().expected_psi_hat)
            .collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
        assert!((values[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tv_basics() {
        assert_eq!(total_variation(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(total_variation(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(total_variation(&[1.0], &[0.5, 0.5]).is_err());
        let d = enumerate_exact(2, 2.0, 0.0, 2).unwrap();
        let h = Histogram::new(2, 3);
        assert!(matches!(tv_distance(&h, &d), Err(Error::MismatchedSupport(_))));
        let mut h = Histogram::new(2, 2);
        assert!(h.record(&[3, 0]).is_err());
        h.record(&[0, 0]).unwrap();
        let tv = tv_distance(&h, &d).unwrap();
        assert!((tv - (1.0 - d.support[0].probability)).abs() < 1e-15);
    }

    #[test]
    fn sampled_law_matches_exact() {
        let d = enumerate_exact(2, 2.0, 0.5, 3).unwrap();
        let h = empirical_histogram(2, 2.0, 0.5, 3, 200_000, 17);
        assert_eq!(h.total(), 200_000);
        let tv = tv_distance(&h, &d).unwrap();
        assert!(tv < 0.01, "tv {tv}");
    }
}
