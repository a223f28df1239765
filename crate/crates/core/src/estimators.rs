//! Observable statistics and the estimators built on them: the running
//! average of the declared-one fraction, the affine estimate `g` of the
//! inherent-one fraction, the regime call and per-agent decoding.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::meanfield::predicted_limits;
use crate::model::Opinion;

/// Slack allowed on `g` outside `[1/(gamma+1), gamma/(gamma+1)]` before the
/// input is rejected.
const RANGE_SLACK: f64 = 1e-9;

/// Running time-averages of declared opinions.
///
/// `psi_hat` follows `psi_hat_{n+1} = (n psi_hat_n + psi_n) / (n + 1)`.
/// Per-agent averages are kept as integer sums, so they are exact.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMeans {
    pub step: u64,
    pub psi_hat: f64,
    burn_in: u64,
    seen: u64,
    agent_sums: Vec<u64>,
}

impl RunningMeans {
    /// `n_agents` may be zero when per-agent streams are not tracked.
    pub fn new(n_agents: usize) -> Self {
        Self::with_burn_in(n_agents, 0)
    }

    /// Discards the first `burn_in` updates.
    pub fn with_burn_in(n_agents: usize, burn_in: u64) -> Self {
        RunningMeans {
            step: 0,
            psi_hat: 0.0,
            burn_in,
            seen: 0,
            agent_sums: vec![0; n_agents],
        }
    }

    pub fn update(&mut self, psi: f64, declared: Option<&[Opinion]>) {
        self.seen += 1;
        if self.seen <= self.burn_in {
            return;
        }
        let n = self.step as f64;
        self.psi_hat = (n * self.psi_hat + psi) / (n + 1.0);
        if let Some(declared) = declared {
            assert_eq!(declared.len(), self.agent_sums.len(), "per-agent stream length");
            for (sum, &d) in self.agent_sums.iter_mut().zip(declared) {
                *sum += d as u64;
            }
        }
        self.step += 1;
    }

    pub fn tracks_agents(&self) -> bool {
        !self.agent_sums.is_empty()
    }

    /// Time-average of each agent's declarations; empty before the first
    /// update or when agents are not tracked.
    pub fn per_agent_mean(&self) -> Vec<f64> {
        if self.step == 0 {
            return Vec::new();
        }
        let n = self.step as f64;
        self.agent_sums.iter().map(|&s| s as f64 / n).collect()
    }
}

/// `g = (psi_hat (gamma - 1) + 1) / (gamma + 1)`.
pub fn phi_estimator(psi_hat: f64, gamma: f64) -> f64 {
    (psi_hat * (gamma - 1.0) + 1.0) / (gamma + 1.0)
}

/// Default finite-sample band around the endpoints of the range of `g`:
/// three binomial standard errors of the pooled declaration mean, mapped
/// onto the `g` scale, floored at 0.01.
pub fn default_epsilon(psi_hat: f64, gamma: f64, n_agents: u64, steps: u64) -> f64 {
    let draws = (n_agents * steps) as f64;
    if draws == 0.0 {
        return 0.01;
    }
    let p = psi_hat.clamp(0.0, 1.0);
    let se = (p * (1.0 - p) / draws).sqrt() * (gamma - 1.0) / (gamma + 1.0);
    (3.0 * se).max(0.01)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Interior,
    MajorityZero,
    MajorityOne,
    /// Unused by [`classify_regime`]; kept for reports built from degenerate
    /// inputs where both bands overlap.
    BoundaryUndecided,
}

/// What the estimator can say about the inherent-one fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiStatement {
    Estimate(f64),
    AtMost(f64),
    AtLeast(f64),
}

impl PhiStatement {
    pub fn describe(&self) -> String {
        match self {
            PhiStatement::Estimate(v) => format!("Φ = {v}"),
            PhiStatement::AtMost(v) => format!("Φ ≤ {v}"),
            PhiStatement::AtLeast(v) => format!("Φ ≥ {v}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegimeCall {
    pub regime: Regime,
    pub phi: PhiStatement,
    pub epsilon: f64,
}

pub fn classify_regime(g: f64, gamma: f64, epsilon: f64) -> Result<RegimeCall> {
    let lo = 1.0 / (gamma + 1.0);
    let hi = gamma / (gamma + 1.0);
    if !(g >= lo - RANGE_SLACK && g <= hi + RANGE_SLACK) || epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::Contract(format!(
            "g = {g} outside [{lo}, {hi}] (epsilon = {epsilon})"
        )));
    }
    let (regime, phi) = if lo + epsilon >= hi - epsilon {
        (Regime::BoundaryUndecided, PhiStatement::Estimate(g))
    } else if g <= lo + epsilon {
        (Regime::MajorityZero, PhiStatement::AtMost(lo))
    } else if g >= hi - epsilon {
        (Regime::MajorityOne, PhiStatement::AtLeast(hi))
    } else {
        (Regime::Interior, PhiStatement::Estimate(g))
    };
    Ok(RegimeCall {
        regime,
        phi,
        epsilon,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoded {
    Opinion(Opinion),
    Unclassified,
}

impl Serialize for Decoded {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Decoded::Opinion(o) => s.serialize_u8(*o),
            Decoded::Unclassified => s.serialize_str("unclassified"),
        }
    }
}

/// Limits of the per-agent averages: `one` for agents with inherent opinion
/// 1 (their truth probability) and `zero` for agents with inherent opinion 0
/// (one minus theirs).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecodingTargets {
    pub one: f64,
    pub zero: f64,
}

impl DecodingTargets {
    /// Plug-in targets from an estimated inherent-one fraction.
    pub fn from_phi(gamma: f64, phi: f64) -> Self {
        let limits = predicted_limits(gamma, phi);
        DecodingTargets {
            one: limits.p1_inf,
            zero: 1.0 - limits.p0_inf,
        }
    }

    pub fn default_delta(&self) -> f64 {
        0.25 * (self.one - self.zero).abs()
    }
}

/// Assigns each agent to the nearer target; ties and agents farther than
/// `delta` from both targets stay unclassified.
pub fn decode_individual(
    per_agent_mean: &[f64],
    targets: DecodingTargets,
    delta: f64,
) -> Result<Vec<Decoded>> {
    if targets.one == targets.zero {
        return Err(Error::DecodingImpossible(targets.one));
    }
    Ok(per_agent_mean
        .iter()
        .map(|&m| {
            let d1 = (m - targets.one).abs();
            let d0 = (m - targets.zero).abs();
            if d1.min(d0) > delta || d1 == d0 {
                Decoded::Unclassified
            } else if d1 < d0 {
                Decoded::Opinion(1)
            } else {
                Decoded::Opinion(0)
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateDiagnostics {
    pub steps: u64,
    pub psi_hat: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub delta: Option<f64>,
    pub n_agents: Option<u64>,
    pub unclassified: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub g_n: f64,
    pub regime: Regime,
    pub phi_estimate: PhiStatement,
    pub decoded_opinions: Option<Vec<Decoded>>,
    pub predicted_targets: Option<DecodingTargets>,
    pub diagnostics: EstimateDiagnostics,
}

/// Inputs for [`build_report`].
#[derive(Clone, Debug, Default)]
pub struct EstimateInput<'a> {
    pub psi_hat: f64,
    pub steps: u64,
    pub gamma: f64,
    pub n_agents: Option<u64>,
    pub per_agent_mean: Option<&'a [f64]>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
}

/// Runs the estimator chain: `g`, regime call and, in the interior regime
/// with per-agent means available, decoding against plug-in targets.
pub fn build_report(input: &EstimateInput<'_>) -> Result<EstimateReport> {
    let gamma = input.gamma;
    let g = phi_estimator(input.psi_hat, gamma);
    let epsilon = input.epsilon.unwrap_or_else(|| {
        default_epsilon(input.psi_hat, gamma, input.n_agents.unwrap_or(0), input.steps)
    });
    let call = classify_regime(g, gamma, epsilon)?;
    let (decoded, targets, delta) = match (call.regime, input.per_agent_mean) {
        (Regime::Interior, Some(means)) => {
            let targets = DecodingTargets::from_phi(gamma, g);
            let delta = input.delta.unwrap_or_else(|| targets.default_delta());
            (Some(decode_individual(means, targets, delta)?), Some(targets), Some(delta))
        }
        (Regime::Interior, None) => (None, Some(DecodingTargets::from_phi(gamma, g)), None),
        _ => (None, None, None),
    };
    let unclassified = decoded
        .as_ref()
        .map_or(0, |d| d.iter().filter(|&&x| x == Decoded::Unclassified).count());
    Ok(EstimateReport {
        g_n: g,
        regime: call.regime,
        phi_estimate: call.phi,
        decoded_opinions: decoded,
        predicted_targets: targets,
        diagnostics: EstimateDiagnostics {
            steps: input.steps,
            psi_hat: input.psi_hat,
            gamma,
            epsilon,
            delta,
            n_agents: input.n_agents,
            unclassified,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_mean_recurrence() {
        let mut rm = RunningMeans::new(0);
        rm.update(0.5, None);
        assert_eq!(rm.psi_hat, 0.5);
        rm.update(0.0, None);
        assert_eq!(rm.psi_hat, 0.25);
        let mut c = RunningMeans::new(0);
        for _ in 0..1000 {
            c.update(0.3, None);
            assert!((c.psi_hat - 0.3).abs() < 1e-14);
        }
    }

    #[test]
    fn running_mean_burn_in() {
        let mut rm = RunningMeans::with_burn_in(2, 2);
        rm.update(1.0, Some(&[1, 1]));
        rm.update(1.0, Some(&[1, 1]));
        rm.update(0.5, Some(&[1, 0]));
        assert_eq!(rm.step, 1);
        assert_eq!(rm.psi_hat, 0.5);
        assert_eq!(rm.per_agent_mean(), vec![1.0, 0.0]);
    }

    #[test]
    fn estimator_endpoints() {
        assert_eq!(phi_estimator(0.0, 3.0), 0.25);
        assert_eq!(phi_estimator(1.0, 3.0), 0.75);
        assert!((phi_estimator(0.2, 2.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn regimes() {
        let zero = classify_regime(0.25, 3.0, 0.0).unwrap();
        assert_eq!(zero.regime, Regime::MajorityZero);
        assert_eq!(zero.phi, PhiStatement::AtMost(0.25));
        assert_eq!(zero.phi.describe(), "Φ ≤ 0.25");
        let mid = classify_regime(0.5, 3.0, 0.0).unwrap();
        assert_eq!(mid.regime, Regime::Interior);
        assert_eq!(mid.phi, PhiStatement::Estimate(0.5));
        let one = classify_regime(0.75, 3.0, 0.0).unwrap();
        assert_eq!(one.regime, Regime::MajorityOne);
        assert_eq!(one.phi, PhiStatement::AtLeast(0.75));
        assert!(matches!(classify_regime(0.8, 3.0, 0.0), Err(Error::Contract(_))));
        assert_eq!(classify_regime(0.255, 3.0, 0.01).unwrap().regime, Regime::MajorityZero);
        assert_eq!(classify_regime(0.5, 3.0, 0.3).unwrap().regime, Regime::BoundaryUndecided);
    }

    #[test]
    fn decoding_symmetric_case() {
        let t = DecodingTargets::from_phi(3.0, 0.5);
        assert!((t.one - 0.75).abs() < 1e-15 && (t.zero - 0.25).abs() < 1e-15);
        let d = decode_individual(&[0.7, 0.5, 0.26, 0.05], t, t.default_delta()).unwrap();
        assert_eq!(
            d,
            vec![
                Decoded::Opinion(1),
                Decoded::Unclassified,
                Decoded::Opinion(0),
                Decoded::Unclassified
            ]
        );
    }

    #[test]
    fn decoding_asymmetric_case() {
        let t = DecodingTargets::from_phi(2.0, 0.4);
        assert!((t.one - 1.0 / 3.0).abs() < 1e-12);
        assert!((t.zero - 1.0 / 9.0).abs() < 1e-12);
        let d = decode_individual(&[0.12], t, t.default_delta()).unwrap();
        assert_eq!(d, vec![Decoded::Opinion(0)]);
    }

    #[test]
    fn degenerate_targets() {
        let t = DecodingTargets { one: 0.4, zero: 0.4 };
        assert!(matches!(decode_individual(&[0.4], t, 0.1), Err(Error::DecodingImpossible(_))));
    }

    #[test]
    fn report_serializes_as_documented() {
        let means = [0.74, 0.26];
        let report = build_report(&EstimateInput {
            psi_hat: 0.5,
            steps: 1000,
            gamma: 3.0,
            n_agents: Some(2),
            per_agent_mean: Some(&means),
            ..Default::default()
        })
        .unwrap();
        let v = serde_json::to_value(&report).unwrap();
        assert_eq!(v["regime"], "interior");
        assert_eq!(v["phi_estimate"]["estimate"], 0.5);
        assert_eq!(v["decoded_opinions"], serde_json::json!([1, 0]));
        let majority = build_report(&EstimateInput {
            psi_hat: 0.0,
            steps: 1000,
            gamma: 3.0,
            ..Default::default()
        })
        .unwrap();
        let v = serde_json::to_value(&majority).unwrap();
        assert_eq!(v["regime"], "majority_zero");
        assert_eq!(v["phi_estimate"]["at_most"], 0.25);
        let u = serde_json::to_value(Decoded::Unclassified).unwrap();
        assert_eq!(u, "unclassified");
    }
}
