//! Mean-field view of the complete-graph process.
//!
//! Reading the four class urn parameters `(a0, b0, a1, b1)` as one urn with
//! four colours, the shares `x = a0/S`, `y = b0/S`, `z = a1/S` follow a
//! stochastic approximation with common step `1/(4/N + (n+1)(gamma+1))`
//! driven by the vector field [`vector_field`]. This module evaluates that
//! field, integrates the ODE with fixed-step RK4, lists its equilibria and
//! the limits they imply for the truth probabilities, and provides the
//! reduced one-dimensional drift and deterministic coordinates used as
//! cross-checks.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{step_complete, ClassState};

/// Absolute tolerance for membership in the invariant set.
pub const MANIFOLD_TOL: f64 = 1e-9;

/// Points of an equilibrium set closer than this are merged.
const DEDUP_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanFieldState {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl MeanFieldState {
    pub fn new(t: f64, x: f64, y: f64, z: f64) -> Self {
        MeanFieldState { t, x, y, z }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Truth probability of class 0, `x / (x + y)`.
    pub fn p0(&self) -> f64 {
        self.x / (self.x + self.y)
    }

    /// Truth probability of class 1, `z / (1 - x - y)`.
    pub fn p1(&self) -> f64 {
        self.z / (1.0 - self.x - self.y)
    }
}

/// The compact set the coordinates never leave:
/// `x, z in [0, g/(g+1)]`, `y in [0, max(1/(g+1), 1/4)]`,
/// `x + y in [1/(g+1), g/(g+1)]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Manifold {
    pub gamma: f64,
}

impl Manifold {
    pub fn new(gamma: f64) -> Self {
        Manifold { gamma }
    }

    fn upper(&self) -> f64 {
        self.gamma / (self.gamma + 1.0)
    }

    fn lower_sum(&self) -> f64 {
        1.0 / (self.gamma + 1.0)
    }

    fn y_max(&self) -> f64 {
        self.lower_sum().max(0.25)
    }

    /// Largest constraint violation, 0 inside the set.
    pub fn violation(&self, [x, y, z]: [f64; 3]) -> f64 {
        let hi = self.upper();
        let s = x + y;
        [
            -x,
            x - hi,
            -z,
            z - hi,
            -y,
            y - self.y_max(),
            self.lower_sum() - s,
            s - hi,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn contains(&self, p: [f64; 3], tol: f64) -> bool {
        let v = self.violation(p);
        v.is_finite() && v <= tol && p.iter().all(|c| c.is_finite())
    }

    /// Projects rounding-level violations back onto the box constraints.
    pub fn clamp(&self, [x, y, z]: [f64; 3]) -> [f64; 3] {
        let hi = self.upper();
        let x = x.clamp(0.0, hi);
        let z = z.clamp(0.0, hi);
        let y = y.clamp(0.0, self.y_max());
        let y = y.clamp(self.lower_sum() - x, hi - x).max(0.0);
        [x, y, z]
    }
}

/// Normalized urn coordinates of a class state.
pub fn xyz_from_class(state: &ClassState) -> MeanFieldState {
    let [x, y, z] = urn_shares(
        [state.a0(), state.b0(), state.a1(), state.b1()],
        state.n_agents,
    );
    MeanFieldState::new(state.step as f64, x, y, z)
}

/// Shares of the first three colours for urn parameters `[a0, b0, a1, b1]`,
/// after normalizing each by `N`.
pub fn urn_shares(params: [f64; 4], n_agents: u64) -> [f64; 3] {
    let n = n_agents as f64;
    let [alpha0, beta0, alpha1, beta1] = params.map(|a| a / n);
    let total = alpha0 + beta0 + alpha1 + beta1;
    [alpha0 / total, beta0 / total, alpha1 / total]
}

/// The drift `G = (G1, G2, G3)`; `None` where it is singular.
#[inline]
fn field(gamma: f64, phi: f64, [x, y, z]: [f64; 3]) -> Option<[f64; 3]> {
    let s = x + y;
    if !(s > 0.0 && s < 1.0) {
        return None;
    }
    let p0 = x / s;
    let p1 = z / (1.0 - s);
    let declared_one = (1.0 - phi) * (1.0 - p0) + phi * p1;
    let g1 = -(gamma + 1.0) * x + gamma * ((1.0 - phi) * p0 + phi * (1.0 - p1));
    let g2 = -(gamma + 1.0) * y + declared_one;
    let g3 = -(gamma + 1.0) * z + gamma * declared_one;
    Some([g1, g2, g3])
}

/// Evaluates the mean-field drift at a point of the invariant set.
pub fn vector_field(x: f64, y: f64, z: f64, gamma: f64, phi: f64) -> Result<[f64; 3]> {
    let p = [x, y, z];
    if !Manifold::new(gamma).contains(p, MANIFOLD_TOL) {
        return Err(Error::OutsideManifold { x, y, z });
    }
    field(gamma, phi, p).ok_or(Error::OutsideManifold { x, y, z })
}

/// `1 / (4/N + n (gamma + 1))`.
pub fn step_size(n: u64, n_agents: u64, gamma: f64) -> f64 {
    1.0 / (4.0 / n_agents as f64 + n as f64 * (gamma + 1.0))
}

fn rk4(gamma: f64, phi: f64, p: [f64; 3], h: f64) -> Option<[f64; 3]> {
    let add = |a: [f64; 3], k: [f64; 3], s: f64| [a[0] + s * k[0], a[1] + s * k[1], a[2] + s * k[2]];
    let k1 = field(gamma, phi, p)?;
    let k2 = field(gamma, phi, add(p, k1, h / 2.0))?;
    let k3 = field(gamma, phi, add(p, k2, h / 2.0))?;
    let k4 = field(gamma, phi, add(p, k3, h))?;
    Some([
        p[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        p[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ])
}

/// Fixed-step RK4 with step halving whenever a step leaves the invariant set.
#[derive(Clone, Debug)]
pub struct OdeStepper {
    gamma: f64,
    phi: f64,
    h: f64,
    h_min: f64,
    manifold: Manifold,
    state: MeanFieldState,
}

impl OdeStepper {
    pub fn new(initial: MeanFieldState, gamma: f64, phi: f64, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Contract(format!("step h = {h} must be positive")));
        }
        let manifold = Manifold::new(gamma);
        let p = initial.xyz();
        if !manifold.contains(p, MANIFOLD_TOL) {
            return Err(Error::OutsideManifold {
                x: p[0],
                y: p[1],
                z: p[2],
            });
        }
        let [x, y, z] = manifold.clamp(p);
        Ok(OdeStepper {
            gamma,
            phi,
            h,
            h_min: h * 2f64.powi(-20),
            manifold,
            state: MeanFieldState::new(initial.t, x, y, z),
        })
    }

    pub fn state(&self) -> MeanFieldState {
        self.state
    }

    /// Integrates forward to time `t` in steps of at most `h`.
    pub fn advance_to(&mut self, t: f64) -> Result<MeanFieldState> {
        while self.state.t < t {
            let dt = (t - self.state.t).min(self.h);
            let p = self.advance(self.state.xyz(), dt)?;
            let t_next = if t - self.state.t <= self.h { t } else { self.state.t + dt };
            self.state = MeanFieldState::new(t_next, p[0], p[1], p[2]);
        }
        Ok(self.state)
    }

    fn advance(&self, p: [f64; 3], dt: f64) -> Result<[f64; 3]> {
        if let Some(next) = rk4(self.gamma, self.phi, p, dt) {
            if self.manifold.contains(next, MANIFOLD_TOL) {
                return Ok(self.manifold.clamp(next));
            }
        }
        let half = dt / 2.0;
        if half < self.h_min {
            return Err(Error::IntegrationFailure(format!(
                "step below {:e} still leaves the invariant set near t = {}",
                self.h_min, self.state.t
            )));
        }
        let mid = self.advance(p, half)?;
        self.advance(mid, half)
    }
}

/// RK4 trajectory on `[initial.t, t_end]`, one point per step of `h` plus
/// the end point.
pub fn integrate_ode(
    initial: MeanFieldState,
    gamma: f64,
    phi: f64,
    t_end: f64,
    h: f64,
) -> Result<Vec<MeanFieldState>> {
    let mut stepper = OdeStepper::new(initial, gamma, phi, h)?;
    let t0 = initial.t;
    if t_end.is_nan() || t_end < t0 {
        return Err(Error::Contract(format!("t_end = {t_end} before start {t0}")));
    }
    let steps = ((t_end - t0) / h - 1e-9).ceil().max(0.0) as u64;
    let mut out = Vec::with_capacity(steps as usize + 1);
    out.push(stepper.state());
    for k in 1..=steps {
        let t = (t0 + k as f64 * h).min(t_end);
        out.push(stepper.advance_to(t)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EquilibriumLabel {
    L1,
    L2,
    L3,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Equilibrium {
    /// More than one label when points coincide at a regime boundary.
    pub labels: Vec<EquilibriumLabel>,
    pub point: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquilibriumSet {
    pub gamma: f64,
    pub phi: f64,
    /// `gamma >= max(phi/(1-phi), (1-phi)/phi)`.
    pub regime_flag: bool,
    pub points: Vec<Equilibrium>,
}

impl EquilibriumSet {
    pub fn contains_label(&self, label: EquilibriumLabel) -> bool {
        self.points.iter().any(|e| e.labels.contains(&label))
    }
}

/// Whether the interior equilibrium exists, written without divisions so
/// that `phi` in `{0, 1}` needs no special case.
pub fn interior_regime(gamma: f64, phi: f64) -> bool {
    gamma * phi >= 1.0 - phi && gamma * (1.0 - phi) >= phi
}

pub fn equilibria(gamma: f64, phi: f64) -> EquilibriumSet {
    let d = gamma * gamma - 1.0;
    let mut candidates = vec![
        (EquilibriumLabel::L1, [0.0, 1.0 / (gamma + 1.0), gamma / (gamma + 1.0)]),
        (EquilibriumLabel::L2, [gamma / (gamma + 1.0), 0.0, 0.0]),
    ];
    let regime_flag = interior_regime(gamma, phi);
    if regime_flag {
        let minority_one = gamma * phi - (1.0 - phi);
        candidates.push((
            EquilibriumLabel::L3,
            [
                gamma * (gamma * (1.0 - phi) - phi) / d,
                minority_one / d,
                gamma * minority_one / d,
            ],
        ));
    }
    let mut points: Vec<Equilibrium> = Vec::new();
    for (label, point) in candidates {
        match points
            .iter_mut()
            .find(|e| e.point.iter().zip(&point).all(|(a, b)| (a - b).abs() < DEDUP_TOL))
        {
            Some(existing) => existing.labels.push(label),
            None => points.push(Equilibrium {
                labels: vec![label],
                point,
            }),
        }
    }
    EquilibriumSet {
        gamma,
        phi,
        regime_flag,
        points,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitCase {
    /// Both classes keep a nondegenerate truth probability.
    Interior,
    /// Opinion-0 majority: `(p0, p1) -> (1, 0)`.
    MajorityZero,
    /// Opinion-1 majority: `(p0, p1) -> (0, 1)`.
    MajorityOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PredictedLimits {
    pub case: LimitCase,
    pub p0_inf: f64,
    pub p1_inf: f64,
    pub psi_hat_inf: f64,
    pub g_inf: f64,
}

/// Almost-sure limits of the class truth probabilities and of the
/// estimators fed by them.
pub fn predicted_limits(gamma: f64, phi: f64) -> PredictedLimits {
    let (case, p0, p1) = if interior_regime(gamma, phi) {
        let d = gamma * gamma - 1.0;
        (
            LimitCase::Interior,
            gamma * (gamma * (1.0 - phi) - phi) / ((1.0 - phi) * d),
            gamma * (gamma * phi - (1.0 - phi)) / (phi * d),
        )
    } else if gamma * phi < 1.0 - phi {
        (LimitCase::MajorityZero, 1.0, 0.0)
    } else {
        (LimitCase::MajorityOne, 0.0, 1.0)
    };
    let psi_hat = (1.0 - phi) * (1.0 - p0) + phi * p1;
    PredictedLimits {
        case,
        p0_inf: p0,
        p1_inf: p1,
        psi_hat_inf: psi_hat,
        g_inf: (psi_hat * (gamma - 1.0) + 1.0) / (gamma + 1.0),
    }
}

/// Drift of `x` once `d = x + gamma y` and `e = x + z` sit at their common
/// limit `gamma/(gamma+1)`.
pub fn reduced_drift_g1(x: f64, gamma: f64, phi: f64) -> f64 {
    let s = gamma / (gamma + 1.0);
    let root = gamma / (gamma * gamma - 1.0) * (gamma * (1.0 - phi) - phi);
    let scale = (gamma + 1.0) * (gamma - 1.0).powi(2)
        / (((gamma - 1.0) * x + s) * (gamma * gamma / (gamma + 1.0) - (gamma - 1.0) * x));
    scale * x * (x - s) * (x - root)
}

/// Coupling term `G1(x, (d-x)/gamma, e-x) - G1` on the reduced manifold.
/// Diagnostic only.
pub fn coupling_g2(x: f64, d: f64, e: f64, gamma: f64, phi: f64) -> Option<f64> {
    let s = gamma / (gamma + 1.0);
    let at = |d: f64, e: f64| field(gamma, phi, [x, (d - x) / gamma, e - x]).map(|g| g[0]);
    Some(at(d, e)? - at(s, s)?)
}

/// Zeros of [`reduced_drift_g1`] on `[0, gamma/(gamma+1)]`, found by a sign
/// scan with bisection refinement (endpoints included when they vanish).
pub fn g1_roots(gamma: f64, phi: f64) -> Vec<f64> {
    const CELLS: usize = 100_000;
    let hi = gamma / (gamma + 1.0);
    let f = |x: f64| reduced_drift_g1(x, gamma, phi);
    let mut roots = Vec::new();
    let push = |r: f64, roots: &mut Vec<f64>| {
        if roots.iter().all(|&q: &f64| (q - r).abs() > 1e-10) {
            roots.push(r);
        }
    };
    let grid: Vec<f64> = (0..=CELLS).map(|i| hi * i as f64 / CELLS as f64).collect();
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (f(a), f(b));
        if fa == 0.0 {
            push(a, &mut roots);
        }
        if fa * fb < 0.0 {
            let (mut lo, mut up, mut flo) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (lo + up);
                let fm = f(mid);
                if fm == 0.0 || up - lo < 1e-15 {
                    lo = mid;
                    up = mid;
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    up = mid;
                }
            }
            push(0.5 * (lo + up), &mut roots);
        }
    }
    if f(hi).abs() == 0.0 {
        push(hi, &mut roots);
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Deterministic coordinates `D_n = X_n + gamma Y_n` and `E_n = X_n + Z_n`.
///
/// `a0 + gamma b0` and `a0 + a1` each grow by exactly `gamma N` per step,
/// from `1 + gamma` and `2` respectively, so
/// `D_n = ((1+gamma)/N + n gamma) / (4/N + n (gamma+1))` and
/// `E_n = (2/N + n gamma) / (4/N + n (gamma+1))`.
pub fn deterministic_dn_en(n: u64, n_agents: u64, gamma: f64) -> (f64, f64) {
    let inv_n = 1.0 / n_agents as f64;
    let n = n as f64;
    let denom = 4.0 * inv_n + n * (gamma + 1.0);
    (
        ((1.0 + gamma) * inv_n + n * gamma) / denom,
        (2.0 * inv_n + n * gamma) / denom,
    )
}

/// Drift of the homogeneous truth probability, `(gamma - 1) p (1 - p)`.
pub fn homogeneous_drift(p: f64, gamma: f64) -> f64 {
    -(gamma - 1.0) * p * p + (gamma - 1.0) * p
}

/// `gamma x / (1 + (gamma - 1) x)`.
pub fn limit_map(x: f64, gamma: f64) -> f64 {
    gamma * x / (1.0 + (gamma - 1.0) * x)
}

/// Largest deviations of a recorded state from the deterministic identities
/// and the invariant-set bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub states: u64,
    pub max_d_residual: f64,
    pub max_e_residual: f64,
    pub max_manifold_violation: f64,
}

impl InvariantCheck {
    pub fn observe(&mut self, n: u64, n_agents: u64, gamma: f64, s: &MeanFieldState) {
        let (d, e) = deterministic_dn_en(n, n_agents, gamma);
        self.states += 1;
        self.max_d_residual = self.max_d_residual.max((s.x + gamma * s.y - d).abs());
        self.max_e_residual = self.max_e_residual.max((s.x + s.z - e).abs());
        self.max_manifold_violation = self
            .max_manifold_violation
            .max(Manifold::new(gamma).violation(s.xyz()));
    }

    pub fn merge(&mut self, other: &InvariantCheck) {
        self.states += other.states;
        self.max_d_residual = self.max_d_residual.max(other.max_d_residual);
        self.max_e_residual = self.max_e_residual.max(other.max_e_residual);
        self.max_manifold_violation = self.max_manifold_violation.max(other.max_manifold_violation);
    }
}

/// Settings for comparing a sampled path with the ODE on the
/// stochastic-approximation clock `tau_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PathAgreementConfig {
    pub window: (f64, f64),
    pub tolerance: f64,
    pub max_steps: u64,
    /// Largest RK4 step used to follow the path.
    pub h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PathAgreement {
    pub steps: u64,
    /// Clock value at the last simulated step.
    pub tau_reached: f64,
    pub reached_window_end: bool,
    /// Sup-norm distance over the part of the window that was covered.
    pub sup_distance: Option<f64>,
    pub agrees: bool,
    /// Extrapolated number of steps needed to reach the window end.
    pub log10_steps_required: f64,
}

/// Simulates the class process, places `X_n` at `tau_n`, where
/// `tau_{n+1} - tau_n = 1/(4/N + (n+1)(gamma+1))` is the exact step of the
/// recursion for `X`, and measures the sup-distance between the linearly
/// interpolated path and the ODE started from the path at the window start.
pub fn ode_path_agreement<R: Rng + ?Sized>(
    mut state: ClassState,
    phi: f64,
    cfg: &PathAgreementConfig,
    rng: &mut R,
) -> Result<PathAgreement> {
    let (t_start, t_end) = cfg.window;
    if !(t_start >= 0.0 && t_end > t_start) {
        return Err(Error::Contract(format!("bad window [{t_start}, {t_end}]")));
    }
    let gamma = state.gamma;
    let n_agents = state.n_agents;
    let manifold = Manifold::new(gamma);
    let mut tau = 0.0;
    let mut prev = xyz_from_class(&state).xyz();
    let mut ode: Option<OdeStepper> = None;
    let mut sup: Option<f64> = None;
    let lerp = |a: [f64; 3], b: [f64; 3], w: f64| {
        [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1]), a[2] + w * (b[2] - a[2])]
    };
    let dist = |a: [f64; 3], b: [f64; 3]| {
        (a[0] - b[0]).abs().max((a[1] - b[1]).abs()).max((a[2] - b[2]).abs())
    };
    if t_start == 0.0 {
        ode = Some(OdeStepper::new(MeanFieldState::new(0.0, prev[0], prev[1], prev[2]), gamma, phi, cfg.h)?);
        sup = Some(0.0);
    }
    let mut steps = 0;
    let mut reached = false;
    while steps < cfg.max_steps {
        step_complete(&mut state, rng);
        steps += 1;
        let next = xyz_from_class(&state).xyz();
        let tau_next = tau + step_size(steps, n_agents, gamma);
        if ode.is_none() && tau_next >= t_start {
            let w = (t_start - tau) / (tau_next - tau);
            let start = manifold.clamp(lerp(prev, next, w));
            ode = Some(OdeStepper::new(
                MeanFieldState::new(t_start, start[0], start[1], start[2]),
                gamma,
                phi,
                cfg.h,
            )?);
            sup = Some(0.0);
        }
        if let Some(stepper) = ode.as_mut() {
            let (t_cmp, path) = if tau_next >= t_end {
                (t_end, lerp(prev, next, (t_end - tau) / (tau_next - tau)))
            } else {
                (tau_next, next)
            };
            let solved = stepper.advance_to(t_cmp)?;
            let d = dist(path, solved.xyz());
            sup = Some(sup.unwrap_or(0.0).max(d));
            if tau_next >= t_end {
                tau = tau_next;
                reached = true;
                break;
            }
        }
        tau = tau_next;
        prev = next;
    }
    let log10_steps_required = if reached {
        (steps as f64).log10()
    } else {
        ((steps.max(1) as f64).ln() + (gamma + 1.0) * (t_end - tau)) / std::f64::consts::LN_10
    };
    let agrees = reached && sup.is_some_and(|s| s <= cfg.tolerance);
    Ok(PathAgreement {
        steps,
        tau_reached: tau,
        reached_window_end: reached,
        sup_distance: sup,
        agrees,
        log10_steps_required,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_coordinates_are_quarters() {
        let s = ClassState::with_sizes(2.5, [3, 4]);
        let m = xyz_from_class(&s);
        assert_eq!(m.xyz(), [0.25, 0.25, 0.25]);
    }

    #[test]
    fn explicit_parameters_give_expected_shares() {
        for n in [1, 7, 1000] {
            assert_eq!(urn_shares([3.0, 1.0, 2.0, 2.0], n), [0.375, 0.125, 0.25]);
        }
    }

    #[test]
    fn l1_is_stationary() {
        let g = vector_field(0.0, 0.25, 0.75, 3.0, 0.4).unwrap();
        assert!(g.iter().all(|c| c.abs() < 1e-15), "{g:?}");
    }

    #[test]
    fn field_hand_value() {
        let g = vector_field(0.5, 0.1, 0.2, 2.0, 0.3).unwrap();
        assert!((g[0] + 1.0 / 30.0).abs() < 1e-14, "{}", g[0]);
    }

    #[test]
    fn symmetric_interior_equilibrium() {
        let g = vector_field(0.375, 0.125, 0.375, 3.0, 0.5).unwrap();
        assert!(g.iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn outside_manifold_is_refused() {
        let err = vector_field(0.6, 0.3, 0.1, 2.0, 0.5).unwrap_err();
        assert!(matches!(err, Error::OutsideManifold { .. }));
    }

    #[test]
    fn step_sizes() {
        assert_eq!(step_size(0, 4, 3.0), 1.0);
        assert_eq!(step_size(1, 4, 3.0), 0.2);
        let (mut sum, mut sq) = (0.0, 0.0);
        let mut checkpoints = Vec::new();
        for n in 1..=1_000_000u64 {
            let s = step_size(n, 10, 2.0);
            sum += s;
            sq += s * s;
            if n == 1_000 || n == 1_000_000 {
                checkpoints.push((sum, sq));
            }
        }
        // partial sums grow like ln(n)/3; squares settle below pi^2/54
        assert!(checkpoints[1].0 - checkpoints[0].0 > 0.99 * (1000f64).ln() / 3.0);
        assert!(checkpoints[1].1 - checkpoints[0].1 < 1e-3 / 9.0);
        assert!(sq < std::f64::consts::PI.powi(2) / 54.0 + 1e-12);
    }

    #[test]
    fn fixed_point_trajectory_is_constant() {
        let start = MeanFieldState::new(0.0, 0.75, 0.0, 0.0);
        let traj = integrate_ode(start, 3.0, 0.5, 5.0, 0.01).unwrap();
        assert_eq!(traj.len(), 501);
        assert!(traj.iter().all(|s| (s.x - 0.75).abs() < 1e-15 && s.y.abs() < 1e-15 && s.z.abs() < 1e-15));
    }

    #[test]
    fn converges_to_symmetric_equilibrium() {
        let start = MeanFieldState::new(0.0, 0.25, 0.25, 0.25);
        let traj = integrate_ode(start, 3.0, 0.5, 50.0, 0.01).unwrap();
        let end = traj.last().unwrap();
        assert_eq!(end.t, 50.0);
        let target = [0.375, 0.125, 0.375];
        for (a, b) in end.xyz().iter().zip(&target) {
            assert!((a - b).abs() < 1e-6, "{:?}", end);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        let start = MeanFieldState::new(0.0, 0.3, 0.2, 0.1);
        let (gamma, phi, t_end) = (2.0, 0.3, 2.0);
        let reference = *integrate_ode(start, gamma, phi, t_end, 1e-3).unwrap().last().unwrap();
        let hs = [0.2, 0.1, 0.05, 0.025];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| {
                let e = *integrate_ode(start, gamma, phi, t_end, h).unwrap().last().unwrap();
                e.xyz()
                    .iter()
                    .zip(reference.xyz())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        // least-squares slope of log(err) against log(h)
        let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!(slope >= 3.5, "observed order {slope}, errors {errs:?}");
    }

    #[test]
    fn integrate_rejects_bad_start() {
        let bad = MeanFieldState::new(0.0, 0.9, 0.05, 0.0);
        assert!(matches!(integrate_ode(bad, 2.0, 0.5, 1.0, 0.01), Err(Error::OutsideManifold { .. })));
    }

    #[test]
    fn equilibrium_sets() {
        let set = equilibria(3.0, 0.5);
        assert!(set.regime_flag);
        let pts: Vec<[f64; 3]> = set.points.iter().map(|e| e.point).collect();
        assert_eq!(pts[0], [0.0, 0.25, 0.75]);
        assert_eq!(pts[1], [0.75, 0.0, 0.0]);
        assert_eq!(pts[2], [0.375, 0.125, 0.375]);
        let lopsided = equilibria(1.2, 0.9);
        assert!(!lopsided.regime_flag);
        assert_eq!(lopsided.points.len(), 2);
        assert!(!lopsided.contains_label(EquilibriumLabel::L3));
    }

    #[test]
    fn boundary_equilibria_merge() {
        // gamma = (1-phi)/phi: l3 sits on l2
        let set = equilibria(1.5, 0.4);
        assert!(set.regime_flag);
        assert_eq!(set.points.len(), 2);
        assert!(set.contains_label(EquilibriumLabel::L3));
    }

    #[test]
    fn limits() {
        let minority = predicted_limits(3.0, 0.1);
        assert_eq!(minority.case, LimitCase::MajorityZero);
        assert_eq!((minority.p0_inf, minority.p1_inf), (1.0, 0.0));
        assert_eq!(minority.psi_hat_inf, 0.0);
        assert_eq!(minority.g_inf, 0.25);
        let mixed = predicted_limits(2.0, 0.4);
        assert!((mixed.p0_inf - 8.0 / 9.0).abs() < 1e-15);
        assert!((mixed.p1_inf - 1.0 / 3.0).abs() < 1e-15);
        assert!((mixed.psi_hat_inf - 0.2).abs() < 1e-15);
        assert!((mixed.g_inf - 0.4).abs() < 1e-15);
        let sym = predicted_limits(3.0, 0.5);
        assert_eq!((sym.p0_inf, sym.p1_inf, sym.psi_hat_inf, sym.g_inf), (0.75, 0.75, 0.5, 0.5));
        let majority_one = predicted_limits(3.0, 0.9);
        assert_eq!(majority_one.case, LimitCase::MajorityOne);
        assert_eq!(majority_one.g_inf, 0.75);
    }

    #[test]
    fn g1_zeros() {
        assert_eq!(reduced_drift_g1(0.0, 3.0, 0.5), 0.0);
        assert_eq!(reduced_drift_g1(0.75, 3.0, 0.5), 0.0);
        assert_eq!(reduced_drift_g1(0.375, 3.0, 0.5), 0.0);
        let roots = g1_roots(3.0, 0.5);
        assert_eq!(roots.len(), 3);
        assert!((roots[1] - 0.375).abs() < 1e-12);
    }

    #[test]
    fn g1_equals_field_on_reduced_manifold() {
        for &(gamma, phi) in &[(2.0, 0.3), (3.0, 0.5), (1.5, 0.8), (5.0, 0.05)] {
            let s: f64 = gamma / (gamma + 1.0);
            for i in 0..=50 {
                let x = s * i as f64 / 50.0;
                let direct = field(gamma, phi, [x, (s - x) / gamma, s - x]).unwrap()[0];
                let reduced = reduced_drift_g1(x, gamma, phi);
                assert!((direct - reduced).abs() < 1e-12, "gamma {gamma} phi {phi} x {x}");
                assert!(coupling_g2(x, s, s, gamma, phi).unwrap().abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dn_en_closed_forms() {
        let (d0, e0) = deterministic_dn_en(0, 7, 2.0);
        assert!((d0 - 0.75).abs() < 1e-15 && (e0 - 0.5).abs() < 1e-15);
        let (d, e) = deterministic_dn_en(u32::MAX as u64, 7, 2.0);
        assert!((d - 2.0 / 3.0).abs() < 1e-9 && (e - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn scalar_maps() {
        assert_eq!(homogeneous_drift(0.0, 3.0), 0.0);
        assert_eq!(homogeneous_drift(1.0, 3.0), 0.0);
        assert_eq!(homogeneous_drift(0.5, 3.0), 0.5);
        for i in 1..100 {
            let p = i as f64 / 100.0;
            assert!(homogeneous_drift(p, 1.5) > 0.0);
            assert!(limit_map(p, 1.5) > p);
        }
        assert_eq!(limit_map(0.0, 2.0), 0.0);
        assert_eq!(limit_map(1.0, 2.0), 1.0);
    }
}
