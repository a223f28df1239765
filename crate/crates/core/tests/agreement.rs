use opinion_urn::meanfield::{ode_path_agreement, PathAgreementConfig};
use opinion_urn::model::ClassState;
use opinion_urn::oracle::{empirical_histogram, enumerate_exact, tv_distance};
use opinion_urn::replicas::map_replicas;
use opinion_urn::rng::replica_rng;

#[test]
fn sampled_trajectories_follow_exact_law() {
    for &(n, t, gamma, phi) in &[(1, 3, 2.0, 0.0), (3, 2, 1.5, 0.5), (2, 3, 3.0, 1.0), (3, 3, 2.0, 0.5)] {
        let exact = enumerate_exact(n, gamma, phi, t).unwrap();
        let hist = empirical_histogram(n, gamma, phi, t, 200_000, 99);
        let tv = tv_distance(&hist, &exact).unwrap();
        assert!(tv < 0.01, "N={n} T={t} gamma={gamma} phi={phi}: tv {tv}");
    }
}

#[test]
fn sampled_law_separates_parameters() {
    let exact = enumerate_exact(3, 3.0, 0.0, 3).unwrap();
    let other = empirical_histogram(3, 1.2, 0.0, 3, 200_000, 5);
    assert!(tv_distance(&other, &exact).unwrap() > 0.05);
}

/// A window the clock reaches in about 1e5 steps; the full window used by
/// the acceptance suite lies far beyond any feasible run.
#[test]
fn early_window_tracks_ode() {
    let cfg = PathAgreementConfig {
        window: (1.0, 3.0),
        tolerance: 0.05,
        max_steps: 1_000_000,
        h: 0.01,
    };
    let results = map_replicas(8, |r| {
        let state = ClassState::with_sizes(3.0, [500, 500]);
        ode_path_agreement(state, 0.5, &cfg, &mut replica_rng(77, r)).unwrap()
    });
    for r in &results {
        assert!(r.reached_window_end, "{r:?}");
    }
    let agreeing = results.iter().filter(|r| r.agrees).count();
    assert!(agreeing >= 7, "{results:?}");
}

/// At a finite horizon the class probabilities sit on the ODE path at the
/// matching clock value, not yet at the equilibrium: near `l3` the slowest
/// eigenvalue of the drift is small (-2/9 for gamma = 2, phi = 0.4).
#[test]
fn finite_horizon_follows_ode_clock() {
    use opinion_urn::meanfield::{integrate_ode, step_size, MeanFieldState};
    use opinion_urn::model::step_complete;

    let (gamma, phi, horizon) = (2.0, 0.4, 500_000u64);
    let tau: f64 = (1..=horizon).map(|k| step_size(k, 200, gamma)).sum();
    let ode = integrate_ode(MeanFieldState::new(0.0, 0.25, 0.25, 0.25), gamma, phi, tau, 0.001).unwrap();
    let end = ode.last().unwrap();
    let finals = map_replicas(4, |r| {
        let mut state = ClassState::with_sizes(gamma, [120, 80]);
        let mut rng = replica_rng(404, r);
        for _ in 0..horizon {
            step_complete(&mut state, &mut rng);
        }
        (state.p0(), state.p1())
    });
    for (p0, p1) in finals {
        assert!((p0 - end.p0()).abs() < 0.03 && (p1 - end.p1()).abs() < 0.03, "({p0}, {p1}) vs ODE ({}, {})", end.p0(), end.p1());
    }
    assert!((end.p1() - 1.0 / 3.0).abs() > 0.05, "clock value {tau} already at the limit");
}
