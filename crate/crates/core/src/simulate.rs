//! Replica runs with per-step rows.
//!
//! Step `n` runs from `0` to the horizon `T` inclusive; row `n` holds the
//! state the step-`n` declarations were drawn from (`p0`, `p1`, `X`, `Y`,
//! `Z`), the fraction `Psi_n` declaring 1, the running mean
//! `Psi_hat = mean(Psi_0, ..., Psi_n)` and `g` evaluated at it.

use serde::Serialize;

use crate::estimators::{phi_estimator, RunningMeans};
use crate::meanfield::xyz_from_class;
use crate::model::{init_population, step_complete, step_general, ClassState, Model, Opinion, PopulationState};
use crate::replicas::map_replicas;
use crate::rng::replica_rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Row {
    pub n: u64,
    pub psi: f64,
    pub psi_hat: f64,
    pub g: f64,
    /// Truth probability of class 0; absent on general graphs with no such
    /// agent.
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    /// `(X, Y, Z)`, complete graph only.
    pub xyz: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicaRun {
    pub replica: u64,
    /// Number of declaration rounds, `T + 1`.
    pub rounds: u64,
    pub last: Row,
    pub per_agent_mean: Option<Vec<f64>>,
}

/// Rows kept when thinning with `record_every`: multiples of it and the
/// final step.
pub fn is_recorded(n: u64, horizon: u64, record_every: u64) -> bool {
    n.is_multiple_of(record_every) || n == horizon
}

fn class_means(model: &Model, state: &PopulationState) -> (Option<f64>, Option<f64>) {
    let mut sums = [0.0; 2];
    let mut counts = [0u64; 2];
    for (agent, &phi) in state.agents.iter().zip(&model.opinions) {
        sums[phi as usize] += agent.truth_probability(model.gamma);
        counts[phi as usize] += 1;
    }
    let mean = |j: usize| (counts[j] > 0).then(|| sums[j] / counts[j] as f64);
    (mean(0), mean(1))
}

/// Runs one replica, handing every row to `observer`.
///
/// On the complete graph without per-agent tracking the reduced class
/// process is sampled directly. With tracking, agents are simulated
/// individually and the class state is driven by their declarations.
pub fn run_replica<F: FnMut(&Row)>(model: &Model, replica: u64, track_agents: bool, mut observer: F) -> ReplicaRun {
    let mut rng = replica_rng(model.seed, replica);
    let n_agents = model.n_agents as f64;
    let complete = model.topology.is_complete();
    let individual = track_agents || !complete;
    let mut means = RunningMeans::new(if track_agents { model.n_agents } else { 0 });
    let mut class = ClassState::new(model);
    let mut population = init_population(model);
    let mut declared: Vec<Opinion> = Vec::with_capacity(model.n_agents);
    let mut last = None;

    for n in 0..=model.horizon {
        let (p0, p1, xyz) = if complete {
            (Some(class.p0()), Some(class.p1()), Some(xyz_from_class(&class).xyz()))
        } else {
            let (p0, p1) = class_means(model, &population);
            (p0, p1, None)
        };
        let ones = if individual {
            step_general(&mut population, model, &mut declared, &mut rng);
            let ones: u64 = declared.iter().map(|&d| d as u64).sum();
            if complete {
                class.apply(ones);
            }
            ones
        } else {
            step_complete(&mut class, &mut rng).total()
        };
        let psi = ones as f64 / n_agents;
        means.update(psi, track_agents.then_some(declared.as_slice()));
        let row = Row {
            n,
            psi,
            psi_hat: means.psi_hat,
            g: phi_estimator(means.psi_hat, model.gamma),
            p0,
            p1,
            xyz,
        };
        observer(&row);
        last = Some(row);
    }
    ReplicaRun {
        replica,
        rounds: model.horizon + 1,
        last: last.expect("at least one round"),
        per_agent_mean: track_agents.then(|| means.per_agent_mean()),
    }
}

/// A replica together with its thinned rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaTrace {
    pub run: ReplicaRun,
    pub rows: Vec<Row>,
}

/// Runs every replica of `model`, keeping rows thinned by `record_every`.
pub fn simulate(model: &Model, record_every: u64, track_agents: bool) -> Vec<ReplicaTrace> {
    assert!(record_every >= 1, "record_every must be positive");
    map_replicas(model.replicas, |replica| {
        let mut rows = Vec::new();
        let run = run_replica(model, replica, track_agents, |row| {
            if is_recorded(row.n, model.horizon, record_every) {
                rows.push(*row);
            }
        });
        ReplicaTrace { run, rows }
    })
}

/// Final rows of every replica, without keeping trajectories.
pub fn final_rows(model: &Model, track_agents: bool) -> Vec<ReplicaRun> {
    map_replicas(model.replicas, |replica| run_replica(model, replica, track_agents, |_| {}))
}
