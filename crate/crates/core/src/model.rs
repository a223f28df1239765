//! The declared-opinion process.
//!
//! Every agent `v` holds a fixed inherent opinion `phi_v` and a pair of urn
//! parameters `a = 1 + gamma * agree`, `b = 1 + disagree`, where `agree` and
//! `disagree` count the neighbour declarations it has observed that match or
//! contradict `phi_v`. At each step every agent declares `phi_v` with
//! probability `a / (a + b)` and the opposite opinion otherwise; all
//! declarations of a step are drawn before any counter moves.
//!
//! On the complete graph with self-loops all agents sharing an inherent
//! opinion carry identical counters, so the process collapses to
//! [`ClassState`], which only needs two binomial draws per step.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_binomial, sample_declared};

/// A binary opinion, `0` or `1`.
pub type Opinion = u8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InherentOpinions {
    /// One entry per agent.
    Explicit(Vec<Opinion>),
    /// The first `floor(phi * N)` agents hold opinion 1, the rest opinion 0.
    Fraction(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub enum GraphSpec {
    CompleteWithSelfLoops,
    /// Undirected, 0-indexed edges; every vertex needs a self-loop.
    EdgeList(Vec<(usize, usize)>),
}

/// User-facing configuration, checked by [`validate_config`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_agents: usize,
    pub gamma: f64,
    pub opinions: InherentOpinions,
    pub graph: GraphSpec,
    pub horizon: u64,
    pub seed: u64,
    pub replicas: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_agents: 100,
            gamma: 2.0,
            opinions: InherentOpinions::Fraction(0.0),
            graph: GraphSpec::CompleteWithSelfLoops,
            horizon: 10_000,
            seed: 0,
            replicas: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Topology {
    Complete,
    /// Neighbour lists, each containing the vertex itself.
    Adjacency(Vec<Vec<u32>>),
}

impl Topology {
    pub fn is_complete(&self) -> bool {
        matches!(self, Topology::Complete)
    }

    pub fn degree(&self, v: usize, n_agents: usize) -> usize {
        match self {
            Topology::Complete => n_agents,
            Topology::Adjacency(adj) => adj[v].len(),
        }
    }
}

/// A validated configuration with materialized inherent opinions.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub n_agents: usize,
    pub gamma: f64,
    pub opinions: Vec<Opinion>,
    pub topology: Topology,
    pub horizon: u64,
    pub seed: u64,
    pub replicas: u64,
}

impl Model {
    /// `[|V^0|, |V^1|]`.
    pub fn class_sizes(&self) -> [u64; 2] {
        let ones = self.opinions.iter().filter(|&&o| o == 1).count() as u64;
        [self.n_agents as u64 - ones, ones]
    }

    /// Realized fraction of agents with inherent opinion 1.
    pub fn phi(&self) -> f64 {
        self.class_sizes()[1] as f64 / self.n_agents as f64
    }
}

pub fn validate_config(cfg: &ModelConfig) -> Result<Model> {
    let n = cfg.n_agents;
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    if !(cfg.gamma.is_finite() && cfg.gamma > 1.0) {
        return Err(Error::UnsupportedHonesty(cfg.gamma));
    }
    if cfg.horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be positive".into()));
    }
    if cfg.replicas == 0 {
        return Err(Error::InvalidConfig("replicas must be positive".into()));
    }
    let opinions = match &cfg.opinions {
        InherentOpinions::Explicit(v) => {
            if v.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "{} inherent opinions given for {} agents",
                    v.len(),
                    n
                )));
            }
            if let Some(bad) = v.iter().find(|&&o| o > 1) {
                return Err(Error::InvalidConfig(format!("opinion {bad} is not binary")));
            }
            v.clone()
        }
        InherentOpinions::Fraction(phi) => {
            if !(0.0..=1.0).contains(phi) {
                return Err(Error::InvalidConfig(format!("phi = {phi} outside [0, 1]")));
            }
            materialize_opinions(n, *phi)
        }
    };
    let topology = match &cfg.graph {
        GraphSpec::CompleteWithSelfLoops => Topology::Complete,
        GraphSpec::EdgeList(edges) => Topology::Adjacency(build_adjacency(n, edges)?),
    };
    Ok(Model {
        n_agents: n,
        gamma: cfg.gamma,
        opinions,
        topology,
        horizon: cfg.horizon,
        seed: cfg.seed,
        replicas: cfg.replicas,
    })
}

/// First `floor(phi * n)` agents get opinion 1.
pub fn materialize_opinions(n: usize, phi: f64) -> Vec<Opinion> {
    // tolerance absorbs products such as 0.29 * 100 = 28.999999999999996
    let ones = ((phi * n as f64) + 1e-9).floor().min(n as f64) as usize;
    (0..n).map(|v| u8::from(v < ones)).collect()
}

fn build_adjacency(n: usize, edges: &[(usize, usize)]) -> Result<Vec<Vec<u32>>> {
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for &(u, v) in edges {
        if u >= n || v >= n {
            return Err(Error::InvalidGraph(format!(
                "edge ({u}, {v}) references a vertex outside 0..{n}"
            )));
        }
        if adj[u].contains(&(v as u32)) {
            return Err(Error::InvalidGraph(format!("multiple edge ({u}, {v})")));
        }
        adj[u].push(v as u32);
        if u != v {
            adj[v].push(u as u32);
        }
    }
    if let Some(v) = (0..n).find(|&v| !adj[v].contains(&(v as u32))) {
        return Err(Error::InvalidGraph(format!("vertex {v} has no self-loop")));
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for &w in &adj[u] {
            let w = w as usize;
            if !seen[w] {
                seen[w] = true;
                reached += 1;
                queue.push_back(w);
            }
        }
    }
    if reached != n {
        return Err(Error::InvalidGraph(format!(
            "graph is disconnected ({reached} of {n} vertices reachable from 0)"
        )));
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    Ok(adj)
}

/// `a / (a + b)`, the probability of declaring the inherent opinion.
pub fn truth_probability(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::Contract(format!(
            "truth probability needs positive parameters, got a = {a}, b = {b}"
        )));
    }
    Ok(a / (a + b))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub agree_count: u64,
    pub disagree_count: u64,
}

impl AgentState {
    pub fn a(&self, gamma: f64) -> f64 {
        1.0 + gamma * self.agree_count as f64
    }

    pub fn b(&self) -> f64 {
        1.0 + self.disagree_count as f64
    }

    pub fn truth_probability(&self, gamma: f64) -> f64 {
        let a = self.a(gamma);
        a / (a + self.b())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PopulationState {
    pub step: u64,
    pub agents: Vec<AgentState>,
}

pub fn init_population(model: &Model) -> PopulationState {
    PopulationState {
        step: 0,
        agents: vec![AgentState::default(); model.n_agents],
    }
}

/// One synchronous step of the general-graph process.
///
/// `declared` receives this step's declarations (agent index order). All of
/// them are drawn from the step-`n` probabilities before any counter update.
pub fn step_general<R: Rng + ?Sized>(
    state: &mut PopulationState,
    model: &Model,
    declared: &mut Vec<Opinion>,
    rng: &mut R,
) {
    let gamma = model.gamma;
    declared.clear();
    declared.extend(
        state
            .agents
            .iter()
            .zip(&model.opinions)
            .map(|(agent, &phi)| sample_declared(agent.truth_probability(gamma), phi, rng)),
    );
    match &model.topology {
        Topology::Complete => {
            let n = model.n_agents as u64;
            let ones: u64 = declared.iter().map(|&d| d as u64).sum();
            for (agent, &phi) in state.agents.iter_mut().zip(&model.opinions) {
                observe(agent, phi, ones, n);
            }
        }
        Topology::Adjacency(adj) => {
            for ((agent, &phi), neighbours) in
                state.agents.iter_mut().zip(&model.opinions).zip(adj)
            {
                let ones: u64 = neighbours.iter().map(|&u| declared[u as usize] as u64).sum();
                observe(agent, phi, ones, neighbours.len() as u64);
            }
        }
    }
    state.step += 1;
}

#[inline]
fn observe(agent: &mut AgentState, phi: Opinion, ones: u64, seen: u64) {
    let zeros = seen - ones;
    if phi == 1 {
        agent.agree_count += ones;
        agent.disagree_count += zeros;
    } else {
        agent.agree_count += zeros;
        agent.disagree_count += ones;
    }
}

/// Reduced complete-graph state shared by each inherent-opinion class.
///
/// Only the cumulative number of declared ones and zeros is stored; the four
/// urn parameters are affine in them:
/// `a0 = 1 + gamma * zeros`, `b0 = 1 + ones`, `a1 = 1 + gamma * ones`,
/// `b1 = 1 + zeros`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassState {
    pub gamma: f64,
    pub n_agents: u64,
    /// `[|V^0|, |V^1|]`.
    pub class_sizes: [u64; 2],
    pub step: u64,
    pub ones_total: u64,
    pub zeros_total: u64,
    /// `Psi_{n-1}`, absent before the first step.
    pub last_psi: Option<f64>,
}

/// Declared ones drawn in each class during one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassStep {
    pub ones: [u64; 2],
}

impl ClassStep {
    pub fn total(&self) -> u64 {
        self.ones[0] + self.ones[1]
    }
}

impl ClassState {
    pub fn new(model: &Model) -> Self {
        Self::with_sizes(model.gamma, model.class_sizes())
    }

    pub fn with_sizes(gamma: f64, class_sizes: [u64; 2]) -> Self {
        ClassState {
            gamma,
            n_agents: class_sizes[0] + class_sizes[1],
            class_sizes,
            step: 0,
            ones_total: 0,
            zeros_total: 0,
            last_psi: None,
        }
    }

    pub fn a0(&self) -> f64 {
        1.0 + self.gamma * self.zeros_total as f64
    }
    pub fn b0(&self) -> f64 {
        1.0 + self.ones_total as f64
    }
    pub fn a1(&self) -> f64 {
        1.0 + self.gamma * self.ones_total as f64
    }
    pub fn b1(&self) -> f64 {
        1.0 + self.zeros_total as f64
    }

    pub fn p0(&self) -> f64 {
        let a = self.a0();
        a / (a + self.b0())
    }

    pub fn p1(&self) -> f64 {
        let a = self.a1();
        a / (a + self.b1())
    }

    /// Applies the urn update for a step in which `ones` agents declared 1.
    pub fn apply(&mut self, ones: u64) {
        debug_assert!(ones <= self.n_agents);
        self.ones_total += ones;
        self.zeros_total += self.n_agents - ones;
        self.last_psi = Some(ones as f64 / self.n_agents as f64);
        self.step += 1;
    }
}

/// One step of the complete-graph class process: class 0 then class 1 draw
/// their numbers of declared ones, then the shared counters move.
pub fn step_complete<R: Rng + ?Sized>(state: &mut ClassState, rng: &mut R) -> ClassStep {
    let [n0, n1] = state.class_sizes;
    let ones0 = if n0 > 0 {
        sample_binomial(n0, 1.0 - state.p0(), rng)
    } else {
        0
    };
    let ones1 = if n1 > 0 {
        sample_binomial(n1, state.p1(), rng)
    } else {
        0
    };
    let step = ClassStep {
        ones: [ones0, ones1],
    };
    state.apply(step.total());
    step
}

/// Outcome of running the general and reduced dynamics side by side.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReduceReport {
    pub steps: u64,
    pub agents_checked: u64,
    pub mismatches: u64,
}

/// Couples a per-agent run on the complete graph with the class process
/// (the class state is driven by the realized declarations) and checks that
/// every agent carries exactly its class counters at every step.
pub fn reduce_check<R: Rng + ?Sized>(model: &Model, steps: u64, rng: &mut R) -> Result<ReduceReport> {
    if !model.topology.is_complete() {
        return Err(Error::Contract("reduce_check needs the complete graph".into()));
    }
    let mut population = init_population(model);
    let mut class = ClassState::new(model);
    let mut declared = Vec::with_capacity(model.n_agents);
    let mut checked = 0;
    for _ in 0..steps {
        step_general(&mut population, model, &mut declared, rng);
        class.apply(declared.iter().map(|&d| d as u64).sum());
        for (v, (agent, &phi)) in population.agents.iter().zip(&model.opinions).enumerate() {
            let expected = if phi == 1 {
                (class.ones_total, class.zeros_total)
            } else {
                (class.zeros_total, class.ones_total)
            };
            let (a_class, b_class) = if phi == 1 {
                (class.a1(), class.b1())
            } else {
                (class.a0(), class.b0())
            };
            if (agent.agree_count, agent.disagree_count) != expected
                || agent.a(model.gamma) != a_class
                || agent.b() != b_class
            {
                return Err(Error::Consistency(format!(
                    "agent {v} at step {}: counters ({}, {}) vs class ({}, {})",
                    population.step, agent.agree_count, agent.disagree_count, expected.0, expected.1
                )));
            }
            checked += 1;
        }
    }
    Ok(ReduceReport {
        steps,
        agents_checked: checked,
        mismatches: 0,
    })
}

/// Reads an edge list: one `u v` pair per line, blank lines and `#` comments
/// ignored.
pub fn parse_edge_list(text: &str) -> std::result::Result<Vec<(usize, usize)>, String> {
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let parse = |f: Option<&str>| -> std::result::Result<usize, String> {
            f.ok_or_else(|| format!("line {}: expected two vertices", lineno + 1))?
                .parse()
                .map_err(|e| format!("line {}: {e}", lineno + 1))
        };
        let u = parse(fields.next())?;
        let v = parse(fields.next())?;
        if fields.next().is_some() {
            return Err(format!("line {}: trailing fields", lineno + 1));
        }
        edges.push((u, v));
    }
    Ok(edges)
}

/// Reads inherent opinions: one `0` or `1` per line.
pub fn parse_opinions(text: &str) -> std::result::Result<Vec<Opinion>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            out.push(match tok {
                "0" => 0,
                "1" => 1,
                other => return Err(format!("line {}: expected 0 or 1, found {other:?}", i + 1)),
            });
        }
    }
    Ok(out)
}
