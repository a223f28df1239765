//! File-level experiment drivers: trajectories and summaries on disk, and
//! reports for the estimator, ODE, equilibria and exact oracle.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{build_report, EstimateInput, EstimateReport, PhiStatement, Regime};
use crate::meanfield::{
    equilibria, g1_roots, integrate_ode, predicted_limits, vector_field, EquilibriumSet, MeanFieldState,
    PredictedLimits,
};
use crate::model::{validate_config, ModelConfig};
use crate::oracle::{enumerate_exact, submartingale_check, ExactDistribution, SubmartingaleReport};
use crate::replicas::map_replicas;
use crate::simulate::{is_recorded, run_replica, Row};

pub const TRAJECTORY_HEADER: &str = "n,Psi,Psi_hat,g,p0,p1,X,Y,Z";
pub const AGENTS_HEADER: &str = "agent,mean";
pub const SUMMARY_FILE: &str = "summary.json";

/// Everything `simulate` needs beyond the model itself.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulateSpec {
    pub model: ModelConfig,
    pub record_every: u64,
    pub out_dir: PathBuf,
    /// Also write per-agent time-averages, needed for decoding.
    pub per_agent: bool,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicaSummary {
    pub replica: u64,
    pub trajectory: String,
    pub agents: Option<String>,
    pub rounds: u64,
    pub psi_hat: f64,
    pub g: f64,
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub report: EstimateReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PooledSummary {
    pub psi_hat: f64,
    pub g: f64,
    pub regime: Regime,
    pub phi_estimate: PhiStatement,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub n_agents: usize,
    pub gamma: f64,
    /// Realized fraction of agents holding opinion 1.
    pub phi: f64,
    pub horizon: u64,
    pub seed: u64,
    pub record_every: u64,
    pub replicas: Vec<ReplicaSummary>,
    pub pooled: PooledSummary,
}

/// 17 significant digits, enough to read back the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn format_row(row: &Row) -> String {
    let [x, y, z] = match row.xyz {
        Some(p) => p.map(Some),
        None => [None; 3],
    };
    format!(
        "{},{},{},{},{},{},{},{},{}\n",
        row.n,
        format_float(row.psi),
        format_float(row.psi_hat),
        format_float(row.g),
        format_opt(row.p0),
        format_opt(row.p1),
        format_opt(x),
        format_opt(y),
        format_opt(z)
    )
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn trajectory_name(replica: u64) -> String {
    format!("replica_{replica:03}.csv")
}

pub fn agents_name(replica: u64) -> String {
    format!("replica_{replica:03}_agents.csv")
}

/// Runs every replica, streaming one CSV each into `out_dir`, then writes
/// `summary.json`.
pub fn run_simulate(spec: &SimulateSpec) -> Result<SimulationSummary> {
    let model = validate_config(&spec.model)?;
    if spec.record_every == 0 {
        return Err(Error::InvalidConfig("record_every must be at least 1".into()));
    }
    fs::create_dir_all(&spec.out_dir).map_err(|e| Error::io(&spec.out_dir, e))?;
    let n_agents = model.n_agents as u64;

    let results = map_replicas(model.replicas, |replica| -> Result<ReplicaSummary> {
        let name = trajectory_name(replica);
        let path = spec.out_dir.join(&name);
        let mut out = create(&path)?;
        let mut failure = writeln!(out, "{TRAJECTORY_HEADER}").err();
        let run = run_replica(&model, replica, spec.per_agent, |row| {
            if failure.is_none() && is_recorded(row.n, model.horizon, spec.record_every) {
                failure = out.write_all(format_row(row).as_bytes()).err();
            }
        });
        if let Some(e) = failure.or_else(|| out.flush().err()) {
            return Err(Error::io(&path, e));
        }
        log::debug!("replica {replica}: psi_hat {}", run.last.psi_hat);

        let agents = match &run.per_agent_mean {
            Some(means) => {
                let agents = agents_name(replica);
                let path = spec.out_dir.join(&agents);
                let mut out = create(&path)?;
                let mut text = format!("{AGENTS_HEADER}\n");
                for (v, m) in means.iter().enumerate() {
                    text.push_str(&format!("{v},{}\n", format_float(*m)));
                }
                out.write_all(text.as_bytes())
                    .and_then(|_| out.flush())
                    .map_err(|e| Error::io(&path, e))?;
                Some(agents)
            }
            None => None,
        };
        let report = build_report(&EstimateInput {
            psi_hat: run.last.psi_hat,
            steps: run.rounds,
            gamma: model.gamma,
            n_agents: Some(n_agents),
            per_agent_mean: run.per_agent_mean.as_deref(),
            epsilon: spec.epsilon,
            delta: spec.delta,
        })?;
        Ok(ReplicaSummary {
            replica,
            trajectory: name,
            agents,
            rounds: run.rounds,
            psi_hat: run.last.psi_hat,
            g: run.last.g,
            p0: run.last.p0,
            p1: run.last.p1,
            report,
        })
    });
    let replicas = results.into_iter().collect::<Result<Vec<_>>>()?;

    let psi_hat = replicas.iter().map(|r| r.psi_hat).sum::<f64>() / replicas.len() as f64;
    let pooled = build_report(&EstimateInput {
        psi_hat,
        steps: model.horizon + 1,
        gamma: model.gamma,
        n_agents: Some(n_agents * model.replicas),
        epsilon: spec.epsilon,
        ..EstimateInput::default()
    })?;
    let summary = SimulationSummary {
        n_agents: model.n_agents,
        gamma: model.gamma,
        phi: model.phi(),
        horizon: model.horizon,
        seed: model.seed,
        record_every: spec.record_every,
        replicas,
        pooled: PooledSummary {
            psi_hat,
            g: pooled.g_n,
            regime: pooled.regime,
            phi_estimate: pooled.phi_estimate,
        },
    };
    write_json(&spec.out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_complete(path: &Path, header: &str) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if !text.ends_with('\n') {
        return Err(malformed(path, "truncated: missing final newline"));
    }
    match text.lines().next() {
        Some(h) if h.trim_end() == header => Ok(text),
        Some(h) => Err(malformed(path, format!("unexpected header {h:?}, want {header:?}"))),
        None => Err(malformed(path, "empty file")),
    }
}

fn parse_float(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .parse()
        .map_err(|_| malformed(path, format!("line {line}: bad number {field:?}")))
}

fn parse_opt(path: &Path, line: usize, field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_float(path, line, field).map(Some)
    }
}

/// Reads a trajectory CSV written by [`run_simulate`].
pub fn read_trajectory(path: &Path) -> Result<Vec<Row>> {
    let text = read_complete(path, TRAJECTORY_HEADER)?;
    let mut rows: Vec<Row> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let line_no = i + 1;
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 9 {
            return Err(malformed(path, format!("line {line_no}: {} fields, want 9", f.len())));
        }
        let n: u64 = f[0]
            .parse()
            .map_err(|_| malformed(path, format!("line {line_no}: bad step {:?}", f[0])))?;
        if rows.last().is_some_and(|r| r.n >= n) {
            return Err(malformed(path, format!("line {line_no}: steps not increasing")));
        }
        let xyz = match (parse_opt(path, line_no, f[6])?, parse_opt(path, line_no, f[7])?, parse_opt(path, line_no, f[8])?) {
            (Some(x), Some(y), Some(z)) => Some([x, y, z]),
            (None, None, None) => None,
            _ => return Err(malformed(path, format!("line {line_no}: partial X, Y, Z"))),
        };
        rows.push(Row {
            n,
            psi: parse_float(path, line_no, f[1])?,
            psi_hat: parse_float(path, line_no, f[2])?,
            g: parse_float(path, line_no, f[3])?,
            p0: parse_opt(path, line_no, f[4])?,
            p1: parse_opt(path, line_no, f[5])?,
            xyz,
        });
    }
    if rows.is_empty() {
        return Err(malformed(path, "no data rows"));
    }
    Ok(rows)
}

/// Reads per-agent time-averages written by [`run_simulate`].
pub fn read_agent_means(path: &Path) -> Result<Vec<f64>> {
    let text = read_complete(path, AGENTS_HEADER)?;
    let mut means = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let line_no = i + 1;
        let (agent, mean) = line
            .trim_end()
            .split_once(',')
            .ok_or_else(|| malformed(path, format!("line {line_no}: want agent,mean")))?;
        if agent.parse::<usize>().ok() != Some(means.len()) {
            return Err(malformed(path, format!("line {line_no}: agent {agent:?} out of order")));
        }
        means.push(parse_float(path, line_no, mean)?);
    }
    if means.is_empty() {
        return Err(malformed(path, "no agents"));
    }
    Ok(means)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EstimateSpec {
    pub trajectory: PathBuf,
    /// Falls back to the sibling `summary.json`.
    pub gamma: Option<f64>,
    /// Falls back to the sibling `<trajectory>_agents.csv` when present.
    pub agents: Option<PathBuf>,
    /// Fail unless per-agent means are available.
    pub decode: bool,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, Default)]
struct SummaryFacts {
    gamma: Option<f64>,
    horizon: Option<u64>,
    n_agents: Option<u64>,
}

fn sibling_summary(trajectory: &Path) -> Result<SummaryFacts> {
    let path = trajectory.with_file_name(SUMMARY_FILE);
    if !path.exists() {
        return Ok(SummaryFacts::default());
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| malformed(&path, e.to_string()))?;
    Ok(SummaryFacts {
        gamma: v["gamma"].as_f64(),
        horizon: v["horizon"].as_u64(),
        n_agents: v["n_agents"].as_u64(),
    })
}

/// Estimator report for one trajectory file. Refuses files whose last step
/// falls short of the recorded horizon.
pub fn run_estimate(spec: &EstimateSpec) -> Result<EstimateReport> {
    let path = &spec.trajectory;
    let rows = read_trajectory(path)?;
    let facts = sibling_summary(path)?;
    let last = rows[rows.len() - 1];
    if let Some(horizon) = facts.horizon {
        if last.n != horizon {
            return Err(malformed(
                path,
                format!("truncated: last step {} but horizon {horizon}", last.n),
            ));
        }
    }
    let gamma = spec
        .gamma
        .or(facts.gamma)
        .ok_or_else(|| Error::InvalidConfig("gamma is required without a summary.json".into()))?;
    if !(gamma.is_finite() && gamma > 1.0) {
        return Err(Error::UnsupportedHonesty(gamma));
    }
    let agents_path = spec.agents.clone().or_else(|| {
        let stem = path.file_stem()?.to_str()?;
        let sibling = path.with_file_name(format!("{stem}_agents.csv"));
        sibling.exists().then_some(sibling)
    });
    let means = agents_path.as_deref().map(read_agent_means).transpose()?;
    if spec.decode && means.is_none() {
        return Err(Error::InvalidConfig(
            "decoding requested but no per-agent stream is available".into(),
        ));
    }
    if let (Some(m), Some(n)) = (&means, facts.n_agents) {
        if m.len() as u64 != n {
            return Err(malformed(
                agents_path.as_deref().unwrap_or(path),
                format!("{} agents, summary says {n}", m.len()),
            ));
        }
    }
    build_report(&EstimateInput {
        psi_hat: last.psi_hat,
        steps: last.n + 1,
        gamma,
        n_agents: facts.n_agents.or(means.as_ref().map(|m| m.len() as u64)),
        per_agent_mean: means.as_deref(),
        epsilon: spec.epsilon,
        delta: spec.delta,
    })
}

fn check_parameters(gamma: f64, phi: f64) -> Result<()> {
    if !(gamma.is_finite() && gamma > 1.0) {
        return Err(Error::UnsupportedHonesty(gamma));
    }
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidConfig(format!("phi = {phi} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeSpec {
    pub gamma: f64,
    pub phi: f64,
    pub start: [f64; 3],
    pub t_end: f64,
    pub h: f64,
}

/// Integrates the mean-field ODE; writes `t,x,y,z` rows to `out` if given.
pub fn run_ode(spec: &OdeSpec, out: Option<&Path>) -> Result<Vec<MeanFieldState>> {
    check_parameters(spec.gamma, spec.phi)?;
    if !(spec.h > 0.0 && spec.t_end >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need h > 0 and t_end >= 0, got h = {}, t_end = {}",
            spec.h, spec.t_end
        )));
    }
    let [x, y, z] = spec.start;
    let path = integrate_ode(MeanFieldState::new(0.0, x, y, z), spec.gamma, spec.phi, spec.t_end, spec.h)?;
    if let Some(file) = out {
        let mut text = String::from("t,x,y,z\n");
        for s in &path {
            text.push_str(&format!(
                "{},{},{},{}\n",
                format_float(s.t),
                format_float(s.x),
                format_float(s.y),
                format_float(s.z)
            ));
        }
        let mut w = create(file)?;
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(file, e))?;
    }
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquilibriaReport {
    #[serde(flatten)]
    pub set: EquilibriumSet,
    /// `max |G(l)|` for each point, in the same order.
    pub residuals: Vec<f64>,
    /// Zeros of the reduced drift on `x + y = gamma/(gamma+1)`.
    pub g1_roots: Vec<f64>,
    pub limits: PredictedLimits,
}

pub fn run_equilibria(gamma: f64, phi: f64) -> Result<EquilibriaReport> {
    check_parameters(gamma, phi)?;
    let set = equilibria(gamma, phi);
    let residuals = set
        .points
        .iter()
        .map(|e| {
            let [x, y, z] = e.point;
            vector_field(x, y, z, gamma, phi).map(|g| g.iter().fold(0.0_f64, |m, c| m.max(c.abs())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriaReport {
        set,
        residuals,
        g1_roots: g1_roots(gamma, phi),
        limits: predicted_limits(gamma, phi),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub distribution: ExactDistribution,
    /// Only for homogeneous populations.
    pub submartingale: Option<SubmartingaleReport>,
}

pub fn run_oracle(n_agents: u64, gamma: f64, phi: f64, horizon: usize) -> Result<OracleReport> {
    if !(gamma.is_finite() && gamma >= 1.0) {
        return Err(Error::UnsupportedHonesty(gamma));
    }
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidConfig(format!("phi = {phi} outside [0, 1]")));
    }
    if n_agents == 0 {
        return Err(Error::EmptyPopulation);
    }
    let distribution = enumerate_exact(n_agents, gamma, phi, horizon)?;
    let submartingale = match distribution.class_sizes {
        [_, 0] | [0, _] => Some(submartingale_check(&distribution)?),
        _ => None,
    };
    Ok(OracleReport {
        distribution,
        submartingale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InherentOpinions;

    fn spec(dir: &Path) -> SimulateSpec {
        SimulateSpec {
            model: ModelConfig {
                n_agents: 6,
                gamma: 2.0,
                opinions: InherentOpinions::Fraction(0.5),
                horizon: 300,
                seed: 9,
                replicas: 2,
                ..ModelConfig::default()
            },
            record_every: 1,
            out_dir: dir.to_path_buf(),
            per_agent: true,
            epsilon: None,
            delta: None,
        }
    }

    #[test]
    fn float_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 0.0] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn summary_matches_files() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_simulate(&spec(dir.path())).unwrap();
        for r in &summary.replicas {
            let rows = read_trajectory(&dir.path().join(&r.trajectory)).unwrap();
            assert_eq!(rows.len(), 301);
            let last = rows.last().unwrap();
            assert_eq!(last.psi_hat, r.psi_hat);
            assert_eq!(last.g, r.g);
            let mean = rows.iter().map(|x| x.psi).sum::<f64>() / rows.len() as f64;
            assert!((mean - r.psi_hat).abs() < 1e-12);
            let agents = read_agent_means(&dir.path().join(r.agents.as_ref().unwrap())).unwrap();
            assert_eq!(agents.len(), 6);
            let report = run_estimate(&EstimateSpec {
                trajectory: dir.path().join(&r.trajectory),
                ..EstimateSpec::default()
            })
            .unwrap();
            assert_eq!(report, r.report);
        }
        let pooled = summary.replicas.iter().map(|r| r.psi_hat).sum::<f64>() / 2.0;
        assert_eq!(summary.pooled.psi_hat, pooled);
    }

    #[test]
    fn truncated_files_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        run_simulate(&spec(dir.path())).unwrap();
        let path = dir.path().join(trajectory_name(0));
        let text = fs::read_to_string(&path).unwrap();

        let cut = &text[..text.len() - 10];
        fs::write(&path, cut).unwrap();
        let err = run_estimate(&EstimateSpec {
            trajectory: path.clone(),
            ..EstimateSpec::default()
        })
        .unwrap_err();
        assert!(matches!(err, Error::Malformed { .. }), "{err}");

        let lines: Vec<&str> = text.lines().collect();
        fs::write(&path, lines[..100].join("\n") + "\n").unwrap();
        let err = run_estimate(&EstimateSpec {
            trajectory: path,
            ..EstimateSpec::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn decoding_needs_agents() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(dir.path());
        s.per_agent = false;
        run_simulate(&s).unwrap();
        let err = run_estimate(&EstimateSpec {
            trajectory: dir.path().join(trajectory_name(0)),
            decode: true,
            ..EstimateSpec::default()
        })
        .unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn zero_thinning_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = spec(dir.path());
        s.record_every = 0;
        assert!(run_simulate(&s).unwrap_err().is_config());
    }

    #[test]
    fn equilibria_report() {
        let r = run_equilibria(3.0, 0.5).unwrap();
        assert_eq!(r.set.points.len(), 3);
        assert!(r.residuals.iter().all(|&x| x <= 1e-12));
        assert!(run_equilibria(1.0, 0.5).unwrap_err().is_config());
    }

    #[test]
    fn oracle_report() {
        let r = run_oracle(1, 2.0, 0.0, 2).unwrap();
        assert!((r.distribution.expected_p0[1] - 13.0 / 24.0).abs() < 1e-15);
        assert!(r.submartingale.is_some());
        assert!(run_oracle(2, 2.0, 0.5, 2).unwrap().submartingale.is_none());
    }
}
