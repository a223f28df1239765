//! Experiment parameters from a TOML or JSON file, overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use opinion_urn::model::{parse_edge_list, parse_opinions};
use opinion_urn::{Error, GraphSpec, InherentOpinions, ModelConfig, Result};

/// Flags shared by all subcommands; each one overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Params {
    /// TOML or JSON experiment file (JSON if the extension is `.json`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Population size N.
    #[arg(long, global = true)]
    pub n_agents: Option<usize>,
    /// Honesty parameter, must exceed 1.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Fraction of agents holding opinion 1.
    #[arg(long, global = true, conflicts_with = "opinions_file")]
    pub phi: Option<f64>,
    /// Whitespace- or comma-separated 0/1 values, one per agent.
    #[arg(long, global = true)]
    pub opinions_file: Option<PathBuf>,
    /// `complete`, or a path to an edge list with one `u v` pair per line.
    #[arg(long, global = true)]
    pub graph: Option<String>,
    /// Horizon T; steps 0..=T are simulated.
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    /// Master seed; replica r uses stream r.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of independent replicas.
    #[arg(long, global = true)]
    pub replicas: Option<u64>,
    /// Keep every k-th trajectory row (the final row is always kept).
    #[arg(long, global = true)]
    pub record_every: Option<u64>,
    /// Output directory; `simulate` defaults to `out`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Regime band half-width; defaults to a noise-scaled value.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Largest accepted distance to a decoding target.
    #[arg(long, global = true)]
    pub delta: Option<f64>,
}

/// File counterpart of [`Params`] plus the knobs only a file sets.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub n_agents: Option<usize>,
    pub gamma: Option<f64>,
    pub phi: Option<f64>,
    pub opinions_file: Option<PathBuf>,
    pub graph: Option<String>,
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
    pub record_every: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub per_agent: Option<bool>,
    pub t_end: Option<f64>,
    pub h: Option<f64>,
    pub start: Option<[f64; 3]>,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| malformed(path, e.to_string()))
}

pub fn load_file(path: &Path) -> Result<FileConfig> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| malformed(path, e.to_string()))
    }
}

/// Flags merged over the file; paths in the file are taken relative to it.
#[derive(Clone, Debug, Default)]
pub struct Resolved {
    pub flags: Params,
    pub file: FileConfig,
}

impl Resolved {
    pub fn load(flags: Params) -> Result<Self> {
        let mut file = match &flags.config {
            Some(p) => load_file(p)?,
            None => FileConfig::default(),
        };
        if let Some(base) = flags.config.as_deref().and_then(Path::parent) {
            file.opinions_file = file.opinions_file.map(|p| base.join(p));
            file.out_dir = file.out_dir.map(|p| base.join(p));
            file.graph = file.graph.map(|g| {
                if g == "complete" {
                    g
                } else {
                    base.join(g).to_string_lossy().into_owned()
                }
            });
        }
        Ok(Resolved { flags, file })
    }

    pub fn gamma(&self) -> Option<f64> {
        self.flags.gamma.or(self.file.gamma)
    }

    pub fn phi(&self) -> Option<f64> {
        self.flags.phi.or(self.file.phi)
    }

    pub fn n_agents(&self) -> Option<usize> {
        self.flags.n_agents.or(self.file.n_agents)
    }

    pub fn steps(&self) -> Option<u64> {
        self.flags.steps.or(self.file.steps)
    }

    pub fn record_every(&self) -> u64 {
        self.flags.record_every.or(self.file.record_every).unwrap_or(1)
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.flags.out_dir.clone().or_else(|| self.file.out_dir.clone())
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.flags.epsilon.or(self.file.epsilon)
    }

    pub fn delta(&self) -> Option<f64> {
        self.flags.delta.or(self.file.delta)
    }

    pub fn require_gamma(&self) -> Result<f64> {
        self.gamma().ok_or_else(|| Error::InvalidConfig("--gamma is required".into()))
    }

    pub fn require_phi(&self) -> Result<f64> {
        self.phi().ok_or_else(|| Error::InvalidConfig("--phi is required".into()))
    }

    /// Opinions from a flag beat opinions from the file, whichever form.
    fn opinions(&self) -> Result<InherentOpinions> {
        let (phi, file) = if self.flags.phi.is_some() || self.flags.opinions_file.is_some() {
            (self.flags.phi, self.flags.opinions_file.as_ref())
        } else {
            (self.file.phi, self.file.opinions_file.as_ref())
        };
        match (phi, file) {
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "give either phi or opinions_file, not both".into(),
            )),
            (Some(phi), None) => Ok(InherentOpinions::Fraction(phi)),
            (None, Some(path)) => parse_opinions(&read(path)?)
                .map(InherentOpinions::Explicit)
                .map_err(|e| malformed(path, e)),
            (None, None) => Ok(ModelConfig::default().opinions),
        }
    }

    fn graph(&self) -> Result<GraphSpec> {
        match self.flags.graph.as_ref().or(self.file.graph.as_ref()) {
            None => Ok(GraphSpec::CompleteWithSelfLoops),
            Some(g) if g == "complete" => Ok(GraphSpec::CompleteWithSelfLoops),
            Some(path) => {
                let path = Path::new(path);
                parse_edge_list(&read(path)?)
                    .map(GraphSpec::EdgeList)
                    .map_err(|e| malformed(path, e))
            }
        }
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let defaults = ModelConfig::default();
        let opinions = self.opinions()?;
        let n_agents = match (&opinions, self.n_agents()) {
            (InherentOpinions::Explicit(v), None) => v.len(),
            (_, n) => n.unwrap_or(defaults.n_agents),
        };
        Ok(ModelConfig {
            n_agents,
            gamma: self.gamma().unwrap_or(defaults.gamma),
            opinions,
            graph: self.graph()?,
            horizon: self.steps().unwrap_or(defaults.horizon),
            seed: self.flags.seed.or(self.file.seed).unwrap_or(defaults.seed),
            replicas: self.flags.replicas.or(self.file.replicas).unwrap_or(defaults.replicas),
        })
    }
}
