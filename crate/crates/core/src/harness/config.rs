use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::benchmark;
use crate::datacollect::ExoSignal;
use crate::error::{Error, Result};
use crate::matrix_serde::from_rows;
use crate::observer::ObserverGains;
use crate::plant::{AgentModel, ExosystemModel, NoiseSpec};
use crate::topology::CommGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub dt: f64,
    pub exosystem: ExosystemSection,
    pub observer: ObserverSection,
    pub graph: GraphSection,
    pub agents: AgentsSpec,
    pub cost: CostSection,
    pub noise: NoiseSection,
    pub learning: LearningSection,
    pub post: PostSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExosystemSection {
    pub frequencies: Vec<f64>,
    pub initial_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSection {
    pub a: Vec<f64>,
    pub kappa: Vec<f64>,
}

/// Undirected follower links plus leader targets, all 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub followers: usize,
    pub targets: Vec<usize>,
    /// `[i, j]` or `[i, j, weight]`.
    pub edges: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentFamily {
    Benchmark,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentsSpec {
    Family { family: AgentFamily, count: usize },
    Explicit { models: Vec<AgentModel> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Defaults to the identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_bar: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_bar: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub terms: usize,
    pub amplitude: f64,
    pub min_frequency: f64,
    pub max_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGain {
    /// Model-based pole placement (uses the true A, B).
    PolePlacement(Vec<f64>),
    /// One `m × n` gain per agent.
    Explicit(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSection {
    /// Observer-only time before the data window opens.
    pub observer_warmup: f64,
    pub window: f64,
    pub sampling_interval: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    #[serde(default)]
    pub exo_signal: ExoSignal,
    pub initial_gain: InitialGain,
    /// Time of the observer snapshot, measured from the start of the run.
    pub observer_checkpoint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostSection {
    pub duration: f64,
    pub error_threshold: f64,
    /// Length of the trailing window for the output-gap check.
    pub final_period: f64,
}

/// Validated, matrix-valued form of a config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub exosystem: ExosystemModel,
    pub v0: DVector<f64>,
    pub agents: Vec<AgentModel>,
    pub graph: CommGraph,
    pub observer: ObserverGains,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_bar: DMatrix<f64>,
    pub r_bar: DMatrix<f64>,
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    from_rows(rows).map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn on_grid(t: f64, dt: f64) -> bool {
    let s = t / dt;
    (s - s.round()).abs() < 1e-6
}

impl ExperimentConfig {
    /// The four-agent benchmark with its default learning schedule.
    pub fn benchmark() -> Self {
        let eye3 = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        Self {
            seed: 1,
            dt: 1e-3,
            exosystem: ExosystemSection {
                frequencies: benchmark::FREQUENCIES.to_vec(),
                initial_state: benchmark::INITIAL_EXOSTATE.to_vec(),
            },
            observer: ObserverSection {
                a: benchmark::OBSERVER_A.to_vec(),
                kappa: benchmark::OBSERVER_KAPPA.to_vec(),
            },
            graph: GraphSection {
                followers: benchmark::NUM_AGENTS,
                targets: vec![1],
                edges: vec![vec![1.0, 2.0], vec![2.0, 3.0], vec![3.0, 4.0]],
            },
            agents: AgentsSpec::Family {
                family: AgentFamily::Benchmark,
                count: benchmark::NUM_AGENTS,
            },
            cost: CostSection {
                q: eye3.clone(),
                r: vec![vec![1.0]],
                q_bar: Some(eye3),
                r_bar: Some(vec![vec![1.0]]),
            },
            noise: NoiseSection {
                terms: 100,
                amplitude: 0.3,
                min_frequency: 0.1,
                max_frequency: 10.0,
            },
            learning: LearningSection {
                observer_warmup: 12.0,
                window: 8.0,
                sampling_interval: 0.1,
                tolerance: benchmark::TOLERANCE,
                max_iterations: 50,
                exo_signal: ExoSignal::Estimate,
                initial_gain: InitialGain::PolePlacement(benchmark::INITIAL_POLES.to_vec()),
                observer_checkpoint: 8.0,
            },
            post: PostSection {
                duration: 20.0,
                error_threshold: 1e-2,
                final_period: 5.0,
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Time at which the data window opens.
    pub fn data_start(&self) -> f64 {
        self.learning.observer_warmup
    }

    pub fn learning_end(&self) -> f64 {
        self.learning.observer_warmup + self.learning.window
    }

    /// Sampling instants of the data window.
    pub fn sampling_instants(&self) -> Vec<f64> {
        let count = (self.learning.window / self.learning.sampling_interval).round() as usize;
        (0..=count)
            .map(|l| self.data_start() + l as f64 * self.learning.sampling_interval)
            .collect()
    }

    /// Per-agent exploration signal; agent `i` (0-based) draws stream `i`.
    pub fn noise_for(&self, agent: usize, inputs: usize) -> NoiseSpec {
        NoiseSpec::sum_of_sinusoids(
            inputs,
            self.noise.terms,
            self.noise.amplitude,
            self.noise.min_frequency,
            self.noise.max_frequency,
            self.seed,
            agent as u64,
        )
    }

    pub fn resolve(&self) -> Result<Setup> {
        let positive = [
            ("dt", self.dt),
            ("learning.window", self.learning.window),
            (
                "learning.sampling_interval",
                self.learning.sampling_interval,
            ),
            ("learning.tolerance", self.learning.tolerance),
            ("post.error_threshold", self.post.error_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("learning.observer_warmup", self.learning.observer_warmup),
            (
                "learning.observer_checkpoint",
                self.learning.observer_checkpoint,
            ),
            ("post.duration", self.post.duration),
            ("post.final_period", self.post.final_period),
            ("noise.amplitude", self.noise.amplitude),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.learning.max_iterations == 0 {
            return Err(Error::Config(
                "learning.max_iterations must be at least 1".into(),
            ));
        }
        if self.post.final_period > self.post.duration {
            return Err(Error::Config(
                "post.final_period exceeds post.duration".into(),
            ));
        }
        if !(self.noise.min_frequency > 0.0 && self.noise.max_frequency >= self.noise.min_frequency)
        {
            return Err(Error::Config(
                "noise frequency range must be positive and ordered".into(),
            ));
        }
        for (name, t) in [
            ("learning.observer_warmup", self.learning.observer_warmup),
            ("learning.window", self.learning.window),
            (
                "learning.sampling_interval",
                self.learning.sampling_interval,
            ),
            ("post.duration", self.post.duration),
        ] {
            if !on_grid(t, self.dt) {
                return Err(Error::Config(format!(
                    "{name} = {t} is not a multiple of dt = {}",
                    self.dt
                )));
            }
        }
        if !on_grid(self.learning.window, self.learning.sampling_interval) {
            return Err(Error::Config(
                "learning.window is not a multiple of the sampling interval".into(),
            ));
        }
        if self.learning.observer_checkpoint > self.learning_end() {
            return Err(Error::Config(
                "observer checkpoint lies after the learning phase".into(),
            ));
        }
        if !on_grid(self.learning.observer_checkpoint, self.dt) {
            return Err(Error::Config(
                "observer checkpoint is not on the integration grid".into(),
            ));
        }

        let exosystem = ExosystemModel::new(self.exosystem.frequencies.clone())
            .map_err(|e| Error::Config(format!("exosystem: {e}")))?;
        let q_dim = exosystem.dim();
        if self.exosystem.initial_state.len() != q_dim {
            return Err(Error::Config(format!(
                "exosystem.initial_state has {} entries, expected {q_dim}",
                self.exosystem.initial_state.len()
            )));
        }
        let observer = ObserverGains::new(self.observer.a.clone(), self.observer.kappa.clone())
            .map_err(|e| Error::Config(format!("observer: {e}")))?;
        if observer.num_blocks() != q_dim / 2 {
            return Err(Error::Config(
                "observer gains must have one entry per oscillator block".into(),
            ));
        }

        let agents: Vec<AgentModel> = match &self.agents {
            AgentsSpec::Family {
                family: AgentFamily::Benchmark,
                count,
            } => (1..=*count).map(benchmark::agent).collect(),
            AgentsSpec::Explicit { models } => models.clone(),
        };
        if agents.len() != self.graph.followers {
            return Err(Error::Config(format!(
                "{} agent models for {} followers",
                agents.len(),
                self.graph.followers
            )));
        }
        for (i, a) in agents.iter().enumerate() {
            AgentModel::new(
                a.a.clone(),
                a.b.clone(),
                a.c.clone(),
                a.d.clone(),
                a.f.clone(),
            )
            .map_err(|e| Error::Config(format!("agent {}: {e}", i + 1)))?;
            if a.q() != q_dim {
                return Err(Error::Config(format!(
                    "agent {} has q = {}, exosystem has {q_dim}",
                    i + 1,
                    a.q()
                )));
            }
        }

        let mut edges = Vec::with_capacity(self.graph.edges.len());
        for e in &self.graph.edges {
            let (i, j, w) = match e.as_slice() {
                [i, j] => (*i, *j, 1.0),
                [i, j, w] => (*i, *j, *w),
                _ => {
                    return Err(Error::Config(
                        "graph edges are [i, j] or [i, j, weight]".into(),
                    ))
                }
            };
            if i < 1.0 || j < 1.0 || i.fract() != 0.0 || j.fract() != 0.0 {
                return Err(Error::Config(
                    "graph edge endpoints are 1-based integers".into(),
                ));
            }
            edges.push((i as usize - 1, j as usize - 1, w));
        }
        if self.graph.targets.contains(&0) {
            return Err(Error::Config("graph targets are 1-based".into()));
        }
        let graph = CommGraph::undirected(
            self.graph.followers,
            edges,
            self.graph.targets.iter().map(|t| t - 1),
        )
        .and_then(|g| g.validate().map(|_| g))
        .map_err(|e| Error::Config(format!("graph: {e}")))?;

        let q = matrix(&self.cost.q, "cost.q")?;
        let r = matrix(&self.cost.r, "cost.r")?;
        let q_bar = match &self.cost.q_bar {
            Some(rows) => matrix(rows, "cost.q_bar")?,
            None => DMatrix::identity(q.nrows(), q.ncols()),
        };
        let r_bar = match &self.cost.r_bar {
            Some(rows) => matrix(rows, "cost.r_bar")?,
            None => DMatrix::identity(r.nrows(), r.ncols()),
        };
        for (i, a) in agents.iter().enumerate() {
            let (n, m) = (a.n(), a.m());
            if q.shape() != (n, n)
                || q_bar.shape() != (n, n)
                || r.shape() != (m, m)
                || r_bar.shape() != (m, m)
            {
                return Err(Error::Config(format!(
                    "cost weights do not fit agent {}",
                    i + 1
                )));
            }
        }
        if let InitialGain::Explicit(gains) = &self.learning.initial_gain {
            if gains.len() != agents.len() {
                return Err(Error::Config("one explicit initial gain per agent".into()));
            }
            for (i, (g, a)) in gains.iter().zip(&agents).enumerate() {
                if matrix(g, "initial gain")?.shape() != (a.m(), a.n()) {
                    return Err(Error::Config(format!(
                        "initial gain of agent {} has the wrong shape",
                        i + 1
                    )));
                }
            }
        }

        Ok(Setup {
            exosystem,
            v0: DVector::from_column_slice(&self.exosystem.initial_state),
            agents,
            graph,
            observer,
            q,
            r,
            q_bar,
            r_bar,
        })
    }
}
