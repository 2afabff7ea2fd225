use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dkoop::consensus::{InitMode, SolverGains, StepSize};
use dkoop::edmd::{Dictionary, LiftedData, RolloutStart};
use dkoop::graph::{build_graph, is_connected, Graph};
use dkoop::scenario::GridScenario;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::output::read_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    /// 4×4 grid, 24 snapshots, k_P = 5, k_I = 2, up to 20,000 rounds.
    #[default]
    Desk,
    /// 20×20 grid, 9 snapshots, k_P = 150, k_I = 75, 1000 rounds.
    Paper,
}

/// On-disk run configuration. Every field is optional; missing ones fall back
/// to the defaults of the selected scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
    /// Replaces the scale's scenario preset entirely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<GridScenario>,
    /// Pre-lifted data instead of a generated scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataFiles>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<GainsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<Dictionary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rollout_start: Option<RolloutStart>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parallel: Option<bool>,
    /// Step fractions for `alpha-sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark_repeats: Option<usize>,
    /// Frame count for `gen`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataFiles {
    /// CSV with one row per lifted coordinate; relative to the config file.
    pub x: PathBuf,
    pub y: PathBuf,
    /// Columns owned by each agent, in order.
    pub widths: Vec<usize>,
}

/// Exactly one of `alpha` and `theta` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsConfig {
    pub k_p: f64,
    pub k_i: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphConfig {
    /// `ring`, `path`, `complete` or `star`.
    Preset(String),
    /// Edge-list text file: vertex count on the first line, then `i j` pairs.
    File { file: PathBuf },
    Edges {
        p: usize,
        edges: Vec<(usize, usize)>,
    },
}

impl GraphConfig {
    pub fn build(&self, p: usize, base: &Path) -> Result<Graph, CliError> {
        let g = match self {
            GraphConfig::Preset(name) => Graph::preset(name, p)?,
            GraphConfig::File { file } => {
                let path = base.join(file);
                let text = fs::read_to_string(&path).map_err(|e| {
                    CliError::Config(format!("cannot read graph file {}: {e}", path.display()))
                })?;
                text.parse::<Graph>()?
            }
            GraphConfig::Edges { p, edges } => build_graph(*p, edges)?,
        };
        if g.p() != p {
            return Err(CliError::Graph(format!(
                "graph has {} vertices but there are {p} agents",
                g.p()
            )));
        }
        if !is_connected(&g) {
            return Err(CliError::Graph(
                "communication graph is not connected".into(),
            ));
        }
        Ok(g)
    }
}

/// Where the snapshot data comes from.
#[derive(Debug, Clone)]
pub enum Source {
    Scenario(GridScenario),
    Data {
        data: LiftedData,
        widths: Vec<usize>,
    },
}

/// A configuration with all defaults applied and validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub source: Source,
    pub graph: Graph,
    pub gains: SolverGains,
    pub init: InitMode,
    pub dictionary: Option<Dictionary>,
    pub rank_tol: Option<f64>,
    pub rollout_steps: usize,
    pub rollout_start: RolloutStart,
    pub parallel: bool,
    pub thetas: Vec<f64>,
    pub benchmark_repeats: usize,
    pub frames: Option<usize>,
    pub out: PathBuf,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scale: Option<Scale>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    /// Applies defaults and overrides, loads data files relative to `base`,
    /// and validates everything before any computation starts.
    pub fn resolve(&self, base: &Path, ov: &Overrides) -> Result<Resolved, CliError> {
        let scale = ov.scale.or(self.scale).unwrap_or_default();
        let (preset, k_p, k_i, t_max) = match scale {
            Scale::Desk => (GridScenario::desk(), 5.0, 2.0, 20_000),
            Scale::Paper => (GridScenario::paper(), 150.0, 75.0, 1000),
        };

        let source = match (&self.data, &self.scenario) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "give either `scenario` or `data`, not both".into(),
                ))
            }
            (Some(files), None) => {
                let x = read_matrix(&base.join(&files.x))?;
                let y = read_matrix(&base.join(&files.y))?;
                let data = LiftedData::new(x, y).map_err(|e| CliError::Config(e.to_string()))?;
                if files.widths.iter().sum::<usize>() != data.num_samples()
                    || files.widths.contains(&0)
                {
                    return Err(CliError::Config(format!(
                        "data widths {:?} must be positive and sum to {} columns",
                        files.widths,
                        data.num_samples()
                    )));
                }
                Source::Data {
                    data,
                    widths: files.widths.clone(),
                }
            }
            (None, scenario) => {
                let mut scn = scenario.clone().unwrap_or(preset);
                if let Some(seed) = ov.seed {
                    scn.seed = seed;
                }
                scn.validate()
                    .map_err(|e| CliError::Config(e.to_string()))?;
                Source::Scenario(scn)
            }
        };
        let p = match &source {
            Source::Scenario(s) => s.num_agents,
            Source::Data { widths, .. } => widths.len(),
        };
        let graph = self
            .graph
            .clone()
            .unwrap_or(GraphConfig::Preset("ring".into()))
            .build(p, base)?;

        let step = match &self.gains {
            None => StepSize::FractionOfMax(0.5),
            Some(GainsConfig {
                alpha: Some(a),
                theta: None,
                ..
            }) => StepSize::Fixed(*a),
            Some(GainsConfig {
                alpha: None,
                theta: Some(t),
                ..
            }) => StepSize::FractionOfMax(*t),
            Some(_) => {
                return Err(CliError::Config(
                    "gains need exactly one of `alpha` and `theta`".into(),
                ))
            }
        };
        let (k_p, k_i) = self.gains.as_ref().map_or((k_p, k_i), |g| (g.k_p, g.k_i));
        let mut gains = SolverGains::new(k_p, k_i, step).with_t_max(self.t_max.unwrap_or(t_max));
        if let Some(tol) = self.stop_tol {
            gains = gains.with_stop_tol(tol);
        }
        gains
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        if let Some(d) = &self.dictionary {
            d.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if let Source::Scenario(s) = &source {
                if d.input_dim() != s.state_dim() {
                    return Err(CliError::Config(format!(
                        "dictionary expects {}-dimensional states, the grid has {}",
                        d.input_dim(),
                        s.state_dim()
                    )));
                }
            }
        }
        if let Some(tol) = self.rank_tol {
            if !(tol >= 0.0) {
                return Err(CliError::Config("rank_tol must be nonnegative".into()));
            }
        }
        let thetas = self
            .thetas
            .clone()
            .unwrap_or_else(|| vec![0.3, 0.5, 0.9, 3.0]);
        if thetas.is_empty() || thetas.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(CliError::Config(
                "thetas must be a nonempty list of positive numbers".into(),
            ));
        }
        let benchmark_repeats = self.benchmark_repeats.unwrap_or(5);
        if benchmark_repeats == 0 {
            return Err(CliError::Config(
                "benchmark_repeats must be at least 1".into(),
            ));
        }

        Ok(Resolved {
            source,
            graph,
            gains,
            init: self.init.unwrap_or_default(),
            dictionary: self.dictionary.clone(),
            rank_tol: self.rank_tol,
            rollout_steps: self.rollout_steps.unwrap_or(20),
            rollout_start: self.rollout_start.unwrap_or_default(),
            parallel: self.parallel.unwrap_or(false),
            thetas,
            benchmark_repeats,
            frames: self.frames,
            out: ov
                .out
                .clone()
                .or_else(|| self.out.as_ref().map(|o| base.join(o)))
                .unwrap_or_else(|| PathBuf::from("out")),
        })
    }
}
