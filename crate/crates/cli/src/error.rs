use std::fmt;

use dkoop::consensus::ConsensusError;
use dkoop::edmd::EdmdError;
use dkoop::graph::GraphError;
use dkoop::scenario::ScenarioError;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: unreadable or invalid configuration or input data.
    Config(String),
    /// Exit 3: malformed or disconnected communication graph.
    Graph(String),
    /// Exit 4: the run hit the divergence guard. Outputs are still written.
    Diverged(String),
    /// Exit 1: anything else (I/O, numerical failure).
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Graph(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Graph(m) => write!(f, "graph error: {m}"),
            CliError::Diverged(m) => write!(f, "divergence flag: {m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Graph(e.to_string())
    }
}

impl From<ConsensusError> for CliError {
    fn from(e: ConsensusError) -> Self {
        match e {
            ConsensusError::Disconnected | ConsensusError::Graph(_) => {
                CliError::Graph(e.to_string())
            }
            ConsensusError::Partition(_)
            | ConsensusError::Dimension(_)
            | ConsensusError::Gains(_)
            | ConsensusError::AlphaOutOfRange { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<EdmdError> for CliError {
    fn from(e: EdmdError) -> Self {
        match e {
            EdmdError::Linalg(_) => CliError::Runtime(e.into()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Invalid(m) => CliError::Config(m),
            ScenarioError::Graph(g) => g.into(),
            ScenarioError::Consensus(c) => c.into(),
            ScenarioError::Edmd(d) => d.into(),
            ScenarioError::Linalg(l) => CliError::Runtime(l.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}
