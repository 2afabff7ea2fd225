use std::ops::Range;

use super::{ConsensusError, Result};
use crate::edmd::LiftedData;
use crate::linalg::Matrix;

/// Contiguous, temporally ordered column blocks of `(X, Y)`, one per agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    widths: Vec<usize>,
}

impl Partition {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.is_empty() {
            return Err(ConsensusError::Partition("need at least one agent".into()));
        }
        if let Some(i) = widths.iter().position(|&w| w == 0) {
            return Err(ConsensusError::Partition(format!("agent {i} has width 0")));
        }
        Ok(Self { widths })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn num_agents(&self) -> usize {
        self.widths.len()
    }

    pub fn total(&self) -> usize {
        self.widths.iter().sum()
    }

    pub fn ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.widths
            .iter()
            .map(|&w| {
                let r = start..start + w;
                start += w;
                r
            })
            .collect()
    }

    /// `(X_i, Y_i)` for every agent.
    pub fn blocks(&self, data: &LiftedData) -> Vec<(Matrix, Matrix)> {
        self.ranges()
            .into_iter()
            .map(|r| {
                (
                    data.x.columns(r.start, r.len()).into_owned(),
                    data.y.columns(r.start, r.len()).into_owned(),
                )
            })
            .collect()
    }
}

pub fn partition_data(data: &LiftedData, widths: &[usize]) -> Result<Partition> {
    let part = Partition::new(widths.to_vec())?;
    if part.total() != data.num_samples() {
        return Err(ConsensusError::Partition(format!(
            "widths sum to {} but there are {} samples",
            part.total(),
            data.num_samples()
        )));
    }
    Ok(part)
}
