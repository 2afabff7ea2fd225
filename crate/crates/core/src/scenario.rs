//! Synthetic intensity-map process on a periodic `g × g` grid, and the
//! end-to-end experiment built on it.
//!
//! The initial frame is a sum of Gaussian blobs (random centers, amplitudes
//! in `[0.4, 1]`, periodic distance), clipped to `[0, 1]`. Each step applies
//!
//! 1. a periodic shift by the drift vector (bilinear interpolation; integer
//!    drifts are exact permutations),
//! 2. one explicit diffusion step `u + κ Δu` with the 5-point Laplacian,
//! 3. the saturation blend `(1 − s) z + s · 4 z (1 − z)`,
//! 4. clipping to `[0, 1]`.
//!
//! With zero drift, diffusion and gain the map is the identity. With `s = 0`
//! and `κ ≤ 1/4` it is linear; any `s > 0` makes it nonlinear, and `s = 1`
//! is the chaotic logistic map applied cellwise.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::{
    self, partition_data, run_observed, spectral_report, ConsensusError, InitMode, RunOptions,
    RunStatus, RunTrace, SolverGains, SpectralReport,
};
use crate::edmd::{self, Dictionary, EdmdError, KoopmanModel, RolloutStart, SnapshotSequence};
use crate::graph::{Graph, GraphError};
use crate::linalg::{self, frobenius_norm, LinalgError, Matrix, Spectrum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Edmd(#[from] EdmdError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ScenarioError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridScenario {
    pub grid_side: usize,
    pub num_agents: usize,
    /// Total number of transitions `N`; frames generated are `N + 1`.
    pub snapshots: usize,
    pub blob_count: usize,
    pub blob_width: f64,
    /// Shift per step in cells, `[columns, rows]`.
    pub drift: [f64; 2],
    pub diffusion: f64,
    pub saturation_gain: f64,
    pub seed: u64,
}

impl Default for GridScenario {
    fn default() -> Self {
        Self::paper()
    }
}

impl GridScenario {
    /// 20×20 grid, three agents with three snapshots each.
    ///
    /// A drift of a quarter grid per step with weak saturation keeps the
    /// frames close to a period-four pattern, so `X` has four dominant
    /// directions and a handful of faint ones.
    pub fn paper() -> Self {
        Self {
            grid_side: 20,
            num_agents: 3,
            snapshots: 9,
            blob_count: 20,
            blob_width: 1.5,
            drift: [5.0, 0.0],
            diffusion: 0.001,
            saturation_gain: 0.004,
            seed: 1,
        }
    }

    /// 4×4 grid with `N = 24 > n = 16`, so `X` has full row rank.
    ///
    /// The chaotic gain keeps consecutive frames far from collinear; smoother
    /// settings make `XXᵀ` too ill-conditioned for fast consensus.
    pub fn desk() -> Self {
        Self {
            grid_side: 4,
            num_agents: 3,
            snapshots: 24,
            blob_count: 4,
            blob_width: 0.8,
            drift: [1.0, 0.0],
            diffusion: 0.002,
            saturation_gain: 1.0,
            seed: 16,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.grid_side < 2 {
            return bad(format!("grid_side must be >= 2, got {}", self.grid_side));
        }
        if self.num_agents == 0 {
            return bad("num_agents must be >= 1".into());
        }
        if self.snapshots < self.num_agents {
            return bad(format!(
                "{} snapshots cannot be split among {} agents",
                self.snapshots, self.num_agents
            ));
        }
        if !(self.blob_width.is_finite() && self.blob_width > 0.0) {
            return bad("blob_width must be positive".into());
        }
        if !self.drift.iter().all(|v| v.is_finite()) {
            return bad("drift must be finite".into());
        }
        if !(0.0..=0.25).contains(&self.diffusion) {
            return bad(format!(
                "diffusion must lie in [0, 0.25], got {}",
                self.diffusion
            ));
        }
        if !(0.0..=1.0).contains(&self.saturation_gain) {
            return bad(format!(
                "saturation_gain must lie in [0, 1], got {}",
                self.saturation_gain
            ));
        }
        Ok(())
    }

    pub fn widths(&self) -> Result<Vec<usize>> {
        sequential_widths(self.snapshots, self.num_agents)
    }

    fn initial_frame(&self) -> Vec<f64> {
        let g = self.grid_side;
        let gf = g as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut u = vec![0.0; g * g];
        let wrap = |d: f64| {
            let d = d.abs() % gf;
            d.min(gf - d)
        };
        for _ in 0..self.blob_count {
            let cr = rng.gen_range(0.0..gf);
            let cc = rng.gen_range(0.0..gf);
            let amp = rng.gen_range(0.4..1.0);
            let denom = 2.0 * self.blob_width * self.blob_width;
            for r in 0..g {
                for c in 0..g {
                    let dr = wrap(r as f64 - cr);
                    let dc = wrap(c as f64 - cc);
                    u[r * g + c] += amp * (-(dr * dr + dc * dc) / denom).exp();
                }
            }
        }
        u.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        u
    }

    /// One application of the step map to a row-major frame.
    pub fn advance(&self, u: &[f64]) -> Vec<f64> {
        let g = self.grid_side;
        let shifted = shift(u, g, self.drift);
        let k = self.diffusion;
        let s = self.saturation_gain;
        let at = |r: usize, c: usize| shifted[(r % g) * g + (c % g)];
        let mut out = vec![0.0; g * g];
        for r in 0..g {
            for c in 0..g {
                let center = at(r, c);
                let lap = at(r + g - 1, c) + at(r + 1, c) + at(r, c + g - 1) + at(r, c + 1)
                    - 4.0 * center;
                let z = center + k * lap;
                let v = (1.0 - s) * z + s * 4.0 * z * (1.0 - z);
                out[r * g + c] = v.clamp(0.0, 1.0);
            }
        }
        out
    }

    /// `count` consecutive frames starting from the seeded initial frame.
    pub fn frames(&self, count: usize) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let mut out = Vec::with_capacity(count);
        if count == 0 {
            return Ok(out);
        }
        out.push(self.initial_frame());
        while out.len() < count {
            let next = self.advance(out.last().expect("non-empty"));
            out.push(next);
        }
        Ok(out)
    }
}

/// Sample `u` at `(r − dy, c − dx)` with periodic bilinear interpolation.
fn shift(u: &[f64], g: usize, drift: [f64; 2]) -> Vec<f64> {
    let [dx, dy] = drift;
    if dx == 0.0 && dy == 0.0 {
        return u.to_vec();
    }
    let gi = g as i64;
    let (fx, fy) = (dx.floor(), dy.floor());
    let (ax, ay) = (dx - fx, dy - fy);
    let taps = [
        (fy as i64, fx as i64, (1.0 - ay) * (1.0 - ax)),
        (fy as i64, fx as i64 + 1, (1.0 - ay) * ax),
        (fy as i64 + 1, fx as i64, ay * (1.0 - ax)),
        (fy as i64 + 1, fx as i64 + 1, ay * ax),
    ];
    let mut out = vec![0.0; g * g];
    for r in 0..gi {
        for c in 0..gi {
            let mut acc = 0.0;
            for &(sy, sx, w) in &taps {
                if w == 0.0 {
                    continue;
                }
                let rr = (r - sy).rem_euclid(gi) as usize;
                let cc = (c - sx).rem_euclid(gi) as usize;
                acc += w * u[rr * g + cc];
            }
            out[(r * gi + c) as usize] = acc;
        }
    }
    out
}

/// The `N + 1` frames `x_1, …, x_{N+1}`.
pub fn generate(scn: &GridScenario) -> Result<SnapshotSequence> {
    let frames = scn.frames(scn.snapshots + 1)?;
    Ok(SnapshotSequence::new(frames)?)
}

/// Near-equal contiguous widths; the first `N mod p` agents get one extra.
pub fn sequential_widths(big_n: usize, p: usize) -> Result<Vec<usize>> {
    if p == 0 {
        return Err(ScenarioError::Invalid("need at least one agent".into()));
    }
    if big_n < p {
        return Err(ScenarioError::Invalid(format!(
            "{big_n} snapshots cannot be split among {p} agents"
        )));
    }
    let base = big_n / p;
    let extra = big_n % p;
    Ok((0..p).map(|i| base + usize::from(i < extra)).collect())
}

/// Named preset or explicit topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSpec {
    Preset(String),
    Explicit(Graph),
}

impl GraphSpec {
    pub fn build(&self, p: usize) -> Result<Graph> {
        let g = match self {
            GraphSpec::Preset(name) => Graph::preset(name, p)?,
            GraphSpec::Explicit(g) => g.clone(),
        };
        if g.p() != p {
            return Err(ScenarioError::Invalid(format!(
                "graph has {} vertices but there are {p} agents",
                g.p()
            )));
        }
        Ok(g)
    }
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec::Preset("ring".into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: GridScenario,
    pub gains: SolverGains,
    pub graph: GraphSpec,
    pub init: InitMode,
    /// Defaults to vectorization of the grid.
    pub dictionary: Option<Dictionary>,
    pub rank_tol: Option<f64>,
    pub rollout_steps: usize,
    pub rollout_start: RolloutStart,
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn new(scenario: GridScenario, gains: SolverGains) -> Self {
        Self {
            scenario,
            gains,
            graph: GraphSpec::default(),
            init: InitMode::Zeros,
            dictionary: None,
            rank_tol: None,
            rollout_steps: 20,
            rollout_start: RolloutStart::LastTraining,
            parallel: false,
        }
    }

    pub fn dictionary(&self) -> Dictionary {
        self.dictionary
            .clone()
            .unwrap_or(Dictionary::Vectorization {
                dim: self.scenario.state_dim(),
            })
    }
}

/// Everything needed to redraw the four experiment figures.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub k_ave: Matrix,
    pub k_star: Matrix,
    pub spectrum_kave: Spectrum,
    pub spectrum_kstar: Spectrum,
    /// `|K_ave − K*|` elementwise.
    pub diff_matrix: Matrix,
    pub trace: RunTrace,
    /// Rows are prediction steps `0..=steps`, columns lifted coordinates
    /// (grid cells under vectorization); entries `|predicted − truth|`.
    pub rollout_error: Matrix,
    pub spectral: Option<SpectralReport>,
    pub alpha: f64,
    pub status: RunStatus,
    pub summary: ExperimentSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub n: usize,
    pub samples: usize,
    pub agents: usize,
    pub widths: Vec<usize>,
    pub rank_x: usize,
    pub alpha: f64,
    pub alpha_max: Option<f64>,
    pub rho_max: Option<f64>,
    pub status: RunStatus,
    pub iterations: usize,
    pub final_kkt_residual: f64,
    pub final_consensus_error: f64,
    pub final_fit_metric: f64,
    pub objective_kave: f64,
    pub objective_kstar: f64,
    /// `max_i ‖K_i − K*‖_F / ‖K*‖_F`.
    pub max_relative_deviation: f64,
    pub max_abs_diff: f64,
    pub max_rollout_error: f64,
}

pub fn make_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let scn = &cfg.scenario;
    scn.validate()?;
    let widths = scn.widths()?;
    let p = widths.len();
    let g = cfg.graph.build(p)?;
    let dict = cfg.dictionary();
    dict.validate()?;

    let start = match cfg.rollout_start {
        RolloutStart::LastTraining => scn.snapshots,
        RolloutStart::FirstTraining => 0,
    };
    let total = (scn.snapshots + 1).max(start + cfg.rollout_steps + 1);
    let frames = scn.frames(total)?;
    let seq = SnapshotSequence::new(frames[..=scn.snapshots].to_vec())?;
    let data = edmd::lift(&seq, &dict)?;
    let part = partition_data(&data, &widths)?;
    let n = data.n();

    let kstar = edmd::centralized_solve(&data, cfg.rank_tol)?;
    let x_svd = linalg::svd(&data.x)?;
    let smax = x_svd.sigma.first().copied().unwrap_or(0.0);
    let rank_x = x_svd.rank(
        cfg.rank_tol
            .unwrap_or_else(|| linalg::default_rank_tol(n, data.num_samples(), smax)),
    );

    // The report is useful even for a fixed step, so always compute it.
    let step_alpha = match cfg.gains.step {
        consensus::StepSize::Fixed(a) => Some(a),
        consensus::StepSize::FractionOfMax(_) => None,
    };
    let report = spectral_report(&g, &part, &data, cfg.gains.k_p, cfg.gains.k_i, step_alpha)?;
    let opts = RunOptions {
        parallel: cfg.parallel,
        report: Some(report),
    };
    let init = cfg.init.states(n, p);
    let res = run_observed(init, &g, &cfg.gains, &part, &data, opts, |_, _| {})?;

    let k_ave = res.mean_operator();
    let kave_model = KoopmanModel::new(k_ave.clone())?;
    let diff_matrix = (&k_ave - &kstar.k).abs();
    let kstar_norm = frobenius_norm(&kstar.k);
    let max_relative_deviation = res
        .states
        .iter()
        .map(|s| frobenius_norm(&(&s.k - &kstar.k)) / kstar_norm.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);

    let z0 = dict.eval(&frames[start])?;
    let predicted = edmd::rollout(&kave_model, &z0, cfg.rollout_steps)?;
    let mut rollout_error = Matrix::zeros(cfg.rollout_steps + 1, n);
    for (t, pred) in predicted.iter().enumerate() {
        let truth: DVector<f64> = dict.eval(&frames[start + t])?;
        for c in 0..n {
            rollout_error[(t, c)] = (pred[c] - truth[c]).abs();
        }
    }

    let last = res.trace.last().copied();
    let summary = ExperimentSummary {
        n,
        samples: data.num_samples(),
        agents: p,
        widths: widths.clone(),
        rank_x,
        alpha: res.alpha,
        alpha_max: res.report.as_ref().map(|r| r.alpha_max),
        rho_max: res.report.as_ref().and_then(|r| r.rho_max),
        status: res.status,
        iterations: res.status.iterations(),
        final_kkt_residual: last.map_or(f64::NAN, |r| r.kkt_residual),
        final_consensus_error: last.map_or(f64::NAN, |r| r.consensus_error),
        final_fit_metric: last.map_or(f64::NAN, |r| r.fit_metric),
        objective_kave: edmd::objective(&kave_model, &data)?,
        objective_kstar: edmd::objective(&kstar, &data)?,
        max_relative_deviation,
        max_abs_diff: diff_matrix.max(),
        max_rollout_error: rollout_error.max(),
    };

    Ok(ExperimentReport {
        spectrum_kave: linalg::eigenvalues(&k_ave)?,
        spectrum_kstar: linalg::eigenvalues(&kstar.k)?,
        k_ave,
        k_star: kstar.k,
        diff_matrix,
        trace: res.trace,
        rollout_error,
        spectral: res.report,
        alpha: res.alpha,
        status: res.status,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consensus::StepSize;

    #[test]
    fn deterministic_given_seed() {
        let scn = GridScenario::paper();
        assert_eq!(generate(&scn).unwrap(), generate(&scn).unwrap());
        let mut other = scn.clone();
        other.seed += 1;
        assert_ne!(generate(&scn).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn frozen_dynamics_are_constant() {
        let scn = GridScenario {
            drift: [0.0, 0.0],
            diffusion: 0.0,
            saturation_gain: 0.0,
            ..GridScenario::paper()
        };
        let seq = generate(&scn).unwrap();
        let first = &seq.states()[0];
        assert!(seq.states().iter().all(|s| s == first));
    }

    #[test]
    fn frames_stay_in_unit_interval() {
        for base in [GridScenario::paper(), GridScenario::desk()] {
            for seed in 0..20 {
                let scn = GridScenario {
                    seed,
                    ..base.clone()
                };
                for f in scn.frames(1000).unwrap() {
                    assert!(f.iter().all(|&v| (0.0..=1.0).contains(&v)));
                }
            }
        }
    }

    #[test]
    fn step_map_is_not_affine() {
        for scn in [GridScenario::paper(), GridScenario::desk()] {
            let fr = scn.frames(6).unwrap();
            let (a, b) = (&fr[2], &fr[5]);
            let c = 0.3;
            let mix: Vec<f64> = a
                .iter()
                .zip(b)
                .map(|(x, y)| c * x + (1.0 - c) * y)
                .collect();
            let lhs = scn.advance(&mix);
            let (fa, fb) = (scn.advance(a), scn.advance(b));
            let gap = lhs
                .iter()
                .zip(fa.iter().zip(&fb))
                .map(|(l, (x, y))| (l - (c * x + (1.0 - c) * y)).abs())
                .fold(0.0, f64::max);
            assert!(gap > 1e-6, "gap {gap}");
        }
    }

    #[test]
    fn integer_drift_is_a_permutation() {
        let u: Vec<f64> = (0..9).map(f64::from).collect();
        let s = shift(&u, 3, [1.0, 0.0]);
        assert_eq!(s, vec![2.0, 0.0, 1.0, 5.0, 3.0, 4.0, 8.0, 6.0, 7.0]);
        let s = shift(&u, 3, [0.0, -1.0]);
        assert_eq!(&s[..3], &[3.0, 4.0, 5.0]);
        let half = shift(&u, 3, [0.5, 0.0]);
        assert_eq!(half[1], 0.5);
    }

    #[test]
    fn widths_examples() {
        assert_eq!(sequential_widths(9, 3).unwrap(), vec![3, 3, 3]);
        assert_eq!(sequential_widths(7, 3).unwrap(), vec![3, 2, 2]);
        assert_eq!(sequential_widths(5, 1).unwrap(), vec![5]);
        assert!(sequential_widths(2, 3).is_err());
    }

    #[test]
    fn invalid_parameters() {
        let bad = GridScenario {
            grid_side: 1,
            ..GridScenario::desk()
        };
        assert!(generate(&bad).is_err());
        let bad = GridScenario {
            diffusion: 0.3,
            ..GridScenario::desk()
        };
        assert!(generate(&bad).is_err());
        let bad = GridScenario {
            snapshots: 2,
            ..GridScenario::desk()
        };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn linear_dynamics_roll_out_exactly() {
        // Gain and diffusion 0 with integer drift: the map is a permutation.
        let scn = GridScenario {
            grid_side: 3,
            snapshots: 20,
            diffusion: 0.0,
            saturation_gain: 0.0,
            drift: [1.0, 0.0],
            blob_count: 3,
            seed: 4,
            ..GridScenario::desk()
        };
        let gains = SolverGains::new(5.0, 2.0, StepSize::FractionOfMax(0.5)).with_t_max(200_000);
        let mut cfg = ExperimentConfig::new(scn, gains);
        cfg.rollout_steps = 10;
        let rep = make_experiment(&cfg).unwrap();
        assert!(rep.status.is_converged(), "{:?}", rep.status);
        assert!(
            rep.summary.max_rollout_error <= 1e-8,
            "{}",
            rep.summary.max_rollout_error
        );
    }

    #[test]
    fn desk_experiment_matches_oracle() {
        let scn = GridScenario {
            grid_side: 3,
            snapshots: 20,
            ..GridScenario::desk()
        };
        let gains = SolverGains::new(5.0, 2.0, StepSize::FractionOfMax(0.5)).with_t_max(200_000);
        let rep = make_experiment(&ExperimentConfig::new(scn, gains)).unwrap();
        assert_eq!(rep.summary.rank_x, 9);
        assert!(
            rep.summary.max_abs_diff <= 1e-6,
            "{}",
            rep.summary.max_abs_diff
        );
        assert!(rep.diff_matrix.iter().all(|&v| v >= 0.0));
        assert!(rep.rollout_error.iter().all(|&v| v >= 0.0));
        assert_eq!(rep.spectrum_kave.len(), 9);
    }
}
