use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::blocks::{check_gains, check_problem};
use super::spectral::{compute_rho_max, spectral_report, SpectralReport};
use super::{ConsensusError, Partition, Result};
use crate::edmd::LiftedData;
use crate::graph::Graph;
use crate::linalg::{frobenius_norm, Matrix};

/// Divergence guard: halt once any state exceeds this multiple of the
/// initial scale.
const DIVERGENCE_FACTOR: f64 = 1e12;

/// Local operator guess `K_i` and integral state `R_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub k: Matrix,
    pub r: Matrix,
}

impl AgentState {
    pub fn zeros(n: usize) -> Self {
        Self {
            k: Matrix::zeros(n, n),
            r: Matrix::zeros(n, n),
        }
    }

    fn is_finite(&self) -> bool {
        self.k.iter().chain(self.r.iter()).all(|v| v.is_finite())
    }
}

/// How `K_i(0)` is chosen; `R_i(0)` is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InitMode {
    #[default]
    Zeros,
    /// Entries uniform in `(-1, 1)`, agents drawn in order from one stream.
    Uniform { seed: u64 },
}

impl InitMode {
    pub fn states(&self, n: usize, p: usize) -> Vec<AgentState> {
        match *self {
            InitMode::Zeros => vec![AgentState::zeros(n); p],
            InitMode::Uniform { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..p)
                    .map(|_| AgentState {
                        k: Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)),
                        r: Matrix::zeros(n, n),
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Fixed(f64),
    /// `θ · α_max`, with `α_max` taken from the spectrum of `M`.
    FractionOfMax(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverGains {
    pub k_p: f64,
    pub k_i: f64,
    pub step: StepSize,
    pub t_max: usize,
    pub stop_tol: f64,
}

impl SolverGains {
    pub fn new(k_p: f64, k_i: f64, step: StepSize) -> Self {
        Self {
            k_p,
            k_i,
            step,
            t_max: 1000,
            stop_tol: 1e-10,
        }
    }

    pub fn with_t_max(mut self, t_max: usize) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_stop_tol(mut self, stop_tol: f64) -> Self {
        self.stop_tol = stop_tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_gains(self.k_p, self.k_i)?;
        let s = match self.step {
            StepSize::Fixed(a) | StepSize::FractionOfMax(a) => a,
        };
        if !(s.is_finite() && s > 0.0) {
            return Err(ConsensusError::Gains(format!(
                "step parameter must be positive, got {s}"
            )));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(ConsensusError::Gains("stop_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Diagnostics after one synchronous round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// `max_{(i,j)∈E} ‖K_i − K_j‖_F`.
    pub consensus_error: f64,
    /// `½‖Y − K̄X‖²_F` for the mean operator `K̄`.
    pub objective: f64,
    /// `(1/p) Σ_i ‖Y − K_i X‖_F`.
    pub fit_metric: f64,
    pub kkt_residual: f64,
    /// `‖Σ_i R_i‖_F`.
    pub integral_sum: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "iteration,consensus_error,objective,fit_metric,kkt_residual,integral_sum"
        )?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.iteration,
                r.consensus_error,
                r.objective,
                r.fit_metric,
                r.kkt_residual,
                r.integral_sum
            )?;
        }
        Ok(())
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RunStatus {
    /// Both stopping criteria met after `iterations` rounds.
    Converged { iterations: usize },
    /// Budget exhausted without meeting the stopping criteria.
    MaxIterations { iterations: usize },
    /// Divergence guard tripped at `iteration`.
    Diverged { iteration: usize },
}

impl RunStatus {
    pub fn iterations(&self) -> usize {
        match *self {
            RunStatus::Converged { iterations } | RunStatus::MaxIterations { iterations } => {
                iterations
            }
            RunStatus::Diverged { iteration } => iteration,
        }
    }

    pub fn is_converged(&self) -> bool {
        matches!(self, RunStatus::Converged { .. })
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, RunStatus::Diverged { .. })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Update agents on the rayon pool. Results are identical either way.
    pub parallel: bool,
    /// Reuse a report instead of recomputing the spectrum for `FractionOfMax`.
    pub report: Option<SpectralReport>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub states: Vec<AgentState>,
    pub trace: RunTrace,
    pub status: RunStatus,
    pub alpha: f64,
    pub report: Option<SpectralReport>,
}

impl RunResult {
    pub fn mean_operator(&self) -> Matrix {
        mean_k(&self.states)
    }
}

/// `out += a · x`
fn axpy(out: &mut Matrix, a: f64, x: &Matrix) {
    out.zip_apply(x, |o, v| *o += a * v);
}

/// Per-agent data with the cheaper gradient form precomputed.
struct Local {
    x: Matrix,
    xt: Matrix,
    y: Matrix,
    gram: Option<(Matrix, Matrix)>,
}

impl Local {
    fn new(x: Matrix, y: Matrix) -> Self {
        // K (X Xᵀ) − Y Xᵀ costs n³; (K X − Y) Xᵀ costs 2 n² m.
        let gram = (x.nrows() <= 2 * x.ncols()).then(|| (&x * x.transpose(), &y * x.transpose()));
        Self {
            xt: x.transpose(),
            x,
            y,
            gram,
        }
    }

    /// `out += scale · (K X_i − Y_i) X_iᵀ`
    fn add_gradient(&self, k: &Matrix, scale: f64, out: &mut Matrix) {
        match &self.gram {
            Some((xxt, yxt)) => {
                out.gemm(scale, k, xxt, 1.0);
                axpy(out, -scale, yxt);
            }
            None => {
                let mut resid = self.y.clone();
                resid.gemm(1.0, k, &self.x, -1.0);
                out.gemm(scale, &resid, &self.xt, 1.0);
            }
        }
    }
}

struct Workspace {
    locals: Vec<Local>,
    adjacency: Vec<Vec<usize>>,
    n: usize,
}

impl Workspace {
    fn new(g: &Graph, part: &Partition, data: &LiftedData) -> Self {
        Self {
            locals: part
                .blocks(data)
                .into_iter()
                .map(|(x, y)| Local::new(x, y))
                .collect(),
            adjacency: g.adjacency(),
            n: data.n(),
        }
    }

    fn check_states(&self, states: &[AgentState]) -> Result<()> {
        if states.len() != self.locals.len() {
            return Err(ConsensusError::Dimension(format!(
                "{} agent states for {} agents",
                states.len(),
                self.locals.len()
            )));
        }
        for s in states {
            if s.k.shape() != (self.n, self.n) || s.r.shape() != (self.n, self.n) {
                return Err(ConsensusError::Dimension(format!(
                    "agent state must be {0}x{0}",
                    self.n
                )));
            }
        }
        Ok(())
    }

    /// Writes agent `i`'s next state into `out`; `diff` is scratch.
    fn update_into(
        &self,
        i: usize,
        states: &[AgentState],
        gains: (f64, f64, f64),
        out: &mut AgentState,
        diff: &mut Matrix,
    ) {
        let (k_p, k_i, alpha) = gains;
        let me = &states[i];
        diff.copy_from(&me.k);
        *diff *= self.adjacency[i].len() as f64;
        for &j in &self.adjacency[i] {
            *diff -= &states[j].k;
        }
        out.k.copy_from(&me.k);
        self.locals[i].add_gradient(&me.k, -alpha, &mut out.k);
        axpy(&mut out.k, -alpha * k_p, diff);
        axpy(&mut out.k, -alpha * k_i, &me.r);
        out.r.copy_from(&me.r);
        axpy(&mut out.r, alpha, diff);
    }

    /// One synchronous round from `states` into `next`.
    fn round_into(
        &self,
        states: &[AgentState],
        next: &mut [AgentState],
        scratch: &mut [Matrix],
        gains: (f64, f64, f64),
        parallel: bool,
    ) {
        if parallel {
            next.par_iter_mut()
                .zip(scratch.par_iter_mut())
                .enumerate()
                .for_each(|(i, (out, diff))| self.update_into(i, states, gains, out, diff));
        } else {
            for (i, (out, diff)) in next.iter_mut().zip(scratch.iter_mut()).enumerate() {
                self.update_into(i, states, gains, out, diff);
            }
        }
    }

    fn scratch(&self) -> Vec<Matrix> {
        vec![Matrix::zeros(self.n, self.n); self.locals.len()]
    }
}

/// One synchronous round; every agent reads the pre-round states.
pub fn step(
    states: &[AgentState],
    g: &Graph,
    gains: &SolverGains,
    alpha: f64,
    part: &Partition,
    data: &LiftedData,
) -> Result<Vec<AgentState>> {
    check_problem(g, part, data)?;
    let ws = Workspace::new(g, part, data);
    ws.check_states(states)?;
    let mut next = states.to_vec();
    ws.round_into(
        states,
        &mut next,
        &mut ws.scratch(),
        (gains.k_p, gains.k_i, alpha),
        false,
    );
    Ok(next)
}

fn mean_k(states: &[AgentState]) -> Matrix {
    let mut sum = states[0].k.clone();
    for s in &states[1..] {
        sum += &s.k;
    }
    sum / states.len() as f64
}

/// `max_{(i,j)∈E} ‖K_i − K_j‖_F` (zero without edges).
pub fn consensus_error(states: &[AgentState], g: &Graph) -> f64 {
    g.edges()
        .iter()
        .map(|&(i, j)| distance(&states[i].k, &states[j].k))
        .fold(0.0, f64::max)
}

fn distance(a: &Matrix, b: &Matrix) -> f64 {
    crate::linalg::sum_squares(a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y)).sqrt()
}

/// `‖(K̄X − Y)Xᵀ‖_F + max_{(i,j)∈E} ‖K_i − K_j‖_F`.
pub fn kkt_residual(
    states: &[AgentState],
    part: &Partition,
    data: &LiftedData,
    g: &Graph,
) -> Result<f64> {
    check_problem(g, part, data)?;
    Workspace::new(g, part, data).check_states(states)?;
    let kbar = mean_k(states);
    let grad = (&kbar * &data.x - &data.y) * data.x.transpose();
    Ok(frobenius_norm(&grad) + consensus_error(states, g))
}

fn record(iteration: usize, states: &[AgentState], data: &LiftedData, g: &Graph) -> TraceRecord {
    let kbar = mean_k(states);
    let mut resid = data.y.clone();
    resid.gemm(-1.0, &kbar, &data.x, 1.0);
    let grad = &resid * data.x.transpose();
    let consensus = consensus_error(states, g);
    let fit = states
        .iter()
        .map(|s| {
            let mut r = data.y.clone();
            r.gemm(-1.0, &s.k, &data.x, 1.0);
            frobenius_norm(&r)
        })
        .sum::<f64>()
        / states.len() as f64;
    let mut rsum = states[0].r.clone();
    for s in &states[1..] {
        rsum += &s.r;
    }
    let obj = frobenius_norm(&resid);
    TraceRecord {
        iteration,
        consensus_error: consensus,
        objective: 0.5 * obj * obj,
        fit_metric: fit,
        kkt_residual: frobenius_norm(&grad) + consensus,
        integral_sum: frobenius_norm(&rsum),
    }
}

fn resolve_alpha(
    g: &Graph,
    gains: &SolverGains,
    part: &Partition,
    data: &LiftedData,
    cached: Option<SpectralReport>,
) -> Result<(f64, Option<SpectralReport>)> {
    match gains.step {
        StepSize::Fixed(a) => Ok((a, cached)),
        StepSize::FractionOfMax(theta) => {
            let mut rep = match cached {
                Some(r) => r,
                None => spectral_report(g, part, data, gains.k_p, gains.k_i, None)?,
            };
            let alpha = theta * rep.alpha_max;
            rep.alpha = Some(alpha);
            rep.rho_max = if alpha < rep.alpha_max {
                Some(compute_rho_max(&rep.spectrum_m, alpha)?)
            } else {
                None
            };
            Ok((alpha, Some(rep)))
        }
    }
}

/// Iterate from `init` until both the consensus error and the KKT residual
/// drop below `stop_tol`, the budget runs out, or the divergence guard trips.
pub fn run(
    init: Vec<AgentState>,
    g: &Graph,
    gains: &SolverGains,
    part: &Partition,
    data: &LiftedData,
) -> Result<RunResult> {
    run_observed(init, g, gains, part, data, RunOptions::default(), |_, _| {})
}

/// [`run`] with options and a callback invoked after every round with the
/// iteration number and the new states.
pub fn run_observed<F>(
    init: Vec<AgentState>,
    g: &Graph,
    gains: &SolverGains,
    part: &Partition,
    data: &LiftedData,
    opts: RunOptions,
    mut observer: F,
) -> Result<RunResult>
where
    F: FnMut(usize, &[AgentState]),
{
    check_problem(g, part, data)?;
    gains.validate()?;
    let ws = Workspace::new(g, part, data);
    ws.check_states(&init)?;
    if let Some(bad) = init.iter().position(|s| s.r.iter().any(|&v| v != 0.0)) {
        return Err(ConsensusError::Dimension(format!(
            "agent {bad} starts with a nonzero integral state"
        )));
    }
    let (alpha, report) = resolve_alpha(g, gains, part, data, opts.report)?;

    let k0_norm = init
        .iter()
        .map(|s| frobenius_norm(&s.k).powi(2))
        .sum::<f64>()
        .sqrt();
    let limit = DIVERGENCE_FACTOR * 1f64.max(k0_norm).max(frobenius_norm(&data.y));

    let mut states = init;
    let mut next = states.clone();
    let mut scratch = ws.scratch();
    let round_gains = (gains.k_p, gains.k_i, alpha);
    let mut trace = RunTrace::default();
    let mut status = RunStatus::MaxIterations {
        iterations: gains.t_max,
    };
    for t in 1..=gains.t_max {
        ws.round_into(&states, &mut next, &mut scratch, round_gains, opts.parallel);
        std::mem::swap(&mut states, &mut next);
        let blown = states.iter().any(|s| {
            !s.is_finite() || frobenius_norm(&s.k) > limit || frobenius_norm(&s.r) > limit
        });
        trace.records.push(record(t, &states, data, g));
        observer(t, &states);
        if blown {
            status = RunStatus::Diverged { iteration: t };
            break;
        }
        let last = trace.records.last().expect("just pushed");
        if last.consensus_error < gains.stop_tol && last.kkt_residual < gains.stop_tol {
            status = RunStatus::Converged { iterations: t };
            break;
        }
    }
    Ok(RunResult {
        states,
        trace,
        status,
        alpha,
        report,
    })
}

/// Geometric-mean per-step ratio of `errors` over the second half of the
/// iterations before the first entry at or below `floor`. `errors[t]` is the
/// error after round `t`.
pub fn tail_contraction(errors: &[f64], floor: f64) -> Option<f64> {
    let end = errors
        .iter()
        .position(|&e| e <= floor)
        .unwrap_or(errors.len());
    if end < 4 {
        return None;
    }
    let (start, last) = (end / 2, end - 1);
    let (a, b) = (errors[start], errors[last]);
    if !(a > 0.0 && b > 0.0 && a.is_finite()) {
        return None;
    }
    Some((b / a).powf(1.0 / (last - start) as f64))
}

/// Runs twice: once to find the limit `K̄(∞)`, then again recording
/// `‖K̄(t) − K̄(∞)‖_F`. The contraction is measured down to `1e-6·max(1, ‖K̄(∞)‖_F)`,
/// well above the stopping noise. `None` unless the first run converged.
pub fn observed_contraction(
    init: Vec<AgentState>,
    g: &Graph,
    gains: &SolverGains,
    part: &Partition,
    data: &LiftedData,
    opts: RunOptions,
) -> Result<(RunResult, Option<f64>)> {
    let first = run_observed(init.clone(), g, gains, part, data, opts.clone(), |_, _| {})?;
    if !first.status.is_converged() {
        return Ok((first, None));
    }
    let limit = first.mean_operator();
    let mut errors = vec![frobenius_norm(&(mean_k(&init) - &limit))];
    let opts = RunOptions {
        report: first.report.clone(),
        ..opts
    };
    let second = run_observed(init, g, gains, part, data, opts, |_, states| {
        errors.push(frobenius_norm(&(mean_k(states) - &limit)));
    })?;
    let floor = 1e-6 * frobenius_norm(&limit).max(1.0);
    Ok((second, tail_contraction(&errors, floor)))
}
