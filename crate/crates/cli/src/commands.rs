use std::path::Path;
use std::time::Instant;

use dkoop::consensus::{
    observed_contraction, partition_data, run_observed, spectral_report, Partition, RunOptions,
    RunStatus, SolverGains, SpectralReport, StepSize,
};
use dkoop::edmd::{self, Dictionary, LiftedData};
use dkoop::scenario::{
    self, make_experiment, ExperimentConfig, ExperimentSummary, GraphSpec, GridScenario,
};
use serde::Serialize;

use crate::config::{Resolved, Source};
use crate::error::CliError;
use crate::output::{read_matrix, write_atomic, write_matrix, write_spectrum};

fn json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn need_scenario<'a>(res: &'a Resolved, command: &str) -> Result<&'a GridScenario, CliError> {
    match &res.source {
        Source::Scenario(s) => Ok(s),
        Source::Data { .. } => Err(CliError::Config(format!(
            "`{command}` needs a generated scenario, not pre-lifted data"
        ))),
    }
}

/// Lifted data and its partition for the configured source.
fn problem(res: &Resolved) -> Result<(LiftedData, Partition), CliError> {
    let (data, widths) = match &res.source {
        Source::Scenario(scn) => {
            let seq = scenario::generate(scn)?;
            let dict = res.dictionary.clone().unwrap_or(Dictionary::Vectorization {
                dim: scn.state_dim(),
            });
            (edmd::lift(&seq, &dict)?, scn.widths()?)
        }
        Source::Data { data, widths } => (data.clone(), widths.clone()),
    };
    let part = partition_data(&data, &widths)?;
    Ok((data, part))
}

#[derive(Serialize)]
struct ExperimentJson<'a> {
    summary: &'a ExperimentSummary,
    diverged: bool,
    scenario: &'a GridScenario,
    gains: &'a SolverGains,
    spectral: Option<&'a SpectralReport>,
}

pub fn experiment(res: &Resolved) -> Result<(), CliError> {
    let scn = need_scenario(res, "experiment")?;
    let cfg = ExperimentConfig {
        scenario: scn.clone(),
        gains: res.gains,
        graph: GraphSpec::Explicit(res.graph.clone()),
        init: res.init,
        dictionary: res.dictionary.clone(),
        rank_tol: res.rank_tol,
        rollout_steps: res.rollout_steps,
        rollout_start: res.rollout_start,
        parallel: res.parallel,
    };
    let rep = make_experiment(&cfg)?;
    let out = &res.out;
    write_atomic(&out.join("spectrum_Kave.csv"), |w| {
        write_spectrum(w, &rep.spectrum_kave)
    })?;
    write_atomic(&out.join("spectrum_Kstar.csv"), |w| {
        write_spectrum(w, &rep.spectrum_kstar)
    })?;
    write_atomic(&out.join("diff_matrix.csv"), |w| {
        write_matrix(w, &rep.diff_matrix)
    })?;
    write_atomic(&out.join("fit_trace.csv"), |w| rep.trace.write_csv(w))?;
    write_atomic(&out.join("rollout_error.csv"), |w| {
        write_matrix(w, &rep.rollout_error)
    })?;
    json(
        &out.join("report.json"),
        &ExperimentJson {
            summary: &rep.summary,
            diverged: rep.status.is_diverged(),
            scenario: scn,
            gains: &res.gains,
            spectral: rep.spectral.as_ref(),
        },
    )?;

    let s = &rep.summary;
    println!(
        "n={} N={} p={} rank(X)={} alpha={:e} alpha_max={} rho_max={}",
        s.n,
        s.samples,
        s.agents,
        s.rank_x,
        s.alpha,
        opt(s.alpha_max),
        opt(s.rho_max)
    );
    println!(
        "{} after {} rounds: kkt={:e} consensus={:e} fit={:e} max rel dev={:e}",
        status_name(&rep.status),
        s.iterations,
        s.final_kkt_residual,
        s.final_consensus_error,
        s.final_fit_metric,
        s.max_relative_deviation
    );
    println!("wrote {}", out.display());
    if let RunStatus::Diverged { iteration } = rep.status {
        return Err(CliError::Diverged(format!(
            "states blew up at round {iteration}"
        )));
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:e}"))
}

fn status_name(s: &RunStatus) -> &'static str {
    match s {
        RunStatus::Converged { .. } => "converged",
        RunStatus::MaxIterations { .. } => "max_iterations",
        RunStatus::Diverged { .. } => "diverged",
    }
}

pub fn alpha_sweep(res: &Resolved) -> Result<(), CliError> {
    let (data, part) = problem(res)?;
    let report = spectral_report(&res.graph, &part, &data, res.gains.k_p, res.gains.k_i, None)?;
    let mut rows = Vec::new();
    for &theta in &res.thetas {
        let gains = SolverGains {
            step: StepSize::FractionOfMax(theta),
            ..res.gains
        };
        let opts = RunOptions {
            parallel: res.parallel,
            report: Some(report.clone()),
        };
        let n = data.n();
        let init = res.init.states(n, part.num_agents());
        let (run, rate) = observed_contraction(init, &res.graph, &gains, &part, &data, opts)?;
        let rho = run.report.as_ref().and_then(|r| r.rho_max);
        rows.push(format!(
            "{theta:e},{:e},{:e},{},{},{},{}",
            run.alpha,
            report.alpha_max,
            rho.map_or(String::new(), |r| format!("{r:e}")),
            status_name(&run.status),
            run.status.iterations(),
            rate.map_or(String::new(), |r| format!("{r:e}")),
        ));
        println!(
            "theta={theta} alpha={:e} {} after {} rounds, contraction {}",
            run.alpha,
            status_name(&run.status),
            run.status.iterations(),
            opt(rate)
        );
    }
    let path = res.out.join("alpha_sweep.csv");
    write_atomic(&path, |w| {
        writeln!(
            w,
            "theta,alpha,alpha_max,rho_max,status,iterations,contraction"
        )?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    })?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkJson {
    repeats: usize,
    iterations: usize,
    centralized_solve_ms: f64,
    per_iteration_ms: f64,
    distributed_total_ms: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Wall-clock timings; informational only.
pub fn benchmark(res: &Resolved) -> Result<(), CliError> {
    let (data, part) = problem(res)?;
    let report = spectral_report(&res.graph, &part, &data, res.gains.k_p, res.gains.k_i, None)?;
    let (mut central, mut per_iter, mut total) = (Vec::new(), Vec::new(), Vec::new());
    let mut iterations = 0;
    for _ in 0..res.benchmark_repeats {
        let t = Instant::now();
        edmd::centralized_solve(&data, res.rank_tol)?;
        central.push(t.elapsed().as_secs_f64() * 1e3);

        let opts = RunOptions {
            parallel: res.parallel,
            report: Some(report.clone()),
        };
        let init = res.init.states(data.n(), part.num_agents());
        let t = Instant::now();
        let run = run_observed(init, &res.graph, &res.gains, &part, &data, opts, |_, _| {})?;
        let ms = t.elapsed().as_secs_f64() * 1e3;
        iterations = run.status.iterations().max(1);
        total.push(ms);
        per_iter.push(ms / iterations as f64);
    }
    let out = BenchmarkJson {
        repeats: res.benchmark_repeats,
        iterations,
        centralized_solve_ms: median(central),
        per_iteration_ms: median(per_iter),
        distributed_total_ms: median(total),
    };
    println!(
        "centralized {:.3} ms, distributed {:.4} ms/round, {:.1} ms total over {} rounds",
        out.centralized_solve_ms, out.per_iteration_ms, out.distributed_total_ms, iterations
    );
    json(&res.out.join("benchmark.json"), &out)
}

/// Frames as `frames/frame_NNNNN.csv` (grid rows) plus `frames.bin`:
/// little-endian u64 grid side, u64 frame count, then row-major f64 values.
pub fn gen(res: &Resolved) -> Result<(), CliError> {
    let scn = need_scenario(res, "gen")?;
    let count = res.frames.unwrap_or(scn.snapshots + 1);
    let frames = scn.frames(count)?;
    let g = scn.grid_side;
    for (i, f) in frames.iter().enumerate() {
        let path = res.out.join("frames").join(format!("frame_{i:05}.csv"));
        write_atomic(&path, |w| {
            for row in f.chunks(g) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            Ok(())
        })?;
    }
    write_atomic(&res.out.join("frames.bin"), |w| {
        w.write_all(&(g as u64).to_le_bytes())?;
        w.write_all(&(frames.len() as u64).to_le_bytes())?;
        for v in frames.iter().flatten() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    })?;
    println!(
        "wrote {} frames of {g}x{g} to {}",
        frames.len(),
        res.out.display()
    );
    Ok(())
}

/// `K* = Y·pinv(X)` from CSV files, written to `Kstar.csv`.
pub fn solve_central(res: &Resolved, x: Option<&Path>, y: Option<&Path>) -> Result<(), CliError> {
    let data = match (x, y) {
        (Some(x), Some(y)) => LiftedData::new(read_matrix(x)?, read_matrix(y)?)?,
        (None, None) => match &res.source {
            Source::Data { data, .. } => data.clone(),
            Source::Scenario(_) => problem(res)?.0,
        },
        _ => return Err(CliError::Config("give both --x and --y, or neither".into())),
    };
    let k = edmd::centralized_solve(&data, res.rank_tol)?;
    let path = res.out.join("Kstar.csv");
    write_atomic(&path, |w| write_matrix(w, &k.k))?;
    println!(
        "K* is {0}x{0}, residual {1:e}; wrote {2}",
        k.n(),
        edmd::residual_norm(&k, &data)?,
        path.display()
    );
    Ok(())
}
