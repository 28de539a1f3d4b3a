use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use twospeed::dp::{io as dpio, value_iteration, GridSpec, Solution, TerminationSpec};
use twospeed::fit::{distill, FitReport, PiecewiseLinearLaw};
use twospeed::model::{step, ActuatorParams, ControlInput, CostKind, Mode, State};
use twospeed::sim::{
    accumulated_cost, phase_field, simulate, simulate_batch, write_field_csv, write_trajectory_csv, PolicySource,
    SimOptions, Trajectory,
};
use twospeed::stability::{
    check_energy_rate, energy, verify_algebraic, verify_monotone, write_energy_csv, EnergyParams, StabilityVerdict,
};

use crate::config::{Config, SourceName};
use crate::error::CliError;
use crate::stats::{table_stats, TableStats};

/// Start state of the closed-loop experiment: at rest, 120 mm left of the target.
pub const EXPERIMENT_START: State<f64> = State { x: -0.120, v: 0.0 };

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn write_toml<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Other(format!("serialising {}: {e}", path.display())))?;
    write_with(path, |w| w.write_all(text.as_bytes()))
}

pub fn snapshot_path(dir: &Path, kind: CostKind) -> PathBuf {
    dir.join(format!("{kind}.hcdp"))
}

pub fn load_snapshot(path: &Path) -> Result<Solution<f64>, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    dpio::read_snapshot(BufReader::new(f)).map_err(|e| CliError::io(path, e))
}

pub fn load_law(path: &Path) -> Result<PiecewiseLinearLaw<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    PiecewiseLinearLaw::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Value iteration for one cost kind under the configured grid.
pub fn solve_kind(cfg: &Config, kind: CostKind) -> Result<Solution<f64>, CliError> {
    let grid = cfg.grid()?;
    eprintln!("solving {kind} on {}x{}x{} ...", grid.n_x, grid.n_v, grid.n_u1);
    let sol = value_iteration(&cfg.params(), &cfg.cost.weights(kind), &grid, &cfg.termination, &cfg.solver)?;
    eprintln!(
        "{kind}: converged after {} sweeps in {:.1} s",
        sol.report.iterations, sol.report.wall_time
    );
    Ok(sol)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub kind: String,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub grid: GridSpec<f64>,
    pub termination: TerminationSpec<f64>,
    pub stats: TableStats,
}

impl SolveSummary {
    pub fn new(sol: &Solution<f64>) -> Self {
        Self {
            kind: sol.kind.to_string(),
            iterations: sol.report.iterations,
            final_residual: sol.report.final_residual,
            converged: sol.report.converged,
            grid: sol.grid,
            termination: sol.termination,
            stats: table_stats(sol),
        }
    }
}

/// Writes `<kind>_table.csv`, `<kind>.hcdp` and `<kind>_report.toml`.
pub fn write_solution(dir: &Path, sol: &Solution<f64>) -> Result<(), CliError> {
    let kind = sol.kind;
    write_with(&dir.join(format!("{kind}_table.csv")), |w| dpio::write_csv(sol, w))?;
    write_with(&snapshot_path(dir, kind), |w| dpio::write_snapshot(sol, w))?;
    write_toml(&dir.join(format!("{kind}_report.toml")), &SolveSummary::new(sol))
}

pub fn cmd_solve(cfg: &Config, out: &Path) -> Result<Solution<f64>, CliError> {
    let sol = solve_kind(cfg, cfg.cost.kind())?;
    write_solution(out, &sol)?;
    Ok(sol)
}

/// Distils the law from a quadratic snapshot; writes `law.toml` and `fit_report.toml`.
pub fn cmd_fit(
    cfg: &Config,
    out: &Path,
    snapshot: Option<&Path>,
) -> Result<(PiecewiseLinearLaw<f64>, FitReport), CliError> {
    let path = snapshot.map(Path::to_path_buf).unwrap_or_else(|| snapshot_path(out, CostKind::Quadratic));
    let sol = load_snapshot(&path)?;
    if sol.kind != CostKind::Quadratic {
        eprintln!(
            "warning: {} holds a {} policy; the switched PD law is meant to summarise a quadratic-cost policy",
            path.display(),
            sol.kind
        );
    }
    let (law, report) = distill(&sol, cfg.threshold()).map_err(|e| CliError::Other(format!("fit: {e}")))?;
    let text = law.to_toml().map_err(|e| CliError::Other(e.to_string()))?;
    write_with(&out.join("law.toml"), |w| w.write_all(text.as_bytes()))?;
    write_toml(&out.join("fit_report.toml"), &report)?;
    eprintln!(
        "law: mode 1 kp {:.6} kd {:.6}, mode 2 kp {:.6} kd {:.6}",
        law.gains_1.kp, law.gains_1.kd, law.gains_2.kp, law.gains_2.kd
    );
    Ok((law, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub id: usize,
    pub x0: f64,
    pub v0: f64,
    pub completed: bool,
    pub segments_ok: bool,
    pub entries_ok: bool,
    pub worst_rise: f64,
    pub upward_jumps: usize,
    pub crossings: usize,
    pub final_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutcome {
    pub passed: bool,
    pub failures: Vec<String>,
    pub algebraic: StabilityVerdict,
    pub trajectories: usize,
    /// Lattice points dropped because braking alone cannot stop in bounds.
    pub skipped_starts: usize,
    pub monotone_runs: usize,
    pub worst_rise: f64,
    pub upward_jumps: usize,
    pub worst_final_ratio: f64,
    pub rate_samples: usize,
    pub rate_max_relative_error: f64,
    pub tolerance: f64,
    pub final_ratio_limit: f64,
    pub runs: Vec<RunSummary>,
}

/// Closed-loop options used for the energy analysis: the law is evaluated at
/// every integration stage.
pub fn verify_options(cfg: &Config) -> SimOptions<f64> {
    let mut o = SimOptions::new(cfg.verify.t_final).continuous();
    o.dt_control = cfg.simulation.dt_control;
    o.substeps = cfg.simulation.substeps;
    o
}

/// Whether full fast-mode braking brings the carriage to rest inside the
/// domain. Starts that fail this cannot be held by any controller.
pub fn can_stop(params: &ActuatorParams<f64>, start: State<f64>, dt: f64) -> bool {
    let brake = ControlInput::new(-params.u1_max * start.v.signum(), Mode::Low);
    let mut s = start;
    while s.v != 0.0 && s.v.signum() == start.v.signum() {
        match step(params, &s, &brake, dt) {
            Ok(n) if params.in_bounds(&n) => s = n,
            _ => return false,
        }
    }
    true
}

/// Algebraic check plus a batch of simulations from the configured lattice.
pub fn verify_law(cfg: &Config, law: &PiecewiseLinearLaw<f64>) -> (VerifyOutcome, Vec<Option<Trajectory<f64>>>) {
    let params = cfg.params();
    let v = &cfg.verify;
    let algebraic = verify_algebraic(&params, law);
    let ep = EnergyParams::new(&params, law);
    let lattice = v.starts();
    let dt = cfg.simulation.dt_control / cfg.simulation.substeps as f64;
    let starts: Vec<State<f64>> = lattice.iter().copied().filter(|s| can_stop(&params, *s, dt)).collect();
    let source = PolicySource::Law(*law);
    let results = simulate_batch(&params, &cfg.cost.weights(CostKind::Quadratic), &source, &starts, &verify_options(cfg));

    let mut failures: Vec<String> = algebraic.failures();
    let mut runs = Vec::with_capacity(starts.len());
    let mut trajs = Vec::with_capacity(starts.len());
    let (mut rate_samples, mut rate_err) = (0usize, 0.0f64);
    for (id, (start, res)) in starts.iter().zip(results).enumerate() {
        let norm0 = start.x.hypot(start.v);
        let mut run = RunSummary {
            id,
            x0: start.x,
            v0: start.v,
            completed: false,
            segments_ok: false,
            entries_ok: false,
            worst_rise: f64::NAN,
            upward_jumps: 0,
            crossings: 0,
            final_ratio: f64::NAN,
            error: None,
        };
        match res {
            Err(e) => {
                run.error = Some(e.to_string());
                trajs.push(None);
            }
            Ok(traj) => {
                run.completed = true;
                let last = traj.last();
                run.final_ratio = if norm0 > 0.0 { last.x.hypot(last.v) / norm0 } else { 0.0 };
                match verify_monotone(&traj, &ep, v.tolerance) {
                    Ok(m) => {
                        run.segments_ok = m.segments_ok;
                        run.entries_ok = m.entries_ok;
                        run.worst_rise = m.worst_rise();
                        run.upward_jumps = m.upward_jumps;
                        run.crossings = m.crossings.len();
                    }
                    Err(e) => run.error = Some(e.to_string()),
                }
                if let Ok(r) = check_energy_rate(&traj, &ep, params.u1_max) {
                    rate_samples += r.samples;
                    rate_err = rate_err.max(r.max_relative_error);
                }
                trajs.push(Some(traj));
            }
        }
        runs.push(run);
    }
    let ok_run = |r: &RunSummary| {
        r.completed && r.error.is_none() && r.segments_ok && r.entries_ok && r.final_ratio < v.final_ratio
    };
    let monotone_runs = runs.iter().filter(|r| r.completed && r.segments_ok && r.entries_ok).count();
    for r in runs.iter().filter(|r| !ok_run(r)) {
        failures.push(match &r.error {
            Some(e) => format!("run {} from ({}, {}): {e}", r.id, r.x0, r.v0),
            None => format!(
                "run {} from ({}, {}): segments_ok {} entries_ok {} final_ratio {:.3e}",
                r.id, r.x0, r.v0, r.segments_ok, r.entries_ok, r.final_ratio
            ),
        });
    }
    if rate_samples > 0 && rate_err > v.tolerance {
        failures.push(format!("energy rate mismatch {rate_err:.3e} exceeds {}", v.tolerance));
    }
    let fold_max = |it: &mut dyn Iterator<Item = f64>| it.filter(|x| x.is_finite()).fold(0.0f64, f64::max);
    let outcome = VerifyOutcome {
        passed: failures.is_empty(),
        failures,
        algebraic,
        trajectories: runs.len(),
        skipped_starts: lattice.len() - starts.len(),
        monotone_runs,
        worst_rise: fold_max(&mut runs.iter().map(|r| r.worst_rise)),
        upward_jumps: runs.iter().map(|r| r.upward_jumps).sum(),
        worst_final_ratio: fold_max(&mut runs.iter().map(|r| r.final_ratio)),
        rate_samples,
        rate_max_relative_error: rate_err,
        tolerance: v.tolerance,
        final_ratio_limit: v.final_ratio,
        runs,
    };
    (outcome, trajs)
}

/// Writes `verify_report.toml` and `verify_energy.csv` (energies at control
/// instants, all runs). A failed verdict is returned as `Ok`; the caller
/// decides the exit status.
pub fn cmd_verify(cfg: &Config, out: &Path, law_path: Option<&Path>) -> Result<VerifyOutcome, CliError> {
    let path = law_path.map(Path::to_path_buf).unwrap_or_else(|| out.join("law.toml"));
    let law = load_law(&path)?;
    let (outcome, trajs) = verify_law(cfg, &law);
    let ep = EnergyParams::new(&cfg.params(), &law);
    write_toml(&out.join("verify_report.toml"), &outcome)?;
    write_with(&out.join("verify_energy.csv"), |w| {
        writeln!(w, "run,t,x,v,mode,E_active,E_1,E_2")?;
        for (id, traj) in trajs.iter().enumerate() {
            let Some(traj) = traj else { continue };
            for r in traj.records.iter().filter(|r| r.control_update) {
                let s = r.state();
                writeln!(
                    w,
                    "{id},{},{},{},{},{},{},{}",
                    r.t,
                    r.x,
                    r.v,
                    r.u2.index(),
                    r.energy,
                    energy(&ep, Mode::Low, &s),
                    energy(&ep, Mode::High, &s)
                )?;
            }
        }
        Ok(())
    })?;
    eprintln!(
        "verify: {} of {} runs monotone, worst rise {:.2e}, worst final ratio {:.2e}, {}",
        outcome.monotone_runs,
        outcome.trajectories,
        outcome.worst_rise,
        outcome.worst_final_ratio,
        if outcome.passed { "PASSED" } else { "FAILED" }
    );
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub name: String,
    pub source: String,
    pub x0: f64,
    pub v0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settled_at: Option<f64>,
    pub accumulated_cost: f64,
    pub x_final: f64,
    pub v_final: f64,
    /// Mean |u1| at control instants with |v| at or above the gate, and below it.
    pub mean_abs_u1_fast: f64,
    pub mean_abs_u1_slow: f64,
}

/// Options for scenario runs: sampled controller, stop once settled in the target.
pub fn scenario_options(cfg: &Config) -> SimOptions<f64> {
    let s = &cfg.simulation;
    let mut o = SimOptions::new(s.t_final).with_target(cfg.termination);
    o.dt_control = s.dt_control;
    o.substeps = s.substeps;
    o
}

pub fn summarize(name: &str, traj: &Trajectory<f64>, gate: f64) -> ScenarioSummary {
    let first = &traj.records[0];
    let last = traj.last();
    let end = traj.settled_at.unwrap_or(f64::INFINITY);
    let (mut fast, mut nf, mut slow, mut ns) = (0.0, 0usize, 0.0, 0usize);
    for r in traj.records.iter().filter(|r| r.control_update && r.t <= end) {
        if r.v.abs() >= gate {
            fast += r.u1.abs();
            nf += 1;
        } else {
            slow += r.u1.abs();
            ns += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    ScenarioSummary {
        name: name.to_string(),
        source: traj.source.clone(),
        x0: first.x,
        v0: first.v,
        settled_at: traj.settled_at,
        accumulated_cost: accumulated_cost(traj),
        x_final: last.x,
        v_final: last.v,
        mean_abs_u1_fast: mean(fast, nf),
        mean_abs_u1_slow: mean(slow, ns),
    }
}

#[derive(Serialize)]
struct ScenarioFile<'a> {
    scenario: &'a [ScenarioSummary],
}

/// Runs every configured scenario; writes `traj_<name>.csv`, one arrow field
/// per feedback source used and `simulate_summary.toml`.
pub fn cmd_simulate(
    cfg: &Config,
    out: &Path,
    snapshot: Option<&Path>,
    law_path: Option<&Path>,
) -> Result<Vec<ScenarioSummary>, CliError> {
    let scenarios = &cfg.simulation.scenarios;
    if scenarios.is_empty() {
        return Err(CliError::Config("simulation.scenarios is empty".into()));
    }
    let uses = |s: SourceName| scenarios.iter().any(|sc| sc.source == s);
    let law = if uses(SourceName::Law) {
        Some(load_law(&law_path.map(Path::to_path_buf).unwrap_or_else(|| out.join("law.toml")))?)
    } else {
        None
    };
    let table = if uses(SourceName::Tabular) {
        let p = snapshot.map(Path::to_path_buf).unwrap_or_else(|| snapshot_path(out, cfg.cost.kind()));
        Some(load_snapshot(&p)?)
    } else {
        None
    };
    let params = cfg.params();
    let weights = match &table {
        Some(t) => cfg.cost.weights(t.kind),
        None => cfg.cost.weights(cfg.cost.kind()),
    };
    let opts = scenario_options(cfg);
    let mut summaries = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let source = match sc.source {
            SourceName::Law => PolicySource::Law(law.expect("loaded above")),
            SourceName::Tabular => PolicySource::Tabular(table.as_ref().expect("loaded above")),
            SourceName::Constant => PolicySource::Constant(sc.constant_input()?),
        };
        let traj = simulate(&params, &weights, &source, sc.start(), &opts)
            .map_err(|e| CliError::Other(format!("scenario {}: {e}", sc.name)))?;
        write_with(&out.join(format!("traj_{}.csv", sc.name)), |w| write_trajectory_csv(&traj, w))?;
        summaries.push(summarize(&sc.name, &traj, params.v_gate));
    }
    let n = cfg.simulation.field_n;
    if let Some(l) = law {
        let field = phase_field(&params, &PolicySource::Law(l), n, n);
        write_with(&out.join("field_law.csv"), |w| write_field_csv(&field, w))?;
    }
    if let Some(t) = &table {
        let field = phase_field(&params, &PolicySource::Tabular(t), n, n);
        write_with(&out.join("field_tabular.csv"), |w| write_field_csv(&field, w))?;
    }
    write_toml(&out.join("simulate_summary.toml"), &ScenarioFile { scenario: &summaries })?;
    Ok(summaries)
}

/// Reuses `<out>/<kind>.hcdp` when it was solved on the configured grid and
/// target; solves and writes it otherwise.
pub fn snapshot_or_solve(cfg: &Config, out: &Path, kind: CostKind) -> Result<Solution<f64>, CliError> {
    let path = snapshot_path(out, kind);
    if path.exists() {
        if let Ok(sol) = load_snapshot(&path) {
            if sol.kind == kind && sol.grid == cfg.grid()? && sol.termination == cfg.termination {
                eprintln!("reusing {}", path.display());
                return Ok(sol);
            }
        }
    }
    let sol = solve_kind(cfg, kind)?;
    write_solution(out, &sol)?;
    Ok(sol)
}

fn write_map(path: &Path, sol: &Solution<f64>, column: &str) -> Result<(), CliError> {
    let g = &sol.grid;
    write_with(path, |w| {
        writeln!(w, "x,v,feasible,{column}")?;
        for j in 0..g.n_v {
            for i in 0..g.n_x {
                let s = g.state(i, j);
                let idx = g.index(i, j);
                let a = sol.policy.action(i, j);
                let feasible = u8::from(sol.value.feasible[idx]);
                match column {
                    "J" => writeln!(w, "{},{},{feasible},{}", s.x, s.v, sol.value.values[idx])?,
                    "u1" => writeln!(w, "{},{},{feasible},{}", s.x, s.v, a.u1)?,
                    _ => writeln!(w, "{},{},{feasible},{}", s.x, s.v, a.u2.index())?,
                }
            }
        }
        Ok(())
    })
}

/// Plot-ready data for the cost-to-go, torque, mode, law and trajectory figures.
pub fn cmd_export_figures(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let params = cfg.params();
    let opts = scenario_options(cfg);
    let n = cfg.simulation.field_n;
    let mut quadratic = None;
    for kind in CostKind::ALL {
        let sol = snapshot_or_solve(cfg, out, kind)?;
        write_map(&out.join(format!("fig5_{kind}_cost_to_go.csv")), &sol, "J")?;
        write_map(&out.join(format!("fig6_{kind}_torque.csv")), &sol, "u1")?;
        write_map(&out.join(format!("fig7_{kind}_mode.csv")), &sol, "u2")?;
        let source = PolicySource::Tabular(&sol);
        let field = phase_field(&params, &source, n, n);
        write_with(&out.join(format!("fig8_{kind}_field.csv")), |w| write_field_csv(&field, w))?;
        let traj = simulate(&params, &cfg.cost.weights(kind), &source, EXPERIMENT_START, &opts)
            .map_err(|e| CliError::Other(format!("{kind} trajectory: {e}")))?;
        write_with(&out.join(format!("fig9_{kind}_trajectory.csv")), |w| write_trajectory_csv(&traj, w))?;
        if kind == CostKind::Quadratic {
            quadratic = Some(sol);
        }
    }
    let sol = quadratic.expect("quadratic is one of the kinds");
    let (law, report) = distill(&sol, cfg.threshold()).map_err(|e| CliError::Other(format!("fit: {e}")))?;
    let text = law.to_toml().map_err(|e| CliError::Other(e.to_string()))?;
    write_with(&out.join("fig8_law.toml"), |w| w.write_all(text.as_bytes()))?;
    write_toml(&out.join("fig8_fit_report.toml"), &report)?;
    let g = &sol.grid;
    write_with(&out.join("fig8_law_torque.csv"), |w| {
        writeln!(w, "x,v,u1,u2")?;
        for j in 0..g.n_v {
            for i in 0..g.n_x {
                let s = g.state(i, j);
                let a = law.evaluate(&s);
                writeln!(w, "{},{},{},{}", s.x, s.v, a.u1, a.u2.index())?;
            }
        }
        Ok(())
    })?;
    let source = PolicySource::Law(law);
    let field = phase_field(&params, &source, n, n);
    write_with(&out.join("fig8_law_field.csv"), |w| write_field_csv(&field, w))?;
    let weights = cfg.cost.weights(CostKind::Quadratic);
    let traj = simulate(&params, &weights, &source, EXPERIMENT_START, &opts)
        .map_err(|e| CliError::Other(format!("law trajectory: {e}")))?;
    write_with(&out.join("fig9_law_trajectory.csv"), |w| write_trajectory_csv(&traj, w))?;
    let ep = EnergyParams::new(&params, &law);
    write_with(&out.join("fig9_law_energy.csv"), |w| write_energy_csv(&traj, &ep, w))?;
    eprintln!("figures written to {}", out.display());
    Ok(())
}
