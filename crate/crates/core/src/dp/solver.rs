use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, TerminationSpec};
use super::SolveError;
use crate::model::{ActuatorParams, ControlInput, CostKind, CostWeights, Mode, ModeDynamics, State};
use crate::scalar::Scalar;

/// Cost-to-go over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable<T> {
    pub n_x: usize,
    pub n_v: usize,
    pub values: Vec<T>,
    /// False where every policy leaves the domain ("no solution").
    pub feasible: Vec<bool>,
    /// Cells inside the target box.
    pub terminal: Vec<bool>,
}

impl<T: Scalar> ValueTable<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[j * self.n_x + i]
    }

    pub fn is_feasible(&self, i: usize, j: usize) -> bool {
        self.feasible[j * self.n_x + i]
    }

    pub fn is_terminal(&self, i: usize, j: usize) -> bool {
        self.terminal[j * self.n_x + i]
    }
}

/// Optimal actions per cell. Entries on infeasible cells are the argmin of
/// the last sweep and carry no meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable<T> {
    pub n_x: usize,
    pub n_v: usize,
    pub u1_star: Vec<T>,
    pub u2_star: Vec<Mode>,
}

impl<T: Scalar> PolicyTable<T> {
    pub fn action(&self, i: usize, j: usize) -> ControlInput<T> {
        let k = j * self.n_x + i;
        ControlInput::new(self.u1_star[k], self.u2_star[k])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    /// Not written to any output file so that outputs stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
    /// Residual after each sweep.
    #[serde(skip)]
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct SolverOptions<T> {
    /// Stop when no cell changes by more than this fraction of its value
    /// within one sweep.
    pub tol: T,
    pub max_iter: usize,
    #[serde(default = "one")]
    pub discount: T,
}

fn one<T: Scalar>() -> T {
    T::one()
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-6), max_iter: 5000, discount: T::one() }
    }
}

impl<T: Scalar> SolverOptions<T> {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.tol > T::zero() && self.tol.is_finite()) {
            return Err(SolveError::InvalidOptions("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(SolveError::InvalidOptions("max_iter must be positive".into()));
        }
        if !(self.discount > T::zero() && self.discount <= T::one()) {
            return Err(SolveError::InvalidOptions("discount must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Output of [`value_iteration`].
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub grid: GridSpec<T>,
    pub termination: TerminationSpec<T>,
    pub kind: CostKind,
    pub value: ValueTable<T>,
    pub policy: PolicyTable<T>,
    pub report: SolveReport,
}

/// Result of a single-cell backup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backup<T> {
    pub value: T,
    pub action: ControlInput<T>,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy)]
enum NextRow<T> {
    Outside,
    Inside { k: usize, f: T, target: bool },
}

/// Outcome of one action from every cell of one velocity row. The dynamics do
/// not depend on position, so the successor of `(x_i, v_j)` is
/// `(x_i + dx, v')` for all `i`, and its fractional x index is `i + ox`.
#[derive(Debug, Clone, Copy)]
struct RowTransition<T> {
    action: u16,
    /// Input part of the stage cost times dt.
    cost: T,
    dx: T,
    ox_floor: isize,
    fx: T,
    next_v: NextRow<T>,
}

/// Precomputed transitions for every row, plus the constant pieces of the
/// backup. Shared read-only by all sweeps.
struct Backuper<T> {
    grid: GridSpec<T>,
    term: TerminationSpec<T>,
    weights: CostWeights<T>,
    discount: T,
    ladder: Vec<ControlInput<T>>,
    xs: Vec<T>,
    vs: Vec<T>,
    rows: Vec<Vec<RowTransition<T>>>,
}

impl<T: Scalar> Backuper<T> {
    fn new(
        params: &ActuatorParams<T>,
        weights: &CostWeights<T>,
        grid: &GridSpec<T>,
        term: &TerminationSpec<T>,
        discount: T,
    ) -> Self {
        let ladder = grid.action_ladder();
        let xa = grid.x_axis();
        let va = grid.v_axis();
        let xs: Vec<T> = xa.coord_iter().collect();
        let vs: Vec<T> = va.coord_iter().collect();
        let inv_dx = T::from_usize_lossy(grid.n_x - 1) / (grid.x_max - grid.x_min);
        let dyn_low = ModeDynamics::new(params, Mode::Low);
        let dyn_high = ModeDynamics::new(params, Mode::High);
        let rows = vs
            .iter()
            .map(|&v| {
                ladder
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| params.mode_allowed(a.u2, v))
                    .map(|(idx, a)| {
                        let d = if a.u2 == Mode::Low { &dyn_low } else { &dyn_high };
                        let (dx, dv) = d.rk4_increment(v, a.u1, grid.dt);
                        let v_next = v + dv;
                        let next_v = match va.locate(v_next) {
                            None => NextRow::Outside,
                            Some((k, f)) => NextRow::Inside {
                                k,
                                f,
                                target: v_next.abs() <= term.target_half_width_v,
                            },
                        };
                        let ox = dx * inv_dx;
                        let floor = ox.floor();
                        RowTransition {
                            action: idx as u16,
                            cost: weights.input_cost(a.u1) * grid.dt,
                            dx,
                            ox_floor: floor.to_isize().unwrap_or(isize::MIN / 2),
                            fx: ox - floor,
                            next_v,
                        }
                    })
                    .collect()
            })
            .collect();
        Self { grid: *grid, term: *term, weights: *weights, discount, ladder, xs, vs, rows }
    }

    #[inline]
    fn is_terminal(&self, i: usize, j: usize) -> bool {
        self.term.in_target(&State::new(self.xs[i], self.vs[j]))
    }

    #[inline]
    fn state_cost(&self, i: usize, j: usize) -> T {
        self.weights.state_cost(&State::new(self.xs[i], self.vs[j])) * self.grid.dt
    }

    /// Stage cost of the input plus the discounted value of the successor.
    #[inline]
    fn candidate(&self, tr: &RowTransition<T>, i: usize, values: &[T]) -> T {
        let n = self.grid.n_x;
        let oob = tr.cost + self.discount * self.term.out_of_bound_cost;
        let (kv, fv, target_v) = match tr.next_v {
            NextRow::Outside => return oob,
            NextRow::Inside { k, f, target } => (k, f, target),
        };
        let ix = i as isize + tr.ox_floor;
        let last = (n - 1) as isize;
        if ix < 0 || ix > last || (ix == last && tr.fx > T::zero()) {
            return oob;
        }
        if target_v && (self.xs[i] + tr.dx).abs() <= self.term.target_half_width_x {
            return tr.cost + self.discount * self.term.target_cost;
        }
        let (kx, fx) = if ix == last { (n - 2, T::one()) } else { (ix as usize, tr.fx) };
        let r0 = kv * n + kx;
        let r1 = r0 + n;
        let one = T::one();
        let lo = values[r0] * (one - fx) + values[r0 + 1] * fx;
        let hi = values[r1] * (one - fx) + values[r1 + 1] * fx;
        tr.cost + self.discount * (lo * (one - fv) + hi * fv)
    }

    fn backup_cell(&self, i: usize, j: usize, values: &[T]) -> (T, u16) {
        let mut best = T::infinity();
        let mut arg = 0u16;
        for tr in &self.rows[j] {
            let c = self.candidate(tr, i, values);
            if c < best {
                best = c;
                arg = tr.action;
            }
        }
        let value = if self.is_terminal(i, j) { self.term.target_cost } else { self.state_cost(i, j) + best };
        (value, arg)
    }

    /// One synchronous sweep over row `j`. Same arithmetic as `backup_cell`.
    fn sweep_row(&self, j: usize, values: &[T], out: &mut [T], args: &mut [u16], best: &mut [T]) {
        best.fill(T::infinity());
        for tr in &self.rows[j] {
            for i in 0..self.grid.n_x {
                let c = self.candidate(tr, i, values);
                if c < best[i] {
                    best[i] = c;
                    args[i] = tr.action;
                }
            }
        }
        for i in 0..self.grid.n_x {
            out[i] = if self.is_terminal(i, j) { self.term.target_cost } else { self.state_cost(i, j) + best[i] };
        }
    }

    fn initial_values(&self) -> Vec<T> {
        let mut v = vec![self.term.out_of_bound_cost; self.grid.len()];
        for j in 0..self.grid.n_v {
            for i in 0..self.grid.n_x {
                if self.is_terminal(i, j) {
                    v[self.grid.index(i, j)] = self.term.target_cost;
                }
            }
        }
        v
    }
}

fn validate_problem<T: Scalar>(
    params: &ActuatorParams<T>,
    weights: &CostWeights<T>,
    grid: &GridSpec<T>,
    term: &TerminationSpec<T>,
) -> Result<(), SolveError> {
    params.validate()?;
    weights.validate()?;
    grid.validate()?;
    grid.check_params(params)?;
    term.validate(grid)
}

/// One Bellman backup of cell `(i, j)` against `value`.
///
/// Candidate actions are scored by input cost times `dt` plus the bilinear
/// interpolation of `value` at the successor state; successors outside the
/// domain score the exit cost and successors inside the target box score the
/// target cost. Cells inside the target box are absorbing and keep value
/// `target_cost`, but their best action is still reported.
pub fn bellman_backup<T: Scalar>(
    value: &ValueTable<T>,
    (i, j): (usize, usize),
    params: &ActuatorParams<T>,
    weights: &CostWeights<T>,
    grid: &GridSpec<T>,
    term: &TerminationSpec<T>,
) -> Result<Backup<T>, SolveError> {
    validate_problem(params, weights, grid, term)?;
    if value.n_x != grid.n_x || value.n_v != grid.n_v || i >= grid.n_x || j >= grid.n_v {
        return Err(SolveError::InvalidGrid("cell or table does not match the grid".into()));
    }
    let b = Backuper::new(params, weights, grid, term, T::one());
    let (v, arg) = b.backup_cell(i, j, &value.values);
    Ok(Backup { value: v, action: b.ladder[arg as usize], terminal: b.is_terminal(i, j) })
}

/// Runs [`iterate`] and turns a run that hit `max_iter` into
/// [`SolveError::NotConverged`].
pub fn value_iteration<T: Scalar>(
    params: &ActuatorParams<T>,
    weights: &CostWeights<T>,
    grid: &GridSpec<T>,
    term: &TerminationSpec<T>,
    options: &SolverOptions<T>,
) -> Result<Solution<T>, SolveError> {
    let solution = iterate(params, weights, grid, term, options)?;
    if solution.report.converged {
        Ok(solution)
    } else {
        Err(SolveError::NotConverged {
            iterations: solution.report.iterations,
            residual: solution.report.final_residual,
        })
    }
}

/// Undiscounted (by default) infinite-horizon value iteration with Jacobi
/// sweeps. Stops after `max_iter` sweeps without failing; check
/// `report.converged`. Non-terminal cells start at the exit cost, so
/// zero-cost cycles cannot pin a cell below its true cost-to-go.
///
/// Each sweep is a data-parallel map over velocity rows against a read-only
/// copy of the previous table; results do not depend on the thread count.
pub fn iterate<T: Scalar>(
    params: &ActuatorParams<T>,
    weights: &CostWeights<T>,
    grid: &GridSpec<T>,
    term: &TerminationSpec<T>,
    options: &SolverOptions<T>,
) -> Result<Solution<T>, SolveError> {
    validate_problem(params, weights, grid, term)?;
    options.validate()?;
    let start = Instant::now();
    let b = Backuper::new(params, weights, grid, term, options.discount);
    let n = grid.n_x;
    let level = term.infeasible_level();
    let tol = options.tol.as_f64();

    let mut current = b.initial_values();
    let mut next = current.clone();
    let mut args = vec![0u16; grid.len()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut residual = f64::INFINITY;

    for _ in 0..options.max_iter {
        let stats: Vec<f64> = next
            .par_chunks_mut(n)
            .zip(args.par_chunks_mut(n))
            .enumerate()
            .map_init(
                || vec![T::zero(); n],
                |best, (j, (out, arg))| {
                    b.sweep_row(j, &current, out, arg, best);
                    let old = &current[j * n..(j + 1) * n];
                    out.iter().zip(old).fold(0.0f64, |acc, (new, prev)| {
                        let change = (*new - *prev).abs().as_f64();
                        let scale = new.abs().max(prev.abs()).as_f64();
                        if change == 0.0 {
                            acc
                        } else {
                            acc.max(change / scale)
                        }
                    })
                },
            )
            .collect();
        residual = stats.iter().copied().fold(0.0, f64::max);
        history.push(residual);
        std::mem::swap(&mut current, &mut next);
        if residual < tol {
            converged = true;
            break;
        }
    }

    let terminal: Vec<bool> = (0..grid.len())
        .map(|idx| {
            let (i, j) = grid.cell(idx);
            b.is_terminal(i, j)
        })
        .collect();
    let feasible = current.iter().map(|v| *v < level).collect();
    let u1_star = args.iter().map(|&a| b.ladder[a as usize].u1).collect();
    let u2_star = args.iter().map(|&a| b.ladder[a as usize].u2).collect();
    let report = SolveReport {
        iterations: history.len(),
        final_residual: residual,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        history,
    };
    Ok(Solution {
        grid: *grid,
        termination: *term,
        kind: weights.kind,
        value: ValueTable { n_x: grid.n_x, n_v: grid.n_v, values: current, feasible, terminal },
        policy: PolicyTable { n_x: grid.n_x, n_v: grid.n_v, u1_star, u2_star },
        report,
    })
}

/// Evaluates a tabular policy at an arbitrary state.
///
/// The mode comes from the nearest node. The torque is the bilinear blend of
/// the surrounding feasible nodes that use that mode, falling back to the
/// closest feasible node with that mode when none of the four does. The
/// output is clamped to the torque bound and mode 1 is forced above the gate.
pub fn policy_lookup<T: Scalar>(
    policy: &PolicyTable<T>,
    value: &ValueTable<T>,
    grid: &GridSpec<T>,
    state: &State<T>,
) -> Result<ControlInput<T>, SolveError> {
    let xa = grid.x_axis();
    let va = grid.v_axis();
    let (Some((kx, fx)), Some((kv, fv))) = (xa.locate(state.x), va.locate(state.v)) else {
        return Err(SolveError::OutOfDomain { x: state.x.as_f64(), v: state.v.as_f64() });
    };
    let (ni, nj) = (xa.nearest(state.x), va.nearest(state.v));
    if !value.is_feasible(ni, nj) {
        return Err(SolveError::Infeasible { x: state.x.as_f64(), v: state.v.as_f64() });
    }
    let mut mode = policy.u2_star[grid.index(ni, nj)];
    if state.v.abs() > grid.v_gate {
        mode = Mode::Low;
    }

    let one = T::one();
    let corners = [
        (kx, kv, (one - fx) * (one - fv)),
        (kx + 1, kv, fx * (one - fv)),
        (kx, kv + 1, (one - fx) * fv),
        (kx + 1, kv + 1, fx * fv),
    ];
    let mut weight = T::zero();
    let mut acc = T::zero();
    for (i, j, w) in corners {
        let idx = grid.index(i, j);
        if value.feasible[idx] && policy.u2_star[idx] == mode && w > T::zero() {
            weight = weight + w;
            acc = acc + w * policy.u1_star[idx];
        }
    }
    let u1 = if weight > T::zero() {
        acc / weight
    } else {
        nearest_same_mode(policy, value, grid, ni, nj, mode).unwrap_or(policy.u1_star[grid.index(ni, nj)])
    };
    let u1 = u1.max(-grid.u1_max).min(grid.u1_max);
    Ok(ControlInput::new(u1, mode))
}

/// Torque of the closest (Chebyshev ring) feasible node using `mode`.
fn nearest_same_mode<T: Scalar>(
    policy: &PolicyTable<T>,
    value: &ValueTable<T>,
    grid: &GridSpec<T>,
    ci: usize,
    cj: usize,
    mode: Mode,
) -> Option<T> {
    let max_r = grid.n_x.max(grid.n_v);
    for r in 1..max_r {
        let mut best: Option<(usize, T)> = None;
        let (i0, i1) = (ci.saturating_sub(r), (ci + r).min(grid.n_x - 1));
        let (j0, j1) = (cj.saturating_sub(r), (cj + r).min(grid.n_v - 1));
        for j in j0..=j1 {
            for i in i0..=i1 {
                if i.abs_diff(ci).max(j.abs_diff(cj)) != r {
                    continue;
                }
                let idx = grid.index(i, j);
                if value.feasible[idx] && policy.u2_star[idx] == mode {
                    let d2 = i.abs_diff(ci).pow(2) + j.abs_diff(cj).pow(2);
                    if best.is_none_or(|(bd, _)| d2 < bd) {
                        best = Some((d2, policy.u1_star[idx]));
                    }
                }
            }
        }
        if let Some((_, u)) = best {
            return Some(u);
        }
    }
    None
}

impl<T: Scalar> Solution<T> {
    pub fn lookup(&self, state: &State<T>) -> Result<ControlInput<T>, SolveError> {
        policy_lookup(&self.policy, &self.value, &self.grid, state)
    }

    /// Indices of feasible cells outside the target box.
    pub fn decision_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.grid.len()).filter_map(move |idx| {
            (self.value.feasible[idx] && !self.value.terminal[idx]).then(|| self.grid.cell(idx))
        })
    }
}
