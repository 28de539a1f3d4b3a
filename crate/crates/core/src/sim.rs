//! Closed-loop simulation.
//!
//! The controller is sampled every `dt_control` and held in between (zero
//! order hold), while the plant is integrated with `substeps` RK4 steps per
//! control period. Every substep is recorded. With `continuous` set, the
//! controller is instead evaluated at every RK4 stage, which is what the
//! energy analysis of a PD law assumes.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::dp::{SolveError, Solution, TerminationSpec};
use crate::fit::PiecewiseLinearLaw;
use crate::model::{stage_cost, ActuatorParams, ControlInput, CostWeights, Mode, ModeDynamics, ModelError, State};
use crate::scalar::Scalar;
use crate::stability::{energy, EnergyParams};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("start state ({x}, {v}) is outside the state bounds")]
    StartOutOfBounds { x: f64, v: f64 },
    #[error("trajectory left the state bounds at t = {t} s, state ({x}, {v})")]
    LeftBounds { t: f64, x: f64, v: f64 },
    #[error("policy lookup failed at t = {t} s: {source}")]
    Lookup { t: f64, source: SolveError },
    #[error("invalid simulation options: {0}")]
    InvalidOptions(String),
}

/// Where control actions come from.
#[derive(Debug, Clone, Copy)]
pub enum PolicySource<'a, T> {
    Tabular(&'a Solution<T>),
    Law(PiecewiseLinearLaw<T>),
    Constant(ControlInput<T>),
}

impl<T: Scalar> PolicySource<'_, T> {
    /// Action at `state`, with the speed gate and torque limit enforced.
    pub fn act(&self, params: &ActuatorParams<T>, state: &State<T>) -> Result<ControlInput<T>, SolveError> {
        let mut a = match self {
            PolicySource::Tabular(sol) => sol.lookup(state)?,
            PolicySource::Law(law) => law.evaluate(state),
            PolicySource::Constant(c) => *c,
        };
        if !params.mode_allowed(a.u2, state.v) {
            a.u2 = Mode::Low;
        }
        a.u1 = a.u1.max(-params.u1_max).min(params.u1_max);
        Ok(a)
    }

    pub fn law(&self) -> Option<&PiecewiseLinearLaw<T>> {
        match self {
            PolicySource::Law(l) => Some(l),
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            PolicySource::Tabular(sol) => format!(
                "tabular {} policy {}x{}x{}",
                sol.kind, sol.grid.n_x, sol.grid.n_v, sol.grid.n_u1
            ),
            PolicySource::Law(l) => format!(
                "switched PD law: threshold {} m/s, mode 1 kp {} kd {}, mode 2 kp {} kd {}",
                l.threshold, l.gains_1.kp, l.gains_1.kd, l.gains_2.kp, l.gains_2.kd
            ),
            PolicySource::Constant(c) => format!("constant u1 {} mode {}", c.u1, c.u2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions<T> {
    pub t_final: T,
    pub dt_control: T,
    /// Integration steps per control period.
    pub substeps: usize,
    /// Evaluate the controller at every integration stage instead of holding it.
    pub continuous: bool,
    /// Stop once the state has been inside this box for `settle_steps`
    /// consecutive control instants.
    pub target: Option<TerminationSpec<T>>,
    pub settle_steps: usize,
}

impl<T: Scalar> SimOptions<T> {
    /// 0.02 s hold, 10 substeps, no early stop.
    pub fn new(t_final: T) -> Self {
        Self {
            t_final,
            dt_control: T::lit(0.02),
            substeps: 10,
            continuous: false,
            target: None,
            settle_steps: 5,
        }
    }

    pub fn with_target(mut self, target: TerminationSpec<T>) -> Self {
        self.target = Some(target);
        self
    }

    pub fn continuous(mut self) -> Self {
        self.continuous = true;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidOptions(m.to_string()));
        if !(self.t_final > T::zero() && self.t_final.is_finite()) {
            return bad("t_final must be positive");
        }
        if !(self.dt_control > T::zero() && self.dt_control.is_finite()) {
            return bad("dt_control must be positive");
        }
        if self.substeps == 0 {
            return bad("substeps must be at least 1");
        }
        if self.settle_steps == 0 {
            return bad("settle_steps must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record<T> {
    pub t: T,
    pub x: T,
    pub v: T,
    pub u1: T,
    pub u2: Mode,
    pub stage_cost: T,
    /// Energy of the active mode under the law; NaN for other sources.
    pub energy: T,
    /// A new control action was computed at this instant.
    pub control_update: bool,
    pub in_bounds: bool,
    /// The mode was allowed at the speed where the action was decided.
    pub gate_ok: bool,
}

impl<T: Scalar> Record<T> {
    pub fn state(&self) -> State<T> {
        State::new(self.x, self.v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub records: Vec<Record<T>>,
    pub params: ActuatorParams<T>,
    pub weights: CostWeights<T>,
    pub source: String,
    pub dt_control: T,
    /// Spacing of the records.
    pub dt: T,
    /// Start of the run of control instants spent in the target box.
    pub settled_at: Option<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn last(&self) -> &Record<T> {
        self.records.last().expect("trajectories hold at least the start record")
    }
}

struct Plant<T> {
    dynamics: [ModeDynamics<T>; 2],
}

impl<T: Scalar> Plant<T> {
    fn new(params: &ActuatorParams<T>) -> Self {
        Self { dynamics: [ModeDynamics::new(params, Mode::Low), ModeDynamics::new(params, Mode::High)] }
    }

    fn accel(&self, v: T, a: &ControlInput<T>) -> T {
        self.dynamics[(a.u2.index() - 1) as usize].accel(v, a.u1)
    }

    fn rk4(
        &self,
        s: State<T>,
        h: T,
        mut control: impl FnMut(&State<T>) -> Result<ControlInput<T>, SolveError>,
    ) -> Result<State<T>, SolveError> {
        let half = h * T::half();
        let k1 = (s.v, self.accel(s.v, &control(&s)?));
        let s2 = State::new(s.x + half * k1.0, s.v + half * k1.1);
        let k2 = (s2.v, self.accel(s2.v, &control(&s2)?));
        let s3 = State::new(s.x + half * k2.0, s.v + half * k2.1);
        let k3 = (s3.v, self.accel(s3.v, &control(&s3)?));
        let s4 = State::new(s.x + h * k3.0, s.v + h * k3.1);
        let k4 = (s4.v, self.accel(s4.v, &control(&s4)?));
        let two = T::two();
        let sixth = h / T::lit(6.0);
        Ok(State::new(
            s.x + sixth * (k1.0 + two * k2.0 + two * k3.0 + k4.0),
            s.v + sixth * (k1.1 + two * k2.1 + two * k3.1 + k4.1),
        ))
    }
}

/// Runs `source` in closed loop from `start`.
pub fn simulate<T: Scalar>(
    params: &ActuatorParams<T>,
    weights: &CostWeights<T>,
    source: &PolicySource<'_, T>,
    start: State<T>,
    opts: &SimOptions<T>,
) -> Result<Trajectory<T>, SimError> {
    params.validate()?;
    opts.validate()?;
    if !(start.is_finite() && params.in_bounds(&start)) {
        return Err(SimError::StartOutOfBounds { x: start.x.as_f64(), v: start.v.as_f64() });
    }
    let plant = Plant::new(params);
    let ep = source.law().map(|l| EnergyParams::new(params, l));
    let h = opts.dt_control / T::from_usize_lossy(opts.substeps);
    let n_control = (opts.t_final / opts.dt_control).ceil().to_usize().unwrap_or(0).max(1);
    let lookup_err = |k: usize, e: SolveError| SimError::Lookup { t: (T::from_usize_lossy(k) * h).as_f64(), source: e };

    let record = |k: usize, s: State<T>, a: ControlInput<T>, update: bool, decided_v: T| Record {
        t: T::from_usize_lossy(k) * h,
        x: s.x,
        v: s.v,
        u1: a.u1,
        u2: a.u2,
        stage_cost: stage_cost(weights, &s, &a),
        energy: ep.as_ref().map_or(T::nan(), |ep| energy(ep, a.u2, &s)),
        control_update: update,
        in_bounds: params.in_bounds(&s),
        gate_ok: params.mode_allowed(a.u2, decided_v),
    };

    let mut records = Vec::with_capacity(n_control * opts.substeps + 1);
    let mut state = start;
    let mut held = source.act(params, &state).map_err(|e| lookup_err(0, e))?;
    let mut settled_at = None;
    let mut run = 0usize;
    let mut k = 0usize;
    for c in 0..=n_control {
        if c > 0 {
            held = source.act(params, &state).map_err(|e| lookup_err(k, e))?;
        }
        records.push(record(k, state, held, true, state.v));
        let decided_v = state.v;
        if let Some(target) = &opts.target {
            if target.in_target(&state) {
                if run == 0 {
                    settled_at = Some(T::from_usize_lossy(k) * h);
                }
                run += 1;
                if run >= opts.settle_steps {
                    break;
                }
            } else {
                run = 0;
                settled_at = None;
            }
        }
        if c == n_control {
            break;
        }
        for sub in 0..opts.substeps {
            state = if opts.continuous {
                plant.rk4(state, h, |s| source.act(params, s))
            } else {
                plant.rk4(state, h, |_| Ok(held))
            }
            .map_err(|e| lookup_err(k, e))?;
            k += 1;
            if !(state.is_finite() && params.in_bounds(&state)) {
                return Err(SimError::LeftBounds {
                    t: (T::from_usize_lossy(k) * h).as_f64(),
                    x: state.x.as_f64(),
                    v: state.v.as_f64(),
                });
            }
            if sub + 1 < opts.substeps {
                let (a, dv) = if opts.continuous {
                    (source.act(params, &state).map_err(|e| lookup_err(k, e))?, state.v)
                } else {
                    (held, decided_v)
                };
                records.push(record(k, state, a, false, dv));
            }
        }
    }
    if run < opts.settle_steps {
        settled_at = None;
    }
    Ok(Trajectory {
        records,
        params: *params,
        weights: *weights,
        source: source.describe(),
        dt_control: opts.dt_control,
        dt: h,
        settled_at,
    })
}

/// Runs one simulation per start state in parallel; results keep the input order.
pub fn simulate_batch<T: Scalar>(
    params: &ActuatorParams<T>,
    weights: &CostWeights<T>,
    source: &PolicySource<'_, T>,
    starts: &[State<T>],
    opts: &SimOptions<T>,
) -> Vec<Result<Trajectory<T>, SimError>> {
    starts.par_iter().map(|s| simulate(params, weights, source, *s, opts)).collect()
}

/// Trapezoidal integral of the stage cost, up to the settling instant if the
/// trajectory settled.
pub fn accumulated_cost<T: Scalar>(traj: &Trajectory<T>) -> T {
    let end = traj.settled_at.unwrap_or_else(|| traj.last().t);
    traj.records
        .windows(2)
        .take_while(|w| w[1].t <= end)
        .map(|w| (w[1].t - w[0].t) * (w[0].stage_cost + w[1].stage_cost) * T::half())
        .fold(T::zero(), |a, b| a + b)
}

pub const TRAJECTORY_HEADER: &str = "t,x,v,u1,u2,stage_cost,E_active,control_update,in_bounds,gate_ok";

pub fn write_trajectory_csv<T: Scalar, W: Write>(traj: &Trajectory<T>, mut out: W) -> io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in &traj.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.t.as_f64(),
            r.x.as_f64(),
            r.v.as_f64(),
            r.u1.as_f64(),
            r.u2.index(),
            r.stage_cost.as_f64(),
            r.energy.as_f64(),
            u8::from(r.control_update),
            u8::from(r.in_bounds),
            u8::from(r.gate_ok)
        )?;
    }
    Ok(())
}

/// One arrow of a phase-plane field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample<T> {
    pub x: T,
    pub v: T,
    pub dx: T,
    pub dv: T,
    pub u1: T,
    pub u2: Mode,
}

/// State derivative under `source` on an `n_x` × `n_v` lattice spanning the
/// state bounds. States where the source has no action are skipped.
pub fn phase_field<T: Scalar>(
    params: &ActuatorParams<T>,
    source: &PolicySource<'_, T>,
    n_x: usize,
    n_v: usize,
) -> Vec<FieldSample<T>> {
    let plant = Plant::new(params);
    let lerp = |lo: T, hi: T, k: usize, n: usize| {
        if n < 2 {
            (lo + hi) * T::half()
        } else {
            lo + (hi - lo) * T::from_usize_lossy(k) / T::from_usize_lossy(n - 1)
        }
    };
    let mut out = Vec::with_capacity(n_x * n_v);
    for j in 0..n_v {
        for i in 0..n_x {
            let s = State::new(lerp(params.x_min, params.x_max, i, n_x), lerp(params.v_min, params.v_max, j, n_v));
            if let Ok(a) = source.act(params, &s) {
                out.push(FieldSample { x: s.x, v: s.v, dx: s.v, dv: plant.accel(s.v, &a), u1: a.u1, u2: a.u2 });
            }
        }
    }
    out
}

pub const FIELD_HEADER: &str = "x,v,dx,dv,u1,u2";

pub fn write_field_csv<T: Scalar, W: Write>(field: &[FieldSample<T>], mut out: W) -> io::Result<()> {
    writeln!(out, "{FIELD_HEADER}")?;
    for f in field {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            f.x.as_f64(),
            f.v.as_f64(),
            f.dx.as_f64(),
            f.dv.as_f64(),
            f.u1.as_f64(),
            f.u2.index()
        )?;
    }
    Ok(())
}
