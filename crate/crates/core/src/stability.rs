//! Energy-based stability analysis of a switched PD law.
//!
//! Under `u1 = -(kp x + kd v)` each mode is a damped mass-spring with energy
//! `E_i = ½ m_r,i v² + ½ (R_i/L_o) kp_i x²`, decaying at rate
//! `-(b_r,i + (R_i/L_o) kd_i) v²`. Energy may jump at a mode switch, but on the
//! switching surface `|v| = s` the two energies are related by an increasing
//! affine map, so the energy at successive entries into either zone can only
//! decrease. The argument only covers inertial loads with linear damping.
//! Torque saturation is outside it too: a saturated law is weaker than the
//! virtual spring it stands for.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::fit::PiecewiseLinearLaw;
use crate::model::{reflected_params, ActuatorParams, Mode, State};
use crate::scalar::Scalar;
use crate::sim::Trajectory;

pub const LOAD_ASSUMPTION: &str = "inertial load with linear viscous damping";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("energy {e1} J is below the kinetic floor {floor} J at the switching speed")]
    BelowKineticFloor { e1: f64, floor: f64 },
    #[error("trajectory has fewer than two records")]
    TooShort,
    #[error("trajectory has no energy annotation (not produced by a law source)")]
    MissingEnergy,
}

/// Closed-loop constants of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeEnergy<T> {
    /// Reflected mass `m_r,i` (kg).
    pub mass: T,
    /// `(R_i/L_o) kp_i` (N/m).
    pub stiffness: T,
    /// `b_r,i + (R_i/L_o) kd_i` (N·s/m).
    pub dissipation: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyParams<T> {
    pub mode_1: ModeEnergy<T>,
    pub mode_2: ModeEnergy<T>,
    /// Speed of the switching surface (m/s).
    pub switching_speed: T,
}

impl<T: Scalar> EnergyParams<T> {
    pub fn new(params: &ActuatorParams<T>, law: &PiecewiseLinearLaw<T>) -> Self {
        let mode = |m: Mode| {
            let (mass, damping) = reflected_params(params, m);
            let n = params.force_gain(m);
            let g = law.gains(m);
            ModeEnergy { mass, stiffness: n * g.kp, dissipation: damping + n * g.kd }
        };
        Self {
            mode_1: mode(Mode::Low),
            mode_2: mode(Mode::High),
            switching_speed: law.threshold,
        }
    }

    pub fn mode(&self, mode: Mode) -> &ModeEnergy<T> {
        match mode {
            Mode::Low => &self.mode_1,
            Mode::High => &self.mode_2,
        }
    }

    /// Ratio of the virtual spring stiffnesses, `R_2 kp_2 / (R_1 kp_1)`.
    pub fn rho(&self) -> T {
        self.mode_2.stiffness / self.mode_1.stiffness
    }
}

pub fn energy<T: Scalar>(ep: &EnergyParams<T>, mode: Mode, state: &State<T>) -> T {
    let m = ep.mode(mode);
    T::half() * (m.mass * state.v * state.v + m.stiffness * state.x * state.x)
}

/// Time derivative of the active energy for an unsaturated law.
pub fn energy_rate<T: Scalar>(ep: &EnergyParams<T>, mode: Mode, v: T) -> T {
    -ep.mode(mode).dissipation * v * v
}

/// Mode-2 energy at the switching-surface point whose mode-1 energy is `e1`.
pub fn crossing_map<T: Scalar>(ep: &EnergyParams<T>, e1: T) -> Result<T, StabilityError> {
    let s = ep.switching_speed;
    let floor = T::half() * ep.mode_1.mass * s * s;
    if e1 < floor {
        return Err(StabilityError::BelowKineticFloor { e1: e1.as_f64(), floor: floor.as_f64() });
    }
    let rho = ep.rho();
    Ok(T::half() * (ep.mode_2.mass - rho * ep.mode_1.mass) * s * s + rho * e1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub algebraic_ok: bool,
    pub kp_positive: [bool; 2],
    pub dissipation_positive: [bool; 2],
    pub crossing_monotone: bool,
    pub kp: [f64; 2],
    pub stiffness: [f64; 2],
    pub dissipation: [f64; 2],
    pub rho: f64,
    pub assumption: String,
}

impl StabilityVerdict {
    /// Names of the conditions that do not hold.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..2 {
            if !self.kp_positive[i] {
                out.push(format!("kp_{} > 0", i + 1));
            }
            if !self.dissipation_positive[i] {
                out.push(format!("b_r,{0} + (R_{0}/L_o) kd_{0} > 0", i + 1));
            }
        }
        if !self.crossing_monotone {
            out.push("crossing map increasing (rho > 0)".into());
        }
        out
    }
}

pub fn verify_algebraic<T: Scalar>(params: &ActuatorParams<T>, law: &PiecewiseLinearLaw<T>) -> StabilityVerdict {
    let ep = EnergyParams::new(params, law);
    let kp = [law.gains_1.kp.as_f64(), law.gains_2.kp.as_f64()];
    let stiffness = [ep.mode_1.stiffness.as_f64(), ep.mode_2.stiffness.as_f64()];
    let dissipation = [ep.mode_1.dissipation.as_f64(), ep.mode_2.dissipation.as_f64()];
    let rho = ep.rho().as_f64();
    let kp_positive = kp.map(|k| k > 0.0);
    let dissipation_positive = dissipation.map(|d| d > 0.0);
    let crossing_monotone = rho > 0.0 && rho.is_finite();
    StabilityVerdict {
        algebraic_ok: kp_positive.iter().chain(&dissipation_positive).all(|b| *b) && crossing_monotone,
        kp_positive,
        dissipation_positive,
        crossing_monotone,
        kp,
        stiffness,
        dissipation,
        rho,
        assumption: LOAD_ASSUMPTION.into(),
    }
}

/// A mode change found between two records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossing {
    /// Interpolated crossing instant (s).
    pub t: f64,
    pub from: u8,
    pub to: u8,
    /// Energies of the old and new mode at the interpolated crossing state (J).
    pub energy_before: f64,
    pub energy_after: f64,
}

impl Crossing {
    pub fn jump(&self) -> f64 {
        self.energy_after - self.energy_before
    }
}

/// Same-mode stretch of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub mode: u8,
    pub t_start: f64,
    pub t_end: f64,
    pub energy_start: f64,
    pub energy_end: f64,
    /// Largest rise of the energy above its running minimum, relative to the
    /// energy at the start of the segment.
    pub max_relative_rise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub segments: Vec<Segment>,
    pub crossings: Vec<Crossing>,
    /// Energy at each entry into zone 1 and zone 2, in order.
    pub entries: [Vec<f64>; 2],
    pub tolerance: f64,
    pub segments_ok: bool,
    pub entries_ok: bool,
    /// Crossings at which the energy went up. Expected on downshifts.
    pub upward_jumps: usize,
}

impl MonotoneReport {
    pub fn ok(&self) -> bool {
        self.segments_ok && self.entries_ok
    }

    pub fn worst_rise(&self) -> f64 {
        self.segments.iter().map(|s| s.max_relative_rise).fold(0.0, f64::max)
    }
}

/// Checks that energy never rises within a segment (beyond `tolerance`
/// relative to the segment's starting energy) and that the energy at
/// successive entries into each zone strictly decreases. Upward jumps at
/// crossings are counted, not failed.
///
/// The mode of each record is the law's mode at the record's state; with a
/// continuously evaluated law this is also the mode the plant ran in.
pub fn verify_monotone<T: Scalar>(
    traj: &Trajectory<T>,
    ep: &EnergyParams<T>,
    tolerance: f64,
) -> Result<MonotoneReport, StabilityError> {
    let recs = &traj.records;
    if recs.len() < 2 {
        return Err(StabilityError::TooShort);
    }
    if recs.iter().any(|r| r.energy.is_nan()) {
        return Err(StabilityError::MissingEnergy);
    }
    let s = ep.switching_speed.as_f64();
    let mode_of = |v: f64| if v.abs() >= s { Mode::Low } else { Mode::High };
    let e = |m: Mode, x: f64, v: f64| energy(ep, m, &State::new(T::lit(x), T::lit(v))).as_f64();

    let mut segments = Vec::new();
    let mut crossings = Vec::new();
    let mut entries: [Vec<f64>; 2] = [Vec::new(), Vec::new()];

    let first = &recs[0];
    let mut mode = mode_of(first.v.as_f64());
    let mut seg_start = (first.t.as_f64(), e(mode, first.x.as_f64(), first.v.as_f64()));
    let mut running_min = seg_start.1;
    let mut max_rise = 0.0f64;
    let mut last = seg_start;

    let close = |segments: &mut Vec<Segment>, mode: Mode, start: (f64, f64), end: (f64, f64), rise: f64| {
        segments.push(Segment {
            mode: mode.index(),
            t_start: start.0,
            t_end: end.0,
            energy_start: start.1,
            energy_end: end.1,
            max_relative_rise: rise,
        });
    };
    let rel = |rise: f64, base: f64| if base > 0.0 { rise / base } else if rise > 0.0 { f64::INFINITY } else { 0.0 };

    for w in recs.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (xa, va, xb, vb) = (a.x.as_f64(), a.v.as_f64(), b.x.as_f64(), b.v.as_f64());
        let next = mode_of(vb);
        if next == mode {
            let eb = e(mode, xb, vb);
            if eb > running_min {
                max_rise = max_rise.max(rel(eb - running_min, seg_start.1));
            }
            running_min = running_min.min(eb);
            last = (b.t.as_f64(), eb);
            continue;
        }
        // |v| - s changes sign between a and b; interpolate the crossing.
        let ga = va.abs() - s;
        let gb = vb.abs() - s;
        let f = if ga == gb { 0.0 } else { (ga / (ga - gb)).clamp(0.0, 1.0) };
        let ta = a.t.as_f64();
        let tc = ta + f * (b.t.as_f64() - ta);
        let (xc, vc) = (xa + f * (xb - xa), va + f * (vb - va));
        let before = e(mode, xc, vc);
        let after = e(next, xc, vc);
        if before > running_min {
            max_rise = max_rise.max(rel(before - running_min, seg_start.1));
        }
        close(&mut segments, mode, seg_start, (tc, before), max_rise);
        crossings.push(Crossing { t: tc, from: mode.index(), to: next.index(), energy_before: before, energy_after: after });
        entries[(next.index() - 1) as usize].push(after);
        mode = next;
        seg_start = (tc, after);
        let eb = e(mode, xb, vb);
        max_rise = if eb > after { rel(eb - after, after) } else { 0.0 };
        running_min = after.min(eb);
        last = (b.t.as_f64(), eb);
    }
    close(&mut segments, mode, seg_start, last, max_rise);

    let segments_ok = segments.iter().all(|s| s.max_relative_rise <= tolerance);
    let entries_ok = entries.iter().all(|seq| seq.windows(2).all(|p| p[1] < p[0]));
    let upward_jumps = crossings.iter().filter(|c| c.jump() > 0.0).count();
    Ok(MonotoneReport { segments, crossings, entries, tolerance, segments_ok, entries_ok, upward_jumps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateReport {
    pub samples: usize,
    /// Largest `|fd - predicted|` relative to the largest predicted rate
    /// magnitude in the same segment.
    pub max_relative_error: f64,
    /// Time of the worst sample.
    pub worst_t: f64,
}

/// Compares a five-point finite difference of the recorded energy with the
/// closed-form rate, at records whose stencil stays in one mode, away from
/// the switching surface, with the torque unsaturated. Requires a
/// continuously evaluated law.
pub fn check_energy_rate<T: Scalar>(
    traj: &Trajectory<T>,
    ep: &EnergyParams<T>,
    u1_max: T,
) -> Result<RateReport, StabilityError> {
    let recs = &traj.records;
    if recs.len() < 5 {
        return Err(StabilityError::TooShort);
    }
    if recs.iter().any(|r| r.energy.is_nan()) {
        return Err(StabilityError::MissingEnergy);
    }
    let h = traj.dt.as_f64();
    let s = ep.switching_speed.as_f64();
    let limit = u1_max.as_f64() * (1.0 - 1e-9);
    // Group usable stencil centres by contiguous same-mode runs so the error
    // is scaled by the peak rate of the run it belongs to.
    let mut runs: Vec<Vec<(f64, f64, f64)>> = Vec::new();
    let mut current: Vec<(f64, f64, f64)> = Vec::new();
    for k in 2..recs.len() - 2 {
        let win = &recs[k - 2..=k + 2];
        // Integration stages between records may cross the surface even when
        // the records do not (sliding along it), so keep two steps' worth of
        // the mode's own speed change away from it.
        let usable = win.iter().all(|r| {
            let me = ep.mode(r.u2);
            let accel = (me.stiffness * r.x + me.dissipation * r.v).as_f64() / me.mass.as_f64();
            r.u2 == recs[k].u2
                && r.u1.as_f64().abs() < limit
                && (r.v.as_f64().abs() - s).abs() > 2.0 * h * accel.abs()
        });
        if !usable {
            if !current.is_empty() {
                runs.push(std::mem::take(&mut current));
            }
            continue;
        }
        let en: Vec<f64> = win.iter().map(|r| r.energy.as_f64()).collect();
        let fd = (en[0] - 8.0 * en[1] + 8.0 * en[3] - en[4]) / (12.0 * h);
        let predicted = energy_rate(ep, recs[k].u2, recs[k].v).as_f64();
        current.push((recs[k].t.as_f64(), fd, predicted));
    }
    if !current.is_empty() {
        runs.push(current);
    }
    let mut worst = 0.0f64;
    let mut worst_t = f64::NAN;
    let mut samples = 0;
    for run in &runs {
        let peak = run.iter().map(|(_, _, p)| p.abs()).fold(0.0, f64::max);
        if peak == 0.0 {
            continue;
        }
        for (t, fd, p) in run {
            let err = (fd - p).abs() / peak;
            if err > worst {
                worst = err;
                worst_t = *t;
            }
            samples += 1;
        }
    }
    Ok(RateReport { samples, max_relative_error: worst, worst_t })
}

pub const ENERGY_HEADER: &str = "t,x,v,mode,E_active,E_1,E_2";

/// Energy-versus-time samples of a trajectory, both modes' energies included.
pub fn write_energy_csv<T: Scalar, W: Write>(traj: &Trajectory<T>, ep: &EnergyParams<T>, mut out: W) -> io::Result<()> {
    writeln!(out, "{ENERGY_HEADER}")?;
    for r in &traj.records {
        let s = r.state();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t.as_f64(),
            r.x.as_f64(),
            r.v.as_f64(),
            r.u2.index(),
            r.energy.as_f64(),
            energy(ep, Mode::Low, &s).as_f64(),
            energy(ep, Mode::High, &s).as_f64()
        )?;
    }
    Ok(())
}
