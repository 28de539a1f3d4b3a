//! Lumped-parameter model of a two-speed actuator.
//!
//! The output carriage of mass `m_o` is driven through a screw of
//! transmission constant `L_o` (m/rad) by one of two motors, each behind its
//! own reduction `R_i`. Only the selected motor is engaged, and mode changes
//! are instantaneous with continuous output velocity. Seen from the output,
//! mode `i` behaves as a mass `m_r,i` with viscous damping `b_r,i` driven by a
//! force `(R_i / L_o) * u1`.
//!
//! All quantities are SI: metres, seconds, newton-metres.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid actuator parameters: {0}")]
    InvalidParams(String),
    #[error("invalid cost weights: {0}")]
    InvalidWeights(String),
    #[error("torque {torque} N·m outside [-{limit}, {limit}]")]
    TorqueOutOfBounds { torque: f64, limit: f64 },
    #[error("time step must be positive and finite, got {0}")]
    InvalidTimeStep(f64),
    #[error("mode index must be 1 or 2, got {0}")]
    InvalidMode(i64),
}

/// Gear-mode selection.
///
/// `Low` is the small reduction (mode 1, fast and weak), `High` the large one
/// (mode 2, slow and strong).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Mode {
    Low,
    High,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Low, Mode::High];

    /// 1 for [`Mode::Low`], 2 for [`Mode::High`].
    pub fn index(self) -> u8 {
        match self {
            Mode::Low => 1,
            Mode::High => 2,
        }
    }

    pub fn from_index(i: i64) -> Result<Self, ModelError> {
        match i {
            1 => Ok(Mode::Low),
            2 => Ok(Mode::High),
            other => Err(ModelError::InvalidMode(other)),
        }
    }
}

impl TryFrom<u8> for Mode {
    type Error = ModelError;
    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Mode::from_index(value as i64)
    }
}

impl From<Mode> for u8 {
    fn from(m: Mode) -> u8 {
        m.index()
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Physical constants and operating domain of the actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorParams<T> {
    /// Output mass (kg).
    pub m_o: T,
    /// Output viscous damping (N·s/m).
    pub b_o: T,
    /// Rotor inertias of motor 1 and 2 (kg·m²).
    pub j_1: T,
    pub j_2: T,
    /// Motor viscous dampings (N·m·s/rad).
    pub b_1: T,
    pub b_2: T,
    /// Reduction ratios, `r_2 > r_1`.
    pub r_1: T,
    pub r_2: T,
    /// Screw transmission constant (m/rad), `lead / 2π`.
    pub l_o: T,
    pub u1_max: T,
    /// Above this output speed only [`Mode::Low`] may be selected (m/s).
    pub v_gate: T,
    pub x_min: T,
    pub x_max: T,
    pub v_min: T,
    pub v_max: T,
}

impl<T: Scalar> ActuatorParams<T> {
    /// Dual-motor linear prototype: 11.4 kg load, 4:1 and 72:1 reductions,
    /// 20 mm lead screw, ±0.02 N·m, ±150 mm, ±500 mm/s, 20 mm/s mode gate.
    ///
    /// Rotor inertias and all dampings are not published for the prototype.
    /// The placeholders here give a heavily damped carriage and a slow side
    /// whose gearbox drag dominates its reflected damping, so coasting is
    /// cheap only through the fast reduction.
    pub fn prototype() -> Self {
        Self {
            m_o: T::lit(11.4),
            b_o: T::lit(80.0),
            j_1: T::lit(1.0e-6),
            j_2: T::lit(3.0e-7),
            b_1: T::lit(5.0e-9),
            b_2: T::lit(5.0e-6),
            r_1: T::lit(4.0),
            r_2: T::lit(72.0),
            l_o: T::lit(lead_to_transmission(0.020)),
            u1_max: T::lit(0.02),
            v_gate: T::lit(0.020),
            x_min: T::lit(-0.150),
            x_max: T::lit(0.150),
            v_min: T::lit(-0.500),
            v_max: T::lit(0.500),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let zero = T::zero();
        let fields = [
            ("m_o", self.m_o),
            ("b_o", self.b_o),
            ("j_1", self.j_1),
            ("j_2", self.j_2),
            ("b_1", self.b_1),
            ("b_2", self.b_2),
            ("r_1", self.r_1),
            ("r_2", self.r_2),
            ("l_o", self.l_o),
            ("u1_max", self.u1_max),
            ("v_gate", self.v_gate),
            ("x_min", self.x_min),
            ("x_max", self.x_max),
            ("v_min", self.v_min),
            ("v_max", self.v_max),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(ModelError::InvalidParams(format!("{name} is not finite")));
        }
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(ModelError::InvalidParams(msg.to_string()))
            }
        };
        check(self.m_o > zero, "m_o must be > 0")?;
        check(self.j_1 >= zero && self.j_2 >= zero, "rotor inertias must be >= 0")?;
        check(
            self.b_o >= zero && self.b_1 >= zero && self.b_2 >= zero,
            "dampings must be >= 0",
        )?;
        check(self.r_1 > zero, "r_1 must be > 0")?;
        check(self.r_2 > self.r_1, "r_2 must exceed r_1")?;
        check(self.l_o > zero, "l_o must be > 0")?;
        check(self.u1_max > zero, "u1_max must be > 0")?;
        check(self.v_gate > zero, "v_gate must be > 0")?;
        check(self.x_min < zero && zero < self.x_max, "need x_min < 0 < x_max")?;
        check(self.v_min < zero && zero < self.v_max, "need v_min < 0 < v_max")?;
        Ok(())
    }

    /// Reduction ratio of the given mode.
    pub fn ratio(&self, mode: Mode) -> T {
        match mode {
            Mode::Low => self.r_1,
            Mode::High => self.r_2,
        }
    }

    /// Torque-to-force gain `R_i / L_o` (N per N·m).
    pub fn force_gain(&self, mode: Mode) -> T {
        self.ratio(mode) / self.l_o
    }

    pub fn in_bounds(&self, state: &State<T>) -> bool {
        state.x >= self.x_min && state.x <= self.x_max && state.v >= self.v_min && state.v <= self.v_max
    }

    /// Whether `mode` may be selected at velocity `v`.
    pub fn mode_allowed(&self, mode: Mode, v: T) -> bool {
        mode == Mode::Low || v.abs() <= self.v_gate
    }

    pub fn check_torque(&self, u1: T) -> Result<(), ModelError> {
        if u1.is_finite() && u1.abs() <= self.u1_max {
            Ok(())
        } else {
            Err(ModelError::TorqueOutOfBounds {
                torque: u1.as_f64(),
                limit: self.u1_max.as_f64(),
            })
        }
    }
}

/// Screw transmission constant (m/rad) for a lead given in metres per turn.
pub fn lead_to_transmission(lead: f64) -> f64 {
    lead / (2.0 * PI)
}

/// Continuous state: position (m) and velocity (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State<T> {
    pub x: T,
    pub v: T,
}

impl<T: Scalar> State<T> {
    pub fn new(x: T, v: T) -> Self {
        Self { x, v }
    }

    pub fn origin() -> Self {
        Self::new(T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite()
    }
}

/// Hybrid action: motor torque and gear mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput<T> {
    pub u1: T,
    pub u2: Mode,
}

impl<T: Scalar> ControlInput<T> {
    pub fn new(u1: T, u2: Mode) -> Self {
        Self { u1, u2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Quadratic,
    MinTime,
    MinEnergy,
}

impl CostKind {
    pub const ALL: [CostKind; 3] = [CostKind::MinTime, CostKind::Quadratic, CostKind::MinEnergy];

    pub fn name(self) -> &'static str {
        match self {
            CostKind::Quadratic => "quadratic",
            CostKind::MinTime => "min_time",
            CostKind::MinEnergy => "min_energy",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            CostKind::Quadratic => 0,
            CostKind::MinTime => 1,
            CostKind::MinEnergy => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CostKind::Quadratic),
            1 => Some(CostKind::MinTime),
            2 => Some(CostKind::MinEnergy),
            _ => None,
        }
    }
}

impl std::fmt::Display for CostKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Stage cost selection. `w1..w3` are only read by the quadratic kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct CostWeights<T> {
    pub kind: CostKind,
    #[serde(default = "zero")]
    pub w1: T,
    #[serde(default = "zero")]
    pub w2: T,
    #[serde(default = "zero")]
    pub w3: T,
}

fn zero<T: Scalar>() -> T {
    T::zero()
}

impl<T: Scalar> CostWeights<T> {
    pub fn quadratic(w1: T, w2: T, w3: T) -> Self {
        Self { kind: CostKind::Quadratic, w1, w2, w3 }
    }

    pub fn min_time() -> Self {
        Self { kind: CostKind::MinTime, w1: T::zero(), w2: T::zero(), w3: T::zero() }
    }

    pub fn min_energy() -> Self {
        Self { kind: CostKind::MinEnergy, w1: T::zero(), w2: T::zero(), w3: T::zero() }
    }

    /// Default quadratic weights. Each term equals one at the domain edge of
    /// the prototype: 150 mm, 500 mm/s and 0.02 N·m.
    pub fn prototype_quadratic() -> Self {
        Self::quadratic(
            T::lit(1.0 / (0.15 * 0.15)),
            T::lit(1.0 / (0.5 * 0.5)),
            T::lit(1.0 / (0.02 * 0.02)),
        )
    }

    pub fn for_kind(kind: CostKind) -> Self {
        match kind {
            CostKind::Quadratic => Self::prototype_quadratic(),
            CostKind::MinTime => Self::min_time(),
            CostKind::MinEnergy => Self::min_energy(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ws = [self.w1, self.w2, self.w3];
        if ws.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return Err(ModelError::InvalidWeights("weights must be finite and >= 0".into()));
        }
        if self.kind == CostKind::Quadratic && self.w1 <= T::zero() {
            return Err(ModelError::InvalidWeights("quadratic cost needs w1 > 0".into()));
        }
        Ok(())
    }

    /// Part of the stage cost that depends on the state only.
    #[inline]
    pub fn state_cost(&self, state: &State<T>) -> T {
        match self.kind {
            CostKind::Quadratic => self.w1 * state.x * state.x + self.w2 * state.v * state.v,
            CostKind::MinTime => T::one(),
            CostKind::MinEnergy => T::zero(),
        }
    }

    /// Part of the stage cost that depends on the torque only.
    #[inline]
    pub fn input_cost(&self, u1: T) -> T {
        match self.kind {
            CostKind::Quadratic => self.w3 * u1 * u1,
            CostKind::MinTime => T::zero(),
            CostKind::MinEnergy => u1 * u1,
        }
    }
}

/// Reflected mass and damping `(m_r, b_r)` of a mode, seen at the output.
pub fn reflected_params<T: Scalar>(params: &ActuatorParams<T>, mode: Mode) -> (T, T) {
    let n = params.force_gain(mode);
    let n2 = n * n;
    let (j, b) = match mode {
        Mode::Low => (params.j_1, params.b_1),
        Mode::High => (params.j_2, params.b_2),
    };
    (params.m_o + n2 * j, params.b_o + n2 * b)
}

/// Per-mode coefficients of `a = -damping * v + drive * u1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeDynamics<T> {
    pub mass: T,
    pub damping: T,
    /// `b_r / m_r` (1/s)
    pub decay: T,
    /// `(R / L_o) / m_r` (m/s² per N·m)
    pub drive: T,
}

impl<T: Scalar> ModeDynamics<T> {
    pub fn new(params: &ActuatorParams<T>, mode: Mode) -> Self {
        let (mass, damping) = reflected_params(params, mode);
        Self {
            mass,
            damping,
            decay: damping / mass,
            drive: params.force_gain(mode) / mass,
        }
    }

    #[inline]
    pub fn accel(&self, v: T, u1: T) -> T {
        self.drive * u1 - self.decay * v
    }

    /// Four-stage Runge-Kutta increment `(Δx, Δv)` over `dt` with constant
    /// torque. The dynamics do not depend on position, so the increment is a
    /// function of `v` alone and the new position is `x + Δx`.
    #[inline]
    pub fn rk4_increment(&self, v: T, u1: T, dt: T) -> (T, T) {
        let half = dt * T::half();
        let a1 = self.accel(v, u1);
        let v2 = v + half * a1;
        let a2 = self.accel(v2, u1);
        let v3 = v + half * a2;
        let a3 = self.accel(v3, u1);
        let v4 = v + dt * a3;
        let a4 = self.accel(v4, u1);
        let sixth = dt / T::lit(6.0);
        let two = T::two();
        let dx = sixth * (v + two * v2 + two * v3 + v4);
        let dv = sixth * (a1 + two * a2 + two * a3 + a4);
        (dx, dv)
    }
}

/// Output acceleration under `input` (m/s²).
pub fn acceleration<T: Scalar>(
    params: &ActuatorParams<T>,
    state: &State<T>,
    input: &ControlInput<T>,
) -> Result<T, ModelError> {
    params.check_torque(input.u1)?;
    let (m_r, b_r) = reflected_params(params, input.u2);
    Ok((-b_r * state.v + params.force_gain(input.u2) * input.u1) / m_r)
}

/// Advances the state by `dt` holding `input` constant.
pub fn step<T: Scalar>(
    params: &ActuatorParams<T>,
    state: &State<T>,
    input: &ControlInput<T>,
    dt: T,
) -> Result<State<T>, ModelError> {
    params.check_torque(input.u1)?;
    if !(dt > T::zero() && dt.is_finite()) {
        return Err(ModelError::InvalidTimeStep(dt.as_f64()));
    }
    let dynamics = ModeDynamics::new(params, input.u2);
    let (dx, dv) = dynamics.rk4_increment(state.v, input.u1, dt);
    Ok(State::new(state.x + dx, state.v + dv))
}

/// Instantaneous cost rate `g(x, u)`.
pub fn stage_cost<T: Scalar>(weights: &CostWeights<T>, state: &State<T>, input: &ControlInput<T>) -> T {
    weights.state_cost(state) + weights.input_cost(input.u1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    type P = ActuatorParams<f64>;

    fn params() -> P {
        P::prototype()
    }

    /// Closed-form solution of `v' = (F - b v)/m`, `x' = v` with constant force.
    fn exact_step(p: &P, s: State<f64>, u: ControlInput<f64>, t: f64) -> State<f64> {
        let (m, b) = reflected_params(p, u.u2);
        let f = p.ratio(u.u2) / p.l_o * u.u1;
        let tau = m / b;
        let v_ss = f / b;
        let decay = (-t / tau).exp();
        let v = v_ss + (s.v - v_ss) * decay;
        let x = s.x + v_ss * t + (s.v - v_ss) * tau * (1.0 - decay);
        State::new(x, v)
    }

    #[test]
    fn prototype_is_valid() {
        params().validate().unwrap();
        assert_relative_eq!(params().l_o, 0.020 / (2.0 * PI));
    }

    #[test]
    fn zero_rotor_contribution() {
        let mut p = params();
        p.j_1 = 0.0;
        p.b_1 = 0.0;
        let (m, b) = reflected_params(&p, Mode::Low);
        assert_eq!(m, p.m_o);
        assert_eq!(b, p.b_o);
        assert_eq!(m, 11.4);
    }

    #[test]
    fn prototype_high_mode_regression() {
        // (72 / (0.02 / 2π))² = 5.1164e8; times 3e-7 gives 153.49, times 5e-6 gives 2558.2.
        let (m, b) = reflected_params(&params(), Mode::High);
        let n = 72.0 * 2.0 * PI / 0.020;
        assert_relative_eq!(n, 22_619.467_105_846_51, max_relative = 1e-14);
        assert_relative_eq!(m, 11.4 + 153.492_087_645_741_7, max_relative = 1e-10);
        assert_relative_eq!(b, 80.0 + 2_558.201_460_762_362, max_relative = 1e-10);
    }

    #[test]
    fn acceleration_examples() {
        let p = params();
        let a = acceleration(&p, &State::origin(), &ControlInput::new(0.0, Mode::Low)).unwrap();
        assert_eq!(a, 0.0);

        for mode in Mode::ALL {
            let (_, b) = reflected_params(&p, mode);
            let u1 = 0.013;
            let v = p.force_gain(mode) * u1 / b;
            let a = acceleration(&p, &State::new(0.05, v), &ControlInput::new(u1, mode)).unwrap();
            assert!(a.abs() < 1e-12, "steady speed should give zero acceleration, got {a}");
        }

        // Hand evaluation: m_r1 = 11.4 + 1256.637²·1e-6 = 12.979137, b_r1 = 80 + 1256.637²·5e-9 = 80.007896,
        // a = (-80.007896·0.1 + 1256.637·0.02) / 12.979137 = 1.319961.
        let a = acceleration(&p, &State::new(0.0, 0.1), &ControlInput::new(0.02, Mode::Low)).unwrap();
        assert_relative_eq!(a, 1.319_960_799_461_827, max_relative = 1e-9);
    }

    #[test]
    fn torque_bound_rejected() {
        let p = params();
        let input = ControlInput::new(0.021, Mode::High);
        assert!(matches!(
            acceleration(&p, &State::origin(), &input),
            Err(ModelError::TorqueOutOfBounds { .. })
        ));
        assert!(step(&p, &State::origin(), &input, 0.02).is_err());
        assert!(step(&p, &State::origin(), &ControlInput::new(0.0, Mode::High), 0.0).is_err());
    }

    #[test]
    fn origin_is_fixed_point() {
        let p = params();
        for mode in Mode::ALL {
            let s = step(&p, &State::origin(), &ControlInput::new(0.0, mode), 0.02).unwrap();
            assert_eq!(s, State::origin());
        }
    }

    #[test]
    fn step_matches_closed_form() {
        let p = params();
        let starts = [State::new(-0.12, 0.0), State::new(0.03, 0.4), State::new(0.1, -0.25)];
        for s in starts {
            for mode in Mode::ALL {
                for u1 in [-0.02, 0.0, 0.007, 0.02] {
                    let u = ControlInput::new(u1, mode);
                    // Substep length: dt/τ stays below 0.04 in both modes.
                    let got = step(&p, &s, &u, 0.002).unwrap();
                    let want = exact_step(&p, s, u, 0.002);
                    let dx_rel = (got.x - want.x).abs() / (want.x - s.x).abs().max(1e-9);
                    let dv_rel = (got.v - want.v).abs() / (want.v - s.v).abs().max(1e-9);
                    assert!(dx_rel < 1e-6 && dv_rel < 1e-6, "{s:?} {u:?}: {dx_rel} {dv_rel}");
                }
            }
        }
    }

    #[test]
    fn half_steps_agree_to_third_order() {
        let p = params();
        let s = State::new(0.05, -0.3);
        let u = ControlInput::new(0.015, Mode::High);
        let gap = |dt: f64| {
            let full = step(&p, &s, &u, dt).unwrap();
            let mid = step(&p, &s, &u, dt / 2.0).unwrap();
            let halves = step(&p, &mid, &u, dt / 2.0).unwrap();
            (full.x - halves.x).abs() + (full.v - halves.v).abs()
        };
        let (g1, g2) = (gap(0.02), gap(0.01));
        assert!(g1 < 1e-4, "gap {g1}");
        // Local error of a fourth order method scales as dt⁵.
        assert!(g1 / g2 > 8.0, "ratio {}", g1 / g2);
    }

    #[test]
    fn stage_cost_examples() {
        let s = State::new(2.0, 3.0);
        let u = ControlInput::new(0.01, Mode::Low);
        let q = CostWeights::quadratic(1.0, 1.0, 1.0);
        assert_relative_eq!(stage_cost(&q, &s, &u), 13.0001, max_relative = 1e-15);
        assert_eq!(stage_cost(&CostWeights::min_time(), &s, &u), 1.0);
        let origin = State::origin();
        let idle = ControlInput::new(0.0, Mode::High);
        assert_eq!(stage_cost(&q, &origin, &idle), 0.0);
        assert_eq!(stage_cost(&CostWeights::min_energy(), &origin, &idle), 0.0);
    }

    #[test]
    fn weights_validation() {
        assert!(CostWeights::quadratic(0.0, 1.0, 1.0).validate().is_err());
        assert!(CostWeights::quadratic(1.0, -1.0, 1.0).validate().is_err());
        assert!(CostWeights::<f64>::min_time().validate().is_ok());
        assert!(CostWeights::<f64>::prototype_quadratic().validate().is_ok());
    }

    #[test]
    fn params_validation() {
        let mut p = params();
        p.r_2 = p.r_1;
        assert!(p.validate().is_err());
        let mut p = params();
        p.x_min = 0.01;
        assert!(p.validate().is_err());
        let mut p = params();
        p.m_o = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn high_mode_is_heavier_and_more_damped() {
        let p = params();
        let (m1, b1) = reflected_params(&p, Mode::Low);
        let (m2, b2) = reflected_params(&p, Mode::High);
        assert!(m2 > m1 && b2 > b1);
    }

    #[test]
    fn generic_over_f32() {
        let p = ActuatorParams::<f32>::prototype();
        p.validate().unwrap();
        let s = step(&p, &State::new(0.0f32, 0.1), &ControlInput::new(0.0, Mode::Low), 0.02).unwrap();
        let d = step(&params(), &State::new(0.0, 0.1), &ControlInput::new(0.0, Mode::Low), 0.02).unwrap();
        assert!(s.v < 0.1 && (f64::from(s.v) - d.v).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn reflected_params_monotone(dj in 0.0..1e-6f64, db in 0.0..1e-6f64, mode_hi in any::<bool>()) {
            let p = params();
            let mode = if mode_hi { Mode::High } else { Mode::Low };
            let mut q = p;
            q.j_1 += dj; q.j_2 += dj; q.b_1 += db; q.b_2 += db;
            let (m0, b0) = reflected_params(&p, mode);
            let (m1, b1) = reflected_params(&q, mode);
            prop_assert!(m1 >= m0 && b1 >= b0);
        }

        #[test]
        fn acceleration_is_linear(v1 in -0.5..0.5f64, v2 in -0.5..0.5f64,
                                  u1 in -0.01..0.01f64, u2 in -0.01..0.01f64, mode_hi in any::<bool>()) {
            let p = params();
            let mode = if mode_hi { Mode::High } else { Mode::Low };
            let a = |v: f64, u: f64| acceleration(&p, &State::new(0.0, v), &ControlInput::new(u, mode)).unwrap();
            let sum = a(v1 + v2, u1 + u2);
            let parts = a(v1, u1) + a(v2, u2);
            prop_assert!((sum - parts).abs() <= 1e-12 * (1.0 + sum.abs()));
        }

        #[test]
        fn coasting_slows_down(x in -0.15..0.15f64, v in -0.5..0.5f64, mode_hi in any::<bool>()) {
            prop_assume!(v.abs() > 1e-9);
            let p = params();
            let mode = if mode_hi { Mode::High } else { Mode::Low };
            let next = step(&p, &State::new(x, v), &ControlInput::new(0.0, mode), 0.02).unwrap();
            prop_assert!(next.v.abs() < v.abs());
        }

        #[test]
        fn stage_cost_nonnegative(x in -1.0..1.0f64, v in -1.0..1.0f64, u in -0.02..0.02f64) {
            let s = State::new(x, v);
            let inp = ControlInput::new(u, Mode::Low);
            for w in [CostWeights::prototype_quadratic(), CostWeights::min_time(), CostWeights::min_energy()] {
                prop_assert!(stage_cost(&w, &s, &inp) >= 0.0);
            }
            let e = CostWeights::min_energy();
            prop_assert_eq!(stage_cost(&e, &s, &inp), stage_cost(&e, &State::origin(), &inp));
        }
    }
}
