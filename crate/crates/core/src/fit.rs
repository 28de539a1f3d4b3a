//! Distillation of a tabular policy into a switched PD law.
//!
//! The state space is split at a speed threshold. Above it the law runs the
//! small reduction, below it the large one, and in each zone the torque is a
//! plane through the origin fitted by least squares to the unsaturated
//! optimal actions. Saturated actions are left to the clamp.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dp::Solution;
use crate::model::{ControlInput, Mode, State};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no samples to fit")]
    Empty,
    #[error("threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("threshold {threshold} m/s exceeds the mode gate {gate} m/s")]
    ThresholdAboveGate { threshold: f64, gate: f64 },
    #[error("zone {zone}: {count} unsaturated samples, need at least 3 spanning two positions and two speeds")]
    TooFewSamples { zone: u8, count: usize },
    #[error("zone {zone}: sample states are collinear, gains are not identifiable")]
    RankDeficient { zone: u8 },
    #[error("invalid law: {0}")]
    InvalidLaw(String),
    #[error("law file: {0}")]
    Format(String),
}

/// One optimal action taken from a solved table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySample<T> {
    pub x: T,
    pub v: T,
    pub u1: T,
    pub u2: Mode,
    pub saturated: bool,
}

impl<T: Scalar> PolicySample<T> {
    pub fn new(state: State<T>, action: ControlInput<T>, u1_max: T) -> Self {
        Self {
            x: state.x,
            v: state.v,
            u1: action.u1,
            u2: action.u2,
            saturated: is_saturated(action.u1, u1_max),
        }
    }
}

/// Torque ladders include `±u1_max` exactly; the slack only guards against
/// values that went through a decimal text format.
pub fn is_saturated<T: Scalar>(u1: T, u1_max: T) -> bool {
    u1.abs() >= u1_max * (T::one() - T::lit(1e-9))
}

/// Proportional and derivative gains (N·m/m, N·m·s/m).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains<T> {
    pub kp: T,
    pub kd: T,
}

impl<T: Scalar> Gains<T> {
    pub fn new(kp: T, kd: T) -> Self {
        Self { kp, kd }
    }
}

/// Switched PD law. Applied torque is `-(kp x + kd v)` clamped to
/// `±u1_max`, so positive gains push toward the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseLinearLaw<T> {
    /// Speeds at or above this use mode 1 and `gains_1` (m/s).
    pub threshold: T,
    pub u1_max: T,
    pub gains_1: Gains<T>,
    pub gains_2: Gains<T>,
}

impl<T: Scalar> PiecewiseLinearLaw<T> {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.threshold > T::zero() && self.threshold.is_finite()) {
            return Err(FitError::InvalidThreshold(self.threshold.as_f64()));
        }
        if !(self.u1_max > T::zero() && self.u1_max.is_finite()) {
            return Err(FitError::InvalidLaw(format!("u1_max must be positive, got {}", self.u1_max)));
        }
        let all = [self.gains_1.kp, self.gains_1.kd, self.gains_2.kp, self.gains_2.kd];
        if all.iter().any(|g| !g.is_finite()) {
            return Err(FitError::InvalidLaw("gains must be finite".into()));
        }
        Ok(())
    }

    pub fn mode_for(&self, v: T) -> Mode {
        if v.abs() >= self.threshold {
            Mode::Low
        } else {
            Mode::High
        }
    }

    pub fn gains(&self, mode: Mode) -> Gains<T> {
        match mode {
            Mode::Low => self.gains_1,
            Mode::High => self.gains_2,
        }
    }

    pub fn evaluate(&self, state: &State<T>) -> ControlInput<T> {
        let mode = self.mode_for(state.v);
        let g = self.gains(mode);
        let raw = -(g.kp * state.x + g.kd * state.v);
        ControlInput::new(raw.max(-self.u1_max).min(self.u1_max), mode)
    }

    pub fn to_toml(&self) -> Result<String, FitError>
    where
        T: Serialize,
    {
        toml::to_string(self).map_err(|e| FitError::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, FitError>
    where
        T: for<'de> Deserialize<'de>,
    {
        let law: Self = toml::from_str(text).map_err(|e| FitError::Format(e.to_string()))?;
        law.validate()?;
        Ok(law)
    }
}

pub fn evaluate_law<T: Scalar>(law: &PiecewiseLinearLaw<T>, state: &State<T>) -> ControlInput<T> {
    law.evaluate(state)
}

/// Splits samples at `threshold`: `|v| >= threshold` goes to the first group.
pub fn segment_samples<T: Scalar>(
    samples: &[PolicySample<T>],
    threshold: T,
) -> Result<(Vec<PolicySample<T>>, Vec<PolicySample<T>>), FitError> {
    if !(threshold > T::zero() && threshold.is_finite()) {
        return Err(FitError::InvalidThreshold(threshold.as_f64()));
    }
    if samples.is_empty() {
        return Err(FitError::Empty);
    }
    Ok(samples.iter().partition(|s| s.v.abs() >= threshold))
}

fn distinct_at_least_two<T: Scalar>(mut it: impl Iterator<Item = T>) -> bool {
    match it.next() {
        Some(first) => it.any(|v| v != first),
        None => false,
    }
}

/// Least-squares coefficients `(a, b)` of `u1 ≈ a x + b v` over the
/// unsaturated samples, via the 2×2 normal equations.
///
/// These are regression coefficients, not law gains: a law built from them
/// uses `kp = -a`, `kd = -b`.
pub fn fit_plane<T: Scalar>(samples: &[PolicySample<T>]) -> Result<(T, T), FitError> {
    fit_zone(samples, 0)
}

fn fit_zone<T: Scalar>(samples: &[PolicySample<T>], zone: u8) -> Result<(T, T), FitError> {
    let used: Vec<&PolicySample<T>> = samples.iter().filter(|s| !s.saturated).collect();
    let spans = distinct_at_least_two(used.iter().map(|s| s.x)) && distinct_at_least_two(used.iter().map(|s| s.v));
    if used.len() < 3 || !spans {
        return Err(FitError::TooFewSamples { zone, count: used.len() });
    }
    // Accumulate in f64 regardless of T; sums over ~10⁵ f32 terms lose digits.
    let (mut sxx, mut sxv, mut svv, mut sxu, mut svu) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in &used {
        let (x, v, u) = (s.x.as_f64(), s.v.as_f64(), s.u1.as_f64());
        sxx += x * x;
        sxv += x * v;
        svv += v * v;
        sxu += x * u;
        svu += v * u;
    }
    let det = sxx * svv - sxv * sxv;
    if !(det > 1e-12 * sxx * svv) {
        return Err(FitError::RankDeficient { zone });
    }
    let a = (svv * sxu - sxv * svu) / det;
    let b = (sxx * svu - sxv * sxu) / det;
    Ok((T::lit(a), T::lit(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneReport {
    /// Samples in the zone, saturated included.
    pub samples: usize,
    /// Samples used by the regression.
    pub fitted: usize,
    /// Share of the zone's samples left out as saturated.
    pub saturated_fraction: f64,
    /// RMS of clamped law minus table torque over the fitted samples (N·m).
    pub residual_rms: f64,
    /// Share of the zone's samples whose table mode equals the law's mode.
    pub mode_agreement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub zone_1: ZoneReport,
    pub zone_2: ZoneReport,
    /// Share of all samples whose table mode equals the law's mode.
    pub mode_agreement: f64,
}

/// Every feasible cell outside the target box, as a sample.
pub fn table_samples<T: Scalar>(solution: &Solution<T>) -> Vec<PolicySample<T>> {
    let g = &solution.grid;
    solution
        .decision_cells()
        .map(|(i, j)| PolicySample::new(g.state(i, j), solution.policy.action(i, j), g.u1_max))
        .collect()
}

/// Fits a switched PD law to a solved table.
pub fn distill<T: Scalar>(
    solution: &Solution<T>,
    threshold: T,
) -> Result<(PiecewiseLinearLaw<T>, FitReport), FitError> {
    let gate = solution.grid.v_gate;
    if threshold > gate {
        return Err(FitError::ThresholdAboveGate { threshold: threshold.as_f64(), gate: gate.as_f64() });
    }
    let samples = table_samples(solution);
    let (fast, slow) = segment_samples(&samples, threshold)?;
    let (a1, b1) = fit_zone(&fast, 1)?;
    let (a2, b2) = fit_zone(&slow, 2)?;
    let law = PiecewiseLinearLaw {
        threshold,
        u1_max: solution.grid.u1_max,
        gains_1: Gains::new(-a1, -b1),
        gains_2: Gains::new(-a2, -b2),
    };
    let report = fit_report(&law, &samples);
    Ok((law, report))
}

fn zone_report<T: Scalar>(law: &PiecewiseLinearLaw<T>, zone: &[PolicySample<T>]) -> ZoneReport {
    let mut sq = 0.0;
    let mut fitted = 0usize;
    let mut agree = 0usize;
    for s in zone {
        let out = law.evaluate(&State::new(s.x, s.v));
        if out.u2 == s.u2 {
            agree += 1;
        }
        if !s.saturated {
            fitted += 1;
            sq += (out.u1 - s.u1).as_f64().powi(2);
        }
    }
    let n = zone.len();
    let frac = |k: usize, of: usize| if of == 0 { 0.0 } else { k as f64 / of as f64 };
    ZoneReport {
        samples: n,
        fitted,
        saturated_fraction: frac(n - fitted, n),
        residual_rms: if fitted == 0 { 0.0 } else { (sq / fitted as f64).sqrt() },
        mode_agreement: frac(agree, n),
    }
}

/// Compares a law with the samples it should reproduce.
pub fn fit_report<T: Scalar>(law: &PiecewiseLinearLaw<T>, samples: &[PolicySample<T>]) -> FitReport {
    let (fast, slow): (Vec<_>, Vec<_>) = samples.iter().partition(|s| s.v.abs() >= law.threshold);
    let z1 = zone_report(law, &fast);
    let z2 = zone_report(law, &slow);
    let total = z1.samples + z2.samples;
    let agree = z1.mode_agreement * z1.samples as f64 + z2.mode_agreement * z2.samples as f64;
    FitReport {
        zone_1: z1,
        zone_2: z2,
        mode_agreement: if total == 0 { 0.0 } else { agree / total as f64 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn law() -> PiecewiseLinearLaw<f64> {
        PiecewiseLinearLaw {
            threshold: 0.02,
            u1_max: 0.02,
            gains_1: Gains::new(0.1, 0.05),
            gains_2: Gains::new(0.2, 0.3),
        }
    }

    fn sample(x: f64, v: f64, u1: f64) -> PolicySample<f64> {
        PolicySample { x, v, u1, u2: Mode::Low, saturated: false }
    }

    #[test]
    fn threshold_speed_belongs_to_fast_zone() {
        let s = [sample(0.0, 0.020, 0.0), sample(0.0, 0.0, 0.0), sample(0.1, -0.019, 0.0)];
        let (a, b) = segment_samples(&s, 0.020).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].v, 0.020);
        assert_eq!(b.len(), 2);
        assert!(segment_samples::<f64>(&[], 0.02).is_err());
        assert!(segment_samples(&s, 0.0).is_err());
    }

    #[test]
    fn exact_plane_is_recovered() {
        let mut s = Vec::new();
        for i in 0..7 {
            for j in 0..5 {
                let (x, v) = (-0.1 + 0.03 * i as f64, -0.2 + 0.1 * j as f64);
                s.push(sample(x, v, 2.0 * x + 3.0 * v));
            }
        }
        let (a, b) = fit_plane(&s).unwrap();
        assert!((a - 2.0).abs() < 1e-12 && (b - 3.0).abs() < 1e-12, "{a} {b}");
    }

    #[test]
    fn saturated_samples_are_ignored() {
        let mut s: Vec<_> = [(0.1, 0.0), (0.0, 0.1), (0.1, 0.1), (-0.05, 0.2)]
            .iter()
            .map(|&(x, v)| sample(x, v, x - v))
            .collect();
        s.push(PolicySample { x: 0.3, v: 0.3, u1: 5.0, u2: Mode::Low, saturated: true });
        let (a, b) = fit_plane(&s).unwrap();
        assert!((a - 1.0).abs() < 1e-12 && (b + 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_designs_are_rejected() {
        let on_axis: Vec<_> = (0..5).map(|k| sample(0.0, k as f64 * 0.1, 1.0)).collect();
        assert!(matches!(fit_plane(&on_axis), Err(FitError::TooFewSamples { .. })));
        let on_line: Vec<_> = (1..6).map(|k| sample(k as f64 * 0.1, k as f64 * 0.2, 1.0)).collect();
        assert!(matches!(fit_plane(&on_line), Err(FitError::RankDeficient { .. })));
        assert!(fit_plane(&on_line[..2]).is_err());
    }

    #[test]
    fn law_examples() {
        let l = law();
        let o = l.evaluate(&State::origin());
        assert_eq!(o.u1, 0.0);
        assert_eq!(o.u2, Mode::High);
        assert_eq!(l.evaluate(&State::new(0.0, 0.02)).u2, Mode::Low);
        assert_eq!(l.evaluate(&State::new(0.0, -0.02)).u2, Mode::Low);
        assert_eq!(l.evaluate(&State::new(-1.0, 0.0)).u1, 0.02);
        assert_eq!(l.evaluate(&State::new(1.0, 0.0)).u1, -0.02);
        let u = l.evaluate(&State::new(0.01, 0.1)).u1;
        assert!((u - -(0.1 * 0.01 + 0.05 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn law_text_round_trip() {
        let l = law();
        let text = l.to_toml().unwrap();
        assert!(text.contains("threshold"));
        let back = PiecewiseLinearLaw::<f64>::from_toml(&text).unwrap();
        assert_eq!(back, l);
        assert!(PiecewiseLinearLaw::<f64>::from_toml("threshold = 0.02\n").is_err());
        let bad = text.replace("threshold = 0.02", "threshold = -1.0");
        assert!(PiecewiseLinearLaw::<f64>::from_toml(&bad).is_err());
    }

    proptest! {
        #[test]
        fn law_is_odd(x in -0.2f64..0.2, v in -0.6f64..0.6) {
            let l = law();
            let a = l.evaluate(&State::new(x, v));
            let b = l.evaluate(&State::new(-x, -v));
            prop_assert_eq!(a.u1, -b.u1);
            prop_assert_eq!(a.u2, b.u2);
            prop_assert!(a.u1.abs() <= l.u1_max);
        }

        #[test]
        fn least_squares_beats_perturbations(
            pts in proptest::collection::vec((-0.15f64..0.15, -0.5f64..0.5, -0.02f64..0.02), 6..40),
            da in -0.05f64..0.05,
            db in -0.05f64..0.05,
        ) {
            let s: Vec<_> = pts.iter().map(|&(x, v, u)| sample(x, v, u)).collect();
            if let Ok((a, b)) = fit_plane(&s) {
                let sse = |a: f64, b: f64| s.iter().map(|p| (p.u1 - a * p.x - b * p.v).powi(2)).sum::<f64>();
                prop_assert!(sse(a, b) <= sse(a + da, b + db) * (1.0 + 1e-12) + 1e-18);
            }
        }
    }
}
