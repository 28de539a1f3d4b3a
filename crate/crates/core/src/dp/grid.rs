use serde::{Deserialize, Serialize};

use super::SolveError;
use crate::model::{ActuatorParams, ControlInput, Mode, State};
use crate::scalar::Scalar;

/// Uniform 1-D grid on `[lo, hi]` with `n` nodes.
///
/// Node coordinates are computed about the midpoint so that grids over
/// symmetric bounds are exactly symmetric: `coord(n - 1 - k) == -coord(k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis<T> {
    pub lo: T,
    pub hi: T,
    pub n: usize,
}

impl<T: Scalar> Axis<T> {
    pub fn new(lo: T, hi: T, n: usize) -> Self {
        Self { lo, hi, n }
    }

    fn mid(&self) -> T {
        (self.lo + self.hi) * T::half()
    }

    fn half_width(&self) -> T {
        (self.hi - self.lo) * T::half()
    }

    pub fn spacing(&self) -> T {
        (self.hi - self.lo) / T::from_usize_lossy(self.n - 1)
    }

    pub fn coord(&self, k: usize) -> T {
        let last = self.n - 1;
        if k == 0 {
            return self.lo;
        }
        if k == last {
            return self.hi;
        }
        let twice = T::from_usize_lossy(2 * k) - T::from_usize_lossy(last);
        self.mid() + self.half_width() * twice / T::from_usize_lossy(last)
    }

    /// Fractional node position of `value`; `None` outside `[lo, hi]`.
    pub fn position(&self, value: T) -> Option<T> {
        if !(value >= self.lo && value <= self.hi) {
            return None;
        }
        let c = T::from_usize_lossy(self.n - 1) * T::half();
        Some(c + c * ((value - self.mid()) / self.half_width()))
    }

    /// Lower node index and interpolation weight of the upper node.
    pub fn locate(&self, value: T) -> Option<(usize, T)> {
        let pos = self.position(value)?;
        Some(split_position(pos, self.n))
    }

    /// Index of the node closest to `value`, clamped to the grid.
    pub fn nearest(&self, value: T) -> usize {
        let c = T::from_usize_lossy(self.n - 1) * T::half();
        let pos = c + c * ((value - self.mid()) / self.half_width());
        let r = pos.round().max(T::zero()).min(T::from_usize_lossy(self.n - 1));
        r.to_usize().unwrap_or(0)
    }
}

pub(crate) fn split_position<T: Scalar>(pos: T, n: usize) -> (usize, T) {
    let last = n - 1;
    let floor = pos.floor().max(T::zero());
    let k = floor.to_usize().unwrap_or(0);
    if k >= last {
        (last - 1, T::one())
    } else {
        let f = (pos - floor).max(T::zero()).min(T::one());
        (k, f)
    }
}

/// Discretisation of the state-action space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec<T> {
    pub n_x: usize,
    pub n_v: usize,
    /// Torque levels per mode; odd so that zero torque is on the ladder.
    pub n_u1: usize,
    /// Backup time step (s).
    pub dt: T,
    pub x_min: T,
    pub x_max: T,
    pub v_min: T,
    pub v_max: T,
    pub u1_max: T,
    pub v_gate: T,
}

impl<T: Scalar> GridSpec<T> {
    /// Grid over the operating domain of `params`.
    pub fn new(params: &ActuatorParams<T>, n_x: usize, n_v: usize, n_u1: usize, dt: T) -> Result<Self, SolveError> {
        let spec = Self {
            n_x,
            n_v,
            n_u1,
            dt,
            x_min: params.x_min,
            x_max: params.x_max,
            v_min: params.v_min,
            v_max: params.v_max,
            u1_max: params.u1_max,
            v_gate: params.v_gate,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// 501 × 501 states, 51 torque levels per mode, 0.02 s.
    pub fn prototype(params: &ActuatorParams<T>) -> Result<Self, SolveError> {
        Self::new(params, 501, 501, 51, T::lit(0.02))
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::InvalidGrid(m.to_string()));
        if self.n_x < 2 || self.n_v < 2 {
            return bad("n_x and n_v must be at least 2");
        }
        if self.n_u1 < 2 || self.n_u1.is_multiple_of(2) {
            return bad("n_u1 must be odd and at least 3");
        }
        if self.n_u1 > u16::MAX as usize / 2 {
            return bad("n_u1 too large");
        }
        if !(self.dt > T::zero() && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.x_min < self.x_max && self.v_min < self.v_max) {
            return bad("empty state bounds");
        }
        if !(self.u1_max > T::zero() && self.v_gate > T::zero()) {
            return bad("u1_max and v_gate must be positive");
        }
        Ok(())
    }

    /// Checks that the grid bounds match the actuator domain.
    pub fn check_params(&self, params: &ActuatorParams<T>) -> Result<(), SolveError> {
        let same = self.x_min == params.x_min
            && self.x_max == params.x_max
            && self.v_min == params.v_min
            && self.v_max == params.v_max
            && self.u1_max == params.u1_max
            && self.v_gate == params.v_gate;
        if same {
            Ok(())
        } else {
            Err(SolveError::InvalidGrid("grid bounds differ from actuator parameters".into()))
        }
    }

    pub fn x_axis(&self) -> Axis<T> {
        Axis::new(self.x_min, self.x_max, self.n_x)
    }

    pub fn v_axis(&self) -> Axis<T> {
        Axis::new(self.v_min, self.v_max, self.n_v)
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_v
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of cell `(i, j)`; storage is one row per velocity level.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n_x + i
    }

    /// `(i, j)` of a flat index.
    #[inline]
    pub fn cell(&self, idx: usize) -> (usize, usize) {
        (idx % self.n_x, idx / self.n_x)
    }

    pub fn state(&self, i: usize, j: usize) -> State<T> {
        State::new(self.x_axis().coord(i), self.v_axis().coord(j))
    }

    pub fn in_bounds(&self, s: &State<T>) -> bool {
        s.x >= self.x_min && s.x <= self.x_max && s.v >= self.v_min && s.v <= self.v_max
    }

    /// Evenly spaced torques on `[-u1_max, u1_max]`, exact zero in the middle.
    pub fn torque_levels(&self) -> Vec<T> {
        Axis::new(-self.u1_max, self.u1_max, self.n_u1)
            .coord_iter()
            .collect()
    }

    /// Every action on the ladder, ordered by tie-break preference: smaller
    /// `|u1|` first, then mode 1, then negative torque.
    pub fn action_ladder(&self) -> Vec<ControlInput<T>> {
        let levels = self.torque_levels();
        let mid = self.n_u1 / 2;
        let mut actions = Vec::with_capacity(2 * self.n_u1);
        for step in 0..=mid {
            for mode in Mode::ALL {
                if step == 0 {
                    actions.push(ControlInput::new(levels[mid], mode));
                } else {
                    actions.push(ControlInput::new(levels[mid - step], mode));
                    actions.push(ControlInput::new(levels[mid + step], mode));
                }
            }
        }
        actions
    }
}

impl<T: Scalar> Axis<T> {
    pub fn coord_iter(self) -> impl Iterator<Item = T> {
        (0..self.n).map(move |k| self.coord(k))
    }
}

/// Actions available at `state`: the whole torque ladder in both modes while
/// `|v| <= v_gate`, only mode 1 above it.
pub fn admissible_actions<T: Scalar>(
    spec: &GridSpec<T>,
    params: &ActuatorParams<T>,
    state: &State<T>,
) -> Vec<ControlInput<T>> {
    spec.action_ladder()
        .into_iter()
        .filter(|a| params.mode_allowed(a.u2, state.v))
        .collect()
}

/// Absorbing termination states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct TerminationSpec<T> {
    pub target_half_width_x: T,
    pub target_half_width_v: T,
    pub out_of_bound_cost: T,
    #[serde(default = "zero")]
    pub target_cost: T,
}

fn zero<T: Scalar>() -> T {
    T::zero()
}

impl<T: Scalar> TerminationSpec<T> {
    /// |x| <= 3 mm, |v| <= 10 mm/s, exit cost 1e6.
    pub fn prototype() -> Self {
        Self {
            target_half_width_x: T::lit(0.003),
            target_half_width_v: T::lit(0.010),
            out_of_bound_cost: T::lit(1.0e6),
            target_cost: T::zero(),
        }
    }

    pub fn validate(&self, grid: &GridSpec<T>) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::InvalidTermination(m.to_string()));
        if !(self.target_half_width_x > T::zero() && self.target_half_width_v > T::zero()) {
            return bad("target half-widths must be positive");
        }
        let two = T::two();
        if two * self.target_half_width_x < grid.x_axis().spacing()
            || two * self.target_half_width_v < grid.v_axis().spacing()
        {
            return bad("target box must be at least one grid cell wide");
        }
        if !(self.out_of_bound_cost.is_finite() && self.out_of_bound_cost > T::zero()) {
            return bad("out_of_bound_cost must be positive and finite");
        }
        if !(self.target_cost >= T::zero() && self.target_cost < self.out_of_bound_cost) {
            return bad("target_cost must be in [0, out_of_bound_cost)");
        }
        Ok(())
    }

    #[inline]
    pub fn in_target(&self, s: &State<T>) -> bool {
        s.x.abs() <= self.target_half_width_x && s.v.abs() <= self.target_half_width_v
    }

    /// Box spanning one grid spacing on each side of the origin, for coarse grids.
    pub fn one_cell(grid: &GridSpec<T>, out_of_bound_cost: T) -> Self {
        Self {
            target_half_width_x: grid.x_axis().spacing(),
            target_half_width_v: grid.v_axis().spacing(),
            out_of_bound_cost,
            target_cost: T::zero(),
        }
    }

    /// Values at or above this level mean the cell cannot avoid a constraint
    /// violation with probability at least one half under interpolation.
    pub fn infeasible_level(&self) -> T {
        self.out_of_bound_cost * T::half()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n_u1: usize) -> GridSpec<f64> {
        GridSpec::new(&ActuatorParams::prototype(), 501, 501, n_u1, 0.02).unwrap()
    }

    #[test]
    fn axis_is_symmetric() {
        let a = Axis::new(-0.15, 0.15, 501);
        for k in 0..501 {
            assert_eq!(a.coord(500 - k), -a.coord(k));
        }
        assert_eq!(a.coord(250), 0.0);
        assert_eq!(a.coord(0), -0.15);
        assert!((a.spacing() - 0.0006f64).abs() < 1e-15);
    }

    #[test]
    fn locate_nodes_and_edges() {
        let a = Axis::new(-1.0, 1.0, 5);
        assert_eq!(a.locate(-1.0), Some((0, 0.0)));
        assert_eq!(a.locate(1.0), Some((3, 1.0)));
        assert_eq!(a.locate(0.25), Some((2, 0.5)));
        assert_eq!(a.locate(1.0 + 1e-12), None);
        assert_eq!(a.locate(f64::NAN), None);
        assert_eq!(a.nearest(0.3), 3);
        assert_eq!(a.nearest(-7.0), 0);
    }

    #[test]
    fn ladder_contains_zero_and_bounds() {
        let g = GridSpec::new(&ActuatorParams::prototype(), 5, 5, 3, 0.02).unwrap();
        assert_eq!(g.torque_levels(), vec![-0.02, 0.0, 0.02]);
        let ladder = g.action_ladder();
        assert_eq!(ladder.len(), 6);
        assert_eq!(ladder[0], ControlInput::new(0.0, Mode::Low));
        assert_eq!(ladder[1], ControlInput::new(0.0, Mode::High));
        assert_eq!(ladder[2], ControlInput::new(-0.02, Mode::Low));
        assert_eq!(ladder[3], ControlInput::new(0.02, Mode::Low));
        assert_eq!(ladder[4], ControlInput::new(-0.02, Mode::High));
    }

    #[test]
    fn admissible_counts() {
        let g = grid(51);
        let p = ActuatorParams::prototype();
        assert_eq!(admissible_actions(&g, &p, &State::new(0.0, 0.02)).len(), 102);
        assert_eq!(admissible_actions(&g, &p, &State::new(0.1, -0.019)).len(), 102);
        let fast = admissible_actions(&g, &p, &State::new(0.0, 0.0201));
        assert_eq!(fast.len(), 51);
        assert!(fast.iter().all(|a| a.u2 == Mode::Low));
    }

    #[test]
    fn rejects_even_torque_count() {
        let p = ActuatorParams::<f64>::prototype();
        assert!(GridSpec::new(&p, 11, 11, 4, 0.02).is_err());
        assert!(GridSpec::new(&p, 1, 11, 5, 0.02).is_err());
        assert!(GridSpec::new(&p, 11, 11, 5, 0.0).is_err());
    }

    #[test]
    fn termination_needs_a_cell() {
        let g = grid(51);
        TerminationSpec::prototype().validate(&g).unwrap();
        let mut t = TerminationSpec::prototype();
        t.target_half_width_x = 2.9e-4;
        assert!(t.validate(&g).is_err());
    }
}
