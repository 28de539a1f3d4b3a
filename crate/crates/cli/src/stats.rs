//! Summary numbers of a solved table, shared by `solve` reports and the
//! acceptance checks.

use serde::Serialize;
use twospeed::dp::Solution;
use twospeed::fit::is_saturated;
use twospeed::model::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TableStats {
    pub cells: usize,
    pub feasible_cells: usize,
    /// Feasible cells outside the target box. All fractions below are over these.
    pub decision_cells: usize,
    pub saturated_fraction: f64,
    pub mean_abs_u1: f64,
    /// Mode 2 share among decision cells with |v| <= gate.
    pub low_speed_mode_2_fraction: f64,
    /// Mode 1 share among low-speed decision cells with x·v < 0.
    pub low_speed_braking_mode_1_fraction: f64,
    /// Cells (any, feasible or not) above the gate that select mode 2.
    pub gate_violations: usize,
}

pub fn table_stats(sol: &Solution<f64>) -> TableStats {
    let g = &sol.grid;
    let mut n = 0usize;
    let mut sat = 0usize;
    let mut sum_u = 0.0;
    let (mut low, mut low_m2) = (0usize, 0usize);
    let (mut brake, mut brake_m1) = (0usize, 0usize);
    let mut violations = 0usize;
    for (i, j) in sol.decision_cells() {
        let s = g.state(i, j);
        let a = sol.policy.action(i, j);
        n += 1;
        sum_u += a.u1.abs();
        sat += usize::from(is_saturated(a.u1, g.u1_max));
        if s.v.abs() <= g.v_gate {
            low += 1;
            low_m2 += usize::from(a.u2 == Mode::High);
            if s.x * s.v < 0.0 {
                brake += 1;
                brake_m1 += usize::from(a.u2 == Mode::Low);
            }
        }
    }
    for j in 0..g.n_v {
        if g.state(0, j).v.abs() > g.v_gate {
            violations += (0..g.n_x).filter(|&i| sol.policy.action(i, j).u2 != Mode::Low).count();
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    TableStats {
        cells: g.len(),
        feasible_cells: sol.value.feasible.iter().filter(|f| **f).count(),
        decision_cells: n,
        saturated_fraction: frac(sat, n),
        mean_abs_u1: if n == 0 { 0.0 } else { sum_u / n as f64 },
        low_speed_mode_2_fraction: frac(low_m2, low),
        low_speed_braking_mode_1_fraction: frac(brake_m1, brake),
        gate_violations: violations,
    }
}
