use proptest::prelude::*;
use twospeed::dp::{GridSpec, PolicyTable, Solution, SolveReport, TerminationSpec, ValueTable};
use twospeed::fit::{distill, fit_plane, Gains, PiecewiseLinearLaw, PolicySample};
use twospeed::model::{ActuatorParams, ControlInput, CostKind, Mode, State};

/// Deterministic noise in [-1, 1].
fn noise(k: usize) -> f64 {
    ((k as f64 * 12.9898).sin() * 43_758.545_3).fract() * 2.0 - 1.0
}

/// Least squares through Gaussian elimination on the design matrix columns,
/// accumulated in the opposite order from the library.
fn reference_fit(samples: &[(f64, f64, f64)]) -> (f64, f64) {
    let mut m = [[0.0f64; 3]; 2];
    for &(x, v, u) in samples.iter().rev() {
        m[0][0] += x * x;
        m[0][1] += x * v;
        m[0][2] += x * u;
        m[1][0] += v * x;
        m[1][1] += v * v;
        m[1][2] += v * u;
    }
    let f = m[1][0] / m[0][0];
    let r11 = m[1][1] - f * m[0][1];
    let r12 = m[1][2] - f * m[0][2];
    let b = r12 / r11;
    let a = (m[0][2] - m[0][1] * b) / m[0][0];
    (a, b)
}

#[test]
fn noisy_plane_matches_reference_solution() {
    let truth = (-0.13, -0.04);
    let mut raw = Vec::new();
    for k in 0..500 {
        let x = 0.14 * noise(3 * k);
        let v = 0.45 * noise(3 * k + 1);
        let u = truth.0 * x + truth.1 * v + 1e-3 * noise(3 * k + 2);
        raw.push((x, v, u));
    }
    let samples: Vec<PolicySample<f64>> = raw
        .iter()
        .map(|&(x, v, u)| PolicySample::new(State::new(x, v), ControlInput::new(u, Mode::Low), 1.0))
        .collect();
    let (a, b) = fit_plane(&samples).unwrap();
    let (ra, rb) = reference_fit(&raw);
    assert!((a - ra).abs() <= 1e-10 * ra.abs(), "{a} vs {ra}");
    assert!((b - rb).abs() <= 1e-10 * rb.abs(), "{b} vs {rb}");
    // Noise is small, so the estimate lands near the truth as well.
    assert!((a - truth.0).abs() < 5e-3 && (b - truth.1).abs() < 5e-3, "{a} {b}");
}

/// A solution whose every decision cell holds the law's own action.
fn table_from_law(law: &PiecewiseLinearLaw<f64>, n: usize) -> Solution<f64> {
    let p = ActuatorParams::prototype();
    let grid = GridSpec::new(&p, n, n, 41, 0.02).unwrap();
    let termination = TerminationSpec::one_cell(&grid, 1.0e6);
    let (mut u1_star, mut u2_star, mut terminal) = (Vec::new(), Vec::new(), Vec::new());
    for idx in 0..grid.len() {
        let (i, j) = grid.cell(idx);
        let s = grid.state(i, j);
        let a = law.evaluate(&s);
        u1_star.push(a.u1);
        u2_star.push(a.u2);
        terminal.push(termination.in_target(&s));
    }
    Solution {
        grid,
        termination,
        kind: CostKind::Quadratic,
        value: ValueTable { n_x: n, n_v: n, values: vec![1.0; n * n], feasible: vec![true; n * n], terminal },
        policy: PolicyTable { n_x: n, n_v: n, u1_star, u2_star },
        report: SolveReport { iterations: 1, final_residual: 0.0, converged: true, wall_time: 0.0, history: vec![0.0] },
    }
}

fn check_round_trip(kp1: f64, kd1: f64, kp2: f64, kd2: f64) {
    let law = PiecewiseLinearLaw {
        threshold: 0.02,
        u1_max: 0.02,
        gains_1: Gains::new(kp1, kd1),
        gains_2: Gains::new(kp2, kd2),
    };
    let sol = table_from_law(&law, 101);
    let (fitted, report) = distill(&sol, 0.02).unwrap();
    for (got, want) in [
        (fitted.gains_1.kp, kp1),
        (fitted.gains_1.kd, kd1),
        (fitted.gains_2.kp, kp2),
        (fitted.gains_2.kd, kd2),
    ] {
        assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
    }
    assert!(report.zone_1.residual_rms < 1e-12 && report.zone_2.residual_rms < 1e-12);
    assert_eq!(report.mode_agreement, 1.0);
}

#[test]
fn distill_recovers_the_law_that_built_the_table() {
    check_round_trip(0.124, 0.026, 0.133, -0.094);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn distill_round_trip_for_random_gains(
        kp1 in 0.02..0.3f64, kd1 in -0.05..0.2f64, kp2 in 0.02..0.3f64, kd2 in -0.2..0.2f64,
    ) {
        check_round_trip(kp1, kd1, kp2, kd2);
    }

    #[test]
    fn fit_is_linear_in_the_torques(scale in -5.0..5.0f64) {
        let base: Vec<(f64, f64, f64)> = (0..60)
            .map(|k| (0.1 * noise(2 * k), 0.3 * noise(2 * k + 1), 0.01 * noise(1000 + k)))
            .collect();
        let mk = |s: f64| -> Vec<PolicySample<f64>> {
            base.iter()
                .map(|&(x, v, u)| PolicySample::new(State::new(x, v), ControlInput::new(s * u, Mode::Low), 1.0))
                .collect()
        };
        let (a0, b0) = fit_plane(&mk(1.0)).unwrap();
        let (a, b) = fit_plane(&mk(scale)).unwrap();
        prop_assert!((a - scale * a0).abs() <= 1e-9 * (1.0 + a0.abs() * scale.abs()));
        prop_assert!((b - scale * b0).abs() <= 1e-9 * (1.0 + b0.abs() * scale.abs()));
    }
}
