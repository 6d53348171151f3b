use proptest::prelude::*;
use simlab::linalg::Matrix;
use simlab::one_layer;
use simlab::phenomenology::{self, LossCurve};
use simlab::sim::{self, SimConfig};
use simlab::two_layer::{ModelKind, Trajectory};

fn closed_form_run(config: &SimConfig, horizon: f64, points: usize) -> Trajectory {
    let a = sim::build_covariance(config).unwrap();
    let x_hat = config.x_hat();
    let w0 = Matrix::zeros(config.d, config.d);
    let mut traj = Trajectory::new(ModelKind::OneLayerAnalytic, None, false);
    for t in one_layer::time_grid(horizon, points) {
        let w = one_layer::analytic_solution_matrix(&w0, &a, t).unwrap();
        traj.push(t, w, &a, &x_hat, None).unwrap();
    }
    traj
}

/// Spectra whose entries are pairwise separated, so crossing times differ.
fn distinct_config() -> impl Strategy<Value = SimConfig> {
    prop::collection::vec(0.3f64..3.0, 1..5)
        .prop_filter("separated signals", |mu| {
            mu.iter()
                .enumerate()
                .all(|(i, x)| mu[i + 1..].iter().all(|y| (x - y).abs() > 0.1))
        })
        .prop_map(|mu| {
            let sigma = vec![0.1; mu.len()];
            SimConfig::new(mu.len() + 1, &mu, &sigma).unwrap()
        })
}

proptest! {
    #[test]
    fn descent_count_ignores_affine_rescaling(
        values in prop::collection::vec(-10.0f64..10.0, 2..80),
        scale in 0.01f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        let base = phenomenology::count_descents(&LossCurve::new(values.clone())).unwrap();
        let moved: Vec<f64> = values.iter().map(|v| scale * v + shift).collect();
        let rescaled = phenomenology::count_descents(&LossCurve::new(moved)).unwrap();
        prop_assert_eq!(base.descents, rescaled.descents);
    }

    #[test]
    fn a_reversed_increasing_curve_has_one_descent(
        steps in prop::collection::vec(1e-3f64..1.0, 1..60),
        start in -5.0f64..5.0,
    ) {
        let mut values: Vec<f64> = steps
            .iter()
            .scan(start, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .collect();
        values.insert(0, start);
        values.reverse();
        let report = phenomenology::count_descents(&LossCurve::new(values)).unwrap();
        prop_assert_eq!(report.descents, 1);
    }

    #[test]
    fn closed_form_learns_in_order_of_signal(config in distinct_config(), rho in 0.5f64..0.95) {
        let a = sim::build_covariance(&config).unwrap().a();
        let slowest = (0..config.s).map(|k| a[k]).fold(f64::INFINITY, f64::min);
        let horizon = 1.2 * one_layer::time_to_fraction(slowest, rho).unwrap();
        let traj = closed_form_run(&config, horizon, 2001);
        let dt = traj.times[1];
        let result = phenomenology::learning_order(&traj, &config, rho).unwrap();
        let mut expected: Vec<usize> = (0..config.s).collect();
        expected.sort_by(|x, y| a[*y].total_cmp(&a[*x]));
        prop_assert_eq!(&result.order, &expected);
        for (k, t) in result.order.iter().zip(&result.crossing_times) {
            let exact = one_layer::time_to_fraction(a[*k], rho).unwrap();
            let t = t.unwrap();
            prop_assert!(t >= exact - 1e-9 && t <= exact + dt + 1e-9, "k={} t={} exact={}", k, t, exact);
        }
    }

    #[test]
    fn closed_form_losses_respect_the_lattice(
        mu in prop::collection::vec(0.1f64..3.0, 1..6),
        sigma in 0.0f64..1.0,
        horizon in 0.5f64..30.0,
    ) {
        let config = SimConfig::new(mu.len(), &mu, &vec![sigma; mu.len()]).unwrap();
        let traj = closed_form_run(&config, horizon, 40);
        let snapshots: Vec<(f64, Matrix)> = traj.times.iter().cloned().zip(traj.w_series.iter().cloned()).collect();
        let result = phenomenology::lattice_losses(&snapshots, &config).unwrap();
        prop_assert!(result.violations.is_empty(), "{:?}", result.violations.first());
        prop_assert_eq!(result.comparable_pairs, 3usize.pow(mu.len() as u32) - (1 << mu.len()));
    }

    #[test]
    fn closed_form_slows_down(config in distinct_config(), window in 1usize..5) {
        let traj = closed_form_run(&config, 3.0, 100);
        let profile = phenomenology::slowdown_profile(&traj, window).unwrap();
        prop_assert_eq!(profile.len(), 100 - window);
        for (k, pair) in profile.windows(2).enumerate() {
            prop_assert!(pair[1] < pair[0], "speed rises at sample {}", k + 1);
        }
    }
}

#[test]
fn log_spaced_indices_cover_the_run() {
    let picks = phenomenology::log_spaced_indices(5001, 200);
    assert_eq!(picks[0], 0);
    assert_eq!(*picks.last().unwrap(), 5000);
    assert!(picks.windows(2).all(|p| p[0] < p[1]));
    assert!(picks.len() <= 200);
    assert_eq!(phenomenology::log_spaced_indices(10, 200), (0..10).collect::<Vec<_>>());
}

#[test]
fn failure_mode_flags_a_suppressed_major_entry() {
    let a = simlab::sim::CovarianceSpectrum::diagonal(&[1.0, 1.0]);
    let x_hat = simlab::linalg::Vector::from_vec(vec![1.0, 1.0]);
    let mut traj = Trajectory::new(ModelKind::TwoLayerW, Some(0.01), false);
    for (t, w11) in [(0.0, 0.02), (1.0, 0.004), (2.0, 0.3)] {
        let w = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, w11]);
        traj.push(t, w, &a, &x_hat, None).unwrap();
    }
    let trapped = phenomenology::detect_failure_mode(&traj, 0.01, 2).unwrap();
    assert_eq!(trapped.len(), 1);
    assert_eq!(trapped[0].index, 1);
    assert_eq!(trapped[0].kind, phenomenology::TrapKind::ExitBelow);
    assert_eq!(trapped[0].step, 1.0);
}
