use proptest::prelude::*;
use simlab::linalg::{self, Matrix, Vector};
use simlab::one_layer;
use simlab::sim::{self, CovarianceSpectrum, SimConfig};

fn spectrum_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..5.0], d)
}

fn matrix_strategy(d: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-scale..scale, d * d).prop_map(move |v| Matrix::from_vec(d, d, v))
}

proptest! {
    #[test]
    fn growth_plus_noise_is_the_output(
        (a, w0, z) in (1usize..6).prop_flat_map(|d| (
            spectrum_strategy(d),
            matrix_strategy(d, 1.0),
            prop::collection::vec(-3.0f64..3.0, d),
        )),
        t in 0.0f64..20.0,
    ) {
        let spectrum = CovarianceSpectrum::diagonal(&a);
        let z = Vector::from_vec(z);
        let out = one_layer::analytic_output(&w0, &spectrum, &z, t).unwrap();
        let direct = one_layer::analytic_solution_matrix(&w0, &spectrum, t).unwrap() * &z;
        for k in 0..a.len() {
            prop_assert!((out.growth[k] + out.noise[k] - out.total[k]).abs() <= 1e-12);
            prop_assert!((out.total[k] - direct[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn growth_term_never_decreases(
        a in spectrum_strategy(4),
        z in prop::collection::vec(0.0f64..3.0, 4),
    ) {
        let spectrum = CovarianceSpectrum::diagonal(&a);
        let z = Vector::from_vec(z);
        let w0 = Matrix::zeros(4, 4);
        let mut previous = Vector::zeros(4);
        for t in one_layer::time_grid(10.0, 200) {
            let growth = one_layer::analytic_output(&w0, &spectrum, &z, t).unwrap().growth;
            for k in 0..4 {
                prop_assert!(growth[k] >= previous[k], "coordinate {} at t = {}", k, t);
            }
            previous = growth;
        }
    }

    #[test]
    fn noise_is_bounded_by_the_initial_contribution(
        (a, w0, z) in (1usize..6).prop_flat_map(|d| (
            spectrum_strategy(d),
            matrix_strategy(d, 0.5),
            prop::collection::vec(-3.0f64..3.0, d),
        )),
        t in 0.0f64..50.0,
    ) {
        let spectrum = CovarianceSpectrum::diagonal(&a);
        let z = Vector::from_vec(z);
        let noise = one_layer::analytic_output(&w0, &spectrum, &z, t).unwrap().noise;
        for k in 0..a.len() {
            let bound: f64 = (0..a.len()).map(|i| (w0[(k, i)] * z[i]).abs()).sum();
            prop_assert!(noise[k].abs() <= bound * (1.0 + 1e-15));
        }
    }

    #[test]
    fn speed_from_zero_strictly_decreases(
        mu in prop::collection::vec(0.2f64..3.0, 1..4),
        sigma in prop::collection::vec(0.0f64..0.5, 3),
    ) {
        let s = mu.len();
        let config = SimConfig::new(s + 1, &mu, &sigma[..s]).unwrap();
        let a = sim::build_covariance(&config).unwrap();
        let z = config.x_hat();
        let w0 = Matrix::zeros(s + 1, s + 1);
        let grid = one_layer::time_grid(3.0, 100);
        let outputs: Vec<Vector> = grid
            .iter()
            .map(|t| one_layer::analytic_output(&w0, &a, &z, *t).unwrap().total)
            .collect();
        let speeds: Vec<f64> = outputs.windows(2).map(|p| (&p[1] - &p[0]).norm()).collect();
        for (k, pair) in speeds.windows(2).enumerate() {
            prop_assert!(pair[1] < pair[0], "speed rises at sample {}", k + 1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn euler_tracks_the_closed_form(
        mu in prop::collection::vec(0.2f64..2.0, 4),
        sigma in prop::collection::vec(0.0f64..0.5, 4),
        w0 in matrix_strategy(8, 0.01),
    ) {
        let config = SimConfig::new(8, &mu, &sigma).unwrap();
        let a = sim::build_covariance(&config).unwrap();
        let exact = one_layer::analytic_solution_matrix(&w0, &a, 10.0).unwrap();
        let euler = one_layer::EulerIntegrator::new(&w0, &a, 1e-3, 10.0).unwrap().terminal();
        prop_assert!(linalg::max_abs(&(exact - euler)) <= 1e-2);
    }
}

#[test]
fn euler_reference_includes_both_endpoints() {
    let a = CovarianceSpectrum::diagonal(&[1.0, 0.0]);
    let path = one_layer::euler_reference(&Matrix::zeros(2, 2), &a, 0.25, 1.0).unwrap();
    assert_eq!(path.len(), 5);
    assert_eq!(path[0].0, 0.0);
    assert_eq!(path[4].0, 1.0);
    // Four steps of w <- w + 0.25 (1 - w) from zero.
    assert!((path[4].1[(0, 0)] - (1.0 - 0.75f64.powi(4))).abs() < 1e-15);
    assert_eq!(path[4].1[(1, 1)], 0.0);
}

#[test]
fn euler_handles_a_dense_covariance() {
    let m = Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let a = CovarianceSpectrum::EmpiricalSymmetric(m);
    let w = one_layer::EulerIntegrator::new(&Matrix::zeros(2, 2), &a, 1e-3, 40.0)
        .unwrap()
        .terminal();
    assert!(linalg::max_abs(&(w - Matrix::identity(2, 2))) < 1e-6);
}

#[test]
fn time_to_fraction_inverts_the_growth_curve() {
    for a_k in [0.1, 0.5025, 2.0025, 7.0] {
        let t = one_layer::time_to_fraction(a_k, 0.9).unwrap();
        assert!((1.0 - (-a_k * t).exp() - 0.9).abs() < 1e-12);
    }
    assert!(one_layer::time_to_fraction(0.0, 0.9).is_err());
    assert!(one_layer::time_to_fraction(1.0, 1.0).is_err());
}
