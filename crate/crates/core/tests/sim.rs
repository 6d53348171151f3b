use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simlab::linalg::{Matrix, Vector};
use simlab::sim::{self, CovarianceSpectrum, SimConfig};

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn random_matrix(d: usize, seed: u64, scale: f64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(d, d, |_, _| rng.random_range(-scale..scale))
}

proptest! {
    #[test]
    fn noiseless_spectrum_is_mu_squared_over_s(
        mu in prop::collection::vec(0.0f64..10.0, 1..6),
        extra in 0usize..3,
        origin in any::<bool>(),
    ) {
        let s = mu.len();
        let mut config = SimConfig::new(s + extra, &mu, &vec![0.0; s]).unwrap();
        config.include_origin_cluster = origin;
        let a = sim::build_covariance(&config).unwrap().a();
        let clusters = if origin { s + 1 } else { s } as f64;
        for p in 0..s + extra {
            let expected = if p < s { mu[p] * mu[p] / clusters } else { 0.0 };
            prop_assert_eq!(a[p], expected);
        }
    }

    #[test]
    fn rotation_leaves_the_population_loss_unchanged(
        seed in any::<u64>(),
        w_seed in any::<u64>(),
        mu in prop::collection::vec(0.1f64..3.0, 1..4),
        sigma in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let s = mu.len();
        let d = s + 1;
        let config = SimConfig::new(d, &mu, &sigma[..s]).unwrap();
        let a = sim::build_covariance(&config).unwrap();
        let rotated = SimConfig { rotation_seed: Some(seed), ..config };
        let r = rotated.rotation().unwrap();
        let rotated_a = CovarianceSpectrum::EmpiricalSymmetric(&r * a.matrix() * r.transpose());
        let w = random_matrix(d, w_seed, 1.5);
        let plain = sim::population_loss(&w, &a).unwrap();
        let turned = sim::population_loss(&(&r * &w * r.transpose()), &rotated_a).unwrap();
        prop_assert!((plain - turned).abs() <= 1e-10, "{} vs {}", plain, turned);
    }
}

#[test]
fn empirical_covariance_converges_to_the_true_spectrum() {
    let config = SimConfig {
        n: 2500,
        ..SimConfig::new(3, &[1.0, 2.0], &[0.3, 0.5]).unwrap()
    };
    let truth = sim::build_covariance(&config).unwrap().matrix();
    let trials = 200;
    let (mut within, mut total) = (0, 0);
    for seed in 0..trials {
        let data = sim::sample_dataset(&config, seed).unwrap();
        assert_eq!(data.len(), 5000);
        let CovarianceSpectrum::EmpiricalSymmetric(m) = sim::empirical_covariance(&data).unwrap() else {
            panic!("expected a dense estimate");
        };
        for i in 0..3 {
            for j in i..3 {
                let products: Vec<f64> = data.points.iter().map(|x| x[i] * x[j]).collect();
                let (_, se) = mean_and_se(&products);
                total += 1;
                if (m[(i, j)] - truth[(i, j)]).abs() <= 5.0 * se {
                    within += 1;
                }
            }
        }
    }
    assert!(within as f64 >= 0.99 * total as f64, "{within}/{total} within 5 SE");
}

#[test]
fn population_loss_matches_monte_carlo() {
    let config = SimConfig {
        n: 20_000,
        ..SimConfig::new(4, &[1.0, 2.0, 0.5], &[0.2, 0.4, 0.1]).unwrap()
    };
    let a = sim::build_covariance(&config).unwrap();
    let data = sim::sample_dataset(&config, 17).unwrap();
    for w_seed in 0..5 {
        let w = random_matrix(4, w_seed, 1.0);
        let losses: Vec<f64> = data.points.iter().map(|x| sim::point_loss(&w, x).unwrap()).collect();
        let (mc, se) = mean_and_se(&losses);
        let exact = sim::population_loss(&w, &a).unwrap();
        assert!(
            (mc - exact).abs() <= 3.0 * se,
            "W seed {w_seed}: exact {exact}, MC {mc} ± {se}"
        );
    }
}

#[test]
fn origin_cluster_population_loss_uses_all_clusters() {
    let config = SimConfig {
        n: 20_000,
        include_origin_cluster: true,
        ..SimConfig::new(2, &[1.5, 1.0], &[0.3, 0.2]).unwrap()
    };
    let a = sim::build_covariance(&config).unwrap();
    let data = sim::sample_dataset(&config, 3).unwrap();
    assert_eq!(data.len(), 60_000);
    let w = Matrix::from_row_slice(2, 2, &[0.4, 0.1, -0.2, 0.7]);
    let losses: Vec<f64> = data.points.iter().map(|x| sim::point_loss(&w, x).unwrap()).collect();
    let (mc, se) = mean_and_se(&losses);
    let exact = sim::population_loss(&w, &a).unwrap();
    assert!((mc - exact).abs() <= 3.0 * se, "exact {exact}, MC {mc} ± {se}");
}

#[test]
fn rotated_points_keep_their_norms() {
    let config = SimConfig {
        n: 10,
        rotation_seed: Some(4),
        ..SimConfig::new(3, &[1.0, 2.0], &[0.1, 0.1]).unwrap()
    };
    let plain = sim::sample_dataset(
        &SimConfig {
            rotation_seed: None,
            ..config.clone()
        },
        9,
    )
    .unwrap();
    let turned = sim::sample_dataset(&config, 9).unwrap();
    for (x, y) in plain.points.iter().zip(&turned.points) {
        assert!((x.norm() - y.norm()).abs() < 1e-12);
    }
    let x_hat: Vector = config.x_hat();
    assert!((x_hat.norm() - 5f64.sqrt()).abs() < 1e-12);
}
