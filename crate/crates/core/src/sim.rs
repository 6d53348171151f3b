//! The SIM data model: configuration, dataset sampling, covariance spectra,
//! test points and the two loss functions shared by every dynamics module.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::linalg::{self, Matrix, Vector};

/// Data-generating process: `s` Gaussian clusters, cluster `p` centered at
/// `mu[p] * e_p` with per-axis standard deviations `sigma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub d: usize,
    pub s: usize,
    pub n: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(default)]
    pub include_origin_cluster: bool,
    #[serde(default)]
    pub rotation_seed: Option<u64>,
}

impl SimConfig {
    /// Builds a config with `mu` and `sigma` given for the first `s`
    /// coordinates; both are zero-padded to length `d`.
    pub fn new(d: usize, mu: &[f64], sigma: &[f64]) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(SimError::Dimension {
                expected: mu.len(),
                got: sigma.len(),
            });
        }
        let s = mu.len();
        let pad = |v: &[f64]| {
            let mut out = v.to_vec();
            out.resize(d.max(s), 0.0);
            out
        };
        let config = SimConfig {
            d,
            s,
            n: 1,
            mu: pad(mu),
            sigma: pad(sigma),
            include_origin_cluster: false,
            rotation_seed: None,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.s == 0 || self.s > self.d {
            return bad(format!("s must satisfy 1 <= s <= d, got s={} d={}", self.s, self.d));
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        for (name, v) in [("mu", &self.mu), ("sigma", &self.sigma)] {
            if v.len() != self.d {
                return bad(format!("{name} must have length d={}, got {}", self.d, v.len()));
            }
            if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
                return bad(format!("{name} entries must be finite and nonnegative, got {x}"));
            }
            if v[self.s..].iter().any(|x| *x != 0.0) {
                return bad(format!("{name} entries beyond s must be zero"));
            }
        }
        Ok(())
    }

    /// Number of clusters the uniform cluster draw ranges over.
    pub fn cluster_count(&self) -> usize {
        self.s + usize::from(self.include_origin_cluster)
    }

    /// Seeded Haar rotation applied to every train/test point, if enabled.
    pub fn rotation(&self) -> Option<Matrix> {
        self.rotation_seed.map(|seed| linalg::haar_orthogonal(self.d, seed))
    }

    /// The out-of-distribution test point `sum_p mu_p e_p`.
    pub fn x_hat(&self) -> Vector {
        let ones = TestIndex(vec![1; self.s]);
        test_point(&ones, self).expect("all-ones index has length s")
    }
}

/// Second moment of the data: the true diagonal spectrum `a`, or a full
/// symmetric matrix estimated from samples.
#[derive(Clone, Debug, PartialEq)]
pub enum CovarianceSpectrum {
    TrueDiagonal(Vector),
    EmpiricalSymmetric(Matrix),
}

impl CovarianceSpectrum {
    pub fn diagonal(a: &[f64]) -> Self {
        CovarianceSpectrum::TrueDiagonal(Vector::from_column_slice(a))
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceSpectrum::TrueDiagonal(a) => a.len(),
            CovarianceSpectrum::EmpiricalSymmetric(m) => m.nrows(),
        }
    }

    /// The vector `a`: the spectrum itself or the diagonal of the matrix.
    pub fn a(&self) -> Vector {
        match self {
            CovarianceSpectrum::TrueDiagonal(a) => a.clone(),
            CovarianceSpectrum::EmpiricalSymmetric(m) => m.diagonal(),
        }
    }

    pub fn as_diagonal(&self) -> Result<&Vector> {
        match self {
            CovarianceSpectrum::TrueDiagonal(a) => Ok(a),
            CovarianceSpectrum::EmpiricalSymmetric(_) => Err(SimError::NotDiagonal),
        }
    }

    pub fn matrix(&self) -> Matrix {
        match self {
            CovarianceSpectrum::TrueDiagonal(a) => Matrix::from_diagonal(a),
            CovarianceSpectrum::EmpiricalSymmetric(m) => m.clone(),
        }
    }

    /// Largest eigenvalue (the spectrum is PSD, so also the spectral radius).
    pub fn max_eigenvalue(&self) -> f64 {
        match self {
            CovarianceSpectrum::TrueDiagonal(a) => a.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            CovarianceSpectrum::EmpiricalSymmetric(m) => linalg::spectral_radius_sym(m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CovarianceSpectrum::TrueDiagonal(a) => {
                if let Some(v) = a.iter().find(|v| !v.is_finite() || **v < 0.0) {
                    return Err(SimError::Config(format!("spectrum entries must be >= 0, got {v}")));
                }
            }
            CovarianceSpectrum::EmpiricalSymmetric(m) => {
                if m.nrows() != m.ncols() {
                    return Err(SimError::Dimension {
                        expected: m.nrows(),
                        got: m.ncols(),
                    });
                }
                let asym = linalg::asymmetry(m);
                if asym > 1e-12 {
                    return Err(SimError::Asymmetric(asym));
                }
                let min = linalg::min_eigenvalue(m);
                if min < -1e-10 {
                    return Err(SimError::Config(format!(
                        "covariance is not PSD (min eigenvalue {min:e})"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sampled training set.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub points: Vec<Vector>,
    /// Cluster of each point; the optional origin cluster has index `s`.
    pub cluster_of: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }
}

/// Binary index `v` selecting which cluster centers are summed into a test
/// point.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestIndex(pub Vec<u8>);

impl TestIndex {
    pub fn from_bits(bits: u32, s: usize) -> Self {
        TestIndex((0..s).map(|p| ((bits >> p) & 1) as u8).collect())
    }

    pub fn bits(&self) -> u32 {
        self.0
            .iter()
            .enumerate()
            .fold(0, |acc, (p, v)| acc | (u32::from(*v) << p))
    }

    /// Componentwise order `self ⪯ other`.
    pub fn precedes(&self, other: &TestIndex) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(u, v)| u <= v)
    }

    pub fn label(&self) -> String {
        self.0.iter().map(|v| char::from(b'0' + v)).collect()
    }
}

/// True covariance `a_p = sigma_p^2 + mu_p^2 / c` with `c` the cluster count
/// (`s`, or `s + 1` when the origin cluster is present).
pub fn build_covariance(config: &SimConfig) -> Result<CovarianceSpectrum> {
    config.validate()?;
    if config.rotation_seed.is_some() {
        return Err(SimError::RotatedConfig);
    }
    let clusters = config.cluster_count() as f64;
    let a = Vector::from_fn(config.d, |p, _| {
        if p < config.s {
            config.sigma[p].powi(2) + config.mu[p].powi(2) / clusters
        } else {
            0.0
        }
    });
    Ok(CovarianceSpectrum::TrueDiagonal(a))
}

/// Draws `n` points per cluster. Deterministic for a given seed; the
/// rotation (if any) is seeded separately by `config.rotation_seed`.
pub fn sample_dataset(config: &SimConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = config.rotation();
    let total = config.n * config.cluster_count();
    let mut points = Vec::with_capacity(total);
    let mut cluster_of = Vec::with_capacity(total);
    for cluster in 0..config.cluster_count() {
        for _ in 0..config.n {
            let mut x = Vector::from_fn(config.d, |k, _| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                config.sigma[k] * noise
            });
            if cluster < config.s {
                x[cluster] += config.mu[cluster];
            }
            if let Some(r) = &rotation {
                x = r * x;
            }
            points.push(x);
            cluster_of.push(cluster);
        }
    }
    Ok(Dataset { points, cluster_of })
}

/// Mean of `x xᵀ` over the dataset.
pub fn empirical_covariance(dataset: &Dataset) -> Result<CovarianceSpectrum> {
    if dataset.is_empty() {
        return Err(SimError::EmptyDataset);
    }
    let d = dataset.dim();
    let mut acc = Matrix::zeros(d, d);
    for x in &dataset.points {
        acc.ger(1.0, x, x, 1.0);
    }
    acc /= dataset.len() as f64;
    // ger accumulates both triangles identically, but keep the result
    // exactly symmetric regardless of summation order.
    let acc = (&acc + acc.transpose()) * 0.5;
    Ok(CovarianceSpectrum::EmpiricalSymmetric(acc))
}

/// `sum_p v_p mu_p e_p`, rotated when the config carries a rotation.
pub fn test_point(v: &TestIndex, config: &SimConfig) -> Result<Vector> {
    if v.0.len() != config.s {
        return Err(SimError::Dimension {
            expected: config.s,
            got: v.0.len(),
        });
    }
    if v.0.iter().any(|b| *b > 1) {
        return Err(SimError::Config("test index entries must be 0 or 1".into()));
    }
    let x = Vector::from_fn(
        config.d,
        |k, _| {
            if k < config.s && v.0[k] == 1 {
                config.mu[k]
            } else {
                0.0
            }
        },
    );
    Ok(match config.rotation() {
        Some(r) => r * x,
        None => x,
    })
}

/// `½ tr((W - I) A (W - I)ᵀ)`, i.e. `½‖(W - I) A^{1/2}‖_F²`.
pub fn population_loss(w: &Matrix, a: &CovarianceSpectrum) -> Result<f64> {
    let d = a.dim();
    linalg::ensure_square(w, d)?;
    let loss = match a {
        CovarianceSpectrum::TrueDiagonal(a) => {
            let mut acc = 0.0;
            for k in 0..d {
                for i in 0..d {
                    let e = w[(k, i)] - if k == i { 1.0 } else { 0.0 };
                    acc += e * e * a[i];
                }
            }
            0.5 * acc
        }
        CovarianceSpectrum::EmpiricalSymmetric(m) => {
            let e = w - DMatrix::identity(d, d);
            0.5 * (&e * m * e.transpose()).trace()
        }
    };
    Ok(loss.max(0.0))
}

/// `½‖Wz - z‖²`.
pub fn point_loss(w: &Matrix, z: &Vector) -> Result<f64> {
    linalg::ensure_square(w, z.len())?;
    Ok(0.5 * (w * z - z).norm_squared())
}
