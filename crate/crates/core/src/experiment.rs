//! Experiment files: a flat TOML table describing data, model,
//! initialization, optional theory constants and the analyses to run.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::io::{self, TrajectoryMeta};
use crate::linalg::Matrix;
use crate::one_layer::{self, EulerIntegrator};
use crate::phenomenology::{
    self, DescentReport, LatticeResult, LearningOrder, LossCurve, TrappedEntry, DEFAULT_DELTA, DEFAULT_WINDOW,
};
use crate::sim::{self, CovarianceSpectrum, Dataset, SimConfig};
use crate::theory::{self, TheoryConstants, VerificationReport};
use crate::two_layer::{self, InitSpec, ModelKind, RecordOptions, SignMode, Trajectory, TwoLayerConfig};

/// Streams mixed into the master seed so that the dataset, the
/// initialization and the rotation draw independent random numbers.
pub const DATASET_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
pub const INIT_STREAM: u64 = 0xc2b2_ae3d_27d4_eb4f;
pub const ROTATION_STREAM: u64 = 0x1656_67b1_9e37_79f9;

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSource {
    /// `A = diag(a)` from the cluster parameters.
    #[default]
    Population,
    /// Second moment of a sampled dataset.
    Empirical,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    Zero,
    Identity,
    Uniform,
    Gaussian,
    Spiked,
}

/// How the test-loss curve is sampled before counting descents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveSampling {
    /// Every recorded sample.
    #[default]
    Linear,
    /// `descent_points` geometrically spaced samples.
    Log,
}

fn one() -> usize {
    1
}

fn default_window() -> usize {
    DEFAULT_WINDOW
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

/// The experiment file as written on disk. Sequences `mu` and `sigma` list
/// the informative coordinates only; their length is `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub d: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    #[serde(default = "one")]
    pub n: usize,
    #[serde(default)]
    pub include_origin_cluster: bool,
    #[serde(default)]
    pub rotate: bool,
    #[serde(default)]
    pub covariance: CovarianceSource,

    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,

    pub horizon: Option<f64>,
    pub points: Option<usize>,
    pub euler_step: Option<f64>,

    pub eta: Option<f64>,
    pub steps: Option<usize>,
    pub d_prime: Option<usize>,
    #[serde(default)]
    pub init: InitKind,
    pub omega: Option<f64>,
    pub beta: Option<f64>,
    #[serde(default)]
    pub signs: SignMode,
    pub tau: Option<f64>,
    pub spike: Option<f64>,
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default)]
    pub record_terms: bool,

    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    #[serde(rename = "P")]
    pub p: Option<f64>,
    pub kappa: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub lambda: Option<f64>,

    #[serde(default)]
    pub descents: bool,
    #[serde(default = "default_window")]
    pub descent_window: usize,
    #[serde(default = "default_delta")]
    pub descent_delta: f64,
    #[serde(default)]
    pub descent_sampling: CurveSampling,
    pub descent_points: Option<usize>,
    #[serde(default)]
    pub order: bool,
    pub rho: Option<f64>,
    #[serde(default)]
    pub slowdown: bool,
    pub slowdown_window: Option<usize>,
    #[serde(default)]
    pub lattice: bool,
    pub lattice_epochs: Option<usize>,
    #[serde(default)]
    pub failure: bool,

    pub output_dir: Option<PathBuf>,
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneLayerSettings {
    pub horizon: f64,
    pub points: usize,
    pub euler_step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DescentSettings {
    pub window: usize,
    pub delta: f64,
    pub sampling: CurveSampling,
    /// Number of samples for log sampling.
    pub points: usize,
}

impl DescentSettings {
    /// Indices of the recorded samples the descent count is taken over.
    pub fn sample_indices(&self, len: usize) -> Vec<usize> {
        match self.sampling {
            CurveSampling::Linear => (0..len).collect(),
            CurveSampling::Log => phenomenology::log_spaced_indices(len, self.points),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Analyses {
    pub descents: Option<DescentSettings>,
    /// Fraction `ρ` for the learning order.
    pub order: Option<f64>,
    pub slowdown: Option<usize>,
    /// Number of evenly spaced samples at which the lattice is evaluated.
    pub lattice: Option<usize>,
    /// `ω` for failure-mode detection.
    pub failure: Option<f64>,
}

/// A validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub file: ExperimentFile,
    pub sim: SimConfig,
    pub covariance: CovarianceSource,
    pub model: ModelKind,
    pub init: InitSpec,
    pub one_layer: Option<OneLayerSettings>,
    pub two_layer: Option<TwoLayerConfig>,
    pub constants: Option<TheoryConstants>,
    pub lambda: Option<f64>,
    pub record_every: usize,
    pub record_terms: bool,
    pub analyses: Analyses,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
}

fn need(value: Option<f64>, name: &str, why: &str) -> Result<f64> {
    value.ok_or_else(|| SimError::Config(format!("{name} is required {why}")))
}

fn identity_block(rows: usize, cols: usize, s: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| if i == j && i < s { 1.0 } else { 0.0 })
}

impl ExperimentSpec {
    pub fn from_file(file: ExperimentFile) -> Result<Self> {
        let f = &file;
        let mut sim = SimConfig::new(f.d, &f.mu, &f.sigma)?;
        sim.n = f.n;
        sim.include_origin_cluster = f.include_origin_cluster;
        if f.rotate {
            sim.rotation_seed = Some(derive_seed(f.seed, ROTATION_STREAM));
        }
        sim.validate()?;
        if f.rotate && f.covariance == CovarianceSource::Population {
            return Err(SimError::Config(
                "rotated data has no diagonal population covariance; set covariance = \"empirical\"".into(),
            ));
        }
        if f.record_every == 0 {
            return Err(SimError::Config("record_every must be positive".into()));
        }

        let two_layer_model = matches!(f.model, ModelKind::TwoLayerW | ModelKind::TwoLayerU);
        let d_prime = f.d_prime.unwrap_or(f.d);
        let init_seed = derive_seed(f.seed, INIT_STREAM);
        let u_model = f.model == ModelKind::TwoLayerU;
        let init = match f.init {
            InitKind::Zero if u_model => InitSpec::ExplicitU(Matrix::zeros(f.d, d_prime)),
            InitKind::Zero => InitSpec::ExplicitW(Matrix::zeros(f.d, f.d)),
            InitKind::Identity if u_model => InitSpec::ExplicitU(identity_block(f.d, d_prime, sim.s)),
            InitKind::Identity => InitSpec::ExplicitW(identity_block(f.d, f.d, sim.s)),
            InitKind::Uniform if u_model => {
                return Err(SimError::Config(
                    "uniform init defines W only; two_layer_u needs gaussian, identity or zero".into(),
                ))
            }
            InitKind::Uniform => InitSpec::UniformMagnitude {
                omega: need(f.omega, "omega", "for uniform init")?,
                beta: need(f.beta, "beta", "for uniform init")?,
                sign_seed: init_seed,
                signs: f.signs,
            },
            InitKind::Gaussian => InitSpec::GaussianU {
                tau: need(f.tau, "tau", "for gaussian init")?,
                seed: init_seed,
            },
            InitKind::Spiked => InitSpec::SpikedGaussianU {
                spike: need(f.spike, "spike", "for spiked init")?,
                tau: need(f.tau, "tau", "for spiked init")?,
                seed: init_seed,
            },
        };

        let (one_layer, two_layer) = if two_layer_model {
            let why = "for two-layer models";
            let config = TwoLayerConfig {
                d: f.d,
                d_prime,
                eta: need(f.eta, "eta", why)?,
                steps: f
                    .steps
                    .ok_or_else(|| SimError::Config(format!("steps is required {why}")))?,
                init: init.clone(),
            };
            config.validate()?;
            (None, Some(config))
        } else {
            let settings = OneLayerSettings {
                horizon: need(f.horizon, "horizon", "for one-layer models")?,
                points: f.points.unwrap_or(201),
                euler_step: f.euler_step.unwrap_or(1e-3),
            };
            if !(settings.horizon > 0.0 && settings.horizon.is_finite()) || settings.points < 2 {
                return Err(SimError::Config("need horizon > 0 and points >= 2".into()));
            }
            (Some(settings), None)
        };

        let theory_fields = [f.alpha, f.gamma, f.k, f.p, f.kappa, f.c];
        let constants = if theory_fields.iter().all(Option::is_none) {
            None
        } else {
            if theory_fields.iter().any(Option::is_none) {
                return Err(SimError::Config(
                    "theory constants alpha, gamma, K, P, kappa, C must be given together".into(),
                ));
            }
            if f.model != ModelKind::TwoLayerW {
                return Err(SimError::Config(
                    "theory constants apply to two_layer_w runs only".into(),
                ));
            }
            if f.record_every != 1 {
                return Err(SimError::Config("verification needs record_every = 1".into()));
            }
            let why = "with theory constants";
            let c = TheoryConstants {
                alpha: f.alpha.unwrap(),
                gamma: f.gamma.unwrap(),
                beta: need(f.beta, "beta", why)?,
                omega: need(f.omega, "omega", why)?,
                k: f.k.unwrap(),
                p: f.p.unwrap(),
                kappa: f.kappa.unwrap(),
                c: f.c.unwrap(),
                eta: need(f.eta, "eta", why)?,
            };
            c.validate()?;
            Some(c)
        };
        let record_terms = f.record_terms || constants.is_some();
        if record_terms && (f.model != ModelKind::TwoLayerW || f.covariance != CovarianceSource::Population) {
            return Err(SimError::Config(
                "term records need two_layer_w with the population covariance".into(),
            ));
        }

        let analyses = Analyses {
            descents: f.descents.then_some(DescentSettings {
                window: f.descent_window,
                delta: f.descent_delta,
                sampling: f.descent_sampling,
                points: f.descent_points.unwrap_or(200),
            }),
            order: f.order.then(|| f.rho.unwrap_or(0.9)),
            slowdown: f.slowdown.then(|| f.slowdown_window.unwrap_or(10)),
            lattice: f.lattice.then(|| f.lattice_epochs.unwrap_or(50)),
            failure: if f.failure {
                if !two_layer_model {
                    return Err(SimError::Config("failure detection applies to two-layer runs".into()));
                }
                Some(need(f.omega, "omega", "for failure detection")?)
            } else {
                None
            },
        };
        if let Some(ds) = analyses.descents {
            if ds.window == 0 || !(ds.delta > 0.0 && ds.delta < 1.0) || ds.points < 2 {
                return Err(SimError::Config(
                    "need descent_window >= 1, 0 < descent_delta < 1 and descent_points >= 2".into(),
                ));
            }
        }
        if let Some(rho) = analyses.order {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(SimError::Config(format!("rho must lie in (0, 1], got {rho}")));
            }
        }
        if analyses.slowdown == Some(0) || matches!(analyses.lattice, Some(e) if e < 1) {
            return Err(SimError::Config(
                "slowdown_window and lattice_epochs must be positive".into(),
            ));
        }
        if analyses.lattice.is_some() && sim.s > phenomenology::MAX_LATTICE_S {
            return Err(SimError::LatticeTooLarge(sim.s));
        }

        Ok(ExperimentSpec {
            sim,
            covariance: f.covariance,
            model: f.model,
            init,
            one_layer,
            two_layer,
            constants,
            lambda: f.lambda,
            record_every: f.record_every,
            record_terms,
            analyses,
            seed: f.seed,
            output_dir: f.output_dir.clone(),
            file,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(ExperimentFile::load(path)?)
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut seeds = BTreeMap::from([
            ("dataset".to_string(), derive_seed(self.seed, DATASET_STREAM)),
            ("init".to_string(), derive_seed(self.seed, INIT_STREAM)),
        ]);
        if let Some(r) = self.sim.rotation_seed {
            seeds.insert("rotation".into(), r);
        }
        seeds
    }
}

/// Samples the training set of an experiment.
pub fn sample_data(spec: &ExperimentSpec) -> Result<Dataset> {
    sim::sample_dataset(&spec.sim, derive_seed(spec.seed, DATASET_STREAM))
}

/// The covariance the model trains on, with the dataset it came from.
pub fn covariance(spec: &ExperimentSpec) -> Result<(CovarianceSpectrum, Option<Dataset>)> {
    match spec.covariance {
        CovarianceSource::Population => Ok((sim::build_covariance(&spec.sim)?, None)),
        CovarianceSource::Empirical => {
            let data = sample_data(spec)?;
            Ok((sim::empirical_covariance(&data)?, Some(data)))
        }
    }
}

/// Runs the model and returns the recorded trajectory.
pub fn simulate(spec: &ExperimentSpec, a: &CovarianceSpectrum) -> Result<Trajectory> {
    let x_hat = spec.sim.x_hat();
    let d = spec.sim.d;
    match (spec.model, &spec.one_layer, &spec.two_layer) {
        (ModelKind::OneLayerAnalytic, Some(ol), _) => {
            let w0 = two_layer::initialize(&spec.init, d, d.max(spec.file.d_prime.unwrap_or(d)), None)?.w0;
            let mut traj = Trajectory::new(ModelKind::OneLayerAnalytic, None, false);
            for t in one_layer::time_grid(ol.horizon, ol.points) {
                let w = one_layer::analytic_solution_matrix(&w0, a, t)?;
                traj.push(t, w, a, &x_hat, None)?;
            }
            Ok(traj)
        }
        (ModelKind::OneLayerEuler, Some(ol), _) => {
            let w0 = two_layer::initialize(&spec.init, d, d.max(spec.file.d_prime.unwrap_or(d)), None)?.w0;
            let euler = EulerIntegrator::new(&w0, a, ol.euler_step, ol.horizon)?;
            let last = euler.steps();
            let mut traj = Trajectory::new(ModelKind::OneLayerEuler, None, false);
            for (k, (t, w)) in euler.enumerate() {
                if k % spec.record_every == 0 || k == last {
                    traj.push(t, w, a, &x_hat, None)?;
                }
            }
            Ok(traj)
        }
        (ModelKind::TwoLayerW | ModelKind::TwoLayerU, _, Some(tl)) => {
            let constraints = match spec.init {
                InitSpec::UniformMagnitude { .. } => spec.constants.as_ref(),
                _ => None,
            };
            let init = two_layer::initialize(&tl.init, tl.d, tl.d_prime, constraints)?;
            let opts = RecordOptions {
                x_hat: Some(x_hat),
                every: spec.record_every,
                terms: spec.record_terms,
            };
            let constants = spec.constants.as_ref();
            if spec.model == ModelKind::TwoLayerW {
                two_layer::simulate_w_recursion(&init.w0, a, tl.eta, tl.steps, constants, &opts)
            } else {
                let u0 = init
                    .u0
                    .ok_or_else(|| SimError::Config("two_layer_u needs an initialization with a U factor".into()))?;
                two_layer::simulate_u_descent(&u0, a, tl.eta, tl.steps, constants, &opts)
            }
        }
        _ => Err(SimError::Config("model settings are missing".into())),
    }
}

/// Samples at `count` evenly spaced recorded positions, endpoints included.
pub fn lattice_snapshots(traj: &Trajectory, count: usize) -> Vec<(f64, Matrix)> {
    let n = traj.len();
    if n == 0 {
        return vec![];
    }
    let count = count.clamp(1, n);
    let mut picks: Vec<usize> = if count == 1 {
        vec![n - 1]
    } else {
        (0..count)
            .map(|e| (e * (n - 1) + (count - 1) / 2) / (count - 1))
            .collect()
    };
    picks.dedup();
    picks
        .into_iter()
        .map(|k| (traj.times[k], traj.w_series[k].clone()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DescentOutput {
    pub curve: &'static str,
    pub settings: DescentSettings,
    pub count: usize,
    /// Times of the samples the count was taken over; segment indices
    /// refer to this list.
    pub sample_times: Vec<f64>,
    pub report: DescentReport,
}

/// Counts descents of the test-loss curve sampled as `settings` asks.
pub fn test_loss_descents(traj: &Trajectory, settings: &DescentSettings) -> Result<DescentOutput> {
    let picks = settings.sample_indices(traj.len());
    let values = picks.iter().map(|k| traj.test_loss[*k]).collect();
    let curve = LossCurve::with_params(values, settings.window, settings.delta);
    let report = phenomenology::count_descents(&curve)?;
    Ok(DescentOutput {
        curve: "loss_test",
        settings: *settings,
        count: report.descents,
        sample_times: picks.iter().map(|k| traj.times[*k]).collect(),
        report,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlowdownOutput {
    pub window: usize,
    pub profile: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FailureOutput {
    pub omega: f64,
    pub trapped: Vec<TrappedEntry>,
}

/// Results of the analyses requested by an experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AnalysisResults {
    pub descents: Option<DescentOutput>,
    pub order: Option<LearningOrder>,
    pub slowdown: Option<SlowdownOutput>,
    pub lattice: Option<LatticeResult>,
    pub failure: Option<FailureOutput>,
    pub verification: Option<VerificationReport>,
}

/// Runs every requested analysis; independent analyses run on separate
/// threads.
pub fn analyze(spec: &ExperimentSpec, traj: &Trajectory, a: &CovarianceSpectrum) -> Result<AnalysisResults> {
    let an = &spec.analyses;
    std::thread::scope(|scope| {
        let descents = an
            .descents
            .map(|settings| scope.spawn(move || test_loss_descents(traj, &settings)));
        let verification = spec.constants.as_ref().map(|c| {
            scope.spawn(move || -> Result<VerificationReport> {
                theory::verify_trajectory(traj, c, a.as_diagonal()?, spec.lambda)
            })
        });
        let lattice = an
            .lattice
            .map(|epochs| phenomenology::lattice_losses(&lattice_snapshots(traj, epochs), &spec.sim));
        let order = an
            .order
            .map(|rho| phenomenology::learning_order(traj, &spec.sim, rho))
            .transpose()?;
        let slowdown = an
            .slowdown
            .map(|window| {
                phenomenology::slowdown_profile(traj, window).map(|profile| SlowdownOutput { window, profile })
            })
            .transpose()?;
        let failure = an
            .failure
            .map(|omega| {
                phenomenology::detect_failure_mode(traj, omega, spec.sim.s)
                    .map(|trapped| FailureOutput { omega, trapped })
            })
            .transpose()?;
        Ok(AnalysisResults {
            descents: descents
                .map(|h| h.join().expect("descent thread panicked"))
                .transpose()?,
            verification: verification
                .map(|h| h.join().expect("verification thread panicked"))
                .transpose()?,
            lattice: lattice.transpose()?,
            order,
            slowdown,
            failure,
        })
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub samples: usize,
    pub final_loss_pop: f64,
    pub final_loss_test: f64,
    pub descents: Option<usize>,
    pub verification_passed: Option<bool>,
}

/// Simulates, analyzes and writes every artifact of an experiment to
/// `out_dir`.
pub fn run(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunSummary> {
    let (a, data) = covariance(spec)?;
    let traj = simulate(spec, &a)?;
    let results = analyze(spec, &traj, &a)?;

    std::fs::create_dir_all(out_dir)?;
    let mut files = vec![];
    if let Some(data) = &data {
        let path = out_dir.join("dataset.csv");
        io::write_dataset_csv(BufWriter::new(File::create(&path)?), data)?;
        files.push(path);
    }
    let meta = TrajectoryMeta {
        model: spec.model,
        eta: traj.eta,
        d: spec.sim.d,
        s: spec.sim.s,
        a: a.as_diagonal().ok().map(|v| v.as_slice().to_vec()),
        x_hat: spec.sim.x_hat().as_slice().to_vec(),
        seed: spec.seed,
        seeds: spec.seeds(),
        constants: spec.constants.clone(),
        spec: serde_json::to_value(&spec.file)?,
    };
    let traj_path = out_dir.join("trajectory.csv");
    io::save_trajectory(&traj_path, &traj, &meta)?;
    files.push(traj_path.clone());
    files.push(io::meta_path_for(&traj_path));

    let mut emit = |name: &str, value: serde_json::Value| -> Result<()> {
        let path = out_dir.join(name);
        io::write_json(&path, &value)?;
        files.push(path);
        Ok(())
    };
    if let Some(v) = &results.verification {
        emit("verification.json", serde_json::to_value(v)?)?;
    }
    if let Some(v) = &results.descents {
        emit("descents.json", serde_json::to_value(v)?)?;
    }
    if let Some(v) = &results.order {
        emit("order.json", serde_json::to_value(v)?)?;
    }
    if let Some(v) = &results.slowdown {
        emit("slowdown.json", serde_json::to_value(v)?)?;
    }
    if let Some(v) = &results.lattice {
        emit("lattice.json", serde_json::to_value(v)?)?;
    }
    if let Some(v) = &results.failure {
        emit("failure.json", serde_json::to_value(v)?)?;
    }

    Ok(RunSummary {
        output_dir: out_dir.to_path_buf(),
        files,
        samples: traj.len(),
        final_loss_pop: *traj.pop_loss.last().expect("trajectory is never empty"),
        final_loss_test: *traj.test_loss.last().expect("trajectory is never empty"),
        descents: results.descents.as_ref().map(|d| d.count),
        verification_passed: results.verification.as_ref().map(VerificationReport::passed),
    })
}
