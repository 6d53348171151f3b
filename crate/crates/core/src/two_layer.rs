//! Symmetric two-layer linear model `f(U; x) = UUᵀx` with `U ∈ R^{d×d'}`.
//!
//! The Jacobian `W = UUᵀ` follows the finite-step recursion
//!
//! ```text
//! (W(t+1) - W(t)) / η = WA + AW - ½[AW² + W²A + 2WAW]
//! ```
//!
//! whose `(i, j)` entry splits into a growth term `G`, a suppression term `S`
//! and a noise term `N` (see [`decompose_entry`]). [`simulate_u_descent`]
//! runs the underlying gradient descent on `U` instead; the two agree to
//! first order in `η`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::linalg::{self, Matrix, Vector};
use crate::sim::{population_loss, CovarianceSpectrum};
use crate::theory::TheoryConstants;

/// Entries beyond this magnitude abort a simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Tolerance used when checking that an input `W` is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Retries allowed when drawing a PSD uniform-magnitude initialization.
pub const PSD_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TermTriple {
    pub g: f64,
    pub s: f64,
    pub n: f64,
}

impl TermTriple {
    /// `G - S - N`, the per-unit-step change of the entry.
    pub fn net(&self) -> f64 {
        self.g - self.s - self.n
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    #[default]
    Random,
    Positive,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitSpec {
    /// `|w_ij(0)|` uniform in `[ω, βω]` with seeded signs (diagonal kept
    /// positive), redrawn until the matrix is PSD.
    UniformMagnitude {
        omega: f64,
        beta: f64,
        sign_seed: u64,
        signs: SignMode,
    },
    /// `U` entries i.i.d. `N(0, τ²)`, `W = UUᵀ`.
    GaussianU {
        tau: f64,
        seed: u64,
    },
    /// First column of `U` i.i.d. `N(0, spike²)`, the remaining columns
    /// `N(0, τ²)`: a rank-one spike plus small isotropic noise.
    SpikedGaussianU {
        spike: f64,
        tau: f64,
        seed: u64,
    },
    ExplicitW(Matrix),
    ExplicitU(Matrix),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayerConfig {
    pub d: usize,
    pub d_prime: usize,
    pub eta: f64,
    pub steps: usize,
    pub init: InitSpec,
}

impl TwoLayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_prime < self.d {
            return Err(SimError::Config(format!(
                "d_prime ({}) must be >= d ({})",
                self.d_prime, self.d
            )));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(SimError::Config(format!("eta must be positive, got {}", self.eta)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Initialization {
    pub w0: Matrix,
    pub u0: Option<Matrix>,
}

/// Builds the initial Jacobian (and `U` when the scheme defines one).
/// When `constraints` are given, every `|w_ij(0)|` must lie in `[ω, βω]`.
pub fn initialize(
    spec: &InitSpec,
    d: usize,
    d_prime: usize,
    constraints: Option<&TheoryConstants>,
) -> Result<Initialization> {
    if d == 0 || d_prime < d {
        return Err(SimError::Config(format!(
            "need 0 < d <= d_prime, got d={d} d_prime={d_prime}"
        )));
    }
    let init = match spec {
        InitSpec::UniformMagnitude {
            omega,
            beta,
            sign_seed,
            signs,
        } => Initialization {
            w0: uniform_magnitude(d, *omega, *beta, *sign_seed, *signs)?,
            u0: None,
        },
        InitSpec::GaussianU { tau, seed } => {
            if !(*tau >= 0.0 && tau.is_finite()) {
                return Err(SimError::Config(format!("tau must be >= 0, got {tau}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let normal = Normal::new(0.0, *tau).expect("finite nonnegative tau");
            let u = Matrix::from_fn(d, d_prime, |_, _| normal.sample(&mut rng));
            Initialization {
                w0: &u * u.transpose(),
                u0: Some(u),
            }
        }
        InitSpec::SpikedGaussianU { spike, tau, seed } => {
            if !(*spike >= 0.0 && spike.is_finite() && *tau >= 0.0 && tau.is_finite()) {
                return Err(SimError::Config(format!(
                    "spike and tau must be >= 0, got spike={spike} tau={tau}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let big = Normal::new(0.0, *spike).expect("finite nonnegative spike");
            let small = Normal::new(0.0, *tau).expect("finite nonnegative tau");
            let u = Matrix::from_fn(d, d_prime, |_, j| {
                if j == 0 {
                    big.sample(&mut rng)
                } else {
                    small.sample(&mut rng)
                }
            });
            Initialization {
                w0: &u * u.transpose(),
                u0: Some(u),
            }
        }
        InitSpec::ExplicitW(w) => {
            linalg::ensure_square(w, d)?;
            linalg::ensure_symmetric(w, SYMMETRY_TOL)?;
            Initialization {
                w0: w.clone(),
                u0: None,
            }
        }
        InitSpec::ExplicitU(u) => {
            if u.nrows() != d || u.ncols() != d_prime {
                return Err(SimError::Dimension {
                    expected: d * d_prime,
                    got: u.nrows() * u.ncols(),
                });
            }
            Initialization {
                w0: u * u.transpose(),
                u0: Some(u.clone()),
            }
        }
    };
    if let Some(c) = constraints {
        let lo = c.omega;
        let hi = c.beta * c.omega;
        if let Some(v) = init.w0.iter().find(|v| v.abs() < lo || v.abs() > hi) {
            return Err(SimError::Initialization(format!(
                "|w| = {:e} outside [omega, beta*omega] = [{lo:e}, {hi:e}]",
                v.abs()
            )));
        }
    }
    Ok(init)
}

fn uniform_magnitude(d: usize, omega: f64, beta: f64, seed: u64, signs: SignMode) -> Result<Matrix> {
    if !(omega > 0.0 && omega.is_finite()) || !(beta >= 1.0 && beta.is_finite()) {
        return Err(SimError::Config(format!(
            "uniform magnitude needs omega > 0 and beta >= 1, got omega={omega} beta={beta}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..PSD_RETRIES {
        let mut w = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let mag = if beta > 1.0 {
                    rng.random_range(omega..=beta * omega)
                } else {
                    omega
                };
                let sign = if i == j || signs == SignMode::Positive || rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                };
                w[(i, j)] = sign * mag;
                w[(j, i)] = sign * mag;
            }
        }
        if linalg::min_eigenvalue(&w) >= 0.0 {
            return Ok(w);
        }
    }
    Err(SimError::Initialization(format!(
        "no PSD draw in {PSD_RETRIES} attempts; increase beta so the positive diagonal dominates"
    )))
}

/// Right-hand side of the recursion, `WA + AW - ½[AW² + W²A + 2WAW]`.
pub fn drift(w: &Matrix, a: &CovarianceSpectrum) -> Result<Matrix> {
    linalg::ensure_square(w, a.dim())?;
    linalg::ensure_symmetric(w, SYMMETRY_TOL)?;
    Ok(match a {
        CovarianceSpectrum::TrueDiagonal(a) => drift_diagonal(w, a),
        CovarianceSpectrum::EmpiricalSymmetric(m) => drift_dense(w, m),
    })
}

/// Entrywise form for diagonal `A`:
/// `w_ij(a_i + a_j) - ½ sum_k w_ki w_kj (a_i + a_j + 2a_k)`. Evaluates the
/// upper triangle and mirrors it, so the result is exactly symmetric.
pub(crate) fn drift_diagonal(w: &Matrix, a: &Vector) -> Matrix {
    let d = a.len();
    let ws = w.as_slice();
    let a = a.as_slice();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        let col_i = &ws[i * d..(i + 1) * d];
        for j in i..d {
            let col_j = &ws[j * d..(j + 1) * d];
            let aij = a[i] + a[j];
            let mut quad = 0.0;
            for k in 0..d {
                quad += col_i[k] * col_j[k] * (aij + 2.0 * a[k]);
            }
            let v = col_j[i] * aij - 0.5 * quad;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

fn drift_dense(w: &Matrix, a: &Matrix) -> Matrix {
    let wa = w * a;
    let aw = a * w;
    let w2 = w * w;
    let quad = a * &w2 + &w2 * a + (&wa * w) * 2.0;
    let out = wa + aw - quad * 0.5;
    (&out + out.transpose()) * 0.5
}

/// `G`, `S` and `N` of entry `(i, j)` under diagonal `A`:
///
/// * `G = w_ij (a_i + a_j)`
/// * `S = ½ w_ij [w_ii (3a_i + a_j) + [i ≠ j] w_jj (3a_j + a_i)]`
/// * `N = ½ sum_{k ∉ {i, j}} w_ki w_kj (a_i + a_j + 2a_k)`
pub fn decompose_entry(w: &Matrix, a: &CovarianceSpectrum, i: usize, j: usize) -> Result<TermTriple> {
    let a = a.as_diagonal()?;
    linalg::ensure_square(w, a.len())?;
    if i >= a.len() || j >= a.len() {
        return Err(SimError::OutOfRange(format!(
            "entry ({i}, {j}) outside {}x{}",
            a.len(),
            a.len()
        )));
    }
    Ok(terms(w, a, i, j))
}

pub(crate) fn terms(w: &Matrix, a: &Vector, i: usize, j: usize) -> TermTriple {
    let d = a.len();
    let ws = w.as_slice();
    let a = a.as_slice();
    let (col_i, col_j) = (&ws[i * d..(i + 1) * d], &ws[j * d..(j + 1) * d]);
    let wij = col_j[i];
    let aij = a[i] + a[j];
    let g = wij * aij;
    let mut s = col_i[i] * (3.0 * a[i] + a[j]);
    if i != j {
        s += col_j[j] * (3.0 * a[j] + a[i]);
    }
    let s = 0.5 * wij * s;
    let mut n = 0.0;
    for k in 0..d {
        if k != i && k != j {
            n += tiny_product(col_i[k], col_j[k]) * (aij + 2.0 * a[k]);
        }
    }
    TermTriple { g, s, n: 0.5 * n }
}

/// `x·y`, or zero when both factors are below `1e-154` and the product would
/// land in the subnormal range.
#[inline]
fn tiny_product(x: f64, y: f64) -> f64 {
    const EDGE: f64 = 1e-154;
    if x.abs() < EDGE && y.abs() < EDGE {
        0.0
    } else {
        x * y
    }
}

/// All `d²` term triples in row-major order.
pub fn decompose_all(w: &Matrix, a: &Vector) -> Vec<TermTriple> {
    let d = a.len();
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            out.push(terms(w, a, i, j));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    OneLayerAnalytic,
    OneLayerEuler,
    TwoLayerW,
    TwoLayerU,
}

/// Time-indexed Jacobians with losses, outputs at the test point and
/// optional per-entry term records.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub model: ModelKind,
    /// Step index (discrete models) or continuous time (one-layer flow).
    pub times: Vec<f64>,
    pub w_series: Vec<Matrix>,
    /// Terms driving the update out of each recorded `W`, row-major over
    /// all entries.
    pub decomposition: Option<Vec<Vec<TermTriple>>>,
    pub pop_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
    /// Model output at the test point.
    pub outputs: Vec<Vector>,
    pub eta: Option<f64>,
}

impl Trajectory {
    pub fn new(model: ModelKind, eta: Option<f64>, with_terms: bool) -> Self {
        Trajectory {
            model,
            times: vec![],
            w_series: vec![],
            decomposition: with_terms.then(Vec::new),
            pop_loss: vec![],
            test_loss: vec![],
            outputs: vec![],
            eta,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.w_series.first().map_or(0, |w| w.nrows())
    }

    pub fn last_w(&self) -> Option<&Matrix> {
        self.w_series.last()
    }

    /// Appends a sample; losses and output are derived from `w`.
    pub fn push(
        &mut self,
        time: f64,
        w: Matrix,
        a: &CovarianceSpectrum,
        x_hat: &Vector,
        terms: Option<Vec<TermTriple>>,
    ) -> Result<()> {
        let out = &w * x_hat;
        self.test_loss.push(0.5 * (&out - x_hat).norm_squared());
        self.pop_loss.push(population_loss(&w, a)?);
        self.outputs.push(out);
        self.times.push(time);
        self.w_series.push(w);
        if let (Some(dec), Some(t)) = (self.decomposition.as_mut(), terms) {
            dec.push(t);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct RecordOptions {
    /// Test point at which outputs and the test loss are recorded;
    /// defaults to the all-ones vector on the support of `A`.
    pub x_hat: Option<Vector>,
    /// Record every `every`-th step (the final step is always recorded).
    pub every: usize,
    /// Record the `G/S/N` terms of every entry (W-recursion, diagonal `A`).
    pub terms: bool,
}

impl Default for RecordOptions {
    fn default() -> Self {
        RecordOptions {
            x_hat: None,
            every: 1,
            terms: false,
        }
    }
}

fn check_step_size(eta: f64, a: &CovarianceSpectrum, constants: Option<&TheoryConstants>) -> Result<()> {
    let radius = a.max_eigenvalue();
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(SimError::OutOfRange(format!("eta must be positive, got {eta}")));
    }
    let stable = match constants {
        Some(c) => eta * 9.0 * c.gamma * c.alpha <= 1.0,
        None => eta * radius < 0.5,
    };
    if stable {
        Ok(())
    } else {
        Err(SimError::UnstableStep { step: eta, radius })
    }
}

fn check_divergence(step: usize, m: &Matrix) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
                return Err(SimError::Divergence { step, i, j, value: v });
            }
        }
    }
    Ok(())
}

fn default_x_hat(a: &CovarianceSpectrum) -> Vector {
    a.a().map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Stepper for the W-recursion, exposed so long runs can be checked
/// without storing the whole trajectory.
#[derive(Clone, Debug)]
pub struct WRecursion {
    w: Matrix,
    a: CovarianceSpectrum,
    eta: f64,
    step: usize,
}

impl WRecursion {
    pub fn new(w0: &Matrix, a: &CovarianceSpectrum, eta: f64, constants: Option<&TheoryConstants>) -> Result<Self> {
        a.validate()?;
        linalg::ensure_square(w0, a.dim())?;
        linalg::ensure_symmetric(w0, SYMMETRY_TOL)?;
        check_step_size(eta, a, constants)?;
        // Work on the exactly symmetric part; the recursion then stays
        // exactly symmetric.
        let w = (w0 + w0.transpose()) * 0.5;
        Ok(WRecursion {
            w,
            a: a.clone(),
            eta,
            step: 0,
        })
    }

    pub fn w(&self) -> &Matrix {
        &self.w
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// `G/S/N` of every entry at the current state (diagonal `A` only).
    pub fn terms(&self) -> Result<Vec<TermTriple>> {
        Ok(decompose_all(&self.w, self.a.as_diagonal()?))
    }

    /// Advances one step and returns the new state.
    ///
    /// Entries that decay below the smallest normal `f64` are set to zero:
    /// suppressed entries otherwise linger as subnormals, which are an
    /// order of magnitude slower to compute with.
    pub fn advance(&mut self) -> Result<&Matrix> {
        let d = match &self.a {
            CovarianceSpectrum::TrueDiagonal(a) => drift_diagonal(&self.w, a),
            CovarianceSpectrum::EmpiricalSymmetric(m) => drift_dense(&self.w, m),
        };
        self.w.zip_apply(&d, |w, dw| {
            let next = *w + self.eta * dw;
            *w = if next.abs() < f64::MIN_POSITIVE { 0.0 } else { next };
        });
        self.step += 1;
        check_divergence(self.step, &self.w)?;
        Ok(&self.w)
    }
}

/// Iterates `W ← W + η·drift(W, A)` for `steps` steps.
pub fn simulate_w_recursion(
    w0: &Matrix,
    a: &CovarianceSpectrum,
    eta: f64,
    steps: usize,
    constants: Option<&TheoryConstants>,
    opts: &RecordOptions,
) -> Result<Trajectory> {
    let mut rec = WRecursion::new(w0, a, eta, constants)?;
    if opts.terms {
        a.as_diagonal()?;
    }
    let x_hat = opts.x_hat.clone().unwrap_or_else(|| default_x_hat(a));
    let every = opts.every.max(1);
    let mut traj = Trajectory::new(ModelKind::TwoLayerW, Some(eta), opts.terms);
    for t in 0..=steps {
        if t % every == 0 || t == steps {
            let terms = if opts.terms { Some(rec.terms()?) } else { None };
            traj.push(t as f64, rec.w().clone(), a, &x_hat, terms)?;
        }
        if t < steps {
            rec.advance()?;
        }
    }
    Ok(traj)
}

/// `½[(W - I)A + A(W - I)]U`: the U-space gradient whose induced Jacobian
/// update `-Ugᵀ - gUᵀ` equals the W-recursion drift.
pub fn u_gradient(u: &Matrix, a: &Matrix) -> Matrix {
    let d = u.nrows();
    let w = u * u.transpose();
    let r = w - Matrix::identity(d, d);
    let sym = (&r * a + a * &r) * 0.5;
    sym * u
}

/// Gradient descent on `U`, recording `W = UUᵀ`.
pub fn simulate_u_descent(
    u0: &Matrix,
    a: &CovarianceSpectrum,
    eta: f64,
    steps: usize,
    constants: Option<&TheoryConstants>,
    opts: &RecordOptions,
) -> Result<Trajectory> {
    a.validate()?;
    if u0.nrows() != a.dim() {
        return Err(SimError::Dimension {
            expected: a.dim(),
            got: u0.nrows(),
        });
    }
    check_step_size(eta, a, constants)?;
    let am = a.matrix();
    let x_hat = opts.x_hat.clone().unwrap_or_else(|| default_x_hat(a));
    let every = opts.every.max(1);
    let mut traj = Trajectory::new(ModelKind::TwoLayerU, Some(eta), false);
    let mut u = u0.clone();
    for t in 0..=steps {
        if t % every == 0 || t == steps {
            traj.push(t as f64, &u * u.transpose(), a, &x_hat, None)?;
        }
        if t < steps {
            let g = u_gradient(&u, &am);
            u -= g * eta;
            check_divergence(t + 1, &u)?;
        }
    }
    Ok(traj)
}
