//! Gradient flow of the one-layer model `f(W; x) = Wx` on the transformed
//! loss `½‖(W - I)A^{1/2}‖_F²`.
//!
//! With `A = diag(a)` every column `i` of `W` relaxes independently:
//! `W(t)_{ki} = e^{-a_i t} W0_{ki} + [k = i, a_i > 0](1 - e^{-a_i t})`.
//! Columns with `a_i = 0` receive no gradient and stay frozen at `W0`.

use crate::error::{Result, SimError};
use crate::linalg::{self, Matrix, Vector};
use crate::sim::CovarianceSpectrum;

/// Output at a point split into the growth and noise contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputDecomposition {
    pub growth: Vector,
    pub noise: Vector,
    pub total: Vector,
}

fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(SimError::OutOfRange(format!("time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// Closed-form `W(t)` for diagonal `A`.
pub fn analytic_solution_matrix(w0: &Matrix, a: &CovarianceSpectrum, t: f64) -> Result<Matrix> {
    let a = a.as_diagonal()?;
    linalg::ensure_square(w0, a.len())?;
    check_time(t)?;
    let d = a.len();
    let decay = a.map(|ai| (-ai * t).exp());
    Ok(Matrix::from_fn(d, d, |k, i| {
        let relaxed = decay[i] * w0[(k, i)];
        if k == i && a[i] > 0.0 {
            relaxed + (1.0 - decay[i])
        } else {
            relaxed
        }
    }))
}

/// `f(W(t); z)` split into the growth term `[a_k > 0](1 - e^{-a_k t}) z_k`
/// and the noise term `sum_i e^{-a_i t} w_{ki}(0) z_i`.
///
/// The noise sum runs over every coordinate, so `total` equals
/// `analytic_solution_matrix(..) * z` for arbitrary `z`; for `z` supported
/// on the informative directions it reduces to the sum over the first `s`.
pub fn analytic_output(w0: &Matrix, a: &CovarianceSpectrum, z: &Vector, t: f64) -> Result<OutputDecomposition> {
    let a = a.as_diagonal()?;
    linalg::ensure_square(w0, a.len())?;
    if z.len() != a.len() {
        return Err(SimError::Dimension {
            expected: a.len(),
            got: z.len(),
        });
    }
    check_time(t)?;
    let d = a.len();
    let decay = a.map(|ai| (-ai * t).exp());
    let growth = Vector::from_fn(d, |k, _| if a[k] > 0.0 { (1.0 - decay[k]) * z[k] } else { 0.0 });
    let noise = Vector::from_fn(d, |k, _| (0..d).map(|i| decay[i] * w0[(k, i)] * z[i]).sum());
    let total = &growth + &noise;
    Ok(OutputDecomposition { growth, noise, total })
}

/// Explicit Euler steps of `W' = -(W - I)A`, yielding `(t, W)` starting at
/// `t = 0`. Accepts general symmetric `A`.
#[derive(Clone, Debug)]
pub struct EulerIntegrator {
    w: Matrix,
    a: Matrix,
    step: f64,
    index: usize,
    steps: usize,
}

impl EulerIntegrator {
    pub fn new(w0: &Matrix, a: &CovarianceSpectrum, step: f64, horizon: f64) -> Result<Self> {
        a.validate()?;
        linalg::ensure_square(w0, a.dim())?;
        if !(step > 0.0 && step.is_finite()) || !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SimError::OutOfRange(format!(
                "step and horizon must be positive, got step={step} horizon={horizon}"
            )));
        }
        let radius = a.max_eigenvalue();
        if step * radius >= 1.0 {
            return Err(SimError::UnstableStep { step, radius });
        }
        Ok(EulerIntegrator {
            w: w0.clone(),
            a: a.matrix(),
            step,
            index: 0,
            steps: (horizon / step).round() as usize,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Runs to the horizon and returns the final matrix.
    pub fn terminal(mut self) -> Matrix {
        while self.index < self.steps {
            self.advance();
        }
        self.w
    }

    fn advance(&mut self) {
        let d = self.w.nrows();
        let residual = &self.w - Matrix::identity(d, d);
        self.w -= (residual * &self.a) * self.step;
        self.index += 1;
    }
}

impl Iterator for EulerIntegrator {
    type Item = (f64, Matrix);

    fn next(&mut self) -> Option<Self::Item> {
        if self.index > self.steps {
            return None;
        }
        let out = (self.index as f64 * self.step, self.w.clone());
        if self.index == self.steps {
            self.index += 1;
        } else {
            self.advance();
        }
        Some(out)
    }
}

/// Every Euler iterate from `t = 0` to the horizon.
pub fn euler_reference(w0: &Matrix, a: &CovarianceSpectrum, step: f64, horizon: f64) -> Result<Vec<(f64, Matrix)>> {
    Ok(EulerIntegrator::new(w0, a, step, horizon)?.collect())
}

/// Time for the growth term of a direction with eigenvalue `a_k` to reach
/// the fraction `rho` of its target: `-ln(1 - rho) / a_k`.
pub fn time_to_fraction(a_k: f64, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(SimError::OutOfRange(format!("rho must lie in (0, 1), got {rho}")));
    }
    if a_k == 0.0 {
        return Err(SimError::NeverConverges);
    }
    if !(a_k > 0.0 && a_k.is_finite()) {
        return Err(SimError::OutOfRange(format!("a_k must be positive, got {a_k}")));
    }
    Ok(-(1.0 - rho).ln() / a_k)
}

/// Uniform time grid `0, dt, 2dt, .., horizon` with `points` samples.
pub fn time_grid(horizon: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![0.0];
    }
    let dt = horizon / (points - 1) as f64;
    (0..points).map(|k| k as f64 * dt).collect()
}
