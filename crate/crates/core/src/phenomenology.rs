//! Detectors for the qualitative behaviour of training runs: descents of the
//! test loss, the order in which coordinates are learned, slowdown near
//! convergence, monotonicity of losses over the lattice of test points, and
//! major entries that never get learned.

use serde::Serialize;

use crate::error::{Result, SimError};
use crate::linalg::Matrix;
use crate::sim::{point_loss, test_point, SimConfig, TestIndex};
use crate::two_layer::Trajectory;

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_DELTA: f64 = 0.05;
pub const MAX_LATTICE_S: usize = 16;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SIMLAB_THREADS";

pub fn worker_threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .map_or(available, |n| n.min(available))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossCurve {
    pub values: Vec<f64>,
    pub smoothing_window: usize,
    pub descent_threshold: f64,
}

impl LossCurve {
    pub fn new(values: Vec<f64>) -> Self {
        LossCurve {
            values,
            smoothing_window: DEFAULT_WINDOW,
            descent_threshold: DEFAULT_DELTA,
        }
    }

    pub fn with_params(values: Vec<f64>, window: usize, delta: f64) -> Self {
        LossCurve {
            values,
            smoothing_window: window,
            descent_threshold: delta,
        }
    }

    /// Centered moving average; windows are truncated at the ends. The
    /// window is capped at `len - 1` samples so that a short curve is never
    /// averaged into a constant.
    pub fn smoothed(&self) -> Vec<f64> {
        let n = self.values.len();
        let w = self.smoothing_window.min(n.saturating_sub(1)).max(1);
        let back = (w - 1) / 2;
        let ahead = w - 1 - back;
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        for v in &self.values {
            prefix.push(prefix.last().unwrap() + v);
        }
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(back);
                let hi = (i + ahead).min(n - 1);
                (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
            })
            .collect()
    }
}

/// A fall of the smoothed curve from `peak` to `trough` (sample indices).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Descent {
    pub peak: usize,
    pub trough: usize,
    pub drop: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DescentReport {
    pub descents: usize,
    pub segments: Vec<Descent>,
}

/// Counts falls larger than `δ·(max - min)` of the smoothed curve, requiring
/// a rise of the same size between consecutive falls.
pub fn count_descents(curve: &LossCurve) -> Result<DescentReport> {
    if curve.values.len() < 2 {
        return Err(SimError::OutOfRange("a loss curve needs at least two values".into()));
    }
    if curve.values.iter().any(|v| !v.is_finite()) {
        return Err(SimError::OutOfRange("loss curve has non-finite values".into()));
    }
    if !(curve.descent_threshold > 0.0 && curve.descent_threshold < 1.0) || curve.smoothing_window == 0 {
        return Err(SimError::OutOfRange(
            "descent threshold must lie in (0,1) and window be >= 1".into(),
        ));
    }
    let s = curve.smoothed();
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    });
    let h = curve.descent_threshold * (hi - lo);
    let mut segments = vec![];
    if h > 0.0 {
        let mut falling = false;
        let mut peak = 0;
        let mut trough = 0;
        for i in 1..s.len() {
            if falling {
                if s[i] < s[trough] {
                    trough = i;
                } else if s[i] - s[trough] > h {
                    segments.push(Descent {
                        peak,
                        trough,
                        drop: s[peak] - s[trough],
                    });
                    falling = false;
                    peak = i;
                }
            } else if s[i] > s[peak] {
                peak = i;
            } else if s[peak] - s[i] > h {
                falling = true;
                trough = i;
            }
        }
        if falling {
            segments.push(Descent {
                peak,
                trough,
                drop: s[peak] - s[trough],
            });
        }
    }
    Ok(DescentReport {
        descents: segments.len(),
        segments,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LearningOrder {
    /// Coordinates (0-based), earliest crossing first.
    pub order: Vec<usize>,
    /// First recorded time with `f_k >= ρ μ_k`, per entry of `order`.
    pub crossing_times: Vec<Option<f64>>,
    /// Pairs of coordinates crossing at the same recorded time.
    pub ties: Vec<(usize, usize)>,
}

/// Ranks coordinates by the first recorded time their output at `x̂`
/// reaches `ρ μ_k`. Unreached coordinates come last; ties keep index order.
pub fn learning_order(traj: &Trajectory, config: &SimConfig, rho: f64) -> Result<LearningOrder> {
    if traj.outputs.len() != traj.len() || traj.is_empty() {
        return Err(SimError::OutOfRange(
            "trajectory has no outputs at the test point".into(),
        ));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(SimError::OutOfRange(format!("rho must lie in (0,1], got {rho}")));
    }
    let coords: Vec<usize> = (0..config.s).filter(|k| config.mu[*k] != 0.0).collect();
    let crossing = |k: usize| {
        traj.outputs
            .iter()
            .position(|f| f[k] / config.mu[k] >= rho)
            .map(|idx| traj.times[idx])
    };
    let mut ranked: Vec<(usize, Option<f64>)> = coords.iter().map(|k| (*k, crossing(*k))).collect();
    ranked.sort_by(|x, y| match (x.1, y.1) {
        (Some(a), Some(b)) => a.total_cmp(&b),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let mut ties = vec![];
    for w in ranked.windows(2) {
        if let (Some(a), Some(b)) = (w[0].1, w[1].1) {
            if a == b {
                ties.push((w[0].0, w[1].0));
            }
        }
    }
    Ok(LearningOrder {
        order: ranked.iter().map(|r| r.0).collect(),
        crossing_times: ranked.iter().map(|r| r.1).collect(),
        ties,
    })
}

/// Up to `points` sample positions in `0..len`, geometrically spaced from 1
/// to `len - 1` after the initial sample, so that early and late phases of
/// a run get comparable resolution. Duplicates after rounding are dropped.
pub fn log_spaced_indices(len: usize, points: usize) -> Vec<usize> {
    if len == 0 || points == 0 {
        return vec![];
    }
    if len == 1 || points == 1 {
        return vec![0];
    }
    let last = (len - 1) as f64;
    let mut out = vec![0];
    for k in 0..points - 1 {
        let frac = if points == 2 {
            1.0
        } else {
            k as f64 / (points - 2) as f64
        };
        let idx = last.powf(frac).round() as usize;
        if out.last() != Some(&idx) {
            out.push(idx.min(len - 1));
        }
    }
    out
}

/// `‖f(t + window) - f(t)‖` over recorded samples.
pub fn slowdown_profile(traj: &Trajectory, window: usize) -> Result<Vec<f64>> {
    if traj.outputs.is_empty() {
        return Err(SimError::OutOfRange(
            "trajectory has no outputs at the test point".into(),
        ));
    }
    if window == 0 {
        return Err(SimError::OutOfRange("slowdown window must be positive".into()));
    }
    Ok(traj
        .outputs
        .iter()
        .zip(traj.outputs.iter().skip(window))
        .map(|(a, b)| (b - a).norm())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticeViolation {
    pub time: f64,
    pub lower: String,
    pub upper: String,
    pub loss_lower: f64,
    pub loss_upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticeResult {
    /// Index labels such as `"0101"`, in bit order.
    pub indices: Vec<String>,
    pub times: Vec<f64>,
    /// `losses[e][v]`: loss of test point `v` at the `e`-th time.
    pub losses: Vec<Vec<f64>>,
    pub violations: Vec<LatticeViolation>,
    pub comparable_pairs: usize,
}

fn lattice_epoch(
    time: f64,
    w: &Matrix,
    points: &[crate::linalg::Vector],
    labels: &[String],
) -> Result<(Vec<f64>, Vec<LatticeViolation>)> {
    let losses = points.iter().map(|z| point_loss(w, z)).collect::<Result<Vec<_>>>()?;
    let tol = 1e-9 * losses.iter().fold(0.0_f64, |m, v| m.max(*v));
    let mut violations = vec![];
    for v in 0..losses.len() {
        // Proper submasks of v are exactly the indices u with u ⪯ v, u ≠ v.
        let mut u = v;
        while u > 0 {
            u = (u - 1) & v;
            if losses[u] > losses[v] + tol {
                violations.push(LatticeViolation {
                    time,
                    lower: labels[u].clone(),
                    upper: labels[v].clone(),
                    loss_lower: losses[u],
                    loss_upper: losses[v],
                });
            }
        }
    }
    Ok((losses, violations))
}

/// Evaluates the loss at every test point `x̂^{(v)}` for each `(time, W)`
/// and lists comparable pairs `u ⪯ v` whose losses are out of order by more
/// than `1e-9` times the largest loss at that time.
pub fn lattice_losses(snapshots: &[(f64, Matrix)], config: &SimConfig) -> Result<LatticeResult> {
    let s = config.s;
    if s > MAX_LATTICE_S {
        return Err(SimError::LatticeTooLarge(s));
    }
    let count = 1usize << s;
    let indices: Vec<TestIndex> = (0..count).map(|b| TestIndex::from_bits(b as u32, s)).collect();
    let labels: Vec<String> = indices.iter().map(|v| v.label()).collect();
    let points = indices
        .iter()
        .map(|v| test_point(v, config))
        .collect::<Result<Vec<_>>>()?;

    let threads = worker_threads().min(snapshots.len()).max(1);
    let chunk = snapshots.len().div_ceil(threads).max(1);
    let results: Vec<Result<(Vec<f64>, Vec<LatticeViolation>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = snapshots
            .chunks(chunk)
            .map(|part| {
                let (points, labels) = (&points, &labels);
                scope.spawn(move || {
                    part.iter()
                        .map(|(t, w)| lattice_epoch(*t, w, points, labels))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("lattice worker panicked"))
            .collect()
    });

    let mut losses = Vec::with_capacity(snapshots.len());
    let mut violations = vec![];
    for r in results {
        let (l, v) = r?;
        losses.push(l);
        violations.extend(v);
    }
    Ok(LatticeResult {
        indices: labels,
        times: snapshots.iter().map(|(t, _)| *t).collect(),
        losses,
        violations,
        comparable_pairs: 3usize.pow(s as u32) - count,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapKind {
    /// Fell below `ω/2` before growing.
    ExitBelow,
    /// Terminal value below one half.
    TerminalBelowHalf,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrappedEntry {
    pub index: usize,
    pub kind: TrapKind,
    pub step: f64,
    pub terminal_value: f64,
}

/// Major entries `(i, i)`, `i < s`, that fall below `ω/2` or end below ½.
pub fn detect_failure_mode(traj: &Trajectory, omega: f64, s: usize) -> Result<Vec<TrappedEntry>> {
    let last = traj
        .last_w()
        .ok_or_else(|| SimError::OutOfRange("empty trajectory".into()))?;
    if s > last.nrows() {
        return Err(SimError::Dimension {
            expected: last.nrows(),
            got: s,
        });
    }
    let mut trapped = vec![];
    for i in 0..s {
        let terminal_value = last[(i, i)];
        let below = traj.w_series.iter().position(|w| w[(i, i)] < omega / 2.0);
        if let Some(idx) = below {
            trapped.push(TrappedEntry {
                index: i,
                kind: TrapKind::ExitBelow,
                step: traj.times[idx],
                terminal_value,
            });
        } else if terminal_value < 0.5 {
            trapped.push(TrappedEntry {
                index: i,
                kind: TrapKind::TerminalBelowHalf,
                step: *traj.times.last().unwrap(),
                terminal_value,
            });
        }
    }
    Ok(trapped)
}
