//! Assumptions on the two-layer recursion and the lemma bounds that follow
//! from them, evaluated literally along a trajectory.
//!
//! Every bound is reported per entry with a signed margin
//! (`bound - observed`); a step is a violation when its margin is below
//! `-SLACK`. Lemma checks always run. When the assumptions fail, or the
//! time range a lemma speaks about is empty, the report is marked
//! [`LemmaStatus::Vacuous`] and its violations carry no theoretical weight.
//!
//! Index convention: the ordering conditions are stated for pairs where the
//! dominant direction (strictly larger `a`) plays the role of `a_i`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::linalg::{Matrix, Vector};
use crate::two_layer::{TermTriple, Trajectory};

/// Additive slack absorbing floating-point round-off in every lemma check.
pub const SLACK: f64 = 1e-12;

/// Diagonal level at which the suppression lemma engages (strict `>`).
pub const SUPPRESSION_LEVEL: f64 = 0.8;

/// Constants of the assumptions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub omega: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub kappa: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub eta: f64,
}

impl TheoryConstants {
    /// Upper edge of the initial phase, `Pβω`.
    pub fn phase_threshold(&self) -> f64 {
        self.p * self.beta * self.omega
    }

    /// `2Pγαdβ²ω²`.
    pub fn noise_bound(&self, d: usize) -> f64 {
        2.0 * self.p * self.gamma * self.alpha * d as f64 * self.beta.powi(2) * self.omega.powi(2)
    }

    /// `T₁ = log P / (2ηγακ)`.
    pub fn uniform_initial_horizon(&self) -> f64 {
        self.p.ln() / (2.0 * self.eta * self.gamma * self.alpha * self.kappa)
    }

    /// `T₁^{(i)} = log(Pβω / w_ii(0)) / (2η a_i κ)`.
    pub fn diagonal_initial_horizon(&self, a_i: f64, w_ii0: f64) -> f64 {
        (self.phase_threshold() / w_ii0).ln() / (2.0 * self.eta * a_i * self.kappa)
    }

    pub fn diagonal_cap(&self) -> f64 {
        1.0 + 2.0 / self.k
    }

    pub fn update_cap(&self) -> f64 {
        1.0 / self.k
    }

    pub fn terminal_floor(&self) -> f64 {
        1.0 - 2.0 / self.k
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("omega", self.omega),
            ("K", self.k),
            ("P", self.p),
            ("kappa", self.kappa),
            ("C", self.c),
            ("eta", self.eta),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("constant {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Tightest `(α, γ, β, ω)` satisfying the bounded-initialization assumption.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FittedConstants {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
    pub omega: f64,
    /// `γ = 1` or `β = 1`: the assumption asks for strict `> 1`.
    pub at_boundary: bool,
}

pub fn fit_constants(a: &Vector, w0: &Matrix) -> Result<FittedConstants> {
    if a.is_empty() || w0.is_empty() {
        return Err(SimError::NoValidConstants("empty input".into()));
    }
    if let Some(v) = a.iter().find(|v| v.is_nan() || **v <= 0.0) {
        return Err(SimError::NoValidConstants(format!(
            "spectrum entry {v} is not positive"
        )));
    }
    if w0.iter().any(|v| *v == 0.0 || !v.is_finite()) {
        return Err(SimError::NoValidConstants("initialization has a zero entry".into()));
    }
    let alpha = a.min();
    let gamma = a.max() / alpha;
    let omega = w0.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let beta = w0.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / omega;
    Ok(FittedConstants {
        alpha,
        gamma,
        beta,
        omega,
        at_boundary: gamma <= 1.0 || beta <= 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl Relation {
    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Relation::Le => lhs <= rhs,
            Relation::Lt => lhs < rhs,
            Relation::Ge => lhs >= rhs,
            Relation::Gt => lhs > rhs,
        }
    }
}

/// One literal inequality `lhs <relation> rhs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub assumption_id: String,
    pub assumption: u8,
    pub lhs: f64,
    pub relation: Relation,
    pub rhs: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    /// Whether `a` is strictly descending in index order.
    pub descending: bool,
    /// Signal-gap condition under the raw index convention (`a_i - 3a_j`
    /// for `i > j`); informational only.
    pub raw_convention_pass: bool,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn assumption_pass(&self, n: u8) -> bool {
        self.checks.iter().filter(|c| c.assumption == n).all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

struct ReportBuilder(Vec<AssumptionCheck>);

impl ReportBuilder {
    fn add(&mut self, assumption: u8, id: impl Into<String>, lhs: f64, relation: Relation, rhs: f64) {
        self.0.push(AssumptionCheck {
            assumption_id: id.into(),
            assumption,
            lhs,
            relation,
            rhs,
            pass: relation.holds(lhs, rhs),
        });
    }
}

type IndexPairs = Vec<(usize, usize)>;

/// Ordered pairs `(dominant, other)` with `a[dominant] > a[other]`; pairs of
/// equal eigenvalues have no dominant index and are returned in `ties`.
fn canonical_pairs(a: &Vector) -> (IndexPairs, IndexPairs) {
    let mut pairs = vec![];
    let mut ties = vec![];
    for x in 0..a.len() {
        for y in (x + 1)..a.len() {
            if a[x] > a[y] {
                pairs.push((x, y));
            } else if a[y] > a[x] {
                pairs.push((y, x));
            } else {
                ties.push((x, y));
            }
        }
    }
    (pairs, ties)
}

/// Evaluates every displayed inequality of the five assumptions. `w0`, when
/// given, adds the initialization bounds `ω <= |w_ij(0)| <= βω`.
pub fn check_assumptions(c: &TheoryConstants, a: &Vector, d: usize, w0: Option<&Matrix>) -> AssumptionReport {
    let mut r = ReportBuilder(vec![]);
    let ga = c.gamma * c.alpha;

    // Bounded initialization and signal strength.
    r.add(1, "alpha>0", c.alpha, Relation::Gt, 0.0);
    r.add(1, "gamma>1", c.gamma, Relation::Gt, 1.0);
    r.add(1, "beta>1", c.beta, Relation::Gt, 1.0);
    for (k, ak) in a.iter().enumerate() {
        r.add(1, format!("alpha<=a[{k}]"), c.alpha, Relation::Le, *ak);
        r.add(1, format!("a[{k}]<=gamma*alpha"), *ak, Relation::Le, ga);
    }
    if let Some(w0) = w0 {
        let min = w0.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let max = w0.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        r.add(1, "omega<=min|w(0)|", c.omega, Relation::Le, min);
        r.add(1, "max|w(0)|<=beta*omega", max, Relation::Le, c.beta * c.omega);
    }

    // Small step size.
    r.add(2, "K>=20", c.k, Relation::Ge, 20.0);
    r.add(
        2,
        "eta<=1/(9*K*gamma*alpha)",
        c.eta,
        Relation::Le,
        1.0 / (9.0 * c.k * ga),
    );

    // Small initial phase.
    r.add(3, "P*omega*beta<=0.4", c.phase_threshold(), Relation::Le, 0.4);

    // Small initialization.
    let slack = (c.kappa - 1.0).min(1.0 - c.kappa.powf(-0.5));
    let omega_max = (slack / (c.p * c.k * c.gamma * d as f64 * c.beta.powi(2))).min(1.0 / (2.0 * c.beta).sqrt());
    r.add(4, "omega<=min{..}", c.omega, Relation::Le, omega_max);
    r.add(4, "kappa>1.1", c.kappa, Relation::Gt, 1.1);
    r.add(4, "kappa<=1+K/(2C)", c.kappa, Relation::Le, 1.0 + 0.5 * c.k / c.c);
    r.add(4, "P>=2", c.p, Relation::Ge, 2.0);

    // Significant signal strength difference.
    let ratio_bound = c.p.ln() / (10.0 * c.kappa.powi(2) * (1.0 / c.phase_threshold()).ln() + (c.p * c.beta).ln());
    r.add(5, "C>1", c.c, Relation::Gt, 1.0);
    let (pairs, ties) = canonical_pairs(a);
    for (i, j) in pairs {
        r.add(
            5,
            format!("(a[{i}]+a[{j}])/(2a[{i}])<=bound"),
            (a[i] + a[j]) / (2.0 * a[i]),
            Relation::Le,
            ratio_bound,
        );
        r.add(
            5,
            format!("a[{i}]-3a[{j}]>=alpha/C"),
            a[i] - 3.0 * a[j],
            Relation::Ge,
            c.alpha / c.c,
        );
    }
    for (x, y) in ties {
        // Equal eigenvalues cannot satisfy the strict gap in either order.
        r.add(
            5,
            format!("a[{x}]-3a[{y}]>=alpha/C"),
            a[x] - 3.0 * a[y],
            Relation::Ge,
            c.alpha / c.c,
        );
    }

    let descending = a.as_slice().windows(2).all(|p| p[0] > p[1]);
    let raw_convention_pass = (0..a.len())
        .flat_map(|i| (0..i).map(move |j| (i, j)))
        .all(|(i, j)| a[i] - 3.0 * a[j] >= c.alpha / c.c);
    AssumptionReport {
        checks: r.0,
        descending,
        raw_convention_pass,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Initial,
    Left,
}

/// Initial phase iff `|w| <= Pβω`.
pub fn classify_phase(w: f64, c: &TheoryConstants) -> Phase {
    if w.abs() <= c.phase_threshold() {
        Phase::Initial
    } else {
        Phase::Left
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    /// `|N_ij(t)| <= 2Pγαdβ²ω²`.
    NoiseBound,
    /// `|w_ij(t)| <= |w_ij(0)| exp[ηt(a_i + a_j)κ]`.
    UpperGrowth,
    /// `|w_ij(t)| >= |w_ij(0)| exp[ηt(a_i + a_j)/κ]` for `t <= T₁`.
    LowerInitialGrowth,
    /// Every entry in the initial phase for `t <= T₁`.
    InitialPhaseUntilT1,
    /// `w_ij(t) w_ij(0) > 0` for `t <= T₁`.
    SignPreservation,
    /// `w_ii(t) >= w_ii(0) exp(2ηt a_i/κ)` and in the initial phase for `t <= T₁^{(i)}`.
    LowerDiagonalGrowth,
    /// `w_ii(t₀ + t) >= w_ii(t₀) exp[2ηt a_i (1 - λ)/κ]` while `w_ii < λ`.
    AfterInitialGrowth,
    /// `0 <= w_ii(t) <= 1 + 2/K`.
    DiagonalCap,
    /// `|w_ii(t + 1) - w_ii(t)| <= 1/K`.
    DiagonalUpdate,
    /// `w_ii` stays `>= 1 - 2/K` once it gets there.
    TerminalFloor,
    /// `|w_ij(t')| <= max{|w_ij(t₀)|, ω}` after `w_ii(t₀) > 0.8`.
    Suppression,
    /// Off-diagonal entries stay in the initial phase for all time.
    OffDiagonalInitialPhase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaStatus {
    Checked,
    Vacuous,
}

/// Margins of one entry over the steps where its bound applies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryCheck {
    pub entry: [usize; 2],
    pub first_violation_step: Option<usize>,
    pub violations: usize,
    /// Steps with a negative raw margin (before slack).
    pub raw_negative: usize,
    pub min_margin: Option<f64>,
    pub checked_range: Option<[usize; 2]>,
    pub checked_steps: usize,
}

impl EntryCheck {
    fn new(i: usize, j: usize) -> Self {
        EntryCheck {
            entry: [i, j],
            first_violation_step: None,
            violations: 0,
            raw_negative: 0,
            min_margin: None,
            checked_range: None,
            checked_steps: 0,
        }
    }

    fn record(&mut self, step: usize, margin: f64) {
        self.checked_steps += 1;
        match &mut self.checked_range {
            Some(range) => range[1] = step,
            None => self.checked_range = Some([step, step]),
        }
        let margin = if margin.is_nan() {
            -f64::MAX
        } else {
            margin.clamp(-f64::MAX, f64::MAX)
        };
        match &mut self.min_margin {
            Some(m) if *m <= margin => {}
            slot => *slot = Some(margin),
        }
        if margin < 0.0 {
            self.raw_negative += 1;
            if margin < -SLACK {
                self.violations += 1;
                self.first_violation_step.get_or_insert(step);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: LemmaId,
    pub status: LemmaStatus,
    pub vacuous_reason: Option<String>,
    pub entries: Vec<EntryCheck>,
    /// Derived times such as `T1`, `T1[i]`, `t0[i]`.
    pub derived: BTreeMap<String, f64>,
}

impl LemmaReport {
    pub fn violations(&self) -> usize {
        self.entries.iter().map(|e| e.violations).sum()
    }

    pub fn raw_negative(&self) -> usize {
        self.entries.iter().map(|e| e.raw_negative).sum()
    }

    pub fn first_violation(&self) -> Option<(usize, [usize; 2])> {
        self.entries
            .iter()
            .filter_map(|e| e.first_violation_step.map(|s| (s, e.entry)))
            .min()
    }

    pub fn checked_steps(&self) -> usize {
        self.entries.iter().map(|e| e.checked_steps).sum()
    }

    pub fn min_margin(&self) -> Option<f64> {
        self.entries.iter().filter_map(|e| e.min_margin).reduce(f64::min)
    }

    pub fn is_vacuous(&self) -> bool {
        self.status == LemmaStatus::Vacuous
    }
}

/// Inputs shared by all lemma checks.
#[derive(Clone, Debug)]
pub struct LemmaContext {
    pub constants: TheoryConstants,
    pub a: Vector,
    pub assumptions: AssumptionReport,
}

impl LemmaContext {
    pub fn new(constants: &TheoryConstants, a: &Vector, w0: &Matrix) -> Self {
        LemmaContext {
            assumptions: check_assumptions(constants, a, a.len(), Some(w0)),
            constants: constants.clone(),
            a: a.clone(),
        }
    }

    fn d(&self) -> usize {
        self.a.len()
    }
}

/// One step of a trajectory as seen by the checkers.
pub struct StepView<'a> {
    pub step: usize,
    pub w: &'a Matrix,
    pub terms: Option<&'a [TermTriple]>,
}

/// A lemma evaluated incrementally over the steps of a run.
pub trait LemmaCheck {
    fn observe(&mut self, ctx: &LemmaContext, view: &StepView<'_>);
    fn finish(self: Box<Self>, ctx: &LemmaContext) -> Vec<LemmaReport>;
}

fn all_entries(d: usize) -> Vec<EntryCheck> {
    (0..d)
        .flat_map(|i| (0..d).map(move |j| EntryCheck::new(i, j)))
        .collect()
}

fn diagonal_entries(d: usize) -> Vec<EntryCheck> {
    (0..d).map(|i| EntryCheck::new(i, i)).collect()
}

fn build_report(
    lemma: LemmaId,
    ctx: &LemmaContext,
    entries: Vec<EntryCheck>,
    derived: BTreeMap<String, f64>,
) -> LemmaReport {
    let reason = if !ctx.assumptions.all_pass() {
        Some("assumptions do not hold".to_string())
    } else if entries.iter().all(|e| e.checked_steps == 0) {
        Some("empty checked range".to_string())
    } else {
        None
    };
    LemmaReport {
        lemma,
        status: if reason.is_some() {
            LemmaStatus::Vacuous
        } else {
            LemmaStatus::Checked
        },
        vacuous_reason: reason,
        entries,
        derived,
    }
}

/// `exp(x)` times `scale`, saturating instead of overflowing.
fn scaled_exp(scale: f64, x: f64) -> f64 {
    let v = scale * x.exp();
    if v.is_finite() {
        v
    } else {
        f64::MAX
    }
}

struct NoiseBoundCheck {
    entries: Vec<EntryCheck>,
    missing_terms: bool,
}

impl LemmaCheck for NoiseBoundCheck {
    fn observe(&mut self, ctx: &LemmaContext, view: &StepView<'_>) {
        let Some(terms) = view.terms else {
            self.missing_terms = true;
            return;
        };
        let bound = ctx.constants.noise_bound(ctx.d());
        for (e, t) in self.entries.iter_mut().zip(terms) {
            e.record(view.step, bound - t.n.abs());
        }
    }

    fn finish(self: Box<Self>, ctx: &LemmaContext) -> Vec<LemmaReport> {
        let mut derived = BTreeMap::new();
        derived.insert("bound".into(), ctx.constants.noise_bound(ctx.d()));
        vec![build_report(LemmaId::NoiseBound, ctx, self.entries, derived)]
    }
}

/// Upper growth for all time; lower growth, initial phase and sign
/// preservation up to `T₁`; the diagonal lower bound up to `T₁^{(i)}`.
struct GrowthCheck {
    w0: Option<Matrix>,
    /// `T₁^{(i)}` per diagonal entry, `-inf` when `w_ii(0) <= 0`.
    diagonal_horizons: Vec<f64>,
    upper: Vec<EntryCheck>,
    lower: Vec<EntryCheck>,
    phase: Vec<EntryCheck>,
    sign: Vec<EntryCheck>,
    diagonal: Vec<EntryCheck>,
}

/// Bounds above this level are recorded as `CEILING` itself, which
/// understates the margin.
const CEILING: f64 = 1e10;

/// `scale · x · y` capped at `CEILING`, with a zero scale giving zero even
/// when a factor has overflowed.
fn capped_product(scale: f64, x: f64, y: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let v = scale * x * y;
    if v < CEILING {
        v
    } else {
        CEILING
    }
}

impl LemmaCheck for GrowthCheck {
    fn observe(&mut self, ctx: &LemmaContext, view: &StepView<'_>) {
        let c = &ctx.constants;
        let a = &ctx.a;
        let d = ctx.d();
        if self.w0.is_none() {
            self.w0 = Some(view.w.clone());
            self.diagonal_horizons = (0..d)
                .map(|i| {
                    let wii0 = view.w[(i, i)];
                    if wii0 > 0.0 {
                        c.diagonal_initial_horizon(a[i], wii0)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
        }
        let w0 = self.w0.as_ref().expect("set above");
        let w = view.w;
        let t = view.step as f64;
        let in_t1 = t <= c.uniform_initial_horizon();
        let threshold = c.phase_threshold();
        // exp(ηt(a_i + a_j)κ) = up[i]·up[j], and likewise with 1/κ.
        let up: Vec<f64> = a.iter().map(|ak| (c.eta * t * ak * c.kappa).exp()).collect();
        let down: Vec<f64> = a.iter().map(|ak| (c.eta * t * ak / c.kappa).exp()).collect();
        for i in 0..d {
            for j in 0..d {
                let idx = i * d + j;
                let mag0 = w0[(i, j)].abs();
                let mag = w[(i, j)].abs();
                self.upper[idx].record(view.step, capped_product(mag0, up[i], up[j]) - mag);
                if in_t1 {
                    self.lower[idx].record(view.step, mag - capped_product(mag0, down[i], down[j]));
                    self.phase[idx].record(view.step, threshold - mag);
                    let product = w[(i, j)] * w0[(i, j)];
                    // Sign margin: positive iff the sign is preserved.
                    self.sign[idx].record(view.step, if product > 0.0 { mag } else { -1.0 });
                }
            }
            if t <= self.diagonal_horizons[i] {
                let lower = capped_product(w0[(i, i)], down[i], down[i]);
                let wii = w[(i, i)];
                self.diagonal[i].record(view.step, (wii - lower).min(threshold - wii.abs()));
            }
        }
    }

    fn finish(self: Box<Self>, ctx: &LemmaContext) -> Vec<LemmaReport> {
        let c = &ctx.constants;
        let mut t1 = BTreeMap::new();
        t1.insert("T1".to_string(), c.uniform_initial_horizon());
        let mut diag = BTreeMap::new();
        if let Some(w0) = &self.w0 {
            for i in 0..ctx.d() {
                if w0[(i, i)] > 0.0 {
                    diag.insert(format!("T1[{i}]"), c.diagonal_initial_horizon(ctx.a[i], w0[(i, i)]));
                }
            }
        }
        vec![
            build_report(LemmaId::UpperGrowth, ctx, self.upper, BTreeMap::new()),
            build_report(LemmaId::LowerInitialGrowth, ctx, self.lower, t1.clone()),
            build_report(LemmaId::InitialPhaseUntilT1, ctx, self.phase, t1.clone()),
            build_report(LemmaId::SignPreservation, ctx, self.sign, t1),
            build_report(LemmaId::LowerDiagonalGrowth, ctx, self.diagonal, diag),
        ]
    }
}

#[derive(Clone, Copy)]
enum AfterInitialState {
    /// Still waiting for `w_ii >= Pβω`.
    Waiting,
    /// Inside the window, with `t₀` and `w_ii(t₀)`.
    Active { t0: usize, start: f64 },
    /// `w_ii` reached `λ`; the bound no longer applies.
    Closed,
}

struct AfterInitialCheck {
    lambda: f64,
    states: Vec<AfterInitialState>,
    entries: Vec<EntryCheck>,
    t0: BTreeMap<String, f64>,
}

impl LemmaCheck for AfterInitialCheck {
    fn observe(&mut self, ctx: &LemmaContext, view: &StepView<'_>) {
        let c = &ctx.constants;
        for i in 0..ctx.d() {
            let wii = view.w[(i, i)];
            if let AfterInitialState::Waiting = self.states[i] {
                if wii.abs() >= c.phase_threshold() {
                    self.states[i] = AfterInitialState::Active {
                        t0: view.step,
                        start: wii,
                    };
                    self.t0.insert(format!("t0[{i}]"), view.step as f64);
                }
            }
            if let AfterInitialState::Active { t0, start } = self.states[i] {
                if wii >= self.lambda {
                    self.states[i] = AfterInitialState::Closed;
                    continue;
                }
                let dt = (view.step - t0) as f64;
                let bound = scaled_exp(start, 2.0 * c.eta * dt * ctx.a[i] * (1.0 - self.lambda) / c.kappa);
                self.entries[i].record(view.step, wii - bound);
            }
        }
    }

    fn finish(self: Box<Self>, ctx: &LemmaContext) -> Vec<LemmaReport> {
        let mut derived = self.t0;
        derived.insert("lambda".into(), self.lambda);
        vec![build_report(LemmaId::AfterInitialGrowth, ctx, self.entries, derived)]
    }
}

struct CapsCheck {
    previous: Option<(usize, Vector)>,
    reached: Vec<Option<usize>>,
    cap: Vec<EntryCheck>,
    update: Vec<EntryCheck>,
    terminal: Vec<EntryCheck>,
}

impl LemmaCheck for CapsCheck {
    fn observe(&mut self, ctx: &LemmaContext, view: &StepView<'_>) {
        let c = &ctx.constants;
        let diag = view.w.diagonal();
        for i in 0..ctx.d() {
            let wii = diag[i];
            self.cap[i].record(view.step, wii.min(c.diagonal_cap() - wii));
            if let Some((prev_step, prev)) = &self.previous {
                if prev_step + 1 == view.step {
                    self.update[i].record(view.step, c.update_cap() - (wii - prev[i]).abs());
                }
            }
            if self.reached[i].is_none() && wii >= c.terminal_floor() {
                self.reached[i] = Some(view.step);
            }
            if self.reached[i].is_some() {
                self.terminal[i].record(view.step, wii - c.terminal_floor());
            }
        }
        self.previous = Some((view.step, diag));
    }

    fn finish(self: Box<Self>, ctx: &LemmaContext) -> Vec<LemmaReport> {
        let c = &ctx.constants;
        let mut caps = BTreeMap::new();
        caps.insert("cap".to_string(), c.diagonal_cap());
        let mut upd = BTreeMap::new();
        upd.insert("update_cap".to_string(), c.update_cap());
        let mut term = BTreeMap::new();
        term.insert("floor".to_string(), c.terminal_floor());
        for (i, r) in self.reached.iter().enumerate() {
            if let Some(step) = r {
                term.insert(format!("t0[{i}]"), *step as f64);
            }
        }
        vec![
            build_report(LemmaId::DiagonalCap, ctx, self.cap, caps),
            build_report(LemmaId::DiagonalUpdate, ctx, self.update, upd),
            build_report(LemmaId::TerminalFloor, ctx, self.terminal, term),
        ]
    }
}

struct SuppressionCheck {
    /// `(dominant, other)` pairs.
    pairs: Vec<(usize, usize)>,
    ties: bool,
    anchors: Vec<Option<(usize, f64)>>,
    suppression: Vec<EntryCheck>,
    phase: Vec<EntryCheck>,
}

impl LemmaCheck for SuppressionCheck {
    fn observe(&mut self, ctx: &LemmaContext, view: &StepView<'_>) {
        let c = &ctx.constants;
        let w = view.w;
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            if self.anchors[k].is_none() && w[(i, i)] > SUPPRESSION_LEVEL {
                self.anchors[k] = Some((view.step, w[(i, j)].abs()));
            }
            if let Some((_, anchor)) = self.anchors[k] {
                let bound = anchor.max(c.omega);
                let worst = w[(i, j)].abs().max(w[(j, i)].abs());
                self.suppression[k].record(view.step, bound - worst);
            }
        }
        let threshold = c.phase_threshold();
        let d = ctx.d();
        for (idx, e) in self.phase.iter_mut().enumerate() {
            let (i, j) = (idx / d, idx % d);
            if i != j {
                e.record(view.step, threshold - w[(i, j)].abs());
            }
        }
    }

    fn finish(self: Box<Self>, ctx: &LemmaContext) -> Vec<LemmaReport> {
        let mut derived = BTreeMap::new();
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            if let Some((step, _)) = self.anchors[k] {
                derived.insert(format!("t0[{i},{j}]"), step as f64);
            }
        }
        let mut suppression = build_report(LemmaId::Suppression, ctx, self.suppression, derived);
        if self.ties {
            suppression.status = LemmaStatus::Vacuous;
            suppression.vacuous_reason = Some("spectrum has tied eigenvalues; no dominant ordering".into());
        }
        let d = ctx.d();
        let phase_entries = self
            .phase
            .into_iter()
            .enumerate()
            .filter(|(idx, _)| idx / d != idx % d)
            .map(|(_, e)| e)
            .collect();
        vec![
            suppression,
            build_report(LemmaId::OffDiagonalInitialPhase, ctx, phase_entries, BTreeMap::new()),
        ]
    }
}

fn noise_check(ctx: &LemmaContext) -> Box<dyn LemmaCheck> {
    Box::new(NoiseBoundCheck {
        entries: all_entries(ctx.d()),
        missing_terms: false,
    })
}

fn growth_check(ctx: &LemmaContext) -> Box<dyn LemmaCheck> {
    let d = ctx.d();
    Box::new(GrowthCheck {
        w0: None,
        diagonal_horizons: vec![],
        upper: all_entries(d),
        lower: all_entries(d),
        phase: all_entries(d),
        sign: all_entries(d),
        diagonal: diagonal_entries(d),
    })
}

fn after_initial_check(ctx: &LemmaContext, lambda: f64) -> Result<Box<dyn LemmaCheck>> {
    let c = &ctx.constants;
    let hi = 1.0 - 1.0 / c.k;
    if !(lambda > c.phase_threshold() && lambda < hi) {
        return Err(SimError::OutOfRange(format!(
            "lambda must lie in (P*beta*omega, 1 - 1/K) = ({:e}, {hi}), got {lambda}",
            c.phase_threshold()
        )));
    }
    Ok(Box::new(AfterInitialCheck {
        lambda,
        states: vec![AfterInitialState::Waiting; ctx.d()],
        entries: diagonal_entries(ctx.d()),
        t0: BTreeMap::new(),
    }))
}

fn caps_check(ctx: &LemmaContext) -> Box<dyn LemmaCheck> {
    let d = ctx.d();
    Box::new(CapsCheck {
        previous: None,
        reached: vec![None; d],
        cap: diagonal_entries(d),
        update: diagonal_entries(d),
        terminal: diagonal_entries(d),
    })
}

fn suppression_check(ctx: &LemmaContext) -> Box<dyn LemmaCheck> {
    let (pairs, ties) = canonical_pairs(&ctx.a);
    let suppression = pairs.iter().map(|&(i, j)| EntryCheck::new(i, j)).collect();
    Box::new(SuppressionCheck {
        anchors: vec![None; pairs.len()],
        pairs,
        ties: !ties.is_empty(),
        suppression,
        phase: all_entries(ctx.d()),
    })
}

/// Runs a set of checks over the steps of a run, one step at a time.
pub struct LemmaMonitor {
    ctx: LemmaContext,
    checks: Vec<Box<dyn LemmaCheck>>,
}

impl LemmaMonitor {
    /// Every lemma, with `lambda` for the after-initial growth bound.
    pub fn all(constants: &TheoryConstants, a: &Vector, w0: &Matrix, lambda: f64) -> Result<Self> {
        let ctx = LemmaContext::new(constants, a, w0);
        let checks = vec![
            noise_check(&ctx),
            growth_check(&ctx),
            after_initial_check(&ctx, lambda)?,
            caps_check(&ctx),
            suppression_check(&ctx),
        ];
        Ok(LemmaMonitor { ctx, checks })
    }

    pub fn context(&self) -> &LemmaContext {
        &self.ctx
    }

    pub fn observe(&mut self, step: usize, w: &Matrix, terms: Option<&[TermTriple]>) {
        let view = StepView { step, w, terms };
        for c in &mut self.checks {
            c.observe(&self.ctx, &view);
        }
    }

    pub fn finish(self) -> Vec<LemmaReport> {
        let ctx = self.ctx;
        self.checks.into_iter().flat_map(|c| c.finish(&ctx)).collect()
    }
}

fn run_checks(traj: &Trajectory, ctx: LemmaContext, mut checks: Vec<Box<dyn LemmaCheck>>) -> Vec<LemmaReport> {
    for (k, w) in traj.w_series.iter().enumerate() {
        let view = StepView {
            step: traj.times[k].round() as usize,
            w,
            terms: traj.decomposition.as_ref().map(|d| d[k].as_slice()),
        };
        for c in &mut checks {
            c.observe(&ctx, &view);
        }
    }
    checks.into_iter().flat_map(|c| c.finish(&ctx)).collect()
}

fn context_for(traj: &Trajectory, constants: &TheoryConstants, a: &Vector) -> Result<LemmaContext> {
    constants.validate()?;
    let w0 = traj
        .w_series
        .first()
        .ok_or_else(|| SimError::Parse("empty trajectory".into()))?;
    if w0.nrows() != a.len() {
        return Err(SimError::Dimension {
            expected: a.len(),
            got: w0.nrows(),
        });
    }
    Ok(LemmaContext::new(constants, a, w0))
}

/// Noise-term bound `|N_ij(t)| <= 2Pγαdβ²ω²` at every recorded step.
pub fn verify_noise_bound(traj: &Trajectory, constants: &TheoryConstants, a: &Vector) -> Result<LemmaReport> {
    if traj.decomposition.is_none() {
        return Err(SimError::MissingDecomposition);
    }
    let ctx = context_for(traj, constants, a)?;
    let check = noise_check(&ctx);
    Ok(run_checks(traj, ctx, vec![check]).remove(0))
}

/// Upper growth, lower initial growth (with initial phase and sign
/// preservation up to `T₁`) and the diagonal lower bound.
pub fn verify_growth_bounds(traj: &Trajectory, constants: &TheoryConstants, a: &Vector) -> Result<Vec<LemmaReport>> {
    let ctx = context_for(traj, constants, a)?;
    let check = growth_check(&ctx);
    Ok(run_checks(traj, ctx, vec![check]))
}

/// After-initial diagonal growth with level `lambda ∈ (Pβω, 1 - 1/K)`.
pub fn verify_after_initial(
    traj: &Trajectory,
    constants: &TheoryConstants,
    a: &Vector,
    lambda: f64,
) -> Result<LemmaReport> {
    let ctx = context_for(traj, constants, a)?;
    let check = after_initial_check(&ctx, lambda)?;
    Ok(run_checks(traj, ctx, vec![check]).remove(0))
}

/// Diagonal cap, diagonal update cap and terminal floor.
pub fn verify_caps_and_terminal(
    traj: &Trajectory,
    constants: &TheoryConstants,
    a: &Vector,
) -> Result<Vec<LemmaReport>> {
    let ctx = context_for(traj, constants, a)?;
    let check = caps_check(&ctx);
    Ok(run_checks(traj, ctx, vec![check]))
}

/// Suppression of off-diagonal entries after their dominant diagonal
/// passes 0.8, and the all-time initial phase of off-diagonal entries.
pub fn verify_suppression(traj: &Trajectory, constants: &TheoryConstants, a: &Vector) -> Result<Vec<LemmaReport>> {
    let ctx = context_for(traj, constants, a)?;
    let check = suppression_check(&ctx);
    Ok(run_checks(traj, ctx, vec![check]))
}

/// Every lemma check over a recorded trajectory.
pub fn verify_all(traj: &Trajectory, constants: &TheoryConstants, a: &Vector, lambda: f64) -> Result<Vec<LemmaReport>> {
    if traj.decomposition.is_none() {
        return Err(SimError::MissingDecomposition);
    }
    let ctx = context_for(traj, constants, a)?;
    let checks = vec![
        noise_check(&ctx),
        growth_check(&ctx),
        after_initial_check(&ctx, lambda)?,
        caps_check(&ctx),
        suppression_check(&ctx),
    ];
    Ok(run_checks(traj, ctx, checks))
}

/// Midpoint of `(Pβω, 1 - 1/K)`, or `None` when that interval is empty.
pub fn default_lambda(c: &TheoryConstants) -> Option<f64> {
    let lo = c.phase_threshold();
    let hi = 1.0 - 1.0 / c.k;
    (lo < hi).then_some(0.5 * (lo + hi))
}

/// Assumption checks and every lemma report for one recorded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub assumptions: AssumptionReport,
    pub lambda: Option<f64>,
    pub lemmas: Vec<LemmaReport>,
}

impl VerificationReport {
    pub fn violations(&self) -> usize {
        self.lemmas.iter().map(|r| r.violations()).sum()
    }

    pub fn passed(&self) -> bool {
        self.assumptions.all_pass() && self.violations() == 0
    }
}

/// Runs every lemma check over `traj`. Without an explicit `lambda` the
/// midpoint of its admissible interval is used; if that interval is empty
/// the after-initial bound is reported as vacuous and left unchecked.
pub fn verify_trajectory(
    traj: &Trajectory,
    constants: &TheoryConstants,
    a: &Vector,
    lambda: Option<f64>,
) -> Result<VerificationReport> {
    if traj.decomposition.is_none() {
        return Err(SimError::MissingDecomposition);
    }
    let ctx = context_for(traj, constants, a)?;
    let lambda = lambda.or_else(|| default_lambda(constants));
    let mut checks = vec![noise_check(&ctx), growth_check(&ctx)];
    if let Some(l) = lambda {
        checks.push(after_initial_check(&ctx, l)?);
    }
    checks.push(caps_check(&ctx));
    checks.push(suppression_check(&ctx));
    let assumptions = ctx.assumptions.clone();
    let mut lemmas = run_checks(traj, ctx, checks);
    if lambda.is_none() {
        lemmas.push(LemmaReport {
            lemma: LemmaId::AfterInitialGrowth,
            status: LemmaStatus::Vacuous,
            vacuous_reason: Some("no lambda in (P*beta*omega, 1 - 1/K)".into()),
            entries: vec![],
            derived: BTreeMap::new(),
        });
    }
    lemmas.sort_by_key(|r| r.lemma);
    Ok(VerificationReport {
        assumptions,
        lambda,
        lemmas,
    })
}

/// A spectrum, constants and initialization satisfying every assumption.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampledConfig {
    pub seed: u64,
    pub a: Vector,
    pub constants: TheoryConstants,
    pub w0: Matrix,
}

/// Draws a configuration passing [`check_assumptions`] by rejection.
///
/// The spectrum descends with successive ratios in `[3.1, 3.5)` down to
/// `α = 1`. `P` is the smallest value meeting the eigenvalue-ratio
/// condition, `κ` is scanned for the largest admissible `ω`, and `η` sits at
/// the step-size limit. The initialization puts diagonal magnitudes near
/// `βω` and off-diagonal magnitudes near `ω` with random signs, which keeps
/// `W(0)` well inside the PSD cone.
pub fn sample_assumption_config(d: usize, seed: u64) -> Result<SampledConfig> {
    use rand::{Rng, SeedableRng};
    if !(2..=8).contains(&d) {
        return Err(SimError::OutOfRange(format!("sampler supports 2 <= d <= 8, got {d}")));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let k = 20.0;
    for _ in 0..100 {
        let mut desc = vec![1.0_f64];
        for _ in 1..d {
            let next = desc.last().unwrap() * rng.random_range(3.1..3.5);
            desc.push(next);
        }
        desc.reverse();
        let a = Vector::from_vec(desc);
        let alpha = a.min();
        let gamma = a.max() / alpha;
        let (pairs, _) = canonical_pairs(&a);
        let gap = pairs
            .iter()
            .map(|&(i, j)| a[i] - 3.0 * a[j])
            .fold(f64::INFINITY, f64::min);
        let c = (alpha / gap).max(1.0001) * 1.0001;
        let ratio = pairs
            .iter()
            .map(|&(i, j)| (a[i] + a[j]) / (2.0 * a[i]))
            .fold(0.0_f64, f64::max);
        let lo_beta = 3.0_f64.max(1.5 * (d as f64 - 1.0));
        let beta = rng.random_range(lo_beta..lo_beta + 1.0);
        let kappa_hi = 4.0_f64.min(1.0 + 0.5 * k / c);
        let mut best: Option<(f64, f64, f64)> = None;
        for n in 0..200 {
            let kappa = 1.11 + (kappa_hi - 1.11) * n as f64 / 199.0;
            let slack = (kappa - 1.0).min(1.0 - kappa.powf(-0.5));
            // x = Pβω, kept below both the phase and the ω bounds.
            let x = 0.4_f64.min(slack / (k * gamma * d as f64 * beta)) * 0.99;
            let log_p = ratio / (1.0 - ratio) * (10.0 * kappa * kappa * (1.0 / x).ln() + beta.ln()) * 1.01;
            let log_omega = x.ln() - log_p - beta.ln();
            if best.is_none_or(|b| log_omega > b.0) {
                best = Some((log_omega, kappa, log_p));
            }
        }
        let (log_omega, kappa, log_p) = best.expect("kappa grid is nonempty");
        let constants = TheoryConstants {
            alpha,
            gamma,
            beta,
            omega: log_omega.exp(),
            k,
            p: log_p.exp(),
            kappa,
            c,
            eta: 1.0 / (9.0 * k * gamma * alpha),
        };
        let omega = constants.omega;
        let mut w0 = Matrix::zeros(d, d);
        for i in 0..d {
            w0[(i, i)] = rng.random_range(0.97 * beta * omega..=beta * omega);
            for j in (i + 1)..d {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let v = sign * rng.random_range(omega..=1.03 * omega);
                w0[(i, j)] = v;
                w0[(j, i)] = v;
            }
        }
        if check_assumptions(&constants, &a, d, Some(&w0)).all_pass() && crate::linalg::min_eigenvalue(&w0) > 0.0 {
            return Ok(SampledConfig { seed, a, constants, w0 });
        }
    }
    Err(SimError::NoValidConstants(format!(
        "no admissible configuration for d={d}, seed={seed}"
    )))
}

/// Steps for every diagonal entry to travel from `ω` to one, with margin.
pub fn sweep_horizon(config: &SampledConfig) -> usize {
    let c = &config.constants;
    let rate = 2.0 * c.eta * config.a.min();
    (((1.0 / c.omega).ln() + 10.0) / rate * 1.2).ceil() as usize
}

/// Runs the W-recursion of a sampled configuration through every lemma
/// check without storing the trajectory.
pub fn check_sampled_config(config: &SampledConfig, lambda: f64) -> Result<Vec<LemmaReport>> {
    use crate::sim::CovarianceSpectrum;
    use crate::two_layer::{decompose_all, WRecursion};
    let spectrum = CovarianceSpectrum::TrueDiagonal(config.a.clone());
    let mut rec = WRecursion::new(&config.w0, &spectrum, config.constants.eta, Some(&config.constants))?;
    let mut monitor = LemmaMonitor::all(&config.constants, &config.a, &config.w0, lambda)?;
    let steps = sweep_horizon(config);
    for t in 0..=steps {
        let terms = decompose_all(rec.w(), &config.a);
        monitor.observe(t, rec.w(), Some(&terms));
        if t < steps {
            rec.advance()?;
        }
    }
    Ok(monitor.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::CovarianceSpectrum;
    use crate::two_layer::{simulate_w_recursion, RecordOptions};

    fn constants() -> TheoryConstants {
        TheoryConstants {
            alpha: 1.0,
            gamma: 2.0,
            beta: 1.5,
            omega: 0.01,
            k: 20.0,
            p: 2.0,
            kappa: 1.2,
            c: 2.0,
            eta: 0.002,
        }
    }

    #[test]
    fn fit_constants_min_max() {
        let a = Vector::from_column_slice(&[1.0, 2.0]);
        let w0 = Matrix::from_row_slice(2, 2, &[0.001, -0.001, -0.001, 0.001]);
        let f = fit_constants(&a, &w0).unwrap();
        assert_eq!((f.alpha, f.gamma, f.omega, f.beta), (1.0, 2.0, 0.001, 1.0));
        assert!(f.at_boundary);
        let flat = fit_constants(&Vector::from_column_slice(&[0.7, 0.7]), &w0).unwrap();
        assert_eq!(flat.gamma, 1.0);
        let mut zero = w0.clone();
        zero[(0, 1)] = 0.0;
        assert!(matches!(fit_constants(&a, &zero), Err(SimError::NoValidConstants(_))));
        assert!(fit_constants(&Vector::from_column_slice(&[1.0, 0.0]), &w0).is_err());
    }

    #[test]
    fn step_size_assumption() {
        let a = Vector::from_column_slice(&[2.0, 1.0]);
        let c = constants();
        let r = check_assumptions(&c, &a, 2, None);
        assert!(r.assumption_pass(2));
        let bound = r
            .checks
            .iter()
            .find(|x| x.assumption_id.starts_with("eta"))
            .unwrap()
            .rhs;
        assert!((bound - 1.0 / 360.0).abs() < 1e-15);
        let r = check_assumptions(&TheoryConstants { eta: 0.01, ..c }, &a, 2, None);
        assert!(!r.assumption_pass(2));
    }

    #[test]
    fn initial_phase_assumption() {
        let r = check_assumptions(&constants(), &Vector::from_column_slice(&[2.0, 1.0]), 2, None);
        let check = r.checks.iter().find(|x| x.assumption == 3).unwrap();
        assert!((check.lhs - 0.03).abs() < 1e-15);
        assert!(check.pass);
    }

    #[test]
    fn raw_index_convention_fails_for_descending_spectrum() {
        let a = Vector::from_column_slice(&[10.0, 3.0, 0.5]);
        let c = TheoryConstants { c: 10.0, ..constants() };
        let r = check_assumptions(&c, &a, 3, None);
        assert!(r.descending);
        assert!(!r.raw_convention_pass);
        let gaps: Vec<_> = r.checks.iter().filter(|x| x.assumption_id.contains("-3a")).collect();
        assert_eq!(gaps.len(), 3);
        assert!(gaps.iter().all(|g| g.pass));
    }

    #[test]
    fn tied_spectrum_fails_signal_gap() {
        let a = Vector::from_column_slice(&[1.0, 1.0]);
        let r = check_assumptions(&constants(), &a, 2, None);
        assert!(!r.assumption_pass(5));
    }

    #[test]
    fn assumption_report_is_monotone_in_eta() {
        let a = Vector::from_column_slice(&[2.0, 1.0]);
        let mut c = constants();
        let mut passed = false;
        for k in (1..200).rev() {
            c.eta = k as f64 * 1e-4;
            let pass = check_assumptions(&c, &a, 2, None).assumption_pass(2);
            assert!(!passed || pass, "eta {} failed after a larger eta passed", c.eta);
            passed |= pass;
        }
        assert!(passed);
    }

    #[test]
    fn phase_classification() {
        let c = constants();
        assert_eq!(classify_phase(0.02, &c), Phase::Initial);
        assert_eq!(classify_phase(-0.02, &c), Phase::Initial);
        assert_eq!(classify_phase(0.04, &c), Phase::Left);
        assert_eq!(classify_phase(0.0, &c), Phase::Initial);
        assert_eq!(classify_phase(c.phase_threshold(), &c), Phase::Initial);
    }

    #[test]
    fn derived_levels_for_k_20() {
        let c = constants();
        assert!((c.diagonal_cap() - 1.1).abs() < 1e-15);
        assert!((c.update_cap() - 0.05).abs() < 1e-15);
        assert!((c.terminal_floor() - 0.9).abs() < 1e-15);
    }

    fn recorded(w0: &Matrix, a: &[f64], eta: f64, steps: usize) -> Trajectory {
        let opts = RecordOptions {
            terms: true,
            ..Default::default()
        };
        simulate_w_recursion(w0, &CovarianceSpectrum::diagonal(a), eta, steps, None, &opts).unwrap()
    }

    #[test]
    fn zero_trajectory_has_noise_margin_equal_to_bound() {
        let c = constants();
        let traj = recorded(&Matrix::zeros(2, 2), &[2.0, 1.0], 0.001, 10);
        let a = Vector::from_column_slice(&[2.0, 1.0]);
        let r = verify_noise_bound(&traj, &c, &a).unwrap();
        assert_eq!(r.min_margin(), Some(c.noise_bound(2)));
        assert_eq!(r.violations(), 0);
    }

    #[test]
    fn scalar_noise_is_identically_zero() {
        let traj = recorded(&Matrix::from_element(1, 1, 0.01), &[1.0], 0.001, 100);
        assert!(traj.decomposition.as_ref().unwrap().iter().all(|t| t[0].n == 0.0));
    }

    #[test]
    fn noise_check_requires_terms() {
        let opts = RecordOptions::default();
        let a = CovarianceSpectrum::diagonal(&[1.0]);
        let traj = simulate_w_recursion(&Matrix::from_element(1, 1, 0.1), &a, 0.01, 3, None, &opts).unwrap();
        let err = verify_noise_bound(&traj, &constants(), &Vector::from_column_slice(&[1.0]));
        assert!(matches!(err, Err(SimError::MissingDecomposition)));
    }

    #[test]
    fn growth_bounds_are_tight_at_time_zero() {
        let c = constants();
        let w0 = Matrix::from_row_slice(2, 2, &[0.012, 0.01, 0.01, 0.013]);
        let traj = recorded(&w0, &[2.0, 1.0], c.eta, 0);
        let a = Vector::from_column_slice(&[2.0, 1.0]);
        let reports = verify_growth_bounds(&traj, &c, &a).unwrap();
        for lemma in [LemmaId::UpperGrowth, LemmaId::LowerInitialGrowth] {
            let r = reports.iter().find(|r| r.lemma == lemma).unwrap();
            assert_eq!(r.min_margin(), Some(0.0));
        }
    }

    #[test]
    fn after_initial_rejects_lambda_outside_interval() {
        let c = constants();
        let traj = recorded(&Matrix::from_element(1, 1, 0.01), &[1.0], c.eta, 5);
        let a = Vector::from_column_slice(&[1.0]);
        assert!(verify_after_initial(&traj, &c, &a, 0.95).is_err());
        assert!(verify_after_initial(&traj, &c, &a, 0.01).is_err());
        assert!(verify_after_initial(&traj, &c, &a, 0.85).is_ok());
    }

    #[test]
    fn after_initial_is_vacuous_when_diagonal_stays_small() {
        let c = constants();
        let traj = recorded(&Matrix::from_element(1, 1, 0.011), &[1.0], c.eta, 3);
        let a = Vector::from_column_slice(&[1.0]);
        let r = verify_after_initial(&traj, &c, &a, 0.85).unwrap();
        assert!(r.is_vacuous());
        assert_eq!(r.checked_steps(), 0);
    }

    #[test]
    fn fixed_point_satisfies_caps_forever() {
        let c = constants();
        let traj = recorded(&Matrix::identity(2, 2), &[2.0, 1.0], c.eta, 200);
        let a = Vector::from_column_slice(&[2.0, 1.0]);
        let reports = verify_caps_and_terminal(&traj, &c, &a).unwrap();
        assert!(reports.iter().all(|r| r.violations() == 0));
        let terminal = reports.iter().find(|r| r.lemma == LemmaId::TerminalFloor).unwrap();
        assert_eq!(terminal.checked_steps(), 2 * 201);
    }

    #[test]
    fn suppression_waits_for_dominant_diagonal() {
        let c = constants();
        let w0 = Matrix::from_row_slice(2, 2, &[0.012, 0.01, 0.01, 0.013]);
        let traj = recorded(&w0, &[2.0, 0.5], c.eta, 10);
        let a = Vector::from_column_slice(&[2.0, 0.5]);
        let reports = verify_suppression(&traj, &c, &a).unwrap();
        assert_eq!(reports[0].lemma, LemmaId::Suppression);
        assert_eq!(reports[0].checked_steps(), 0);
        assert!(reports[1].checked_steps() > 0);
    }

    #[test]
    fn large_initialization_violates_off_diagonal_phase() {
        // ω = 0.3 breaks the small-initialization assumption; the minor
        // entries leave the initial phase.
        let c = TheoryConstants {
            omega: 0.3,
            beta: 1.0,
            p: 1.0,
            ..constants()
        };
        let w0 = Matrix::from_row_slice(2, 2, &[0.36, 0.3, 0.3, 0.36]);
        let a = Vector::from_column_slice(&[2.0, 0.5]);
        let traj = recorded(&w0, &[2.0, 0.5], c.eta, 3000);
        let reports = verify_suppression(&traj, &c, &a).unwrap();
        assert!(reports.iter().all(|r| r.is_vacuous()));
        let phase = reports
            .iter()
            .find(|r| r.lemma == LemmaId::OffDiagonalInitialPhase)
            .unwrap();
        assert!(phase.violations() > 0);
    }
}
