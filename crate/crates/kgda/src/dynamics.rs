//! GDA simulation engines for the point-mass game.
//!
//! One discriminator ascent step and one generator descent step, both taken
//! from the same iterate:
//!
//! ```text
//! f'   = (1-λη_d) f + η_d ( Σ_i p_i K(·,x_i) - Σ_j p̃_j K(·,x̃_j) )
//! x̃_j' = x̃_j + η_g p̃_j ∇f(x̃_j)          (the OLD f)
//! ```
//!
//! The explicit engine carries `f` as a kernel expansion; the eliminated
//! engine removes `f` entirely and drives the points from a geometric memory
//! over past iterates (the two are equivalent when `f⁰ = 0`, which the tests
//! enforce to 1e-10 per coordinate). The local engine runs each isolated
//! region on its own, dropping cross-region kernel interactions.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::kernel::{KernelError, KernelSpec, SquareMat};
use crate::scenario::{NeighborhoodPartition, PointSet, Scenario, ScenarioError, DEFAULT_ISOLATION_EPS};
use crate::vecmath::{all_finite, dist, dist_sq};

/// Kernel-expansion terms whose centers are at most this far apart (Euclidean)
/// are merged into one.
pub const MERGE_TOL: f64 = 1e-12;

/// Terms with |coefficient| below this are dropped after each step.
pub const PRUNE_TOL: f64 = 1e-15;

/// A run is declared diverged once a generated point is farther than
/// `DIVERGENCE_FACTOR·σ` from every target point.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("state contains non-finite values (simulation diverged)")]
    NonFinite,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineMode {
    /// Discriminator carried explicitly as a kernel expansion.
    Explicit,
    /// Discriminator eliminated into a geometric memory over past iterates.
    Eliminated,
    /// Explicit recursion restricted to each isolated region.
    Local,
}

// ---------------------------------------------------------------------------
// Discriminator state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct Term {
    center: Vec<f64>,
    coef: f64,
}

/// A function in the kernel's RKHS, stored as `f(·) = Σ_k coef_k K(·, c_k)`.
///
/// Coincident centers are merged and negligible coefficients pruned, so the
/// expansion stays bounded while stale memory decays geometrically.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscriminatorState {
    terms: Vec<Term>,
}

impl DiscriminatorState {
    /// The zero function.
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_terms<I>(terms: I) -> Self
    where
        I: IntoIterator<Item = (Vec<f64>, f64)>,
    {
        let mut f = Self::zero();
        for (center, coef) in terms {
            f.add_term(&center, coef);
        }
        f.prune();
        f
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.terms.iter().map(|t| (t.center.as_slice(), t.coef))
    }

    /// Adds `coef·K(·, center)`, merging into an existing term whose center is
    /// within [`MERGE_TOL`].
    pub fn add_term(&mut self, center: &[f64], coef: f64) {
        for t in self.terms.iter_mut() {
            if t.center.len() == center.len() && dist_sq(&t.center, center) <= MERGE_TOL * MERGE_TOL {
                t.coef += coef;
                return;
            }
        }
        self.terms.push(Term { center: center.to_vec(), coef });
    }

    /// Scales every coefficient by `q`.
    pub fn scale(&mut self, q: f64) {
        for t in self.terms.iter_mut() {
            t.coef *= q;
        }
    }

    /// Drops terms with |coef| < [`PRUNE_TOL`].
    pub fn prune(&mut self) {
        self.terms.retain(|t| t.coef.abs() >= PRUNE_TOL);
    }

    pub fn eval(&self, kernel: &KernelSpec, x: &[f64]) -> Result<f64, KernelError> {
        let mut v = 0.0;
        for t in &self.terms {
            v += t.coef * kernel.eval(x, &t.center)?;
        }
        Ok(v)
    }

    /// `∇f(x)`, accumulated without allocating per term.
    pub fn gradient(&self, kernel: &KernelSpec, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        let mut out = vec![0.0; kernel.dimension()];
        self.add_gradient(kernel, x, 1.0, &mut out)?;
        Ok(out)
    }

    fn add_gradient(
        &self,
        kernel: &KernelSpec,
        x: &[f64],
        scale: f64,
        out: &mut [f64],
    ) -> Result<(), KernelError> {
        let s2 = kernel.width() * kernel.width();
        for t in &self.terms {
            let k = kernel.eval(x, &t.center)?;
            let c = scale * t.coef * k / s2;
            for (o, (xa, ca)) in out.iter_mut().zip(x.iter().zip(&t.center)) {
                *o -= c * (xa - ca);
            }
        }
        Ok(())
    }

    /// `∇²f(x)`.
    pub fn hessian(&self, kernel: &KernelSpec, x: &[f64]) -> Result<SquareMat, KernelError> {
        let mut out = SquareMat::zeros(kernel.dimension());
        for t in &self.terms {
            out.add_scaled(&kernel.hess11(x, &t.center)?, t.coef);
        }
        Ok(out)
    }

    /// Squared RKHS norm `Σ_{k,l} coef_k coef_l K(c_k, c_l)`. Quadratic in the
    /// number of terms; the simulation engines maintain this incrementally
    /// instead.
    pub fn norm_sq(&self, kernel: &KernelSpec) -> Result<f64, KernelError> {
        let mut v = 0.0;
        for (i, a) in self.terms.iter().enumerate() {
            v += a.coef * a.coef;
            for b in &self.terms[i + 1..] {
                v += 2.0 * a.coef * b.coef * kernel.eval(&a.center, &b.center)?;
            }
        }
        Ok(v)
    }

    fn is_finite(&self) -> bool {
        self.terms.iter().all(|t| t.coef.is_finite() && all_finite(&t.center))
    }
}

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

/// One simultaneous GDA step with the discriminator carried explicitly.
/// The generator moves along the gradient of the *pre-update* discriminator.
pub fn step_explicit(
    f: &DiscriminatorState,
    points: &PointSet,
    s: &Scenario,
) -> Result<(DiscriminatorState, PointSet), DynamicsError> {
    check_points(points, s)?;
    let h = s.hyper();

    // Generator first (reads the old f), then the discriminator update.
    let next_points = move_points(f, points, s)?;

    let mut next_f = f.clone();
    next_f.scale(1.0 - h.lambda() * h.eta_d());
    for (i, x) in s.real().points().rows().enumerate() {
        next_f.add_term(x, h.eta_d() * s.real().weights()[i]);
    }
    for (j, x) in points.rows().enumerate() {
        next_f.add_term(x, -h.eta_d() * s.generated().weights()[j]);
    }
    next_f.prune();

    if !next_f.is_finite() || !all_finite(next_points.as_flat()) {
        return Err(DynamicsError::NonFinite);
    }
    Ok((next_f, next_points))
}

fn move_points(
    f: &DiscriminatorState,
    points: &PointSet,
    s: &Scenario,
) -> Result<PointSet, DynamicsError> {
    let mut next = points.clone();
    let mut grad = vec![0.0; s.kernel().dimension()];
    for j in 0..points.len() {
        grad.iter_mut().for_each(|g| *g = 0.0);
        f.add_gradient(s.kernel(), points.row(j), 1.0, &mut grad)?;
        let step = s.hyper().eta_g() * s.generated().weights()[j];
        for (x, g) in next.row_mut(j).iter_mut().zip(&grad) {
            *x += step * g;
        }
    }
    Ok(next)
}

fn check_points(points: &PointSet, s: &Scenario) -> Result<(), DynamicsError> {
    if points.len() != s.generated().len() {
        return Err(DynamicsError::InvalidArgument(
            "point matrix must have one row per generated mass",
        ));
    }
    if !points.is_empty() && points.dim() != s.kernel().dimension() {
        return Err(DynamicsError::InvalidArgument("point dimension must match the kernel"));
    }
    Ok(())
}

/// One step of the discriminator-eliminated recursion. `history` holds the
/// iterates `X̃⁰ .. X̃ᵗ` (so it is never empty) and the recursion assumes
/// `f⁰ = 0`:
///
/// ```text
/// X̃^{t+1} = X̃^t + η_d η_g Σ_{s=0}^{t-1} (1-λη_d)^{t-1-s}
///             p̃ ⊙ ( ∇₁K(X̃^t, X) p  -  ∇₁K(X̃^t, X̃^s) p̃ )
/// ```
///
/// The memory runs to `s = t-1`: unrolling the explicit recursion from
/// `f⁰ = 0` puts the newest iterate into `f^{t+1}`, not `f^t`, so the first
/// step leaves the points untouched. This convention reproduces
/// [`step_explicit`] exactly, which is what the equivalence tests pin down.
pub fn step_eliminated(history: &[PointSet], s: &Scenario) -> Result<PointSet, DynamicsError> {
    let current = history.last().ok_or(DynamicsError::InvalidArgument("history must be non-empty"))?;
    check_points(current, s)?;

    let h = s.hyper();
    let q = 1.0 - h.lambda() * h.eta_d();
    let steps = history.len() - 1;

    // Same Horner accumulation the incremental engine performs step by step.
    let mut drift_coef = vec![0.0; s.real().len()];
    let mut weights = vec![0.0f64; steps];
    for t in 0..steps {
        for (c, p) in drift_coef.iter_mut().zip(s.real().weights()) {
            *c = q * *c + h.eta_d() * p;
        }
        for w in weights[..t].iter_mut() {
            *w *= q;
        }
        weights[t] = h.eta_d();
    }

    let memory: Vec<(&PointSet, f64)> =
        history[..steps].iter().zip(weights.iter().copied()).collect();
    eliminated_update(current, s, &drift_coef, memory.into_iter())
}

/// Shared evaluation of the eliminated update given accumulated drift
/// coefficients and weighted memory entries.
fn eliminated_update<'a>(
    current: &PointSet,
    s: &Scenario,
    drift_coef: &[f64],
    memory: impl Iterator<Item = (&'a PointSet, f64)> + Clone,
) -> Result<PointSet, DynamicsError> {
    let kernel = s.kernel();
    let s2 = kernel.width() * kernel.width();
    let dim = kernel.dimension();
    let h = s.hyper();

    let mut next = current.clone();
    let mut grad = vec![0.0; dim];
    for j in 0..current.len() {
        let xj = current.row(j);
        grad.iter_mut().for_each(|g| *g = 0.0);
        // Drift: accumulated attraction to each target point.
        for (i, xi) in s.real().points().rows().enumerate() {
            let k = kernel.eval(xj, xi)?;
            let c = drift_coef[i] * k / s2;
            for (g, (a, b)) in grad.iter_mut().zip(xj.iter().zip(xi)) {
                *g -= c * (a - b);
            }
        }
        // Diffusion: repulsion from every remembered iterate.
        for (past, w) in memory.clone() {
            for (l, xl) in past.rows().enumerate() {
                let k = kernel.eval(xj, xl)?;
                let c = w * s.generated().weights()[l] * k / s2;
                for (g, (a, b)) in grad.iter_mut().zip(xj.iter().zip(xl)) {
                    *g += c * (a - b);
                }
            }
        }
        let step = h.eta_g() * s.generated().weights()[j];
        for (x, g) in next.row_mut(j).iter_mut().zip(&grad) {
            *x += step * g;
        }
    }
    if !all_finite(next.as_flat()) {
        return Err(DynamicsError::NonFinite);
    }
    Ok(next)
}

/// One explicit step restricted to a region: only the region's target point
/// and its member generated points interact. `points` holds the region's
/// current positions in the order given by
/// [`Scenario::restrict_to_region`].
pub fn step_local(
    f: &DiscriminatorState,
    points: &PointSet,
    s: &Scenario,
    part: &NeighborhoodPartition,
    region: usize,
) -> Result<(DiscriminatorState, PointSet), DynamicsError> {
    let (sub, members) = s.restrict_to_region(part, region)?;
    if members.len() != points.len() {
        return Err(DynamicsError::InvalidArgument(
            "point matrix must have one row per region member",
        ));
    }
    let sub = sub.with_generated_points(points.clone())?;
    step_explicit(f, points, &sub)
}

// ---------------------------------------------------------------------------
// Equilibrium, loss, optimal discriminator
// ---------------------------------------------------------------------------

/// Max-norm of the equilibrium residual `∇₁K(X̃,X)p - ∇₁K(X̃,X̃)p̃` over all
/// generated rows; zero exactly at the fixed points of the eliminated
/// dynamics.
pub fn equilibrium_residual(points: &PointSet, s: &Scenario) -> Result<f64, DynamicsError> {
    check_points(points, s)?;
    let kernel = s.kernel();
    let s2 = kernel.width() * kernel.width();
    let mut worst = 0.0f64;
    for j in 0..points.len() {
        let xj = points.row(j);
        for a in 0..kernel.dimension() {
            let mut r = 0.0;
            for (i, xi) in s.real().points().rows().enumerate() {
                r -= s.real().weights()[i] * (xj[a] - xi[a]) / s2 * kernel.eval(xj, xi)?;
            }
            for (l, xl) in points.rows().enumerate() {
                r += s.generated().weights()[l] * (xj[a] - xl[a]) / s2 * kernel.eval(xj, xl)?;
            }
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// The minimax objective `Σ p_i f(x_i) - Σ p̃_j f(x̃_j) - (λ/2)‖f‖²`.
pub fn loss(
    f: &DiscriminatorState,
    points: &PointSet,
    s: &Scenario,
) -> Result<f64, DynamicsError> {
    check_points(points, s)?;
    let linear = loss_linear_part(f, points, s)?;
    Ok(linear - 0.5 * s.hyper().lambda() * f.norm_sq(s.kernel())?)
}

/// `Σ p_i f(x_i) - Σ p̃_j f(x̃_j)`, which is also `⟨f, g⟩` for the ascent
/// direction `g`.
fn loss_linear_part(
    f: &DiscriminatorState,
    points: &PointSet,
    s: &Scenario,
) -> Result<f64, DynamicsError> {
    let kernel = s.kernel();
    let mut v = 0.0;
    for (i, x) in s.real().points().rows().enumerate() {
        v += s.real().weights()[i] * f.eval(kernel, x)?;
    }
    for (j, x) in points.rows().enumerate() {
        v -= s.generated().weights()[j] * f.eval(kernel, x)?;
    }
    Ok(v)
}

/// The closed-form maximizer of the loss in `f`:
/// `f* = (Σ p_i K(·,x_i) - Σ p̃_j K(·,x̃_j)) / λ`, with coincident centers
/// merged (so at an equilibrium with all generated mass on a target point it
/// collapses to `(Δ_i/λ)K(·,x_i)` per region).
pub fn optimal_discriminator(s: &Scenario) -> DiscriminatorState {
    let lambda = s.hyper().lambda();
    let real = s
        .real()
        .points()
        .rows()
        .zip(s.real().weights())
        .map(|(x, p)| (x.to_vec(), p / lambda));
    let generated = s
        .generated()
        .points()
        .rows()
        .zip(s.generated().weights())
        .map(|(x, p)| (x.to_vec(), -p / lambda));
    DiscriminatorState::from_terms(real.chain(generated))
}

// ---------------------------------------------------------------------------
// Simulation driver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    Diverged { at_step: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub points: PointSet,
    pub loss: f64,
    pub disc_norm_sq: f64,
    /// Max distance from any generated point to the target point it was
    /// assigned to at t = 0.
    pub max_dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub steps: Vec<StepRecord>,
    pub status: RunStatus,
}

impl TrajectoryRecord {
    pub fn final_step(&self) -> &StepRecord {
        self.steps.last().expect("a trajectory records at least t=0")
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, RunStatus::Diverged { .. })
    }
}

/// A stepping simulation. [`simulate`] is the convenience wrapper; driving
/// this directly allows custom stopping rules (the stability bisection stops
/// as soon as a run escapes or visibly converges).
pub struct Simulation<'a> {
    scenario: &'a Scenario,
    engine: Engine,
    t: u64,
    assignments: Vec<usize>,
}

enum Engine {
    Explicit(ExplicitEngine),
    Eliminated(EliminatedEngine),
    Local(LocalEngine),
}

impl<'a> Simulation<'a> {
    pub fn new(scenario: &'a Scenario, mode: EngineMode) -> Result<Self, DynamicsError> {
        let assignments = if scenario.real().is_empty() || scenario.generated().is_empty() {
            Vec::new()
        } else {
            scenario.partition_isolated(DEFAULT_ISOLATION_EPS)?.assignments().to_vec()
        };
        let engine = match mode {
            EngineMode::Explicit => Engine::Explicit(ExplicitEngine::new(scenario)),
            EngineMode::Eliminated => Engine::Eliminated(EliminatedEngine::new(scenario)),
            EngineMode::Local => Engine::Local(LocalEngine::new(scenario)?),
        };
        Ok(Self { scenario, engine, t: 0, assignments })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// Current generated points, in the scenario's row order.
    pub fn points(&self) -> PointSet {
        match &self.engine {
            Engine::Explicit(e) => e.points.clone(),
            Engine::Eliminated(e) => e.points.clone(),
            Engine::Local(e) => e.assemble_points(),
        }
    }

    pub fn step(&mut self) -> Result<(), DynamicsError> {
        match &mut self.engine {
            Engine::Explicit(e) => e.step(self.scenario)?,
            Engine::Eliminated(e) => e.step(self.scenario)?,
            Engine::Local(e) => e.step()?,
        }
        self.t += 1;
        Ok(())
    }

    /// Max distance of any generated point from its t=0 target assignment.
    pub fn max_dist(&self) -> f64 {
        let points = self.points();
        let mut worst = 0.0f64;
        for (j, &i) in self.assignments.iter().enumerate() {
            worst = worst.max(dist(points.row(j), self.scenario.real().points().row(i)));
        }
        worst
    }

    /// True once some generated point is non-finite or farther than
    /// `DIVERGENCE_FACTOR·σ` from every target point.
    pub fn escaped(&self) -> bool {
        let points = self.points();
        if !all_finite(points.as_flat()) {
            return true;
        }
        if self.scenario.real().is_empty() {
            return false;
        }
        let limit = DIVERGENCE_FACTOR * self.scenario.kernel().width();
        let escaped = points.rows().any(|x| {
            self.scenario
                .real()
                .points()
                .rows()
                .all(|t| dist(x, t) > limit)
        });
        escaped
    }

    pub fn record(&self) -> Result<StepRecord, DynamicsError> {
        let points = self.points();
        let (linear, norm_sq) = match &self.engine {
            Engine::Explicit(e) => (loss_linear_part(&e.f, &points, self.scenario)?, e.norm_sq),
            Engine::Eliminated(e) => (e.loss_linear_part(self.scenario)?, e.norm_sq),
            Engine::Local(e) => e.loss_parts()?,
        };
        Ok(StepRecord {
            t: self.t,
            points,
            loss: linear - 0.5 * self.scenario.hyper().lambda() * norm_sq,
            disc_norm_sq: norm_sq,
            max_dist: self.max_dist(),
        })
    }
}

/// Runs `t_max` steps from `f⁰ = 0` and the scenario's initial points,
/// recording every `record_every` steps (t = 0 and the final step always
/// included). A run that escapes or hits non-finite values stops early with
/// [`RunStatus::Diverged`] and keeps the last valid record.
pub fn simulate(
    s: &Scenario,
    t_max: u64,
    mode: EngineMode,
    record_every: u64,
) -> Result<TrajectoryRecord, DynamicsError> {
    if t_max == 0 {
        return Err(DynamicsError::InvalidArgument("t_max must be at least 1"));
    }
    if record_every == 0 {
        return Err(DynamicsError::InvalidArgument("record_every must be at least 1"));
    }
    let mut sim = Simulation::new(s, mode)?;
    let mut steps = vec![sim.record()?];
    let mut status = RunStatus::Completed;
    while sim.t() < t_max {
        if let Err(DynamicsError::NonFinite) = sim.step() {
            status = RunStatus::Diverged { at_step: sim.t() + 1 };
            break;
        }
        if sim.escaped() {
            status = RunStatus::Diverged { at_step: sim.t() };
            // The state is still finite here; record it before stopping.
            steps.push(sim.record()?);
            break;
        }
        if sim.t() % record_every == 0 || sim.t() == t_max {
            steps.push(sim.record()?);
        }
    }
    Ok(TrajectoryRecord { steps, status })
}

// ---------------------------------------------------------------------------
// Engine internals
// ---------------------------------------------------------------------------

struct ExplicitEngine {
    f: DiscriminatorState,
    points: PointSet,
    norm_sq: f64,
}

impl ExplicitEngine {
    fn new(s: &Scenario) -> Self {
        Self { f: DiscriminatorState::zero(), points: s.generated().points().clone(), norm_sq: 0.0 }
    }

    fn step(&mut self, s: &Scenario) -> Result<(), DynamicsError> {
        self.norm_sq = next_norm_sq(
            self.norm_sq,
            loss_linear_part(&self.f, &self.points, s)?,
            &self.points,
            s,
        )?;
        let (f, points) = step_explicit(&self.f, &self.points, s)?;
        self.f = f;
        self.points = points;
        Ok(())
    }
}

/// `‖f'‖² = q²‖f‖² + 2qη_d⟨f,g⟩ + η_d²‖g‖²` for the ascent direction `g`;
/// `⟨f,g⟩` is the linear loss part by the reproducing property.
fn next_norm_sq(
    norm_sq: f64,
    f_dot_g: f64,
    points: &PointSet,
    s: &Scenario,
) -> Result<f64, DynamicsError> {
    let q = 1.0 - s.hyper().lambda() * s.hyper().eta_d();
    let eta = s.hyper().eta_d();
    Ok(q * q * norm_sq + 2.0 * q * eta * f_dot_g + eta * eta * ascent_norm_sq(points, s)?)
}

/// `‖g‖²` where `g = Σ p_i K(·,x_i) - Σ p̃_j K(·,x̃_j)`.
fn ascent_norm_sq(points: &PointSet, s: &Scenario) -> Result<f64, DynamicsError> {
    let kernel = s.kernel();
    let n_real = s.real().len();
    let total = n_real + points.len();
    let center = |k: usize| {
        if k < n_real {
            (s.real().points().row(k), s.real().weights()[k])
        } else {
            (points.row(k - n_real), -s.generated().weights()[k - n_real])
        }
    };
    let mut v = 0.0;
    for a in 0..total {
        let (xa, wa) = center(a);
        v += wa * wa;
        for b in (a + 1)..total {
            let (xb, wb) = center(b);
            v += 2.0 * wa * wb * kernel.eval(xa, xb)?;
        }
    }
    Ok(v)
}

struct EliminatedEngine {
    points: PointSet,
    /// Accumulated drift coefficient per target point (`c ← q·c + η_d·p_i`).
    drift_coef: Vec<f64>,
    /// Past iterates with their geometric weights, oldest first.
    memory: VecDeque<(PointSet, f64)>,
    max_gen_weight: f64,
    norm_sq: f64,
}

impl EliminatedEngine {
    fn new(s: &Scenario) -> Self {
        Self {
            points: s.generated().points().clone(),
            drift_coef: vec![0.0; s.real().len()],
            memory: VecDeque::new(),
            max_gen_weight: s.generated().weights().iter().copied().fold(0.0, f64::max),
            norm_sq: 0.0,
        }
    }

    fn step(&mut self, s: &Scenario) -> Result<(), DynamicsError> {
        self.norm_sq =
            next_norm_sq(self.norm_sq, self.loss_linear_part(s)?, &self.points, s)?;

        let next = eliminated_update(
            &self.points,
            s,
            &self.drift_coef,
            self.memory.iter().map(|(p, w)| (p, *w)),
        )?;

        let h = s.hyper();
        let q = 1.0 - h.lambda() * h.eta_d();
        for (c, p) in self.drift_coef.iter_mut().zip(s.real().weights()) {
            *c = q * *c + h.eta_d() * p;
        }
        for (_, w) in self.memory.iter_mut() {
            *w *= q;
        }
        self.memory.push_back((core::mem::replace(&mut self.points, next), h.eta_d()));
        // With |q| < 1 the oldest weights are the smallest; drop entries whose
        // largest term coefficient would already be pruned by the explicit
        // engine.
        if q.abs() < 1.0 {
            while let Some((_, w)) = self.memory.front() {
                if (w * self.max_gen_weight).abs() < PRUNE_TOL {
                    self.memory.pop_front();
                } else {
                    break;
                }
            }
        }
        Ok(())
    }

    /// `Σ p_i f(x_i) - Σ p̃_j f(x̃_j)` for the implied discriminator
    /// `f = Σ_i c_i K(·,x_i) - Σ_s w_s Σ_l p̃_l K(·, x̃ˢ_l)`.
    fn loss_linear_part(&self, s: &Scenario) -> Result<f64, DynamicsError> {
        let eval = |x: &[f64]| -> Result<f64, DynamicsError> {
            let kernel = s.kernel();
            let mut v = 0.0;
            for (i, xi) in s.real().points().rows().enumerate() {
                v += self.drift_coef[i] * kernel.eval(x, xi)?;
            }
            for (past, w) in &self.memory {
                for (l, xl) in past.rows().enumerate() {
                    v -= w * s.generated().weights()[l] * kernel.eval(x, xl)?;
                }
            }
            Ok(v)
        };
        let mut v = 0.0;
        for (i, x) in s.real().points().rows().enumerate() {
            v += s.real().weights()[i] * eval(x)?;
        }
        for (j, x) in self.points.rows().enumerate() {
            v -= s.generated().weights()[j] * eval(x)?;
        }
        Ok(v)
    }
}

struct LocalEngine {
    /// Per region: the restricted scenario (kept at its initial points; the
    /// live positions are in `engine.points`), the member indices into the
    /// full generated set, and an explicit engine.
    regions: Vec<LocalRegion>,
    dim: usize,
    n_gen: usize,
}

struct LocalRegion {
    sub: Scenario,
    members: Vec<usize>,
    engine: ExplicitEngine,
}

impl LocalEngine {
    fn new(s: &Scenario) -> Result<Self, DynamicsError> {
        if s.real().is_empty() {
            return Err(DynamicsError::InvalidArgument(
                "local mode requires at least one target point",
            ));
        }
        let part = s.partition_isolated(DEFAULT_ISOLATION_EPS)?;
        let mut regions = Vec::new();
        for region in 0..part.n_regions() {
            let (sub, members) = s.restrict_to_region(&part, region)?;
            let engine = ExplicitEngine::new(&sub);
            regions.push(LocalRegion { sub, members, engine });
        }
        Ok(Self { regions, dim: s.kernel().dimension(), n_gen: s.generated().len() })
    }

    fn step(&mut self) -> Result<(), DynamicsError> {
        for r in self.regions.iter_mut() {
            r.engine.step(&r.sub)?;
        }
        Ok(())
    }

    fn assemble_points(&self) -> PointSet {
        let mut flat = vec![0.0; self.n_gen * self.dim];
        for r in &self.regions {
            for (local, &global) in r.members.iter().enumerate() {
                flat[global * self.dim..(global + 1) * self.dim]
                    .copy_from_slice(r.engine.points.row(local));
            }
        }
        PointSet::from_flat(flat, self.dim).expect("assembled points are well-formed")
    }

    /// Loss of the summed regional discriminators, with cross-region RKHS
    /// inner products dropped (they are bounded by the partition's kernel
    /// floor, which is what the local model assumes negligible).
    fn loss_parts(&self) -> Result<(f64, f64), DynamicsError> {
        let mut linear = 0.0;
        let mut norm_sq = 0.0;
        for r in &self.regions {
            let sub = r.sub.with_generated_points(r.engine.points.clone())?;
            linear += loss_linear_part(&r.engine.f, &r.engine.points, &sub)?;
            norm_sq += r.engine.norm_sq;
        }
        Ok((linear, norm_sq))
    }
}
