//! Closed-form local linearization around the equilibrium where a region's
//! generated points sit on its target point.
//!
//! With equal generated weights `p̃` in the region, the linearized update has
//! eigenvalues `ρ = 1 - η_d·ν` where `ν` comes from
//!
//! ```text
//! a = λ,   b = μ p̃ Δ / (λσ²),   c = μ p̃ p / σ²,   m = (a+b)/2,
//! ν ∈ {a, b, m ± √(m²-c)}      (b only with more than one generated point)
//! ```
//!
//! `m² < c` makes the quadratic pair complex and the trajectory spiral. The
//! spectral radius over the whole set decides stability and the geometric
//! convergence rate; which of `ρ_a`, `ρ_b`, `ρ_c` attains it classifies the
//! phase.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::scenario::{Hyperparams, NeighborhoodPartition, Scenario, ScenarioError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SpectrumError {
    #[error("region {region}: generated weights differ by {max_dev} (> 1e-12); equal weights required")]
    UnequalWeights { region: usize, max_dev: f64 },
    #[error("region {0} has no generated points")]
    EmptyRegion(usize),
    #[error("coefficient `{coefficient}` is not positive ({cause}); the two-sided bound needs a, b, c > 0")]
    NonpositiveCoefficient { coefficient: &'static str, cause: &'static str },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Tolerance for the equal-generated-weights hypothesis.
pub const WEIGHT_EQUALITY_TOL: f64 = 1e-12;

/// The `(a, b, c, m, Δ, |N_i|)` coefficient bundle of one region's
/// linearization, plus the raw parameters it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalLinearization {
    a: f64,
    b: f64,
    c: f64,
    m: f64,
    delta: f64,
    p_i: f64,
    p_tilde: f64,
    n_gen: usize,
    dim: usize,
    sigma: f64,
    hyper: Hyperparams,
}

impl LocalLinearization {
    /// Builds the coefficient bundle from raw parameters. `p_tilde` is the
    /// common weight of the region's `n_gen` generated points.
    pub fn new(
        sigma: f64,
        dim: usize,
        hyper: Hyperparams,
        p_i: f64,
        p_tilde: f64,
        n_gen: usize,
    ) -> Self {
        let mu = hyper.mu();
        let lambda = hyper.lambda();
        let delta = p_i - n_gen as f64 * p_tilde;
        let a = lambda;
        let b = mu * p_tilde * delta / (lambda * sigma * sigma);
        let c = mu * p_tilde * p_i / (sigma * sigma);
        Self { a, b, c, m: 0.5 * (a + b), delta, p_i, p_tilde, n_gen, dim, sigma, hyper }
    }

    /// Linearizes one region of a scenario, checking the equal-weights
    /// hypothesis.
    pub fn from_region(
        s: &Scenario,
        part: &NeighborhoodPartition,
        region: usize,
    ) -> Result<Self, SpectrumError> {
        if region >= part.n_regions() {
            return Err(ScenarioError::NoSuchRegion(region).into());
        }
        let weights: Vec<f64> =
            part.members(region).map(|j| s.generated().weights()[j]).collect();
        let Some(&first) = weights.first() else {
            return Err(SpectrumError::EmptyRegion(region));
        };
        let max_dev = weights.iter().map(|w| (w - first).abs()).fold(0.0, f64::max);
        if max_dev > WEIGHT_EQUALITY_TOL {
            return Err(SpectrumError::UnequalWeights { region, max_dev });
        }
        let mut lin = Self::new(
            s.kernel().width(),
            s.kernel().dimension(),
            *s.hyper(),
            s.real().weights()[region],
            first,
            weights.len(),
        );
        // Keep the exact summed gap (equal weights make the difference pure
        // rounding, but the sum is the defining quantity).
        lin.delta = s.mass_gap(part, region)?;
        Ok(lin)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Mass-gap mode `μ p̃ Δ / (λσ²)`.
    pub fn b(&self) -> f64 {
        self.b
    }

    /// Coupling `μ p̃ p / σ²`.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// `(a + b) / 2`.
    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn p_i(&self) -> f64 {
        self.p_i
    }

    pub fn p_tilde(&self) -> f64 {
        self.p_tilde
    }

    pub fn n_gen(&self) -> usize {
        self.n_gen
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    /// The `ν` set with labels and multiplicities. The quadratic pair becomes
    /// complex when `m² < c`; the `b` mode exists only with more than one
    /// generated point.
    pub fn eigenvalues(&self) -> Vec<Eigenvalue> {
        let mut out = Vec::with_capacity(4);
        out.push(Eigenvalue {
            nu: Complex64::new(self.a, 0.0),
            label: EigenLabel::A,
            multiplicity: Multiplicity::Ambient,
        });
        if self.n_gen > 1 {
            out.push(Eigenvalue {
                nu: Complex64::new(self.b, 0.0),
                label: EigenLabel::B,
                multiplicity: Multiplicity::Count((self.n_gen - 1) * self.dim),
            });
        }
        let disc = self.m * self.m - self.c;
        let (plus, minus) = if disc >= 0.0 {
            let r = libm::sqrt(disc);
            (Complex64::new(self.m + r, 0.0), Complex64::new(self.m - r, 0.0))
        } else {
            let r = libm::sqrt(-disc);
            (Complex64::new(self.m, r), Complex64::new(self.m, -r))
        };
        out.push(Eigenvalue {
            nu: plus,
            label: EigenLabel::CPlus,
            multiplicity: Multiplicity::Count(self.dim),
        });
        out.push(Eigenvalue {
            nu: minus,
            label: EigenLabel::CMinus,
            multiplicity: Multiplicity::Count(self.dim),
        });
        out
    }

    /// Maps every `ν` to `ρ = 1 - η_d ν` and summarizes radius, dominance and
    /// stability.
    pub fn rho_set(&self, eta_d: f64) -> SpectrumReport {
        assert!(eta_d > 0.0, "eta_d must be positive");
        let nus = self.eigenvalues();
        let rhos: Vec<Complex64> =
            nus.iter().map(|e| Complex64::new(1.0, 0.0) - eta_d * e.nu).collect();

        let mag = |label: EigenLabel| -> Option<f64> {
            nus.iter()
                .zip(&rhos)
                .filter(|(e, _)| e.label == label)
                .map(|(_, r)| r.norm())
                .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
        };
        let mag_a = mag(EigenLabel::A).expect("a is always present");
        let mag_b = mag(EigenLabel::B);
        let mag_c = mag(EigenLabel::CPlus)
            .expect("pair is always present")
            .max(mag(EigenLabel::CMinus).expect("pair is always present"));

        let mut dominant = DominantLabel::A;
        let mut rho_max = mag_a;
        if let Some(mb) = mag_b {
            if mb > rho_max {
                dominant = DominantLabel::B;
                rho_max = mb;
            }
        }
        if mag_c > rho_max {
            dominant = DominantLabel::C;
            rho_max = mag_c;
        }

        SpectrumReport {
            nus,
            rhos,
            rho_max,
            dominant,
            complex_pair: self.complex_pair(),
            stable: rho_max < 1.0,
            eta_d,
        }
    }

    /// True when the quadratic pair is complex (`m² < c`).
    pub fn complex_pair(&self) -> bool {
        self.m * self.m < self.c
    }

    /// The closed-form step-size bound: `η_d` keeps every listed `ρ` inside
    /// the unit circle iff `0 < η_d < bound`, with
    /// `bound = min{2/a, 2/b, (a+b)/c}` (the `2/b` term only with more than
    /// one generated point).
    ///
    /// The formula is exact whenever the quadratic pair is complex, and for
    /// multiple generated points always. For a single generated point with a
    /// real pair and `b > a` it overestimates the exact threshold
    /// `2/(m + √(m²-c))`: the bound derives from the pair's modulus
    /// condition, which misses the lower real root crossing -1. The pinned
    /// regression tests document that regime.
    pub fn stability_bound(&self) -> Result<StabilityBound, SpectrumError> {
        if self.a <= 0.0 {
            return Err(SpectrumError::NonpositiveCoefficient {
                coefficient: "a",
                cause: "lambda <= 0",
            });
        }
        if self.b <= 0.0 {
            return Err(SpectrumError::NonpositiveCoefficient {
                coefficient: "b",
                cause: "mass gap delta <= 0",
            });
        }
        // c > 0 follows from positive masses once delta > 0.
        let mut bound = (2.0 / self.a).min((self.a + self.b) / self.c);
        if self.n_gen > 1 {
            bound = bound.min(2.0 / self.b);
        }
        Ok(StabilityBound { bound, n_gen: self.n_gen })
    }

    /// Phase of the linearized system at this step size.
    pub fn classify(&self, eta_d: f64) -> (Phase, PairKind) {
        let report = self.rho_set(eta_d);
        let pair = if report.complex_pair { PairKind::Complex } else { PairKind::Real };
        if report.rho_max >= 1.0 {
            return (Phase::Divergent, pair);
        }
        let phase = match report.dominant {
            DominantLabel::A => Phase::ADominant,
            DominantLabel::B => Phase::BDominant,
            DominantLabel::C => Phase::CDominant,
        };
        (phase, pair)
    }

    /// True when shrinking the kernel width can no longer improve the rate:
    /// the σ-independent `ρ_a` already dominates. Callers are expected to be
    /// inside the stability region.
    pub fn saturation(&self, eta_d: f64) -> bool {
        let disc = self.m * self.m - self.c;
        if disc > 0.0 {
            self.a < self.b.min(self.m - libm::sqrt(disc))
        } else if disc < 0.0 {
            self.a < self.b.min(2.0 * self.m - eta_d * self.c)
        } else {
            false
        }
    }

    /// Small-step-size magnitudes `|ρ|² ≈ 1 - 2η_d·Re(ν)` per label, and the
    /// resulting approximate worst rate `1 - 2η_d·min{a, b}` (squared-
    /// magnitude scale). The `c` approximation assumes the complex regime.
    pub fn small_lr_report(&self, eta_d: f64) -> SmallLrReport {
        SmallLrReport {
            mag_sq_a: 1.0 - 2.0 * eta_d * self.a,
            mag_sq_b: 1.0 - 2.0 * eta_d * self.b,
            mag_sq_c: 1.0 - eta_d * (self.a + self.b),
            rate: 1.0 - 2.0 * eta_d * self.a.min(self.b),
        }
    }

    /// The set of inverse-square widths `γ = 1/σ²` where the pair is complex,
    /// solved from the discriminant of `m(γ)² - c(γ)` (a quadratic
    /// `B²γ² + (2λB - 4C)γ + λ²` with `B = μp̃Δ/λ`, `C = μp̃p`).
    pub fn oscillation_gamma_range(&self) -> OscillationRange {
        let lambda = self.hyper.lambda();
        let mu = self.hyper.mu();
        let b_slope = mu * self.p_tilde * self.delta / lambda;
        let c_slope = mu * self.p_tilde * self.p_i;
        if self.delta == 0.0 {
            // m² < c reduces to λ²/4 < Cγ.
            return OscillationRange::Above(lambda * lambda / (4.0 * c_slope));
        }
        // Quarter of the quadratic's discriminant: 4C(C - λB).
        let quarter_disc = c_slope * (c_slope - lambda * b_slope);
        if quarter_disc <= 0.0 {
            return OscillationRange::Empty { delta: self.delta, p_i: self.p_i };
        }
        let root = 2.0 * libm::sqrt(quarter_disc);
        let mid = 2.0 * c_slope - lambda * b_slope;
        let denom = b_slope * b_slope;
        OscillationRange::Interval((mid - root) / denom, (mid + root) / denom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenLabel {
    A,
    B,
    CPlus,
    CMinus,
}

/// Multiplicity of a `ν` value. The `a` mode repeats once per ambient feature
/// direction, which depends on the discriminator representation rather than
/// on the region, so it is reported symbolically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Multiplicity {
    Ambient,
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue {
    pub nu: Complex64,
    pub label: EigenLabel,
    pub multiplicity: Multiplicity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DominantLabel {
    A,
    B,
    C,
}

/// Phase of the linearized dynamics at a given step size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Divergent,
    ADominant,
    BDominant,
    CDominant,
}

/// Whether the quadratic eigenvalue pair is real or complex (oscillatory).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    pub nus: Vec<Eigenvalue>,
    /// `ρ = 1 - η_d ν`, aligned with `nus`.
    pub rhos: Vec<Complex64>,
    pub rho_max: f64,
    pub dominant: DominantLabel,
    pub complex_pair: bool,
    pub stable: bool,
    pub eta_d: f64,
}

/// Two-sided step-size condition: stable iff `0 < η_d < bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityBound {
    pub bound: f64,
    pub n_gen: usize,
}

impl StabilityBound {
    pub fn stable_for(&self, eta_d: f64) -> bool {
        eta_d > 0.0 && eta_d < self.bound
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallLrReport {
    pub mag_sq_a: f64,
    pub mag_sq_b: f64,
    pub mag_sq_c: f64,
    /// Approximate largest squared magnitude `1 - 2η_d·min{a, b}`.
    pub rate: f64,
}

/// Widths (as `γ = 1/σ²`) with a complex quadratic pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OscillationRange {
    /// Zero mass gap: every `γ` above this oscillates.
    Above(f64),
    /// Oscillation between the two positive roots.
    Interval(f64, f64),
    /// No real roots (mass gap at least the target mass): no width
    /// oscillates.
    Empty { delta: f64, p_i: f64 },
}

impl OscillationRange {
    pub fn contains(&self, gamma: f64) -> bool {
        match *self {
            OscillationRange::Above(lo) => gamma > lo,
            OscillationRange::Interval(lo, hi) => gamma > lo && gamma < hi,
            OscillationRange::Empty { .. } => false,
        }
    }
}

/// Sufficient stability condition on both step sizes:
/// `η_d < 2/λ` and `η_g < λσ²` (strict), valid for any mass gap in `(0, p)`.
pub fn sufficient_stability(s: &Scenario) -> bool {
    let h = s.hyper();
    let sigma = s.kernel().width();
    h.eta_d() < 2.0 / h.lambda() && h.eta_g() < h.lambda() * sigma * sigma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::scenario::{PointMasses, PointSet};

    fn hyper(eta: f64, lambda: f64) -> Hyperparams {
        Hyperparams::new(eta, eta, lambda).unwrap()
    }

    /// Fig-2-style coefficients: λ=1, σ=1, μ=1, p=1, p̃=0.8, one point.
    fn fig2_lin() -> LocalLinearization {
        LocalLinearization::new(1.0, 1, hyper(1e-2, 1.0), 1.0, 0.8, 1)
    }

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn coefficients_hand_values() {
        let lin = fig2_lin();
        assert_eq!(lin.a(), 1.0);
        assert!(approx(lin.b(), 0.16, 1e-15));
        assert!(approx(lin.c(), 0.8, 1e-15));
        assert!(approx(lin.m(), 0.58, 1e-15));
        assert!(approx(lin.delta(), 0.2, 1e-15));
    }

    #[test]
    fn zero_gap_coefficients() {
        let lin = LocalLinearization::new(1.0, 1, hyper(1e-2, 1.0), 1.0, 1.0, 1);
        assert_eq!(lin.b(), 0.0);
        assert_eq!(lin.m(), lin.a() / 2.0);
    }

    #[test]
    fn linearize_rejects_mixed_weights() {
        let k = KernelSpec::rbf(1.0, 1).unwrap();
        let real = PointMasses::from_rows(&[vec![0.0]], vec![1.0]).unwrap();
        let gen = PointMasses::new(
            PointSet::from_flat(vec![0.1, -0.1], 1).unwrap(),
            vec![0.5, 0.3],
        )
        .unwrap();
        let s = Scenario::new(k, real, gen, hyper(1e-2, 1.0)).unwrap();
        let part = s.partition_isolated(1e-8).unwrap();
        assert!(matches!(
            LocalLinearization::from_region(&s, &part, 0),
            Err(SpectrumError::UnequalWeights { region: 0, .. })
        ));
    }

    #[test]
    fn linearize_from_scenario_matches_raw() {
        let k = KernelSpec::rbf(1.0, 1).unwrap();
        let real = PointMasses::from_rows(&[vec![0.0]], vec![1.0]).unwrap();
        let gen = PointMasses::new(PointSet::from_flat(vec![0.1], 1).unwrap(), vec![0.8]).unwrap();
        let s = Scenario::new(k, real, gen, hyper(1e-2, 1.0)).unwrap();
        let part = s.partition_isolated(1e-8).unwrap();
        let lin = LocalLinearization::from_region(&s, &part, 0).unwrap();
        assert_eq!(lin, fig2_lin());
    }

    #[test]
    fn eigenvalues_fig2() {
        let nus = fig2_lin().eigenvalues();
        assert_eq!(nus.len(), 3);
        assert_eq!(nus[0].nu, Complex64::new(1.0, 0.0));
        assert_eq!(nus[0].multiplicity, Multiplicity::Ambient);
        let imag = libm::sqrt(0.8 - 0.58 * 0.58);
        assert!(approx(nus[1].nu.re, 0.58, 1e-15));
        assert!(approx(nus[1].nu.im, imag, 1e-15));
        assert!(approx(imag, 0.68088, 1e-5));
        assert!(approx(nus[2].nu.im, -imag, 1e-15));
    }

    #[test]
    fn eigenvalues_zero_gap() {
        let lin = LocalLinearization::new(1.0, 1, hyper(1e-2, 1.0), 1.0, 1.0, 1);
        let nus = lin.eigenvalues();
        assert!(approx(nus[1].nu.re, 0.5, 1e-15));
        assert!(approx(nus[1].nu.im, 0.8660254037844386, 1e-15));
    }

    #[test]
    fn eigenvalues_two_points() {
        let lin = LocalLinearization::new(1.0, 2, hyper(1e-2, 1.0), 1.0, 0.4, 2);
        assert!(approx(lin.b(), 0.08, 1e-15));
        assert!(approx(lin.c(), 0.4, 1e-15));
        let nus = lin.eigenvalues();
        assert_eq!(nus.len(), 4);
        assert_eq!(nus[1].label, EigenLabel::B);
        assert_eq!(nus[1].multiplicity, Multiplicity::Count(2));
        assert!(approx(nus[2].nu.re, 0.54, 1e-15));
        assert!(approx(nus[2].nu.im, libm::sqrt(0.4 - 0.54 * 0.54), 1e-15));
        assert!(approx(nus[2].nu.im, 0.32924, 1e-5));
    }

    #[test]
    fn n2_reduces_to_n1_without_b() {
        // Same (a, b, c): the two-point spectrum minus its b root is exactly
        // the one-point spectrum.
        let l2 = LocalLinearization::new(1.0, 1, hyper(1e-2, 1.0), 1.0, 0.4, 2);
        let mut l1 = LocalLinearization::new(1.0, 1, hyper(1e-2, 1.0), 1.0, 0.4, 1);
        // Force identical coefficients (delta differs between the two).
        l1.b = l2.b;
        l1.c = l2.c;
        l1.m = l2.m;
        let vals2: Vec<Complex64> = l2
            .eigenvalues()
            .iter()
            .filter(|e| e.label != EigenLabel::B)
            .map(|e| e.nu)
            .collect();
        let vals1: Vec<Complex64> = l1.eigenvalues().iter().map(|e| e.nu).collect();
        assert_eq!(vals1, vals2);
    }

    #[test]
    fn rho_set_fig2() {
        let report = fig2_lin().rho_set(1e-2);
        // |rho_c|² = 1 - eta(a+b) + eta²c = 0.98848 exactly.
        assert!(approx(report.rho_max, libm::sqrt(0.98848), 1e-12));
        assert!(approx(report.rho_max, 0.9942233, 1e-7));
        assert_eq!(report.dominant, DominantLabel::C);
        assert!(report.complex_pair);
        assert!(report.stable);
        for (e, r) in report.nus.iter().zip(&report.rhos) {
            let expect = Complex64::new(1.0, 0.0) - 1e-2 * e.nu;
            assert_eq!(*r, expect);
        }
    }

    #[test]
    fn rho_set_two_points_b_dominates() {
        let lin = LocalLinearization::new(1.0, 1, hyper(1e-2, 1.0), 1.0, 0.4, 2);
        let report = lin.rho_set(1e-2);
        assert!(approx(report.rho_max, 0.9992, 1e-15));
        assert_eq!(report.dominant, DominantLabel::B);
        // |rho_c| ~ 0.994606
        let mag_c = report.rhos[2].norm();
        assert!(approx(mag_c, 0.994606, 1e-6));
    }

    #[test]
    fn degenerate_rho_a_cancels_exactly() {
        // b = c = 0 (no generated mass in the template), eta_d·a = 1.
        let lin = LocalLinearization::new(1.0, 1, hyper(1.0, 1.0), 1.0, 0.0, 1);
        assert_eq!(lin.b(), 0.0);
        assert_eq!(lin.c(), 0.0);
        let report = lin.rho_set(1.0);
        let rho_a = report.rhos[0];
        assert_eq!(rho_a, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn stability_bound_hand_values() {
        let bound = fig2_lin().stability_bound().unwrap();
        assert!(approx(bound.bound, 1.45, 1e-12));
        assert!(bound.stable_for(1.0));
        assert!(!bound.stable_for(1.45));
        assert!(!bound.stable_for(0.0));

        let lin2 = LocalLinearization::new(1.0, 1, hyper(1e-2, 1.0), 1.0, 0.4, 2);
        // min{2/1, 2/0.08, 1.08/0.4} = 2
        assert!(approx(lin2.stability_bound().unwrap().bound, 2.0, 1e-12));
    }

    #[test]
    fn boundary_step_size_puts_a_rho_on_the_unit_circle() {
        let lin = fig2_lin();
        let bound = lin.stability_bound().unwrap().bound;
        let report = lin.rho_set(bound);
        assert!(approx(report.rho_max, 1.0, 1e-12));
        assert!(!report.stable);
    }

    #[test]
    fn nonpositive_gap_has_no_two_sided_bound() {
        let lin = LocalLinearization::new(1.0, 1, hyper(1e-2, 1.0), 1.0, 1.0, 1);
        assert!(matches!(
            lin.stability_bound(),
            Err(SpectrumError::NonpositiveCoefficient { coefficient: "b", .. })
        ));
    }

    #[test]
    fn sufficient_condition_examples() {
        let k = KernelSpec::rbf(1.0, 1).unwrap();
        let real = PointMasses::from_rows(&[vec![0.0]], vec![1.0]).unwrap();
        let gen = PointMasses::from_rows(&[vec![0.1]], vec![0.8]).unwrap();
        let s = Scenario::new(k, real.clone(), gen.clone(), hyper(1e-2, 1.0)).unwrap();
        assert!(sufficient_stability(&s));

        // eta_g = lambda sigma² exactly: strict inequality fails.
        let s2 = s.with_hyper(Hyperparams::new(1e-2, 1.0, 1.0).unwrap());
        assert!(!sufficient_stability(&s2));

        let k3 = KernelSpec::rbf(0.1, 1).unwrap();
        let s3 = Scenario::new(k3, real, gen, Hyperparams::new(1e-2, 1e-2, 0.01).unwrap()).unwrap();
        assert!(!sufficient_stability(&s3));
    }

    #[test]
    fn classify_fig2_and_small_width() {
        let (phase, pair) = fig2_lin().classify(1e-2);
        assert_eq!((phase, pair), (Phase::CDominant, PairKind::Complex));

        // sigma = 0.05: b = 64, c = 320, real pair, rho_a dominates.
        let lin = LocalLinearization::new(0.05, 1, hyper(1e-2, 1.0), 1.0, 0.8, 1);
        assert!(approx(lin.b(), 64.0, 1e-10));
        assert!(approx(lin.c(), 320.0, 1e-10));
        let (phase, pair) = lin.classify(1e-2);
        assert_eq!((phase, pair), (Phase::ADominant, PairKind::Real));

        let (phase, _) = fig2_lin().classify(3.0);
        assert_eq!(phase, Phase::Divergent);
    }

    #[test]
    fn saturation_examples() {
        // Small width: a = 1 < min(64, m - sqrt(m²-c) ≈ 5.37).
        let lin = LocalLinearization::new(0.05, 1, hyper(1e-2, 1.0), 1.0, 0.8, 1);
        assert!(lin.saturation(1e-2));

        // Fig 2: a = 1 > b = 0.16.
        assert!(!fig2_lin().saturation(1e-2));

        // a = b crossing at sigma = 0.4: strict inequality, not saturated.
        let lin = LocalLinearization::new(0.4, 1, hyper(1e-2, 1.0), 1.0, 0.8, 1);
        assert!(approx(lin.b(), 1.0, 1e-12));
        assert!(!lin.saturation(1e-2));
    }

    #[test]
    fn small_lr_report_values() {
        let rep = fig2_lin().small_lr_report(1e-2);
        assert!(approx(rep.rate, 0.9968, 1e-12));

        let lin0 = LocalLinearization::new(1.0, 1, hyper(1e-2, 1.0), 1.0, 1.0, 1);
        assert_eq!(lin0.small_lr_report(1e-2).rate, 1.0);
    }

    #[test]
    fn small_lr_error_is_exactly_quadratic() {
        // |rho_a|² - approx = (eta a)², |rho_b|² - approx = (eta b)², and in
        // the complex regime |rho_c|² - approx = eta²c.
        let lin = LocalLinearization::new(1.0, 1, hyper(1e-4, 1.0), 1.0, 0.4, 2);
        assert!(lin.complex_pair());
        let eta = 1e-4;
        let rep = lin.rho_set(eta);
        let approx_rep = lin.small_lr_report(eta);
        let exact_a = rep.rhos[0].norm_sqr();
        let exact_b = rep.rhos[1].norm_sqr();
        let exact_c = rep.rhos[2].norm_sqr();
        assert!(approx(exact_a - approx_rep.mag_sq_a, (eta * lin.a()) * (eta * lin.a()), 1e-16));
        assert!(approx(exact_b - approx_rep.mag_sq_b, (eta * lin.b()) * (eta * lin.b()), 1e-16));
        assert!(approx(exact_c - approx_rep.mag_sq_c, eta * eta * lin.c(), 1e-16));
    }

    #[test]
    fn oscillation_range_zero_gap() {
        let lin = LocalLinearization::new(1.0, 1, hyper(1e-2, 1.0), 1.0, 1.0, 1);
        match lin.oscillation_gamma_range() {
            OscillationRange::Above(lo) => assert!(approx(lo, 0.25, 1e-15)),
            other => panic!("expected Above, got {other:?}"),
        }
    }

    #[test]
    fn oscillation_range_fig2_matches_closed_form() {
        let lin = fig2_lin();
        let OscillationRange::Interval(lo, hi) = lin.oscillation_gamma_range() else {
            panic!("expected an interval");
        };
        // Closed form (λ²/(Δ²p̃μ))(2p - Δ ∓ 2p√(1 - Δ/p)).
        let scale = 1.0 / (0.2 * 0.2 * 0.8);
        let root = 2.0 * libm::sqrt(1.0 - 0.2);
        let lo_cf = scale * (2.0 - 0.2 - root);
        let hi_cf = scale * (2.0 - 0.2 + root);
        assert!(approx(lo / lo_cf, 1.0, 1e-12), "{lo} vs {lo_cf}");
        assert!(approx(hi / hi_cf, 1.0, 1e-12), "{hi} vs {hi_cf}");
        assert!(approx(lo, 0.34828, 2e-5));
        assert!(approx(hi, 112.1517, 2e-4));
        // sigma = 1 lies inside, consistent with the complex pair at Fig 2.
        assert!(lin.oscillation_gamma_range().contains(1.0));
        assert!(lin.complex_pair());
    }

    #[test]
    fn oscillation_range_empty_when_gap_reaches_target_mass() {
        // delta >= p is only reachable in raw templates (p̃ -> 0); the
        // quadratic has no real roots there and no width oscillates.
        let lin = LocalLinearization::new(1.0, 1, hyper(1e-2, 1.0), 1.0, 0.0, 1);
        assert_eq!(lin.delta(), lin.p_i());
        assert!(matches!(lin.oscillation_gamma_range(), OscillationRange::Empty { .. }));
    }

    #[test]
    fn stability_bound_overestimates_in_single_point_real_regime() {
        // Known limitation, pinned: n=1, real pair, b >> a. The closed-form
        // bound min{2/a, (a+b)/c} exceeds the exact spectral threshold
        // 2/(m + sqrt(m²-c)), so a step size between the two has rho_max > 1
        // while stable_for still reports true.
        let lin = LocalLinearization::new(0.05, 1, hyper(1e-2, 1.0), 1.0, 0.8, 1);
        let bound = lin.stability_bound().unwrap();
        let nu_plus = lin.m() + libm::sqrt(lin.m() * lin.m() - lin.c());
        let exact = 2.0 / nu_plus;
        assert!(exact < bound.bound, "exact {exact} vs formula {}", bound.bound);

        let eta = 0.5 * (exact + bound.bound);
        assert!(bound.stable_for(eta));
        let report = lin.rho_set(eta);
        assert!(report.rho_max > 1.0, "spectral radius {}", report.rho_max);
    }
}
