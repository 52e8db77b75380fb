//! Problem instances: weighted point masses, hyperparameters, and the
//! isolated-neighborhood partition that localizes the dynamics per target
//! point.

use alloc::vec::Vec;

use crate::kernel::{KernelError, KernelSpec};
use crate::vecmath::dist_sq;

/// Isolation threshold on cross-region kernel values. The RBF is nowhere
/// exactly zero, so "isolated" means every cross-region kernel evaluation
/// stays below this.
pub const DEFAULT_ISOLATION_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: &'static str },
    #[error("dimension mismatch between `{left}` (d={left_dim}) and `{right}` (d={right_dim})")]
    DimensionMismatch { left: &'static str, left_dim: usize, right: &'static str, right_dim: usize },
    #[error("no region with index {0}")]
    NoSuchRegion(usize),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// A dense `n × d` row-major set of points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    data: Vec<f64>,
    dim: usize,
}

impl PointSet {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ScenarioError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(ScenarioError::InvalidField {
                    field: "points",
                    reason: "all points must share one dimension",
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(data, dim.max(1))
    }

    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self, ScenarioError> {
        if dim == 0 {
            return Err(ScenarioError::InvalidField { field: "points", reason: "dimension must be at least 1" });
        }
        if data.len() % dim != 0 {
            return Err(ScenarioError::InvalidField {
                field: "points",
                reason: "flat length must be a multiple of the dimension",
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(ScenarioError::InvalidField { field: "points", reason: "coordinates must be finite" });
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &PointSet) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A discrete distribution of weighted point masses. Weights are positive but
/// are not required to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMasses {
    points: PointSet,
    weights: Vec<f64>,
}

impl PointMasses {
    pub fn new(points: PointSet, weights: Vec<f64>) -> Result<Self, ScenarioError> {
        if points.len() != weights.len() {
            return Err(ScenarioError::InvalidField {
                field: "weights",
                reason: "length must equal the number of points",
            });
        }
        if !weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
            return Err(ScenarioError::InvalidField {
                field: "weights",
                reason: "all weights must be positive and finite",
            });
        }
        Ok(Self { points, weights })
    }

    pub fn from_rows(rows: &[Vec<f64>], weights: Vec<f64>) -> Result<Self, ScenarioError> {
        Self::new(PointSet::from_rows(rows)?, weights)
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Step sizes and regularization. `μ = η_g/η_d` is always derived, never
/// stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    eta_d: f64,
    eta_g: f64,
    lambda: f64,
}

impl Hyperparams {
    pub fn new(eta_d: f64, eta_g: f64, lambda: f64) -> Result<Self, ScenarioError> {
        for (v, field) in [(eta_d, "eta_d"), (eta_g, "eta_g"), (lambda, "lambda")] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ScenarioError::InvalidField { field, reason: "must be positive and finite" });
            }
        }
        Ok(Self { eta_d, eta_g, lambda })
    }

    pub fn eta_d(&self) -> f64 {
        self.eta_d
    }

    pub fn eta_g(&self) -> f64 {
        self.eta_g
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Step-size ratio `μ = η_g / η_d`.
    pub fn mu(&self) -> f64 {
        self.eta_g / self.eta_d
    }

    /// Same ratio `μ`, different discriminator step. Used by sweeps that move
    /// both learning rates together.
    pub fn with_eta_d(&self, eta_d: f64) -> Result<Self, ScenarioError> {
        Self::new(eta_d, self.mu() * eta_d, self.lambda)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, ScenarioError> {
        Self::new(self.eta_d, self.eta_g, lambda)
    }
}

/// A full problem instance: kernel, target masses `(X, p)`, initial generated
/// masses `(X̃⁰, p̃)` and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    kernel: KernelSpec,
    real: PointMasses,
    generated: PointMasses,
    hyper: Hyperparams,
}

impl Scenario {
    pub fn new(
        kernel: KernelSpec,
        real: PointMasses,
        generated: PointMasses,
        hyper: Hyperparams,
    ) -> Result<Self, ScenarioError> {
        for (masses, name) in [(&real, "real"), (&generated, "generated")] {
            if !masses.is_empty() && masses.points().dim() != kernel.dimension() {
                return Err(ScenarioError::DimensionMismatch {
                    left: "kernel",
                    left_dim: kernel.dimension(),
                    right: name,
                    right_dim: masses.points().dim(),
                });
            }
        }
        Ok(Self { kernel, real, generated, hyper })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn real(&self) -> &PointMasses {
        &self.real
    }

    pub fn generated(&self) -> &PointMasses {
        &self.generated
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn with_hyper(&self, hyper: Hyperparams) -> Self {
        Self { hyper, ..self.clone() }
    }

    /// Replaces the initial generated points, keeping weights.
    pub fn with_generated_points(&self, points: PointSet) -> Result<Self, ScenarioError> {
        let generated = PointMasses::new(points, self.generated.weights().to_vec())?;
        Self::new(self.kernel, self.real.clone(), generated, self.hyper)
    }

    /// Assigns every generated point to its nearest target point (ties to the
    /// lowest target index) and measures isolation: `kernel_floor` is the
    /// largest kernel value between points of distinct regions, and the
    /// partition is separated when that floor is at most `eps`.
    pub fn partition_isolated(&self, eps: f64) -> Result<NeighborhoodPartition, ScenarioError> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(ScenarioError::InvalidField {
                field: "eps",
                reason: "isolation threshold must lie in (0, 1)",
            });
        }
        if self.real.is_empty() {
            return Err(ScenarioError::InvalidField {
                field: "real",
                reason: "at least one target point is required to partition",
            });
        }
        let assignments: Vec<usize> = self
            .generated
            .points()
            .rows()
            .map(|g| {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (i, t) in self.real.points().rows().enumerate() {
                    let d = dist_sq(g, t);
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                best
            })
            .collect();

        // Region i owns the target point x_i plus its assigned generated
        // points; the floor is the max kernel value over cross-region pairs.
        let n_regions = self.real.len();
        let mut kernel_floor = 0.0f64;
        let region_points = |i: usize| {
            core::iter::once(self.real.points().row(i)).chain(
                assignments
                    .iter()
                    .enumerate()
                    .filter(move |(_, r)| **r == i)
                    .map(|(j, _)| self.generated.points().row(j)),
            )
        };
        for i in 0..n_regions {
            for i2 in (i + 1)..n_regions {
                for a in region_points(i) {
                    for b in region_points(i2) {
                        kernel_floor = kernel_floor.max(self.kernel.eval(a, b)?);
                    }
                }
            }
        }

        Ok(NeighborhoodPartition {
            assignments,
            n_regions,
            separation_ok: kernel_floor <= eps,
            kernel_floor,
            eps,
        })
    }

    /// Mass gap `Δ_i = p_i - Σ_{j ∈ N_i} p̃_j` of one region.
    pub fn mass_gap(&self, part: &NeighborhoodPartition, region: usize) -> Result<f64, ScenarioError> {
        if region >= part.n_regions {
            return Err(ScenarioError::NoSuchRegion(region));
        }
        let generated: f64 = part
            .members(region)
            .map(|j| self.generated.weights()[j])
            .sum();
        Ok(self.real.weights()[region] - generated)
    }

    /// The sub-instance seen by one region: its target point and the generated
    /// points assigned to it. Returns the restriction together with the
    /// original indices of the retained generated points.
    pub fn restrict_to_region(
        &self,
        part: &NeighborhoodPartition,
        region: usize,
    ) -> Result<(Scenario, Vec<usize>), ScenarioError> {
        if region >= part.n_regions {
            return Err(ScenarioError::NoSuchRegion(region));
        }
        let real = PointMasses::new(
            PointSet::from_flat(self.real.points().row(region).to_vec(), self.kernel.dimension())?,
            alloc::vec![self.real.weights()[region]],
        )?;
        let members: Vec<usize> = part.members(region).collect();
        let mut flat = Vec::with_capacity(members.len() * self.kernel.dimension());
        let mut weights = Vec::with_capacity(members.len());
        for &j in &members {
            flat.extend_from_slice(self.generated.points().row(j));
            weights.push(self.generated.weights()[j]);
        }
        let generated = if members.is_empty() {
            PointMasses::new(PointSet::from_flat(Vec::new(), self.kernel.dimension())?, Vec::new())?
        } else {
            PointMasses::new(PointSet::from_flat(flat, self.kernel.dimension())?, weights)?
        };
        Ok((Scenario::new(self.kernel, real, generated, self.hyper)?, members))
    }
}

/// Assignment of generated points to target regions plus the isolation
/// diagnostics of that split.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodPartition {
    assignments: Vec<usize>,
    n_regions: usize,
    separation_ok: bool,
    kernel_floor: f64,
    eps: f64,
}

impl NeighborhoodPartition {
    /// Region index of generated point `j`.
    pub fn region_of(&self, j: usize) -> usize {
        self.assignments[j]
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    /// Generated indices assigned to `region`.
    pub fn members(&self, region: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, r)| **r == region)
            .map(|(j, _)| j)
    }

    pub fn member_count(&self, region: usize) -> usize {
        self.members(region).count()
    }

    pub fn separation_ok(&self) -> bool {
        self.separation_ok
    }

    /// Largest observed cross-region kernel value (0 when no cross pairs
    /// exist).
    pub fn kernel_floor(&self) -> f64 {
        self.kernel_floor
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper() -> Hyperparams {
        Hyperparams::new(1e-2, 1e-2, 1.0).unwrap()
    }

    fn scenario_1d(true_pts: &[f64], p: &[f64], gen_pts: &[f64], pt: &[f64], sigma: f64) -> Scenario {
        let k = KernelSpec::rbf(sigma, 1).unwrap();
        let real = PointMasses::new(PointSet::from_flat(true_pts.to_vec(), 1).unwrap(), p.to_vec()).unwrap();
        let gen = PointMasses::new(PointSet::from_flat(gen_pts.to_vec(), 1).unwrap(), pt.to_vec()).unwrap();
        Scenario::new(k, real, gen, hyper()).unwrap()
    }

    #[test]
    fn zero_weight_is_rejected_naming_the_field() {
        let err = PointMasses::from_rows(&[alloc::vec![0.0]], alloc::vec![0.0]).unwrap_err();
        match err {
            ScenarioError::InvalidField { field, .. } => assert_eq!(field, "weights"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_between_real_and_generated() {
        let k = KernelSpec::rbf(1.0, 2).unwrap();
        let real = PointMasses::from_rows(&[alloc::vec![0.0, 0.0]], alloc::vec![1.0]).unwrap();
        let gen = PointMasses::from_rows(&[alloc::vec![0.0]], alloc::vec![1.0]).unwrap();
        assert!(matches!(
            Scenario::new(k, real, gen, hyper()),
            Err(ScenarioError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mu_is_derived() {
        let h = Hyperparams::new(1e-2, 5e-3, 2.0).unwrap();
        assert_eq!(h.mu(), 0.5);
        let h2 = h.with_eta_d(2e-2).unwrap();
        assert_eq!(h2.mu(), 0.5);
        assert_eq!(h2.eta_g(), 1e-2);
    }

    #[test]
    fn far_regions_are_separated() {
        let s = scenario_1d(&[0.0, 20.0], &[1.0, 1.0], &[1.0, 19.0], &[0.5, 0.5], 1.0);
        let part = s.partition_isolated(1e-8).unwrap();
        assert_eq!(part.assignments(), &[0, 1]);
        assert!(part.separation_ok());
        // closest cross pair is 1 <-> 19: exp(-18^2/2)
        let expect = libm::exp(-162.0);
        assert!((part.kernel_floor() - expect).abs() <= 1e-15 * expect.max(1e-300));
        assert!(part.kernel_floor() < 1e-70);
    }

    #[test]
    fn single_region_has_zero_floor() {
        let s = scenario_1d(&[0.0], &[1.0], &[0.3, -0.2], &[0.4, 0.4], 1.0);
        let part = s.partition_isolated(0.5).unwrap();
        assert_eq!(part.kernel_floor(), 0.0);
        assert!(part.separation_ok());
    }

    #[test]
    fn close_regions_fail_separation() {
        let s = scenario_1d(&[0.0, 1.0], &[1.0, 1.0], &[0.0, 1.0], &[0.5, 0.5], 1.0);
        let part = s.partition_isolated(1e-6).unwrap();
        assert!(!part.separation_ok());
        let expect = libm::exp(-0.5);
        assert!((part.kernel_floor() - expect).abs() < 1e-15);
    }

    #[test]
    fn eps_domain_is_enforced() {
        let s = scenario_1d(&[0.0], &[1.0], &[0.0], &[1.0], 1.0);
        assert!(s.partition_isolated(0.0).is_err());
        assert!(s.partition_isolated(1.0).is_err());
    }

    #[test]
    fn mass_gap_examples() {
        let s = scenario_1d(&[0.0], &[1.0], &[0.1], &[0.8], 1.0);
        let part = s.partition_isolated(1e-8).unwrap();
        assert!((s.mass_gap(&part, 0).unwrap() - 0.2).abs() < 1e-15);

        let s = scenario_1d(&[0.0], &[1.0], &[0.1, -0.1], &[0.5, 0.5], 1.0);
        let part = s.partition_isolated(1e-8).unwrap();
        assert_eq!(s.mass_gap(&part, 0).unwrap(), 0.0);

        let s = scenario_1d(&[0.0], &[0.5], &[0.1], &[0.8], 1.0);
        let part = s.partition_isolated(1e-8).unwrap();
        assert!((s.mass_gap(&part, 0).unwrap() + 0.3).abs() < 1e-15);

        assert!(matches!(s.mass_gap(&part, 5), Err(ScenarioError::NoSuchRegion(5))));
    }

    #[test]
    fn ties_break_to_lowest_target_index() {
        let s = scenario_1d(&[-1.0, 1.0], &[1.0, 1.0], &[0.0], &[0.5], 1.0);
        let part = s.partition_isolated(0.9).unwrap();
        assert_eq!(part.region_of(0), 0);
    }

    #[test]
    fn restriction_keeps_region_members() {
        let s = scenario_1d(&[0.0, 20.0], &[1.0, 0.7], &[19.5, 0.4, 20.5], &[0.1, 0.2, 0.3], 1.0);
        let part = s.partition_isolated(1e-8).unwrap();
        let (sub, members) = s.restrict_to_region(&part, 1).unwrap();
        assert_eq!(members, alloc::vec![0, 2]);
        assert_eq!(sub.real().weights(), &[0.7]);
        assert_eq!(sub.generated().weights(), &[0.1, 0.3]);
        assert_eq!(sub.generated().points().row(0), &[19.5]);
    }
}
