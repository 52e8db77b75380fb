//! RBF kernel evaluation and its first and second derivatives.
//!
//! The kernel is `K(x, y) = exp(-‖x-y‖² / (2σ²))`, so at coincident points
//! `∇₁K(x, x) = 0` and `∂²K/∂x∂y|_{x=y} = I/σ²`. Those two identities are
//! what the local convergence theory rests on, and [`KernelSpec::check_assumptions`]
//! verifies the analytic derivatives against central finite differences.

use alloc::vec;
use alloc::vec::Vec;

use crate::vecmath::{dist_sq, dot};

/// Kernel families with the smoothness this crate assumes. Only the RBF is
/// implemented; the enum leaves room for other isotropic kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[non_exhaustive]
pub enum KernelFamily {
    Rbf,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("dimension mismatch: kernel expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel width must be positive and finite, got {0}")]
    InvalidWidth(f64),
    #[error("kernel dimension must be at least 1")]
    InvalidDimension,
}

/// An isotropic kernel on `R^d`: family, width `σ` (data-space units) and
/// input dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    width: f64,
    dimension: usize,
}

impl KernelSpec {
    pub fn rbf(width: f64, dimension: usize) -> Result<Self, KernelError> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(KernelError::InvalidWidth(width));
        }
        if dimension == 0 {
            return Err(KernelError::InvalidDimension);
        }
        Ok(Self { family: KernelFamily::Rbf, width, dimension })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Kernel width `σ`.
    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), KernelError> {
        if v.len() != self.dimension {
            return Err(KernelError::DimensionMismatch { expected: self.dimension, got: v.len() });
        }
        Ok(())
    }

    /// `K(x, y) = exp(-‖x-y‖²/(2σ²))`, in `(0, 1]`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, KernelError> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        let s2 = self.width * self.width;
        Ok(libm::exp(-dist_sq(x, y) / (2.0 * s2)))
    }

    /// Gradient in the first argument: `∂K/∂x = -(x-y)/σ² · K(x,y)`.
    pub fn grad1(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, KernelError> {
        let k = self.eval(x, y)?;
        let s2 = self.width * self.width;
        Ok(x.iter().zip(y).map(|(xi, yi)| -(xi - yi) / s2 * k).collect())
    }

    /// Second derivative in the first argument:
    /// `∂²K/∂x² = ((x-y)(x-y)ᵀ/σ² - I)/σ² · K(x,y)`.
    ///
    /// At `x = y` this is `-I/σ²`, the (negated) curvature that defines the
    /// kernel width.
    pub fn hess11(&self, x: &[f64], y: &[f64]) -> Result<SquareMat, KernelError> {
        let k = self.eval(x, y)?;
        let s2 = self.width * self.width;
        let d = self.dimension;
        let mut m = SquareMat::zeros(d);
        for a in 0..d {
            for b in 0..d {
                let outer = (x[a] - y[a]) * (x[b] - y[b]) / s2;
                let diag = if a == b { 1.0 } else { 0.0 };
                m.set(a, b, (outer - diag) / s2 * k);
            }
        }
        Ok(m)
    }

    /// Mixed second derivative `∂²K/∂x∂y = (I - (x-y)(x-y)ᵀ/σ²)/σ² · K(x,y)`;
    /// equals `I/σ²` at coincident points.
    pub fn cross_hess(&self, x: &[f64], y: &[f64]) -> Result<SquareMat, KernelError> {
        let mut m = self.hess11(x, y)?;
        for v in m.data.iter_mut() {
            *v = -*v;
        }
        Ok(m)
    }

    /// Compares the analytic derivatives against central finite differences of
    /// [`KernelSpec::eval`] on every ordered pair of `points` (including
    /// coincident pairs). A deviation above `10·h²` is flagged as a failure.
    pub fn check_assumptions(&self, points: &[Vec<f64>], h: f64) -> AssumptionReport {
        assert!(h > 0.0, "finite-difference step must be positive");
        let tol = 10.0 * h * h;
        let mut report = AssumptionReport {
            h,
            tol,
            max_grad_dev: 0.0,
            max_hess_dev: 0.0,
            max_cross_dev: 0.0,
            failures: Vec::new(),
        };
        for (i, x) in points.iter().enumerate() {
            for (j, y) in points.iter().enumerate() {
                if self.check_dim(x).is_err() || self.check_dim(y).is_err() {
                    report.failures.push(AssumptionFailure {
                        pair: (i, j),
                        check: DerivativeCheck::Gradient,
                        deviation: f64::INFINITY,
                    });
                    continue;
                }
                let (g, hs, cr) = self.fd_deviations(x, y, h);
                report.max_grad_dev = report.max_grad_dev.max(g);
                report.max_hess_dev = report.max_hess_dev.max(hs);
                report.max_cross_dev = report.max_cross_dev.max(cr);
                for (dev, check) in [
                    (g, DerivativeCheck::Gradient),
                    (hs, DerivativeCheck::Hessian),
                    (cr, DerivativeCheck::CrossHessian),
                ] {
                    if dev > tol {
                        report.failures.push(AssumptionFailure { pair: (i, j), check, deviation: dev });
                    }
                }
            }
        }
        report
    }

    /// Max absolute deviation of (grad1, hess11, cross_hess) from central
    /// differences at one pair.
    fn fd_deviations(&self, x: &[f64], y: &[f64], h: f64) -> (f64, f64, f64) {
        let d = self.dimension;
        let ev = |x: &[f64], y: &[f64]| self.eval(x, y).expect("dimension already checked");

        let grad = self.grad1(x, y).expect("dimension already checked");
        let hess = self.hess11(x, y).expect("dimension already checked");
        let cross = self.cross_hess(x, y).expect("dimension already checked");

        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        let mut grad_dev: f64 = 0.0;
        for a in 0..d {
            xp[a] = x[a] + h;
            xm[a] = x[a] - h;
            let fd = (ev(&xp, y) - ev(&xm, y)) / (2.0 * h);
            grad_dev = grad_dev.max((fd - grad[a]).abs());
            xp[a] = x[a];
            xm[a] = x[a];
        }

        let f0 = ev(x, y);
        let mut hess_dev: f64 = 0.0;
        let mut cross_dev: f64 = 0.0;
        let mut xa = x.to_vec();
        let mut yb = y.to_vec();
        for a in 0..d {
            for b in 0..d {
                // hess11: second difference in the first argument.
                let fd = if a == b {
                    xa[a] = x[a] + h;
                    let fp = ev(&xa, y);
                    xa[a] = x[a] - h;
                    let fm = ev(&xa, y);
                    xa[a] = x[a];
                    (fp - 2.0 * f0 + fm) / (h * h)
                } else {
                    let mut v = 0.0;
                    for (sa, sb, sign) in
                        [(h, h, 1.0), (h, -h, -1.0), (-h, h, -1.0), (-h, -h, 1.0)]
                    {
                        xa[a] = x[a] + sa;
                        xa[b] = x[b] + sb;
                        v += sign * ev(&xa, y);
                    }
                    xa[a] = x[a];
                    xa[b] = x[b];
                    v / (4.0 * h * h)
                };
                hess_dev = hess_dev.max((fd - hess.get(a, b)).abs());

                // cross_hess: mixed difference, one step in each argument.
                let mut v = 0.0;
                for (sa, sb, sign) in [(h, h, 1.0), (h, -h, -1.0), (-h, h, -1.0), (-h, -h, 1.0)] {
                    xa[a] = x[a] + sa;
                    yb[b] = y[b] + sb;
                    v += sign * ev(&xa, &yb);
                }
                xa[a] = x[a];
                yb[b] = y[b];
                cross_dev = cross_dev.max((v / (4.0 * h * h) - cross.get(a, b)).abs());
            }
        }
        (grad_dev, hess_dev, cross_dev)
    }
}

/// Which analytic derivative a finite-difference check targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeCheck {
    Gradient,
    Hessian,
    CrossHessian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionFailure {
    /// Indices into the checked point list (first and second kernel argument).
    pub pair: (usize, usize),
    pub check: DerivativeCheck,
    pub deviation: f64,
}

/// Outcome of [`KernelSpec::check_assumptions`]. `failures` is empty when all
/// deviations stay below `tol = 10·h²`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub h: f64,
    pub tol: f64,
    pub max_grad_dev: f64,
    pub max_hess_dev: f64,
    pub max_cross_dev: f64,
    pub failures: Vec<AssumptionFailure>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Dense row-major `d × d` matrix; just enough for kernel Hessians.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMat {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMat {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * dim] }
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, scale);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.dim + c] = v;
    }

    pub fn add_scaled(&mut self, other: &SquareMat, scale: f64) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// `M v` for a vector of matching dimension.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.dim);
        (0..self.dim).map(|r| dot(&self.data[r * self.dim..(r + 1) * self.dim], v)).collect()
    }

    pub fn max_abs_diff(&self, other: &SquareMat) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k1() -> KernelSpec {
        KernelSpec::rbf(1.0, 2).unwrap()
    }

    #[test]
    fn eval_zero_distance_is_one() {
        let k = k1();
        let x = [0.3, -1.2];
        assert_eq!(k.eval(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn eval_unit_distance() {
        // exp(-1/2) at sigma=1, and the same value at sigma=2 with twice the
        // distance: only ‖x-y‖/σ matters.
        let k = k1();
        let v = k.eval(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((v - 0.6065306597126334).abs() < 1e-15, "got {v}");

        let k2 = KernelSpec::rbf(2.0, 1).unwrap();
        let v2 = k2.eval(&[0.0], &[2.0]).unwrap();
        assert!((v2 - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn grad_vanishes_at_coincident_points() {
        let k = k1();
        let x = [0.7, 2.0];
        assert_eq!(k.grad1(&x, &x).unwrap(), alloc::vec![0.0, 0.0]);
    }

    #[test]
    fn grad_hand_values() {
        let k = k1();
        let g = k.grad1(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((g[0] + 0.6065306597126334).abs() < 1e-15);
        assert_eq!(g[1], 0.0);

        // x - y = (0, -1): gradient points along +e2.
        let g = k.grad1(&[0.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn hess_at_coincident_points_is_negative_identity_over_sigma_sq() {
        for (sigma, want) in [(1.0, -1.0), (2.0, -0.25)] {
            let k = KernelSpec::rbf(sigma, 3).unwrap();
            let x = [0.1, 0.2, 0.3];
            let h = k.hess11(&x, &x).unwrap();
            let expect = SquareMat::scaled_identity(3, want);
            assert!(h.max_abs_diff(&expect) < 1e-15);
        }
    }

    #[test]
    fn hess_inflection_point_1d() {
        // At ‖x-y‖ = σ the 1-d RBF has an inflection: second derivative 0.
        let k = KernelSpec::rbf(1.0, 1).unwrap();
        let h = k.hess11(&[1.0], &[0.0]).unwrap();
        assert!(h.get(0, 0).abs() < 1e-16);
        let c = k.cross_hess(&[1.0], &[0.0]).unwrap();
        assert!(c.get(0, 0).abs() < 1e-16);
    }

    #[test]
    fn cross_hess_at_coincident_points() {
        for (sigma, want) in [(1.0, 1.0), (0.5, 4.0)] {
            let k = KernelSpec::rbf(sigma, 2).unwrap();
            let x = [-0.4, 0.9];
            let c = k.cross_hess(&x, &x).unwrap();
            assert!(c.max_abs_diff(&SquareMat::scaled_identity(2, want)) < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let k = k1();
        let err = k.eval(&[0.0, 0.0], &[0.0]).unwrap_err();
        assert_eq!(err, KernelError::DimensionMismatch { expected: 2, got: 1 });
        assert!(k.grad1(&[0.0], &[0.0, 0.0]).is_err());
        assert!(k.hess11(&[0.0], &[0.0]).is_err());
    }

    #[test]
    fn invalid_spec_is_rejected() {
        assert!(KernelSpec::rbf(0.0, 1).is_err());
        assert!(KernelSpec::rbf(-1.0, 1).is_err());
        assert!(KernelSpec::rbf(f64::NAN, 1).is_err());
        assert!(KernelSpec::rbf(1.0, 0).is_err());
    }

    #[test]
    fn assumptions_hold_for_rbf() {
        let k = k1();
        let pts = alloc::vec![
            alloc::vec![0.0, 0.0],
            alloc::vec![0.8, -0.3],
            alloc::vec![-1.5, 2.0],
        ];
        let rep = k.check_assumptions(&pts, 1e-4);
        assert!(rep.passed(), "failures: {:?}", rep.failures);
        assert!(rep.max_grad_dev < 1e-7);
        assert!(rep.max_hess_dev < 1e-7);
        assert!(rep.max_cross_dev < 1e-7);
    }

    #[test]
    fn assumption_tolerance_scales_with_h() {
        let k = KernelSpec::rbf(0.7, 1).unwrap();
        let rep = k.check_assumptions(&[alloc::vec![0.25]], 1e-3);
        assert_eq!(rep.tol, 10.0 * 1e-3 * 1e-3);
        assert!(rep.passed());
    }
}
