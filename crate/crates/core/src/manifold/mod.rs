//! Latent charts, metric fields and the local geometry derived from them.
//!
//! A [`MetricField`] pairs a [`MetricEvaluator`] (the map `x ↦ g_ij(x)`) with an
//! axis-aligned chart box. Every query validates the point against the box and
//! the evaluator's own domain, and validates the returned matrix: it must be
//! finite, symmetric to `1e-12` and positive-definite. Degenerate metrics are
//! reported, never silently repaired, unless jitter is switched on explicitly.

mod analytic;
mod diagnostics;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

pub use analytic::AnalyticMetric;
pub use diagnostics::{mf_diagnostics, Histogram, MfDiagnostics, DEFAULT_HISTOGRAM_BINS};

/// Dense matrix type used throughout the crate.
pub type Matrix = DMatrix<f64>;
/// Dense vector type used throughout the crate.
pub type Vector = DVector<f64>;

/// Absolute symmetry tolerance for evaluated metrics.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Default cap on the metric condition number.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;
/// Default finite-difference step, relative to the shortest chart side.
pub const DEFAULT_RELATIVE_FD_STEP: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("latent dimension {0} is not supported (expected 2 or 3)")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("coordinates must be finite")]
    NonFinite,
    #[error("point {point:?} lies outside the chart")]
    OutOfBounds { point: Vec<f64> },
    #[error("finite-difference neighbourhood of {point:?} leaves the chart")]
    NeighborhoodOutOfBounds { point: Vec<f64> },
    #[error("metric evaluator returned a non-finite value at {point:?}")]
    NonFiniteMetric { point: Vec<f64> },
    #[error("metric at {point:?} is not symmetric (asymmetry {asymmetry:e})")]
    Asymmetric { point: Vec<f64>, asymmetry: f64 },
    #[error("degenerate metric at {point:?}: not positive-definite")]
    NotPositiveDefinite { point: Vec<f64> },
    #[error("singular metric at {point:?}: condition number {condition:e} exceeds {cap:e}")]
    SingularMetric {
        point: Vec<f64>,
        condition: f64,
        cap: f64,
    },
    #[error("tangent vectors are based at different points")]
    BaseMismatch,
    #[error("invalid chart bounds: {0}")]
    InvalidBounds(String),
    #[error("unknown analytic metric {0:?} (expected flat, polar, poincare or sphere)")]
    UnknownMetric(String),
    #[error("metric evaluation failed at {point:?}: {message}")]
    Evaluator { point: Vec<f64>, message: String },
}

impl GeometryError {
    /// True when the failure is a chart-exit rather than a degenerate metric.
    pub fn is_out_of_bounds(&self) -> bool {
        matches!(
            self,
            GeometryError::OutOfBounds { .. } | GeometryError::NeighborhoodOutOfBounds { .. }
        )
    }
}

/// A point on the latent chart.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPoint {
    coords: Vector,
}

impl LatentPoint {
    pub fn new(coords: impl Into<Vec<f64>>) -> Result<Self, GeometryError> {
        Self::from_vector(Vector::from_vec(coords.into()))
    }

    pub fn from_vector(coords: Vector) -> Result<Self, GeometryError> {
        if coords.is_empty() {
            return Err(GeometryError::UnsupportedDimension(0));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { coords })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &Vector {
        &self.coords
    }

    pub fn as_slice(&self) -> &[f64] {
        self.coords.as_slice()
    }

    pub fn into_vector(self) -> Vector {
        self.coords
    }
}

impl fmt::Display for LatentPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// A tangent vector with contravariant components `v^i` at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    base: LatentPoint,
    components: Vector,
}

impl TangentVector {
    pub fn new(base: LatentPoint, components: Vector) -> Result<Self, GeometryError> {
        if components.len() != base.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: base.dim(),
                found: components.len(),
            });
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { base, components })
    }

    pub fn zero(base: LatentPoint) -> Self {
        let d = base.dim();
        Self {
            base,
            components: Vector::zeros(d),
        }
    }

    pub fn base(&self) -> &LatentPoint {
        &self.base
    }

    pub fn components(&self) -> &Vector {
        &self.components
    }

    pub fn into_components(self) -> Vector {
        self.components
    }
}

/// Axis-aligned chart box `[lo_i, hi_i]^d`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChartBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ChartBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GeometryError> {
        if lo.len() != hi.len() {
            return Err(GeometryError::InvalidBounds(format!(
                "{} lower and {} upper limits",
                lo.len(),
                hi.len()
            )));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || l >= h {
                return Err(GeometryError::InvalidBounds(format!(
                    "axis {i}: [{l}, {h}] is not a finite non-empty interval"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self, GeometryError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn shortest_side(&self) -> f64 {
        (0..self.dim())
            .map(|i| self.extent(i))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

/// The map from chart coordinates to metric matrices.
///
/// Implementors return the raw matrix; validation happens in [`MetricField`].
pub trait MetricEvaluator: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn name(&self) -> String;

    fn metric(&self, x: &[f64]) -> Result<Matrix, GeometryError>;

    /// Closed-form partial derivatives `[∂_0 g, ∂_1 g, ...]`, when known.
    fn metric_derivatives(&self, _x: &[f64]) -> Option<Vec<Matrix>> {
        None
    }

    /// Points outside the evaluator's natural domain (e.g. the Poincaré
    /// disk) are treated exactly like points outside the chart box.
    fn in_domain(&self, _x: &[f64]) -> bool {
        true
    }
}

/// Christoffel symbols `Γ^k_ij` at a point, stored as `values[(k * d + i) * d + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChristoffelTensor {
    dim: usize,
    values: Vec<f64>,
}

impl ChristoffelTensor {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.values[(k * self.dim + i) * self.dim + j]
    }

    fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.values[(k * self.dim + i) * self.dim + j] = v;
    }

    /// `out^k = Γ^k_ij v^i w^j`.
    pub fn contract(&self, v: &[f64], w: &[f64]) -> Vector {
        let d = self.dim;
        Vector::from_fn(d, |k, _| {
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..d {
                    acc += self.get(k, i, j) * v[i] * w[j];
                }
            }
            acc
        })
    }

    /// Largest `|Γ^k_ij − Γ^k_ji|`.
    pub fn lower_asymmetry(&self) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    worst = worst.max((self.get(k, i, j) - self.get(k, j, i)).abs());
                }
            }
        }
        worst
    }
}

/// A Riemannian metric on a bounded latent chart.
#[derive(Clone, Debug)]
pub struct MetricField {
    evaluator: Arc<dyn MetricEvaluator>,
    bounds: ChartBounds,
    fd_step: f64,
    condition_cap: f64,
    jitter: bool,
}

impl MetricField {
    pub fn new<E: MetricEvaluator + 'static>(
        evaluator: E,
        bounds: ChartBounds,
    ) -> Result<Self, GeometryError> {
        Self::from_arc(Arc::new(evaluator), bounds)
    }

    pub fn from_arc(
        evaluator: Arc<dyn MetricEvaluator>,
        bounds: ChartBounds,
    ) -> Result<Self, GeometryError> {
        let dim = evaluator.dim();
        if !(2..=3).contains(&dim) {
            return Err(GeometryError::UnsupportedDimension(dim));
        }
        if bounds.dim() != dim {
            return Err(GeometryError::DimensionMismatch {
                expected: dim,
                found: bounds.dim(),
            });
        }
        let fd_step = DEFAULT_RELATIVE_FD_STEP * bounds.shortest_side();
        Ok(Self {
            evaluator,
            bounds,
            fd_step,
            condition_cap: DEFAULT_CONDITION_CAP,
            jitter: false,
        })
    }

    pub fn with_fd_step(mut self, fd_step: f64) -> Self {
        assert!(fd_step > 0.0 && fd_step.is_finite(), "fd_step must be positive");
        self.fd_step = fd_step;
        self
    }

    pub fn with_condition_cap(mut self, cap: f64) -> Self {
        assert!(cap > 1.0, "condition cap must exceed 1");
        self.condition_cap = cap;
        self
    }

    /// Enables `+εI` regularisation (`ε = 1e-10·trace/d`) of non-SPD evaluations.
    pub fn with_jitter(mut self, jitter: bool) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn bounds(&self) -> &ChartBounds {
        &self.bounds
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn condition_cap(&self) -> f64 {
        self.condition_cap
    }

    pub fn jitter(&self) -> bool {
        self.jitter
    }

    pub fn name(&self) -> String {
        self.evaluator.name()
    }

    pub fn evaluator(&self) -> &Arc<dyn MetricEvaluator> {
        &self.evaluator
    }

    /// Whether `x` is inside the chart box and the evaluator's domain.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.bounds.contains(x) && self.evaluator.in_domain(x)
    }

    /// Validates a point for this chart.
    pub fn check_point(&self, p: &LatentPoint) -> Result<(), GeometryError> {
        self.check_coords(p.as_slice())
    }

    pub fn check_coords(&self, x: &[f64]) -> Result<(), GeometryError> {
        if x.len() != self.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !self.contains(x) {
            return Err(GeometryError::OutOfBounds { point: x.to_vec() });
        }
        Ok(())
    }

    /// `g_ij(p)`.
    pub fn metric_at(&self, p: &LatentPoint) -> Result<Matrix, GeometryError> {
        self.metric(p.as_slice())
    }

    /// `g_ij` at raw coordinates.
    pub fn metric(&self, x: &[f64]) -> Result<Matrix, GeometryError> {
        self.check_coords(x)?;
        let d = self.dim();
        let mut g = self.evaluator.metric(x)?;
        if g.nrows() != d || g.ncols() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                found: g.nrows(),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFiniteMetric { point: x.to_vec() });
        }
        let mut asymmetry = 0.0f64;
        for i in 0..d {
            for j in i + 1..d {
                asymmetry = asymmetry.max((g[(i, j)] - g[(j, i)]).abs());
            }
        }
        if asymmetry > SYMMETRY_TOL {
            return Err(GeometryError::Asymmetric {
                point: x.to_vec(),
                asymmetry,
            });
        }
        if !is_positive_definite(&g) {
            if !self.jitter {
                return Err(GeometryError::NotPositiveDefinite { point: x.to_vec() });
            }
            let eps = 1e-10 * g.trace() / d as f64;
            if eps <= 0.0 {
                return Err(GeometryError::NotPositiveDefinite { point: x.to_vec() });
            }
            for i in 0..d {
                g[(i, i)] += eps;
            }
            if !is_positive_definite(&g) {
                return Err(GeometryError::NotPositiveDefinite { point: x.to_vec() });
            }
        }
        Ok(g)
    }

    /// `g_ij v^i w^j`.
    pub fn inner_product(
        &self,
        v: &TangentVector,
        w: &TangentVector,
    ) -> Result<f64, GeometryError> {
        if v.base() != w.base() {
            return Err(GeometryError::BaseMismatch);
        }
        let g = self.metric_at(v.base())?;
        Ok(quadratic_form(&g, v.components(), w.components()))
    }

    /// `⟨v, v⟩_g^{1/2}`.
    pub fn norm(&self, v: &TangentVector) -> Result<f64, GeometryError> {
        Ok(self.inner_product(v, v)?.max(0.0).sqrt())
    }

    /// `g^ij(p)`.
    pub fn inverse_metric_at(&self, p: &LatentPoint) -> Result<Matrix, GeometryError> {
        self.inverse_metric(p.as_slice())
    }

    pub fn inverse_metric(&self, x: &[f64]) -> Result<Matrix, GeometryError> {
        let g = self.metric(x)?;
        let (lmin, lmax) = eigen_range(&g);
        if lmin <= 0.0 {
            return Err(GeometryError::NotPositiveDefinite { point: x.to_vec() });
        }
        let condition = lmax / lmin;
        if condition > self.condition_cap {
            return Err(GeometryError::SingularMetric {
                point: x.to_vec(),
                condition,
                cap: self.condition_cap,
            });
        }
        symmetric_inverse(&g).ok_or_else(|| GeometryError::NotPositiveDefinite { point: x.to_vec() })
    }

    /// `[∂_0 g, …, ∂_{d-1} g]`, closed-form when the evaluator provides it,
    /// central differences with step `fd_step` otherwise.
    pub fn metric_derivatives(&self, x: &[f64]) -> Result<Vec<Matrix>, GeometryError> {
        self.check_coords(x)?;
        if let Some(dg) = self.evaluator.metric_derivatives(x) {
            return Ok(dg);
        }
        let h = self.fd_step;
        let mut xp = x.to_vec();
        (0..self.dim())
            .map(|m| {
                xp[m] = x[m] + h;
                if !self.contains(&xp) {
                    return Err(GeometryError::NeighborhoodOutOfBounds { point: x.to_vec() });
                }
                let gp = self.metric(&xp)?;
                xp[m] = x[m] - h;
                if !self.contains(&xp) {
                    return Err(GeometryError::NeighborhoodOutOfBounds { point: x.to_vec() });
                }
                let gm = self.metric(&xp)?;
                xp[m] = x[m];
                Ok((gp - gm) / (2.0 * h))
            })
            .collect()
    }

    /// `Γ^k_ij(p) = ½ g^{kl}(∂_i g_jl + ∂_j g_il − ∂_l g_ij)`.
    pub fn christoffel_at(&self, p: &LatentPoint) -> Result<ChristoffelTensor, GeometryError> {
        self.christoffel(p.as_slice())
    }

    pub fn christoffel(&self, x: &[f64]) -> Result<ChristoffelTensor, GeometryError> {
        let d = self.dim();
        let dg = self.metric_derivatives(x)?;
        let ginv = self.inverse_metric(x)?;
        let mut gamma = ChristoffelTensor::zeros(d);
        for k in 0..d {
            for i in 0..d {
                for j in i..d {
                    let mut acc = 0.0;
                    for l in 0..d {
                        acc += ginv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    gamma.set(k, i, j, 0.5 * acc);
                    gamma.set(k, j, i, 0.5 * acc);
                }
            }
        }
        Ok(gamma)
    }

    /// `√det g(p)`.
    pub fn magnification_factor(&self, p: &LatentPoint) -> Result<f64, GeometryError> {
        self.magnification(p.as_slice())
    }

    pub fn magnification(&self, x: &[f64]) -> Result<f64, GeometryError> {
        let det = self.metric(x)?.determinant();
        if !(det > 0.0) {
            return Err(GeometryError::NotPositiveDefinite { point: x.to_vec() });
        }
        Ok(det.sqrt())
    }
}

/// Sylvester's criterion for `d ≤ 3`, Cholesky otherwise.
fn is_positive_definite(g: &Matrix) -> bool {
    match g.nrows() {
        2 => g[(0, 0)] > 0.0 && g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)] > 0.0,
        3 => {
            g[(0, 0)] > 0.0
                && g[(0, 0)] * g[(1, 1)] - g[(0, 1)] * g[(1, 0)] > 0.0
                && g.fixed_view::<3, 3>(0, 0).determinant() > 0.0
        }
        _ => g.clone().cholesky().is_some(),
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
fn eigen_range(g: &Matrix) -> (f64, f64) {
    match g.nrows() {
        2 => {
            let m = 0.5 * (g[(0, 0)] + g[(1, 1)]);
            let r = (0.25 * (g[(0, 0)] - g[(1, 1)]).powi(2) + g[(0, 1)] * g[(1, 0)]).max(0.0).sqrt();
            (m - r, m + r)
        }
        3 => {
            // trigonometric solution of the characteristic cubic
            let p1 = g[(0, 1)].powi(2) + g[(0, 2)].powi(2) + g[(1, 2)].powi(2);
            let q = g.trace() / 3.0;
            if p1 == 0.0 {
                let diag = [g[(0, 0)], g[(1, 1)], g[(2, 2)]];
                return (
                    diag.iter().copied().fold(f64::INFINITY, f64::min),
                    diag.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                );
            }
            let p2 = (g[(0, 0)] - q).powi(2) + (g[(1, 1)] - q).powi(2) + (g[(2, 2)] - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let b = (g.fixed_view::<3, 3>(0, 0) - nalgebra::Matrix3::identity() * q) / p;
            let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
            let phi = r.acos() / 3.0;
            let hi = q + 2.0 * p * phi.cos();
            let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
            (lo, hi)
        }
        _ => {
            let eig = SymmetricEigen::new(g.clone());
            (eig.eigenvalues.min(), eig.eigenvalues.max())
        }
    }
}

/// Inverse of a symmetric positive definite matrix, symmetrised.
fn symmetric_inverse(g: &Matrix) -> Option<Matrix> {
    let inv = match g.nrows() {
        2 | 3 => g.clone().try_inverse()?,
        _ => g.clone().cholesky()?.inverse(),
    };
    Some((&inv + inv.transpose()) * 0.5)
}

/// `vᵀ G w` for a square matrix `G`.
pub fn quadratic_form(g: &Matrix, v: &Vector, w: &Vector) -> f64 {
    let d = v.len();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += g[(i, j)] * v[i] * w[j];
        }
    }
    acc
}
