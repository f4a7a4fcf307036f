use std::f64::consts::PI;

use super::{ChartBounds, GeometryError, Matrix, MetricEvaluator, MetricField};

/// Closed-form metric fields, selectable by name.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnalyticMetric {
    /// `g = I`.
    Flat { dim: usize },
    /// Polar chart `(r, θ)`, `g = diag(1, r²)`.
    Polar,
    /// Poincaré ball, `g = 4 / (1 − |z|²)² · I`, defined for `|z| < 1`.
    Poincare { dim: usize },
    /// Spherical chart `(θ, φ)`, `g = diag(1, sin²θ)`.
    Sphere,
}

impl AnalyticMetric {
    /// Parses `"flat"`, `"polar"`, `"poincare"` or `"sphere"`.
    ///
    /// `dim` only matters for the flat and Poincaré fields; the polar and
    /// sphere charts are two-dimensional.
    pub fn from_name(name: &str, dim: usize) -> Result<Self, GeometryError> {
        let kind = match name.to_ascii_lowercase().as_str() {
            "flat" => AnalyticMetric::Flat { dim },
            "polar" => AnalyticMetric::Polar,
            "poincare" => AnalyticMetric::Poincare { dim },
            "sphere" => AnalyticMetric::Sphere,
            _ => return Err(GeometryError::UnknownMetric(name.to_string())),
        };
        let d = kind.dim();
        if !(2..=3).contains(&d) {
            return Err(GeometryError::UnsupportedDimension(d));
        }
        if matches!(kind, AnalyticMetric::Polar | AnalyticMetric::Sphere) && dim != 2 {
            return Err(GeometryError::DimensionMismatch {
                expected: 2,
                found: dim,
            });
        }
        Ok(kind)
    }

    pub fn label(&self) -> &'static str {
        match self {
            AnalyticMetric::Flat { .. } => "flat",
            AnalyticMetric::Polar => "polar",
            AnalyticMetric::Poincare { .. } => "poincare",
            AnalyticMetric::Sphere => "sphere",
        }
    }

    /// Chart box used when none is configured.
    pub fn default_bounds(&self) -> ChartBounds {
        let b = match *self {
            AnalyticMetric::Flat { dim } => ChartBounds::cube(dim, -3.0, 3.0),
            AnalyticMetric::Polar => ChartBounds::new(vec![0.1, -PI], vec![3.0, PI]),
            AnalyticMetric::Poincare { dim } => ChartBounds::cube(dim, -0.9, 0.9),
            AnalyticMetric::Sphere => ChartBounds::new(vec![0.1, -PI], vec![PI - 0.1, PI]),
        };
        b.expect("default bounds are valid")
    }

    /// The field on its default chart box.
    pub fn field(self) -> MetricField {
        let bounds = self.default_bounds();
        MetricField::new(self, bounds).expect("analytic fields have dimension 2 or 3")
    }

    pub fn field_with_bounds(self, bounds: ChartBounds) -> Result<MetricField, GeometryError> {
        MetricField::new(self, bounds)
    }
}

impl MetricEvaluator for AnalyticMetric {
    fn dim(&self) -> usize {
        match *self {
            AnalyticMetric::Flat { dim } | AnalyticMetric::Poincare { dim } => dim,
            AnalyticMetric::Polar | AnalyticMetric::Sphere => 2,
        }
    }

    fn name(&self) -> String {
        self.label().to_string()
    }

    fn metric(&self, x: &[f64]) -> Result<Matrix, GeometryError> {
        let d = MetricEvaluator::dim(self);
        Ok(match *self {
            AnalyticMetric::Flat { .. } => Matrix::identity(d, d),
            AnalyticMetric::Polar => Matrix::from_diagonal(&nalgebra::dvector![1.0, x[0] * x[0]]),
            AnalyticMetric::Poincare { .. } => {
                let c = 1.0 - x.iter().map(|v| v * v).sum::<f64>();
                Matrix::identity(d, d) * (4.0 / (c * c))
            }
            AnalyticMetric::Sphere => {
                let s = x[0].sin();
                Matrix::from_diagonal(&nalgebra::dvector![1.0, s * s])
            }
        })
    }

    fn metric_derivatives(&self, x: &[f64]) -> Option<Vec<Matrix>> {
        let d = MetricEvaluator::dim(self);
        let mut dg = vec![Matrix::zeros(d, d); d];
        match *self {
            AnalyticMetric::Flat { .. } => {}
            AnalyticMetric::Polar => dg[0][(1, 1)] = 2.0 * x[0],
            AnalyticMetric::Poincare { .. } => {
                let c = 1.0 - x.iter().map(|v| v * v).sum::<f64>();
                let c3 = c * c * c;
                for (k, m) in dg.iter_mut().enumerate() {
                    *m = Matrix::identity(d, d) * (16.0 * x[k] / c3);
                }
            }
            AnalyticMetric::Sphere => dg[0][(1, 1)] = 2.0 * x[0].sin() * x[0].cos(),
        }
        Some(dg)
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        match self {
            AnalyticMetric::Poincare { .. } => x.iter().map(|v| v * v).sum::<f64>() < 1.0,
            AnalyticMetric::Polar => x[0] > 0.0,
            _ => true,
        }
    }
}
