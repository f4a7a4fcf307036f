//! Geodesic integration: the exponential map and its tangent-linear sensitivities.
//!
//! Geodesics solve `ẍ^k + Γ^k_ij ẋ^i ẋ^j = 0` over the affine parameter
//! `λ ∈ [0, 1]`, integrated with classic fixed-step RK4. Sensitivities come
//! from the forward variational equations `Ṡ = J(x, v) S`, integrated with the
//! same stages as the state so that `S` is the derivative of the discrete flow.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::manifold::{GeometryError, LatentPoint, Matrix, MetricField, TangentVector, Vector};

/// RK4 step in `λ`.
pub const DEFAULT_STEP: f64 = 1e-2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeodesicError {
    #[error("step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("trajectory left the chart at λ = {lambda:.4}")]
    LeftChart { lambda: f64 },
    #[error("geometry failure at λ = {lambda:.4}: {source}")]
    Geometry {
        lambda: f64,
        #[source]
        source: GeometryError,
    },
}

impl GeodesicError {
    fn at(lambda: f64, err: GeometryError) -> Self {
        if err.is_out_of_bounds() {
            GeodesicError::LeftChart { lambda }
        } else {
            GeodesicError::Geometry {
                lambda,
                source: err,
            }
        }
    }
}

/// One sample of a discretised geodesic.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicNode {
    pub lambda: f64,
    pub position: Vector,
    pub velocity: Vector,
}

/// A discretised geodesic over `λ ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Geodesic {
    nodes: Vec<GeodesicNode>,
    initial_velocity: TangentVector,
}

impl Geodesic {
    pub(crate) fn from_nodes(nodes: Vec<GeodesicNode>) -> Self {
        debug_assert!(nodes.len() >= 2);
        let first = &nodes[0];
        let base = LatentPoint::from_vector(first.position.clone()).expect("finite start");
        let initial_velocity =
            TangentVector::new(base, first.velocity.clone()).expect("finite velocity");
        Self {
            nodes,
            initial_velocity,
        }
    }

    pub fn nodes(&self) -> &[GeodesicNode] {
        &self.nodes
    }

    pub fn initial_velocity(&self) -> &TangentVector {
        &self.initial_velocity
    }

    pub fn start(&self) -> &Vector {
        &self.nodes[0].position
    }

    pub fn endpoint(&self) -> &Vector {
        &self.nodes[self.nodes.len() - 1].position
    }

    /// Metric length by the trapezoidal rule over the node speeds.
    pub fn length(&self, field: &MetricField) -> Result<f64, GeometryError> {
        let speeds = speed_profile(field, self)?;
        Ok(self
            .nodes
            .windows(2)
            .zip(speeds.windows(2))
            .map(|(n, s)| 0.5 * (s[0] + s[1]) * (n[1].lambda - n[0].lambda))
            .sum())
    }
}

/// Right-hand side of the geodesic equation as a first-order system:
/// `(ẋ, v̇) = (v, −Γ(x)(v, v))`.
pub fn geodesic_rhs(
    field: &MetricField,
    position: &[f64],
    velocity: &[f64],
) -> Result<(Vector, Vector), GeometryError> {
    let gamma = field.christoffel(position)?;
    let acc = -gamma.contract(velocity, velocity);
    Ok((Vector::from_column_slice(velocity), acc))
}

/// Number of RK4 steps covering `span` with steps no longer than `step`.
pub(crate) fn steps_for(span: f64, step: f64) -> usize {
    ((span / step) - 1e-9).ceil().max(1.0) as usize
}

fn check_step(step: f64) -> Result<(), GeodesicError> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(GeodesicError::InvalidStep(step))
    }
}

/// Jacobian of the first-order RHS, `[[0, I], [∂a/∂x, ∂a/∂v]]`, and the RHS itself.
///
/// `∂a/∂v` is exact; `∂a/∂x` uses central differences of the Christoffel
/// symbols with the field's `fd_step`.
fn rhs_and_jacobian(
    field: &MetricField,
    x: &[f64],
    v: &[f64],
) -> Result<(Vector, Vector, Matrix), GeometryError> {
    let d = x.len();
    let gamma = field.christoffel(x)?;
    let acc = -gamma.contract(v, v);
    let mut jac = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        jac[(i, d + i)] = 1.0;
    }
    for k in 0..d {
        for m in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += (gamma.get(k, m, j) + gamma.get(k, j, m)) * v[j];
            }
            jac[(d + k, d + m)] = -s;
        }
    }
    let h = field.fd_step();
    let mut xp = x.to_vec();
    for m in 0..d {
        xp[m] = x[m] + h;
        let ap = -field.christoffel(&xp)?.contract(v, v);
        xp[m] = x[m] - h;
        let am = -field.christoffel(&xp)?.contract(v, v);
        xp[m] = x[m];
        for k in 0..d {
            jac[(d + k, m)] = (ap[k] - am[k]) / (2.0 * h);
        }
    }
    Ok((Vector::from_column_slice(v), acc, jac))
}

/// Integrated trajectory segment plus, optionally, the `2d × 2d` transition
/// matrix `∂(x, v)(λ₁) / ∂(x, v)(λ₀)`.
pub(crate) struct Flow {
    pub nodes: Vec<GeodesicNode>,
    pub transition: Option<Matrix>,
}

impl Flow {
    pub fn end(&self) -> &GeodesicNode {
        &self.nodes[self.nodes.len() - 1]
    }
}

/// RK4 over `[lambda0, lambda1]` in `steps` equal steps.
pub(crate) fn integrate(
    field: &MetricField,
    x0: &Vector,
    v0: &Vector,
    lambda0: f64,
    lambda1: f64,
    steps: usize,
    sensitivity: bool,
) -> Result<Flow, GeodesicError> {
    let d = x0.len();
    field
        .check_coords(x0.as_slice())
        .map_err(|e| GeodesicError::at(lambda0, e))?;
    let h = (lambda1 - lambda0) / steps as f64;
    let mut x = x0.clone();
    let mut v = v0.clone();
    let mut s = sensitivity.then(|| Matrix::identity(2 * d, 2 * d));
    let mut nodes = Vec::with_capacity(steps + 1);
    nodes.push(GeodesicNode {
        lambda: lambda0,
        position: x.clone(),
        velocity: v.clone(),
    });
    for n in 0..steps {
        let lambda = lambda0 + h * n as f64;
        let fail = |e| GeodesicError::at(lambda, e);
        match s.as_mut() {
            None => {
                let (k1x, k1v) = geodesic_rhs(field, x.as_slice(), v.as_slice()).map_err(fail)?;
                let x2 = &x + &k1x * (0.5 * h);
                let v2 = &v + &k1v * (0.5 * h);
                let (k2x, k2v) = geodesic_rhs(field, x2.as_slice(), v2.as_slice()).map_err(fail)?;
                let x3 = &x + &k2x * (0.5 * h);
                let v3 = &v + &k2v * (0.5 * h);
                let (k3x, k3v) = geodesic_rhs(field, x3.as_slice(), v3.as_slice()).map_err(fail)?;
                let x4 = &x + &k3x * h;
                let v4 = &v + &k3v * h;
                let (k4x, k4v) = geodesic_rhs(field, x4.as_slice(), v4.as_slice()).map_err(fail)?;
                x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
                v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
            }
            Some(s) => {
                let (k1x, k1v, j1) =
                    rhs_and_jacobian(field, x.as_slice(), v.as_slice()).map_err(fail)?;
                let q1 = &j1 * &*s;
                let x2 = &x + &k1x * (0.5 * h);
                let v2 = &v + &k1v * (0.5 * h);
                let s2 = &*s + &q1 * (0.5 * h);
                let (k2x, k2v, j2) =
                    rhs_and_jacobian(field, x2.as_slice(), v2.as_slice()).map_err(fail)?;
                let q2 = &j2 * &s2;
                let x3 = &x + &k2x * (0.5 * h);
                let v3 = &v + &k2v * (0.5 * h);
                let s3 = &*s + &q2 * (0.5 * h);
                let (k3x, k3v, j3) =
                    rhs_and_jacobian(field, x3.as_slice(), v3.as_slice()).map_err(fail)?;
                let q3 = &j3 * &s3;
                let x4 = &x + &k3x * h;
                let v4 = &v + &k3v * h;
                let s4 = &*s + &q3 * h;
                let (k4x, k4v, j4) =
                    rhs_and_jacobian(field, x4.as_slice(), v4.as_slice()).map_err(fail)?;
                let q4 = &j4 * &s4;
                x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
                v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
                *s += (q1 + q2 * 2.0 + q3 * 2.0 + q4) * (h / 6.0);
            }
        }
        let lambda_next = if n + 1 == steps {
            lambda1
        } else {
            lambda0 + h * (n + 1) as f64
        };
        if !field.contains(x.as_slice()) {
            return Err(GeodesicError::LeftChart { lambda: lambda_next });
        }
        nodes.push(GeodesicNode {
            lambda: lambda_next,
            position: x.clone(),
            velocity: v.clone(),
        });
    }
    Ok(Flow {
        nodes,
        transition: s,
    })
}

/// `exp_p(v)` with the full trajectory over `λ ∈ [0, 1]`.
pub fn exp_map(
    field: &MetricField,
    v: &TangentVector,
    step: f64,
) -> Result<Geodesic, GeodesicError> {
    check_step(step)?;
    let flow = integrate(
        field,
        v.base().coords(),
        v.components(),
        0.0,
        1.0,
        steps_for(1.0, step),
        false,
    )?;
    Ok(Geodesic::from_nodes(flow.nodes))
}

/// `exp_p(v)` together with `∂γ(1)/∂v`.
pub fn variational_exp(
    field: &MetricField,
    v: &TangentVector,
    step: f64,
) -> Result<(Geodesic, Matrix), GeodesicError> {
    check_step(step)?;
    let d = field.dim();
    let flow = integrate(
        field,
        v.base().coords(),
        v.components(),
        0.0,
        1.0,
        steps_for(1.0, step),
        true,
    )?;
    let transition = flow.transition.expect("sensitivity requested");
    let dx_dv = transition.view((0, d), (d, d)).into_owned();
    Ok((Geodesic::from_nodes(flow.nodes), dx_dv))
}

/// `⟨γ̇, γ̇⟩_g^{1/2}` at every node.
pub fn speed_profile(field: &MetricField, geo: &Geodesic) -> Result<Vec<f64>, GeometryError> {
    geo.nodes()
        .iter()
        .map(|n| {
            let g = field.metric(n.position.as_slice())?;
            Ok(crate::manifold::quadratic_form(&g, &n.velocity, &n.velocity)
                .max(0.0)
                .sqrt())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::AnalyticMetric;
    use nalgebra::dvector;
    use std::f64::consts::FRAC_PI_2;

    fn tangent(p: &[f64], v: &[f64]) -> TangentVector {
        TangentVector::new(
            LatentPoint::new(p.to_vec()).unwrap(),
            Vector::from_column_slice(v),
        )
        .unwrap()
    }

    #[test]
    fn rhs_examples() {
        let flat = AnalyticMetric::Flat { dim: 2 }.field();
        let (_, acc) = geodesic_rhs(&flat, &[0.4, 1.0], &[2.0, -1.0]).unwrap();
        assert_eq!(acc, dvector![0.0, 0.0]);

        let polar = AnalyticMetric::Polar.field();
        let (xd, acc) = geodesic_rhs(&polar, &[2.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(xd, dvector![0.0, 1.0]);
        assert!((acc[0] - 2.0).abs() < 1e-12 && acc[1].abs() < 1e-12);

        let (xd, acc) = geodesic_rhs(&polar, &[2.0, 1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(xd, dvector![0.0, 0.0]);
        assert_eq!(acc, dvector![0.0, 0.0]);
    }

    #[test]
    fn flat_exp_is_a_straight_line() {
        let flat = AnalyticMetric::Flat { dim: 2 }.field();
        let geo = exp_map(&flat, &tangent(&[0.0, 0.0], &[1.0, 2.0]), DEFAULT_STEP).unwrap();
        assert_eq!(geo.nodes().len(), 101);
        assert!((geo.endpoint() - dvector![1.0, 2.0]).amax() < 1e-14);
        let speeds = speed_profile(&flat, &geo).unwrap();
        assert!(speeds.iter().all(|s| (s - 5f64.sqrt()).abs() < 1e-14));
    }

    #[test]
    fn sphere_equator_is_a_great_circle() {
        let sphere = AnalyticMetric::Sphere.field();
        let geo = exp_map(&sphere, &tangent(&[FRAC_PI_2, 0.0], &[0.0, FRAC_PI_2]), DEFAULT_STEP)
            .unwrap();
        assert!((geo.endpoint() - dvector![FRAC_PI_2, FRAC_PI_2]).amax() < 1e-12);
        for s in speed_profile(&sphere, &geo).unwrap() {
            assert!((s - FRAC_PI_2).abs() < 1e-6);
        }
        assert!((geo.length(&sphere).unwrap() - FRAC_PI_2).abs() < 1e-6);
    }

    #[test]
    fn poincare_geodesics_through_origin_are_diameters() {
        let disk = AnalyticMetric::Poincare { dim: 2 }.field();
        let geo = exp_map(&disk, &tangent(&[0.0, 0.0], &[0.6, 0.8]), DEFAULT_STEP).unwrap();
        for n in geo.nodes() {
            // collinear with (0.6, 0.8)
            let cross = n.position[0] * 0.8 - n.position[1] * 0.6;
            assert!(cross.abs() < 1e-12);
        }
    }

    #[test]
    fn leaving_the_chart_reports_lambda() {
        let flat = AnalyticMetric::Flat { dim: 2 }.field();
        let err = exp_map(&flat, &tangent(&[0.0, 0.0], &[10.0, 0.0]), DEFAULT_STEP).unwrap_err();
        match err {
            GeodesicError::LeftChart { lambda } => assert!(lambda > 0.25 && lambda < 0.35),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(
            exp_map(&flat, &tangent(&[0.0, 0.0], &[1.0, 0.0]), 0.0),
            Err(GeodesicError::InvalidStep(0.0))
        );
    }

    #[test]
    fn flat_sensitivity_is_identity() {
        let flat = AnalyticMetric::Flat { dim: 2 }.field();
        for v in [[0.3, -0.2], [0.0, 0.0]] {
            let (_, s) = variational_exp(&flat, &tangent(&[0.5, 0.5], &v), DEFAULT_STEP).unwrap();
            assert!((s - Matrix::identity(2, 2)).amax() < 1e-12);
        }
    }

    #[test]
    fn step_count_rounds_up() {
        assert_eq!(steps_for(1.0, 0.01), 100);
        assert_eq!(steps_for(0.125, 0.01), 13);
        assert_eq!(steps_for(0.1, 1.0), 1);
    }
}
