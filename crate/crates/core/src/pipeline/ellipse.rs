//! Direct least-squares ellipse fit (Halir–Flusser).

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::Serialize;

use super::PipelineError;

/// `c + R(rotation) (a cos θ, b sin θ)` with `a ≥ b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Angle of the major axis, in `(−π/2, π/2]`.
    pub rotation: f64,
    /// RMS of `√((u/a)² + (v/b)²) − 1` over the fitted points.
    pub rms_residual: f64,
}

impl Ellipse {
    pub fn point(&self, theta: f64) -> [f64; 2] {
        let (s, c) = self.rotation.sin_cos();
        let u = self.semi_major * theta.cos();
        let v = self.semi_minor * theta.sin();
        [self.center[0] + c * u - s * v, self.center[1] + s * u + c * v]
    }

    /// Normalised radial offset of `p`; zero on the ellipse.
    pub fn radial_residual(&self, p: [f64; 2]) -> f64 {
        let (s, c) = self.rotation.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        ((u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2)).sqrt() - 1.0
    }
}

fn not_ellipse() -> PipelineError {
    PipelineError::InvalidParameter("points do not determine an ellipse".into())
}

pub fn fit_ellipse(points: &[[f64; 2]]) -> Result<Ellipse, PipelineError> {
    if points.len() < 5 {
        return Err(PipelineError::InvalidParameter(format!(
            "ellipse fit needs at least 5 points, got {}",
            points.len()
        )));
    }
    // centre and scale for conditioning
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let sc = points
        .iter()
        .map(|p| (p[0] - mx).abs().max((p[1] - my).abs()))
        .fold(0.0, f64::max);
    if !(sc > 0.0) {
        return Err(not_ellipse());
    }
    let mut s1 = Matrix3::zeros();
    let mut s2 = Matrix3::zeros();
    let mut s3 = Matrix3::zeros();
    for p in points {
        let x = (p[0] - mx) / sc;
        let y = (p[1] - my) / sc;
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let t = -s3.try_inverse().ok_or_else(not_ellipse)? * s2.transpose();
    let m = s1 + s2 * t;
    let reduced = Matrix3::from_rows(&[m.row(2) / 2.0, -m.row(1), m.row(0) / 2.0]);
    let mut best: Option<Vector3<f64>> = None;
    for lambda in reduced.complex_eigenvalues().iter() {
        if lambda.im.abs() > 1e-9 * lambda.re.abs().max(1.0) {
            continue;
        }
        let shifted = reduced - Matrix3::identity() * lambda.re;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let (k, _) = svd.singular_values.argmin();
        let a1 = v_t.row(k).transpose();
        if 4.0 * a1[0] * a1[2] - a1[1] * a1[1] > 0.0 {
            best = Some(a1);
        }
    }
    let a1 = best.ok_or_else(not_ellipse)?;
    let a2 = t * a1;
    let (a, b, c) = (a1[0], a1[1], a1[2]);
    let (d, e, f) = (a2[0], a2[1], a2[2]);
    let q = Matrix2::new(a, b / 2.0, b / 2.0, c);
    let centre = q.try_inverse().ok_or_else(not_ellipse)? * Vector2::new(-d / 2.0, -e / 2.0);
    let f0 = f + (d * centre[0] + e * centre[1]) / 2.0;
    let eig = q.symmetric_eigen();
    let (i_major, i_minor) = if eig.eigenvalues[0] <= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let ax2 = -f0 / eig.eigenvalues[i_major];
    let bx2 = -f0 / eig.eigenvalues[i_minor];
    if !(ax2 > 0.0 && bx2 > 0.0) {
        return Err(not_ellipse());
    }
    let dir = eig.eigenvectors.column(i_major);
    let mut rotation = dir[1].atan2(dir[0]);
    if rotation <= -std::f64::consts::FRAC_PI_2 {
        rotation += std::f64::consts::PI;
    } else if rotation > std::f64::consts::FRAC_PI_2 {
        rotation -= std::f64::consts::PI;
    }
    let mut ellipse = Ellipse {
        center: [mx + sc * centre[0], my + sc * centre[1]],
        semi_major: sc * ax2.sqrt(),
        semi_minor: sc * bx2.sqrt(),
        rotation,
        rms_residual: 0.0,
    };
    let ss: f64 = points.iter().map(|&p| ellipse.radial_residual(p).powi(2)).sum();
    ellipse.rms_residual = (ss / n).sqrt();
    Ok(ellipse)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_ellipse() {
        let truth = Ellipse {
            center: [1.5, -0.5],
            semi_major: 2.0,
            semi_minor: 0.7,
            rotation: 0.4,
            rms_residual: 0.0,
        };
        let pts: Vec<[f64; 2]> = (0..40).map(|k| truth.point(k as f64 * 0.157)).collect();
        let fit = fit_ellipse(&pts).unwrap();
        assert!((fit.center[0] - 1.5).abs() < 1e-9 && (fit.center[1] + 0.5).abs() < 1e-9);
        assert!((fit.semi_major - 2.0).abs() < 1e-9);
        assert!((fit.semi_minor - 0.7).abs() < 1e-9);
        assert!((fit.rotation - 0.4).abs() < 1e-9);
        assert!(fit.rms_residual < 1e-9);
    }

    #[test]
    fn circle_has_equal_axes() {
        let pts: Vec<[f64; 2]> = (0..12)
            .map(|k| {
                let th = k as f64 * std::f64::consts::TAU / 12.0;
                [3.0 * th.cos(), 3.0 * th.sin()]
            })
            .collect();
        let fit = fit_ellipse(&pts).unwrap();
        assert!((fit.semi_major - 3.0).abs() < 1e-9 && (fit.semi_minor - 3.0).abs() < 1e-9);
    }

    #[test]
    fn collinear_points_fail() {
        let pts: Vec<[f64; 2]> = (0..10).map(|k| [k as f64, 2.0 * k as f64]).collect();
        assert!(fit_ellipse(&pts).is_err());
    }
}
