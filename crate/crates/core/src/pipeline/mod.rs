//! Mean, tangent-space SVD and principal geodesics of a sample set.

mod artifacts;
mod ellipse;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::decoder::{DecoderError, Immersion};
use crate::eikonal::{EikonalError, EikonalSettings, ResidualStats};
use crate::frechet::{frechet_mean, DistanceCache, FrechetError, FrechetResult, FrechetSettings, SampleSet};
use crate::geodesic::{exp_map, GeodesicError};
use crate::logmap::{log_map, LogMapSettings};
use crate::manifold::{GeometryError, LatentPoint, Matrix, MetricField, TangentVector, Vector};

pub use artifacts::{read_snapshot_matrix, write_snapshot_matrix, PLDM_MAGIC, PLDM_VERSION};
pub use ellipse::{fit_ellipse, Ellipse};

pub const DEFAULT_MODE_POINTS: usize = 41;
/// Singular values below this fraction of the largest are zero-energy.
pub const ZERO_ENERGY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("frechet mean: {0}")]
    Frechet(#[from] FrechetError),
    #[error("distance field: {0}")]
    Eikonal(#[from] EikonalError),
    #[error("tangent embedding: only {kept} rows survived the log maps")]
    TooFewRows { kept: usize },
    #[error("svd: tangent matrix is {0}")]
    Degenerate(&'static str),
    #[error("principal geodesic: {0}")]
    Geodesic(#[from] GeodesicError),
    #[error("decode: {0}")]
    Decoder(#[from] DecoderError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("i/o: {0}")]
    Io(String),
}

/// A sample whose log map failed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DroppedRow {
    /// Zero-based row in the input sample set.
    pub row: usize,
    pub point: Vec<f64>,
    pub error: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ShootingStats {
    pub log_maps: usize,
    pub bypassed: usize,
    pub max_gn_iterations: usize,
    pub mean_gn_iterations: f64,
    pub max_refine_iterations: usize,
    pub max_endpoint_error: f64,
}

/// Rows `log_μ(q_i)` in canonical sample order.
#[derive(Clone, Debug)]
pub struct TangentEmbedding {
    pub rows: Matrix,
    /// Input row of each matrix row.
    pub kept: Vec<usize>,
    pub dropped: Vec<DroppedRow>,
    pub stats: ShootingStats,
}

/// Maps every sample into the tangent space at `mean`.
pub fn tangent_embed(
    field: &MetricField,
    mean: &LatentPoint,
    samples: &SampleSet,
    cache: &DistanceCache,
    settings: &LogMapSettings,
) -> Result<TangentEmbedding, PipelineError> {
    samples.check(field)?;
    let order = canonical_order(samples);
    let points: Vec<LatentPoint> = order.iter().map(|&i| samples.points()[i].clone()).collect();
    let df_mean = cache.get(mean)?;
    let fields = cache.get_many(&points)?;
    let results: Vec<_> = points
        .par_iter()
        .zip(fields.par_iter())
        .map(|(q, df_q)| log_map(field, mean, q, df_q, Some(&df_mean), settings))
        .collect();
    let d = field.dim();
    let mut data = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut stats = ShootingStats::default();
    let mut gn_total = 0usize;
    for (k, res) in results.into_iter().enumerate() {
        let row = order[k];
        match res {
            Ok(rep) => {
                stats.log_maps += 1;
                stats.bypassed += rep.bypassed as usize;
                stats.max_gn_iterations = stats.max_gn_iterations.max(rep.gn_iterations);
                stats.max_refine_iterations = stats.max_refine_iterations.max(rep.refine_iterations);
                stats.max_endpoint_error = stats.max_endpoint_error.max(rep.endpoint_error);
                gn_total += rep.gn_iterations;
                data.extend(rep.velocity.components().iter().copied());
                kept.push(row);
            }
            Err(e) => dropped.push(DroppedRow {
                row,
                point: points[k].as_slice().to_vec(),
                error: e.to_string(),
            }),
        }
    }
    if stats.log_maps > 0 {
        stats.mean_gn_iterations = gn_total as f64 / stats.log_maps as f64;
    }
    dropped.sort_by_key(|r| r.row);
    let rows = Matrix::from_row_slice(kept.len(), d, &data);
    Ok(TangentEmbedding {
        rows,
        kept,
        dropped,
        stats,
    })
}

/// Input indices in lexicographic coordinate order (ties by index).
fn canonical_order(samples: &SampleSet) -> Vec<usize> {
    let pts = samples.points();
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| {
        pts[a]
            .as_slice()
            .iter()
            .zip(pts[b].as_slice())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Thin SVD `Z̄ = U Σ Vᵀ`, energy-ordered.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentSvd {
    pub singular_values: Vec<f64>,
    /// Columns are the modes; each column's largest-magnitude entry is positive.
    pub right_basis: Matrix,
    pub energy_fractions: Vec<f64>,
}

impl TangentSvd {
    pub fn is_zero_energy(&self, mode: usize) -> bool {
        self.singular_values[mode] <= ZERO_ENERGY_TOL * self.singular_values[0]
    }

    pub fn mode(&self, k: usize) -> Vector {
        self.right_basis.column(k).into_owned()
    }
}

pub fn tangent_svd(z: &Matrix) -> Result<TangentSvd, PipelineError> {
    if z.nrows() == 0 || z.ncols() == 0 {
        return Err(PipelineError::Degenerate("empty"));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(PipelineError::Degenerate("not finite"));
    }
    if z.iter().all(|&v| v == 0.0) {
        return Err(PipelineError::Degenerate("all zero"));
    }
    let d = z.ncols();
    let padded = if z.nrows() < d {
        let mut m = Matrix::zeros(d, d);
        m.view_mut((0, 0), (z.nrows(), d)).copy_from(z);
        m
    } else {
        z.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested right vectors");
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let mut right_basis = Matrix::zeros(d, d);
    let mut singular_values = Vec::with_capacity(d);
    for (col, &i) in idx.iter().enumerate() {
        let mut v = v_t.row(i).transpose();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v = -v;
        }
        right_basis.set_column(col, &v);
        singular_values.push(svd.singular_values[i].max(0.0));
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let energy_fractions = singular_values.iter().map(|s| s * s / total).collect();
    Ok(TangentSvd {
        singular_values,
        right_basis,
        energy_fractions,
    })
}

/// A mode mapped back onto the manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct PrincipalGeodesic {
    /// Zero-based.
    pub mode_index: usize,
    pub trajectory: Vec<(f64, LatentPoint)>,
    pub decoded: Option<Vec<Vector>>,
    /// Some nodes were dropped because the geodesic left the chart.
    pub truncated: bool,
    pub zero_energy: bool,
}

/// Nodes `exp_μ(t · scale · σ̂ · v)` for `n_points` equispaced `t ∈ [−1, 1]`.
///
/// Walks outward from `t = 0` in both directions and stops at the first
/// node whose geodesic leaves the chart.
pub fn principal_geodesic(
    field: &MetricField,
    mean: &LatentPoint,
    direction: &Vector,
    sigma_hat: f64,
    n_points: usize,
    scale: f64,
    step: f64,
) -> Result<PrincipalGeodesic, PipelineError> {
    if n_points < 3 || n_points % 2 == 0 {
        return Err(PipelineError::InvalidParameter(format!(
            "n_points must be odd and at least 3, got {n_points}"
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(PipelineError::InvalidParameter(format!("scale must be positive, got {scale}")));
    }
    field.check_point(mean)?;
    let half = (n_points - 1) / 2;
    let radius = scale * sigma_hat;
    let mut truncated = false;
    let mut walk = |sign: f64| -> Result<Vec<(f64, LatentPoint)>, PipelineError> {
        let mut out = Vec::new();
        for j in 1..=half {
            let t = sign * j as f64 / half as f64;
            let v = TangentVector::new(mean.clone(), direction * (t * radius))?;
            match exp_map(field, &v, step) {
                Ok(geo) => out.push((t, LatentPoint::from_vector(geo.endpoint().clone())?)),
                Err(GeodesicError::LeftChart { .. }) => {
                    truncated = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    };
    let mut negative = walk(-1.0)?;
    let positive = walk(1.0)?;
    negative.reverse();
    let mut trajectory = negative;
    trajectory.push((0.0, mean.clone()));
    trajectory.extend(positive);
    Ok(PrincipalGeodesic {
        mode_index: 0,
        trajectory,
        decoded: None,
        truncated,
        zero_energy: radius == 0.0,
    })
}

/// Attaches decoder outputs to every trajectory node.
pub fn decode_mode<I: Immersion + ?Sized>(
    net: &I,
    mut pg: PrincipalGeodesic,
) -> Result<PrincipalGeodesic, PipelineError> {
    let decoded = pg
        .trajectory
        .iter()
        .map(|(_, z)| net.forward(z.as_slice()))
        .collect::<Result<Vec<_>, _>>()?;
    pg.decoded = Some(decoded);
    Ok(pg)
}

#[derive(Clone, Debug)]
pub struct PldSettings {
    pub eikonal: EikonalSettings,
    pub frechet: FrechetSettings,
    pub logmap: LogMapSettings,
    /// Modes to map back; clamped to the latent dimension.
    pub n_modes: usize,
    pub n_points: usize,
    pub scale: f64,
    pub ellipse: bool,
}

impl PldSettings {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            eikonal: EikonalSettings::for_dim(dim),
            frechet: FrechetSettings::default(),
            logmap: LogMapSettings::default(),
            n_modes: dim,
            n_points: DEFAULT_MODE_POINTS,
            scale: 1.0,
            ellipse: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PldResult {
    pub mean: LatentPoint,
    pub tangent_matrix: Matrix,
    pub singular_values: Vec<f64>,
    pub right_basis: Matrix,
    pub energy_fractions: Vec<f64>,
}

/// Everything one run produces.
#[derive(Clone, Debug)]
pub struct PldRun {
    pub result: PldResult,
    pub modes: Vec<PrincipalGeodesic>,
    pub frechet: FrechetResult,
    pub embedding_rows: Vec<usize>,
    pub dropped: Vec<DroppedRow>,
    pub shooting: ShootingStats,
    pub residuals: Vec<(LatentPoint, ResidualStats)>,
    pub ellipse: Option<Ellipse>,
    pub warnings: Vec<String>,
}

/// Mean, embedding, SVD, modes and optional decoding.
pub fn run_pld(
    field: &MetricField,
    samples: &SampleSet,
    decoder: Option<&dyn Immersion>,
    settings: &PldSettings,
) -> Result<PldRun, PipelineError> {
    if let Some(net) = decoder {
        if net.input_dim() != field.dim() {
            return Err(DecoderError::InputDimension {
                expected: net.input_dim(),
                found: field.dim(),
            }
            .into());
        }
    }
    let cache = DistanceCache::new(field, settings.eikonal)?;
    let frechet = frechet_mean(field, samples, &settings.frechet, &cache)?;
    let mut warnings = Vec::new();
    if !frechet.converged {
        warnings.push(format!(
            "frechet mean stopped after {} iterations without meeting tol",
            frechet.iterations
        ));
    }
    let mean = frechet.mean.clone();
    let emb = tangent_embed(field, &mean, samples, &cache, &settings.logmap)?;
    if emb.kept.len() < 2 {
        return Err(PipelineError::TooFewRows { kept: emb.kept.len() });
    }
    for r in &emb.dropped {
        warnings.push(format!("row {} dropped: {}", r.row, r.error));
    }
    let svd = tangent_svd(&emb.rows)?;
    let norm = ((emb.kept.len() - 1) as f64).sqrt();
    let n_modes = settings.n_modes.min(field.dim());
    let mut modes = Vec::with_capacity(n_modes);
    for k in 0..n_modes {
        let sigma_hat = if svd.is_zero_energy(k) { 0.0 } else { svd.singular_values[k] / norm };
        let mut pg = principal_geodesic(
            field,
            &mean,
            &svd.mode(k),
            sigma_hat,
            settings.n_points,
            settings.scale,
            settings.logmap.step,
        )?;
        pg.mode_index = k;
        if pg.truncated {
            warnings.push(format!("mode {} truncated at the chart boundary", k + 1));
        }
        if pg.zero_energy {
            warnings.push(format!("mode {} has zero energy", k + 1));
        }
        if let Some(net) = decoder {
            pg = decode_mode(net, pg)?;
        }
        modes.push(pg);
    }
    let ellipse = if settings.ellipse {
        let coords = &emb.rows * svd.right_basis.columns(0, 2);
        let pts: Vec<[f64; 2]> = coords.row_iter().map(|r| [r[0], r[1]]).collect();
        Some(fit_ellipse(&pts)?)
    } else {
        None
    };
    Ok(PldRun {
        result: PldResult {
            mean,
            tangent_matrix: emb.rows,
            singular_values: svd.singular_values,
            right_basis: svd.right_basis,
            energy_fractions: svd.energy_fractions,
        },
        modes,
        frechet,
        embedding_rows: emb.kept,
        dropped: emb.dropped,
        shooting: emb.stats,
        residuals: cache.residuals(),
        ellipse,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{Activation, DecoderNet, Layer};
    use crate::manifold::AnalyticMetric;
    use nalgebra::dmatrix;
    use std::f64::consts::PI;

    #[test]
    fn rank_one_svd() {
        let svd = tangent_svd(&dmatrix![1.0, 0.0; -1.0, 0.0]).unwrap();
        assert!((svd.singular_values[0] - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(svd.singular_values[1], 0.0);
        assert!((svd.mode(0) - Vector::from_column_slice(&[1.0, 0.0])).norm() < 1e-14);
        assert!(svd.is_zero_energy(1));
        let sum: f64 = svd.energy_fractions.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal() {
        let z = dmatrix![0.3, -1.2; 2.0, 0.1; -0.7, 0.4; 0.2, 0.9];
        let svd = tangent_svd(&z).unwrap();
        let v = &svd.right_basis;
        assert!((v.transpose() * v - Matrix::identity(2, 2)).amax() < 1e-12);
        let u = &z * v * Matrix::from_diagonal(&Vector::from_iterator(2, svd.singular_values.iter().map(|s| 1.0 / s)));
        let back = &u * Matrix::from_diagonal(&Vector::from_vec(svd.singular_values.clone())) * v.transpose();
        assert!((back - z).amax() < 1e-12);
        assert!(svd.singular_values[0] >= svd.singular_values[1]);
    }

    #[test]
    fn svd_single_row_is_padded() {
        let svd = tangent_svd(&dmatrix![3.0, 4.0]).unwrap();
        assert!((svd.singular_values[0] - 5.0).abs() < 1e-14);
        assert!(svd.is_zero_energy(1));
    }

    #[test]
    fn svd_rejects_zero_matrix() {
        assert!(tangent_svd(&Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn flat_embedding_is_subtraction() {
        let field = AnalyticMetric::Flat { dim: 2 }.field();
        let cache = DistanceCache::new(&field, EikonalSettings::for_dim(2).with_resolution(33)).unwrap();
        let samples = SampleSet::from_rows(&[vec![1.0, 0.5], vec![-0.5, 0.2], vec![0.3, -1.1]]).unwrap();
        let mean = LatentPoint::new(vec![0.2, -0.1]).unwrap();
        let emb = tangent_embed(&field, &mean, &samples, &cache, &LogMapSettings::default()).unwrap();
        assert!(emb.dropped.is_empty());
        for (r, &i) in emb.kept.iter().enumerate() {
            let want = samples.points()[i].coords() - mean.coords();
            assert!((emb.rows.row(r).transpose() - want).norm() < 1e-9);
        }
    }

    #[test]
    fn flat_mode_is_a_straight_segment() {
        let field = AnalyticMetric::Flat { dim: 2 }.field();
        let mean = LatentPoint::new(vec![0.5, 0.0]).unwrap();
        let dir = Vector::from_column_slice(&[0.6, 0.8]);
        let pg = principal_geodesic(&field, &mean, &dir, 1.5, 7, 1.0, 1e-2).unwrap();
        assert_eq!(pg.trajectory.len(), 7);
        assert_eq!(pg.trajectory[3], (0.0, mean.clone()));
        for (t, z) in &pg.trajectory {
            let want = mean.coords() + &dir * (1.5 * t);
            assert!((z.coords() - want).norm() < 1e-12);
        }
        assert!(principal_geodesic(&field, &mean, &dir, 1.0, 4, 1.0, 1e-2).is_err());
    }

    #[test]
    fn long_mode_is_truncated() {
        let field = AnalyticMetric::Flat { dim: 2 }.field();
        let mean = LatentPoint::new(vec![2.0, 0.0]).unwrap();
        let dir = Vector::from_column_slice(&[1.0, 0.0]);
        let pg = principal_geodesic(&field, &mean, &dir, 2.0, 5, 1.0, 1e-2).unwrap();
        assert!(pg.truncated);
        assert_eq!(pg.trajectory.len(), 4);
        assert_eq!(pg.trajectory.last().unwrap().0, 0.5);
    }

    #[test]
    fn linear_decoder_is_affine_along_flat_mode() {
        let field = AnalyticMetric::Flat { dim: 2 }.field();
        let mean = LatentPoint::new(vec![0.1, 0.2]).unwrap();
        let dir = Vector::from_column_slice(&[1.0, 0.0]);
        let net = DecoderNet::new(vec![Layer::new(
            dmatrix![1.0, 2.0; -1.0, 0.5; 0.0, 3.0],
            Vector::from_column_slice(&[0.1, 0.0, -0.2]),
            Activation::Identity,
        )])
        .unwrap();
        let pg = decode_mode(&net, principal_geodesic(&field, &mean, &dir, 1.0, 5, 1.0, 1e-2).unwrap()).unwrap();
        let dec = pg.decoded.unwrap();
        for w in dec.windows(3) {
            assert!((&w[2] - &w[1] * 2.0 + &w[0]).amax() < 1e-12);
        }
    }

    #[test]
    fn sphere_pair_embeds_opposite() {
        let field = AnalyticMetric::Sphere.field();
        let cache = DistanceCache::new(&field, EikonalSettings::for_dim(2).with_resolution(129)).unwrap();
        let samples = SampleSet::from_rows(&[vec![PI / 2.0 - 0.3, 1.0], vec![PI / 2.0 + 0.3, 1.0]]).unwrap();
        let mean = LatentPoint::new(vec![PI / 2.0, 1.0]).unwrap();
        let emb = tangent_embed(&field, &mean, &samples, &cache, &LogMapSettings::default()).unwrap();
        let a = emb.rows.row(0).transpose();
        let b = emb.rows.row(1).transpose();
        assert!((&a + &b).norm() < 1e-4);
        assert!((a.norm() - 0.3).abs() < 1e-4);
    }

    #[test]
    fn two_samples_leave_a_zero_energy_mode() {
        let field = AnalyticMetric::Flat { dim: 2 }.field();
        let samples = SampleSet::from_rows(&[vec![-1.0, 0.5], vec![1.0, -0.5]]).unwrap();
        let mut settings = PldSettings::for_dim(2);
        settings.eikonal = settings.eikonal.with_resolution(33);
        let run = run_pld(&field, &samples, None, &settings).unwrap();
        assert!(run.result.singular_values[1] <= 1e-10 * run.result.singular_values[0]);
        assert!(run.modes[1].zero_energy);
        assert!(run.modes.iter().all(|m| m.trajectory.iter().any(|(t, z)| *t == 0.0 && *z == run.result.mean)));
    }
}
