//! Fréchet means `argmin_μ Σ d_g(μ, q)²` of latent samples.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::eikonal::{DistanceField, EikonalError, EikonalSettings, EikonalSolver};
use crate::geodesic::{exp_map, GeodesicError};
use crate::logmap::{log_map, LogMapError, LogMapSettings};
use crate::manifold::{GeometryError, LatentPoint, MetricField, TangentVector, Vector};

pub const DEFAULT_STEP_SIZE: f64 = 1e-1;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DEFAULT_SUBSAMPLE: usize = 64;
pub const MAX_STEP_HALVINGS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrechetError {
    #[error("at least two samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("sample {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("sample {index} lies outside the chart")]
    OutOfBounds { index: usize },
    #[error("{0} must be positive")]
    InvalidParameter(&'static str),
    #[error("distance field failure: {0}")]
    Eikonal(#[from] EikonalError),
    #[error("log map to sample {index} failed: {source}")]
    LogMap {
        index: usize,
        #[source]
        source: LogMapError,
    },
    #[error("exponential map failed: {0}")]
    Exp(#[from] GeodesicError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Encoded samples on the latent manifold.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    points: Vec<LatentPoint>,
}

impl SampleSet {
    pub fn new(points: Vec<LatentPoint>) -> Result<Self, FrechetError> {
        if points.len() < 2 {
            return Err(FrechetError::TooFewSamples(points.len()));
        }
        let d = points[0].dim();
        for (index, p) in points.iter().enumerate() {
            if p.dim() != d {
                return Err(FrechetError::DimensionMismatch {
                    index,
                    expected: d,
                    found: p.dim(),
                });
            }
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FrechetError> {
        let points = rows
            .iter()
            .map(|r| LatentPoint::new(r.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(points)
    }

    pub fn points(&self) -> &[LatentPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// Every sample inside the chart of `field`.
    pub fn check(&self, field: &MetricField) -> Result<(), FrechetError> {
        for (index, p) in self.points.iter().enumerate() {
            if p.dim() != field.dim() {
                return Err(FrechetError::DimensionMismatch {
                    index,
                    expected: field.dim(),
                    found: p.dim(),
                });
            }
            if !field.contains(p.as_slice()) {
                return Err(FrechetError::OutOfBounds { index });
            }
        }
        Ok(())
    }

    /// Samples in lexicographic coordinate order.
    pub fn sorted(&self) -> Vec<LatentPoint> {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| {
            a.as_slice()
                .iter()
                .zip(b.as_slice())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        pts
    }

    pub fn arithmetic_mean(&self) -> Vector {
        let mut acc = Vector::zeros(self.dim());
        for p in self.sorted() {
            acc += p.coords();
        }
        acc / self.len() as f64
    }
}

fn key(p: &LatentPoint) -> Vec<u64> {
    p.as_slice().iter().map(|x| x.to_bits()).collect()
}

/// Distance fields by source point, solved on demand over one shared grid.
#[derive(Debug)]
pub struct DistanceCache {
    solver: EikonalSolver,
    fields: Mutex<HashMap<Vec<u64>, Arc<DistanceField>>>,
}

impl DistanceCache {
    pub fn new(field: &MetricField, settings: EikonalSettings) -> Result<Self, EikonalError> {
        Ok(Self::from_solver(EikonalSolver::new(field, settings)?))
    }

    pub fn from_solver(solver: EikonalSolver) -> Self {
        Self {
            solver,
            fields: Mutex::new(HashMap::new()),
        }
    }

    pub fn solver(&self) -> &EikonalSolver {
        &self.solver
    }

    pub fn len(&self) -> usize {
        self.fields.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, source: &LatentPoint) -> Result<Arc<DistanceField>, EikonalError> {
        Ok(self.get_many(std::slice::from_ref(source))?.remove(0))
    }

    /// Fields for every source, solving the missing ones concurrently.
    pub fn get_many(&self, sources: &[LatentPoint]) -> Result<Vec<Arc<DistanceField>>, EikonalError> {
        let mut missing: Vec<&LatentPoint> = {
            let cached = self.fields.lock().unwrap();
            sources.iter().filter(|s| !cached.contains_key(&key(s))).collect()
        };
        missing.sort_by_key(|s| key(s));
        missing.dedup_by_key(|s| key(s));
        let solved = missing
            .par_iter()
            .map(|s| self.solver.solve(s).map(|df| (key(s), Arc::new(df))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut cached = self.fields.lock().unwrap();
        cached.extend(solved);
        Ok(sources.iter().map(|s| cached[&key(s)].clone()).collect())
    }

    /// Residual statistics of every cached field, in source order.
    pub fn residuals(&self) -> Vec<(LatentPoint, crate::eikonal::ResidualStats)> {
        let cached = self.fields.lock().unwrap();
        let mut out: Vec<_> = cached
            .values()
            .map(|df| (df.source().clone(), df.residual()))
            .collect();
        out.sort_by_key(|(p, _)| key(p));
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrechetMode {
    /// Descent on `F(μ) = (1/N) Σ d(μ, q)²` with gradients from distance fields.
    #[default]
    DistanceGradient,
    /// Fixed point of `μ ← exp_μ(η (1/N) Σ log_μ q)`.
    Karcher,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrechetSettings {
    pub mode: FrechetMode,
    pub step_size: f64,
    /// Stop once an iterate moves less than this (chart coordinates).
    pub tol: f64,
    pub max_iters: usize,
    /// Sources per descent iteration when there are more samples.
    pub subsample: usize,
    pub seed: u64,
    pub logmap: LogMapSettings,
}

impl Default for FrechetSettings {
    fn default() -> Self {
        Self {
            mode: FrechetMode::default(),
            step_size: DEFAULT_STEP_SIZE,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            subsample: DEFAULT_SUBSAMPLE,
            seed: 0,
            logmap: LogMapSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrechetResult {
    pub mean: LatentPoint,
    pub iterations: usize,
    pub converged: bool,
    /// Objective before each iteration and at the result.
    pub objective: Vec<f64>,
    /// Metric norm of the objective gradient at the result (full sample set).
    pub gradient_norm: f64,
    pub last_movement: f64,
}

/// `(1/N) Σ d², and its Riemannian gradient (2/N) Σ d ∇d`, over `fields`.
fn objective_and_gradient(
    fields: &[Arc<DistanceField>],
    mu: &Vector,
) -> Result<(f64, Vector), EikonalError> {
    let terms = fields
        .par_iter()
        .map(|df| {
            let d = df.eval(mu.as_slice())?;
            let g = df.stencil_gradient(mu.as_slice())?;
            Ok((d, g))
        })
        .collect::<Result<Vec<_>, EikonalError>>()?;
    let n = fields.len() as f64;
    let mut f = 0.0;
    let mut grad = Vector::zeros(mu.len());
    for (d, g) in terms {
        f += d * d;
        grad += g * (2.0 * d);
    }
    Ok((f / n, grad / n))
}

fn objective(fields: &[Arc<DistanceField>], mu: &Vector) -> Result<f64, EikonalError> {
    let ds = fields
        .par_iter()
        .map(|df| df.eval(mu.as_slice()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ds.iter().map(|d| d * d).sum::<f64>() / fields.len() as f64)
}

fn initial_mean(field: &MetricField, samples: &SampleSet) -> Result<Vector, FrechetError> {
    let mut mu = samples.arithmetic_mean();
    let b = field.bounds();
    for a in 0..mu.len() {
        mu[a] = mu[a].clamp(b.lo()[a], b.hi()[a]);
    }
    field.check_coords(mu.as_slice())?;
    Ok(mu)
}

/// Fréchet mean of `samples`; distance fields come from (and stay in) `cache`.
pub fn frechet_mean(
    field: &MetricField,
    samples: &SampleSet,
    settings: &FrechetSettings,
    cache: &DistanceCache,
) -> Result<FrechetResult, FrechetError> {
    if !(settings.step_size > 0.0) {
        return Err(FrechetError::InvalidParameter("step_size"));
    }
    if !(settings.tol > 0.0) {
        return Err(FrechetError::InvalidParameter("tol"));
    }
    if settings.max_iters == 0 {
        return Err(FrechetError::InvalidParameter("max_iters"));
    }
    if settings.subsample == 0 {
        return Err(FrechetError::InvalidParameter("subsample"));
    }
    samples.check(field)?;
    let sorted = samples.sorted();
    let mu = initial_mean(field, samples)?;
    match settings.mode {
        FrechetMode::DistanceGradient => distance_gradient(field, &sorted, mu, settings, cache),
        FrechetMode::Karcher => karcher(field, &sorted, mu, settings, cache),
    }
}

fn distance_gradient(
    field: &MetricField,
    sorted: &[LatentPoint],
    mut mu: Vector,
    settings: &FrechetSettings,
    cache: &DistanceCache,
) -> Result<FrechetResult, FrechetError> {
    let n = sorted.len();
    let chunk = settings.subsample.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    if chunk < n {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(settings.seed));
    }
    let batches: Vec<Vec<LatentPoint>> = order
        .chunks(chunk)
        .map(|c| c.iter().map(|&i| sorted[i].clone()).collect())
        .collect();
    let mut objective_log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_movement = f64::INFINITY;
    while iterations < settings.max_iters {
        let batch = cache.get_many(&batches[iterations % batches.len()])?;
        let (f, grad) = objective_and_gradient(&batch, &mu)?;
        objective_log.push(f);
        iterations += 1;
        let mut eta = settings.step_size;
        let mut next = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let trial = &mu - &grad * eta;
            if field.contains(trial.as_slice()) {
                if let Ok(ft) = objective(&batch, &trial) {
                    if ft <= f {
                        next = Some(trial);
                        break;
                    }
                }
            }
            eta *= 0.5;
        }
        let Some(next) = next else {
            // no admissible decrease at grid resolution
            last_movement = 0.0;
            converged = true;
            break;
        };
        last_movement = (&next - &mu).norm();
        mu = next;
        if last_movement < settings.tol {
            converged = true;
            break;
        }
    }
    finish(field, sorted, mu, iterations, converged, objective_log, last_movement, cache)
}

fn karcher(
    field: &MetricField,
    sorted: &[LatentPoint],
    mut mu: Vector,
    settings: &FrechetSettings,
    cache: &DistanceCache,
) -> Result<FrechetResult, FrechetError> {
    let fields = cache.get_many(sorted)?;
    let mut objective_log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_movement = f64::INFINITY;
    while iterations < settings.max_iters {
        let base = LatentPoint::from_vector(mu.clone())?;
        let df_mu = cache.solver().solve(&base)?;
        objective_log.push(objective(&fields, &mu)?);
        let logs = sorted
            .par_iter()
            .zip(fields.par_iter())
            .enumerate()
            .map(|(index, (q, df_q))| {
                log_map(field, &base, q, df_q, Some(&df_mu), &settings.logmap)
                    .map(|r| r.velocity.into_components())
                    .map_err(|source| FrechetError::LogMap { index, source })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut mean_log = Vector::zeros(mu.len());
        for v in logs {
            mean_log += v;
        }
        mean_log /= sorted.len() as f64;
        iterations += 1;
        let v = TangentVector::new(base, mean_log * settings.step_size)?;
        let next = exp_map(field, &v, settings.logmap.step)?.endpoint().clone();
        last_movement = (&next - &mu).norm();
        mu = next;
        if last_movement < settings.tol {
            converged = true;
            break;
        }
    }
    finish(field, sorted, mu, iterations, converged, objective_log, last_movement, cache)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    field: &MetricField,
    sorted: &[LatentPoint],
    mu: Vector,
    iterations: usize,
    converged: bool,
    mut objective_log: Vec<f64>,
    last_movement: f64,
    cache: &DistanceCache,
) -> Result<FrechetResult, FrechetError> {
    let fields = cache.get_many(sorted)?;
    let (f, grad) = objective_and_gradient(&fields, &mu)?;
    objective_log.push(f);
    let g = field.metric(mu.as_slice())?;
    let gradient_norm = crate::manifold::quadratic_form(&g, &grad, &grad).max(0.0).sqrt();
    Ok(FrechetResult {
        mean: LatentPoint::from_vector(mu)?,
        iterations,
        converged,
        objective: objective_log,
        gradient_norm,
        last_movement,
    })
}

/// `Σ d_g(μ, q)²` over the samples.
pub fn frechet_variance(
    samples: &SampleSet,
    mean: &LatentPoint,
    cache: &DistanceCache,
) -> Result<f64, FrechetError> {
    let sorted = samples.sorted();
    let fields = cache.get_many(&sorted)?;
    Ok(objective(&fields, mean.coords())? * sorted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::AnalyticMetric;
    use std::f64::consts::PI;

    fn flat_cache(n: usize) -> (MetricField, DistanceCache) {
        let field = AnalyticMetric::Flat { dim: 2 }.field();
        let cache = DistanceCache::new(&field, EikonalSettings::for_dim(2).with_resolution(n)).unwrap();
        (field, cache)
    }

    fn square() -> SampleSet {
        SampleSet::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0], vec![0.0, 2.0], vec![2.0, 2.0]]).unwrap()
    }

    #[test]
    fn flat_square_mean_and_variance() {
        let (field, cache) = flat_cache(129);
        let res = frechet_mean(&field, &square(), &FrechetSettings::default(), &cache).unwrap();
        assert!(res.converged);
        assert!((res.mean.coords() - Vector::from_column_slice(&[1.0, 1.0])).norm() < 1e-4);
        let var = frechet_variance(&square(), &res.mean, &cache).unwrap();
        assert!((var - 8.0).abs() < 0.16, "{var}");
        let at_sample = frechet_variance(&square(), &square().points()[0], &cache).unwrap();
        assert!(var <= at_sample);
    }

    #[test]
    fn flat_modes_agree() {
        let (field, cache) = flat_cache(65);
        let samples =
            SampleSet::from_rows(&[vec![-1.0, 0.3], vec![0.5, 1.5], vec![1.2, -0.8], vec![0.1, 0.2]]).unwrap();
        let karcher = FrechetSettings {
            mode: FrechetMode::Karcher,
            step_size: 1.0,
            ..FrechetSettings::default()
        };
        let a = frechet_mean(&field, &samples, &FrechetSettings::default(), &cache).unwrap();
        let b = frechet_mean(&field, &samples, &karcher, &cache).unwrap();
        let arith = samples.arithmetic_mean();
        assert!((a.mean.coords() - &arith).norm() < 1e-4);
        assert!((b.mean.coords() - &arith).norm() < 1e-4);
    }

    #[test]
    fn sphere_symmetric_pair_mean_is_the_midpoint() {
        let field = AnalyticMetric::Sphere.field();
        let cache = DistanceCache::new(&field, EikonalSettings::for_dim(2)).unwrap();
        let samples = SampleSet::from_rows(&[vec![PI / 2.0 - 0.3, 1.0], vec![PI / 2.0 + 0.3, 1.0]]).unwrap();
        let res = frechet_mean(&field, &samples, &FrechetSettings::default(), &cache).unwrap();
        assert!((res.mean.coords() - Vector::from_column_slice(&[PI / 2.0, 1.0])).norm() < 1e-3);
    }

    #[test]
    fn objective_never_increases() {
        let field = AnalyticMetric::Poincare { dim: 2 }.field();
        let cache = DistanceCache::new(&field, EikonalSettings::for_dim(2).with_resolution(65)).unwrap();
        let samples =
            SampleSet::from_rows(&[vec![0.6, 0.1], vec![-0.2, 0.5], vec![0.1, -0.6], vec![0.55, 0.5]]).unwrap();
        let res = frechet_mean(&field, &samples, &FrechetSettings::default(), &cache).unwrap();
        for w in res.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn permutation_invariant() {
        let (field, cache) = flat_cache(33);
        let rows = vec![vec![-1.0, 0.3], vec![0.5, 1.5], vec![1.2, -0.8]];
        let mut rev = rows.clone();
        rev.reverse();
        let s = FrechetSettings::default();
        let a = frechet_mean(&field, &SampleSet::from_rows(&rows).unwrap(), &s, &cache).unwrap();
        let b = frechet_mean(&field, &SampleSet::from_rows(&rev).unwrap(), &s, &cache).unwrap();
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn validation() {
        assert_eq!(
            SampleSet::from_rows(&[vec![0.0, 0.0]]).unwrap_err(),
            FrechetError::TooFewSamples(1)
        );
        let (field, cache) = flat_cache(17);
        let out = SampleSet::from_rows(&[vec![0.0, 0.0], vec![5.0, 0.0]]).unwrap();
        assert_eq!(
            frechet_mean(&field, &out, &FrechetSettings::default(), &cache).unwrap_err(),
            FrechetError::OutOfBounds { index: 1 }
        );
    }
}
