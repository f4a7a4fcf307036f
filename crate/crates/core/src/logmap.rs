//! Logarithmic maps `log_p(q)`.
//!
//! The pipeline is: gradient flows down two distance fields, their blend into
//! one path, multiple shooting seeded from that path, and a final single
//! shooting refinement of the initial velocity.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::eikonal::{DistanceField, EikonalError};
use crate::geodesic::{integrate, steps_for, Geodesic, GeodesicError, GeodesicNode, DEFAULT_STEP};
use crate::manifold::{GeometryError, LatentPoint, Matrix, MetricField, TangentVector, Vector};

pub const DEFAULT_INTERVALS: usize = 8;
pub const DEFAULT_UPDATE_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_GN_ITERS: usize = 50;
pub const REFINE_TOL: f64 = 1e-10;
pub const MAX_REFINE_ITERS: usize = 10;
pub const RANK_TOL: f64 = 1e-10;
pub const MAX_HALVINGS: usize = 8;
/// Consecutive residual increases treated as divergence.
pub const DIVERGENCE_STREAK: usize = 3;
/// Endpoints closer than this many grid spacings skip the distance-field stages.
pub const BYPASS_SPACINGS: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShootingError {
    #[error("endpoints coincide")]
    CoincidentEndpoints,
    #[error("{0} must be positive")]
    InvalidParameter(&'static str),
    #[error("gradient flow left the chart: {0}")]
    FlowLeftChart(EikonalError),
    #[error("gradient flow ends {distance:e} from its target (allowed {allowed:e})")]
    MissedTarget { distance: f64, allowed: f64 },
    #[error("paths do not share swapped endpoints (gap {gap:e})")]
    EndpointMismatch { gap: f64 },
    #[error("paths have {0} and {1} nodes")]
    NodeCountMismatch(usize, usize),
    #[error("initial path must have at least two nodes")]
    ShortPath,
    #[error("Gauss–Newton did not converge in {iterations} iterations (last update {last_update:e})")]
    MaxIterations { iterations: usize, last_update: f64 },
    #[error("singular Gauss–Newton system (|r_kk|/|r_00| = {ratio:e})")]
    Singular { ratio: f64 },
    #[error("residual grew for {0} consecutive iterations")]
    Diverged(usize),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Stage of [`log_map`] that failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    GradientFlow,
    Interpolation,
    MultipleShooting,
    SingleShooting,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::GradientFlow => "gradient flow",
            Stage::Interpolation => "interpolation",
            Stage::MultipleShooting => "multiple shooting",
            Stage::SingleShooting => "single shooting",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogMapError {
    #[error("distance field for the base point is required")]
    MissingDistanceField,
    #[error("distance field source does not match {0}")]
    WrongSource(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: ShootingError,
    },
}

fn tag(stage: Stage) -> impl Fn(ShootingError) -> LogMapError {
    move |source| LogMapError::Stage { stage, source }
}

/// Boundary value problem `γ(0) = p`, `γ(1) = q`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShootingProblem {
    pub p: LatentPoint,
    pub q: LatentPoint,
    pub n_intervals: usize,
    pub update_tol: f64,
    pub max_gn_iters: usize,
    pub step: f64,
}

impl ShootingProblem {
    pub fn new(p: LatentPoint, q: LatentPoint) -> Result<Self, ShootingError> {
        if p.dim() != q.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: p.dim(),
                found: q.dim(),
            }
            .into());
        }
        if (p.coords() - q.coords()).amax() <= 1e-12 {
            return Err(ShootingError::CoincidentEndpoints);
        }
        Ok(Self {
            p,
            q,
            n_intervals: DEFAULT_INTERVALS,
            update_tol: DEFAULT_UPDATE_TOL,
            max_gn_iters: DEFAULT_MAX_GN_ITERS,
            step: DEFAULT_STEP,
        })
    }

    pub fn with_intervals(mut self, n: usize) -> Self {
        self.n_intervals = n;
        self
    }

    pub fn with_update_tol(mut self, tol: f64) -> Self {
        self.update_tol = tol;
        self
    }

    pub fn with_max_gn_iters(mut self, n: usize) -> Self {
        self.max_gn_iters = n;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    fn validate(&self) -> Result<(), ShootingError> {
        if self.n_intervals == 0 {
            return Err(ShootingError::InvalidParameter("n_intervals"));
        }
        if !(self.update_tol > 0.0) {
            return Err(ShootingError::InvalidParameter("update_tol"));
        }
        if self.max_gn_iters == 0 {
            return Err(ShootingError::InvalidParameter("max_gn_iters"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(ShootingError::InvalidParameter("step"));
        }
        Ok(())
    }
}

/// Points sampled along a curve at increasing `λ ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPath {
    pub lambda: Vec<f64>,
    pub points: Vec<Vector>,
}

impl LatentPath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn start(&self) -> &Vector {
        &self.points[0]
    }

    pub fn end(&self) -> &Vector {
        &self.points[self.points.len() - 1]
    }

    /// Piecewise-linear position at `t`.
    pub fn at(&self, t: f64) -> Vector {
        let n = self.len();
        let i = self.lambda.partition_point(|&l| l <= t).clamp(1, n - 1);
        let (l0, l1) = (self.lambda[i - 1], self.lambda[i]);
        let w = if l1 > l0 { ((t - l0) / (l1 - l0)).clamp(0.0, 1.0) } else { 0.0 };
        &self.points[i - 1] * (1.0 - w) + &self.points[i] * w
    }

    /// `dx/dλ` at `t` by central differences of the polyline.
    pub fn velocity_at(&self, t: f64) -> Vector {
        let n = self.len();
        let i = self.lambda.partition_point(|&l| l < t - 1e-12).min(n - 1);
        let (a, b) = if i == 0 {
            (0, 1)
        } else if i >= n - 1 {
            (n - 2, n - 1)
        } else if (self.lambda[i] - t).abs() <= 1e-12 {
            (i - 1, i + 1)
        } else {
            (i - 1, i)
        };
        (&self.points[b] - &self.points[a]) / (self.lambda[b] - self.lambda[a])
    }

    /// Metric length of the polyline, midpoint rule per segment.
    pub fn length(&self, field: &MetricField) -> Result<f64, GeometryError> {
        let mut total = 0.0;
        for w in self.points.windows(2) {
            let mid = (&w[0] + &w[1]) * 0.5;
            let g = field.metric(mid.as_slice())?;
            let dx = &w[1] - &w[0];
            total += crate::manifold::quadratic_form(&g, &dx, &dx).max(0.0).sqrt();
        }
        Ok(total)
    }
}

/// Integrates `ẋ = −d_b(a) ∇d_b(x)` from `a` over `λ ∈ [0, 1]` with RK4.
///
/// `df_b` must be solved from `b`; the path ends near `b`.
pub fn gradient_flow_trajectory(
    df_b: &DistanceField,
    a: &LatentPoint,
    step: f64,
) -> Result<LatentPath, ShootingError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(ShootingError::InvalidParameter("step"));
    }
    let scale = df_b.eval(a.as_slice()).map_err(ShootingError::FlowLeftChart)?;
    let rhs = |x: &Vector| -> Result<Vector, ShootingError> {
        df_b
            .stencil_gradient(x.as_slice())
            .map(|g| g * -scale)
            .map_err(ShootingError::FlowLeftChart)
    };
    let steps = steps_for(1.0, step);
    let h = 1.0 / steps as f64;
    let mut x = a.coords().clone();
    let mut path = LatentPath {
        lambda: vec![0.0],
        points: vec![x.clone()],
    };
    for n in 0..steps {
        let k1 = rhs(&x)?;
        let k2 = rhs(&(&x + &k1 * (0.5 * h)))?;
        let k3 = rhs(&(&x + &k2 * (0.5 * h)))?;
        let k4 = rhs(&(&x + &k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        path.lambda.push(if n + 1 == steps { 1.0 } else { (n + 1) as f64 * h });
        path.points.push(x.clone());
    }
    let spacing = df_b.spacing().iter().cloned().fold(0.0, f64::max);
    let miss = (path.end() - df_b.source().coords()).norm();
    let allowed = 10.0 * spacing;
    if miss > allowed {
        return Err(ShootingError::MissedTarget {
            distance: miss,
            allowed,
        });
    }
    Ok(path)
}

/// `(1 − λ) γ_ab(λ) + λ γ_ba(1 − λ)`, exact at both ends.
pub fn interpolated_geodesic(
    path_ab: &LatentPath,
    path_ba: &LatentPath,
    tolerance: f64,
) -> Result<LatentPath, ShootingError> {
    let n = path_ab.len();
    if n != path_ba.len() {
        return Err(ShootingError::NodeCountMismatch(n, path_ba.len()));
    }
    if n < 2 {
        return Err(ShootingError::ShortPath);
    }
    let gap = (path_ab.end() - path_ba.start())
        .norm()
        .max((path_ba.end() - path_ab.start()).norm());
    if gap > tolerance {
        return Err(ShootingError::EndpointMismatch { gap });
    }
    let mut out = LatentPath {
        lambda: path_ab.lambda.clone(),
        points: Vec::with_capacity(n),
    };
    for i in 0..n {
        let l = path_ab.lambda[i];
        let point = if i == 0 {
            path_ab.points[0].clone()
        } else if i == n - 1 {
            path_ba.points[0].clone()
        } else {
            &path_ab.points[i] * (1.0 - l) + path_ba.at(1.0 - l) * l
        };
        out.points.push(point);
    }
    Ok(out)
}

/// Outcome of [`multiple_shooting`].
#[derive(Clone, Debug)]
pub struct MultipleShootingResult {
    pub geodesic: Geodesic,
    pub iterations: usize,
    /// Residual norm before each Gauss–Newton iteration and after the last.
    pub residual_history: Vec<f64>,
    pub last_update: f64,
    /// Largest position/velocity jump between consecutive sub-intervals.
    pub max_defect: f64,
}

struct Shooter<'a> {
    field: &'a MetricField,
    prob: &'a ShootingProblem,
    d: usize,
    steps: usize,
}

impl Shooter<'_> {
    fn span(&self, k: usize) -> (f64, f64) {
        let m = self.prob.n_intervals as f64;
        (k as f64 / m, (k + 1) as f64 / m)
    }

    fn flows(&self, unknowns: &Vector, sensitivity: bool) -> Result<Vec<crate::geodesic::Flow>, GeodesicError> {
        let d = self.d;
        (0..self.prob.n_intervals)
            .into_par_iter()
            .map(|k| {
                let x = unknowns.rows(2 * d * k, d).into_owned();
                let v = unknowns.rows(2 * d * k + d, d).into_owned();
                let (l0, l1) = self.span(k);
                integrate(self.field, &x, &v, l0, l1, self.steps, sensitivity)
            })
            .collect()
    }

    fn residual(&self, unknowns: &Vector, flows: &[crate::geodesic::Flow]) -> Vector {
        let d = self.d;
        let m = self.prob.n_intervals;
        let mut r = Vector::zeros(2 * d * m);
        for i in 0..d {
            r[i] = unknowns[i] - self.prob.p.coords()[i];
        }
        for k in 0..m - 1 {
            let end = flows[k].end();
            for i in 0..d {
                r[d + 2 * d * k + i] = end.position[i] - unknowns[2 * d * (k + 1) + i];
                r[d + 2 * d * k + d + i] = end.velocity[i] - unknowns[2 * d * (k + 1) + d + i];
            }
        }
        let end = flows[m - 1].end();
        for i in 0..d {
            r[d + 2 * d * (m - 1) + i] = end.position[i] - self.prob.q.coords()[i];
        }
        r
    }

    fn jacobian(&self, flows: &[crate::geodesic::Flow]) -> Matrix {
        let d = self.d;
        let m = self.prob.n_intervals;
        let n = 2 * d * m;
        let mut jac = DMatrix::zeros(n, n);
        for i in 0..d {
            jac[(i, i)] = 1.0;
        }
        for k in 0..m {
            let phi = flows[k].transition.as_ref().expect("sensitivity requested");
            let row = d + 2 * d * k;
            let rows = if k + 1 < m { 2 * d } else { d };
            jac.view_mut((row, 2 * d * k), (rows, 2 * d))
                .copy_from(&phi.view((0, 0), (rows, 2 * d)));
            if k + 1 < m {
                for i in 0..2 * d {
                    jac[(row + i, 2 * d * (k + 1) + i)] = -1.0;
                }
            }
        }
        jac
    }
}

/// Solves `J δ = −r` with column-pivoted QR, rejecting numerically rank
/// deficient systems.
fn rank_revealing_solve(jac: Matrix, r: &Vector) -> Result<Vector, ShootingError> {
    let qr = jac.col_piv_qr();
    let rr = qr.r();
    let diag: Vec<f64> = (0..rr.nrows().min(rr.ncols())).map(|i| rr[(i, i)].abs()).collect();
    let top = diag.first().cloned().unwrap_or(0.0);
    let low = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(top > 0.0) || low < RANK_TOL * top {
        return Err(ShootingError::Singular {
            ratio: if top > 0.0 { low / top } else { 0.0 },
        });
    }
    qr.solve(&(-r)).ok_or(ShootingError::Singular { ratio: 0.0 })
}

/// Direct multiple shooting seeded from `init_path`.
pub fn multiple_shooting(
    field: &MetricField,
    prob: &ShootingProblem,
    init_path: &LatentPath,
) -> Result<MultipleShootingResult, ShootingError> {
    prob.validate()?;
    if init_path.len() < 2 {
        return Err(ShootingError::ShortPath);
    }
    let d = prob.p.dim();
    let m = prob.n_intervals;
    let shooter = Shooter {
        field,
        prob,
        d,
        steps: steps_for(1.0 / m as f64, prob.step),
    };
    let mut unknowns = Vector::zeros(2 * d * m);
    for k in 0..m {
        let (l0, _) = shooter.span(k);
        let x = if k == 0 { prob.p.coords().clone() } else { init_path.at(l0) };
        unknowns.rows_mut(2 * d * k, d).copy_from(&x);
        unknowns
            .rows_mut(2 * d * k + d, d)
            .copy_from(&init_path.velocity_at(l0));
    }

    let mut flows = shooter.flows(&unknowns, true)?;
    let mut r = shooter.residual(&unknowns, &flows);
    let mut history = vec![r.norm()];
    let mut growth = 0;
    let mut last_update = f64::INFINITY;
    for iter in 1..=prob.max_gn_iters {
        let delta = rank_revealing_solve(shooter.jacobian(&flows), &r)?;
        last_update = delta.norm();
        let mut t = 1.0;
        let mut accepted = None;
        let mut fallback = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &unknowns + &delta * t;
            if let Ok(trial_flows) = shooter.flows(&trial, true) {
                let trial_r = shooter.residual(&trial, &trial_flows);
                let norm = trial_r.norm();
                if norm.is_finite() && norm <= r.norm() {
                    accepted = Some((trial, trial_flows, trial_r));
                    break;
                }
                if norm.is_finite() {
                    fallback = Some((trial, trial_flows, trial_r));
                }
            }
            t *= 0.5;
        }
        let grew = accepted.is_none();
        let (next, next_flows, next_r) = match accepted.or(fallback) {
            Some(state) => state,
            None => return Err(ShootingError::Diverged(growth + 1)),
        };
        unknowns = next;
        flows = next_flows;
        r = next_r;
        history.push(r.norm());
        growth = if grew { growth + 1 } else { 0 };
        if growth >= DIVERGENCE_STREAK {
            return Err(ShootingError::Diverged(growth));
        }
        if last_update < prob.update_tol {
            return Ok(stitch(&shooter, flows, &r, iter, history, last_update));
        }
    }
    Err(ShootingError::MaxIterations {
        iterations: prob.max_gn_iters,
        last_update,
    })
}

fn stitch(
    shooter: &Shooter,
    flows: Vec<crate::geodesic::Flow>,
    r: &Vector,
    iterations: usize,
    residual_history: Vec<f64>,
    last_update: f64,
) -> MultipleShootingResult {
    let d = shooter.d;
    let m = shooter.prob.n_intervals;
    let max_defect = if m > 1 {
        r.rows(d, 2 * d * (m - 1)).amax()
    } else {
        0.0
    };
    let mut nodes: Vec<GeodesicNode> = Vec::new();
    for (k, flow) in flows.into_iter().enumerate() {
        let skip = if k == 0 { 0 } else { 1 };
        nodes.extend(flow.nodes.into_iter().skip(skip));
    }
    MultipleShootingResult {
        geodesic: Geodesic::from_nodes(nodes),
        iterations,
        residual_history,
        last_update,
        max_defect,
    }
}

/// Outcome of [`single_shooting_refine`].
#[derive(Clone, Debug)]
pub struct RefineResult {
    pub velocity: TangentVector,
    pub iterations: usize,
    pub endpoint_error: f64,
    pub converged: bool,
}

/// Newton iteration on `exp_p(v) − q`.
pub fn single_shooting_refine(
    field: &MetricField,
    prob: &ShootingProblem,
    v0: &TangentVector,
) -> Result<RefineResult, ShootingError> {
    prob.validate()?;
    let steps = steps_for(1.0, prob.step);
    let p = prob.p.coords();
    let shoot = |v: &Vector, sens: bool| -> Result<(Vector, Option<Matrix>), ShootingError> {
        let flow = integrate(field, p, v, 0.0, 1.0, steps, sens)?;
        let d = p.len();
        let r = &flow.end().position - prob.q.coords();
        Ok((r, flow.transition.map(|t| t.view((0, d), (d, d)).into_owned())))
    };
    let mut v = v0.components().clone();
    let (mut r, mut jac) = shoot(&v, true)?;
    let mut err = r.norm();
    let mut iterations = 0;
    let mut growth = 0;
    while err >= REFINE_TOL && iterations < MAX_REFINE_ITERS {
        let delta = rank_revealing_solve(jac.take().expect("sensitivity"), &r)?;
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &v + &delta * t;
            if let Ok((tr, tj)) = shoot(&trial, true) {
                if tr.norm() < err || next.is_none() {
                    let better = tr.norm() < err;
                    next = Some((trial, tr, tj));
                    if better {
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let (nv, nr, nj) = next.ok_or(ShootingError::Diverged(growth + 1))?;
        iterations += 1;
        growth = if nr.norm() >= err { growth + 1 } else { 0 };
        if growth >= DIVERGENCE_STREAK {
            return Err(ShootingError::Diverged(growth));
        }
        v = nv;
        r = nr;
        jac = nj;
        err = r.norm();
    }
    Ok(RefineResult {
        velocity: TangentVector::new(prob.p.clone(), v)?,
        iterations,
        endpoint_error: err,
        converged: err < REFINE_TOL,
    })
}

/// Shooting parameters for [`log_map`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogMapSettings {
    pub n_intervals: usize,
    pub update_tol: f64,
    pub max_gn_iters: usize,
    pub step: f64,
}

impl Default for LogMapSettings {
    fn default() -> Self {
        Self {
            n_intervals: DEFAULT_INTERVALS,
            update_tol: DEFAULT_UPDATE_TOL,
            max_gn_iters: DEFAULT_MAX_GN_ITERS,
            step: DEFAULT_STEP,
        }
    }
}

/// `log_p(q)` with per-stage diagnostics.
#[derive(Clone, Debug)]
pub struct LogMapReport {
    pub velocity: TangentVector,
    /// The distance-field stages were skipped for a short pair.
    pub bypassed: bool,
    pub gn_iterations: usize,
    pub refine_iterations: usize,
    pub endpoint_error: f64,
    /// Length estimates: interpolated path, multiple shooting, refined geodesic.
    pub stage_lengths: Vec<f64>,
    pub max_defect: f64,
}

impl LogMapReport {
    pub fn distance(&self, field: &MetricField) -> Result<f64, GeometryError> {
        field.norm(&self.velocity)
    }
}

/// `log_p(q)`: initial velocity of the geodesic from `p` to `q` selected by
/// the distance fields of both endpoints.
pub fn log_map(
    field: &MetricField,
    p: &LatentPoint,
    q: &LatentPoint,
    df_q: &DistanceField,
    df_p: Option<&DistanceField>,
    settings: &LogMapSettings,
) -> Result<LogMapReport, LogMapError> {
    field.check_point(p)?;
    field.check_point(q)?;
    if (p.coords() - q.coords()).amax() <= 1e-12 {
        return Ok(LogMapReport {
            velocity: TangentVector::zero(p.clone()),
            bypassed: true,
            gn_iterations: 0,
            refine_iterations: 0,
            endpoint_error: 0.0,
            stage_lengths: vec![0.0; 3],
            max_defect: 0.0,
        });
    }
    let prob = ShootingProblem::new(p.clone(), q.clone())
        .map_err(tag(Stage::MultipleShooting))?
        .with_intervals(settings.n_intervals)
        .with_update_tol(settings.update_tol)
        .with_max_gn_iters(settings.max_gn_iters)
        .with_step(settings.step);
    let h = df_q.spacing();
    let grid_gap = (0..p.dim())
        .map(|a| ((p.coords()[a] - q.coords()[a]) / h[a]).powi(2))
        .sum::<f64>()
        .sqrt();
    if grid_gap < BYPASS_SPACINGS {
        let v0 = TangentVector::new(p.clone(), q.coords() - p.coords())?;
        let refined = single_shooting_refine(field, &prob, &v0).map_err(tag(Stage::SingleShooting))?;
        let length = field.norm(&refined.velocity)?;
        return Ok(LogMapReport {
            velocity: refined.velocity,
            bypassed: true,
            gn_iterations: 0,
            refine_iterations: refined.iterations,
            endpoint_error: refined.endpoint_error,
            stage_lengths: vec![length],
            max_defect: 0.0,
        });
    }

    let df_p = df_p.ok_or(LogMapError::MissingDistanceField)?;
    if df_q.source() != q {
        return Err(LogMapError::WrongSource("q"));
    }
    if df_p.source() != p {
        return Err(LogMapError::WrongSource("p"));
    }
    let flow = tag(Stage::GradientFlow);
    let path_pq = gradient_flow_trajectory(df_q, p, settings.step).map_err(&flow)?;
    let path_qp = gradient_flow_trajectory(df_p, q, settings.step).map_err(&flow)?;
    let spacing = h.iter().chain(df_p.spacing()).cloned().fold(0.0, f64::max);
    let blended =
        interpolated_geodesic(&path_pq, &path_qp, 10.0 * spacing).map_err(tag(Stage::Interpolation))?;
    let blended_length = blended.length(field)?;

    let shot = multiple_shooting(field, &prob, &blended).map_err(tag(Stage::MultipleShooting))?;
    let shot_length = shot.geodesic.length(field)?;
    let v0 = shot.geodesic.initial_velocity().clone();
    let refined = single_shooting_refine(field, &prob, &v0).map_err(tag(Stage::SingleShooting))?;
    let refined_length = field.norm(&refined.velocity)?;
    Ok(LogMapReport {
        velocity: refined.velocity,
        bypassed: false,
        gn_iterations: shot.iterations,
        refine_iterations: refined.iterations,
        endpoint_error: refined.endpoint_error,
        stage_lengths: vec![blended_length, shot_length, refined_length],
        max_defect: shot.max_defect,
    })
}
