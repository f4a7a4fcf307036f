//! Geodesic distance fields from the Riemannian Eikonal equation
//! `⟨∇φ, ∇φ⟩_g = 1`, `φ(source) = 0`, solved by fast sweeping on a regular grid.

mod io;
mod schemes;

use rayon::prelude::*;
use thiserror::Error;

use crate::manifold::{ChartBounds, GeometryError, LatentPoint, MetricField, TangentVector, Vector};
use schemes::{Local, Neighbor};

pub use io::{PLDF_MAGIC, PLDF_VERSION};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 500;
pub const MIN_RESOLUTION: usize = 16;
/// Radius of the exactly initialised source ball, in grid spacings.
pub const SOURCE_BALL_RADIUS: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EikonalError {
    #[error("resolution {0} is below the minimum of 16 nodes per axis")]
    InvalidResolution(usize),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("max_sweeps must be at least 1")]
    InvalidMaxSweeps,
    #[error("source {point:?} lies outside the chart")]
    SourceOutOfBounds { point: Vec<f64> },
    #[error("degenerate metric at grid node {node:?}: {source}")]
    DegenerateMetric {
        node: Vec<f64>,
        #[source]
        source: GeometryError,
    },
    #[error("fast sweeping did not converge after {sweeps} sweeps (last update {last_update:e})")]
    NotConverged { sweeps: usize, last_update: f64 },
    #[error("point {point:?} lies outside the grid")]
    OutOfBounds { point: Vec<f64> },
    #[error("point {point:?} touches unreachable grid nodes")]
    Unreachable { point: Vec<f64> },
    #[error("point {point:?} is within one node of the grid boundary")]
    MarginViolation { point: Vec<f64> },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("malformed distance field: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Local update rule used by the sweeps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EikonalScheme {
    /// Monotone upwind update: minimum over neighbour simplices of
    /// `φ(y) + |x − y|_g`, with `φ − φ₀` linear on the simplex and `φ₀` the
    /// distance under the metric frozen at the source.
    #[default]
    HopfLax,
    /// Lax–Friedrichs numerical Hamiltonian with global per-axis viscosities.
    LaxFriedrichs,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EikonalSettings {
    pub resolution: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    pub scheme: EikonalScheme,
}

impl EikonalSettings {
    /// 257 nodes per axis in two dimensions, 65 in three.
    pub fn for_dim(dim: usize) -> Self {
        Self {
            resolution: if dim >= 3 { 65 } else { 257 },
            tol: DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            scheme: EikonalScheme::default(),
        }
    }

    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn with_scheme(mut self, scheme: EikonalScheme) -> Self {
        self.scheme = scheme;
        self
    }

    fn validate(&self) -> Result<(), EikonalError> {
        if self.resolution < MIN_RESOLUTION {
            return Err(EikonalError::InvalidResolution(self.resolution));
        }
        if !(self.tol > 0.0) {
            return Err(EikonalError::InvalidTolerance(self.tol));
        }
        if self.max_sweeps == 0 {
            return Err(EikonalError::InvalidMaxSweeps);
        }
        Ok(())
    }
}

/// Regular lattice over a chart box, row-major with the first axis slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    bounds: ChartBounds,
    n: usize,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(bounds: ChartBounds, n: usize) -> Self {
        let d = bounds.dim();
        let spacing = (0..d).map(|a| bounds.extent(a) / (n - 1) as f64).collect();
        let mut strides = vec![1; d];
        for a in (0..d.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * n;
        }
        Self {
            bounds,
            n,
            spacing,
            strides,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn bounds(&self) -> &ChartBounds {
        &self.bounds
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn multi_index(&self, mut linear: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for a in (0..self.dim()).rev() {
            idx[a] = linear % self.n;
            linear /= self.n;
        }
        idx
    }

    pub fn linear(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coords(&self, idx: &[usize]) -> Vec<f64> {
        (0..self.dim())
            .map(|a| {
                if idx[a] == self.n - 1 {
                    self.bounds.hi()[a]
                } else {
                    self.bounds.lo()[a] + idx[a] as f64 * self.spacing[a]
                }
            })
            .collect()
    }

    fn node_coords(&self, linear: usize) -> Vec<f64> {
        self.coords(&self.multi_index(linear)[..self.dim()])
    }
}

/// Metric data on a grid, shared between solves from different sources.
#[derive(Clone, Debug)]
pub struct EikonalSolver {
    field: MetricField,
    settings: EikonalSettings,
    grid: Grid,
    /// `g` per node, `d × d` row-major; empty entries for unreachable nodes.
    metric: Vec<f64>,
    inverse: Vec<f64>,
    reachable: Vec<bool>,
    sigma: Vec<f64>,
}

impl EikonalSolver {
    /// Evaluates the metric at every node. Nodes outside the evaluator's
    /// domain are unreachable; any other metric failure is an error.
    pub fn new(field: &MetricField, settings: EikonalSettings) -> Result<Self, EikonalError> {
        settings.validate()?;
        let grid = Grid::new(field.bounds().clone(), settings.resolution);
        let d = grid.dim();
        let dd = d * d;
        let nodes: Vec<Option<(Vec<f64>, Vec<f64>)>> = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let x = grid.node_coords(k);
                if !field.contains(&x) {
                    return Ok(None);
                }
                let degenerate = |source| EikonalError::DegenerateMetric {
                    node: x.clone(),
                    source,
                };
                let g = field.metric(&x).map_err(degenerate)?;
                let ginv = field.inverse_metric(&x).map_err(degenerate)?;
                Ok(Some((
                    g.transpose().as_slice().to_vec(),
                    ginv.transpose().as_slice().to_vec(),
                )))
            })
            .collect::<Result<_, EikonalError>>()?;
        let mut metric = vec![f64::NAN; grid.len() * dd];
        let mut inverse = vec![f64::NAN; grid.len() * dd];
        let mut reachable = vec![false; grid.len()];
        let mut sigma = vec![0.0; d];
        for (k, node) in nodes.into_iter().enumerate() {
            if let Some((g, ginv)) = node {
                metric[k * dd..(k + 1) * dd].copy_from_slice(&g);
                inverse[k * dd..(k + 1) * dd].copy_from_slice(&ginv);
                reachable[k] = true;
                for a in 0..d {
                    sigma[a] = f64::max(sigma[a], ginv[a * d + a].sqrt());
                }
            }
        }
        Ok(Self {
            field: field.clone(),
            settings,
            grid,
            metric,
            inverse,
            reachable,
            sigma,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn settings(&self) -> &EikonalSettings {
        &self.settings
    }

    pub fn field(&self) -> &MetricField {
        &self.field
    }

    pub fn is_reachable(&self, linear: usize) -> bool {
        self.reachable[linear]
    }

    pub fn solve(&self, source: &LatentPoint) -> Result<DistanceField, EikonalError> {
        self.solve_observed(source, |_, _| {})
    }

    /// Like [`solve`](Self::solve), calling `observe(sweep, values)` after
    /// initialisation (sweep 0) and after every full sweep.
    pub(crate) fn solve_observed(
        &self,
        source: &LatentPoint,
        mut observe: impl FnMut(usize, &[f64]),
    ) -> Result<DistanceField, EikonalError> {
        let s = source.as_slice();
        self.field.check_coords(s).map_err(|e| match e {
            GeometryError::OutOfBounds { point } => EikonalError::SourceOutOfBounds { point },
            other => EikonalError::Geometry(other),
        })?;
        let g0 = self.field.metric(s)?;
        let d = self.grid.dim();
        let src = Source {
            coords: s.to_vec(),
            metric: g0.transpose().as_slice().to_vec(),
        };
        let h = self.grid.spacing().to_vec();

        let mut values = vec![f64::INFINITY; self.grid.len()];
        let mut frozen = vec![false; self.grid.len()];
        let mut seeded = 0;
        for k in 0..self.grid.len() {
            if !self.reachable[k] {
                continue;
            }
            let x = self.grid.node_coords(k);
            let r2: f64 = (0..d).map(|a| ((x[a] - s[a]) / h[a]).powi(2)).sum();
            if r2 <= SOURCE_BALL_RADIUS * SOURCE_BALL_RADIUS + 1e-9 {
                let dx = Vector::from_iterator(d, (0..d).map(|a| x[a] - s[a]));
                values[k] = (dx.transpose() * &g0 * &dx)[(0, 0)].max(0.0).sqrt();
                frozen[k] = true;
                seeded += 1;
            }
        }
        if seeded == 0 {
            return Err(EikonalError::SourceOutOfBounds { point: s.to_vec() });
        }
        if self.settings.scheme == EikonalScheme::LaxFriedrichs {
            let large = self.large_value();
            for k in 0..values.len() {
                if self.reachable[k] && !frozen[k] {
                    values[k] = large;
                }
            }
        }
        observe(0, &values);

        // a node is recomputed only after one of its neighbours changed
        let mut unlocked = vec![false; values.len()];
        for k in 0..values.len() {
            if frozen[k] {
                self.unlock_neighbors(k, &mut unlocked, &frozen);
            }
        }
        let mut sweeps = 0;
        loop {
            let mut change = 0.0f64;
            for order in 0..(1usize << d) {
                change = change.max(self.sweep(&mut values, &frozen, &mut unlocked, order, &src));
            }
            sweeps += 1;
            observe(sweeps, &values);
            if change < self.settings.tol {
                break;
            }
            if sweeps >= self.settings.max_sweeps {
                return Err(EikonalError::NotConverged {
                    sweeps,
                    last_update: change,
                });
            }
        }
        if self.settings.scheme == EikonalScheme::LaxFriedrichs {
            let large = self.large_value();
            for v in values.iter_mut() {
                if *v >= large {
                    *v = f64::INFINITY;
                }
            }
        }

        let residual = residual_stats(&self.grid, &values, &frozen, |k| {
            &self.inverse[k * d * d..(k + 1) * d * d]
        });
        Ok(DistanceField {
            source: source.clone(),
            grid: self.grid.clone(),
            values,
            residual,
            sweeps,
            field: self.field.clone(),
        })
    }

    /// An upper bound on every reachable distance for Lax–Friedrichs
    /// initialisation.
    fn large_value(&self) -> f64 {
        let d = self.grid.dim();
        let mut speed = 0.0f64;
        for k in 0..self.grid.len() {
            if self.reachable[k] {
                let g = &self.metric[k * d * d..(k + 1) * d * d];
                let tr: f64 = (0..d).map(|a| g[a * d + a]).sum();
                speed = speed.max(tr.sqrt());
            }
        }
        let diam: f64 = (0..d)
            .map(|a| self.grid.bounds().extent(a).powi(2))
            .sum::<f64>()
            .sqrt();
        1e3 * (1.0 + speed * diam * self.grid.len() as f64)
    }

    /// One Gauss–Seidel pass in the axis ordering encoded by the bits of
    /// `order` (bit `a` set: axis `a` runs backwards). Returns the largest
    /// decrease of any node.
    fn sweep(
        &self,
        values: &mut [f64],
        frozen: &[bool],
        unlocked: &mut [bool],
        order: usize,
        src: &Source,
    ) -> f64 {
        let d = self.grid.dim();
        let n = self.grid.resolution();
        let mut change = 0.0f64;
        let mut counter = [0usize; 3];
        let total = self.grid.len();
        for _ in 0..total {
            let mut idx = [0usize; 3];
            for a in 0..d {
                idx[a] = if order >> a & 1 == 1 {
                    n - 1 - counter[a]
                } else {
                    counter[a]
                };
            }
            let k = self.grid.linear(&idx[..d]);
            // Lax–Friedrichs also reads second neighbours at the boundary,
            // so it recomputes every node
            let lf = self.settings.scheme == EikonalScheme::LaxFriedrichs;
            if unlocked[k] || (lf && self.reachable[k] && !frozen[k]) {
                unlocked[k] = false;
                let candidate = match self.settings.scheme {
                    EikonalScheme::HopfLax => self.hopf_lax_update(values, &idx, k, src),
                    EikonalScheme::LaxFriedrichs => self.lax_friedrichs_update(values, &idx, k),
                };
                if candidate < values[k] {
                    let old = values[k];
                    values[k] = candidate;
                    let drop = if old.is_finite() {
                        old - candidate
                    } else {
                        f64::INFINITY
                    };
                    change = change.max(drop);
                    if drop >= self.settings.tol {
                        self.unlock_neighbors(k, unlocked, frozen);
                    }
                }
            }
            for a in (0..d).rev() {
                counter[a] += 1;
                if counter[a] < n {
                    break;
                }
                counter[a] = 0;
            }
        }
        change
    }

    fn unlock_neighbors(&self, k: usize, unlocked: &mut [bool], frozen: &[bool]) {
        let idx = self.grid.multi_index(k);
        for a in 0..self.grid.dim() {
            let stride = self.grid.strides[a];
            if idx[a] > 0 && self.reachable[k - stride] && !frozen[k - stride] {
                unlocked[k - stride] = true;
            }
            if idx[a] + 1 < self.grid.resolution() && self.reachable[k + stride] && !frozen[k + stride] {
                unlocked[k + stride] = true;
            }
        }
    }

    fn neighbor(&self, values: &[f64], idx: &[usize; 3], axis: usize, upper: bool) -> Option<(usize, f64)> {
        let n = self.grid.resolution();
        let i = idx[axis];
        let j = if upper {
            (i + 1 < n).then_some(i + 1)?
        } else {
            i.checked_sub(1)?
        };
        let mut other = *idx;
        other[axis] = j;
        let k = self.grid.linear(&other[..self.grid.dim()]);
        self.reachable[k].then_some((k, values[k]))
    }

    fn hopf_lax_update(&self, values: &[f64], idx: &[usize; 3], k: usize, src: &Source) -> f64 {
        let d = self.grid.dim();
        let dd = d * d;
        let h = self.grid.spacing();
        let mut nbrs = [None; 6];
        for a in 0..d {
            for (side, upper) in [(0, false), (1, true)] {
                if let Some((j, v)) = self.neighbor(values, idx, a, upper) {
                    if v.is_finite() {
                        nbrs[2 * a + side] = Some(Neighbor {
                            axis: a,
                            offset: if upper { h[a] } else { -h[a] },
                            value: v,
                            metric: &self.metric[j * dd..(j + 1) * dd],
                        });
                    }
                }
            }
        }
        let mut rel = [0.0; 3];
        for a in 0..d {
            rel[a] = self.grid.bounds().lo()[a] + idx[a] as f64 * h[a] - src.coords[a];
        }
        let local = Local {
            dim: d,
            metric: &self.metric[k * dd..(k + 1) * dd],
            source_metric: &src.metric,
            rel,
        };
        schemes::hopf_lax(&local, &nbrs, values[k])
    }

    fn lax_friedrichs_update(&self, values: &[f64], idx: &[usize; 3], k: usize) -> f64 {
        let d = self.grid.dim();
        let mut pairs = [(0.0, 0.0); 3];
        for a in 0..d {
            let lo = self.neighbor(values, idx, a, false);
            let hi = self.neighbor(values, idx, a, true);
            pairs[a] = match (lo, hi) {
                (Some((_, l)), Some((_, u))) => (l, u),
                // boundary: linear extrapolation from the inward side,
                // never below the nearer neighbour
                (None, Some((_, u))) => {
                    let far = self.neighbor_at(values, idx, a, 2).unwrap_or(u);
                    let ghost = (2.0 * u - far).max(u);
                    (ghost, u)
                }
                (Some((_, l)), None) => {
                    let far = self.neighbor_at(values, idx, a, -2).unwrap_or(l);
                    let ghost = (2.0 * l - far).max(l);
                    (l, ghost)
                }
                (None, None) => (values[k], values[k]),
            };
        }
        schemes::lax_friedrichs(
            &self.inverse[k * d * d..(k + 1) * d * d],
            d,
            self.grid.spacing(),
            &self.sigma,
            &pairs,
        )
    }

    fn neighbor_at(&self, values: &[f64], idx: &[usize; 3], axis: usize, offset: isize) -> Option<f64> {
        let j = idx[axis] as isize + offset;
        if j < 0 || j >= self.grid.resolution() as isize {
            return None;
        }
        let mut other = *idx;
        other[axis] = j as usize;
        let k = self.grid.linear(&other[..self.grid.dim()]);
        self.reachable[k].then_some(values[k])
    }
}

struct Source {
    coords: Vec<f64>,
    metric: Vec<f64>,
}

/// Solves `⟨∇φ, ∇φ⟩_g = 1` from `source` over the chart of `field`.
pub fn solve_distance_field(
    field: &MetricField,
    source: &LatentPoint,
    settings: EikonalSettings,
) -> Result<DistanceField, EikonalError> {
    EikonalSolver::new(field, settings)?.solve(source)
}

/// `|⟨∇φ, ∇φ⟩_g − 1|` over interior nodes, with central differences.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResidualStats {
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

fn residual_stats<'a>(
    grid: &Grid,
    values: &[f64],
    frozen: &[bool],
    inverse: impl Fn(usize) -> &'a [f64],
) -> ResidualStats {
    let d = grid.dim();
    let n = grid.resolution();
    let h = grid.spacing();
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut count = 0;
    'nodes: for k in 0..grid.len() {
        if frozen[k] || !values[k].is_finite() {
            continue;
        }
        let idx = grid.multi_index(k);
        let mut p = [0.0; 3];
        for a in 0..d {
            if idx[a] == 0 || idx[a] == n - 1 {
                continue 'nodes;
            }
            let up = values[k + grid.strides[a]];
            let down = values[k - grid.strides[a]];
            if !up.is_finite() || !down.is_finite() {
                continue 'nodes;
            }
            p[a] = (up - down) / (2.0 * h[a]);
        }
        let ginv = inverse(k);
        let mut norm2 = 0.0;
        for i in 0..d {
            for j in 0..d {
                norm2 += ginv[i * d + j] * p[i] * p[j];
            }
        }
        let r = (norm2 - 1.0).abs();
        sum += r;
        max = max.max(r);
        count += 1;
    }
    ResidualStats {
        mean: if count > 0 { sum / count as f64 } else { 0.0 },
        max,
        count,
    }
}

/// Geodesic distance from a fixed source, sampled on a regular grid.
#[derive(Clone, Debug)]
pub struct DistanceField {
    source: LatentPoint,
    grid: Grid,
    values: Vec<f64>,
    residual: ResidualStats,
    sweeps: usize,
    field: MetricField,
}

impl DistanceField {
    pub fn source(&self) -> &LatentPoint {
        &self.source
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn bounds(&self) -> &ChartBounds {
        self.grid.bounds()
    }

    pub fn resolution(&self) -> usize {
        self.grid.resolution()
    }

    pub fn spacing(&self) -> &[f64] {
        self.grid.spacing()
    }

    /// Row-major nodal values; unreachable nodes hold `+∞`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn residual(&self) -> ResidualStats {
        self.residual
    }

    /// Full sweeps (each over all `2^d` orderings) until convergence.
    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn field(&self) -> &MetricField {
        &self.field
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn value_at_node(&self, idx: &[usize]) -> f64 {
        self.values[self.grid.linear(idx)]
    }

    /// Multilinear interpolation of `φ` at `q`; exact at nodes.
    pub fn eval(&self, q: &[f64]) -> Result<f64, EikonalError> {
        let d = self.dim();
        if q.len() != d {
            return Err(GeometryError::DimensionMismatch {
                expected: d,
                found: q.len(),
            }
            .into());
        }
        if q.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite.into());
        }
        if !self.bounds().contains(q) {
            return Err(EikonalError::OutOfBounds { point: q.to_vec() });
        }
        let n = self.resolution();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..d {
            let t = (q[a] - self.bounds().lo()[a]) / self.spacing()[a];
            let i = (t.floor().max(0.0) as usize).min(n - 2);
            base[a] = i;
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
            if frac[a] < 1e-12 {
                frac[a] = 0.0;
            } else if frac[a] > 1.0 - 1e-12 {
                frac[a] = 1.0;
            }
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    idx[a] += 1;
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w == 0.0 {
                continue;
            }
            let v = self.values[self.grid.linear(&idx[..d])];
            if !v.is_finite() {
                return Err(EikonalError::Unreachable { point: q.to_vec() });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Coordinate differential `∂_i φ` by central differences of the
    /// interpolant with one grid spacing.
    pub fn differential(&self, q: &[f64]) -> Result<Vector, EikonalError> {
        let d = self.dim();
        let h = self.spacing();
        let (lo, hi) = (self.bounds().lo(), self.bounds().hi());
        if q.len() == d && (0..d).any(|a| q[a] < lo[a] + h[a] || q[a] > hi[a] - h[a]) {
            return Err(if self.bounds().contains(q) {
                EikonalError::MarginViolation { point: q.to_vec() }
            } else {
                EikonalError::OutOfBounds { point: q.to_vec() }
            });
        }
        self.stencil_differential(q)
    }

    /// Central differences where both stencil points lie in the chart,
    /// one-sided differences within a node of the boundary.
    pub(crate) fn stencil_differential(&self, q: &[f64]) -> Result<Vector, EikonalError> {
        let d = self.dim();
        let h = self.spacing();
        let (lo, hi) = (self.bounds().lo(), self.bounds().hi());
        if q.len() != d || !self.bounds().contains(q) {
            return Err(EikonalError::OutOfBounds { point: q.to_vec() });
        }
        let mut grad = Vector::zeros(d);
        let mut x = q.to_vec();
        for a in 0..d {
            let up_x = (q[a] + h[a]).min(hi[a]);
            let down_x = (q[a] - h[a]).max(lo[a]);
            x[a] = up_x;
            let up = self.eval(&x)?;
            x[a] = down_x;
            let down = self.eval(&x)?;
            x[a] = q[a];
            grad[a] = (up - down) / (up_x - down_x);
        }
        Ok(grad)
    }

    /// `G ∂φ` with the boundary-tolerant stencil.
    pub(crate) fn stencil_gradient(&self, q: &[f64]) -> Result<Vector, EikonalError> {
        let dphi = self.stencil_differential(q)?;
        Ok(self.field.inverse_metric(q)? * dphi)
    }

    /// `∇φ = G ∂φ` at `q`.
    pub fn gradient(&self, q: &[f64]) -> Result<TangentVector, EikonalError> {
        let dphi = self.differential(q)?;
        let ginv = self.field.inverse_metric(q)?;
        let base = LatentPoint::new(q.to_vec())?;
        Ok(TangentVector::new(base, ginv * dphi)?)
    }
}

/// `d(source, q)` by interpolation.
pub fn eval_distance(df: &DistanceField, q: &LatentPoint) -> Result<f64, EikonalError> {
    df.eval(q.as_slice())
}

/// Riemannian gradient of the distance field at `q`.
pub fn riemannian_gradient(df: &DistanceField, q: &LatentPoint) -> Result<TangentVector, EikonalError> {
    df.gradient(q.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::AnalyticMetric;

    fn flat(n: usize) -> EikonalSolver {
        let field = AnalyticMetric::Flat { dim: 2 }.field();
        EikonalSolver::new(&field, EikonalSettings::for_dim(2).with_resolution(n)).unwrap()
    }

    fn origin() -> LatentPoint {
        LatentPoint::new(vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn grid_indexing_round_trips() {
        let g = Grid::new(ChartBounds::cube(3, -1.0, 1.0).unwrap(), 5);
        for k in [0, 7, 31, 124] {
            let idx = g.multi_index(k);
            assert_eq!(g.linear(&idx[..3]), k);
        }
        assert_eq!(g.coords(&[4, 0, 2]), vec![1.0, -1.0, 0.0]);
    }

    #[test]
    fn flat_distance_from_origin() {
        let df = flat(129).solve(&origin()).unwrap();
        let h = df.spacing()[0];
        assert_eq!(df.eval(&[0.0, 0.0]).unwrap(), 0.0);
        let mut worst = 0.0f64;
        for k in 0..df.grid().len() {
            let x = df.grid().node_coords(k);
            worst = worst.max((df.values()[k] - x[0].hypot(x[1])).abs());
        }
        assert!(worst < 2.0 * h, "max error {worst}");
        assert!(df.residual().mean < 1e-2, "{:?}", df.residual());
        assert!((df.eval(&[0.5, 0.0]).unwrap() - 0.5).abs() < h);
    }

    #[test]
    fn flat_field_is_point_symmetric() {
        let df = flat(65).solve(&origin()).unwrap();
        for q in [[0.3, 1.7], [-2.2, 0.4], [1.05, -0.77]] {
            let a = df.eval(&q).unwrap();
            let b = df.eval(&[-q[0], -q[1]]).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn flat_gradient_is_radial() {
        let df = flat(129).solve(&origin()).unwrap();
        let g = df.gradient(&[1.0, 0.0]).unwrap();
        assert!((g.components()[0] - 1.0).abs() < 5e-2);
        assert!(g.components()[1].abs() < 5e-2);
        assert!(matches!(
            df.gradient(&[3.0 - 0.5 * df.spacing()[0], 0.0]),
            Err(EikonalError::MarginViolation { .. })
        ));
    }

    #[test]
    fn sweeps_never_increase_values() {
        let solver = flat(33);
        let mut prev: Option<Vec<f64>> = None;
        solver
            .solve_observed(&LatentPoint::new(vec![0.4, -1.1]).unwrap(), |_, v| {
                if let Some(p) = &prev {
                    assert!(v.iter().zip(p).all(|(a, b)| a <= b));
                }
                prev = Some(v.to_vec());
            })
            .unwrap();
    }

    #[test]
    fn lax_friedrichs_converges_and_is_monotone() {
        let field = AnalyticMetric::Flat { dim: 2 }.field();
        let settings = EikonalSettings::for_dim(2)
            .with_resolution(65)
            .with_scheme(EikonalScheme::LaxFriedrichs);
        let solver = EikonalSolver::new(&field, settings).unwrap();
        let mut prev: Option<Vec<f64>> = None;
        let df = solver
            .solve_observed(&origin(), |sweep, v| {
                if let (Some(p), true) = (&prev, sweep > 0) {
                    assert!(v.iter().zip(p).all(|(a, b)| a <= b));
                }
                prev = Some(v.to_vec());
            })
            .unwrap();
        let h = df.spacing()[0];
        assert!((df.eval(&[1.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 4.0 * h);
    }

    #[test]
    fn poincare_outside_disk_is_unreachable() {
        let field = AnalyticMetric::Poincare { dim: 2 }.field();
        let df = solve_distance_field(&field, &origin(), EikonalSettings::for_dim(2).with_resolution(65)).unwrap();
        assert!(df.value_at_node(&[0, 0]).is_infinite());
        assert!(matches!(df.eval(&[-0.899, -0.899]), Err(EikonalError::Unreachable { .. })));
        let z: f64 = 0.5;
        let exact = (1.0 + 2.0 * z * z / (1.0 - z * z)).acosh();
        assert!((df.eval(&[z, 0.0]).unwrap() - exact).abs() < 5e-2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let field = AnalyticMetric::Flat { dim: 2 }.field();
        assert_eq!(
            EikonalSolver::new(&field, EikonalSettings::for_dim(2).with_resolution(8)).unwrap_err(),
            EikonalError::InvalidResolution(8)
        );
        let solver = flat(17);
        assert!(matches!(
            solver.solve(&LatentPoint::new(vec![4.0, 0.0]).unwrap()),
            Err(EikonalError::SourceOutOfBounds { .. })
        ));
        let df = solver.solve(&origin()).unwrap();
        assert!(matches!(df.eval(&[3.5, 0.0]), Err(EikonalError::OutOfBounds { .. })));
        let mut tight = EikonalSettings::for_dim(2).with_resolution(17);
        tight.max_sweeps = 1;
        let err = EikonalSolver::new(&field, tight)
            .unwrap()
            .solve(&LatentPoint::new(vec![0.3, 0.2]).unwrap())
            .unwrap_err();
        assert!(matches!(err, EikonalError::NotConverged { sweeps: 1, .. }));
    }

    #[test]
    fn three_dimensional_flat() {
        let field = AnalyticMetric::Flat { dim: 3 }.field();
        let df = solve_distance_field(
            &field,
            &LatentPoint::new(vec![0.0, 0.0, 0.0]).unwrap(),
            EikonalSettings::for_dim(3).with_resolution(33),
        )
        .unwrap();
        let h = df.spacing()[0];
        let v = df.eval(&[1.0, -1.0, 1.0]).unwrap();
        assert!((v - 3f64.sqrt()).abs() < 2.0 * h, "{v}");
    }
}
