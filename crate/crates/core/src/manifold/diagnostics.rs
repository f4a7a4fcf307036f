use serde::Serialize;

use super::{GeometryError, MetricField};

pub const DEFAULT_HISTOGRAM_BINS: usize = 64;

/// Equal-width histogram over `[edges[0], edges[bins]]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize) -> Self {
        assert!(bins > 0, "histogram needs at least one bin");
        let (mut lo, mut hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if values.is_empty() {
            lo = 0.0;
            hi = 1.0;
        } else if hi <= lo {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Self { edges, counts }
    }
}

/// Magnification-factor survey of a chart.
#[derive(Clone, Debug, Serialize)]
pub struct MfDiagnostics {
    /// Nodes per axis.
    pub resolution: usize,
    /// Node coordinates, row-major (first axis slowest).
    pub nodes: Vec<Vec<f64>>,
    /// `log MF` per node; `None` where the metric is degenerate or undefined.
    pub log_mf: Vec<Option<f64>>,
    /// Indices of flagged nodes.
    pub flagged: Vec<usize>,
    /// Histogram of MF over the valid nodes.
    pub histogram: Histogram,
    /// `(Euclidean radius from the chart origin, MF)` per valid node.
    pub radius_mf: Vec<(f64, f64)>,
}

/// Evaluates `MF = √det g` on a regular `resolution^d` lattice over the chart.
///
/// Degenerate nodes are flagged rather than aborting the survey.
pub fn mf_diagnostics(
    field: &MetricField,
    resolution: usize,
    bins: usize,
) -> Result<MfDiagnostics, GeometryError> {
    if resolution < 2 {
        return Err(GeometryError::InvalidBounds(format!(
            "diagnostic resolution must be at least 2, got {resolution}"
        )));
    }
    let d = field.dim();
    let bounds = field.bounds();
    let total = resolution.pow(d as u32);
    let mut nodes = Vec::with_capacity(total);
    let mut log_mf = Vec::with_capacity(total);
    let mut flagged = Vec::new();
    let mut mf_values = Vec::new();
    let mut radius_mf = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let mut x = vec![0.0; d];
        for axis in (0..d).rev() {
            let i = rem % resolution;
            rem /= resolution;
            let t = i as f64 / (resolution - 1) as f64;
            x[axis] = if i == resolution - 1 {
                bounds.hi()[axis]
            } else {
                bounds.lo()[axis] + t * bounds.extent(axis)
            };
        }
        match field.magnification(&x) {
            Ok(mf) => {
                log_mf.push(Some(mf.ln()));
                mf_values.push(mf);
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                radius_mf.push((r, mf));
            }
            Err(_) => {
                log_mf.push(None);
                flagged.push(flat);
            }
        }
        nodes.push(x);
    }
    Ok(MfDiagnostics {
        resolution,
        nodes,
        log_mf,
        flagged,
        histogram: Histogram::new(&mf_values, bins),
        radius_mf,
    })
}
