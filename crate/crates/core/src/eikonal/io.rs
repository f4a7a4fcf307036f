//! PLDF distance-field files and CSV export.
//!
//! Little-endian layout:
//!
//! ```text
//! "PLDF"            4 bytes
//! version  u32      = 1
//! dim      u32
//! n        u32 × dim   nodes per axis
//! lo       f64 × dim
//! hi       f64 × dim
//! source   f64 × dim
//! sweeps   u32
//! values   f64 × ∏n, row-major, +∞ at unreachable nodes
//! ```

use std::io::{Read, Write};

use super::{residual_stats, DistanceField, EikonalError, Grid, SOURCE_BALL_RADIUS};
use crate::manifold::{ChartBounds, LatentPoint, MetricField};

pub const PLDF_MAGIC: [u8; 4] = *b"PLDF";
pub const PLDF_VERSION: u32 = 1;

fn format_err(msg: impl Into<String>) -> EikonalError {
    EikonalError::Format(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EikonalError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, EikonalError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, EikonalError> {
        let len = n.checked_mul(8).ok_or_else(|| format_err("grid too large"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl DistanceField {
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::with_capacity(64 + 8 * self.values.len());
        out.extend_from_slice(&PLDF_MAGIC);
        out.extend_from_slice(&PLDF_VERSION.to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for _ in 0..d {
            out.extend_from_slice(&(self.resolution() as u32).to_le_bytes());
        }
        for x in self
            .bounds()
            .lo()
            .iter()
            .chain(self.bounds().hi())
            .chain(self.source.as_slice())
        {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&(self.sweeps as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<(), EikonalError> {
        writer
            .write_all(&self.to_bytes())
            .map_err(|e| EikonalError::Io(e.to_string()))
    }

    /// Parses a PLDF stream. `field` supplies the metric used for gradients
    /// and for recomputing the residual statistics; its chart must match.
    pub fn from_bytes(bytes: &[u8], field: &MetricField) -> Result<Self, EikonalError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != PLDF_MAGIC {
            return Err(format_err("bad magic"));
        }
        let version = cur.u32()?;
        if version != PLDF_VERSION {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let d = cur.u32()? as usize;
        if d != field.dim() {
            return Err(format_err(format!(
                "dimension {d} does not match metric dimension {}",
                field.dim()
            )));
        }
        let ns = (0..d).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let n = ns[0] as usize;
        if ns.iter().any(|&m| m as usize != n) || n < 2 {
            return Err(format_err(format!("unsupported node counts {ns:?}")));
        }
        let lo = cur.f64s(d)?;
        let hi = cur.f64s(d)?;
        let source = cur.f64s(d)?;
        let sweeps = cur.u32()? as usize;
        let bounds = ChartBounds::new(lo, hi)?;
        if &bounds != field.bounds() {
            return Err(format_err("chart bounds differ from the metric's chart"));
        }
        let grid = Grid::new(bounds, n);
        let count = grid.len();
        let values = cur.f64s(count)?;
        if cur.pos != bytes.len() {
            return Err(format_err(format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(format_err("values must be non-negative or +inf"));
        }
        let source = LatentPoint::new(source)?;
        let h = grid.spacing().to_vec();
        let frozen: Vec<bool> = (0..count)
            .map(|k| {
                let x = grid.node_coords(k);
                let r2: f64 = (0..d)
                    .map(|a| ((x[a] - source.as_slice()[a]) / h[a]).powi(2))
                    .sum();
                r2 <= SOURCE_BALL_RADIUS * SOURCE_BALL_RADIUS + 1e-9
            })
            .collect();
        let inverse: Vec<Vec<f64>> = (0..count)
            .map(|k| {
                let x = grid.node_coords(k);
                if values[k].is_finite() {
                    if let Ok(m) = field.inverse_metric(&x) {
                        return m.transpose().as_slice().to_vec();
                    }
                }
                vec![f64::NAN; d * d]
            })
            .collect();
        let residual = residual_stats(&grid, &values, &frozen, |k| &inverse[k]);
        Ok(Self {
            source,
            grid,
            values,
            residual,
            sweeps,
            field: field.clone(),
        })
    }

    pub fn read_from<R: Read>(mut reader: R, field: &MetricField) -> Result<Self, EikonalError> {
        let mut bytes = Vec::new();
        reader
            .read_to_end(&mut bytes)
            .map_err(|e| EikonalError::Io(e.to_string()))?;
        Self::from_bytes(&bytes, field)
    }

    /// One row per node: `z1,…,zd,phi`. Unreachable nodes print `inf`.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<(), EikonalError> {
        let io = |e: std::io::Error| EikonalError::Io(e.to_string());
        let d = self.dim();
        let header: Vec<String> = (1..=d).map(|i| format!("z{i}")).chain(["phi".into()]).collect();
        writeln!(writer, "{}", header.join(",")).map_err(io)?;
        for k in 0..self.values.len() {
            let x = self.grid.node_coords(k);
            let row: Vec<String> = x
                .iter()
                .chain(std::iter::once(&self.values[k]))
                .map(|v| v.to_string())
                .collect();
            writeln!(writer, "{}", row.join(",")).map_err(io)?;
        }
        Ok(())
    }
}
