//! Files written by a pipeline run.
//!
//! Snapshot matrices (`decoded_mode_k.bin`) are little-endian:
//!
//! ```text
//! "PLDM"          4 bytes
//! version  u32    = 1
//! rows     u32    trajectory nodes
//! cols     u32    snapshot length
//! data     f64 × rows·cols, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::{PipelineError, PldRun};
use crate::manifold::Vector;

pub const PLDM_MAGIC: [u8; 4] = *b"PLDM";
pub const PLDM_VERSION: u32 = 1;

fn io(e: std::io::Error) -> PipelineError {
    PipelineError::Io(e.to_string())
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn header(prefix: &str, d: usize) -> String {
    (1..=d).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

pub fn write_snapshot_matrix<W: Write>(mut w: W, rows: &[Vector]) -> Result<(), PipelineError> {
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PipelineError::InvalidParameter("ragged snapshot rows".into()));
    }
    let mut out = Vec::with_capacity(16 + 8 * rows.len() * cols);
    out.extend_from_slice(&PLDM_MAGIC);
    out.extend_from_slice(&PLDM_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for r in rows {
        for v in r.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&out).map_err(io)
}

pub fn read_snapshot_matrix(bytes: &[u8]) -> Result<Vec<Vector>, PipelineError> {
    let bad = |m: &str| PipelineError::Io(format!("PLDM: {m}"));
    if bytes.len() < 16 || bytes[..4] != PLDM_MAGIC {
        return Err(bad("bad header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    if word(4) as u32 != PLDM_VERSION {
        return Err(bad("unsupported version"));
    }
    let (rows, cols) = (word(8), word(12));
    if bytes.len() != 16 + 8 * rows * cols {
        return Err(bad("length does not match dimensions"));
    }
    Ok((0..rows)
        .map(|r| {
            Vector::from_iterator(
                cols,
                (0..cols).map(|c| {
                    let i = 16 + 8 * (r * cols + c);
                    f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap())
                }),
            )
        })
        .collect())
}

impl PldRun {
    /// Manifest contents: `config` is echoed verbatim.
    pub fn manifest(&self, config: Value) -> Value {
        let fields: Vec<Value> = self
            .residuals
            .iter()
            .map(|(s, r)| json!({ "source": s.as_slice(), "mean": r.mean, "max": r.max, "count": r.count }))
            .collect();
        let worst_mean = self.residuals.iter().map(|(_, r)| r.mean).fold(0.0, f64::max);
        let worst_max = self.residuals.iter().map(|(_, r)| r.max).fold(0.0, f64::max);
        json!({
            "tool": "pld",
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "frechet": {
                "iterations": self.frechet.iterations,
                "converged": self.frechet.converged,
                "gradient_norm": self.frechet.gradient_norm,
                "objective": self.frechet.objective.last(),
            },
            "eikonal_residuals": {
                "fields": self.residuals.len(),
                "worst_mean": worst_mean,
                "worst_max": worst_max,
                "per_field": fields,
            },
            "shooting": self.shooting,
            "dropped": self.dropped,
            "modes": self.modes.iter().map(|m| json!({
                "mode": m.mode_index + 1,
                "points": m.trajectory.len(),
                "truncated": m.truncated,
                "zero_energy": m.zero_energy,
            })).collect::<Vec<_>>(),
            "ellipse": self.ellipse,
            "warnings": self.warnings,
        })
    }

    /// Writes every artifact into `dir` and returns the paths in write order.
    pub fn write_artifacts(&self, dir: &Path, config: Value) -> Result<Vec<PathBuf>, PipelineError> {
        fs::create_dir_all(dir).map_err(io)?;
        let d = self.result.mean.dim();
        let mut written = Vec::new();
        let mut put = |name: String, body: Vec<u8>| -> Result<(), PipelineError> {
            let path = dir.join(name);
            fs::write(&path, body).map_err(io)?;
            written.push(path);
            Ok(())
        };

        let mut s = format!("mode,singular_value,energy_fraction,{}\n", header("v", d));
        for k in 0..d {
            s += &format!(
                "{},{},{},{}\n",
                k + 1,
                self.result.singular_values[k],
                self.result.energy_fractions[k],
                join(self.result.right_basis.column(k).iter().copied())
            );
        }
        put("pld_result.csv".into(), s.into_bytes())?;

        let mut s = format!("{}\n", header("v", d));
        for row in self.result.tangent_matrix.row_iter() {
            s += &join(row.iter().copied());
            s.push('\n');
        }
        put("tangent.csv".into(), s.into_bytes())?;

        put(
            "mean.csv".into(),
            format!("{}\n{}\n", header("z", d), join(self.result.mean.as_slice().iter().copied())).into_bytes(),
        )?;

        for m in &self.modes {
            let k = m.mode_index + 1;
            let mut s = format!("t,{}\n", header("z", d));
            for (t, z) in &m.trajectory {
                s += &format!("{},{}\n", t, join(z.as_slice().iter().copied()));
            }
            put(format!("mode_{k}.csv"), s.into_bytes())?;
            if let Some(dec) = &m.decoded {
                let mut buf = Vec::new();
                write_snapshot_matrix(&mut buf, dec)?;
                put(format!("decoded_mode_{k}.bin"), buf)?;
            }
        }

        if let Some(e) = &self.ellipse {
            let s = format!(
                "center_1,center_2,semi_major,semi_minor,rotation,rms_residual\n{}\n",
                join([e.center[0], e.center[1], e.semi_major, e.semi_minor, e.rotation, e.rms_residual])
            );
            put("ellipse.csv".into(), s.into_bytes())?;
        }

        let manifest = serde_json::to_string_pretty(&self.manifest(config)).expect("json values serialise");
        put("run_manifest.json".into(), (manifest + "\n").into_bytes())?;
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let rows = vec![Vector::from_column_slice(&[1.0, -2.5, 3.0]), Vector::from_column_slice(&[0.0, 1e-300, f64::MAX])];
        let mut buf = Vec::new();
        write_snapshot_matrix(&mut buf, &rows).unwrap();
        assert_eq!(&buf[..4], b"PLDM");
        assert_eq!(buf.len(), 16 + 48);
        assert_eq!(read_snapshot_matrix(&buf).unwrap(), rows);
        assert!(read_snapshot_matrix(&buf[..buf.len() - 1]).is_err());
    }
}
