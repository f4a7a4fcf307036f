use std::path::Path;

use pld_core::frechet::SampleSet;
use pld_core::manifold::{LatentPoint, MetricField};

use crate::CliError;

/// Reads a CSV with header `z1,...,zd`; rows are numbered from 1 after the header.
pub fn load_samples(path: &Path, field: &MetricField) -> Result<SampleSet, CliError> {
    let d = field.dim();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let want: Vec<String> = (1..=d).map(|i| format!("z{i}")).collect();
    if header.iter().collect::<Vec<_>>() != want.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(CliError::Data(format!(
            "{}: header must be {} for a {d}-dimensional metric, found {}",
            path.display(),
            want.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut points = Vec::new();
    let mut outside = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        let mut z = Vec::with_capacity(d);
        for cell in rec.iter() {
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::Data(format!("row {row}: \"{cell}\" is not a number")))?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("row {row}: \"{cell}\" is not finite")));
            }
            z.push(v);
        }
        if !field.contains(&z) {
            outside.push(row);
        }
        points.push(LatentPoint::new(z).expect("finite coordinates"));
    }
    if !outside.is_empty() {
        let list: Vec<String> = outside.iter().map(|r| r.to_string()).collect();
        return Err(CliError::Data(format!(
            "rows outside the chart bounds: {}",
            list.join(", ")
        )));
    }
    SampleSet::new(points).map_err(|e| CliError::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pld_core::manifold::AnalyticMetric;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn flat() -> MetricField {
        AnalyticMetric::Flat { dim: 2 }.field()
    }

    #[test]
    fn three_valid_rows() {
        let f = file("z1,z2\n0,0\n1,0.5\n-1,2\n");
        assert_eq!(load_samples(f.path(), &flat()).unwrap().len(), 3);
    }

    #[test]
    fn nan_names_the_row() {
        let f = file("z1,z2\n0,0\nnan,1\n");
        let e = load_samples(f.path(), &flat()).unwrap_err().to_string();
        assert!(e.contains("row 2"), "{e}");
    }

    #[test]
    fn out_of_bounds_names_the_rows() {
        let f = file("z1,z2\n0,0\n4,0\n1,1\n0,-7\n");
        let e = load_samples(f.path(), &flat()).unwrap_err().to_string();
        assert!(e.contains("2, 4"), "{e}");
    }

    #[test]
    fn header_must_match_dimension() {
        let f = file("z1,z2,z3\n0,0,0\n1,1,1\n");
        assert!(load_samples(f.path(), &flat()).is_err());
        let f = file("x,y\n0,0\n1,1\n");
        assert!(load_samples(f.path(), &flat()).is_err());
    }

    #[test]
    fn ragged_rows_fail() {
        let f = file("z1,z2\n0,0\n1\n");
        assert!(load_samples(f.path(), &flat()).is_err());
    }
}
