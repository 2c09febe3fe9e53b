use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    File,
    SyntheticGp,
    SyntheticFunction,
}

/// Inputs `x` (N points of dimension d) with scalar targets `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    pub provenance: Provenance,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>, provenance: Provenance, seed: Option<u64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Input(format!("{} inputs but {} targets", x.len(), y.len())));
        }
        let d = x.first().map_or(0, Vec::len);
        for (i, p) in x.iter().enumerate() {
            if p.len() != d {
                return Err(Error::Input(format!(
                    "row {i} has dimension {}, expected {d}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("row {i} has a non-finite input")));
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("target {i} is not finite")));
        }
        Ok(Dataset {
            x,
            y,
            provenance,
            seed,
        })
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Writes `x1,…,xd,y` with a header row. Values use the shortest
    /// representation that parses back to the same bits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (p, t) in self.x.iter().zip(&self.y) {
            let row: Vec<String> = p.iter().chain(std::iter::once(t)).map(|v| v.to_string()).collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a CSV whose header names d feature columns followed by one target
/// column. Every failure names the offending line (1-based, header is line 1)
/// and column.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let table = read_table(path)?;
    if table.ncols < 2 {
        return Err(parse_err(path, 1, 1, "need at least one feature column and a target column"));
    }
    let mut x = Vec::with_capacity(table.rows.len());
    let mut y = Vec::with_capacity(table.rows.len());
    for mut row in table.rows {
        y.push(row.pop().expect("nonempty row"));
        x.push(row);
    }
    Dataset::new(x, y, Provenance::File, None)
}

/// Reads a CSV of feature columns only (or features plus target); returns
/// rows and column names. Used for prediction inputs.
pub fn load_points(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let table = read_table(path.as_ref())?;
    Ok((table.header, table.rows))
}

struct Table {
    header: Vec<String>,
    ncols: usize,
    rows: Vec<Vec<f64>>,
}

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let text = crate::error::read_file(path)?;
    if text.trim().is_empty() {
        return Err(parse_err(path, 1, 1, "file is empty"));
    }
    // The csv reader silently skips blank lines; reject them up front so the
    // row count always matches the file.
    let body = text.strip_suffix('\n').unwrap_or(&text);
    let body = body.strip_suffix('\r').unwrap_or(body);
    if let Some(i) = body.split('\n').position(|l| l.trim().is_empty()) {
        return Err(parse_err(path, i + 1, 1, "blank line"));
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let ncols = header.len();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != ncols {
            return Err(parse_err(
                path,
                line,
                rec.len().min(ncols) + 1,
                format!("expected {ncols} fields, found {}", rec.len()),
            ));
        }
        let mut row = Vec::with_capacity(ncols);
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, line, c + 1, format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, c + 1, format!("non-finite value {cell:?}")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 2, 1, "no data rows"));
    }
    Ok(Table { header, ncols, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_file() {
        let f = write("a,b,target\n1,2,3\n4,5,6\n-1,0.5,2e-3\n");
        let d = load_csv(f.path()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.x()[2], vec![-1.0, 0.5]);
        assert_eq!(d.y(), &[3.0, 6.0, 0.002]);
        assert_eq!(d.provenance, Provenance::File);
    }

    #[test]
    fn blank_line_is_located() {
        let f = write("a,y\n1,2\n\n3,4\n");
        match load_csv(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_row_is_located() {
        let f = write("a,b,y\n1,2,3\n4,5\n");
        match load_csv(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_is_located() {
        let f = write("a,b,y\n1,2,3\n4,oops,6\n");
        match load_csv(f.path()) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        let f = write("");
        assert!(matches!(load_csv(f.path()), Err(Error::Parse { .. })));
        let f = write("a,y\n");
        assert!(matches!(load_csv(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn write_then_load_is_bitwise() {
        let x: Vec<Vec<f64>> = (0..25)
            .map(|i| vec![(i as f64 * 0.7).sin(), 1.0 / (i as f64 + 3.0)])
            .collect();
        let y: Vec<f64> = (0..25).map(|i| (i as f64).exp() * 1e-7 - 0.1 / 3.0).collect();
        let d = Dataset::new(x, y, Provenance::SyntheticFunction, Some(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.x(), d.x());
        for (a, b) in back.y().iter().zip(d.y()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn dataset_rejects_mismatch_and_nan() {
        assert!(Dataset::new(vec![vec![1.0]], vec![], Provenance::File, None).is_err());
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0], Provenance::File, None).is_err());
        assert!(Dataset::new(vec![vec![f64::NAN]], vec![0.0], Provenance::File, None).is_err());
    }
}
