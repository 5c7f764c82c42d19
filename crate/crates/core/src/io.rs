//! CSV and PGM readers and writers.
//!
//! Every file written here may start with one `#` comment line recording the
//! configuration hash and seed that produced it; readers skip such lines.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::Location;
use crate::linalg::Matrix;
use crate::sblue::ReconstructionGrid;
use crate::scalar::Scalar;
use crate::sensors::{ObservationVector, SensorDeployment};

/// Provenance line written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputHeader {
    pub config_hash: String,
    pub seed: u64,
}

impl OutputHeader {
    pub fn line(&self) -> String {
        format!("# config_hash={} seed={}", self.config_hash, self.seed)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_all(path: &Path, header: Option<&OutputHeader>, body: &str) -> Result<()> {
    let mut w = create(path)?;
    let mut go = || -> std::io::Result<()> {
        if let Some(h) = header {
            writeln!(w, "{}", h.line())?;
        }
        w.write_all(body.as_bytes())?;
        w.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

/// Reads a headed CSV, skipping `#` lines, checking the column names and
/// yielding `(line number, record)` pairs.
pub(crate) fn read_records(path: &Path, expected: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let malformed = |line: u64, reason: String| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    // csv positions count CRLF lines inconsistently, so derive lines from byte offsets
    let line_at = |pos: Option<&csv::Position>| {
        pos.map_or(1, |p| {
            let end = (p.byte() as usize + 1).min(bytes.len());
            1 + bytes[..end].iter().filter(|&&b| b == b'\n').count() as u64
        })
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let headers = reader
        .headers()
        .map_err(|e| malformed(line_at(e.position()), e.to_string()))?
        .clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(malformed(
            line_at(headers.position()),
            format!("expected header {expected:?}, found {found:?}"),
        ));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| malformed(line_at(e.position()), e.to_string()))?;
        out.push((line_at(rec.position()), rec));
    }
    Ok(out)
}

pub(crate) fn parse_field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason: format!("cannot parse {name} from {raw:?}"),
    })
}

fn parse_real<S: Scalar>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<S> {
    let v: f64 = parse_field(path, line, rec, i, name)?;
    if !v.is_finite() {
        return Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason: format!("{name} is not finite"),
        });
    }
    Ok(S::lit(v))
}

fn parse_kind(path: &Path, line: u64, rec: &csv::StringRecord) -> Result<bool> {
    match rec.get(0) {
        Some("H") => Ok(true),
        Some("L") => Ok(false),
        other => Err(Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            reason: format!("sensor kind must be H or L, found {other:?}"),
        }),
    }
}

/// `kind,x,y` rows, high sensors first.
pub fn write_deployment_csv<S: Scalar>(path: &Path, d: &SensorDeployment<S>, header: Option<&OutputHeader>) -> Result<()> {
    let mut body = String::from("kind,x,y\n");
    for (kind, locs) in [("H", &d.high_locs), ("L", &d.low_locs)] {
        for l in locs {
            body.push_str(&format!("{kind},{},{}\n", l.x, l.y));
        }
    }
    write_all(path, header, &body)
}

/// High and low sensor locations, each in file order.
pub fn read_deployment_csv<S: Scalar>(path: &Path) -> Result<(Vec<Location<S>>, Vec<Location<S>>)> {
    let mut high = Vec::new();
    let mut low = Vec::new();
    for (line, rec) in read_records(path, &["kind", "x", "y"])? {
        let is_high = parse_kind(path, line, &rec)?;
        let loc = Location::new(parse_real(path, line, &rec, 1, "x")?, parse_real(path, line, &rec, 2, "y")?);
        if is_high { high.push(loc) } else { low.push(loc) }
    }
    Ok((high, low))
}

/// Sensor locations together with their readings.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable<S> {
    pub high_locs: Vec<Location<S>>,
    pub low_locs: Vec<Location<S>>,
    pub observations: ObservationVector<S>,
}

/// `kind,x,y,value` rows with raw (uncentered) readings.
pub fn write_observations_csv<S: Scalar>(
    path: &Path,
    d: &SensorDeployment<S>,
    obs: &ObservationVector<S>,
    header: Option<&OutputHeader>,
) -> Result<()> {
    obs.check_shape(d)?;
    if obs.centered {
        return Err(Error::invalid("observation files hold raw readings; got centered values"));
    }
    let mut body = String::from("kind,x,y,value\n");
    for (kind, locs, ys) in [("H", &d.high_locs, &obs.y_high), ("L", &d.low_locs, &obs.y_low)] {
        for (l, y) in locs.iter().zip(ys.iter()) {
            body.push_str(&format!("{kind},{},{},{}\n", l.x, l.y, y));
        }
    }
    write_all(path, header, &body)
}

pub fn read_observations_csv<S: Scalar>(path: &Path) -> Result<ObservationTable<S>> {
    let mut t = ObservationTable {
        high_locs: Vec::new(),
        low_locs: Vec::new(),
        observations: ObservationVector::new(Vec::new(), Vec::new()),
    };
    for (line, rec) in read_records(path, &["kind", "x", "y", "value"])? {
        let is_high = parse_kind(path, line, &rec)?;
        let loc = Location::new(parse_real(path, line, &rec, 1, "x")?, parse_real(path, line, &rec, 2, "y")?);
        let v = parse_real(path, line, &rec, 3, "value")?;
        if is_high {
            t.high_locs.push(loc);
            t.observations.y_high.push(v);
        } else {
            t.low_locs.push(loc);
            t.observations.y_low.push(v);
        }
    }
    Ok(t)
}

/// `x,y,estimate,mse` rows, `x` varying fastest.
pub fn write_grid_csv<S: Scalar>(path: &Path, grid: &ReconstructionGrid<S>, header: Option<&OutputHeader>) -> Result<()> {
    let mut body = String::from("x,y,estimate,mse\n");
    for (i, y) in grid.ys.iter().enumerate() {
        for (j, x) in grid.xs.iter().enumerate() {
            body.push_str(&format!("{x},{y},{},{}\n", grid.estimates[(i, j)], grid.mse[(i, j)]));
        }
    }
    write_all(path, header, &body)
}

/// A scalar field sampled on a regular grid (rows follow `ys`).
#[derive(Debug, Clone, PartialEq)]
pub struct GridField<S> {
    pub xs: Vec<S>,
    pub ys: Vec<S>,
    pub values: Matrix<S>,
}

/// `x,y,value` rows, `x` varying fastest.
pub fn write_field_csv<S: Scalar>(path: &Path, field: &GridField<S>, header: Option<&OutputHeader>) -> Result<()> {
    let mut body = String::from("x,y,value\n");
    for (i, y) in field.ys.iter().enumerate() {
        for (j, x) in field.xs.iter().enumerate() {
            body.push_str(&format!("{x},{y},{}\n", field.values[(i, j)]));
        }
    }
    write_all(path, header, &body)
}

pub fn read_field_csv<S: Scalar>(path: &Path) -> Result<GridField<S>> {
    let rows = read_records(path, &["x", "y", "value"])?;
    let mut xs: Vec<S> = Vec::new();
    let mut ys: Vec<S> = Vec::new();
    let mut values = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        let x: S = parse_real(path, *line, rec, 0, "x")?;
        let y: S = parse_real(path, *line, rec, 1, "y")?;
        if ys.last() != Some(&y) {
            ys.push(y);
        }
        if ys.len() == 1 {
            xs.push(x);
        }
        values.push(parse_real(path, *line, rec, 2, "value")?);
    }
    let (nx, ny) = (xs.len(), ys.len());
    let values = Matrix::from_row_major(ny, nx, values).map_err(|_| Error::MalformedRow {
        path: path.to_path_buf(),
        line: rows.last().map_or(1, |r| r.0),
        reason: format!("rows do not form a {ny}x{nx} grid"),
    })?;
    Ok(GridField { xs, ys, values })
}

/// Binary 8-bit PGM, min-max scaled, with the largest `y` as the top row.
/// The scaling bounds go to `<path>.scale.txt`.
pub fn write_pgm<S: Scalar>(path: &Path, values: &Matrix<S>, header: Option<&OutputHeader>) -> Result<()> {
    let data: Vec<f64> = values.as_slice().iter().map(|v| v.to_f64_lossy()).collect();
    let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (rows, cols) = (values.rows(), values.cols());

    let mut w = create(path)?;
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "P5")?;
        if let Some(h) = header {
            writeln!(w, "{}", h.line())?;
        }
        write!(w, "{cols} {rows}\n255\n")?;
        for i in (0..rows).rev() {
            let row: Vec<u8> = data[i * cols..(i + 1) * cols]
                .iter()
                .map(|v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect();
            w.write_all(&row)?;
        }
        w.flush()
    };
    go().map_err(|e| Error::io(path, e))?;

    let sidecar = path.with_extension("scale.txt");
    write_all(&sidecar, header, &format!("min={lo}\nmax={hi}\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{GpFieldModel, KernelSpec, LgpEnergyModel, LinkFunction};

    fn deployment() -> SensorDeployment<f64> {
        SensorDeployment::new(
            vec![Location::new(0.5, 1.25)],
            vec![Location::new(2.0, 3.0), Location::new(4.75, 0.1)],
            8.0,
            1.0,
            GpFieldModel::new(8.0, KernelSpec::squared_exponential(10.0, 1.0).unwrap()).unwrap(),
            LgpEnergyModel::new(0.0, KernelSpec::squared_exponential(0.3, 1.0).unwrap()).unwrap(),
            LinkFunction::Reciprocal,
        )
        .unwrap()
    }

    #[test]
    fn observations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.csv");
        let d = deployment();
        let obs = ObservationVector::new(vec![9.5], vec![-0.25, 12.125]);
        let h = OutputHeader {
            config_hash: "abc".into(),
            seed: 3,
        };
        write_observations_csv(&p, &d, &obs, Some(&h)).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# config_hash=abc seed=3\nkind,x,y,value\n"));
        let t: ObservationTable<f64> = read_observations_csv(&p).unwrap();
        assert_eq!(t.high_locs, d.high_locs);
        assert_eq!(t.low_locs, d.low_locs);
        assert_eq!(t.observations, obs);
    }

    #[test]
    fn deployment_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dep.csv");
        write_deployment_csv(&p, &deployment(), None).unwrap();
        let (h, l): (Vec<Location<f64>>, Vec<Location<f64>>) = read_deployment_csv(&p).unwrap();
        assert_eq!((h.len(), l.len()), (1, 2));

        std::fs::write(&p, "kind,x,y\nH,1,2\nQ,1,2\n").unwrap();
        match read_deployment_csv::<f64>(&p) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "kind,x,y\r\nH,1,oops\r\n").unwrap();
        let r = read_deployment_csv::<f64>(&p);
        assert!(matches!(r, Err(Error::MalformedRow { line: 2, .. })), "{r:?}");
        std::fs::write(&p, "a,b,c\n").unwrap();
        assert!(read_deployment_csv::<f64>(&p).is_err());
    }

    #[test]
    fn field_round_trip_and_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let f = GridField {
            xs: vec![0.0, 0.5, 1.0],
            ys: vec![0.0, 2.0],
            values: Matrix::from_row_major(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        };
        let p = dir.path().join("truth.csv");
        write_field_csv(&p, &f, None).unwrap();
        assert_eq!(read_field_csv::<f64>(&p).unwrap(), f);

        let img = dir.path().join("truth.pgm");
        write_pgm(&img, &f.values, None).unwrap();
        let bytes = std::fs::read(&img).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[153, 204, 255, 0, 51, 102]);
        let scale = std::fs::read_to_string(dir.path().join("truth.scale.txt")).unwrap();
        assert_eq!(scale, "min=1\nmax=6\n");
    }
}
