//! Headerless CSV in the SMD layout: one row per timestamp, one column per
//! sensor. Label files hold one integer per line; root-cause files hold
//! `start-end:i1,i2,...` lines with 1-based inclusive ranges and indices.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{default_sensor_names, Dataset, DatasetMeta, RootCauseSegment, TimeSeriesMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct CsvOptions {
    /// Skip the first line of each matrix file.
    pub header: bool,
}

/// Read a numeric matrix (`T×N`). Returns the matrix and, when a header line
/// is present, its column names.
pub fn read_matrix_csv(path: &Path, opts: CsvOptions) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.header)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let names = if opts.header {
        let h = reader.headers().map_err(|e| csv_error(path, e))?;
        Some(h.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };
    let line_offset = usize::from(opts.header) + 1;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Schema(format!(
                    "{}: line {} has {} columns, expected {w}",
                    path.display(),
                    r + line_offset,
                    rec.len()
                )))
            }
            _ => {}
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: r + line_offset,
                column: c + 1,
                message: format!("{}: not a number: {cell:?}", path.display()),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Schema(format!("{}: no data rows", path.display())))?;
    let m = Array2::from_shape_vec((rows, width), data).map_err(|e| Error::Schema(e.to_string()))?;
    Ok((m, names))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}

/// Values are written with the shortest representation that parses back to
/// the identical `f64`.
pub fn write_matrix_csv(path: &Path, x: &TimeSeriesMatrix) -> Result<()> {
    let mut out = String::new();
    for t in 0..x.len() {
        let row = x.row(t);
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: f64 = l.trim().parse().map_err(|_| Error::Parse {
                row: i + 1,
                column: 1,
                message: format!("{}: bad label {l:?}", path.display()),
            })?;
            if v == 0.0 {
                Ok(0)
            } else if v == 1.0 {
                Ok(1)
            } else {
                Err(Error::Label(format!("{}: line {} is {v}, not 0 or 1", path.display(), i + 1)))
            }
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 2);
    for l in labels {
        out.push_str(if *l == 0 { "0\n" } else { "1\n" });
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_root_causes(path: &Path) -> Result<Vec<RootCauseSegment>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            row: i + 1,
            column: 1,
            message: format!("{}: {msg}: {line:?}", path.display()),
        };
        let (range, sensors) = line.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        let (start, end) = range.split_once('-').ok_or_else(|| bad("missing '-' in range"))?;
        let start: usize = start.trim().parse().map_err(|_| bad("bad range start"))?;
        let end: usize = end.trim().parse().map_err(|_| bad("bad range end"))?;
        if start == 0 || end < start {
            return Err(bad("ranges are 1-based and inclusive"));
        }
        let sensors = sensors
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                let v: usize = s.trim().parse().map_err(|_| bad("bad sensor index"))?;
                v.checked_sub(1).ok_or_else(|| bad("sensor indices are 1-based"))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(RootCauseSegment {
            start: start - 1,
            end: end - 1,
            sensors,
        });
    }
    Ok(out)
}

pub fn write_root_causes(path: &Path, segments: &[RootCauseSegment]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for s in segments {
        let idx: Vec<String> = s.sensors.iter().map(|i| (i + 1).to_string()).collect();
        writeln!(f, "{}-{}:{}", s.start + 1, s.end + 1, idx.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Load an SMD-style dataset. Every sensor is scalar (`m = 1`).
pub fn load_csv_dataset(
    train_path: &Path,
    test_path: &Path,
    label_path: Option<&Path>,
    rc_label_path: Option<&Path>,
    opts: CsvOptions,
) -> Result<Dataset> {
    let (train_rows, train_names) = read_matrix_csv(train_path, opts)?;
    let (test_rows, _) = read_matrix_csv(test_path, opts)?;
    if train_rows.ncols() != test_rows.ncols() {
        return Err(Error::Schema(format!(
            "train has {} columns, test has {}",
            train_rows.ncols(),
            test_rows.ncols()
        )));
    }
    let n = train_rows.ncols();
    let names = train_names.unwrap_or_else(|| default_sensor_names(n));
    let to_matrix = |rows: Array2<f64>| {
        let t = rows.nrows();
        let values = rows
            .into_shape_with_order((t, n, 1))
            .map_err(|e| Error::Schema(e.to_string()))?;
        TimeSeriesMatrix::new(values, names.clone())
    };
    let train = to_matrix(train_rows)?;
    let mut test = to_matrix(test_rows)?;
    if let Some(p) = label_path {
        let labels = read_labels(p)?;
        if labels.len() != test.len() {
            return Err(Error::Label(format!(
                "{}: expected {} labels (one per test row), got {}",
                p.display(),
                test.len(),
                labels.len()
            )));
        }
        test = test.with_labels(labels)?;
    }
    if let Some(p) = rc_label_path {
        test = test.with_root_causes(read_root_causes(p)?)?;
    }
    let name = train_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let meta = DatasetMeta {
        name,
        source: Some(train_path.display().to_string()),
        normalization: None,
    };
    Dataset::new(train, test, meta)
}
