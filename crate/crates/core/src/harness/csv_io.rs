//! Point CSV ingestion and export.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::geometry::Dataset;
use crate::harness::generate::draw_shift;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub path: PathBuf,
    /// Columns to keep, in output order.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cols: Option<Vec<usize>>,
    /// Drop rows with any coordinate outside `[-c, c]`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clip_box: Option<f64>,
    /// Seed of a uniform shift in `[-shift_box, shift_box]^d`, applied after clipping.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shift_random: Option<u64>,
    #[serde(default = "default_shift_box")]
    pub shift_box: f64,
}

fn default_shift_box() -> f64 {
    5.0
}

impl CsvOptions {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            cols: None,
            clip_box: None,
            shift_random: None,
            shift_box: default_shift_box(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedCsv {
    pub data: Dataset,
    pub had_header: bool,
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub shift: Option<Vec<f64>>,
    pub provenance: Vec<String>,
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

/// Reads `d` numeric columns per row; a first row with no numeric cell is
/// treated as a header.
pub fn load_csv(opts: &CsvOptions) -> Result<LoadedCsv> {
    let path = &opts.path;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut data: Option<Dataset> = None;
    let mut width = None;
    let mut had_header = false;
    let (mut rows_read, mut rows_dropped) = (0usize, 0usize);
    let mut row = Vec::new();

    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(k + 1, |p| p.line() as usize);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        if k == 0 && record.iter().all(|c| c.parse::<f64>().is_err()) {
            had_header = true;
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(parse_err(path, line, format!("expected {w} columns, found {}", record.len())));
            }
            Some(_) => {}
        }
        let cols: Vec<usize> = match &opts.cols {
            Some(c) => c.clone(),
            None => (0..record.len()).collect(),
        };
        row.clear();
        for &c in &cols {
            let cell = record
                .get(c)
                .ok_or_else(|| parse_err(path, line, format!("column {c} out of range")))?;
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, line, format!("non-numeric cell {cell:?} in column {c}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value in column {c}")));
            }
            row.push(v);
        }
        rows_read += 1;
        if let Some(c) = opts.clip_box {
            if row.iter().any(|v| v.abs() > c) {
                rows_dropped += 1;
                continue;
            }
        }
        let ds = match &mut data {
            Some(ds) => ds,
            None => data.insert(Dataset::with_capacity(row.len(), 0)?),
        };
        ds.push(&row)?;
    }
    let mut data = data.ok_or_else(|| domain(format!("{} holds no usable rows", path.display())))?;

    let mut provenance = vec![format!("csv {}", path.display())];
    if let Some(c) = &opts.cols {
        provenance.push(format!("columns {c:?}"));
    }
    if let Some(c) = opts.clip_box {
        provenance.push(format!("clip box [-{c}, {c}], {rows_dropped} rows dropped"));
    }
    let shift = opts.shift_random.map(|seed| {
        let shift = draw_shift(seed, data.dim(), opts.shift_box);
        provenance.push(format!("random shift seed {seed}"));
        shift
    });
    if let Some(s) = &shift {
        let mut shifted = Dataset::with_capacity(data.dim(), data.len())?;
        let mut x = vec![0.0; data.dim()];
        for p in data.iter() {
            for ((o, v), d) in x.iter_mut().zip(p).zip(s) {
                *o = v + d;
            }
            shifted.push(&x)?;
        }
        data = shifted;
    }
    Ok(LoadedCsv {
        data,
        had_header,
        rows_read,
        rows_dropped,
        shift,
        provenance,
    })
}

/// Writes points as CSV with a `x0,...,x{d-1}` header.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..data.dim()).map(|j| format!("x{j}")))?;
    for x in data.iter() {
        w.write_record(x.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn plain_rows() {
        let f = file("1,2,3\n4,5,6\n7,8,9\n");
        let l = load_csv(&CsvOptions::new(f.path())).unwrap();
        assert_eq!((l.data.len(), l.data.dim()), (3, 3));
        assert!(!l.had_header);
    }

    #[test]
    fn header_columns_and_clip() {
        let f = file("a,b,c,d\n0.5,0.1,9,1\n2,0,0,0\n-0.9,0.9,1,1\n");
        let mut o = CsvOptions::new(f.path());
        o.cols = Some(vec![0, 1]);
        o.clip_box = Some(1.0);
        let l = load_csv(&o).unwrap();
        assert!(l.had_header);
        assert_eq!(l.data.dim(), 2);
        assert_eq!(l.data.as_flat(), &[0.5, 0.1, -0.9, 0.9]);
        assert_eq!(l.rows_dropped, 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let f = file("1,2\n3,4\n5\n");
        match load_csv(&CsvOptions::new(f.path())) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let f = file("1,2\n3,x\n");
        match load_csv(&CsvOptions::new(f.path())) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shift_and_roundtrip() {
        let f = file("0,0\n1,1\n");
        let mut o = CsvOptions::new(f.path());
        o.shift_random = Some(4);
        let l = load_csv(&o).unwrap();
        let s = l.shift.clone().unwrap();
        assert_eq!(l.data.point(0), &s[..]);
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(out.path(), &l.data).unwrap();
        let back = load_csv(&CsvOptions::new(out.path())).unwrap();
        assert_eq!(back.data, l.data);
    }
}
