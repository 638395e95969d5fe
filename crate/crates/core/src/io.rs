//! Dataset directories on disk: `features.csv`, `participation.csv`,
//! `lengths.csv` and the optional ground-truth `labels.csv`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::Dataset;

pub const FEATURES_FILE: &str = "features.csv";
pub const PARTICIPATION_FILE: &str = "participation.csv";
pub const LENGTHS_FILE: &str = "lengths.csv";
pub const LABELS_FILE: &str = "labels.csv";

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::DataFormat {
        file: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Reads a headed numeric table. Returns the header and the rows.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| format_err(path, format!("row {}: cannot parse {f:?}", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn to_matrix(path: &Path, rows: &[Vec<f64>], ncols: usize) -> Result<DMatrix<f64>> {
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(format_err(
            path,
            format!(
                "row {} has {} fields, expected {ncols}",
                i + 1,
                rows[i].len()
            ),
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn read_column(path: &Path, name: &str) -> Result<Vec<f64>> {
    let (header, rows) = read_table(path)?;
    if header.len() != 1 || header[0] != name {
        return Err(format_err(
            path,
            format!("expected a single column {name:?}"),
        ));
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

/// Participation may have zero thread columns; its row count then comes from
/// the number of lines.
fn read_participation(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("").trim();
    if header.is_empty() {
        let users = lines.count();
        return Ok(DMatrix::zeros(users, 0));
    }
    let (header, rows) = read_table(path)?;
    to_matrix(path, &rows, header.len())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let fpath = dir.join(FEATURES_FILE);
    let (header, rows) = read_table(&fpath)?;
    let features = to_matrix(&fpath, &rows, header.len())?;
    let participation = read_participation(&dir.join(PARTICIPATION_FILE))?;
    let lengths = DVector::from_vec(read_column(&dir.join(LENGTHS_FILE), "y")?);
    Dataset::new(features, participation, lengths)
}

/// 1-based labels as written by [`write_labels`].
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    read_column(path, "z")?
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(format_err(
                    path,
                    format!("row {}: label {v} is not a positive integer", i + 1),
                ))
            }
        })
        .collect()
}

fn write_matrix(path: &Path, prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if m.ncols() == 0 {
        drop(w);
        let mut text = String::from("\n");
        text.push_str(&"\n".repeat(m.nrows()));
        std::fs::write(path, text)?;
        return Ok(());
    }
    w.write_record((1..=m.ncols()).map(|j| format!("{prefix}{j}")))?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(dir: &Path, d: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_matrix(&dir.join(FEATURES_FILE), "f", &d.features)?;
    write_matrix(&dir.join(PARTICIPATION_FILE), "t", &d.participation)?;
    let mut w = csv::Writer::from_path(dir.join(LENGTHS_FILE))?;
    w.write_record(["y"])?;
    for y in d.lengths.iter() {
        w.write_record([y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes labels as given; callers pass 1-based labels.
pub fn write_labels(path: &Path, z: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["z"])?;
    for l in z {
        w.write_record([l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
