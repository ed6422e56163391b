//! Series CSV: a `timestamp` column, one column per feature and a `label`
//! column. Missing readings are empty cells or `NaN`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use eapcr_core::data::SeriesTable;

use crate::error::{CliError, Result};

pub const TIMESTAMP: &str = "timestamp";
pub const LABEL: &str = "label";

/// Whether a missing `label` column is an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Labels {
    Required,
    /// Absent labels read as all zeros.
    Optional,
}

pub fn load_csv(path: &Path, labels: Labels) -> Result<SeriesTable> {
    let file = File::open(path).map_err(CliError::io(path))?;
    read_csv(file, labels).map_err(|e| match e {
        CliError::Csv { source, .. } => CliError::Csv { path: path.into(), source },
        other => other,
    })
}

pub fn read_csv<R: Read>(input: R, labels: Labels) -> Result<SeriesTable> {
    let csv_err = |source| CliError::Csv { path: "<input>".into(), source };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers().map_err(csv_err)?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let ts_col = find(TIMESTAMP).ok_or_else(|| CliError::MissingColumn(TIMESTAMP.into()))?;
    let label_col = match (find(LABEL), labels) {
        (Some(c), _) => Some(c),
        (None, Labels::Optional) => None,
        (None, Labels::Required) => return Err(CliError::MissingColumn(LABEL.into())),
    };
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != ts_col && Some(c) != label_col).collect();
    let names: Vec<String> = feature_cols.iter().map(|&c| header[c].to_string()).collect();

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut label_values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = record.position().map_or(i + 2, |p| p.line() as usize);
        let bad = |c: usize| CliError::UnparsableCell {
            row,
            col: header[c].to_string(),
            text: record[c].to_string(),
        };
        let t: i64 = record[ts_col].parse().map_err(|_| bad(ts_col))?;
        if timestamps.last().is_some_and(|&prev| t <= prev) {
            return Err(CliError::NonMonotoneTimestamps { row });
        }
        timestamps.push(t);
        for &c in &feature_cols {
            let cell = &record[c];
            let v = if cell.is_empty() || cell == "NaN" {
                f64::NAN
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => return Err(bad(c)),
                }
            };
            values.push(v);
        }
        label_values.push(match label_col {
            Some(c) => match &record[c] {
                "0" => 0,
                "1" => 1,
                _ => return Err(bad(c)),
            },
            None => 0,
        });
    }
    Ok(SeriesTable::new(timestamps, values, label_values, names)?)
}

pub fn write_csv<W: Write>(table: &SeriesTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |source| CliError::Csv { path: "<output>".into(), source };
    let mut header = vec![TIMESTAMP.to_string()];
    header.extend(table.feature_names().iter().cloned());
    header.push(LABEL.into());
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..table.len() {
        let mut rec = vec![table.timestamps()[t].to_string()];
        rec.extend(table.row(t).iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }));
        rec.push(table.labels()[t].to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

pub fn save_csv(table: &SeriesTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(CliError::io(path))?;
    write_csv(table, std::io::BufWriter::new(file)).map_err(|e| match e {
        CliError::Csv { source, .. } => CliError::Csv { path: path.into(), source },
        other => other,
    })
}
