//! CSV formats.
//!
//! * returns: header of asset ids, one row per period, optional leading `date` column
//! * membership: `asset_id,group`
//! * sectors: `asset_id,sector`
//! * matrices: `asset_id,<ids...>` header, one row per asset
//!
//! Numbers are written with 17 significant digits so they read back exactly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use multipoet::estimators::{GroupStructure, ReturnsPanel};

use crate::error::{CliError, CliResult};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn reader(path: &Path) -> CliResult<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        kind => CliError::input(path, format!("{kind:?}")),
    }
}

fn parse_cell(path: &Path, line: u64, column: &str, cell: &str) -> CliResult<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::input(path, format!("line {line}, column '{column}': not a finite number: '{cell}'")))
}

pub fn read_returns(path: &Path) -> CliResult<ReturnsPanel> {
    let mut rdr = reader(path)?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let dated = headers.first().is_some_and(|h| h.eq_ignore_ascii_case("date"));
    let ids: Vec<String> = headers[usize::from(dated)..].to_vec();
    if ids.is_empty() {
        return Err(CliError::input(path, "no asset columns"));
    }
    let mut seen = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), i) {
            return Err(CliError::input(path, format!("asset id '{id}' appears in columns {} and {}", prev + 1, i + 1)));
        }
    }

    let mut values = Vec::new();
    let mut dates = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let mut cells = record.iter();
        if dated {
            dates.push(cells.next().unwrap_or_default().to_string());
        }
        for (id, cell) in ids.iter().zip(cells) {
            values.push(parse_cell(path, line, id, cell)?);
        }
    }
    let t = values.len() / ids.len();
    let m = DMatrix::from_row_slice(t, ids.len(), &values);
    Ok(ReturnsPanel::new(m, ids, dated.then_some(dates))?)
}

/// Reads a two-column `asset_id,<label>` file and returns the label of every
/// asset in `asset_ids` order.
fn read_asset_labels(path: &Path, asset_ids: &[String]) -> CliResult<Vec<String>> {
    let mut rdr = reader(path)?;
    let mut labels: HashMap<String, String> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(CliError::input(path, format!("line {line}: expected 2 fields, found {}", record.len())));
        }
        if labels.insert(record[0].to_string(), record[1].to_string()).is_some() {
            return Err(CliError::input(path, format!("line {line}: asset '{}' listed twice", &record[0])));
        }
    }
    let known: std::collections::HashSet<&str> = asset_ids.iter().map(String::as_str).collect();
    if let Some(extra) = labels.keys().find(|k| !known.contains(k.as_str())) {
        return Err(CliError::input(path, format!("asset '{extra}' is not in the returns file")));
    }
    asset_ids
        .iter()
        .map(|id| {
            labels
                .get(id)
                .cloned()
                .ok_or_else(|| CliError::input(path, format!("asset '{id}' has no entry")))
        })
        .collect()
}

/// Group structure plus the original group names, indexed by group id.
pub fn read_membership(path: &Path, asset_ids: &[String]) -> CliResult<(GroupStructure, Vec<String>)> {
    let labels = read_asset_labels(path, asset_ids)?;
    Ok(GroupStructure::from_labels(&labels)?)
}

pub fn read_sectors(path: &Path, asset_ids: &[String]) -> CliResult<Vec<usize>> {
    let labels = read_asset_labels(path, asset_ids)?;
    Ok(GroupStructure::from_labels(&labels)?.0.membership().to_vec())
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn write_matrix(path: &Path, ids: &[String], m: &DMatrix<f64>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["asset_id".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(m.row(i).iter().map(|&v| fmt_f64(v)));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = reader(path)?;
    let ids: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut values = Vec::with_capacity(ids.len() * ids.len());
    let mut rows = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        for (id, cell) in ids.iter().zip(record.iter().skip(1)) {
            values.push(parse_cell(path, line, id, cell)?);
        }
        rows += 1;
    }
    if values.len() != rows * ids.len() {
        return Err(CliError::input(path, "ragged matrix"));
    }
    let m = DMatrix::from_row_slice(rows, ids.len(), &values);
    Ok((ids, m))
}

pub fn write_labels(path: &Path, ids: &[String], column: &str, labels: &[String]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["asset_id", column]).map_err(|e| csv_err(path, e))?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id, l]).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_returns(path: &Path, panel: &ReturnsPanel) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let dates = panel.time_labels();
    let mut header = Vec::new();
    if dates.is_some() {
        header.push("date".to_string());
    }
    header.extend(panel.asset_ids().iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for t in 0..panel.n_obs() {
        let mut row = Vec::new();
        if let Some(d) = dates {
            row.push(d[t].clone());
        }
        row.extend(panel.values().row(t).iter().map(|&v| fmt_f64(v)));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes `key = value` lines.
pub fn write_record(path: &Path, entries: &[(String, String)]) -> CliResult<()> {
    let mut w = create(path)?;
    for (k, v) in entries {
        writeln!(w, "{k} = {v}").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-300, std::f64::consts::PI]);
        let ids = vec!["a".to_string(), "b".to_string()];
        write_matrix(&path, &ids, &m).unwrap();
        let (ids2, m2) = read_matrix(&path).unwrap();
        assert_eq!(ids, ids2);
        assert_eq!(m, m2);
        write_matrix(&dir.path().join("m2.csv"), &ids2, &m2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(dir.path().join("m2.csv")).unwrap()
        );
    }

    #[test]
    fn returns_with_dates_and_bad_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, "date,x,y\n2020-01-03,1,2\n2020-01-10,3,4.5\n").unwrap();
        let panel = read_returns(&path).unwrap();
        assert_eq!(panel.asset_ids(), ["x", "y"]);
        assert_eq!(panel.time_labels().unwrap()[1], "2020-01-10");
        assert_eq!(panel.values()[(1, 1)], 4.5);

        std::fs::write(&path, "x,y\n1,2\n3,abc\n").unwrap();
        let msg = read_returns(&path).unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("'y'"), "{msg}");
    }

    #[test]
    fn membership_must_cover_assets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        std::fs::write(&path, "asset_id,group\na,us\nb,uk\nc,us\n").unwrap();
        let (g, names) = read_membership(&path, &ids).unwrap();
        assert_eq!(g.membership(), [1, 0, 1]);
        assert_eq!(names, ["uk", "us"]);
        std::fs::write(&path, "asset_id,group\na,us\nb,uk\n").unwrap();
        assert!(read_membership(&path, &ids).unwrap_err().to_string().contains("'c'"));
        std::fs::write(&path, "asset_id,group\na,us\nb,uk\nc,us\nd,us\n").unwrap();
        assert!(read_membership(&path, &ids).is_err());
    }
}
