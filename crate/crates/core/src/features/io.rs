use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FeatureView, PreprocessState, TabularDataset, Variant};
use crate::error::{Error, Result};

pub const LABEL_COLUMN: &str = "A";

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub variant: Option<Variant>,
    pub columns: Vec<String>,
    pub n_dynamic: usize,
    pub n_rows: usize,
    pub class_counts: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessState>,
}

/// `data/dataset_D0.csv` -> `data/dataset_D0.meta.json`
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn parse_cell(s: &str, path: &Path, line: u64) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| {
        Error::InvalidInput(format!("{}:{line}: `{s}` is not a number", path.display()))
    })
}

/// Writes the dataset CSV (features then label column `A`) and its sidecar.
pub fn write_dataset(
    ds: &TabularDataset,
    csv_path: &Path,
    preprocess: Option<&PreprocessState>,
) -> Result<()> {
    if let Some(parent) = csv_path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header = ds.columns.clone();
    header.push(LABEL_COLUMN.into());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for (row, label) in ds.rows().zip(&ds.labels) {
        rec.clear();
        rec.extend(row.iter().map(|&v| fmt_cell(v)));
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let meta = DatasetMeta {
        variant: ds.variant,
        columns: ds.columns.clone(),
        n_dynamic: ds.n_dynamic,
        n_rows: ds.n_rows(),
        class_counts: ds.class_counts(),
        preprocess: preprocess.cloned(),
    };
    fs::write(meta_path(csv_path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Feature columns without labels, e.g. rows to score.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub data: Vec<f64>,
}

impl FeatureTable {
    pub fn view(&self) -> FeatureView<'_> {
        FeatureView { columns: &self.columns, data: &self.data }
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Option<usize>, Vec<csv::StringRecord>)> {
    let file = fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let label_col = header.iter().position(|h| h == LABEL_COLUMN);
    let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((header, label_col, records))
}

/// Reads a feature CSV, dropping the label column if present.
pub fn read_features_csv(path: &Path) -> Result<FeatureTable> {
    let (header, label_col, records) = read_table(path)?;
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != label_col)
        .map(|(_, h)| h.clone())
        .collect();
    let mut data = Vec::with_capacity(records.len() * columns.len());
    for (r, rec) in records.iter().enumerate() {
        for (i, cell) in rec.iter().enumerate() {
            if Some(i) != label_col {
                data.push(parse_cell(cell, path, r as u64 + 2)?);
            }
        }
    }
    Ok(FeatureTable { columns, data })
}

/// Reads a labelled dataset CSV plus its sidecar when present.
pub fn read_dataset(csv_path: &Path) -> Result<TabularDataset> {
    let (header, label_col, records) = read_table(csv_path)?;
    let label_col = label_col.ok_or_else(|| Error::MissingColumn {
        file: csv_path.display().to_string(),
        column: LABEL_COLUMN.into(),
    })?;
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_col)
        .map(|(_, h)| h.clone())
        .collect();
    let mut data = Vec::with_capacity(records.len() * columns.len());
    let mut labels = Vec::with_capacity(records.len());
    for (r, rec) in records.iter().enumerate() {
        let line = r as u64 + 2;
        for (i, cell) in rec.iter().enumerate() {
            if i == label_col {
                labels.push(match cell {
                    "0" => 0,
                    "1" => 1,
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "{}:{line}: label `{other}` is not 0 or 1",
                            csv_path.display()
                        )))
                    }
                });
            } else {
                data.push(parse_cell(cell, csv_path, line)?);
            }
        }
    }

    let meta_file = meta_path(csv_path);
    let (n_dynamic, variant) = if meta_file.exists() {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_file)?)?;
        if meta.columns != columns {
            return Err(Error::ColumnMismatch(format!(
                "{} disagrees with the columns of {}",
                meta_file.display(),
                csv_path.display()
            )));
        }
        (meta.n_dynamic, meta.variant)
    } else {
        let leading = columns
            .iter()
            .take_while(|c| {
                c.strip_prefix('S')
                    .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
            })
            .count();
        (leading, None)
    };
    let mut ds = TabularDataset::new(columns, data, labels, n_dynamic)?;
    ds.variant = variant;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_nulls_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut ds = TabularDataset::new(
            vec!["S1".into(), "x".into()],
            vec![1.0, f64::NAN, 0.1 + 0.2, 1e-300],
            vec![0, 1],
            1,
        )
        .unwrap();
        ds.variant = Some(Variant::D0);
        write_dataset(&ds, &path, None).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.columns, ds.columns);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.variant, Some(Variant::D0));
        assert!(back.data[1].is_nan());
        assert_eq!(back.data[2].to_bits(), (0.1f64 + 0.2).to_bits());

        let feats = read_features_csv(&path).unwrap();
        assert_eq!(feats.columns, ds.columns);
        assert_eq!(feats.data.len(), 4);
    }

    #[test]
    fn leading_session_columns_inferred_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "S1,S2,age,A\n1,2,3,0\n").unwrap();
        let ds = read_dataset(&path).unwrap();
        assert_eq!(ds.n_dynamic, 2);
        fs::write(&path, "S1,age\n1,2\n").unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::MissingColumn { .. })));
    }
}
