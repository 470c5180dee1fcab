//! CSV ingestion with row-wise deletion of missing values.

use std::path::Path;

use rare_indep::LabeledSample;

use crate::error::CliError;

#[derive(Debug)]
pub struct Ingested {
    pub sample: LabeledSample<f64>,
    pub feature_names: Vec<String>,
    pub label_name: String,
    /// Rows removed because a selected cell was empty or not a finite number.
    pub dropped: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "N/A" | "NaN" | "nan" | "null" | "NULL" | ".")
}

/// Label cell to class index; `Ok(None)` marks a missing label.
fn parse_label(cell: &str, line: u64) -> Result<Option<usize>, CliError> {
    if is_missing(cell) {
        return Ok(None);
    }
    if let Ok(v) = cell.parse::<usize>() {
        return Ok(Some(v));
    }
    match cell.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64 => Ok(Some(v as usize)),
        _ => Err(CliError::usage(format!(
            "line {line}: label `{cell}` is not a non-negative integer"
        ))),
    }
}

fn parse_feature(cell: &str) -> Option<f64> {
    if is_missing(cell) {
        return None;
    }
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads `path`, using `label` as the class column and `features` (or every other
/// column when empty) as features.
pub fn ingest_csv(path: &Path, label: &str, features: &[String]) -> Result<Ingested, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::usage(format!("cannot read header of {}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let available = || headers.join(", ");
    let label_idx = headers
        .iter()
        .position(|h| h == label)
        .ok_or_else(|| CliError::usage(format!("label column `{label}` not found; available columns: {}", available())))?;
    let feature_idx: Vec<usize> = if features.is_empty() {
        (0..headers.len()).filter(|&i| i != label_idx).collect()
    } else {
        features
            .iter()
            .map(|f| {
                headers.iter().position(|h| h == f).ok_or_else(|| {
                    CliError::usage(format!("feature column `{f}` not found; available columns: {}", available()))
                })
            })
            .collect::<Result<_, _>>()?
    };
    if feature_idx.is_empty() {
        return Err(CliError::usage("no feature columns selected"));
    }

    let (mut rows, mut labels, mut dropped) = (Vec::new(), Vec::new(), 0usize);
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| CliError::usage(format!("line {line}: {e}")))?;
        let Some(y) = parse_label(record.get(label_idx).unwrap_or(""), line)? else {
            dropped += 1;
            continue;
        };
        let row: Option<Vec<f64>> = feature_idx.iter().map(|&j| parse_feature(record.get(j).unwrap_or(""))).collect();
        match row {
            Some(row) => {
                rows.push(row);
                labels.push(y);
            }
            None => dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(CliError::usage(format!("{} has no usable rows ({dropped} dropped)", path.display())));
    }
    Ok(Ingested {
        sample: LabeledSample::from_rows(&rows, labels)?,
        feature_names: feature_idx.iter().map(|&j| headers[j].clone()).collect(),
        label_name: label.to_string(),
        dropped,
    })
}

/// Writes the sample back as CSV with the feature columns followed by the label.
pub fn write_csv(ingested: &Ingested, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
    let mut header = ingested.feature_names.clone();
    header.push(ingested.label_name.clone());
    w.write_record(&header).map_err(CliError::io)?;
    let sample = &ingested.sample;
    for i in 0..sample.n() {
        let mut rec: Vec<String> = sample.row(i).iter().map(|v| format!("{v:?}")).collect();
        rec.push(sample.labels()[i].to_string());
        w.write_record(&rec).map_err(CliError::io)?;
    }
    w.flush().map_err(CliError::io)
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
    fn drops_rows_with_missing_cells() {
        let f = file("x,y\n1.5,0\n,1\n2.5,1\n");
        let got = ingest_csv(f.path(), "y", &[]).unwrap();
        assert_eq!(got.sample.n(), 2);
        assert_eq!(got.dropped, 1);
    }

    #[test]
    fn missing_label_column_names_the_alternatives() {
        let f = file("a,b\n1,0\n");
        let err = ingest_csv(f.path(), "y", &[]).unwrap_err().to_string();
        assert!(err.contains("available columns: a, b"), "{err}");
    }

    #[test]
    fn rejects_fractional_labels() {
        let f = file("x,y\n1,0\n2,0.5\n");
        assert!(ingest_csv(f.path(), "y", &[]).is_err());
        let f = file("x,y\n1,0\n2,1.0\n");
        assert_eq!(ingest_csv(f.path(), "y", &[]).unwrap().sample.labels(), &[0, 1]);
    }

    #[test]
    fn selects_named_features() {
        let f = file("a,b,y,c\n1,2,0,x\n3,4,1,\n");
        let got = ingest_csv(f.path(), "y", &["b".into(), "a".into()]).unwrap();
        assert_eq!(got.sample.row(1), &[4.0, 3.0]);
        assert_eq!(got.dropped, 0);
    }

    #[test]
    fn multi_class_labels() {
        let f = file("x,y\n1,0\n2,1\n3,2\n");
        assert_eq!(ingest_csv(f.path(), "y", &[]).unwrap().sample.n_classes(), 3);
    }
}
