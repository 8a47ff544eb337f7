//! CSV ingestion: header row required, label column named `label`, all
//! other columns parsed as f64 features in header order.

use crate::datahub::LabeledDataset;
use crate::error::{CoreError, Result};
use crate::gradcore::Tensor;
use std::path::Path;

pub fn load_csv(path: &Path) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CoreError::Data(format!("{}: empty file", path.display())))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_col = columns
        .iter()
        .position(|c| *c == "label")
        .ok_or_else(|| {
            CoreError::Data(format!(
                "{}: header has no `label` column (found: {})",
                path.display(),
                header
            ))
        })?;
    let dim = columns.len() - 1;
    if dim == 0 {
        return Err(CoreError::Data(format!(
            "{}: no feature columns",
            path.display()
        )));
    }

    let mut features = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(CoreError::Data(format!(
                "{} line {}: expected {} fields, got {}",
                path.display(),
                lineno + 1,
                columns.len(),
                fields.len()
            )));
        }
        for (i, field) in fields.iter().enumerate() {
            if i == label_col {
                labels.push(field.parse().map_err(|_| {
                    CoreError::Data(format!(
                        "{} line {}: invalid label `{}`",
                        path.display(),
                        lineno + 1,
                        field
                    ))
                })?);
            } else {
                features.push(field.parse().map_err(|_| {
                    CoreError::Data(format!(
                        "{} line {}: invalid number `{}`",
                        path.display(),
                        lineno + 1,
                        field
                    ))
                })?);
            }
        }
    }
    let n = labels.len();
    let class_count = labels.iter().max().map(|&m| m as usize + 1).unwrap_or(2).max(2);
    let features = Tensor::new(vec![n, dim], features)?;
    LabeledDataset::new(features, labels, class_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_label_column_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x1,label,x2\n0.5,1,2.0\n-1.0,0,3.5\n").unwrap();
        let ds = load_csv(&p).unwrap();
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.features().shape(), &[2, 2]);
        assert_eq!(ds.features().data(), &[0.5, 2.0, -1.0, 3.5]);
    }

    #[test]
    fn missing_label_column_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x1,x2\n1,2\n").unwrap();
        assert!(load_csv(&p).unwrap_err().to_string().contains("label"));
    }
}
