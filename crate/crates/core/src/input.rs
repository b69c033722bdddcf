//! CSV ingestion. The header names the columns; the caller says which one is
//! the response and which are categorical (optionally with an explicit
//! baseline label) or continuous. Undeclared columns are ignored. Records
//! with an empty cell in a declared column are rejected.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{CategoricalCovariate, ContinuousCovariate, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub response: String,
    pub categorical: Vec<CategoricalColumn>,
    #[serde(default)]
    pub continuous: Vec<String>,
}

pub fn read_csv_path(path: &Path, spec: &ColumnSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, spec)
}

pub fn read_csv<R: Read>(reader: R, spec: &ColumnSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let response_idx = find(&spec.response)?;
    let cat_idx = spec
        .categorical
        .iter()
        .map(|c| find(&c.name))
        .collect::<Result<Vec<_>>>()?;
    let cont_idx = spec
        .continuous
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut response = Vec::new();
    let mut cat_labels: Vec<Vec<String>> = vec![Vec::new(); cat_idx.len()];
    let mut cont_values: Vec<Vec<f64>> = vec![Vec::new(); cont_idx.len()];

    let numeric = |record: usize, column: &str, raw: &str| -> Result<f64> {
        raw.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::ParseValue {
                record,
                column: column.to_string(),
                value: raw.to_string(),
            })
    };

    for (record, row) in rdr.records().enumerate() {
        let row = row?;
        let cell = |idx: usize, column: &str| -> Result<&str> {
            match row.get(idx) {
                Some(v) if !v.is_empty() && v != "NA" => Ok(v),
                _ => Err(Error::MissingValue {
                    record,
                    column: column.to_string(),
                }),
            }
        };
        response.push(numeric(record, &spec.response, cell(response_idx, &spec.response)?)?);
        for (k, (&idx, col)) in cat_idx.iter().zip(&spec.categorical).enumerate() {
            cat_labels[k].push(cell(idx, &col.name)?.to_string());
        }
        for (k, (&idx, col)) in cont_idx.iter().zip(&spec.continuous).enumerate() {
            cont_values[k].push(numeric(record, col, cell(idx, col)?)?);
        }
    }
    if response.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let categorical = spec
        .categorical
        .iter()
        .zip(cat_labels)
        .map(|(col, labels)| {
            CategoricalCovariate::from_labels(col.name.clone(), &labels, col.baseline.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    let continuous = spec
        .continuous
        .iter()
        .zip(cont_values)
        .map(|(name, values)| ContinuousCovariate::new(name.clone(), values))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(response, categorical, continuous)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ColumnSpec {
        ColumnSpec {
            response: "y".into(),
            categorical: vec![CategoricalColumn {
                name: "state".into(),
                baseline: Some("b".into()),
            }],
            continuous: vec!["age".into()],
        }
    }

    #[test]
    fn reads_declared_columns() {
        let csv = "y,state,age,ignored\n1.0,a,30,x\n2.0,b,40,y\n3.5,c,50,z\n";
        let data = read_csv(csv.as_bytes(), &spec()).unwrap();
        assert_eq!(data.response(), [1.0, 2.0, 3.5]);
        let state = &data.categorical()[0];
        assert_eq!(state.levels(), ["a", "b", "c"]);
        assert_eq!(state.baseline(), 1);
        assert_eq!(data.continuous()[0].values(), [30.0, 40.0, 50.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "resp,state,age\n1,a,3\n";
        match read_csv(csv.as_bytes(), &spec()) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "y"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_cells_are_rejected() {
        let csv = "y,state,age\n1,a,3\n2,,4\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &spec()),
            Err(Error::MissingValue { record: 1, .. })
        ));
    }
}
