//! CSV dataset ingestion.
//!
//! One observation per row. A header row is optional for a single column
//! and required otherwise; `z` marks the covariate and `stratum` the
//! stratum label, any other name the observation.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Observation,
    Covariate,
    Stratum,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Column {
    pub name: String,
    pub role: Role,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rows: usize,
    pub columns: Vec<Column>,
}

fn role_of(name: &str) -> Role {
    match name.trim() {
        "z" => Role::Covariate,
        "stratum" => Role::Stratum,
        _ => Role::Observation,
    }
}

pub fn ingest_dataset(path: &Path) -> Result<Ingested> {
    let io = |e: std::io::Error| Error::Io {
        path: path.display().to_string(),
        source: e,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    ingest_reader(file, &path.display().to_string())
}

pub fn ingest_reader<R: std::io::Read>(reader: R, label: &str) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = Vec::new();
    for r in rdr.records() {
        records.push(r.map_err(|e| Error::InvalidData(format!("{label}: {e}")))?);
    }
    let Some(first) = records.first() else {
        return Err(Error::InvalidData(format!("{label}: empty file")));
    };
    let header = first.get(0).is_some_and(|c| c.parse::<f64>().is_err());
    let columns: Vec<Column> = if header {
        first
            .iter()
            .map(|c| Column { name: c.to_string(), role: role_of(c) })
            .collect()
    } else if first.len() == 1 {
        vec![Column { name: "x".into(), role: Role::Observation }]
    } else {
        return Err(Error::InvalidData(format!(
            "{label}: {} columns without a header row; name them (observation, `z`, `stratum`)",
            first.len()
        )));
    };
    for role in [Role::Observation, Role::Covariate, Role::Stratum] {
        let count = columns.iter().filter(|c| c.role == role).count();
        if count > 1 || (role == Role::Observation && count == 0) {
            return Err(Error::InvalidData(format!(
                "{label}: expected exactly one observation column and at most one `z` and one `stratum`"
            )));
        }
    }

    let body = &records[usize::from(header)..];
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(body.len()); columns.len()];
    for (i, rec) in body.iter().enumerate() {
        let row = i + 1 + usize::from(header);
        if rec.len() != columns.len() {
            return Err(Error::InvalidData(format!(
                "{label}: row {row} has {} cells, expected {}",
                rec.len(),
                columns.len()
            )));
        }
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::InvalidData(format!(
                    "{label}: row {row}, column `{}`: `{cell}` is not a number",
                    columns[j].name
                ))
            })?;
            cols[j].push(v);
        }
    }
    let take = |role: Role| columns.iter().position(|c| c.role == role).map(|j| cols[j].clone());
    let mut data = Dataset::new(take(Role::Observation).expect("checked"))
        .map_err(|e| Error::InvalidData(format!("{label}: {e}")))?;
    if let Some(z) = take(Role::Covariate) {
        data = data.with_covariates(z)?;
    }
    if let Some(s) = take(Role::Stratum) {
        let labels = s
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                    Ok(v as usize)
                } else {
                    Err(Error::InvalidData(format!(
                        "{label}: row {}, column `stratum`: `{v}` is not a non-negative integer",
                        i + 1 + usize::from(header)
                    )))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        data = data.with_strata(labels)?;
    }
    Ok(Ingested { rows: body.len(), dataset: data, columns })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(s: &str) -> Result<Ingested> {
        ingest_reader(s.as_bytes(), "test.csv")
    }

    #[test]
    fn single_column_without_header() {
        let d = ingest("1.2\n0.8\n2.0\n1.0\n").unwrap();
        assert_eq!(d.dataset.n(), 4);
        assert_eq!(d.columns[0].role, Role::Observation);
    }

    #[test]
    fn header_roles_and_strata() {
        let d = ingest("y,stratum\n1,0\n2,0\n3,1\n4,1\n").unwrap();
        assert_eq!(d.dataset.stratum_labels().unwrap(), &[0, 0, 1, 1]);
        assert_eq!(d.dataset.split_strata().unwrap().len(), 2);
        assert!(ingest("y,stratum\n1,0\n2,0\n3,1\n").is_err());
    }

    #[test]
    fn errors_cite_row_and_column() {
        let e = ingest("x\n1\nabc\n").unwrap_err().to_string();
        assert!(e.contains("row 3") && e.contains("`x`"), "{e}");
        assert!(ingest("x\n1\n").is_err());
        let e = ingest("x,z\n1,1\n2,1\n3,1\n").unwrap_err().to_string();
        assert!(e.contains("zero variance"), "{e}");
    }
}
