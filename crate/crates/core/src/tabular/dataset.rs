use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::path::Path;

use super::schema::{ColumnKind, DatasetSchema};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Cat(String),
    Num(f64),
    /// A column the producing codec does not cover.
    Missing,
}

impl Cell {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            Cell::Cat(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Cat(s) => f.write_str(s),
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Missing => Ok(()),
        }
    }
}

pub type Row = Vec<Cell>;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: DatasetSchema,
    pub rows: Vec<Row>,
}

impl Dataset {
    /// Builds a dataset, checking each row against the schema's column kinds.
    pub fn new(schema: DatasetSchema, rows: Vec<Row>) -> Result<Self> {
        schema.validate()?;
        if rows.is_empty() {
            return Err(Error::InvalidArgument("dataset has no rows".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.columns.len() {
                return Err(Error::Shape(format!(
                    "row {i} has {} cells, schema has {} columns",
                    row.len(),
                    schema.columns.len()
                )));
            }
            for (cell, col) in row.iter().zip(&schema.columns) {
                let ok = matches!(
                    (cell, col.kind),
                    (Cell::Cat(_), ColumnKind::Categorical) | (Cell::Num(_), ColumnKind::Continuous)
                );
                if !ok {
                    return Err(Error::Schema(format!(
                        "row {i}: cell {cell:?} does not match {:?} column {}",
                        col.kind, col.name
                    )));
                }
            }
        }
        Ok(Dataset { schema, rows })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn column_values(&self, index: usize) -> impl Iterator<Item = &Cell> {
        self.rows.iter().map(move |r| &r[index])
    }

    /// Sorted distinct values of a categorical column.
    pub fn distinct(&self, index: usize) -> Vec<String> {
        let set: BTreeSet<&str> = self.column_values(index).filter_map(Cell::as_cat).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Checks that the sensitive column holds at least two groups.
    pub fn check_groups(&self) -> Result<()> {
        let groups = self.distinct(self.schema.sensitive_index());
        if groups.len() < 2 {
            return Err(Error::Schema(format!(
                "sensitive column {} has {} distinct value(s); need at least 2",
                self.schema.sensitive,
                groups.len()
            )));
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

/// Reads an RFC-4180 CSV whose header names every schema column. Extra
/// columns are ignored; column order follows the schema.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<Dataset> {
    schema.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile(path.to_owned()));
    }
    let positions = schema
        .columns
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c.name)
                .ok_or_else(|| Error::MissingColumn(c.name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let row = schema
            .columns
            .iter()
            .zip(&positions)
            .map(|(col, &p)| {
                let raw = record.get(p).unwrap_or("");
                match col.kind {
                    ColumnKind::Categorical => Ok(Cell::Cat(raw.to_owned())),
                    ColumnKind::Continuous => raw
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(Cell::Num)
                        .ok_or_else(|| Error::Parse {
                            row: row_no,
                            column: col.name.clone(),
                            value: raw.to_owned(),
                        }),
                }
            })
            .collect::<Result<Row>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_owned()));
    }
    Dataset::new(schema.clone(), rows)
}

pub fn write_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(ds.schema.columns.iter().map(|c| c.name.as_str()))?;
    for row in &ds.rows {
        w.write_record(row.iter().map(|c| c.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
