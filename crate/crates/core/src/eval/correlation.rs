//! Column-level association matrix of a dataset: Pearson between
//! continuous columns, Cramér's V between categorical ones, and Pearson on
//! label-encoded categories for mixed pairs.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tabular::{Cell, ColumnKind, Dataset};

enum Column {
    Num(Vec<f64>),
    /// Category codes with the vocabulary size.
    Cat(Vec<usize>, usize),
}

impl Column {
    fn as_numbers(&self) -> Vec<f64> {
        match self {
            Column::Num(v) => v.clone(),
            Column::Cat(codes, _) => codes.iter().map(|&c| c as f64).collect(),
        }
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Bias-uncorrected Cramér's V.
pub fn cramers_v(a: &[usize], ka: usize, b: &[usize], kb: usize) -> f64 {
    let n = a.len() as f64;
    let mut table = vec![vec![0.0; kb]; ka];
    let mut ra = vec![0.0; ka];
    let mut rb = vec![0.0; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
        ra[x] += 1.0;
        rb[y] += 1.0;
    }
    let mut chi2 = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let e = ra[i] * rb[j] / n;
            if e > 0.0 {
                chi2 += (table[i][j] - e) * (table[i][j] - e) / e;
            }
        }
    }
    let occupied = |r: &[f64]| r.iter().filter(|&&c| c > 0.0).count();
    let k = occupied(&ra).min(occupied(&rb));
    if k < 2 {
        return 0.0;
    }
    (chi2 / (n * (k - 1) as f64)).sqrt()
}

/// Association matrix over `columns`. Category codes index the sorted
/// vocabulary of `reference`, so two datasets compared against each other
/// share one encoding.
pub fn association_matrix(ds: &Dataset, reference: &Dataset, columns: &[String]) -> Result<Array2<f64>> {
    if ds.n() < 2 {
        return Err(Error::InvalidArgument("association needs at least two rows".into()));
    }
    let mut cols = Vec::with_capacity(columns.len());
    for name in columns {
        let idx = ds.schema.index_of(name).ok_or_else(|| Error::MissingColumn(name.clone()))?;
        let kind = ds.schema.columns[idx].kind;
        cols.push(match kind {
            ColumnKind::Continuous => Column::Num(
                ds.column_values(idx)
                    .map(|c| c.as_num().ok_or_else(|| Error::Schema(format!("column {name}: {c:?} is not numeric"))))
                    .collect::<Result<_>>()?,
            ),
            ColumnKind::Categorical => {
                let ridx = reference.schema.index_of(name).ok_or_else(|| Error::MissingColumn(name.clone()))?;
                let vocab: BTreeMap<String, usize> = reference
                    .distinct(ridx)
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| (v, i))
                    .collect();
                let codes = ds
                    .column_values(idx)
                    .map(|c| match c {
                        Cell::Cat(v) => vocab.get(v).copied().ok_or_else(|| Error::UnseenCategory {
                            column: name.clone(),
                            value: v.clone(),
                        }),
                        other => Err(Error::Schema(format!("column {name}: {other:?} is not a category"))),
                    })
                    .collect::<Result<_>>()?;
                Column::Cat(codes, vocab.len())
            }
        });
    }
    let k = cols.len();
    let mut m = Array2::eye(k);
    for i in 0..k {
        for j in i + 1..k {
            let v = match (&cols[i], &cols[j]) {
                (Column::Cat(a, ka), Column::Cat(b, kb)) => cramers_v(a, *ka, b, *kb),
                (a, b) => pearson(&a.as_numbers(), &b.as_numbers()),
            };
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    Ok(m)
}

/// Largest absolute entry difference between the association matrices of
/// `original` and `counterfactual` over every non-target column.
pub fn correlation_gap(original: &Dataset, counterfactual: &Dataset) -> Result<f64> {
    if original.schema.columns != counterfactual.schema.columns {
        return Err(Error::Schema("datasets have different columns".into()));
    }
    let target = original.schema.target.as_deref();
    let columns: Vec<String> = original
        .schema
        .columns
        .iter()
        .map(|c| c.name.clone())
        .filter(|n| Some(n.as_str()) != target)
        .collect();
    let a = association_matrix(original, original, &columns)?;
    let b = association_matrix(counterfactual, original, &columns)?;
    Ok((a - b).iter().fold(0.0f64, |m, v| m.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cramers_v_extremes() {
        let a = [0, 0, 1, 1, 2, 2];
        assert!((cramers_v(&a, 3, &a, 3) - 1.0).abs() < 1e-12);
        let b = [0, 1, 0, 1, 0, 1];
        let c = [0, 0, 1, 1, 0, 1];
        assert!(cramers_v(&[0, 0, 1, 1], 2, &[0, 1, 0, 1], 2).abs() < 1e-12);
        assert!(cramers_v(&b, 2, &c, 2) >= 0.0);
    }

    #[test]
    fn pearson_of_line_is_one() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[3.0, 2.0]), 0.0);
    }
}
