//! Column codecs and the numeric encoding of whole datasets.

use std::ops::Range;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::dataset::{Cell, Dataset, Row};
use super::gmm::{self, Mode};
use super::schema::{ColumnKind, DatasetSchema, Task};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuousMode {
    Zscore,
    ModeSpecific,
}

/// Scale of the within-mode residual: `(x - mean) / std`.
const MODE_RESIDUAL_SCALE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "codec", rename_all = "snake_case")]
pub enum ColumnCodec {
    OneHot { vocab: Vec<String> },
    Zscore { mean: f64, std: f64 },
    ModeSpecific { modes: Vec<Mode> },
}

impl ColumnCodec {
    pub fn width(&self) -> usize {
        match self {
            ColumnCodec::OneHot { vocab } => vocab.len(),
            ColumnCodec::Zscore { .. } => 1,
            ColumnCodec::ModeSpecific { modes } => 1 + modes.len(),
        }
    }
}

/// How a run of encoded columns should be reconstructed: a categorical
/// segment is a probability simplex, a continuous one is real-valued.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Categorical,
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub range: Range<usize>,
    pub kind: SegmentKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnEncoding {
    pub name: String,
    /// Position in the schema.
    pub column: usize,
    pub span: Range<usize>,
    pub codec: ColumnCodec,
}

impl ColumnEncoding {
    pub fn segments(&self) -> Vec<Segment> {
        let start = self.span.start;
        match &self.codec {
            ColumnCodec::OneHot { .. } => vec![Segment {
                range: self.span.clone(),
                kind: SegmentKind::Categorical,
            }],
            ColumnCodec::Zscore { .. } => vec![Segment {
                range: self.span.clone(),
                kind: SegmentKind::Continuous,
            }],
            ColumnCodec::ModeSpecific { .. } => vec![
                Segment {
                    range: start..start + 1,
                    kind: SegmentKind::Continuous,
                },
                Segment {
                    range: start + 1..self.span.end,
                    kind: SegmentKind::Categorical,
                },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub continuous: ContinuousMode,
    pub max_modes: usize,
    /// Encode the target column as an ordinary feature.
    pub include_target: bool,
}

impl FitOptions {
    /// z-scored inputs for the embedding network; the target is withheld.
    pub fn encoder_path() -> Self {
        FitOptions {
            continuous: ContinuousMode::Zscore,
            max_modes: 1,
            include_target: false,
        }
    }

    /// Mode-specific inputs for the counterfactual generator, which also
    /// models the target so generated rows carry a consistent label.
    pub fn generator_path(max_modes: usize) -> Self {
        FitOptions {
            continuous: ContinuousMode::ModeSpecific,
            max_modes,
            include_target: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetCodec {
    /// Binary label; `positive` is the index into `vocab` mapped to 1.
    Binary { vocab: Vec<String>, positive: usize },
    Real,
}

/// Fitted per-column codecs. Encoded columns follow schema order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub schema: DatasetSchema,
    pub options: FitOptions,
    pub columns: Vec<ColumnEncoding>,
    pub target: Option<TargetCodec>,
    pub width: usize,
}

/// Numeric view of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    pub matrix: Array2<f64>,
    pub sensitive: Vec<usize>,
    pub targets: Option<Vec<f64>>,
    pub column_spans: Vec<(String, Range<usize>)>,
    pub n_groups: usize,
    group_members: Vec<Vec<usize>>,
}

impl EncodedDataset {
    pub fn new(
        matrix: Array2<f64>,
        sensitive: Vec<usize>,
        targets: Option<Vec<f64>>,
        column_spans: Vec<(String, Range<usize>)>,
        n_groups: usize,
    ) -> Result<Self> {
        if sensitive.len() != matrix.nrows() {
            return Err(Error::Shape(format!(
                "{} group labels for {} rows",
                sensitive.len(),
                matrix.nrows()
            )));
        }
        if let Some(t) = &targets {
            if t.len() != matrix.nrows() {
                return Err(Error::Shape(format!(
                    "{} targets for {} rows",
                    t.len(),
                    matrix.nrows()
                )));
            }
        }
        let mut group_members = vec![Vec::new(); n_groups];
        for (i, &s) in sensitive.iter().enumerate() {
            if s >= n_groups {
                return Err(Error::UnknownGroup(s.to_string()));
            }
            group_members[s].push(i);
        }
        Ok(EncodedDataset {
            matrix,
            sensitive,
            targets,
            column_spans,
            n_groups,
            group_members,
        })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn width(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn members(&self, group: usize) -> &[usize] {
        self.group_members.get(group).map_or(&[], Vec::as_slice)
    }

    pub fn rows(&self, indices: &[usize]) -> Array2<f64> {
        self.matrix.select(ndarray::Axis(0), indices)
    }

    pub fn subset(&self, indices: &[usize]) -> EncodedDataset {
        EncodedDataset::new(
            self.rows(indices),
            indices.iter().map(|&i| self.sensitive[i]).collect(),
            self.targets
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
            self.column_spans.clone(),
            self.n_groups,
        )
        .expect("subset of a valid dataset")
    }
}

fn continuous_values(ds: &Dataset, index: usize) -> Vec<f64> {
    ds.column_values(index).filter_map(Cell::as_num).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl FeatureEncoder {
    pub fn fit(ds: &Dataset, options: FitOptions) -> Result<Self> {
        if ds.n() == 0 {
            return Err(Error::InvalidArgument("cannot fit on an empty dataset".into()));
        }
        if options.max_modes == 0 {
            return Err(Error::InvalidArgument("max_modes must be at least 1".into()));
        }
        let schema = ds.schema.clone();
        let target_idx = schema.target_index();
        let mut columns = Vec::new();
        let mut offset = 0;
        for (ci, col) in schema.columns.iter().enumerate() {
            if Some(ci) == target_idx && !options.include_target {
                continue;
            }
            let is_sensitive = ci == schema.sensitive_index();
            let codec = match col.kind {
                ColumnKind::Categorical => ColumnCodec::OneHot {
                    vocab: ds.distinct(ci),
                },
                ColumnKind::Continuous if is_sensitive => unreachable!("validated schema"),
                ColumnKind::Continuous => {
                    let values = continuous_values(ds, ci);
                    match options.continuous {
                        ContinuousMode::Zscore => {
                            let n = values.len() as f64;
                            let mean = values.iter().sum::<f64>() / n;
                            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                            let std = var.sqrt();
                            if std <= 1e-12 * mean.abs().max(1.0) {
                                return Err(Error::ConstantColumn(col.name.clone()));
                            }
                            ColumnCodec::Zscore { mean, std }
                        }
                        ContinuousMode::ModeSpecific => ColumnCodec::ModeSpecific {
                            modes: gmm::fit_modes(&values, options.max_modes),
                        },
                    }
                }
            };
            let width = codec.width();
            columns.push(ColumnEncoding {
                name: col.name.clone(),
                column: ci,
                span: offset..offset + width,
                codec,
            });
            offset += width;
        }

        let target = match (target_idx, schema.task) {
            (None, _) => None,
            (Some(ti), Task::Classification) => {
                let vocab = ds.distinct(ti);
                if vocab.len() != 2 {
                    return Err(Error::Schema(format!(
                        "classification target {} has {} classes; expected 2",
                        schema.columns[ti].name,
                        vocab.len()
                    )));
                }
                let positive = match &schema.positive_label {
                    Some(p) => vocab.iter().position(|v| v == p).ok_or_else(|| {
                        Error::Schema(format!("positive label {p:?} not present in target"))
                    })?,
                    None => 1,
                };
                Some(TargetCodec::Binary { vocab, positive })
            }
            (Some(_), Task::Regression) => Some(TargetCodec::Real),
        };

        let enc = FeatureEncoder {
            schema,
            options,
            columns,
            target,
            width: offset,
        };
        if enc.group_names().len() < 2 {
            return Err(Error::Schema(format!(
                "sensitive column {} needs at least 2 groups",
                enc.schema.sensitive
            )));
        }
        Ok(enc)
    }

    /// Encoded width: the sum of per-column widths.
    pub fn dim(&self) -> usize {
        self.width
    }

    fn sensitive_encoding(&self) -> &ColumnEncoding {
        let si = self.schema.sensitive_index();
        self.columns
            .iter()
            .find(|c| c.column == si)
            .expect("sensitive column is always encoded")
    }

    pub fn group_names(&self) -> &[String] {
        match &self.sensitive_encoding().codec {
            ColumnCodec::OneHot { vocab } => vocab,
            _ => unreachable!("sensitive column is categorical"),
        }
    }

    pub fn n_groups(&self) -> usize {
        self.group_names().len()
    }

    pub fn group_id(&self, name: &str) -> Result<usize> {
        self.group_names()
            .iter()
            .position(|g| g == name)
            .ok_or_else(|| Error::UnknownGroup(name.to_owned()))
    }

    pub fn sensitive_span(&self) -> Range<usize> {
        self.sensitive_encoding().span.clone()
    }

    /// Column encodings other than the sensitive attribute.
    pub fn feature_columns(&self) -> impl Iterator<Item = &ColumnEncoding> {
        let si = self.schema.sensitive_index();
        self.columns.iter().filter(move |c| c.column != si)
    }

    pub fn segments(&self) -> Vec<Segment> {
        self.columns.iter().flat_map(|c| c.segments()).collect()
    }

    pub fn column_spans(&self) -> Vec<(String, Range<usize>)> {
        self.columns
            .iter()
            .map(|c| (c.name.clone(), c.span.clone()))
            .collect()
    }

    /// True when `other` encodes the same schema with the same categories.
    pub fn compatible_with(&self, other: &FeatureEncoder) -> bool {
        if self.schema.columns != other.schema.columns
            || self.schema.sensitive != other.schema.sensitive
            || self.group_names() != other.group_names()
        {
            return false;
        }
        self.columns.iter().all(|c| {
            let ColumnCodec::OneHot { vocab } = &c.codec else {
                return true;
            };
            other.columns.iter().find(|o| o.column == c.column).is_none_or(|o| {
                matches!(&o.codec, ColumnCodec::OneHot { vocab: v } if v == vocab)
            })
        })
    }

    fn encode_row_into(&self, row: &Row, out: &mut ndarray::ArrayViewMut1<f64>) -> Result<()> {
        for col in &self.columns {
            let cell = &row[col.column];
            let mut dst = out.slice_mut(s![col.span.clone()]);
            match (&col.codec, cell) {
                (ColumnCodec::OneHot { vocab }, Cell::Cat(v)) => {
                    let k = vocab.iter().position(|x| x == v).ok_or_else(|| {
                        Error::UnseenCategory {
                            column: col.name.clone(),
                            value: v.clone(),
                        }
                    })?;
                    dst.fill(0.0);
                    dst[k] = 1.0;
                }
                (ColumnCodec::Zscore { mean, std }, Cell::Num(x)) => {
                    dst[0] = (x - mean) / std;
                }
                (ColumnCodec::ModeSpecific { modes }, Cell::Num(x)) => {
                    let k = gmm::assign_mode(modes, *x);
                    dst.fill(0.0);
                    dst[0] = (x - modes[k].mean) / (MODE_RESIDUAL_SCALE * modes[k].std);
                    dst[1 + k] = 1.0;
                }
                (_, cell) => {
                    return Err(Error::Schema(format!(
                        "column {}: cell {cell:?} does not match its codec",
                        col.name
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn encode_rows(&self, rows: &[Row]) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((rows.len(), self.width));
        for (row, mut out) in rows.iter().zip(m.rows_mut()) {
            if row.len() != self.schema.columns.len() {
                return Err(Error::Shape(format!(
                    "row has {} cells, schema has {}",
                    row.len(),
                    self.schema.columns.len()
                )));
            }
            self.encode_row_into(row, &mut out)?;
        }
        Ok(m)
    }

    pub fn encode(&self, ds: &Dataset) -> Result<EncodedDataset> {
        if ds.schema.columns != self.schema.columns {
            return Err(Error::Schema("dataset columns differ from the fitted schema".into()));
        }
        let matrix = self.encode_rows(&ds.rows)?;
        let si = self.schema.sensitive_index();
        let sensitive = ds
            .rows
            .iter()
            .map(|r| match &r[si] {
                Cell::Cat(v) => self.group_id(v).map_err(|_| Error::UnseenCategory {
                    column: self.schema.sensitive.clone(),
                    value: v.clone(),
                }),
                other => Err(Error::Schema(format!("sensitive cell {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let targets = match (&self.target, self.schema.target_index()) {
            (Some(TargetCodec::Binary { vocab, positive }), Some(ti)) => Some(
                ds.rows
                    .iter()
                    .map(|r| {
                        let v = r[ti].as_cat().unwrap_or_default();
                        match vocab.iter().position(|x| x == v) {
                            Some(k) => Ok(if k == *positive { 1.0 } else { 0.0 }),
                            None => Err(Error::UnseenCategory {
                                column: self.schema.columns[ti].name.clone(),
                                value: v.to_owned(),
                            }),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
            (Some(TargetCodec::Real), Some(ti)) => Some(
                ds.rows
                    .iter()
                    .map(|r| r[ti].as_num().unwrap_or(f64::NAN))
                    .collect(),
            ),
            _ => None,
        };
        EncodedDataset::new(matrix, sensitive, targets, self.column_spans(), self.n_groups())
    }

    /// Inverts the encoding. One-hot spans decode by argmax (lowest index on
    /// ties), so soft outputs are accepted. Columns the encoder does not
    /// cover come back as [`Cell::Missing`].
    pub fn decode(&self, matrix: &Array2<f64>) -> Result<Vec<Row>> {
        if matrix.ncols() != self.width {
            return Err(Error::Shape(format!(
                "decode: width {} but encoder width is {}",
                matrix.ncols(),
                self.width
            )));
        }
        let mut rows = Vec::with_capacity(matrix.nrows());
        for src in matrix.rows() {
            let mut row = vec![Cell::Missing; self.schema.columns.len()];
            for col in &self.columns {
                let vals = src.slice(s![col.span.clone()]).to_vec();
                row[col.column] = match &col.codec {
                    ColumnCodec::OneHot { vocab } => Cell::Cat(vocab[argmax(&vals)].clone()),
                    ColumnCodec::Zscore { mean, std } => Cell::Num(mean + std * vals[0]),
                    ColumnCodec::ModeSpecific { modes } => {
                        let k = argmax(&vals[1..]);
                        Cell::Num(modes[k].mean + MODE_RESIDUAL_SCALE * modes[k].std * vals[0])
                    }
                };
            }
            rows.push(row);
        }
        Ok(rows)
    }
}

/// Fits on `ds` and encodes it.
pub fn fit_encoder(
    ds: &Dataset,
    continuous: ContinuousMode,
    max_modes: usize,
) -> Result<FeatureEncoder> {
    FeatureEncoder::fit(
        ds,
        FitOptions {
            continuous,
            max_modes,
            include_target: false,
        },
    )
}
