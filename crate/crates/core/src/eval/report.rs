use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{auc, delta_cp, delta_dp, delta_eo, density_data, hard_predictions, leakage_auc, rmse, DensityData};
use super::probe::{ProbeConfig, ProbeKind};
use crate::cvae::CounterfactualGenerator;
use crate::error::{Error, Result};
use crate::faircl::EncoderSnapshot;
use crate::tabular::{Dataset, EncodedDataset, FeatureEncoder, FitOptions, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub probe: ProbeConfig,
    pub density_bins: usize,
    /// Seeds counterfactual sampling and the leakage split.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            probe: ProbeConfig::default(),
            density_bins: 20,
            seed: 0,
        }
    }
}

/// One evaluated representation. `auc`/`delta_eo` are set for
/// classification, `rmse` for regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub auc: Option<f64>,
    pub rmse: Option<f64>,
    pub delta_dp: f64,
    pub delta_eo: Option<f64>,
    pub delta_cp: f64,
    pub leakage_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
}

fn mean_of(rows: &[MetricRow], f: impl Fn(&MetricRow) -> Option<f64>) -> Option<f64> {
    let vals: Option<Vec<f64>> = rows.iter().map(f).collect();
    vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricsReport {
    pub fn new(task: Task, rows: Vec<MetricRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("metrics report needs at least one row".into()));
        }
        let mean = MetricRow {
            label: "mean".into(),
            auc: mean_of(&rows, |r| r.auc),
            rmse: mean_of(&rows, |r| r.rmse),
            delta_dp: mean_of(&rows, |r| Some(r.delta_dp)).expect("nonempty"),
            delta_eo: mean_of(&rows, |r| r.delta_eo),
            delta_cp: mean_of(&rows, |r| Some(r.delta_cp)).expect("nonempty"),
            leakage_auc: mean_of(&rows, |r| Some(r.leakage_auc)).expect("nonempty"),
        };
        Ok(MetricsReport { task, rows, mean })
    }

    /// CSV header for this task.
    pub fn columns(&self) -> Vec<&'static str> {
        match self.task {
            Task::Classification => vec!["snapshot", "auc", "delta_dp", "delta_eo", "delta_cp", "leakage_auc"],
            Task::Regression => vec!["snapshot", "rmse", "delta_dp", "delta_cp", "leakage_auc"],
        }
    }

    fn cells(&self, r: &MetricRow) -> Vec<String> {
        let f = |v: f64| format!("{v}");
        let o = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), f);
        match self.task {
            Task::Classification => vec![
                r.label.clone(),
                o(r.auc),
                f(r.delta_dp),
                o(r.delta_eo),
                f(r.delta_cp),
                f(r.leakage_auc),
            ],
            Task::Regression => vec![r.label.clone(), o(r.rmse), f(r.delta_dp), f(r.delta_cp), f(r.leakage_auc)],
        }
    }

    /// One line per snapshot followed by the mean row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.columns())?;
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            w.write_record(self.cells(r))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io {
            path: "<memory>".into(),
            source: e.into_error(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn summary(&self) -> String {
        let m = &self.mean;
        let mut s = String::new();
        let _ = writeln!(s, "snapshots: {}", self.rows.len());
        match self.task {
            Task::Classification => {
                let _ = writeln!(s, "auc:         {:.4}", m.auc.unwrap_or(f64::NAN));
                let _ = writeln!(s, "delta_dp:    {:.4}", m.delta_dp);
                let _ = writeln!(s, "delta_eo:    {:.4}", m.delta_eo.unwrap_or(f64::NAN));
            }
            Task::Regression => {
                let _ = writeln!(s, "rmse:        {:.4}", m.rmse.unwrap_or(f64::NAN));
                let _ = writeln!(s, "delta_dp:    {:.4}", m.delta_dp);
            }
        }
        let _ = writeln!(s, "delta_cp:    {:.4}", m.delta_cp);
        let _ = writeln!(s, "leakage_auc: {:.4}", m.leakage_auc);
        s
    }
}

/// Report plus the final representation's test-set prediction density.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub density: Option<DensityData>,
    pub group_names: Vec<String>,
}

/// Inputs to one probe evaluation, all already in representation space.
struct Split<'a> {
    train_x: Array2<f64>,
    train_y: &'a [f64],
    test_x: Array2<f64>,
    test_y: &'a [f64],
    test_groups: &'a [usize],
    cf_x: Array2<f64>,
    leak_x: Array2<f64>,
}

fn targets_of(ed: &EncodedDataset) -> Result<&[f64]> {
    ed.targets
        .as_deref()
        .ok_or_else(|| Error::Schema("evaluation needs a target column".into()))
}

fn score(label: String, task: Task, s: Split, cfg: &EvalConfig) -> Result<(MetricRow, Vec<f64>)> {
    let kind = match task {
        Task::Classification => ProbeKind::Logistic,
        Task::Regression => ProbeKind::Ridge,
    };
    let probe = cfg.probe.fit(kind, &s.train_x, s.train_y)?;
    let pred = probe.predict(&s.test_x)?;
    let pred_cf = probe.predict(&s.cf_x)?;
    let leakage = leakage_auc(&s.leak_x, s.test_groups, &cfg.probe, cfg.seed)?;
    let row = match task {
        Task::Classification => {
            let hard = hard_predictions(&pred);
            MetricRow {
                label,
                auc: Some(auc(&pred, s.test_y)?),
                rmse: None,
                delta_dp: delta_dp(&hard, s.test_groups)?,
                delta_eo: Some(delta_eo(&hard, s.test_y, s.test_groups)?),
                delta_cp: delta_cp(&pred, &pred_cf)?,
                leakage_auc: leakage,
            }
        }
        Task::Regression => MetricRow {
            label,
            auc: None,
            rmse: Some(rmse(&pred, s.test_y)?),
            delta_dp: delta_dp(&pred, s.test_groups)?,
            delta_eo: None,
            delta_cp: delta_cp(&pred, &pred_cf)?,
            leakage_auc: leakage,
        },
    };
    Ok((row, pred))
}

fn counterfactual_test(generator: &CounterfactualGenerator, test: &Dataset, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generator.counterfactual_dataset(test, &mut rng)
}

fn finish(task: Task, rows: Vec<MetricRow>, last_pred: Vec<f64>, test: &EncodedDataset, names: &[String], cfg: &EvalConfig) -> Result<Evaluation> {
    let density = match task {
        Task::Classification => Some(density_data(&last_pred, &test.sensitive, test.n_groups, cfg.density_bins)?),
        Task::Regression => None,
    };
    Ok(Evaluation {
        report: MetricsReport::new(task, rows)?,
        density,
        group_names: names.to_vec(),
    })
}

/// Fits a probe on each snapshot's train embeddings and scores it on the
/// test embeddings; one row per snapshot plus their mean.
pub fn evaluate_run(
    snapshots: &[EncoderSnapshot],
    train: &Dataset,
    test: &Dataset,
    generator: &CounterfactualGenerator,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    let first = snapshots
        .first()
        .ok_or_else(|| Error::InvalidArgument("no encoder snapshots to evaluate".into()))?;
    generator.check_dataset(test)?;
    for s in snapshots {
        if s.features.schema.columns != generator.features.schema.columns
            || s.features.group_names() != generator.group_names()
        {
            return Err(Error::Schema(format!(
                "snapshot of epoch {} does not match the generator's encoding",
                s.epoch
            )));
        }
    }
    let task = first.features.schema.task;
    let cf = counterfactual_test(generator, test, cfg.seed)?;
    let mut rows = Vec::with_capacity(snapshots.len());
    let mut last = (Vec::new(), None);
    for snap in snapshots {
        let etr = snap.features.encode(train)?;
        let ete = snap.features.encode(test)?;
        let test_x = snap.embed(&ete.matrix)?;
        let split = Split {
            train_x: snap.embed(&etr.matrix)?,
            train_y: targets_of(&etr)?,
            leak_x: test_x.clone(),
            test_x,
            test_y: targets_of(&ete)?,
            test_groups: &ete.sensitive,
            cf_x: snap.embed_dataset(&cf)?,
        };
        let (row, pred) = score(format!("epoch_{}", snap.epoch), task, split, cfg)?;
        rows.push(row);
        last = (pred, Some(ete));
    }
    let ete = last.1.expect("at least one snapshot");
    finish(task, rows, last.0, &ete, first.features.group_names(), cfg)
}

/// Probe directly on the encoded inputs. Leakage is measured on the
/// non-sensitive columns only.
pub fn evaluate_raw(
    train: &Dataset,
    test: &Dataset,
    generator: &CounterfactualGenerator,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    generator.check_dataset(test)?;
    let features = FeatureEncoder::fit(train, FitOptions::encoder_path())?;
    let etr = features.encode(train)?;
    let ete = features.encode(test)?;
    let cf = counterfactual_test(generator, test, cfg.seed)?;
    let span = features.sensitive_span();
    let keep: Vec<usize> = (0..features.dim()).filter(|j| !span.contains(j)).collect();
    let task = features.schema.task;
    let split = Split {
        train_x: etr.matrix.clone(),
        train_y: targets_of(&etr)?,
        test_x: ete.matrix.clone(),
        test_y: targets_of(&ete)?,
        test_groups: &ete.sensitive,
        cf_x: features.encode_rows(&cf.rows)?,
        leak_x: ete.matrix.select(Axis(1), &keep),
    };
    let (row, pred) = score("raw".into(), task, split, cfg)?;
    finish(task, vec![row], pred, &ete, features.group_names(), cfg)
}
