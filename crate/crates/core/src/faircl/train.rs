use std::collections::VecDeque;

use log::info;
use ndarray::{Array1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{objective_graph, LossToggles, PriorSpec, TrainBatch};
use super::stack::{EncoderSnapshot, EncoderStack, Representation, StackArchitecture};
use super::tabmix::{Augmentation, MixLayout};
use crate::cvae::CounterfactualGenerator;
use crate::error::{Error, Result};
use crate::neural::{AdamState, Matrix, ValueGraph};
use crate::tabular::{sample_group_batch, Dataset, EncodedDataset, FeatureEncoder, FitOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub n_projections: usize,
    /// Number of trailing epochs whose parameters are kept.
    pub snapshots: usize,
    pub augmentation: Augmentation,
    pub toggles: LossToggles,
    pub representation: Representation,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            weight_decay: 1e-6,
            hidden: 256,
            embed_dim: 32,
            n_projections: 50,
            snapshots: 10,
            augmentation: Augmentation::TabMix,
            toggles: LossToggles::default(),
            representation: Representation::default(),
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("hidden", self.hidden),
            ("embed_dim", self.embed_dim),
            ("n_projections", self.n_projections),
            ("snapshots", self.snapshots),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("encoder {name} must be positive")));
        }
        if self.batch_size < 2 && self.toggles.distribution {
            return Err(Error::InvalidArgument("the distribution term needs batch_size >= 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("encoder lr/weight_decay out of range".into()));
        }
        let t = self.toggles;
        if !(t.align || t.distribution || t.self_kd) {
            return Err(Error::InvalidArgument("every objective term is disabled".into()));
        }
        Ok(())
    }

    pub fn architecture(&self) -> StackArchitecture {
        StackArchitecture {
            hidden: self.hidden,
            embed_dim: self.embed_dim,
        }
    }

    pub fn prior(&self) -> PriorSpec {
        PriorSpec {
            n_projections: self.n_projections,
        }
    }
}

/// Per-epoch means over steps; disabled terms are recorded as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderEpoch {
    pub epoch: usize,
    pub align: f64,
    pub swd: f64,
    pub self_kd: f64,
    pub total: f64,
    /// Mean pairwise distance between per-group means of the served
    /// representation on the training set, measured after the epoch.
    pub group_mean_distance: f64,
}

pub struct EncoderRun {
    /// Oldest first; the last entry is the final epoch.
    pub snapshots: Vec<EncoderSnapshot>,
    pub history: Vec<EncoderEpoch>,
    /// Group mean distance before the first update.
    pub initial_group_distance: f64,
}

impl EncoderRun {
    pub fn last(&self) -> &EncoderSnapshot {
        self.snapshots.last().expect("at least one snapshot")
    }
}

/// Mean pairwise Euclidean distance between group centroids of `emb`.
pub fn group_mean_distance(emb: &Matrix, ed: &EncodedDataset) -> f64 {
    let means: Vec<Array1<f64>> = (0..ed.n_groups)
        .filter(|&s| !ed.members(s).is_empty())
        .map(|s| {
            emb.select(Axis(0), ed.members(s))
                .mean_axis(Axis(0))
                .expect("nonempty group")
        })
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d = &means[i] - &means[j];
            total += d.dot(&d).sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Fits the encoder-path codec on `train`, then trains a fresh stack.
pub fn fit_encoder_stack(
    train: &Dataset,
    generator: &CounterfactualGenerator,
    config: &EncoderConfig,
) -> Result<EncoderRun> {
    config.validate()?;
    generator.check_dataset(train)?;
    let features = FeatureEncoder::fit(train, FitOptions::encoder_path())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let stack = EncoderStack::new(features.dim(), &config.architecture(), &mut rng)?;
    train_encoder(stack, &features, train, generator, config, &mut rng)
}

/// Round-robin over sensitive groups: each step draws a same-group batch,
/// its counterfactual twins from `generator` and TabMix-perturbed copies,
/// then takes one Adam step on the combined objective. An epoch is
/// `⌈n / batch_size⌉` steps.
pub fn train_encoder<R: Rng + ?Sized>(
    mut stack: EncoderStack,
    features: &FeatureEncoder,
    train: &Dataset,
    generator: &CounterfactualGenerator,
    config: &EncoderConfig,
    rng: &mut R,
) -> Result<EncoderRun> {
    config.validate()?;
    if stack.in_dim() != features.dim() {
        return Err(Error::Shape(format!(
            "stack input {} but codec width {}",
            stack.in_dim(),
            features.dim()
        )));
    }
    if generator.group_names() != features.group_names() {
        return Err(Error::Schema("generator and encoder disagree on sensitive groups".into()));
    }
    let ed = features.encode(train)?;
    let n = ed.n();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two training rows".into()));
    }
    let layout = MixLayout::from_encoder(features);
    let prior = config.prior();
    let groups: Vec<usize> = (0..ed.n_groups).filter(|&s| !ed.members(s).is_empty()).collect();
    let steps = n.div_ceil(config.batch_size);
    let mut opt = AdamState::new(config.lr, config.weight_decay);
    let mut kept: VecDeque<EncoderSnapshot> = VecDeque::with_capacity(config.snapshots);
    let mut history = Vec::with_capacity(config.epochs);
    let initial_group_distance = group_mean_distance(&stack.represent(&ed.matrix, config.representation)?, &ed);
    let mut step_no = 0usize;

    for epoch in 1..=config.epochs {
        let mut sums = [0.0f64; 4];
        for step in 0..steps {
            let s = groups[step_no % groups.len()];
            step_no += 1;
            let gb = sample_group_batch(&ed, s, config.batch_size, rng)?;
            let x = ed.rows(&gb.indices);

            let x_cnt = if config.toggles.align {
                let rows: Vec<_> = gb.indices.iter().map(|&i| train.rows[i].clone()).collect();
                let (cf_rows, _) = generator.counterfactual_rows(&rows, rng)?;
                features.encode_rows(&cf_rows)?
            } else {
                x.clone()
            };

            let x_pert = if config.toggles.self_kd {
                let mut xp = Matrix::zeros(x.raw_dim());
                for (r, &i) in gb.indices.iter().enumerate() {
                    let j = (i + 1 + rng.random_range(0..n - 1)) % n;
                    let row = config
                        .augmentation
                        .apply(ed.matrix.row(i), ed.matrix.row(j), &layout, rng)?;
                    xp.row_mut(r).assign(&row);
                }
                xp
            } else {
                x.clone()
            };

            let draw = prior.draw(x.nrows(), stack.embed_dim, rng);
            let batch = TrainBatch { x, x_cnt, x_pert };
            let mut g = ValueGraph::new();
            let b = stack.bind(&mut g);
            let terms = objective_graph(&mut g, &stack, &b, &batch, &draw, config.toggles)?;
            let total = g.scalar(terms.total);
            if !total.is_finite() {
                let v = |t: Option<_>| t.map(|t| g.scalar(t));
                return Err(Error::NonFinite(format!(
                    "encoder loss {total} at epoch {epoch}, step {step} (group {s}): align {:?} swd {:?} self-kd {:?}",
                    v(terms.align),
                    v(terms.swd),
                    v(terms.self_kd)
                )));
            }
            let grads = g.backward(terms.total)?;
            let pg = b.grads(&grads);
            opt.step(stack.tensors_mut(), pg.iter().collect())?;
            for (k, t) in [terms.align, terms.swd, terms.self_kd].into_iter().enumerate() {
                sums[k] += t.map_or(0.0, |t| g.scalar(t));
            }
            sums[3] += total;
        }
        if !stack.all_finite() {
            return Err(Error::NonFinite(format!("encoder parameters after epoch {epoch}")));
        }
        let m = |k: usize| sums[k] / steps as f64;
        let row = EncoderEpoch {
            epoch,
            align: m(0),
            swd: m(1),
            self_kd: m(2),
            total: m(3),
            group_mean_distance: group_mean_distance(&stack.represent(&ed.matrix, config.representation)?, &ed),
        };
        if epoch == 1 || epoch % 20 == 0 || epoch == config.epochs {
            info!(
                "encoder epoch {epoch}: align {:.4} swd {:.4} self-kd {:.4} group distance {:.4}",
                row.align, row.swd, row.self_kd, row.group_mean_distance
            );
        }
        history.push(row);
        if epoch + config.snapshots > config.epochs {
            if kept.len() == config.snapshots {
                kept.pop_front();
            }
            kept.push_back(EncoderSnapshot {
                epoch,
                representation: config.representation,
                features: features.clone(),
                stack: stack.clone(),
            });
        }
    }
    Ok(EncoderRun {
        snapshots: kept.into(),
        history,
        initial_group_distance,
    })
}
