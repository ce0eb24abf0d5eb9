use log::info;
use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{CvaeArchitecture, CvaeLossWeights, CvaeModel, CvaeNoise, RowLayout};
use crate::error::{Error, Result};
use crate::neural::checkpoint::Checkpointable;
use crate::neural::{AdamState, Matrix, ValueGraph};
use crate::tabular::{Cell, ContinuousMode, Dataset, EncodedDataset, FeatureEncoder, FitOptions, Row};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub max_modes: usize,
    pub weights: CvaeLossWeights,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            epochs: 600,
            batch_size: 256,
            lr: 1e-3,
            weight_decay: 0.0,
            latent_dim: 16,
            hidden: 256,
            max_modes: 10,
            weights: CvaeLossWeights::default(),
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("latent_dim", self.latent_dim),
            ("hidden", self.hidden),
            ("max_modes", self.max_modes),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("generator {name} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("generator lr/weight_decay out of range".into()));
        }
        self.weights.validate()
    }

    pub fn architecture(&self) -> CvaeArchitecture {
        CvaeArchitecture {
            latent_dim: self.latent_dim,
            hidden: self.hidden,
        }
    }
}

/// Per-epoch means over batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEpoch {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub adv: f64,
    pub cyc: f64,
    pub total: f64,
    /// Discriminator accuracy on the epoch's latents, before its update.
    pub disc_accuracy: f64,
}

fn accuracy(logits: &Matrix, groups: &[usize]) -> f64 {
    let hits = logits
        .rows()
        .into_iter()
        .zip(groups)
        .filter(|(row, &s)| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best == s
        })
        .count();
    hits as f64 / groups.len().max(1) as f64
}

fn check_finite(value: f64, what: &str, epoch: usize, batch: usize) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("{what} = {value} at epoch {epoch}, batch {batch}")));
    }
    Ok(())
}

/// Alternating adversarial training. Per batch: one discriminator step on
/// detached latents, then one generator step on
/// `L_vae − L_adv + L_cyc` with the discriminator frozen.
pub fn train_generator<R: Rng + ?Sized>(
    model: &mut CvaeModel,
    ed: &EncodedDataset,
    config: &GeneratorConfig,
    rng: &mut R,
) -> Result<Vec<GeneratorEpoch>> {
    config.validate()?;
    if ed.width() != model.layout.width {
        return Err(Error::Shape(format!(
            "dataset width {} but generator expects {}",
            ed.width(),
            model.layout.width
        )));
    }
    let mut gen_opt = AdamState::new(config.lr, config.weight_decay);
    let mut disc_opt = AdamState::new(config.lr, config.weight_decay);
    let mut order: Vec<usize> = (0..ed.n()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(rng);
        let mut sums = [0.0f64; 6];
        let mut weight_total = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = ed.rows(chunk);
            let groups: Vec<usize> = chunk.iter().map(|&i| ed.sensitive[i]).collect();
            let noise = CvaeNoise::draw(chunk.len(), model.latent_dim, &groups, model.layout.n_groups, rng);

            // (a) discriminator on detached latents
            let (mu, logvar) = model.posterior(&x)?;
            let u = &mu + &(logvar.mapv(|v| (0.5 * v).exp()) * &noise.eps);
            let disc_acc = accuracy(&model.discriminate(&u)?, &groups);
            {
                let mut g = ValueGraph::new();
                let b = model.bind(&mut g, false, true);
                let uv = g.constant(u);
                let adv = model.adv_graph(&mut g, &b, uv, &groups)?;
                check_finite(g.scalar(adv), "discriminator loss", epoch, bi)?;
                let grads = g.backward(adv)?;
                let dgrads: Vec<Matrix> = b.discriminator.vars().iter().map(|&v| grads.wrt(v)).collect();
                disc_opt.step(model.discriminator.tensors_mut(), dgrads.iter().collect())?;
            }

            // (b) generator with the discriminator frozen
            let mut g = ValueGraph::new();
            let b = model.bind(&mut g, true, false);
            let terms = model.terms_graph(&mut g, &b, &x, &groups, &noise)?;
            let total = model.generator_objective(&mut g, &terms, &config.weights)?;
            check_finite(g.scalar(total), "generator loss", epoch, bi)?;
            let grads = g.backward(total)?;
            let ggrads = model.generator_grads(&b, &grads);
            gen_opt.step(model.generator_tensors_mut(), ggrads.iter().collect())?;

            let w = chunk.len() as f64;
            weight_total += w;
            for (k, v) in [
                g.scalar(terms.recon),
                g.scalar(terms.kl),
                g.scalar(terms.adv),
                g.scalar(terms.cyc),
                g.scalar(total),
                disc_acc,
            ]
            .into_iter()
            .enumerate()
            {
                sums[k] += w * v;
            }
        }
        let m = |k: usize| sums[k] / weight_total;
        let row = GeneratorEpoch {
            epoch,
            recon: m(0),
            kl: m(1),
            adv: m(2),
            cyc: m(3),
            total: m(4),
            disc_accuracy: m(5),
        };
        if epoch == 1 || epoch % 50 == 0 || epoch == config.epochs {
            info!(
                "generator epoch {epoch}: recon {:.4} kl {:.4} adv {:.4} cyc {:.4} disc acc {:.3}",
                row.recon, row.kl, row.adv, row.cyc, row.disc_accuracy
            );
        }
        history.push(row);
        if !model.all_finite() {
            return Err(Error::NonFinite(format!("generator parameters after epoch {epoch}")));
        }
    }
    Ok(history)
}

/// A trained C-VAE together with the feature codec it was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualGenerator {
    pub features: FeatureEncoder,
    pub model: CvaeModel,
    pub config: GeneratorConfig,
}

impl Checkpointable for CounterfactualGenerator {
    const KIND: &'static str = "cvae-generator";

    fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if RowLayout::from_encoder(&self.features) != self.model.layout {
            return Err(Error::Shape("generator layout does not match its feature codec".into()));
        }
        Ok(())
    }
}

impl CounterfactualGenerator {
    /// Fits the mode-specific codec on `ds`, then trains the C-VAE.
    pub fn fit(ds: &Dataset, config: &GeneratorConfig) -> Result<(Self, Vec<GeneratorEpoch>)> {
        config.validate()?;
        let features = FeatureEncoder::fit(ds, FitOptions::generator_path(config.max_modes))?;
        let ed = features.encode(ds)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut model = CvaeModel::new(RowLayout::from_encoder(&features), &config.architecture(), &mut rng)?;
        let history = train_generator(&mut model, &ed, config, &mut rng)?;
        Ok((
            CounterfactualGenerator {
                features,
                model,
                config: config.clone(),
            },
            history,
        ))
    }

    pub fn group_names(&self) -> &[String] {
        self.features.group_names()
    }

    /// Checks that `ds` can be encoded by this generator.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.schema.columns != self.features.schema.columns || ds.schema.sensitive != self.features.schema.sensitive {
            return Err(Error::Schema(
                "dataset schema does not match the generator's encoding".into(),
            ));
        }
        if self.features.options.continuous != ContinuousMode::ModeSpecific {
            log::warn!("generator codec is not mode-specific");
        }
        Ok(())
    }

    /// Counterfactual rows for `rows`, each flipped to a different group.
    /// Returns the decoded rows and the target group of each.
    pub fn counterfactual_rows<R: Rng + ?Sized>(
        &self,
        rows: &[Row],
        rng: &mut R,
    ) -> Result<(Vec<Row>, Vec<usize>)> {
        let x = self.features.encode_rows(rows)?;
        let si = self.features.schema.sensitive_index();
        let groups = rows
            .iter()
            .map(|r| match &r[si] {
                Cell::Cat(v) => self.features.group_id(v),
                other => Err(Error::Schema(format!("sensitive cell {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let (cf, targets) = self.model.flip(&x, &groups, rng)?;
        Ok((self.features.decode(&cf)?, targets))
    }

    /// Counterfactual twin of every row of `ds`, aligned row for row.
    pub fn counterfactual_dataset<R: Rng + ?Sized>(&self, ds: &Dataset, rng: &mut R) -> Result<Dataset> {
        self.check_dataset(ds)?;
        let (rows, _) = self.counterfactual_rows(&ds.rows, rng)?;
        Ok(Dataset {
            schema: ds.schema.clone(),
            rows,
        })
    }

    /// Row-wise latent means, for probing what the latent space retains.
    pub fn latent_means(&self, ds: &Dataset) -> Result<Matrix> {
        let x = self.features.encode_rows(&ds.rows)?;
        Ok(self.model.posterior(&x)?.0)
    }
}

/// Mean squared distance between `x` and its double flip, and between `x`
/// and a random other row. The first should be the smaller after training.
pub fn cycle_distances<R: Rng + ?Sized>(
    generator: &CounterfactualGenerator,
    ed: &EncodedDataset,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let model = &generator.model;
    let (cf, targets) = model.flip(&ed.matrix, &ed.sensitive, rng)?;
    let back = model.make_counterfactual(&cf, &targets, &ed.sensitive, rng)?;
    let n = ed.n();
    let cyc = (&back - &ed.matrix).mapv(|v| v * v).sum_axis(Axis(1)).mean().unwrap_or(0.0);
    let others: Vec<usize> = (0..n).map(|i| (i + 1 + rng.random_range(0..n - 1)) % n).collect();
    let shuffled = ed.matrix.select(Axis(0), &others);
    let rand = (&shuffled - &ed.matrix).mapv(|v| v * v).sum_axis(Axis(1)).mean().unwrap_or(0.0);
    Ok((cyc, rand))
}
