//! Synthetic biased benchmark with a known causal structure.
//!
//! Each row draws latent traits `u ~ N(0, I_4)` and a group `s` (F or M,
//! signed -1/+1). Observables are `A·u + bias·b·s + noise`, one of them
//! binned into a categorical grade and one made bimodal; the label is
//! `1[w·u + bias·s + noise > 0]`. Because `u` and the noise are recorded,
//! the exact counterfactual of any row (same `u`, flipped `s`) is known.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::dataset::{Cell, Dataset, Row};
use super::schema::{ColumnDef, ColumnKind, DatasetSchema, Task};
use crate::error::{Error, Result};

pub const LATENT_DIM: usize = 4;
const N_OBSERVED: usize = 7;
const NOISE_STD: f64 = 0.3;

const MIXING: [[f64; LATENT_DIM]; N_OBSERVED] = [
    [0.9, 0.3, 0.0, 0.0],
    [0.0, 0.8, 0.4, 0.0],
    [0.2, 0.0, 0.9, 0.1],
    [0.0, 0.1, 0.3, 0.9],
    [0.5, 0.5, 0.0, -0.4],
    [0.0, 0.0, 0.5, 0.5],
    [0.4, -0.3, 0.5, 0.3],
];
const GROUP_SHIFT: [f64; N_OBSERVED] = [0.3, -0.25, 0.2, 0.3, -0.2, 0.25, 0.3];
const LABEL_WEIGHTS: [f64; LATENT_DIM] = [0.8, -0.5, 0.6, 0.4];
/// Separation of the two modes of the bimodal column `f5`.
const BIMODAL_GAP: f64 = 2.5;

pub const GROUPS: [&str; 2] = ["F", "M"];

pub fn synth_schema() -> DatasetSchema {
    let mut columns: Vec<ColumnDef> = (0..6)
        .map(|k| ColumnDef::new(format!("f{k}"), ColumnKind::Continuous))
        .collect();
    columns.push(ColumnDef::new("grade", ColumnKind::Categorical));
    columns.push(ColumnDef::new("gender", ColumnKind::Categorical));
    columns.push(ColumnDef::new("label", ColumnKind::Categorical));
    DatasetSchema {
        sensitive: "gender".into(),
        target: Some("label".into()),
        task: Task::Classification,
        positive_label: Some("1".into()),
        columns,
    }
}

/// Exogenous draws for one row.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthLatent {
    pub u: [f64; LATENT_DIM],
    pub noise: [f64; N_OBSERVED],
    pub label_noise: f64,
    /// Index into [`GROUPS`].
    pub group: usize,
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub dataset: Dataset,
    pub latents: Vec<SynthLatent>,
    pub bias: f64,
}

impl SynthData {
    /// Rows regenerated from the same exogenous draws with each group flipped.
    pub fn true_counterfactuals(&self) -> Dataset {
        let rows = self
            .latents
            .iter()
            .map(|l| {
                let flipped = SynthLatent {
                    group: 1 - l.group,
                    ..l.clone()
                };
                render_row(&flipped, self.bias)
            })
            .collect();
        Dataset {
            schema: self.dataset.schema.clone(),
            rows,
        }
    }
}

fn render_row(l: &SynthLatent, bias: f64) -> Row {
    let sign = if l.group == 1 { 1.0 } else { -1.0 };
    let mut obs = [0.0; N_OBSERVED];
    for (k, o) in obs.iter_mut().enumerate() {
        let mixed: f64 = MIXING[k].iter().zip(&l.u).map(|(a, u)| a * u).sum();
        *o = mixed + bias * GROUP_SHIFT[k] * sign + NOISE_STD * l.noise[k];
    }
    obs[5] += BIMODAL_GAP * l.u[1].signum();

    let mut row: Row = obs[..6].iter().map(|&v| Cell::Num(v)).collect();
    let grade = if obs[6] < -0.5 {
        "low"
    } else if obs[6] < 0.5 {
        "mid"
    } else {
        "high"
    };
    row.push(Cell::Cat(grade.into()));
    row.push(Cell::Cat(GROUPS[l.group].into()));
    let score: f64 = LABEL_WEIGHTS.iter().zip(&l.u).map(|(w, u)| w * u).sum::<f64>()
        + bias * sign
        + NOISE_STD * l.label_noise;
    row.push(Cell::Cat(if score > 0.0 { "1" } else { "0" }.into()));
    row
}

pub fn synth_generate_with_truth(n: usize, bias: f64, seed: u64) -> Result<SynthData> {
    if n < 10 {
        return Err(Error::InvalidArgument("n < 10".into()));
    }
    if !bias.is_finite() {
        return Err(Error::InvalidArgument(format!("bias {bias} is not finite")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latents: Vec<SynthLatent> = (0..n)
        .map(|_| {
            let mut u = [0.0; LATENT_DIM];
            u.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let mut noise = [0.0; N_OBSERVED];
            noise.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            SynthLatent {
                u,
                noise,
                label_noise: rng.sample(StandardNormal),
                group: usize::from(rng.random_bool(0.5)),
            }
        })
        .collect();
    let rows = latents.iter().map(|l| render_row(l, bias)).collect();
    let dataset = Dataset::new(synth_schema(), rows)?;
    dataset.check_groups()?;
    Ok(SynthData {
        dataset,
        latents,
        bias,
    })
}

/// Synthetic classification dataset; `bias` scales how strongly the group
/// shifts both the features and the label.
pub fn synth_generate(n: usize, bias: f64, seed: u64) -> Result<Dataset> {
    Ok(synth_generate_with_truth(n, bias, seed)?.dataset)
}
