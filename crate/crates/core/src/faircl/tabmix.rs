//! TabMix: replace a random half of the non-sensitive columns of a row
//! with the values of another row.

use std::ops::Range;

use ndarray::{s, Array1, ArrayView1};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tabular::{ColumnCodec, FeatureEncoder};

/// Encoded-column spans that a perturbation may touch.
#[derive(Clone, Debug, PartialEq)]
pub struct MixLayout {
    pub width: usize,
    pub sensitive: Range<usize>,
    /// Non-sensitive column spans, in encoding order.
    pub columns: Vec<Range<usize>>,
    /// Subset of `columns` holding continuous values.
    pub continuous: Vec<bool>,
}

impl MixLayout {
    pub fn from_encoder(enc: &FeatureEncoder) -> Self {
        let feats: Vec<_> = enc.feature_columns().collect();
        MixLayout {
            width: enc.dim(),
            sensitive: enc.sensitive_span(),
            columns: feats.iter().map(|c| c.span.clone()).collect(),
            continuous: feats
                .iter()
                .map(|c| !matches!(c.codec, ColumnCodec::OneHot { .. }))
                .collect(),
        }
    }

    /// `k = ⌈columns / 2⌉`.
    pub fn replaced_count(&self) -> usize {
        self.columns.len().div_ceil(2)
    }
}

/// `true` keeps the anchor's value, `false` takes the partner's.
#[derive(Clone, Debug, PartialEq)]
pub struct MixMask {
    pub keep: Vec<bool>,
    pub k: usize,
}

impl MixMask {
    /// Replaces `k` non-sensitive columns chosen uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(layout: &MixLayout, rng: &mut R) -> Self {
        let k = layout.replaced_count();
        let mut keep = vec![true; layout.width];
        for c in sample(rng, layout.columns.len(), k) {
            keep[layout.columns[c].clone()].fill(false);
        }
        MixMask { keep, k }
    }

    pub fn all_keep(width: usize) -> Self {
        MixMask {
            keep: vec![true; width],
            k: 0,
        }
    }

    /// Mask is constant on each column span and keeps the sensitive span.
    pub fn validate(&self, layout: &MixLayout) -> Result<()> {
        if self.keep.len() != layout.width {
            return Err(Error::Shape(format!(
                "mask width {} for rows of width {}",
                self.keep.len(),
                layout.width
            )));
        }
        if !self.keep[layout.sensitive.clone()].iter().all(|&k| k) {
            return Err(Error::InvalidArgument("mask replaces the sensitive span".into()));
        }
        for span in &layout.columns {
            let seg = &self.keep[span.clone()];
            if seg.iter().any(|&k| k != seg[0]) {
                return Err(Error::InvalidArgument(format!("mask splits column span {span:?}")));
            }
        }
        Ok(())
    }
}

/// `m ⊙ x_i + (1 − m) ⊙ x_j`.
pub fn tabmix(
    anchor: ArrayView1<f64>,
    partner: ArrayView1<f64>,
    mask: &MixMask,
    layout: &MixLayout,
) -> Result<Array1<f64>> {
    if anchor.len() != partner.len() || anchor.len() != layout.width {
        return Err(Error::Shape(format!(
            "tabmix rows of width {} and {} for layout width {}",
            anchor.len(),
            partner.len(),
            layout.width
        )));
    }
    mask.validate(layout)?;
    Ok(Array1::from_shape_fn(anchor.len(), |j| {
        if mask.keep[j] {
            anchor[j]
        } else {
            partner[j]
        }
    }))
}

/// Ablation alternatives to TabMix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    TabMix,
    /// Adds N(0, 0.1²) to non-sensitive continuous columns.
    Gaussian,
    /// Zeroes half of the non-sensitive column spans.
    Dropout,
}

pub const GAUSSIAN_AUG_STD: f64 = 0.1;

impl Augmentation {
    /// Perturbs `anchor`. `partner` is only read by TabMix.
    pub fn apply<R: Rng + ?Sized>(
        self,
        anchor: ArrayView1<f64>,
        partner: ArrayView1<f64>,
        layout: &MixLayout,
        rng: &mut R,
    ) -> Result<Array1<f64>> {
        match self {
            Augmentation::TabMix => {
                let mask = MixMask::sample(layout, rng);
                tabmix(anchor, partner, &mask, layout)
            }
            Augmentation::Gaussian => {
                let noise = Normal::new(0.0, GAUSSIAN_AUG_STD).expect("valid std");
                let mut out = anchor.to_owned();
                for (span, &cont) in layout.columns.iter().zip(&layout.continuous) {
                    if cont {
                        for v in out.slice_mut(s![span.clone()]).iter_mut() {
                            *v += noise.sample(rng);
                        }
                    }
                }
                Ok(out)
            }
            Augmentation::Dropout => {
                let mask = MixMask::sample(layout, rng);
                let zeros = Array1::zeros(anchor.len());
                tabmix(anchor, zeros.view(), &mask, layout)
            }
        }
    }
}
