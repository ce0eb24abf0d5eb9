use std::collections::BTreeMap;

use log::warn;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::probe::ProbeConfig;
use crate::error::{Error, Result};

/// Hard decision at probability 0.5.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub fn hard_predictions(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .map(|&p| if p >= DECISION_THRESHOLD { 1.0 } else { 0.0 })
        .collect()
}

/// Area under the ROC curve: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`, via ranks.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.iter().filter(|&&y| y == 0.0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::InvalidArgument("auc labels must be 0 or 1".into()));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("auc needs both classes present".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("auc scores contain NaN".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // mid-ranks over tie blocks, doubled to stay integral
    let mut pos_rank2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let rank2 = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] == 1.0 {
                pos_rank2 += rank2;
            }
        }
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    let u2 = pos_rank2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!("{} preds, {} targets", preds.len(), targets.len())));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty input".into()));
    }
    let mse = preds.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64;
    Ok(mse.sqrt())
}

fn group_means<'a>(values: impl Iterator<Item = (usize, f64)> + 'a) -> BTreeMap<usize, f64> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (g, v) in values {
        let e = acc.entry(g).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(g, (s, c))| (g, s / c as f64)).collect()
}

fn mean_pairwise_gap(means: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            total += (means[i] - means[j]).abs();
            pairs += 1;
        }
    }
    total / pairs as f64
}

/// Mean over unordered pairs of present groups of the gap in mean
/// prediction. With hard 0/1 predictions this is the positive-rate gap.
pub fn delta_dp(preds: &[f64], groups: &[usize]) -> Result<f64> {
    if preds.len() != groups.len() {
        return Err(Error::Shape(format!("{} preds, {} groups", preds.len(), groups.len())));
    }
    let means: Vec<f64> = group_means(groups.iter().copied().zip(preds.iter().copied()))
        .into_values()
        .collect();
    if means.len() < 2 {
        return Err(Error::InvalidArgument("delta_dp needs at least two groups".into()));
    }
    Ok(mean_pairwise_gap(&means))
}

/// Positive-rate gap conditioned on the true label, averaged over group
/// pairs and over `y ∈ {0, 1}`. Pairs with an empty `(group, y)` cell are
/// skipped with a warning.
pub fn delta_eo(preds: &[f64], labels: &[f64], groups: &[usize]) -> Result<f64> {
    if preds.len() != groups.len() || labels.len() != groups.len() {
        return Err(Error::Shape(format!(
            "{} preds, {} labels, {} groups",
            preds.len(),
            labels.len(),
            groups.len()
        )));
    }
    let present: Vec<usize> = group_means(groups.iter().map(|&g| (g, 0.0))).into_keys().collect();
    if present.len() < 2 {
        return Err(Error::InvalidArgument("delta_eo needs at least two groups".into()));
    }
    let mut total = 0.0;
    let mut terms = 0usize;
    for y in [0.0, 1.0] {
        let rates = group_means(
            groups
                .iter()
                .zip(labels)
                .zip(preds)
                .filter(|((_, &l), _)| l == y)
                .map(|((&g, _), &p)| (g, p)),
        );
        for (i, a) in present.iter().enumerate() {
            for b in &present[i + 1..] {
                match (rates.get(a), rates.get(b)) {
                    (Some(ra), Some(rb)) => {
                        total += (ra - rb).abs();
                        terms += 1;
                    }
                    _ => warn!("delta_eo: empty cell for groups ({a}, {b}) at y = {y}; skipped"),
                }
            }
        }
    }
    if terms == 0 {
        warn!("delta_eo: every (group, label) pair had an empty cell");
        return Ok(0.0);
    }
    Ok(total / terms as f64)
}

/// Mean absolute change in prediction between each row and its twin.
pub fn delta_cp(original: &[f64], counterfactual: &[f64]) -> Result<f64> {
    if original.len() != counterfactual.len() {
        return Err(Error::Shape(format!(
            "{} original vs {} counterfactual predictions",
            original.len(),
            counterfactual.len()
        )));
    }
    if original.is_empty() {
        return Ok(0.0);
    }
    Ok(original
        .iter()
        .zip(counterfactual)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / original.len() as f64)
}

/// Share of the leakage split used for fitting.
pub const LEAKAGE_TRAIN_FRACTION: f64 = 2.0 / 3.0;

/// Held-out AUC of a logistic probe predicting the sensitive group from
/// `x`. The split is stratified by group; with more than two groups the
/// one-vs-rest AUCs are averaged.
pub fn leakage_auc(x: &Array2<f64>, groups: &[usize], probe: &ProbeConfig, seed: u64) -> Result<f64> {
    if x.nrows() != groups.len() {
        return Err(Error::Shape(format!("{} rows, {} groups", x.nrows(), groups.len())));
    }
    let mut by_group: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    if by_group.len() < 2 {
        return Err(Error::InvalidArgument("leakage needs at least two groups".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (g, mut members) in by_group.clone() {
        if members.len() < 2 {
            return Err(Error::InvalidArgument(format!("group {g} has fewer than two rows")));
        }
        members.shuffle(&mut rng);
        let k = ((members.len() as f64 * LEAKAGE_TRAIN_FRACTION).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[k..]);
        train.extend_from_slice(&members[..k]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let xtr = x.select(ndarray::Axis(0), &train);
    let xte = x.select(ndarray::Axis(0), &test);
    let classes: Vec<usize> = by_group.into_keys().collect();
    let targets: &[usize] = if classes.len() == 2 { &classes[1..] } else { &classes };
    let mut total = 0.0;
    for &c in targets {
        let ytr: Vec<f64> = train.iter().map(|&i| (groups[i] == c) as u8 as f64).collect();
        let yte: Vec<f64> = test.iter().map(|&i| (groups[i] == c) as u8 as f64).collect();
        let model = probe.fit(super::probe::ProbeKind::Logistic, &xtr, &ytr)?;
        total += auc(&model.predict(&xte)?, &yte)?;
    }
    Ok(total / targets.len() as f64)
}

/// Per-group normalized histograms of predictions over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityData {
    pub edges: Vec<f64>,
    /// `(group id, bin masses summing to 1)`, by group id.
    pub groups: Vec<(usize, Vec<f64>)>,
}

pub fn density_data(preds: &[f64], groups: &[usize], n_groups: usize, n_bins: usize) -> Result<DensityData> {
    if n_bins < 2 {
        return Err(Error::InvalidArgument("density needs at least two bins".into()));
    }
    if preds.len() != groups.len() {
        return Err(Error::Shape(format!("{} preds, {} groups", preds.len(), groups.len())));
    }
    let mut counts = vec![vec![0.0; n_bins]; n_groups];
    let mut sizes = vec![0usize; n_groups];
    for (&p, &g) in preds.iter().zip(groups) {
        if g >= n_groups {
            return Err(Error::UnknownGroup(g.to_string()));
        }
        let bin = ((p.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1);
        counts[g][bin] += 1.0;
        sizes[g] += 1;
    }
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidArgument(format!("group {g} has no predictions")));
    }
    Ok(DensityData {
        edges: (0..=n_bins).map(|k| k as f64 / n_bins as f64).collect(),
        groups: counts
            .into_iter()
            .zip(sizes)
            .enumerate()
            .map(|(g, (c, s))| (g, c.into_iter().map(|v| v / s as f64).collect()))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.9], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(auc(&[0.1, 0.9], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn dp_examples() {
        // rates 0.8 and 0.3
        let mut preds = vec![1.0; 8];
        preds.extend([0.0; 2]);
        preds.extend([1.0; 3]);
        preds.extend([0.0; 7]);
        let groups: Vec<usize> = (0..20).map(|i| i / 10).collect();
        assert!((delta_dp(&preds, &groups).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(delta_dp(&[1.0; 20], &groups).unwrap(), 0.0);
        assert!(delta_dp(&[1.0, 0.0], &[3, 3]).is_err());
    }

    #[test]
    fn three_group_dp() {
        let mut preds = Vec::new();
        let mut groups = Vec::new();
        for (g, k) in [(0, 2), (1, 5), (2, 8)] {
            for i in 0..10 {
                preds.push((i < k) as u8 as f64);
                groups.push(g);
            }
        }
        assert!((delta_dp(&preds, &groups).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn eo_of_perfect_predictor_is_zero() {
        let labels = [0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let groups = [0, 0, 0, 1, 1, 1];
        assert_eq!(delta_eo(&labels, &labels, &groups).unwrap(), 0.0);
    }

    #[test]
    fn cp_examples() {
        assert_eq!(delta_cp(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((delta_cp(&[0.2, 0.6], &[0.4, 0.6]).unwrap() - 0.1).abs() < 1e-12);
        assert!(delta_cp(&[0.2], &[0.4, 0.6]).is_err());
    }

    #[test]
    fn density_examples() {
        let d = density_data(&[0.5; 6], &[0, 0, 0, 1, 1, 1], 2, 10).unwrap();
        for (_, h) in &d.groups {
            assert_eq!(h.iter().filter(|&&v| v > 0.0).count(), 1);
            assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(d.groups[0].1, d.groups[1].1);
        assert!(density_data(&[0.5], &[0], 2, 10).is_err());
        assert!(density_data(&[0.5], &[0], 1, 1).is_err());
    }

    #[test]
    fn one_hot_group_leaks_completely() {
        let n = 60;
        let groups: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (groups[i] == j) as u8 as f64);
        let a = leakage_auc(&x, &groups, &ProbeConfig::default(), 0).unwrap();
        assert_eq!(a, 1.0);
    }
}
