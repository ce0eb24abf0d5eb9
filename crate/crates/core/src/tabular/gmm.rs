//! One-dimensional Gaussian mixtures for mode-specific normalization.
//!
//! Each candidate component count `1..=max_modes` is fitted by EM from
//! quantile initialization; the fit with the lowest BIC is kept and
//! components with weight below [`PRUNE_WEIGHT`] are dropped.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub const PRUNE_WEIGHT: f64 = 0.01;
const MAX_ITERS: usize = 300;
const TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub mean: f64,
    pub std: f64,
    pub weight: f64,
}

impl Mode {
    fn log_density(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        self.weight.ln() - 0.5 * z * z - self.std.ln() - 0.5 * (2.0 * PI).ln()
    }
}

fn std_floor(values: &[f64]) -> f64 {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-6 * scale.max(1.0)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// EM for a fixed number of components. Returns the modes and the final
/// log-likelihood.
fn em(values: &[f64], k: usize, floor: f64) -> (Vec<Mode>, f64) {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let init_std = (var.sqrt() / k as f64).max(floor);
    let mut modes: Vec<Mode> = (0..k)
        .map(|j| {
            let q = ((j as f64 + 0.5) / k as f64 * n as f64) as usize;
            Mode {
                mean: sorted[q.min(n - 1)],
                std: init_std,
                weight: 1.0 / k as f64,
            }
        })
        .collect();

    let mut resp = vec![0.0; n * k];
    let mut logs = vec![0.0; k];
    let mut prev = f64::NEG_INFINITY;
    let mut ll = prev;
    for _ in 0..MAX_ITERS {
        // E step
        ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            for (j, m) in modes.iter().enumerate() {
                logs[j] = m.log_density(x);
            }
            let lse = log_sum_exp(&logs);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (logs[j] - lse).exp();
            }
        }
        // M step
        for (j, m) in modes.iter_mut().enumerate() {
            let nk: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            if nk < 1e-12 {
                m.weight = 1e-300;
                continue;
            }
            let mu = (0..n).map(|i| resp[i * k + j] * values[i]).sum::<f64>() / nk;
            let v = (0..n)
                .map(|i| resp[i * k + j] * (values[i] - mu).powi(2))
                .sum::<f64>()
                / nk;
            m.mean = mu;
            m.std = v.sqrt().max(floor);
            m.weight = nk / n as f64;
        }
        if (ll - prev).abs() <= TOL * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
    }
    (modes, ll)
}

/// Fits a mixture with at most `max_modes` components. Identical inputs
/// yield a single mode.
pub fn fit_modes(values: &[f64], max_modes: usize) -> Vec<Mode> {
    assert!(!values.is_empty(), "fit_modes on empty column");
    let floor = std_floor(values);
    let n = values.len();
    let first = values[0];
    let distinct = values.iter().any(|&v| v != first);
    if !distinct || max_modes <= 1 {
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        return vec![Mode {
            mean,
            std: var.sqrt().max(floor),
            weight: 1.0,
        }];
    }

    let max_k = max_modes.min(n);
    let mut best: Option<(f64, Vec<Mode>)> = None;
    for k in 1..=max_k {
        let (modes, ll) = em(values, k, floor);
        let params = (3 * k - 1) as f64;
        let bic = params * (n as f64).ln() - 2.0 * ll;
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, modes));
        }
    }
    let mut modes = best.expect("at least one candidate").1;
    modes.retain(|m| m.weight >= PRUNE_WEIGHT);
    let total: f64 = modes.iter().map(|m| m.weight).sum();
    for m in &mut modes {
        m.weight /= total;
    }
    modes.sort_by(|a, b| a.mean.total_cmp(&b.mean));
    modes
}

/// Index of the component with the largest posterior for `x`; ties go to
/// the lowest index.
pub fn assign_mode(modes: &[Mode], x: f64) -> usize {
    let mut best = 0;
    let mut best_lp = f64::NEG_INFINITY;
    for (j, m) in modes.iter().enumerate() {
        let lp = m.log_density(x);
        if lp > best_lp {
            best_lp = lp;
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_column_falls_back_to_one_mode() {
        let modes = fit_modes(&[3.0; 20], 5);
        assert_eq!(modes.len(), 1);
        assert_eq!(modes[0].mean, 3.0);
        assert!(modes[0].std > 0.0);
    }

    #[test]
    fn weights_sum_to_one() {
        let values: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let modes = fit_modes(&values, 4);
        let total: f64 = modes.iter().map(|m| m.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(modes.iter().all(|m| m.weight >= PRUNE_WEIGHT));
    }

    #[test]
    fn assignment_prefers_nearest_mode() {
        let modes = [
            Mode {
                mean: 0.0,
                std: 1.0,
                weight: 0.5,
            },
            Mode {
                mean: 10.0,
                std: 1.0,
                weight: 0.5,
            },
        ];
        assert_eq!(assign_mode(&modes, 1.0), 0);
        assert_eq!(assign_mode(&modes, 8.5), 1);
        assert_eq!(assign_mode(&modes, 5.0), 0);
    }
}
