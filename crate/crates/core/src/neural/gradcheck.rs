//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Number of parameter coordinates to probe (all of them if fewer exist).
    pub coords: usize,
    pub step: f64,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            coords: 100,
            step: 1e-5,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose one-sided slopes disagree (a ReLU kink or a change
    /// of sort order inside the stencil); they are excluded from the max.
    pub skipped: usize,
    /// `(tensor, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub max_abs_analytic: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// Compares the analytic gradient returned by `loss_fn` against central
/// differences of its value. `loss_fn` must be a deterministic function of
/// the parameter tensors.
pub fn grad_check<F>(
    params: &mut [Matrix],
    mut loss_fn: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>)>,
{
    let (_, analytic) = loss_fn(params)?;
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} tensors",
            analytic.len(),
            params.len()
        )));
    }
    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, p| {
            let start = *acc;
            *acc += p.len();
            Some(start)
        })
        .collect();
    let total: usize = params.iter().map(|p| p.len()).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no parameters to check".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let picks = sample(&mut rng, total, cfg.coords.min(total)).into_vec();

    let h = cfg.step;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
        max_abs_analytic: 0.0,
    };
    for flat in picks {
        let t = offsets.partition_point(|&o| o <= flat) - 1;
        let idx = flat - offsets[t];
        let original = params[t].as_slice().expect("standard layout")[idx];

        let mut eval_at = |params: &mut [Matrix], x: f64| -> Result<f64> {
            params[t].as_slice_mut().expect("standard layout")[idx] = x;
            Ok(loss_fn(params)?.0)
        };
        let f0 = eval_at(params, original)?;
        let fp = eval_at(params, original + h)?;
        let fm = eval_at(params, original - h)?;
        params[t].as_slice_mut().expect("standard layout")[idx] = original;

        let fwd = (fp - f0) / h;
        let bwd = (f0 - fm) / h;
        if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1e-3) {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[t].as_slice().expect("standard layout")[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
        report.checked += 1;
        report.max_abs_analytic = report.max_abs_analytic.max(a.abs());
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some((t, idx));
        }
    }
    Ok(report)
}
