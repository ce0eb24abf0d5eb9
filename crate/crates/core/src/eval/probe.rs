use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Logistic,
    Ridge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// L2 penalty for the logistic probe.
    pub logistic_lambda: f64,
    pub ridge_lambda: f64,
    /// Full-batch gradient steps for the logistic probe.
    pub iters: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            logistic_lambda: 1e-4,
            ridge_lambda: 1e-2,
            iters: 2000,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::InvalidArgument("probe iters must be positive".into()));
        }
        if !(self.logistic_lambda >= 0.0) || !(self.ridge_lambda >= 0.0) {
            return Err(Error::InvalidArgument("probe lambda must be non-negative".into()));
        }
        Ok(())
    }

    pub fn fit(&self, kind: ProbeKind, x: &Array2<f64>, y: &[f64]) -> Result<ProbeModel> {
        self.validate()?;
        match kind {
            ProbeKind::Logistic => fit_logistic(x, y, self.logistic_lambda, self.iters),
            ProbeKind::Ridge => fit_ridge(x, y, self.ridge_lambda),
        }
    }
}

/// Linear probe. Inputs are shifted by `center` and divided by `scale`
/// before the weights apply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub kind: ProbeKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_xy(x: &Array2<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} targets", x.nrows(), y.len())));
    }
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument("cannot fit a probe on zero rows".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("probe inputs contain NaN or infinity".into()));
    }
    Ok(())
}

fn column_stats(x: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    (mean, std)
}

/// Largest eigenvalue of the symmetric PSD matrix `a` by power iteration.
fn top_eigenvalue(a: &Array2<f64>) -> f64 {
    let mut v = Array1::from_elem(a.nrows(), 1.0 / (a.nrows() as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w = a.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm <= f64::MIN_POSITIVE {
            return 0.0;
        }
        lambda = norm;
        v = w / norm;
    }
    lambda
}

/// L2-penalized logistic regression by full-batch gradient descent on
/// standardized inputs, step `1/L` for the loss's smoothness constant `L`.
pub fn fit_logistic(x: &Array2<f64>, y: &[f64], lambda: f64, iters: usize) -> Result<ProbeModel> {
    check_xy(x, y)?;
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument("logistic labels must be 0 or 1".into()));
    }
    let (center, scale) = column_stats(x);
    let xs = (x - &center) / &scale;
    let n = xs.nrows() as f64;
    let yv = Array1::from(y.to_vec());
    let gram = xs.t().dot(&xs) / n;
    let smooth = 0.25 * (top_eigenvalue(&gram) + 1.0) + lambda;
    let step = 1.0 / smooth;
    let mut w = Array1::<f64>::zeros(xs.ncols());
    let mut b = 0.0;
    for _ in 0..iters {
        let p = (xs.dot(&w) + b).mapv(sigmoid);
        let r = &p - &yv;
        let gw = xs.t().dot(&r) / n + &w * lambda;
        let gb = r.sum() / n;
        w.scaled_add(-step, &gw);
        b -= step * gb;
    }
    Ok(ProbeModel {
        kind: ProbeKind::Logistic,
        weights: w.to_vec(),
        bias: b,
        lambda,
        center: center.to_vec(),
        scale: scale.to_vec(),
    })
}

/// Ridge regression with unpenalized intercept: `(XcᵀXc + λI) w = Xcᵀyc`
/// on centered data, solved by Cholesky.
pub fn fit_ridge(x: &Array2<f64>, y: &[f64], lambda: f64) -> Result<ProbeModel> {
    check_xy(x, y)?;
    let d = x.ncols();
    let center = x.mean_axis(Axis(0)).expect("nonempty");
    let y_mean = y.iter().sum::<f64>() / y.len() as f64;
    let xc = x - &center;
    let gram = xc.t().dot(&xc);
    let rhs = xc.t().dot(&Array1::from_iter(y.iter().map(|v| v - y_mean)));
    let mut a = DMatrix::from_fn(d, d, |i, j| gram[[i, j]]);
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    let singular = || {
        Error::Singular(format!(
            "ridge normal equations are singular at lambda = {lambda}; use lambda > 0"
        ))
    };
    let scale = (0..d).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let chol = a.cholesky().ok_or_else(singular)?;
    // rounding can leave a tiny positive pivot on a rank-deficient matrix
    let tol = scale * d as f64 * f64::EPSILON;
    if (0..d).any(|i| chol.l_dirty()[(i, i)].powi(2) <= tol) {
        return Err(singular());
    }
    let w = chol.solve(&DVector::from_iterator(d, rhs.iter().copied()));
    let weights: Vec<f64> = w.iter().copied().collect();
    let bias = y_mean - weights.iter().zip(center.iter()).map(|(w, c)| w * c).sum::<f64>();
    Ok(ProbeModel {
        kind: ProbeKind::Ridge,
        weights,
        bias,
        lambda,
        center: vec![0.0; d],
        scale: vec![1.0; d],
    })
}

impl ProbeModel {
    /// Probabilities for the logistic probe, values for ridge.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::Shape(format!(
                "probe expects {} features, got {}",
                self.weights.len(),
                x.ncols()
            )));
        }
        Ok(x
            .rows()
            .into_iter()
            .map(|r| {
                let z = self.bias
                    + r.iter()
                        .zip(&self.weights)
                        .zip(self.center.iter().zip(&self.scale))
                        .map(|((v, w), (c, s))| w * (v - c) / s)
                        .sum::<f64>();
                match self.kind {
                    ProbeKind::Logistic => sigmoid(z),
                    ProbeKind::Ridge => z,
                }
            })
            .collect())
    }
}
