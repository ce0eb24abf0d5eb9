use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::stack::{EncoderStack, StackBinding};
use crate::error::{Error, Result};
use crate::neural::{Matrix, ValueGraph, Var};

/// Standard Gaussian prior on the embedding space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub n_projections: usize,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec { n_projections: 50 }
    }
}

/// Random quantities of one SWD evaluation.
#[derive(Clone, Debug)]
pub struct SwdDraw {
    /// `dim × n_projections`, unit columns.
    pub directions: Matrix,
    /// `n × dim` sample from the prior.
    pub prior: Matrix,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_projections == 0 {
            return Err(Error::InvalidArgument("n_projections must be at least 1".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, dim: usize, rng: &mut R) -> Matrix {
        Matrix::from_shape_simple_fn((n, dim), || StandardNormal.sample(rng))
    }

    pub fn directions<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Matrix {
        let mut d = Matrix::from_shape_simple_fn((dim, self.n_projections), || StandardNormal.sample(rng));
        for mut col in d.columns_mut() {
            let norm = col.dot(&col).sqrt().max(f64::MIN_POSITIVE);
            col /= norm;
        }
        d
    }

    pub fn draw<R: Rng + ?Sized>(&self, n: usize, dim: usize, rng: &mut R) -> SwdDraw {
        let directions = self.directions(dim, rng);
        SwdDraw {
            directions,
            prior: self.sample(n, dim, rng),
        }
    }
}

/// Sliced squared 2-Wasserstein distance between the rows of `z` and the
/// draw's prior sample, averaged over projections.
pub fn swd_graph(g: &mut ValueGraph, z: Var, draw: &SwdDraw) -> Result<Var> {
    let (n, dim) = g.shape(z);
    if n == 0 {
        return Err(Error::InvalidArgument("swd of an empty sample".into()));
    }
    if draw.prior.dim() != (n, dim) || draw.directions.nrows() != dim {
        return Err(Error::Shape(format!(
            "swd: sample {n}x{dim}, prior {:?}, directions {:?}",
            draw.prior.dim(),
            draw.directions.dim()
        )));
    }
    let theta = g.constant(draw.directions.clone());
    let proj = g.matmul(z, theta)?;
    let sorted = g.sort_cols(proj);
    let prior = g.constant(draw.prior.clone());
    let prior_proj = g.matmul(prior, theta)?;
    let prior_sorted = g.sort_cols(prior_proj);
    let gap = g.sub(sorted, prior_sorted)?;
    let sq = g.mul(gap, gap)?;
    Ok(g.mean(sq))
}

/// [`swd_graph`] on fixed draws.
pub fn swd_with(sample: &Matrix, draw: &SwdDraw) -> Result<f64> {
    let mut g = ValueGraph::new();
    let z = g.constant(sample.clone());
    let v = swd_graph(&mut g, z, draw)?;
    Ok(g.scalar(v))
}

/// Distance of `sample` to the prior, with fresh directions and prior draws.
pub fn swd<R: Rng + ?Sized>(sample: &Matrix, prior: &PriorSpec, rng: &mut R) -> Result<f64> {
    prior.validate()?;
    if sample.nrows() < 2 {
        return Err(Error::InvalidArgument("swd needs at least two embeddings".into()));
    }
    let draw = prior.draw(sample.nrows(), sample.ncols(), rng);
    swd_with(sample, &draw)
}

/// `‖a − b‖₂`.
pub fn align_loss(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("align_loss: widths {} and {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Mean row-wise Euclidean distance.
pub fn align_graph(g: &mut ValueGraph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let n = g.row_norm(d);
    Ok(g.mean(n))
}

/// Mean of `−cos(p_i, sg(z_i))` over rows.
pub fn self_kd_graph(g: &mut ValueGraph, student: Var, teacher: Var) -> Result<Var> {
    let teacher = g.stop_gradient(teacher);
    let ps = g.row_norm(student);
    let zs = g.row_norm(teacher);
    let tiny = |m: &Matrix| m.iter().any(|&v| v <= f64::MIN_POSITIVE);
    if tiny(g.value(ps)) || tiny(g.value(zs)) {
        return Err(Error::NonFinite("self-distillation on a zero-norm embedding".into()));
    }
    let pn = g.div_col(student, ps)?;
    let zn = g.div_col(teacher, zs)?;
    let prod = g.mul(pn, zn)?;
    let cos = g.row_sum(prod);
    let m = g.mean(cos);
    Ok(g.scale(m, -1.0))
}

/// Which objective terms are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossToggles {
    pub align: bool,
    pub distribution: bool,
    pub self_kd: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles {
            align: true,
            distribution: true,
            self_kd: true,
        }
    }
}

/// Rows entering one training step: a same-group batch, its counterfactual
/// twins and its perturbed copies.
#[derive(Clone, Debug)]
pub struct TrainBatch {
    pub x: Matrix,
    pub x_cnt: Matrix,
    pub x_pert: Matrix,
}

/// Recorded terms of [`objective_graph`]; inactive terms are `None`.
pub struct ObjectiveTerms {
    pub align: Option<Var>,
    pub swd: Option<Var>,
    pub self_kd: Option<Var>,
    pub total: Var,
}

/// `L_fair-cl + L_self-kd` on one batch.
pub fn objective_graph(
    g: &mut ValueGraph,
    stack: &EncoderStack,
    b: &StackBinding,
    batch: &TrainBatch,
    draw: &SwdDraw,
    toggles: LossToggles,
) -> Result<ObjectiveTerms> {
    if batch.x.dim() != batch.x_cnt.dim() || batch.x.dim() != batch.x_pert.dim() {
        return Err(Error::Shape("batch, counterfactual and perturbed rows differ in shape".into()));
    }
    let x = g.constant(batch.x.clone());
    let rep = stack.represent_graph(g, b, x)?;
    let mut parts = Vec::new();
    let mut align = None;
    let mut swd = None;
    let mut self_kd = None;
    if toggles.align || toggles.distribution {
        let f = stack.contrastive_graph(g, b, rep)?;
        if toggles.align {
            let xc = g.constant(batch.x_cnt.clone());
            let rc = stack.represent_graph(g, b, xc)?;
            let fc = stack.contrastive_graph(g, b, rc)?;
            let a = align_graph(g, f, fc)?;
            align = Some(a);
            parts.push(a);
        }
        if toggles.distribution {
            let s = swd_graph(g, f, draw)?;
            swd = Some(s);
            parts.push(s);
        }
    }
    if toggles.self_kd {
        let xp = g.constant(batch.x_pert.clone());
        let rp = stack.represent_graph(g, b, xp)?;
        let p = stack.distill_graph(g, b, rp)?;
        let k = self_kd_graph(g, p, rep)?;
        self_kd = Some(k);
        parts.push(k);
    }
    let mut total = *parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("every objective term is disabled".into()))?;
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    Ok(ObjectiveTerms {
        align,
        swd,
        self_kd,
        total,
    })
}

/// Mean alignment to the counterfactual twins plus SWD of the batch's
/// contrastive embeddings to the prior.
pub fn fair_contrastive_loss<R: Rng + ?Sized>(
    stack: &EncoderStack,
    x: &Matrix,
    groups: &[usize],
    x_cnt: &Matrix,
    prior: &PriorSpec,
    rng: &mut R,
) -> Result<f64> {
    prior.validate()?;
    if groups.len() != x.nrows() {
        return Err(Error::Shape(format!("{} groups for {} rows", groups.len(), x.nrows())));
    }
    if groups.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::InvalidArgument("contrastive batch mixes sensitive groups".into()));
    }
    let draw = prior.draw(x.nrows(), stack.embed_dim, rng);
    let batch = TrainBatch {
        x: x.clone(),
        x_cnt: x_cnt.clone(),
        x_pert: x.clone(),
    };
    let toggles = LossToggles {
        self_kd: false,
        ..LossToggles::default()
    };
    let mut g = ValueGraph::new();
    let b = stack.bind(&mut g);
    let t = objective_graph(&mut g, stack, &b, &batch, &draw, toggles)?;
    Ok(g.scalar(t.total))
}

/// Mean negative cosine between `h2∘g∘f(x_pert)` and `sg(g∘f(x))`.
pub fn self_kd_loss(stack: &EncoderStack, x: &Matrix, x_pert: &Matrix) -> Result<f64> {
    let mut g = ValueGraph::new();
    let b = stack.bind(&mut g);
    let xv = g.constant(x.clone());
    let rep = stack.represent_graph(&mut g, &b, xv)?;
    let xp = g.constant(x_pert.clone());
    let rp = stack.represent_graph(&mut g, &b, xp)?;
    let p = stack.distill_graph(&mut g, &b, rp)?;
    let k = self_kd_graph(&mut g, p, rep)?;
    Ok(g.scalar(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_draw(prior: Matrix) -> SwdDraw {
        SwdDraw {
            directions: array![[1.0]],
            prior,
        }
    }

    #[test]
    fn one_dimensional_swd_by_hand() {
        let s = array![[1.0], [0.0]];
        assert_eq!(swd_with(&s, &unit_draw(array![[0.0], [1.0]])).unwrap(), 0.0);
        // sorted gaps (2, 2)
        assert_eq!(swd_with(&s, &unit_draw(array![[3.0], [2.0]])).unwrap(), 4.0);
    }

    #[test]
    fn swd_of_sample_against_itself_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let prior = PriorSpec::default();
        let s = prior.sample(30, 4, &mut rng);
        let draw = SwdDraw {
            directions: prior.directions(4, &mut rng),
            prior: s.clone(),
        };
        assert_eq!(swd_with(&s, &draw).unwrap(), 0.0);
    }

    #[test]
    fn directions_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = PriorSpec { n_projections: 7 }.directions(5, &mut rng);
        for c in d.columns() {
            assert!((c.dot(&c) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn align_examples() {
        assert_eq!(align_loss(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(align_loss(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert!(align_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cosine_extremes() {
        let mut g = ValueGraph::new();
        let p = g.param(array![[1.0, 2.0], [1.0, 0.0]]);
        let z = g.param(array![[2.0, 4.0], [0.0, 3.0]]);
        let k = self_kd_graph(&mut g, p, z).unwrap();
        // rows: cos = 1 and cos = 0
        assert!((g.scalar(k) + 0.5).abs() < 1e-12);
        let grads = g.backward(k).unwrap();
        assert!(grads.wrt(z).iter().all(|&v| v == 0.0));
        assert!(grads.wrt(p).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn zero_norm_is_an_error() {
        let mut g = ValueGraph::new();
        let p = g.param(array![[0.0, 0.0]]);
        let z = g.param(array![[1.0, 0.0]]);
        assert!(self_kd_graph(&mut g, p, z).is_err());
    }
}
