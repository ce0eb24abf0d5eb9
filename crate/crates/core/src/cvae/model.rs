use std::ops::Range;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{
    mlp_apply, mlp_forward, Activation, Gradients, Matrix, MlpBinding, MlpParams, MlpSpec,
    ValueGraph, Var,
};
use crate::tabular::{FeatureEncoder, SegmentKind};

pub const LOGVAR_MIN: f64 = -6.0;
pub const LOGVAR_MAX: f64 = 6.0;

/// Weights of the generator objective
/// `recon·NLL + kl·KL − adv·CE_disc + cyc·NLL_cycle`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvaeLossWeights {
    pub recon: f64,
    pub kl: f64,
    pub adv: f64,
    pub cyc: f64,
}

impl Default for CvaeLossWeights {
    fn default() -> Self {
        CvaeLossWeights {
            recon: 2.0,
            kl: 1.0,
            adv: 1.0,
            cyc: 1.0,
        }
    }
}

impl CvaeLossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.recon, self.kl, self.adv, self.cyc];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Where the sensitive attribute sits in an encoded row and how the
/// remaining columns are reconstructed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowLayout {
    pub width: usize,
    pub sensitive: Range<usize>,
    pub n_groups: usize,
    /// Segments of the non-sensitive part, indexed within that part.
    pub feature_segments: Vec<(Range<usize>, SegmentKind)>,
}

impl RowLayout {
    pub fn from_encoder(enc: &FeatureEncoder) -> Self {
        let sensitive = enc.sensitive_span();
        let shift = |i: usize| if i >= sensitive.end { i - sensitive.len() } else { i };
        let feature_segments = enc
            .segments()
            .into_iter()
            .filter(|sg| sg.range.start >= sensitive.end || sg.range.end <= sensitive.start)
            .map(|sg| (shift(sg.range.start)..shift(sg.range.end), sg.kind))
            .collect();
        RowLayout {
            width: enc.dim(),
            n_groups: sensitive.len(),
            sensitive,
            feature_segments,
        }
    }

    pub fn feature_width(&self) -> usize {
        self.width - self.sensitive.len()
    }

    /// Column indices of the full row that are not the sensitive span.
    pub fn feature_columns(&self) -> Vec<usize> {
        (0..self.width).filter(|j| !self.sensitive.contains(j)).collect()
    }

    /// Gather order that rebuilds a full row from `[features | one-hot group]`.
    pub fn assemble_order(&self) -> Vec<usize> {
        let fw = self.feature_width();
        (0..self.width)
            .map(|j| {
                if self.sensitive.contains(&j) {
                    fw + (j - self.sensitive.start)
                } else if j >= self.sensitive.end {
                    j - self.sensitive.len()
                } else {
                    j
                }
            })
            .collect()
    }

    pub fn categorical_ranges(&self) -> Vec<Range<usize>> {
        self.feature_segments
            .iter()
            .filter(|(_, k)| *k == SegmentKind::Categorical)
            .map(|(r, _)| r.clone())
            .collect()
    }

    fn masks(&self) -> (Array2<f64>, Array2<f64>) {
        let fw = self.feature_width();
        let mut cat = Array2::zeros((1, fw));
        let mut cont = Array2::zeros((1, fw));
        for (r, k) in &self.feature_segments {
            let target = match k {
                SegmentKind::Categorical => &mut cat,
                SegmentKind::Continuous => &mut cont,
            };
            target.slice_mut(s![0, r.clone()]).fill(1.0);
        }
        (cat, cont)
    }

    pub fn one_hot(&self, groups: &[usize]) -> Result<Matrix> {
        let mut m = Matrix::zeros((groups.len(), self.n_groups));
        for (i, &g) in groups.iter().enumerate() {
            if g >= self.n_groups {
                return Err(Error::UnknownGroup(g.to_string()));
            }
            m[[i, g]] = 1.0;
        }
        Ok(m)
    }

    pub fn features_of(&self, x: &Matrix) -> Matrix {
        x.select(Axis(1), &self.feature_columns())
    }
}

/// Reparameterized latent draw for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample {
    pub u: Matrix,
    pub mu: Matrix,
    pub logvar: Matrix,
}

/// Exogenous randomness of one generator step, drawn up front so the
/// losses are deterministic functions of the parameters.
#[derive(Clone, Debug)]
pub struct CvaeNoise {
    pub eps: Matrix,
    pub eps_cycle: Matrix,
    pub flip_to: Vec<usize>,
}

impl CvaeNoise {
    pub fn draw<R: Rng + ?Sized>(
        rows: usize,
        latent_dim: usize,
        groups: &[usize],
        n_groups: usize,
        rng: &mut R,
    ) -> Self {
        let eps = Matrix::from_shape_fn((rows, latent_dim), |_| rng.sample(StandardNormal));
        let eps_cycle = Matrix::from_shape_fn((rows, latent_dim), |_| rng.sample(StandardNormal));
        let flip_to = groups
            .iter()
            .map(|&s| other_group(s, n_groups, rng))
            .collect();
        CvaeNoise {
            eps,
            eps_cycle,
            flip_to,
        }
    }
}

/// A group other than `s`, uniform over the `n_groups - 1` alternatives.
pub fn other_group<R: Rng + ?Sized>(s: usize, n_groups: usize, rng: &mut R) -> usize {
    debug_assert!(n_groups >= 2);
    if n_groups == 2 {
        return 1 - s.min(1);
    }
    let r = rng.random_range(0..n_groups - 1);
    if r >= s {
        r + 1
    } else {
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvaeArchitecture {
    pub latent_dim: usize,
    pub hidden: usize,
}

impl Default for CvaeArchitecture {
    fn default() -> Self {
        CvaeArchitecture {
            latent_dim: 16,
            hidden: 256,
        }
    }
}

/// Encoder `q(u | x)`, decoder `p(x | u, s)` and latent discriminator `r(s | u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvaeModel {
    pub layout: RowLayout,
    pub latent_dim: usize,
    pub encoder_spec: MlpSpec,
    pub encoder: MlpParams,
    pub decoder_spec: MlpSpec,
    pub decoder: MlpParams,
    pub discriminator_spec: MlpSpec,
    pub discriminator: MlpParams,
}

/// Graph handles for one recorded generator pass.
pub struct CvaeBinding {
    pub encoder: MlpBinding,
    pub decoder: MlpBinding,
    pub discriminator: MlpBinding,
}

/// Scalar loss nodes of a recorded pass (means over the batch).
pub struct CvaeTerms {
    pub kl: Var,
    pub recon: Var,
    pub adv: Var,
    pub cyc: Var,
}

impl CvaeModel {
    pub fn new<R: Rng + ?Sized>(
        layout: RowLayout,
        arch: &CvaeArchitecture,
        rng: &mut R,
    ) -> Result<Self> {
        if arch.latent_dim == 0 || arch.hidden == 0 {
            return Err(Error::InvalidArgument("latent_dim and hidden must be positive".into()));
        }
        let l = arch.latent_dim;
        let encoder_spec = MlpSpec::stack(layout.width, arch.hidden, 3, 2 * l, Activation::None)?;
        let decoder_spec = MlpSpec::stack(
            l + layout.n_groups,
            arch.hidden,
            2,
            layout.feature_width(),
            Activation::None,
        )?;
        let discriminator_spec =
            MlpSpec::stack(l, arch.hidden, 2, layout.n_groups, Activation::None)?;
        Ok(CvaeModel {
            encoder: MlpParams::init(&encoder_spec, rng),
            decoder: MlpParams::init(&decoder_spec, rng),
            discriminator: MlpParams::init(&discriminator_spec, rng),
            layout,
            latent_dim: l,
            encoder_spec,
            decoder_spec,
            discriminator_spec,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.check_against(&self.encoder_spec)?;
        self.decoder.check_against(&self.decoder_spec)?;
        self.discriminator.check_against(&self.discriminator_spec)?;
        let l = self.latent_dim;
        if self.encoder_spec.in_dim != self.layout.width
            || self.encoder_spec.out_dim() != 2 * l
            || self.decoder_spec.in_dim != l + self.layout.n_groups
            || self.decoder_spec.out_dim() != self.layout.feature_width()
            || self.discriminator_spec.in_dim != l
            || self.discriminator_spec.out_dim() != self.layout.n_groups
        {
            return Err(Error::Shape("C-VAE networks do not match the row layout".into()));
        }
        Ok(())
    }

    /// Encoder and decoder tensors, in a fixed order.
    pub fn generator_tensors(&self) -> Vec<&Matrix> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    pub fn generator_tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.all_finite() && self.decoder.all_finite() && self.discriminator.all_finite()
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.ncols() != self.layout.width {
            return Err(Error::Shape(format!(
                "row width {}, generator expects {}",
                x.ncols(),
                self.layout.width
            )));
        }
        Ok(())
    }

    // ---- inference ----

    /// Posterior mean and clamped log-variance.
    pub fn posterior(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        self.check_width(x)?;
        let out = mlp_apply(&self.encoder, &self.encoder_spec, x)?;
        let l = self.latent_dim;
        let mu = out.slice(s![.., ..l]).to_owned();
        let logvar = out
            .slice(s![.., l..])
            .mapv(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX));
        Ok((mu, logvar))
    }

    /// `u = μ + exp(logvar / 2) ⊙ ε`, with `ε ~ N(0, I)` from `rng`.
    pub fn cvae_encode<R: Rng + ?Sized>(&self, x: &Matrix, rng: &mut R) -> Result<LatentSample> {
        let (mu, logvar) = self.posterior(x)?;
        let eps = Matrix::from_shape_fn(mu.dim(), |_| rng.sample(StandardNormal));
        let u = &mu + &(logvar.mapv(|v| (0.5 * v).exp()) * eps);
        Ok(LatentSample { u, mu, logvar })
    }

    /// Raw decoder output over the non-sensitive columns: logits on
    /// categorical segments, means on continuous ones.
    pub fn cvae_decode(&self, u: &Matrix, groups: &[usize]) -> Result<Matrix> {
        if u.ncols() != self.latent_dim || u.nrows() != groups.len() {
            return Err(Error::Shape(format!(
                "decode: latent {:?} for {} groups",
                u.dim(),
                groups.len()
            )));
        }
        let onehot = self.layout.one_hot(groups)?;
        let input = ndarray::concatenate(Axis(1), &[u.view(), onehot.view()])
            .expect("row counts checked");
        mlp_apply(&self.decoder, &self.decoder_spec, &input)
    }

    /// Discriminator group logits.
    pub fn discriminate(&self, u: &Matrix) -> Result<Matrix> {
        mlp_apply(&self.discriminator, &self.discriminator_spec, u)
    }

    /// Hard rows: argmax one-hot on categorical segments, decoded means on
    /// continuous ones, and the given groups in the sensitive span.
    pub fn materialize(&self, decoded: &Matrix, groups: &[usize]) -> Result<Matrix> {
        let mut features = decoded.clone();
        for r in self.layout.categorical_ranges() {
            for mut row in features.rows_mut() {
                let mut seg = row.slice_mut(s![r.clone()]);
                let mut best = 0;
                for (k, &v) in seg.iter().enumerate() {
                    if v > seg[best] {
                        best = k;
                    }
                }
                seg.fill(0.0);
                seg[best] = 1.0;
            }
        }
        let onehot = self.layout.one_hot(groups)?;
        let joined = ndarray::concatenate(Axis(1), &[features.view(), onehot.view()])
            .expect("row counts checked");
        Ok(joined.select(Axis(1), &self.layout.assemble_order()))
    }

    /// Counterfactual twins of `x` (groups `groups`) under target groups `targets`.
    pub fn make_counterfactual<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        groups: &[usize],
        targets: &[usize],
        rng: &mut R,
    ) -> Result<Matrix> {
        if groups.len() != x.nrows() || targets.len() != x.nrows() {
            return Err(Error::Shape("one group and one target per row".into()));
        }
        if let Some(i) = groups.iter().zip(targets).position(|(s, t)| s == t) {
            return Err(Error::InvalidArgument(format!(
                "row {i}: counterfactual target equals the original group {}",
                groups[i]
            )));
        }
        let latent = self.cvae_encode(x, rng)?;
        let decoded = self.cvae_decode(&latent.u, targets)?;
        self.materialize(&decoded, targets)
    }

    /// Counterfactuals with targets drawn uniformly among the other groups.
    pub fn flip<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        groups: &[usize],
        rng: &mut R,
    ) -> Result<(Matrix, Vec<usize>)> {
        let targets: Vec<usize> = groups
            .iter()
            .map(|&s| other_group(s, self.layout.n_groups, rng))
            .collect();
        let cf = self.make_counterfactual(x, groups, &targets, rng)?;
        Ok((cf, targets))
    }

    // ---- recorded passes ----

    pub fn bind(&self, g: &mut ValueGraph, train_generator: bool, train_discriminator: bool) -> CvaeBinding {
        let pick = |p: &MlpParams, g: &mut ValueGraph, t: bool| {
            if t {
                p.bind(g)
            } else {
                p.bind_frozen(g)
            }
        };
        CvaeBinding {
            encoder: pick(&self.encoder, g, train_generator),
            decoder: pick(&self.decoder, g, train_generator),
            discriminator: pick(&self.discriminator, g, train_discriminator),
        }
    }

    /// Records `(u, μ, logvar)` for the rows in `x`.
    pub fn encode_graph(
        &self,
        g: &mut ValueGraph,
        b: &CvaeBinding,
        x: Var,
        eps: &Matrix,
    ) -> Result<(Var, Var, Var)> {
        let l = self.latent_dim;
        let out = mlp_forward(g, &b.encoder, &self.encoder_spec, x)?;
        let mu = g.select_cols(out, (0..l).collect())?;
        let raw = g.select_cols(out, (l..2 * l).collect())?;
        let logvar = g.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
        let half = g.scale(logvar, 0.5);
        let std = g.exp(half);
        let e = g.constant(eps.clone());
        let noise = g.mul(std, e)?;
        let u = g.add(mu, noise)?;
        Ok((u, mu, logvar))
    }

    pub fn decode_graph(
        &self,
        g: &mut ValueGraph,
        b: &CvaeBinding,
        u: Var,
        groups: &[usize],
    ) -> Result<Var> {
        let onehot = g.constant(self.layout.one_hot(groups)?);
        let input = g.concat_cols(u, onehot)?;
        mlp_forward(g, &b.decoder, &self.decoder_spec, input)
    }

    /// Mean over rows of `½ Σ (μ² + e^logvar − logvar − 1)`.
    pub fn kl_graph(&self, g: &mut ValueGraph, mu: Var, logvar: Var) -> Result<Var> {
        let rows = g.shape(mu).0 as f64;
        let mu2 = g.mul(mu, mu)?;
        let ev = g.exp(logvar);
        let a = g.add(mu2, ev)?;
        let b = g.sub(a, logvar)?;
        let c = g.add_scalar(b, -1.0);
        let total = g.sum(c);
        Ok(g.scale(total, 0.5 / rows))
    }

    /// Mean over rows of the per-row reconstruction NLL: cross-entropy on
    /// each categorical segment plus squared error on continuous columns.
    pub fn nll_graph(&self, g: &mut ValueGraph, decoded: Var, target: &Matrix) -> Result<Var> {
        let rows = target.nrows();
        let (cat, cont) = self.layout.masks();
        let logp = g.log_softmax_spans(decoded, self.layout.categorical_ranges())?;
        let cat_target = g.constant(target * &cat);
        let ce = g.mul(logp, cat_target)?;
        let ce_sum = g.sum(ce);
        let tgt = g.constant(target.clone());
        let diff = g.sub(logp, tgt)?;
        let mask = g.constant(
            cont.broadcast((rows, cont.ncols()))
                .expect("row mask broadcast")
                .to_owned(),
        );
        let masked = g.mul(diff, mask)?;
        let sq = g.mul(masked, masked)?;
        let se_sum = g.sum(sq);
        let total = g.sub(se_sum, ce_sum)?;
        Ok(g.scale(total, 1.0 / rows as f64))
    }

    /// Mean cross-entropy of the discriminator against the true groups.
    pub fn adv_graph(&self, g: &mut ValueGraph, b: &CvaeBinding, u: Var, groups: &[usize]) -> Result<Var> {
        let rows = groups.len() as f64;
        let logits = mlp_forward(g, &b.discriminator, &self.discriminator_spec, u)?;
        let logp = g.log_softmax_spans(logits, vec![0..self.layout.n_groups])?;
        let target = g.constant(self.layout.one_hot(groups)?);
        let picked = g.mul(logp, target)?;
        let total = g.sum(picked);
        Ok(g.scale(total, -1.0 / rows))
    }

    /// Records all four generator terms for one batch.
    pub fn terms_graph(
        &self,
        g: &mut ValueGraph,
        b: &CvaeBinding,
        x: &Matrix,
        groups: &[usize],
        noise: &CvaeNoise,
    ) -> Result<CvaeTerms> {
        self.check_width(x)?;
        let features = self.layout.features_of(x);
        let xv = g.constant(x.clone());
        let (u, mu, logvar) = self.encode_graph(g, b, xv, &noise.eps)?;
        let kl = self.kl_graph(g, mu, logvar)?;
        let recon_out = self.decode_graph(g, b, u, groups)?;
        let recon = self.nll_graph(g, recon_out, &features)?;
        let adv = self.adv_graph(g, b, u, groups)?;
        let cyc = self.cycle_graph(g, b, u, groups, &features, noise)?;
        Ok(CvaeTerms {
            kl,
            recon,
            adv,
            cyc,
        })
    }

    /// Second pass of the cycle: soft counterfactual under `noise.flip_to`,
    /// re-encoded and decoded back under the original groups.
    fn cycle_graph(
        &self,
        g: &mut ValueGraph,
        b: &CvaeBinding,
        u: Var,
        groups: &[usize],
        features: &Matrix,
        noise: &CvaeNoise,
    ) -> Result<Var> {
        let flipped = self.decode_graph(g, b, u, &noise.flip_to)?;
        let soft = g.softmax_spans(flipped, self.layout.categorical_ranges())?;
        let onehot = g.constant(self.layout.one_hot(&noise.flip_to)?);
        let joined = g.concat_cols(soft, onehot)?;
        let row = g.select_cols(joined, self.layout.assemble_order())?;
        let (u2, _, _) = self.encode_graph(g, b, row, &noise.eps_cycle)?;
        let back = self.decode_graph(g, b, u2, groups)?;
        self.nll_graph(g, back, features)
    }

    pub fn generator_objective(
        &self,
        g: &mut ValueGraph,
        terms: &CvaeTerms,
        w: &CvaeLossWeights,
    ) -> Result<Var> {
        let recon = g.scale(terms.recon, w.recon);
        let kl = g.scale(terms.kl, w.kl);
        let adv = g.scale(terms.adv, w.adv);
        let cyc = g.scale(terms.cyc, w.cyc);
        let a = g.add(recon, kl)?;
        let b = g.sub(a, adv)?;
        g.add(b, cyc)
    }

    /// Gradients for encoder then decoder, matching [`Self::generator_tensors`].
    pub fn generator_grads(&self, b: &CvaeBinding, grads: &Gradients) -> Vec<Matrix> {
        b.encoder
            .vars()
            .into_iter()
            .chain(b.decoder.vars())
            .map(|v| grads.wrt(v))
            .collect()
    }

    // ---- scalar losses ----

    /// `KL(q(u|x) ‖ N(0, I)) + 2 · NLL(x | u, s)` for the batch (weights
    /// taken from `w`), averaged over rows.
    pub fn loss_vae<R: Rng + ?Sized>(
        &self,
        x: &Matrix,
        groups: &[usize],
        w: &CvaeLossWeights,
        rng: &mut R,
    ) -> Result<f64> {
        let noise = CvaeNoise::draw(x.nrows(), self.latent_dim, groups, self.layout.n_groups, rng);
        let mut g = ValueGraph::new();
        let b = self.bind(&mut g, false, false);
        let xv = g.constant(x.clone());
        let (u, mu, logvar) = self.encode_graph(&mut g, &b, xv, &noise.eps)?;
        let kl = self.kl_graph(&mut g, mu, logvar)?;
        let out = self.decode_graph(&mut g, &b, u, groups)?;
        let recon = self.nll_graph(&mut g, out, &self.layout.features_of(x))?;
        Ok(w.kl * g.scalar(kl) + w.recon * g.scalar(recon))
    }

    /// Discriminator cross-entropy on given latents.
    pub fn loss_adv(&self, u: &Matrix, groups: &[usize]) -> Result<f64> {
        let mut g = ValueGraph::new();
        let b = self.bind(&mut g, false, false);
        let uv = g.constant(u.clone());
        let adv = self.adv_graph(&mut g, &b, uv, groups)?;
        Ok(g.scalar(adv))
    }

    /// Cycle-consistency NLL of `x` after a flip and a flip back.
    pub fn loss_cyc<R: Rng + ?Sized>(&self, x: &Matrix, groups: &[usize], rng: &mut R) -> Result<f64> {
        self.check_width(x)?;
        let noise = CvaeNoise::draw(x.nrows(), self.latent_dim, groups, self.layout.n_groups, rng);
        let mut g = ValueGraph::new();
        let b = self.bind(&mut g, false, false);
        let xv = g.constant(x.clone());
        let (u, _, _) = self.encode_graph(&mut g, &b, xv, &noise.eps)?;
        let cyc = self.cycle_graph(&mut g, &b, u, groups, &self.layout.features_of(x), &noise)?;
        Ok(g.scalar(cyc))
    }
}

/// Closed-form KL of a diagonal Gaussian against `N(0, I)`, per row.
pub fn kl_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
        .sum::<f64>()
}
