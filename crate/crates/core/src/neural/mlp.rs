use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Matrix, ValueGraph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Shape of a dense stack: `in_dim → widths[0] → … → widths[last]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub in_dim: usize,
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(in_dim: usize, widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        let spec = MlpSpec {
            in_dim,
            widths,
            activations,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `depth` layers: ReLU hidden layers of width `hidden`, then a final
    /// layer of width `out_dim` with `last` activation.
    pub fn stack(
        in_dim: usize,
        hidden: usize,
        depth: usize,
        out_dim: usize,
        last: Activation,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(Error::InvalidArgument("MLP needs at least one layer".into()));
        }
        let mut widths = vec![hidden; depth - 1];
        widths.push(out_dim);
        let mut activations = vec![Activation::Relu; depth - 1];
        activations.push(last);
        Self::new(in_dim, widths, activations)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::InvalidArgument("MLP needs at least one layer".into()));
        }
        if self.widths.len() != self.activations.len() {
            return Err(Error::InvalidArgument(format!(
                "{} widths but {} activations",
                self.widths.len(),
                self.activations.len()
            )));
        }
        if self.in_dim == 0 || self.widths.contains(&0) {
            return Err(Error::InvalidArgument("MLP widths must be positive".into()));
        }
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().expect("validated spec has layers")
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.in_dim
        } else {
            self.widths[layer - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weight: Matrix,
    /// `1 × fan_out`
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// He-uniform weights for ReLU layers, Glorot-uniform for linear
    /// outputs; zero biases.
    pub fn init<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Self {
        let layers = (0..spec.depth())
            .map(|l| {
                let fan_in = spec.fan_in(l);
                let fan_out = spec.widths[l];
                let limit = match spec.activations[l] {
                    Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                    Activation::None => (6.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                let weight = Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(rng));
                Layer {
                    weight,
                    bias: Matrix::zeros((1, fan_out)),
                }
            })
            .collect();
        MlpParams { layers }
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let layers = (0..spec.depth())
            .map(|l| Layer {
                weight: Matrix::zeros((spec.fan_in(l), spec.widths[l])),
                bias: Matrix::zeros((1, spec.widths[l])),
            })
            .collect();
        MlpParams { layers }
    }

    /// Checks that every tensor has the shape `spec` prescribes.
    pub fn check_against(&self, spec: &MlpSpec) -> Result<()> {
        if self.layers.len() != spec.depth() {
            return Err(Error::Shape(format!(
                "{} layers, spec has {}",
                self.layers.len(),
                spec.depth()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let want = (spec.fan_in(l), spec.widths[l]);
            if layer.weight.dim() != want || layer.bias.dim() != (1, want.1) {
                return Err(Error::Shape(format!(
                    "layer {l}: weight {:?} bias {:?}, expected {want:?}",
                    layer.weight.dim(),
                    layer.bias.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, g: &mut ValueGraph) -> MlpBinding {
        self.bind_with(g, true)
    }

    /// Records the parameters as constants; no gradient reaches them.
    pub fn bind_frozen(&self, g: &mut ValueGraph) -> MlpBinding {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut ValueGraph, trainable: bool) -> MlpBinding {
        let leaf = |g: &mut ValueGraph, m: &Matrix| {
            if trainable {
                g.param(m.clone())
            } else {
                g.constant(m.clone())
            }
        };
        let layers = self
            .layers
            .iter()
            .map(|l| (leaf(g, &l.weight), leaf(g, &l.bias)))
            .collect();
        MlpBinding { layers }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Graph handles for one [`MlpParams`] instance.
#[derive(Clone, Debug)]
pub struct MlpBinding {
    pub layers: Vec<(Var, Var)>,
}

impl MlpBinding {
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }

    /// Gradients in the same layout as the bound parameters.
    pub fn grads(&self, grads: &Gradients) -> MlpParams {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|&(w, b)| Layer {
                    weight: grads.wrt(w),
                    bias: grads.wrt(b),
                })
                .collect(),
        }
    }
}

/// Affine + activation for every layer of `spec`, recorded on `g`.
pub fn mlp_forward(
    g: &mut ValueGraph,
    binding: &MlpBinding,
    spec: &MlpSpec,
    batch: Var,
) -> Result<Var> {
    let (_, width) = g.shape(batch);
    if width != spec.in_dim {
        return Err(Error::Shape(format!(
            "MLP input width {width}, expected {}",
            spec.in_dim
        )));
    }
    let mut h = batch;
    for (&(w, b), act) in binding.layers.iter().zip(&spec.activations) {
        let z = g.matmul(h, w)?;
        h = g.add_row(z, b)?;
        if *act == Activation::Relu {
            h = g.relu(h);
        }
    }
    Ok(h)
}

/// Forward pass without recording, for inference.
pub fn mlp_apply(params: &MlpParams, spec: &MlpSpec, batch: &Matrix) -> Result<Matrix> {
    if batch.ncols() != spec.in_dim {
        return Err(Error::Shape(format!(
            "MLP input width {}, expected {}",
            batch.ncols(),
            spec.in_dim
        )));
    }
    let mut h = batch.to_owned();
    for (layer, act) in params.layers.iter().zip(&spec.activations) {
        h = h.dot(&layer.weight) + &layer.bias;
        if *act == Activation::Relu {
            h.mapv_inplace(|v| v.max(0.0));
        }
    }
    Ok(h)
}
