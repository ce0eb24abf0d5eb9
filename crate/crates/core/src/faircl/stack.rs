use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::checkpoint::Checkpointable;
use crate::neural::{
    mlp_apply, mlp_forward, Activation, Gradients, Matrix, MlpBinding, MlpParams, MlpSpec,
    ValueGraph, Var,
};
use crate::tabular::FeatureEncoder;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackArchitecture {
    pub hidden: usize,
    pub embed_dim: usize,
}

impl Default for StackArchitecture {
    fn default() -> Self {
        StackArchitecture {
            hidden: 256,
            embed_dim: 32,
        }
    }
}

/// Which layer of the stack is handed to downstream consumers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// `F = h1∘g∘f`, the space the fairness terms act on.
    #[default]
    Contrastive,
    /// `g∘f`, the trunk shared by both heads.
    Projection,
}

/// Backbone `f`, projection `g`, contrastive head `h1` and distillation
/// head `h2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderStack {
    pub embed_dim: usize,
    pub backbone_spec: MlpSpec,
    pub backbone: MlpParams,
    pub projection_spec: MlpSpec,
    pub projection: MlpParams,
    pub contrastive_spec: MlpSpec,
    pub contrastive_head: MlpParams,
    pub distill_spec: MlpSpec,
    pub distill_head: MlpParams,
}

pub struct StackBinding {
    pub backbone: MlpBinding,
    pub projection: MlpBinding,
    pub contrastive_head: MlpBinding,
    pub distill_head: MlpBinding,
}

impl StackBinding {
    /// Parameter handles in [`EncoderStack::tensors`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.backbone.vars();
        v.extend(self.projection.vars());
        v.extend(self.contrastive_head.vars());
        v.extend(self.distill_head.vars());
        v
    }

    pub fn grads(&self, grads: &Gradients) -> Vec<Matrix> {
        self.vars().into_iter().map(|v| grads.wrt(v)).collect()
    }
}

impl EncoderStack {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, arch: &StackArchitecture, rng: &mut R) -> Result<Self> {
        let (h, e) = (arch.hidden, arch.embed_dim);
        if h == 0 || e == 0 {
            return Err(Error::InvalidArgument("hidden and embed_dim must be positive".into()));
        }
        let backbone_spec = MlpSpec::stack(in_dim, h, 3, h, Activation::Relu)?;
        let projection_spec = MlpSpec::stack(h, h, 2, e, Activation::None)?;
        let contrastive_spec = MlpSpec::stack(e, h, 2, e, Activation::None)?;
        let distill_spec = contrastive_spec.clone();
        Ok(EncoderStack {
            embed_dim: e,
            backbone: MlpParams::init(&backbone_spec, rng),
            projection: MlpParams::init(&projection_spec, rng),
            contrastive_head: MlpParams::init(&contrastive_spec, rng),
            distill_head: MlpParams::init(&distill_spec, rng),
            backbone_spec,
            projection_spec,
            contrastive_spec,
            distill_spec,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.backbone_spec.in_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.check_against(&self.backbone_spec)?;
        self.projection.check_against(&self.projection_spec)?;
        self.contrastive_head.check_against(&self.contrastive_spec)?;
        self.distill_head.check_against(&self.distill_spec)?;
        let chained = self.projection_spec.in_dim == self.backbone_spec.out_dim()
            && self.projection_spec.out_dim() == self.embed_dim
            && self.contrastive_spec.in_dim == self.embed_dim
            && self.distill_spec.in_dim == self.embed_dim;
        if !chained {
            return Err(Error::Shape("encoder stack layers do not chain".into()));
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut t = self.backbone.tensors();
        t.extend(self.projection.tensors());
        t.extend(self.contrastive_head.tensors());
        t.extend(self.distill_head.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = self.backbone.tensors_mut();
        t.extend(self.projection.tensors_mut());
        t.extend(self.contrastive_head.tensors_mut());
        t.extend(self.distill_head.tensors_mut());
        t
    }

    pub fn all_finite(&self) -> bool {
        self.backbone.all_finite()
            && self.projection.all_finite()
            && self.contrastive_head.all_finite()
            && self.distill_head.all_finite()
    }

    pub fn bind(&self, g: &mut ValueGraph) -> StackBinding {
        StackBinding {
            backbone: self.backbone.bind(g),
            projection: self.projection.bind(g),
            contrastive_head: self.contrastive_head.bind(g),
            distill_head: self.distill_head.bind(g),
        }
    }

    /// `g∘f(x)` on the graph.
    pub fn represent_graph(&self, g: &mut ValueGraph, b: &StackBinding, x: Var) -> Result<Var> {
        let h = mlp_forward(g, &b.backbone, &self.backbone_spec, x)?;
        mlp_forward(g, &b.projection, &self.projection_spec, h)
    }

    /// `h1` applied to a representation.
    pub fn contrastive_graph(&self, g: &mut ValueGraph, b: &StackBinding, rep: Var) -> Result<Var> {
        mlp_forward(g, &b.contrastive_head, &self.contrastive_spec, rep)
    }

    /// `h2` applied to a representation.
    pub fn distill_graph(&self, g: &mut ValueGraph, b: &StackBinding, rep: Var) -> Result<Var> {
        mlp_forward(g, &b.distill_head, &self.distill_spec, rep)
    }

    /// `g∘f(x)`.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        let h = mlp_apply(&self.backbone, &self.backbone_spec, x)?;
        mlp_apply(&self.projection, &self.projection_spec, &h)
    }

    /// Contrastive embedding `F = h1∘g∘f(x)`.
    pub fn contrastive_embed(&self, x: &Matrix) -> Result<Matrix> {
        mlp_apply(&self.contrastive_head, &self.contrastive_spec, &self.embed(x)?)
    }

    pub fn represent(&self, x: &Matrix, which: Representation) -> Result<Matrix> {
        match which {
            Representation::Contrastive => self.contrastive_embed(x),
            Representation::Projection => self.embed(x),
        }
    }
}

/// Encoder snapshot bundled with the codec that produces its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderSnapshot {
    pub epoch: usize,
    pub representation: Representation,
    pub features: FeatureEncoder,
    pub stack: EncoderStack,
}

impl Checkpointable for EncoderSnapshot {
    const KIND: &'static str = "encoder-snapshot";

    fn validate(&self) -> Result<()> {
        self.stack.validate()?;
        if self.stack.in_dim() != self.features.dim() {
            return Err(Error::Shape(format!(
                "stack input {} but codec width {}",
                self.stack.in_dim(),
                self.features.dim()
            )));
        }
        Ok(())
    }
}

impl EncoderSnapshot {
    /// Served representation of encoded rows.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.stack.in_dim() {
            return Err(Error::Shape(format!(
                "rows of width {} for an encoder of width {}",
                x.ncols(),
                self.stack.in_dim()
            )));
        }
        self.stack.represent(x, self.representation)
    }

    pub fn embed_dataset(&self, ds: &crate::tabular::Dataset) -> Result<Matrix> {
        self.embed(&self.features.encode_rows(&ds.rows)?)
    }

    pub fn embed_dim(&self) -> usize {
        self.stack.embed_dim
    }
}
