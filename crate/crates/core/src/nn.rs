//! MLP models, domain discriminators, SGD with momentum and the mean-teacher
//! EMA copy.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// One affine layer: `x · weight + bias`, weight `[in, out]`, bias `[1, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// A multilayer perceptron. Hidden layers use `activation`; the last layer is
/// linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

fn glorot(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let bound = libm::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::matrix(rows, cols, data)
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `dims` lists every layer width,
    /// input first.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Layer { weight: glorot(w[0], w[1], rng), bias: Tensor::zeros(&[1, w[1]]) })
            .collect();
        Ok(Mlp { layers, activation })
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Layer { weight: Tensor::zeros(&[w[0], w[1]]), bias: Tensor::zeros(&[1, w[1]]) })
            .collect();
        Ok(Mlp { layers, activation })
    }

    /// Rebuilds an MLP from explicit layers, validating that widths chain.
    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("mlp layers"));
        }
        for l in &layers {
            if l.bias.shape() != [1, l.weight.cols()] || l.weight.shape().len() != 2 {
                return Err(Error::ShapeMismatch {
                    op: "layer",
                    lhs: l.weight.shape().to_vec(),
                    rhs: l.bias.shape().to_vec(),
                });
            }
        }
        for w in layers.windows(2) {
            if w[0].weight.cols() != w[1].weight.rows() {
                return Err(Error::ShapeMismatch {
                    op: "mlp chain",
                    lhs: w[0].weight.shape().to_vec(),
                    rhs: w[1].weight.shape().to_vec(),
                });
            }
        }
        Ok(Mlp { layers, activation })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidShape(dims.to_vec()));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weight.cols()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.weight.cols()));
        d
    }

    /// Parameters in `w0, b0, w1, b1, …` order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Adds the parameters to `g` as leaves.
    pub fn bind(&self, g: &mut Graph) -> BoundMlp {
        BoundMlp {
            ids: self.params().into_iter().map(|p| g.leaf(p.clone())).collect(),
            activation: self.activation,
        }
    }

    /// Evaluates the network on a `[B, in]` batch outside any caller graph.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let xi = g.leaf(x.clone());
        let out = b.forward(&mut g, xi)?;
        Ok(g.value(out).clone())
    }
}

/// An [`Mlp`] whose parameters live in a graph.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    ids: Vec<NodeId>,
    activation: Activation,
}

impl BoundMlp {
    pub fn param_ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let n_layers = self.ids.len() / 2;
        let mut h = x;
        for (i, pair) in self.ids.chunks(2).enumerate() {
            let m = g.matmul(h, pair[0])?;
            h = g.add(m, pair[1])?;
            if i + 1 < n_layers {
                h = match self.activation {
                    Activation::Relu => g.relu(h)?,
                    Activation::Tanh => g.tanh(h)?,
                };
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvKind {
    None,
    Dann,
    Cdan,
    Cliv,
}

/// Per-class discriminator heads for the class-level adversarial loss.
#[derive(Debug, Clone, PartialEq)]
pub enum ClivHeads {
    /// One trunk with `C` outputs.
    Shared(Mlp),
    /// `C` independent single-output networks.
    Separate(Vec<Mlp>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Discriminator {
    None,
    /// `Z → 1` logit.
    Dann(Mlp),
    /// `dim(Z)·C → 1` logit over the per-sample outer product `z ⊗ ŷ`.
    Cdan(Mlp),
    /// `Z → C` logits, one per class.
    Cliv(ClivHeads),
}

impl Discriminator {
    pub fn kind(&self) -> AdvKind {
        match self {
            Discriminator::None => AdvKind::None,
            Discriminator::Dann(_) => AdvKind::Dann,
            Discriminator::Cdan(_) => AdvKind::Cdan,
            Discriminator::Cliv(_) => AdvKind::Cliv,
        }
    }

    pub fn mlps(&self) -> Vec<&Mlp> {
        match self {
            Discriminator::None => Vec::new(),
            Discriminator::Dann(m) | Discriminator::Cdan(m) => vec![m],
            Discriminator::Cliv(ClivHeads::Shared(m)) => vec![m],
            Discriminator::Cliv(ClivHeads::Separate(ms)) => ms.iter().collect(),
        }
    }

    pub fn mlps_mut(&mut self) -> Vec<&mut Mlp> {
        match self {
            Discriminator::None => Vec::new(),
            Discriminator::Dann(m) | Discriminator::Cdan(m) => vec![m],
            Discriminator::Cliv(ClivHeads::Shared(m)) => vec![m],
            Discriminator::Cliv(ClivHeads::Separate(ms)) => ms.iter_mut().collect(),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundDiscriminator {
        let kind = self.kind();
        let separate = matches!(self, Discriminator::Cliv(ClivHeads::Separate(_)));
        BoundDiscriminator { kind, separate, heads: self.mlps().iter().map(|m| m.bind(g)).collect() }
    }
}

#[derive(Debug, Clone)]
pub struct BoundDiscriminator {
    kind: AdvKind,
    separate: bool,
    heads: Vec<BoundMlp>,
}

impl BoundDiscriminator {
    pub fn kind(&self) -> AdvKind {
        self.kind
    }

    pub fn param_ids(&self) -> Vec<NodeId> {
        self.heads.iter().flat_map(|h| h.param_ids().iter().copied()).collect()
    }

    /// Domain logits: `[B, 1]` for dann/cdan, `[B, C]` for cliv. `y` is the
    /// class-probability (or one-hot) matrix required by cdan.
    pub fn logits(&self, g: &mut Graph, z: NodeId, y: Option<NodeId>) -> Result<NodeId> {
        match self.kind {
            AdvKind::None => Err(Error::invalid("model has no discriminator")),
            AdvKind::Dann => self.heads[0].forward(g, z),
            AdvKind::Cdan => {
                let y = y.ok_or_else(|| Error::invalid("cdan discriminator needs class probabilities"))?;
                let zy = g.outer(z, y)?;
                self.heads[0].forward(g, zy)
            }
            AdvKind::Cliv if self.separate => {
                let cols = self
                    .heads
                    .iter()
                    .map(|h| h.forward(g, z))
                    .collect::<Result<Vec<_>>>()?;
                g.concat(&cols)
            }
            AdvKind::Cliv => self.heads[0].forward(g, z),
        }
    }
}

/// Mean-teacher copy of the feature extractor and classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub phi: Mlp,
    pub classifier: Mlp,
}

/// Model architecture. Defaults match the toy-scale experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub disc_hidden: usize,
    pub activation: Activation,
    pub adversary: AdvKind,
    pub cliv_separate_heads: bool,
    pub teacher: bool,
    /// Upper bound on the cdan discriminator input width `dim(Z)·C`.
    pub cdan_max_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_dim: 2,
            hidden: vec![64, 64],
            feature_dim: 16,
            num_classes: 2,
            disc_hidden: 64,
            activation: Activation::Relu,
            adversary: AdvKind::None,
            cliv_separate_heads: false,
            teacher: false,
            cdan_max_dim: 4096,
        }
    }
}

/// `φ`, `g`, the discriminator and an optional EMA teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub phi: Mlp,
    pub classifier: Mlp,
    pub discriminator: Discriminator,
    pub teacher: Option<Teacher>,
}

fn module_rng(seed: u64, module: u64) -> Rng {
    rng_from_seed(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(module))
}

impl ModelBundle {
    pub fn new(arch: &Architecture, seed: u64) -> Result<Self> {
        if arch.num_classes == 0 {
            return Err(Error::invalid("num_classes must be positive"));
        }
        let mut phi_dims = vec![arch.input_dim];
        phi_dims.extend(&arch.hidden);
        phi_dims.push(arch.feature_dim);
        let phi = Mlp::new(&phi_dims, arch.activation, &mut module_rng(seed, 0))?;
        let classifier = Mlp::new(
            &[arch.feature_dim, arch.num_classes],
            arch.activation,
            &mut module_rng(seed, 1),
        )?;
        let mut drng = module_rng(seed, 2);
        let (z, h, c) = (arch.feature_dim, arch.disc_hidden, arch.num_classes);
        let discriminator = match arch.adversary {
            AdvKind::None => Discriminator::None,
            AdvKind::Dann => Discriminator::Dann(Mlp::new(&[z, h, 1], arch.activation, &mut drng)?),
            AdvKind::Cdan => {
                if z * c > arch.cdan_max_dim {
                    return Err(Error::invalid(alloc::format!(
                        "cdan input width {} exceeds cap {}",
                        z * c,
                        arch.cdan_max_dim
                    )));
                }
                Discriminator::Cdan(Mlp::new(&[z * c, h, 1], arch.activation, &mut drng)?)
            }
            AdvKind::Cliv if arch.cliv_separate_heads => Discriminator::Cliv(ClivHeads::Separate(
                (0..c)
                    .map(|_| Mlp::new(&[z, h, 1], arch.activation, &mut drng))
                    .collect::<Result<_>>()?,
            )),
            AdvKind::Cliv => {
                Discriminator::Cliv(ClivHeads::Shared(Mlp::new(&[z, h, c], arch.activation, &mut drng)?))
            }
        };
        let teacher = arch.teacher.then(|| Teacher { phi: phi.clone(), classifier: classifier.clone() });
        Ok(ModelBundle { phi, classifier, discriminator, teacher })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.phi.in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.phi.out_dim()
    }

    /// Student parameters: `φ`, then `g`, then discriminator heads.
    pub fn student_params(&self) -> Vec<&Tensor> {
        let mut v = self.phi.params();
        v.extend(self.classifier.params());
        for m in self.discriminator.mlps() {
            v.extend(m.params());
        }
        v
    }

    pub fn student_params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.phi.params_mut();
        v.extend(self.classifier.params_mut());
        for m in self.discriminator.mlps_mut() {
            v.extend(m.params_mut());
        }
        v
    }

    pub fn bind(&self, g: &mut Graph) -> BoundBundle {
        BoundBundle {
            phi: self.phi.bind(g),
            classifier: self.classifier.bind(g),
            discriminator: self.discriminator.bind(g),
            teacher: self.teacher.as_ref().map(|t| (t.phi.bind(g), t.classifier.bind(g))),
        }
    }

    /// Representations and class probabilities for a `[B, dim(X)]` batch.
    pub fn forward_h(&self, x: &Tensor, use_teacher: bool) -> Result<(Tensor, Tensor)> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward_h",
                lhs: x.shape().to_vec(),
                rhs: vec![self.input_dim()],
            });
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let xi = g.leaf(x.clone());
        let out = b.forward_h(&mut g, xi, use_teacher)?;
        Ok((g.value(out.z).clone(), g.value(out.probs).clone()))
    }

    /// Class probabilities from the student.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_h(x, false)?.1)
    }

    /// Representations `φ(x)`.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.phi.predict(x)
    }

    /// Domain probabilities: `[B, 1]` (dann, cdan) or `[B, C]` (cliv).
    pub fn discriminator_forward(&self, z: &Tensor, y: Option<&Tensor>) -> Result<Tensor> {
        if matches!(self.discriminator.kind(), AdvKind::Cliv | AdvKind::Cdan) && y.is_none() {
            return Err(Error::invalid("class-conditioned discriminator needs predictions or labels"));
        }
        let mut g = Graph::new();
        let d = self.discriminator.bind(&mut g);
        let zi = g.leaf(z.clone());
        let yi = y.map(|y| g.leaf(y.clone()));
        let l = d.logits(&mut g, zi, yi)?;
        let s = g.sigmoid(l)?;
        Ok(g.value(s).clone())
    }
}

/// Graph nodes produced by [`BoundBundle::forward_h`].
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub z: NodeId,
    pub logits: NodeId,
    pub probs: NodeId,
}

#[derive(Debug, Clone)]
pub struct BoundBundle {
    pub phi: BoundMlp,
    pub classifier: BoundMlp,
    pub discriminator: BoundDiscriminator,
    pub teacher: Option<(BoundMlp, BoundMlp)>,
}

impl BoundBundle {
    /// Ids matching [`ModelBundle::student_params`] order.
    pub fn student_ids(&self) -> Vec<NodeId> {
        let mut v = self.phi.param_ids().to_vec();
        v.extend_from_slice(self.classifier.param_ids());
        v.extend(self.discriminator.param_ids());
        v
    }

    pub fn teacher_ids(&self) -> Vec<NodeId> {
        match &self.teacher {
            Some((p, c)) => p.param_ids().iter().chain(c.param_ids()).copied().collect(),
            None => Vec::new(),
        }
    }

    pub fn forward_h(&self, g: &mut Graph, x: NodeId, use_teacher: bool) -> Result<Forward> {
        let (phi, cls) = match (&self.teacher, use_teacher) {
            (Some((p, c)), true) => (p, c),
            (None, true) => return Err(Error::invalid("model has no teacher")),
            _ => (&self.phi, &self.classifier),
        };
        let z = phi.forward(g, x)?;
        let logits = cls.forward(g, z)?;
        let probs = g.softmax(logits)?;
        Ok(Forward { z, logits, probs })
    }

    /// Detached consistency targets: teacher probabilities when a teacher is
    /// bound, otherwise the student's own, behind a stop-gradient.
    pub fn pseudo_targets(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let f = self.forward_h(g, x, self.teacher.is_some())?;
        g.stop_gradient(f.probs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub alpha_lr: f64,
    pub beta_lr: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { base_lr: 1e-2, momentum: 0.9, alpha_lr: 10.0, beta_lr: 0.75 }
    }
}

impl SgdConfig {
    /// Annealed learning rate `μ₀ / (1 + α·p)^β` at training progress `p`.
    pub fn lr_at(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        self.base_lr / libm::pow(1.0 + self.alpha_lr * p, self.beta_lr)
    }
}

/// Mini-batch SGD with heavy-ball momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub config: SgdConfig,
    pub velocities: Vec<Tensor>,
    pub step: u64,
}

impl SgdState {
    pub fn new(config: SgdConfig, params: &[&Tensor]) -> Self {
        SgdState {
            config,
            velocities: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn lr_at(&self, progress: f64) -> f64 {
        self.config.lr_at(progress)
    }

    /// `v ← m·v − lr·grad; p ← p + v`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocities.len() {
            return Err(Error::invalid("parameter, gradient and velocity counts differ"));
        }
        for (p, gr) in params.iter().zip(grads) {
            if p.shape() != gr.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    lhs: p.shape().to_vec(),
                    rhs: gr.shape().to_vec(),
                });
            }
            if !gr.all_finite() {
                return Err(Error::NonFinite("sgd_step gradient"));
            }
        }
        let m = self.config.momentum;
        for ((p, gr), v) in params.iter_mut().zip(grads).zip(&mut self.velocities) {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(gr.data()).zip(v.data_mut()) {
                *vv = m * *vv - lr * gv;
                *pv += *vv;
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// `θ′ ← β·θ′ + (1 − β)·θ` over the teacher's `φ` and `g`.
pub fn ema_update(bundle: &mut ModelBundle, beta: f64) -> Result<()> {
    let ModelBundle { phi, classifier, teacher, .. } = bundle;
    let teacher = teacher.as_mut().ok_or_else(|| Error::invalid("ema_update needs a teacher"))?;
    let student = phi.params().into_iter().chain(classifier.params());
    let shadow = teacher.phi.params_mut().into_iter().chain(teacher.classifier.params_mut());
    for (t, s) in shadow.zip(student) {
        for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
            *tv = beta * *tv + (1.0 - beta) * sv;
        }
    }
    Ok(())
}
