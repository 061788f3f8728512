//! Central finite-difference checks of analytic gradients.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::losses::{
    aug_loss, cdan_loss, cliv_loss, cross_entropy, dann_loss, total_objective_in, vat_loss, LossWeights, TcSample,
};
use crate::nn::{Activation, AdvKind, Architecture, BoundBundle, ModelBundle};
use crate::tensor::Tensor;
use crate::{rng_from_seed, Rng};

/// Denominator floor for relative errors, so entries whose true gradient is
/// near zero are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamError {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub per_param: Vec<ParamError>,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate<F>(builder: &mut F, params: &[Tensor]) -> Result<(Graph, Vec<NodeId>, NodeId)>
where
    F: FnMut(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let root = builder(&mut g, &ids)?;
    if !g.value(root).is_scalar() {
        return Err(Error::NonScalarRoot(g.value(root).shape().to_vec()));
    }
    Ok((g, ids, root))
}

/// Compares reverse-mode gradients of `loss_builder` against central
/// differences `(f(p + h) − f(p − h)) / 2h` for every parameter entry.
///
/// The builder receives a fresh graph with one leaf per entry of `params`
/// and must return a scalar root; it must be deterministic in the params.
pub fn grad_check<F>(mut loss_builder: F, params: &[Tensor], step: f64) -> Result<GradReport>
where
    F: FnMut(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let (g, ids, root) = evaluate(&mut loss_builder, params)?;
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.wrt(id)).collect();

    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_param = Vec::with_capacity(params.len());
    for (pi, param) in params.iter().enumerate() {
        let mut entry = ParamError { max_abs_error: 0.0, max_rel_error: 0.0, max_abs_grad: 0.0 };
        for k in 0..param.len() {
            let base = param.data()[k];
            work[pi].data_mut()[k] = base + step;
            let (gp, _, rp) = evaluate(&mut loss_builder, &work)?;
            work[pi].data_mut()[k] = base - step;
            let (gm, _, rm) = evaluate(&mut loss_builder, &work)?;
            work[pi].data_mut()[k] = base;
            let numeric = (gp.value(rp).item() - gm.value(rm).item()) / (2.0 * step);
            let a = analytic[pi].data()[k];
            entry.max_abs_error = entry.max_abs_error.max((a - numeric).abs());
            entry.max_rel_error = entry.max_rel_error.max(relative_error(a, numeric));
            entry.max_abs_grad = entry.max_abs_grad.max(a.abs());
        }
        per_param.push(entry);
    }
    Ok(GradReport {
        max_abs_error: per_param.iter().map(|p| p.max_abs_error).fold(0.0, f64::max),
        max_rel_error: per_param.iter().map(|p| p.max_rel_error).fold(0.0, f64::max),
        per_param,
    })
}

/// Checks the student-parameter gradients of a loss built on `bundle`
/// against central differences over every student parameter entry.
///
/// `build` records the loss onto the graph it is given and returns it with
/// the binding it used and the scalar root. Stop-gradient outputs are pinned
/// to their unperturbed values during the perturbed evaluations, so the
/// reference is the derivative of the surrogate the backward pass actually
/// differentiates.
pub fn grad_check_bundle<F>(bundle: &ModelBundle, mut build: F, step: f64) -> Result<GradReport>
where
    F: FnMut(Graph, &ModelBundle) -> Result<(Graph, BoundBundle, NodeId)>,
{
    let (g, b, root) = build(Graph::new(), bundle)?;
    if !g.value(root).is_scalar() {
        return Err(Error::NonScalarRoot(g.value(root).shape().to_vec()));
    }
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor> = b.student_ids().into_iter().map(|id| grads.wrt(id)).collect();
    let pins = g.stop_values();
    let mut work = bundle.clone();
    let value = |m: &ModelBundle, build: &mut F| -> Result<f64> {
        let (g, _, r) = build(Graph::with_pinned_stops(pins.clone()), m)?;
        Ok(g.value(r).item())
    };
    let mut per_param = Vec::with_capacity(analytic.len());
    for (pi, a) in analytic.iter().enumerate() {
        let mut entry = ParamError { max_abs_error: 0.0, max_rel_error: 0.0, max_abs_grad: 0.0 };
        for k in 0..a.len() {
            let base = work.student_params()[pi].data()[k];
            work.student_params_mut()[pi].data_mut()[k] = base + step;
            let fp = value(&work, &mut build)?;
            work.student_params_mut()[pi].data_mut()[k] = base - step;
            let fm = value(&work, &mut build)?;
            work.student_params_mut()[pi].data_mut()[k] = base;
            let numeric = (fp - fm) / (2.0 * step);
            let av = a.data()[k];
            entry.max_abs_error = entry.max_abs_error.max((av - numeric).abs());
            entry.max_rel_error = entry.max_rel_error.max(relative_error(av, numeric));
            entry.max_abs_grad = entry.max_abs_grad.max(av.abs());
        }
        per_param.push(entry);
    }
    Ok(GradReport {
        max_abs_error: per_param.iter().map(|p| p.max_abs_error).fold(0.0, f64::max),
        max_rel_error: per_param.iter().map(|p| p.max_rel_error).fold(0.0, f64::max),
        per_param,
    })
}

/// The objectives covered by [`check_loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Ce,
    Vat,
    Aug,
    Dann,
    Cdan,
    Cliv,
    Total,
}

impl LossKind {
    pub const ALL: [LossKind; 7] =
        [LossKind::Ce, LossKind::Vat, LossKind::Aug, LossKind::Dann, LossKind::Cdan, LossKind::Cliv, LossKind::Total];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Vat => "vat",
            LossKind::Aug => "aug",
            LossKind::Dann => "dann",
            LossKind::Cdan => "cdan",
            LossKind::Cliv => "cliv",
            LossKind::Total => "total",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown { kind: "loss", name: s.to_string() })
    }

    fn adversary(self) -> AdvKind {
        match self {
            LossKind::Dann => AdvKind::Dann,
            LossKind::Cdan => AdvKind::Cdan,
            LossKind::Cliv | LossKind::Total => AdvKind::Cliv,
            _ => AdvKind::None,
        }
    }
}

/// A fixed random batch with pre-drawn consistency pieces.
#[derive(Debug, Clone)]
pub struct CheckBatch {
    pub x_s: Tensor,
    pub y_s: Tensor,
    pub x_t: Tensor,
    pub sample: TcSample,
}

fn normal_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            scale * v
        })
        .collect();
    Tensor::matrix(rows, cols, data)
}

impl CheckBatch {
    pub fn random(rows: usize, input_dim: usize, classes: usize, rng: &mut Rng) -> Self {
        let x_s = normal_matrix(rows, input_dim, 1.0, rng);
        let labels: Vec<usize> = (0..rows).map(|i| i % classes).collect();
        let y_s = crate::datasets::one_hot(&labels, classes);
        let x_t = normal_matrix(rows, input_dim, 1.0, rng);
        let vat_r = normal_matrix(rows, input_dim, 0.3, rng);
        let x_aug = normal_matrix(rows, input_dim, 1.0, rng);
        CheckBatch { x_s, y_s, x_t, sample: TcSample { vat_r, x_aug } }
    }
}

/// Builds the named loss on a fixed batch. Adversarial losses are built
/// without gradient reversal; `total` uses a reversal strength of −1, which
/// makes the layer an identity so the analytic gradient is that of the
/// reported scalar.
pub fn build_loss(
    mut g: Graph,
    kind: LossKind,
    bundle: &ModelBundle,
    batch: &CheckBatch,
    weights: &LossWeights,
) -> Result<(Graph, BoundBundle, NodeId)> {
    if kind == LossKind::Total {
        let obj = total_objective_in(
            g,
            bundle,
            &batch.x_s,
            &batch.y_s,
            &batch.x_t,
            weights,
            bundle.discriminator.kind(),
            Some(&batch.sample),
            -1.0,
        )?;
        return Ok((obj.graph, obj.bound, obj.root));
    }
    let b = bundle.bind(&mut g);
    let xs = g.leaf(batch.x_s.clone());
    let ys = g.leaf(batch.y_s.clone());
    let xt = g.leaf(batch.x_t.clone());
    let root = match kind {
        LossKind::Ce => {
            let f = b.forward_h(&mut g, xs, false)?;
            cross_entropy(&mut g, f.logits, ys)?
        }
        LossKind::Vat => {
            let t = b.pseudo_targets(&mut g, xt)?;
            vat_loss(&mut g, &b, xt, &batch.sample.vat_r, t)?
        }
        LossKind::Aug => {
            let t = b.pseudo_targets(&mut g, xt)?;
            aug_loss(&mut g, &b, &batch.sample.x_aug, t)?
        }
        LossKind::Dann | LossKind::Cdan | LossKind::Cliv => {
            let fs = b.forward_h(&mut g, xs, false)?;
            let ft = b.forward_h(&mut g, xt, false)?;
            match kind {
                LossKind::Dann => dann_loss(&mut g, &b.discriminator, fs.z, ft.z)?,
                LossKind::Cdan => cdan_loss(&mut g, &b.discriminator, fs.z, fs.probs, ft.z, ft.probs)?,
                _ => cliv_loss(&mut g, &b.discriminator, fs.z, ys, ft.z, ft.probs)?,
            }
        }
        LossKind::Total => unreachable!(),
    };
    Ok((g, b, root))
}

/// Small tanh architecture used for finite-difference checks (smooth
/// everywhere, so central differences are accurate).
pub fn check_architecture(kind: LossKind, input_dim: usize, classes: usize) -> Architecture {
    Architecture {
        input_dim,
        hidden: alloc::vec![8],
        feature_dim: 4,
        num_classes: classes,
        disc_hidden: 6,
        activation: Activation::Tanh,
        adversary: kind.adversary(),
        cliv_separate_heads: false,
        teacher: matches!(kind, LossKind::Vat | LossKind::Aug | LossKind::Total),
        cdan_max_dim: 4096,
    }
}

/// Seeded finite-difference check of one loss on a random tanh model and
/// batch. The teacher, when present, is a perturbed copy of the student.
pub fn check_loss(kind: LossKind, seed: u64) -> Result<GradReport> {
    let (d, c, rows) = (3, 3, 6);
    let mut bundle = ModelBundle::new(&check_architecture(kind, d, c), seed)?;
    let mut rng = rng_from_seed(seed ^ 0xC4EC);
    if let Some(t) = bundle.teacher.as_mut() {
        for p in t.phi.params_mut().into_iter().chain(t.classifier.params_mut()) {
            for v in p.data_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *v += 0.1 * n;
            }
        }
    }
    let batch = CheckBatch::random(rows, d, c, &mut rng);
    let weights = LossWeights { lambda_adv: 0.7, lambda_tc: 3.0, ..LossWeights::default() };
    grad_check_bundle(&bundle, |g, m| build_loss(g, kind, m, &batch, &weights), 1e-5)
}
