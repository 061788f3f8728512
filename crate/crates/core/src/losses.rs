//! Training objectives.
//!
//! The graph-level functions take node ids so that callers control which
//! parameters are bound and where gradient reversal sits. Adversarial losses
//! are written as the discriminator's binary cross-entropy (source = 1,
//! target = 0), averaged over the two domain means; the feature extractor
//! sees them through a gradient-reversal node inserted by [`total_objective`].

use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::{mix_augment, MixSpec, OpRegistry};
use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::nn::{AdvKind, BoundBundle, BoundDiscriminator, ModelBundle};
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of the active adversarial term (class-level, dann or cdan).
    pub lambda_adv: f64,
    pub lambda_tc: f64,
    /// VAT radius.
    pub vat_eps: f64,
    /// Power-iteration probe size, relative to the per-dimension input std.
    pub vat_xi: f64,
    pub vat_iters: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_adv: 1.0, lambda_tc: 10.0, vat_eps: 0.5, vat_xi: 1e-2, vat_iters: 1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.lambda_adv, self.lambda_tc, self.vat_eps, self.vat_xi];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("loss weights must be finite and nonnegative"));
        }
        if self.vat_iters == 0 {
            return Err(Error::invalid("vat_iters must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub vat: f64,
    pub aug: f64,
    pub tc: f64,
    pub adv: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.ce, self.vat, self.aug, self.tc, self.adv, self.total].iter().all(|v| v.is_finite())
    }

    /// Elementwise running sum, used for epoch averages.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.ce += other.ce;
        self.vat += other.vat;
        self.aug += other.aug;
        self.tc += other.tc;
        self.adv += other.adv;
        self.total += other.total;
    }

    pub fn scaled(&self, k: f64) -> LossBreakdown {
        LossBreakdown {
            ce: self.ce * k,
            vat: self.vat * k,
            aug: self.aug * k,
            tc: self.tc * k,
            adv: self.adv * k,
            total: self.total * k,
        }
    }
}

/// Mean cross-entropy `−Σ_c y_c log ŷ_c` from probabilities.
pub fn cross_entropy_probs(probs: &Tensor, y: &Tensor) -> Result<f64> {
    if probs.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: probs.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let mut total = 0.0;
    for (&p, &t) in probs.data().iter().zip(y.data()) {
        if t != 0.0 {
            if p <= 0.0 {
                return Err(Error::Domain { op: "cross_entropy", value: p });
            }
            total -= t * libm::log(p);
        }
    }
    Ok(total / probs.rows() as f64)
}

/// Mean cross-entropy from logits, via fused log-softmax.
pub fn cross_entropy(g: &mut Graph, logits: NodeId, y: NodeId) -> Result<NodeId> {
    let rows = g.value(logits).rows() as f64;
    let ls = g.log_softmax(logits)?;
    let m = g.mul(ls, y)?;
    let s = g.sum(m)?;
    g.scale(s, -1.0 / rows)
}

/// Mean over the batch of `‖target − probs‖²`.
pub fn consistency(g: &mut Graph, target: NodeId, probs: NodeId) -> Result<NodeId> {
    let rows = g.value(probs).rows() as f64;
    let d = g.sub(target, probs)?;
    let sq = g.square(d)?;
    let s = g.sum(sq)?;
    g.scale(s, 1.0 / rows)
}

fn normalize_rows(t: &mut Tensor) -> Vec<bool> {
    let cols = t.cols();
    let mut ok = Vec::with_capacity(t.rows());
    for row in t.data_mut().chunks_mut(cols) {
        let n = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
        if n > 0.0 && n.is_finite() {
            row.iter_mut().for_each(|v| *v /= n);
            ok.push(true);
        } else {
            ok.push(false);
        }
    }
    ok
}

/// Per-dimension standard deviation of a `[N, d]` sample set.
pub fn column_std(x: &Tensor) -> Vec<f64> {
    let (n, d) = x.dims2();
    (0..d)
        .map(|j| {
            let m = (0..n).map(|i| x.at(i, j)).sum::<f64>() / n as f64;
            libm::sqrt((0..n).map(|i| { let e = x.at(i, j) - m; e * e }).sum::<f64>() / n as f64)
        })
        .collect()
}

/// Finds the VAT perturbation `r = ε·d` for each row of `x` by power
/// iteration. Targets are the (detached) teacher or student predictions.
///
/// `input_scale` is the per-dimension input std; the finite-difference probe
/// is `vat_xi · input_scale ⊙ d`. A row whose gradient vanishes keeps its
/// current direction.
pub fn vat_perturbation(
    bundle: &ModelBundle,
    x: &Tensor,
    weights: &LossWeights,
    input_scale: &[f64],
    rng: &mut Rng,
) -> Result<Tensor> {
    let (rows, cols) = x.dims2();
    if input_scale.len() != cols {
        return Err(Error::invalid("input_scale length must match input width"));
    }
    let mut d = Tensor::matrix(rows, cols, (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect());
    normalize_rows(&mut d);
    let probe_scale = Tensor::matrix(1, cols, input_scale.iter().map(|s| s * weights.vat_xi).collect());

    for _ in 0..weights.vat_iters {
        let mut g = Graph::new();
        let b = bundle.bind(&mut g);
        let xi = g.leaf(x.clone());
        let target = b.pseudo_targets(&mut g, xi)?;
        let di = g.leaf(d.clone());
        let si = g.leaf(probe_scale.clone());
        let probe = g.mul(di, si)?;
        let xp = g.add(xi, probe)?;
        let f = b.forward_h(&mut g, xp, false)?;
        let loss = consistency(&mut g, target, f.probs)?;
        let grads = g.backward(loss)?;
        let mut gd = grads.wrt(di);
        let ok = normalize_rows(&mut gd);
        for (r, keep_new) in ok.into_iter().enumerate() {
            if keep_new {
                d.data_mut()[r * cols..(r + 1) * cols].copy_from_slice(gd.row(r));
            }
        }
    }
    Ok(d.map(|v| weights.vat_eps * v))
}

/// VAT consistency with a fixed (detached) perturbation `r`: gradients reach
/// the student only through `h(x + r)`.
pub fn vat_loss(g: &mut Graph, b: &BoundBundle, x: NodeId, r: &Tensor, target: NodeId) -> Result<NodeId> {
    let ri = g.leaf(r.clone());
    let xr = g.add(x, ri)?;
    let f = b.forward_h(g, xr, false)?;
    consistency(g, target, f.probs)
}

/// VAT loss value for a batch, running the perturbation search first.
pub fn vat_loss_value(
    bundle: &ModelBundle,
    x: &Tensor,
    weights: &LossWeights,
    input_scale: &[f64],
    rng: &mut Rng,
) -> Result<f64> {
    let r = vat_perturbation(bundle, x, weights, input_scale, rng)?;
    let mut g = Graph::new();
    let b = bundle.bind(&mut g);
    let xi = g.leaf(x.clone());
    let t = b.pseudo_targets(&mut g, xi)?;
    let l = vat_loss(&mut g, &b, xi, &r, t)?;
    Ok(g.value(l).item())
}

/// Augmentation consistency between detached targets on `x` and student
/// predictions on the already-mixed batch `x_aug`.
pub fn aug_loss(g: &mut Graph, b: &BoundBundle, x_aug: &Tensor, target: NodeId) -> Result<NodeId> {
    let xa = g.leaf(x_aug.clone());
    let f = b.forward_h(g, xa, false)?;
    consistency(g, target, f.probs)
}

/// Augmentation consistency value, mixing `x` with `registry` first.
pub fn aug_consistency_value(
    bundle: &ModelBundle,
    x: &Tensor,
    registry: &OpRegistry,
    spec: &MixSpec,
    rng: &mut Rng,
) -> Result<f64> {
    let x_aug = mix_augment(x, registry, spec, rng)?;
    let mut g = Graph::new();
    let b = bundle.bind(&mut g);
    let xi = g.leaf(x.clone());
    let t = b.pseudo_targets(&mut g, xi)?;
    let l = aug_loss(&mut g, &b, &x_aug, t)?;
    Ok(g.value(l).item())
}

fn domain_bce(g: &mut Graph, a_s: NodeId, w_s: Option<NodeId>, a_t: NodeId, w_t: Option<NodeId>) -> Result<NodeId> {
    let ns = g.value(a_s).rows() as f64;
    let nt = g.value(a_t).rows() as f64;
    let ls = g.log_sigmoid(a_s)?;
    let neg_t = g.scale(a_t, -1.0)?;
    let lt = g.log_sigmoid(neg_t)?;
    let ls = match w_s {
        Some(w) => g.mul(ls, w)?,
        None => ls,
    };
    let lt = match w_t {
        Some(w) => g.mul(lt, w)?,
        None => lt,
    };
    let ss = g.sum(ls)?;
    let st = g.sum(lt)?;
    let ms = g.scale(ss, -0.5 / ns)?;
    let mt = g.scale(st, -0.5 / nt)?;
    g.add(ms, mt)
}

/// Domain classification loss `½(−E_s log D − E_t log(1 − D))`.
pub fn dann_loss(g: &mut Graph, d: &BoundDiscriminator, z_s: NodeId, z_t: NodeId) -> Result<NodeId> {
    let a_s = d.logits(g, z_s, None)?;
    let a_t = d.logits(g, z_t, None)?;
    domain_bce(g, a_s, None, a_t, None)
}

/// Class-level domain loss: each sample's per-class binary cross-entropy is
/// weighted by its source label or (detached) target prediction mass.
pub fn cliv_loss(
    g: &mut Graph,
    d: &BoundDiscriminator,
    z_s: NodeId,
    y_s: NodeId,
    z_t: NodeId,
    yhat_t: NodeId,
) -> Result<NodeId> {
    let a_s = d.logits(g, z_s, None)?;
    let a_t = d.logits(g, z_t, None)?;
    for (a, y) in [(a_s, y_s), (a_t, yhat_t)] {
        if g.value(a).shape() != g.value(y).shape() {
            return Err(Error::ShapeMismatch {
                op: "cliv_loss",
                lhs: g.value(a).shape().to_vec(),
                rhs: g.value(y).shape().to_vec(),
            });
        }
    }
    let w_t = g.stop_gradient(yhat_t)?;
    domain_bce(g, a_s, Some(y_s), a_t, Some(w_t))
}

/// Domain loss on per-sample outer products `z ⊗ ŷ`; predictions detached.
pub fn cdan_loss(
    g: &mut Graph,
    d: &BoundDiscriminator,
    z_s: NodeId,
    yhat_s: NodeId,
    z_t: NodeId,
    yhat_t: NodeId,
) -> Result<NodeId> {
    let ys = g.stop_gradient(yhat_s)?;
    let yt = g.stop_gradient(yhat_t)?;
    let a_s = d.logits(g, z_s, Some(ys))?;
    let a_t = d.logits(g, z_t, Some(yt))?;
    domain_bce(g, a_s, None, a_t, None)
}

/// Inputs needed for the target-consistency term.
#[derive(Debug, Clone, Copy)]
pub struct TcContext<'a> {
    pub registry: &'a OpRegistry,
    pub mix: &'a MixSpec,
    /// Per-dimension input std used to size the VAT probe.
    pub input_scale: &'a [f64],
}

/// Pre-sampled random pieces of the consistency term. Fixing them turns the
/// objective into a deterministic function of the parameters.
#[derive(Debug, Clone)]
pub struct TcSample {
    pub vat_r: Tensor,
    pub x_aug: Tensor,
}

impl TcSample {
    pub fn draw(bundle: &ModelBundle, x_t: &Tensor, weights: &LossWeights, tc: &TcContext<'_>, rng: &mut Rng) -> Result<Self> {
        let vat_r = vat_perturbation(bundle, x_t, weights, tc.input_scale, rng)?;
        let x_aug = mix_augment(x_t, tc.registry, tc.mix, rng)?;
        Ok(TcSample { vat_r, x_aug })
    }
}

/// Everything a training step needs from the objective.
#[derive(Debug, Clone)]
pub struct Objective {
    pub graph: Graph,
    pub bound: BoundBundle,
    pub root: NodeId,
    pub breakdown: LossBreakdown,
}

impl Objective {
    /// Gradients for [`ModelBundle::student_params`], in order.
    pub fn student_grads(&self) -> Result<Vec<Tensor>> {
        let grads = self.graph.backward(self.root)?;
        Ok(self.bound.student_ids().into_iter().map(|id| grads.wrt(id)).collect())
    }
}

/// `ce + λ_adv·adv + λ_tc·(vat + aug)` on one paired batch.
///
/// The adversarial term reaches `φ` through gradient reversal with strength
/// `grl_lambda`, so one backward pass from the root trains the discriminator
/// and pushes the features the other way.
#[allow(clippy::too_many_arguments)]
pub fn total_objective(
    bundle: &ModelBundle,
    x_s: &Tensor,
    y_s: &Tensor,
    x_t: &Tensor,
    weights: &LossWeights,
    adv: AdvKind,
    tc: Option<&TcSample>,
    grl_lambda: f64,
) -> Result<Objective> {
    total_objective_in(Graph::new(), bundle, x_s, y_s, x_t, weights, adv, tc, grl_lambda)
}

/// [`total_objective`] recorded onto a caller-supplied (empty) graph.
#[allow(clippy::too_many_arguments)]
pub fn total_objective_in(
    mut g: Graph,
    bundle: &ModelBundle,
    x_s: &Tensor,
    y_s: &Tensor,
    x_t: &Tensor,
    weights: &LossWeights,
    adv: AdvKind,
    tc: Option<&TcSample>,
    grl_lambda: f64,
) -> Result<Objective> {
    if adv != AdvKind::None && adv != bundle.discriminator.kind() {
        return Err(Error::invalid(alloc::format!(
            "adversary {:?} requested but model has {:?}",
            adv,
            bundle.discriminator.kind()
        )));
    }
    if y_s.cols() != bundle.num_classes() || y_s.rows() != x_s.rows() {
        return Err(Error::ShapeMismatch {
            op: "total_objective labels",
            lhs: y_s.shape().to_vec(),
            rhs: alloc::vec![x_s.rows(), bundle.num_classes()],
        });
    }
    let b = bundle.bind(&mut g);
    let xs = g.leaf(x_s.clone());
    let ys = g.leaf(y_s.clone());
    let xt = g.leaf(x_t.clone());

    let fs = b.forward_h(&mut g, xs, false)?;
    let ce = cross_entropy(&mut g, fs.logits, ys)?;
    let mut total = ce;
    let mut bd = LossBreakdown { ce: g.value(ce).item(), ..LossBreakdown::default() };

    if adv != AdvKind::None {
        let ft = b.forward_h(&mut g, xt, false)?;
        let zs = g.grad_reversal(fs.z, grl_lambda)?;
        let zt = g.grad_reversal(ft.z, grl_lambda)?;
        let adv_node = match adv {
            AdvKind::Dann => dann_loss(&mut g, &b.discriminator, zs, zt)?,
            AdvKind::Cliv => cliv_loss(&mut g, &b.discriminator, zs, ys, zt, ft.probs)?,
            AdvKind::Cdan => cdan_loss(&mut g, &b.discriminator, zs, fs.probs, zt, ft.probs)?,
            AdvKind::None => unreachable!(),
        };
        bd.adv = g.value(adv_node).item();
        let w = g.scale(adv_node, weights.lambda_adv)?;
        total = g.add(total, w)?;
    }

    if let Some(sample) = tc {
        let target = b.pseudo_targets(&mut g, xt)?;
        let vat = vat_loss(&mut g, &b, xt, &sample.vat_r, target)?;
        let aug = aug_loss(&mut g, &b, &sample.x_aug, target)?;
        bd.vat = g.value(vat).item();
        bd.aug = g.value(aug).item();
        let tc_node = g.add(vat, aug)?;
        let w = g.scale(tc_node, weights.lambda_tc)?;
        total = g.add(total, w)?;
    }
    bd.tc = bd.vat + bd.aug;
    bd.total = g.value(total).item();
    if !bd.is_finite() {
        return Err(Error::NonFinite("total_objective"));
    }
    Ok(Objective { graph: g, bound: b, root: total, breakdown: bd })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn cross_entropy_examples() {
        let y = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(cross_entropy_probs(&y, &y).unwrap(), 0.0);
        let u = Tensor::matrix(1, 4, vec![0.25; 4]);
        let y4 = Tensor::matrix(1, 4, vec![0.0, 0.0, 1.0, 0.0]);
        assert!((cross_entropy_probs(&u, &y4).unwrap() - libm::log(4.0)).abs() < 1e-15);
        let p = Tensor::matrix(2, 2, vec![0.7, 0.3, 0.2, 0.8]);
        let expect = -(libm::log(0.7) + libm::log(0.8)) / 2.0;
        assert!((cross_entropy_probs(&p, &y).unwrap() - expect).abs() < 1e-15);
        let z = Tensor::matrix(1, 2, vec![0.0, 1.0]);
        let y1 = Tensor::matrix(1, 2, vec![1.0, 0.0]);
        assert!(cross_entropy_probs(&z, &y1).is_err());
    }

    #[test]
    fn fused_cross_entropy_matches_probability_form() {
        let logits = Tensor::matrix(2, 3, vec![0.2, -1.0, 2.0, 0.5, 0.5, -0.3]);
        let y = Tensor::matrix(2, 3, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let mut g = Graph::new();
        let l = g.leaf(logits.clone());
        let yi = g.leaf(y.clone());
        let ce = cross_entropy(&mut g, l, yi).unwrap();
        let p = g.softmax(l).unwrap();
        let direct = cross_entropy_probs(g.value(p), &y).unwrap();
        assert!((g.value(ce).item() - direct).abs() < 1e-14);
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { vat_iters: 0, ..LossWeights::default() }.validate().is_err());
        assert!(LossWeights { lambda_tc: -1.0, ..LossWeights::default() }.validate().is_err());
    }
}
