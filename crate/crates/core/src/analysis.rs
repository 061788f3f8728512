//! Diagnostics on frozen models: input sensitivity, trajectories through
//! anchor triples, probe-classifier discrepancy and adaptability estimates,
//! Fourier-basis robustness heatmaps and representation export.
//!
//! Every function borrows the model immutably.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::datasets::{one_hot, split_indices, DomainPair};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, ModelBundle, SgdConfig, SgdState};
use crate::tensor::Tensor;
use crate::trainer::accuracy;
use crate::{rng_from_seed, Rng};

const JACOBIAN_CHUNK: usize = 256;

/// Per-sample `C × d` Jacobians `∂ŷ_i/∂x_j` of the class probabilities,
/// computed with one backward pass per class.
pub fn jacobians(bundle: &ModelBundle, x: &Tensor) -> Result<Vec<Tensor>> {
    let (n, d) = x.dims2();
    let c = bundle.num_classes();
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(c * d); n];
    let mut start = 0;
    while start < n {
        let end = (start + JACOBIAN_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let mut g = Graph::new();
        let b = bundle.bind(&mut g);
        let xi = g.leaf(x.gather_rows(&idx));
        let f = b.forward_h(&mut g, xi, false)?;
        for class in 0..c {
            let col = g.slice(f.probs, class, class + 1)?;
            let root = g.sum(col)?;
            let gx = g.backward(root)?.wrt(xi);
            for (k, row) in out[start..end].iter_mut().enumerate() {
                row.extend_from_slice(gx.row(k));
            }
        }
        start = end;
    }
    Ok(out.into_iter().map(|v| Tensor::matrix(c, d, v)).collect())
}

pub fn jacobian_norms(bundle: &ModelBundle, x: &Tensor) -> Result<Vec<f64>> {
    Ok(jacobians(bundle, x)?
        .iter()
        .map(|j| libm::sqrt(j.data().iter().map(|v| v * v).sum::<f64>()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSensitivity {
    pub mean: f64,
    pub per_sample: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub source: DomainSensitivity,
    pub target: DomainSensitivity,
}

impl SensitivityReport {
    pub fn mean_jacobian_norm_source(&self) -> f64 {
        self.source.mean
    }
    pub fn mean_jacobian_norm_target(&self) -> f64 {
        self.target.mean
    }
}

/// Mean Frobenius norm of the input Jacobian over the rows of `x`.
pub fn mean_jacobian_norm(bundle: &ModelBundle, x: &Tensor) -> Result<DomainSensitivity> {
    if x.rows() == 0 {
        return Err(Error::Empty("jacobian input"));
    }
    let per_sample = jacobian_norms(bundle, x)?;
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok(DomainSensitivity { mean, per_sample })
}

pub fn sensitivity_report(bundle: &ModelBundle, pair: &DomainPair) -> Result<SensitivityReport> {
    Ok(SensitivityReport {
        source: mean_jacobian_norm(bundle, pair.x_s())?,
        target: mean_jacobian_norm(bundle, pair.x_t())?,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// The circle through three points, inside the plane they span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Orthonormal basis of the plane.
    pub e1: Vec<f64>,
    pub e2: Vec<f64>,
}

impl Circle {
    pub fn through(a: &[f64], b: &[f64], c: &[f64]) -> Result<Circle> {
        if a.len() != b.len() || a.len() != c.len() || a.is_empty() {
            return Err(Error::invalid("anchors must share a positive dimension"));
        }
        let u: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        let v: Vec<f64> = c.iter().zip(a).map(|(x, y)| x - y).collect();
        let (nu, nv) = (norm(&u), norm(&v));
        if nu == 0.0 || nv == 0.0 {
            return Err(Error::invalid("anchors must be distinct"));
        }
        let e1: Vec<f64> = u.iter().map(|x| x / nu).collect();
        let cx = dot(&v, &e1);
        let w: Vec<f64> = v.iter().zip(&e1).map(|(vi, ei)| vi - cx * ei).collect();
        let cy = norm(&w);
        if cy <= 1e-12 * nu.max(nv) {
            return Err(Error::invalid("anchors are collinear; no circle passes through them"));
        }
        let e2: Vec<f64> = w.iter().map(|x| x / cy).collect();
        let ox = nu / 2.0;
        let oy = (cx * cx + cy * cy - nu * cx) / (2.0 * cy);
        let center = a.iter().zip(&e1).zip(&e2).map(|((ai, p), q)| ai + ox * p + oy * q).collect();
        Ok(Circle { center, radius: libm::sqrt(ox * ox + oy * oy), e1, e2 })
    }

    pub fn point(&self, t: f64) -> Vec<f64> {
        let (ct, st) = (self.radius * libm::cos(t), self.radius * libm::sin(t));
        self.center.iter().zip(&self.e1).zip(&self.e2).map(|((c, p), q)| c + ct * p + st * q).collect()
    }

    /// Arc parameter in `[0, 2π)` of a point on (or projected onto) the circle.
    pub fn angle_of(&self, p: &[f64]) -> f64 {
        let d: Vec<f64> = p.iter().zip(&self.center).map(|(x, c)| x - c).collect();
        let t = libm::atan2(dot(&d, &self.e2), dot(&d, &self.e1));
        if t < 0.0 {
            t + 2.0 * PI
        } else {
            t
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCurve {
    /// Arc parameters `2πk/n`.
    pub grid: Vec<f64>,
    pub norms: Vec<f64>,
    pub anchor_indices: [usize; 3],
    pub anchor_angles: [f64; 3],
    pub circle: Circle,
}

impl TrajectoryCurve {
    pub fn mean_norm(&self) -> f64 {
        self.norms.iter().sum::<f64>() / self.norms.len() as f64
    }

    pub fn points(&self) -> Tensor {
        let d = self.circle.center.len();
        let data = self.grid.iter().flat_map(|&t| self.circle.point(t)).collect();
        Tensor::matrix(self.grid.len(), d, data)
    }
}

/// Jacobian norms along the circle through three anchors (rows of `anchors`),
/// sampled at `n_points` uniform arc parameters.
pub fn trajectory_sensitivity(
    bundle: &ModelBundle,
    anchors: &Tensor,
    anchor_indices: [usize; 3],
    n_points: usize,
) -> Result<TrajectoryCurve> {
    if anchors.rows() != 3 {
        return Err(Error::invalid("trajectory needs exactly three anchors"));
    }
    if n_points == 0 {
        return Err(Error::invalid("trajectory needs n_points >= 1"));
    }
    let circle = Circle::through(anchors.row(0), anchors.row(1), anchors.row(2))?;
    let grid: Vec<f64> = (0..n_points).map(|k| 2.0 * PI * k as f64 / n_points as f64).collect();
    let anchor_angles = [0, 1, 2].map(|i| circle.angle_of(anchors.row(i)));
    let mut curve = TrajectoryCurve { grid, norms: Vec::new(), anchor_indices, anchor_angles, circle };
    curve.norms = jacobian_norms(bundle, &curve.points())?;
    Ok(curve)
}

/// Picks three anchor indices, all of one class when `same_class`, otherwise
/// spanning as many classes as exist (at least two). Anchors come from the
/// correctly classified samples; if those cannot satisfy the request (an
/// undertrained model predicting one class), every sample is eligible by its
/// true label.
pub fn pick_anchors(
    bundle: &ModelBundle,
    x: &Tensor,
    y: &Tensor,
    same_class: bool,
    rng: &mut Rng,
) -> Result<[usize; 3]> {
    let pred = bundle.predict(x)?.argmax_rows();
    let truth = y.argmax_rows();
    let c = y.cols();
    let mut correct: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut all: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, (&p, &t)) in pred.iter().zip(&truth).enumerate() {
        all[t].push(i);
        if p == t {
            correct[t].push(i);
        }
    }
    let feasible = |pools: &[Vec<usize>]| {
        if same_class {
            pools.iter().any(|p| p.len() >= 3)
        } else {
            let nonempty = pools.iter().filter(|p| !p.is_empty()).count();
            let total: usize = pools.iter().map(Vec::len).sum();
            nonempty >= 2 && total >= 3
        }
    };
    let by_class = if feasible(&correct) {
        correct
    } else if feasible(&all) {
        all
    } else {
        return Err(Error::invalid(if same_class {
            "no class has three samples"
        } else {
            "need samples from two classes"
        }));
    };
    let pick = |pool: &[usize], k: usize, rng: &mut Rng| -> Vec<usize> {
        let mut v = pool.to_vec();
        v.partial_shuffle(rng, k).0.to_vec()
    };
    if same_class {
        let eligible: Vec<usize> = (0..c).filter(|&k| by_class[k].len() >= 3).collect();
        let &k = eligible.choose(rng).expect("checked feasible");
        let v = pick(&by_class[k], 3, rng);
        return Ok([v[0], v[1], v[2]]);
    }
    let mut classes: Vec<usize> = (0..c).filter(|&k| !by_class[k].is_empty()).collect();
    classes.shuffle(rng);
    let mut out = Vec::with_capacity(3);
    if classes.len() >= 3 {
        for &k in &classes[..3] {
            out.extend(pick(&by_class[k], 1, rng));
        }
    } else {
        // two classes: two anchors from one, one from the other
        let (a, b) = (classes[0], classes[1]);
        let (major, minor) = if by_class[a].len() >= 2 { (a, b) } else { (b, a) };
        out.extend(pick(&by_class[major], 2, rng));
        out.extend(pick(&by_class[minor], 1, rng));
    }
    Ok([out[0], out[1], out[2]])
}

/// Probe classifier settings for the discrepancy and adaptability estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub train_frac: f64,
    pub seed: u64,
    /// Fit the probe on per-dimension standardized features.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { hidden: 32, epochs: 200, batch_size: 64, lr: 0.05, momentum: 0.9, train_frac: 0.8, seed: 0, standardize: true }
    }
}

/// A trained probe with the feature standardization it was fitted under.
#[derive(Debug, Clone)]
pub struct Probe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    net: Mlp,
}

impl Probe {
    fn standardize(&self, z: &Tensor) -> Tensor {
        let (n, d) = z.dims2();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for (j, &v) in z.row(i).iter().enumerate() {
                data.push((v - self.mean[j]) / self.scale[j]);
            }
        }
        Tensor::matrix(n, d, data)
    }

    pub fn predict(&self, z: &Tensor) -> Result<Tensor> {
        self.net.predict(&self.standardize(z))
    }

    pub fn error(&self, z: &Tensor, y: &Tensor) -> Result<f64> {
        Ok(1.0 - accuracy(&self.predict(z)?, y)?)
    }
}

/// Trains a fresh `[k → hidden → C]` relu probe with cross-entropy.
pub fn train_probe(z: &Tensor, y: &Tensor, cfg: &ProbeConfig, seed: u64) -> Result<Probe> {
    let (n, d) = z.dims2();
    if n == 0 {
        return Err(Error::Empty("probe training set"));
    }
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for j in 0..d {
        mean[j] = (0..n).map(|i| z.at(i, j)).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| { let e = z.at(i, j) - mean[j]; e * e }).sum::<f64>() / n as f64;
        scale[j] = if var > 1e-24 { libm::sqrt(var) } else { 1.0 };
    }
    if !cfg.standardize {
        mean.iter_mut().for_each(|m| *m = 0.0);
        scale.iter_mut().for_each(|s| *s = 1.0);
    }
    let mut rng = rng_from_seed(seed);
    let net = Mlp::new(&[d, cfg.hidden, y.cols()], Activation::Relu, &mut rng)?;
    let mut probe = Probe { mean, scale, net };
    let zs = probe.standardize(z);
    let sgd_cfg = SgdConfig { base_lr: cfg.lr, momentum: cfg.momentum, alpha_lr: 0.0, beta_lr: 0.0 };
    let mut sgd = SgdState::new(sgd_cfg, &probe.net.params());
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut g = Graph::new();
            let b = probe.net.bind(&mut g);
            let xi = g.leaf(zs.gather_rows(chunk));
            let yi = g.leaf(y.gather_rows(chunk));
            let logits = b.forward(&mut g, xi)?;
            let loss = crate::losses::cross_entropy(&mut g, logits, yi)?;
            let grads = g.backward(loss)?;
            let gs: Vec<Tensor> = b.param_ids().iter().map(|&id| grads.wrt(id)).collect();
            sgd.step(&mut probe.net.params_mut(), &gs, cfg.lr)?;
        }
    }
    Ok(probe)
}

/// Proxy A-distance result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ADistance {
    pub d_a: f64,
    /// Balanced held-out error of the domain probe.
    pub error: f64,
    pub probe_seed: u64,
}

/// `2(1 − 2·min(ε, ½))`; a probe worse than chance counts as chance.
pub fn a_distance_from_error(error: f64) -> f64 {
    2.0 * (1.0 - 2.0 * error.min(0.5))
}

fn balanced_error(probe: &Probe, z_s: &Tensor, y_s: &Tensor, z_t: &Tensor, y_t: &Tensor) -> Result<f64> {
    Ok(0.5 * (probe.error(z_s, y_s)? + probe.error(z_t, y_t)?))
}

/// Proxy A-distance between two representation sets.
pub fn a_distance_features(z_s: &Tensor, z_t: &Tensor, cfg: &ProbeConfig) -> Result<ADistance> {
    if z_s.rows() < 2 || z_t.rows() < 2 {
        return Err(Error::Empty("a_distance needs at least two samples per domain"));
    }
    let mut rng = rng_from_seed(cfg.seed);
    let (s_tr, s_ev) = split_indices(z_s.rows(), cfg.train_frac, &mut rng)?;
    let (t_tr, t_ev) = split_indices(z_t.rows(), cfg.train_frac, &mut rng)?;
    let z_train = Tensor::vstack(&z_s.gather_rows(&s_tr), &z_t.gather_rows(&t_tr));
    let labels: Vec<usize> = core::iter::repeat_n(0, s_tr.len()).chain(core::iter::repeat_n(1, t_tr.len())).collect();
    let probe = train_probe(&z_train, &one_hot(&labels, 2), cfg, cfg.seed.wrapping_add(1))?;
    let error = balanced_error(
        &probe,
        &z_s.gather_rows(&s_ev),
        &one_hot(&vec![0; s_ev.len()], 2),
        &z_t.gather_rows(&t_ev),
        &one_hot(&vec![1; t_ev.len()], 2),
    )?;
    Ok(ADistance { d_a: a_distance_from_error(error), error, probe_seed: cfg.seed })
}

/// Proxy A-distance of `φ(x_s)` vs `φ(x_t)`.
pub fn a_distance(phi: &Mlp, x_s: &Tensor, x_t: &Tensor, cfg: &ProbeConfig) -> Result<ADistance> {
    a_distance_features(&phi.predict(x_s)?, &phi.predict(x_t)?, cfg)
}

/// Held-out errors of a probe trained on pooled labeled source and target
/// representations (the ideal joint hypothesis) and of one trained on target
/// alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointRisk {
    pub source_error: f64,
    pub target_error: f64,
    /// `ε_s + ε_t` of the joint probe.
    pub lambda: f64,
    pub probe_seed: u64,
}

struct LabeledSplit {
    s_train: (Tensor, Tensor),
    s_eval: (Tensor, Tensor),
    t_train: (Tensor, Tensor),
    t_eval: (Tensor, Tensor),
}

fn labeled_split(z_s: &Tensor, y_s: &Tensor, z_t: &Tensor, y_t: &Tensor, cfg: &ProbeConfig) -> Result<LabeledSplit> {
    let mut rng = rng_from_seed(cfg.seed);
    let (s_tr, s_ev) = split_indices(z_s.rows(), cfg.train_frac, &mut rng)?;
    let (t_tr, t_ev) = split_indices(z_t.rows(), cfg.train_frac, &mut rng)?;
    let take = |z: &Tensor, y: &Tensor, idx: &[usize]| (z.gather_rows(idx), y.gather_rows(idx));
    Ok(LabeledSplit {
        s_train: take(z_s, y_s, &s_tr),
        s_eval: take(z_s, y_s, &s_ev),
        t_train: take(z_t, y_t, &t_tr),
        t_eval: take(z_t, y_t, &t_ev),
    })
}

fn joint_probe(split: &LabeledSplit, cfg: &ProbeConfig) -> Result<Probe> {
    let z = Tensor::vstack(&split.s_train.0, &split.t_train.0);
    let y = Tensor::vstack(&split.s_train.1, &split.t_train.1);
    train_probe(&z, &y, cfg, cfg.seed.wrapping_add(1))
}

pub fn ideal_joint_risk_features(
    z_s: &Tensor,
    y_s: &Tensor,
    z_t: &Tensor,
    y_t: &Tensor,
    cfg: &ProbeConfig,
) -> Result<JointRisk> {
    let split = labeled_split(z_s, y_s, z_t, y_t, cfg)?;
    let probe = joint_probe(&split, cfg)?;
    let source_error = probe.error(&split.s_eval.0, &split.s_eval.1)?;
    let target_error = probe.error(&split.t_eval.0, &split.t_eval.1)?;
    Ok(JointRisk { source_error, target_error, lambda: source_error + target_error, probe_seed: cfg.seed })
}

/// Ideal-joint-hypothesis risk on frozen `φ`, using the evaluation labels.
pub fn ideal_joint_risk(phi: &Mlp, pair: &DomainPair, cfg: &ProbeConfig) -> Result<JointRisk> {
    ideal_joint_risk_features(&phi.predict(pair.x_s())?, pair.y_s(), &phi.predict(pair.x_t())?, pair.target_labels(), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonconservativeGap {
    /// `ε_t(g^λ) − ε_t(g_t)`, reported raw.
    pub gap: f64,
    pub joint_target_error: f64,
    pub target_only_error: f64,
}

pub fn nonconservative_gap_features(
    z_s: &Tensor,
    y_s: &Tensor,
    z_t: &Tensor,
    y_t: &Tensor,
    cfg: &ProbeConfig,
) -> Result<NonconservativeGap> {
    let split = labeled_split(z_s, y_s, z_t, y_t, cfg)?;
    let joint = joint_probe(&split, cfg)?;
    let target_only = train_probe(&split.t_train.0, &split.t_train.1, cfg, cfg.seed.wrapping_add(2))?;
    let joint_target_error = joint.error(&split.t_eval.0, &split.t_eval.1)?;
    let target_only_error = target_only.error(&split.t_eval.0, &split.t_eval.1)?;
    Ok(NonconservativeGap { gap: joint_target_error - target_only_error, joint_target_error, target_only_error })
}

/// Target error of the joint-optimal probe minus that of the target-optimal
/// probe, both on frozen `φ`.
pub fn nonconservative_gap(phi: &Mlp, pair: &DomainPair, cfg: &ProbeConfig) -> Result<NonconservativeGap> {
    nonconservative_gap_features(&phi.predict(pair.x_s())?, pair.y_s(), &phi.predict(pair.x_t())?, pair.target_labels(), cfg)
}

/// `(1 − after/before)^{−1}`; defined only when the target error improved.
pub fn rho_estimate(err_before: f64, err_after: f64) -> Result<f64> {
    if !(err_before > 0.0) {
        return Err(Error::invalid("rho needs a positive target error before adaptation"));
    }
    if err_after >= err_before {
        return Err(Error::invalid("no improvement; rho undefined on this side"));
    }
    Ok(1.0 / (1.0 - err_after / err_before))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptabilityReport {
    pub d_a: f64,
    pub lambda_estimate: f64,
    pub nonconservative_gap: f64,
    /// Present when a baseline target error was supplied and improved upon.
    pub rho: Option<f64>,
    pub probe_seed: u64,
}

/// A-distance, ideal joint risk, non-conservative gap and (optionally) ρ
/// against a baseline target error.
pub fn adaptability_report(
    bundle: &ModelBundle,
    pair: &DomainPair,
    cfg: &ProbeConfig,
    baseline_target_error: Option<f64>,
) -> Result<AdaptabilityReport> {
    let z_s = bundle.embed(pair.x_s())?;
    let z_t = bundle.embed(pair.x_t())?;
    let da = a_distance_features(&z_s, &z_t, cfg)?;
    let jr = ideal_joint_risk_features(&z_s, pair.y_s(), &z_t, pair.target_labels(), cfg)?;
    let gap = nonconservative_gap_features(&z_s, pair.y_s(), &z_t, pair.target_labels(), cfg)?;
    let rho = match baseline_target_error {
        Some(before) => {
            let after = 1.0 - accuracy(&bundle.predict(pair.x_t())?, pair.target_labels())?;
            rho_estimate(before, after).ok()
        }
        None => None,
    };
    Ok(AdaptabilityReport {
        d_a: da.d_a,
        lambda_estimate: jr.lambda,
        nonconservative_gap: gap.gap,
        rho,
        probe_seed: cfg.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

/// Error rates under single-frequency perturbations. Cell `(a, b)` holds
/// frequency `(a − H/2, b − W/2)`, so low frequencies sit at the centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierHeatmap {
    pub height: usize,
    pub width: usize,
    pub errors: Vec<f64>,
    pub perturbation_norm: f64,
}

impl FourierHeatmap {
    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.errors[a * self.width + b]
    }

    pub fn frequency(&self, a: usize, b: usize) -> (isize, isize) {
        (a as isize - (self.height / 2) as isize, b as isize - (self.width / 2) as isize)
    }

    fn radius(&self, a: usize, b: usize) -> f64 {
        let (u, v) = self.frequency(a, b);
        libm::sqrt((u * u + v * v) as f64)
    }

    /// Mean error over cells whose frequency radius exceeds the median radius.
    pub fn outer_half_mean(&self) -> f64 {
        let mut radii: Vec<f64> = (0..self.height)
            .flat_map(|a| (0..self.width).map(move |b| (a, b)))
            .map(|(a, b)| self.radius(a, b))
            .collect();
        radii.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let median = radii[radii.len() / 2];
        let mut sum = 0.0;
        let mut n = 0;
        for a in 0..self.height {
            for b in 0..self.width {
                if self.radius(a, b) > median {
                    sum += self.at(a, b);
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn mean(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }
}

/// Unit-L2 real basis image `cos θ + sin θ`, `θ = 2π(u·r/H + v·c/W)`.
pub fn fourier_basis(height: usize, width: usize, u: isize, v: isize) -> Vec<f64> {
    let mut img = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let t = 2.0 * PI * (u as f64 * r as f64 / height as f64 + v as f64 * c as f64 / width as f64);
            img.push(libm::cos(t) + libm::sin(t));
        }
    }
    let n = norm(&img);
    img.iter_mut().for_each(|p| *p /= n);
    img
}

/// Heatmap of error rates on `(x, y)` when every image receives one Fourier
/// basis image scaled to `perturbation_norm` with a random sign, clamped to
/// `[0, 1]`.
pub fn fourier_heatmap(
    bundle: &ModelBundle,
    x: &Tensor,
    y: &Tensor,
    size: usize,
    perturbation_norm: f64,
    seed: u64,
) -> Result<FourierHeatmap> {
    let (n, d) = x.dims2();
    if d != size * size {
        return Err(Error::invalid("image width does not match size²"));
    }
    if n == 0 {
        return Err(Error::Empty("fourier evaluation set"));
    }
    let mut rng = rng_from_seed(seed);
    let mut errors = Vec::with_capacity(size * size);
    for a in 0..size {
        for b in 0..size {
            let u = a as isize - (size / 2) as isize;
            let v = b as isize - (size / 2) as isize;
            let basis = fourier_basis(size, size, u, v);
            let mut data = Vec::with_capacity(n * d);
            for i in 0..n {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let k = sign * perturbation_norm;
                data.extend(x.row(i).iter().zip(&basis).map(|(p, e)| (p + k * e).clamp(0.0, 1.0)));
            }
            let xp = Tensor::matrix(n, d, data);
            errors.push(1.0 - accuracy(&bundle.predict(&xp)?, y)?);
        }
    }
    Ok(FourierHeatmap { height: size, width: size, errors, perturbation_norm })
}

/// Fourier sensitivity on one domain of an image pair.
pub fn fourier_sensitivity(
    bundle: &ModelBundle,
    pair: &DomainPair,
    domain: Domain,
    perturbation_norm: f64,
    seed: u64,
) -> Result<FourierHeatmap> {
    let size = match pair.modality() {
        crate::datasets::DataModality::Image { size } => size,
        other => {
            return Err(Error::invalid(alloc::format!("fourier analysis needs image data, got {}", other.name())))
        }
    };
    let (x, y) = match domain {
        Domain::Source => (pair.x_s(), pair.y_s()),
        Domain::Target => (pair.x_t(), pair.target_labels()),
    };
    fourier_heatmap(bundle, x, y, size, perturbation_norm, seed)
}

/// Representations of both domains with labels and domain flags
/// (0 = source, 1 = target), source rows first.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub z: Tensor,
    pub labels: Vec<usize>,
    pub domains: Vec<u8>,
}

pub fn embeddings(bundle: &ModelBundle, pair: &DomainPair) -> Result<Embeddings> {
    let z = Tensor::vstack(&bundle.embed(pair.x_s())?, &bundle.embed(pair.x_t())?);
    let mut labels = pair.y_s().argmax_rows();
    labels.extend(pair.target_labels().argmax_rows());
    let mut domains = vec![0u8; pair.x_s().rows()];
    domains.extend(core::iter::repeat_n(1u8, pair.x_t().rows()));
    Ok(Embeddings { z, labels, domains })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_examples() {
        assert_eq!(rho_estimate(0.4, 0.2).unwrap(), 2.0);
        assert!((rho_estimate(0.4, 0.36).unwrap() - 10.0).abs() < 1e-9);
        assert!((rho_estimate(0.4, 1e-12).unwrap() - 1.0).abs() < 1e-9);
        assert!(rho_estimate(0.4, 0.4).is_err());
        assert!(rho_estimate(0.0, 0.0).is_err());
    }

    #[test]
    fn a_distance_clamp() {
        assert_eq!(a_distance_from_error(0.7), 0.0);
        assert_eq!(a_distance_from_error(0.5), 0.0);
        assert_eq!(a_distance_from_error(0.0), 2.0);
    }

    #[test]
    fn equilateral_circumradius() {
        let a = 2.0;
        let h = a * libm::sqrt(3.0) / 2.0;
        let c = Circle::through(&[0.0, 0.0], &[a, 0.0], &[a / 2.0, h]).unwrap();
        assert!((c.radius - a / libm::sqrt(3.0)).abs() < 1e-12);
        for p in [[0.0, 0.0], [a, 0.0], [a / 2.0, h]] {
            let q = c.point(c.angle_of(&p));
            assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_anchors_rejected() {
        assert!(Circle::through(&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(Circle::through(&[0.0, 0.0], &[0.0, 0.0], &[2.0, 1.0]).is_err());
    }

    #[test]
    fn dc_basis_is_constant() {
        let b = fourier_basis(16, 16, 0, 0);
        assert!(b.iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-15));
        let hi = fourier_basis(16, 16, -8, -8);
        assert!((norm(&hi) - 1.0).abs() < 1e-12);
    }
}
