//! Training loop over paired source/target minibatches.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::augment::{MixSpec, Modality, OpRegistry, RegistryChoice};
use crate::datasets::{DatasetSpec, DomainPair, GlyphShift, TrainingView};
use crate::error::Error;
use crate::losses::{column_std, total_objective, LossBreakdown, LossWeights, TcContext, TcSample};
use crate::nn::{ema_update, Activation, AdvKind, Architecture, ModelBundle, SgdConfig, SgdState};
use crate::tensor::Tensor;
use crate::{rng_from_seed, Rng};

/// Adversarial term plus an optional target-consistency term, written
/// `source_only`, `dann`, `cdan`, `cliv`, each optionally suffixed `+tc`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Method {
    pub adversary: AdvKind,
    pub tc: bool,
}

impl Method {
    pub const SOURCE_ONLY: Method = Method { adversary: AdvKind::None, tc: false };
    pub const DANN: Method = Method { adversary: AdvKind::Dann, tc: false };
    pub const DANN_TC: Method = Method { adversary: AdvKind::Dann, tc: true };
    pub const CDAN: Method = Method { adversary: AdvKind::Cdan, tc: false };
    pub const CLIV: Method = Method { adversary: AdvKind::Cliv, tc: false };
    pub const CLIV_TC: Method = Method { adversary: AdvKind::Cliv, tc: true };
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = match self.adversary {
            AdvKind::None => "source_only",
            AdvKind::Dann => "dann",
            AdvKind::Cdan => "cdan",
            AdvKind::Cliv => "cliv",
        };
        if self.tc {
            write!(f, "{base}+tc")
        } else {
            f.write_str(base)
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        let (base, tc) = match s.strip_suffix("+tc") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let adversary = match base {
            "source_only" => AdvKind::None,
            "tc" if !tc => return Ok(Method { adversary: AdvKind::None, tc: true }),
            "dann" => AdvKind::Dann,
            "cdan" => AdvKind::Cdan,
            "cliv" => AdvKind::Cliv,
            other => return Err(Error::Unknown { kind: "method preset", name: other.to_string() }),
        };
        Ok(Method { adversary, tc })
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub model: u64,
    pub data: u64,
    pub augmentation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub disc_hidden: usize,
    pub activation: Activation,
    pub cliv_separate_heads: bool,
    pub cdan_max_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = Architecture::default();
        ModelConfig {
            hidden: a.hidden,
            feature_dim: a.feature_dim,
            disc_hidden: a.disc_hidden,
            activation: a.activation,
            cliv_separate_heads: a.cliv_separate_heads,
            cdan_max_dim: a.cdan_max_dim,
        }
    }
}

/// A complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    pub method: Method,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub augment: RegistryChoice,
    #[serde(default)]
    pub mix: MixSpec,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: SgdConfig,
    /// Mean-teacher EMA momentum.
    #[serde(default = "default_ema")]
    pub ema_beta: f64,
    /// Use an EMA teacher for consistency targets (else the detached student).
    #[serde(default = "default_true")]
    pub use_teacher: bool,
    pub seed: Seeds,
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    64
}
fn default_ema() -> f64 {
    0.998
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    /// Generic defaults on the 45° two-moons dataset.
    pub fn new(method: Method, seed: u64) -> Self {
        RunConfig {
            dataset: DatasetSpec::default(),
            method,
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            augment: RegistryChoice::default(),
            mix: MixSpec::default(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            optimizer: SgdConfig::default(),
            ema_beta: default_ema(),
            use_teacher: true,
            seed: Seeds { model: seed, data: seed, augmentation: seed },
            output_dir: None,
        }
    }

    /// Preset tuned for the 45° two-moons task. With 300 points per domain
    /// the run has few optimizer steps, so it uses smaller batches, a short
    /// teacher horizon and a VAT radius matched to the moon width.
    pub fn two_moons(method: Method, seed: u64) -> Self {
        let mut c = RunConfig::new(method, seed);
        c.batch_size = 8;
        c.ema_beta = 0.5;
        c.weights.vat_eps = 0.3;
        c
    }

    /// Preset for 16×16 glyph images with a brightness shift. The VAT radius
    /// is smaller than on points: larger radii collapse target predictions
    /// onto one class.
    pub fn glyphs(method: Method, seed: u64) -> Self {
        let mut c = RunConfig::new(method, seed);
        c.dataset = DatasetSpec::Glyphs { n_per_domain: 200, size: 16, shift: GlyphShift::BrightnessBias(0.2) };
        c.batch_size = 16;
        c.ema_beta = 0.5;
        c.weights.vat_eps = 0.1;
        c
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.dataset.input_dim(),
            hidden: self.model.hidden.clone(),
            feature_dim: self.model.feature_dim,
            num_classes: self.dataset.num_classes(),
            disc_hidden: self.model.disc_hidden,
            activation: self.model.activation,
            adversary: self.method.adversary,
            cliv_separate_heads: self.model.cliv_separate_heads,
            teacher: self.method.tc && self.use_teacher,
            cdan_max_dim: self.model.cdan_max_dim,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.weights.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if self.mix.k == 0 {
            return Err(Error::invalid("mix.k must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.ema_beta) {
            return Err(Error::invalid("ema_beta must lie in [0, 1]"));
        }
        let o = &self.optimizer;
        if !(o.base_lr > 0.0) || !(0.0..1.0).contains(&o.momentum) || o.alpha_lr < 0.0 || o.beta_lr < 0.0 {
            return Err(Error::invalid("invalid optimizer parameters"));
        }
        if self.method.tc {
            let data = self.dataset.modality();
            match (self.augment.modality, data.augmentation()) {
                (_, None) => {
                    return Err(Error::invalid(format!("no builtin augmentation registry for {} data", data.name())))
                }
                (Some(m), Some(d)) if m != d => {
                    return Err(Error::invalid(format!(
                        "augment.modality {} does not match {} data",
                        m.name(),
                        data.name()
                    )))
                }
                (_, d) => {
                    self.augment.build(d)?;
                }
            }
        }
        let arch = self.architecture();
        if arch.adversary == AdvKind::Cdan && arch.feature_dim * arch.num_classes > arch.cdan_max_dim {
            return Err(Error::invalid("cdan input width exceeds cdan_max_dim"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub source_acc: f64,
    pub target_acc: Option<f64>,
    pub lr: f64,
    pub grl_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(Error),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {breakdown:?}")]
    NonFinite { epoch: usize, batch: usize, breakdown: LossBreakdown },
    #[error("numerical failure at epoch {epoch}, batch {batch}: {source}")]
    Numeric { epoch: usize, batch: usize, source: Error },
}

/// Gradient-reversal strength ramp `2/(1 + e^{−10p}) − 1`.
pub fn grl_lambda(progress: f64) -> f64 {
    2.0 / (1.0 + libm::exp(-10.0 * progress)) - 1.0
}

/// Fraction of rows whose argmax matches the one-hot label's argmax (ties to
/// the lowest class index).
pub fn accuracy(probs: &Tensor, y: &Tensor) -> Result<f64, Error> {
    if probs.rows() != y.rows() || probs.cols() != y.cols() {
        return Err(Error::ShapeMismatch {
            op: "accuracy",
            lhs: probs.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let hits = probs
        .argmax_rows()
        .into_iter()
        .zip(y.argmax_rows())
        .filter(|(a, b)| a == b)
        .count();
    Ok(hits as f64 / probs.rows() as f64)
}

/// Classification accuracy of the student on `(x, y)`.
pub fn evaluate(bundle: &ModelBundle, x: &Tensor, y: &Tensor) -> Result<f64, Error> {
    if x.rows() == 0 || y.rows() == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    accuracy(&bundle.predict(x)?, y)
}

/// Target-domain evaluation handle. The labels are private: training code
/// can ask for an accuracy but never read them.
#[derive(Clone, Copy)]
pub struct TargetEval<'a> {
    x: &'a Tensor,
    y: &'a Tensor,
}

impl<'a> TargetEval<'a> {
    pub fn new(pair: &'a DomainPair) -> Self {
        TargetEval { x: pair.x_t(), y: pair.target_labels() }
    }

    pub fn accuracy(&self, bundle: &ModelBundle) -> Result<f64, Error> {
        evaluate(bundle, self.x, self.y)
    }
}

/// Cyclic index stream reshuffled whenever it is exhausted.
struct IndexStream {
    perm: Vec<usize>,
    pos: usize,
}

impl IndexStream {
    fn new(n: usize) -> Self {
        IndexStream { perm: (0..n).collect(), pos: n }
    }

    fn take(&mut self, k: usize, rng: &mut Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.perm.len() {
                self.perm.shuffle(rng);
                self.pos = 0;
            }
            let m = (k - out.len()).min(self.perm.len() - self.pos);
            out.extend_from_slice(&self.perm[self.pos..self.pos + m]);
            self.pos += m;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub bundle: ModelBundle,
    pub history: Vec<MetricsRecord>,
}

/// EMA momentum at optimizer step `step` (0-based): `min(β, 1 − 1/(step + 2))`,
/// so the teacher tracks the running mean of the student early on instead of
/// staying near its initialization.
pub fn ema_momentum(beta: f64, step: usize) -> f64 {
    beta.min(1.0 - 1.0 / (step as f64 + 2.0))
}

/// Trains a fresh model from `config` on the training view.
///
/// An epoch is one pass over the smaller domain in minibatches of
/// `batch_size` (the last may be short); the larger domain supplies
/// equally-sized batches from a cyclic reshuffled stream. `on_epoch` sees
/// every record as soon as it is produced.
pub fn train(
    config: &RunConfig,
    view: TrainingView<'_>,
    target_eval: Option<TargetEval<'_>>,
    mut on_epoch: impl FnMut(&MetricsRecord),
) -> Result<TrainOutput, TrainError> {
    config.validate().map_err(TrainError::Config)?;
    let arch = config.architecture();
    if view.x_s.cols() != arch.input_dim || view.y_s.cols() != arch.num_classes {
        return Err(TrainError::Config(Error::invalid("data shape does not match the configured dataset")));
    }
    let mut bundle = ModelBundle::new(&arch, config.seed.model).map_err(TrainError::Config)?;
    let mut sgd = SgdState::new(config.optimizer, &bundle.student_params());

    let registry = if config.method.tc {
        config.augment.build(config.dataset.modality().augmentation()).map_err(TrainError::Config)?
    } else {
        OpRegistry::identity(Modality::Points2d)
    };
    let input_scale = column_std(view.x_t);
    let tc_ctx = TcContext { registry: &registry, mix: &config.mix, input_scale: &input_scale };

    let mut data_rng = rng_from_seed(config.seed.data ^ 0x5EED_DA7A);
    let mut aug_rng = rng_from_seed(config.seed.augmentation);

    let (n_s, n_t) = (view.x_s.rows(), view.x_t.rows());
    let n_small = n_s.min(n_t);
    let steps_per_epoch = n_small.div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs) as f64;
    let mut src = IndexStream::new(n_s);
    let mut tgt = IndexStream::new(n_t);

    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut acc = LossBreakdown::default();
        let mut lr = sgd.lr_at(0.0);
        let mut grl = 0.0;
        let mut remaining = n_small;
        let mut batch = 0;
        while remaining > 0 {
            let b = remaining.min(config.batch_size);
            remaining -= b;
            let is = src.take(b, &mut data_rng);
            let it = tgt.take(b, &mut data_rng);
            let x_s = view.x_s.gather_rows(&is);
            let y_s = view.y_s.gather_rows(&is);
            let x_t = view.x_t.gather_rows(&it);

            let progress = step as f64 / total_steps;
            lr = sgd.lr_at(progress);
            grl = grl_lambda(progress);
            let numeric = |source| TrainError::Numeric { epoch, batch, source };

            let tc_sample = if config.method.tc {
                Some(TcSample::draw(&bundle, &x_t, &config.weights, &tc_ctx, &mut aug_rng).map_err(numeric)?)
            } else {
                None
            };
            let obj = match total_objective(
                &bundle,
                &x_s,
                &y_s,
                &x_t,
                &config.weights,
                config.method.adversary,
                tc_sample.as_ref(),
                grl,
            ) {
                Ok(o) => o,
                Err(Error::NonFinite(_)) => {
                    return Err(TrainError::NonFinite { epoch, batch, breakdown: LossBreakdown::default() })
                }
                Err(e) => return Err(numeric(e)),
            };
            if !obj.breakdown.is_finite() {
                return Err(TrainError::NonFinite { epoch, batch, breakdown: obj.breakdown });
            }
            let grads = obj.student_grads().map_err(numeric)?;
            sgd.step(&mut bundle.student_params_mut(), &grads, lr).map_err(numeric)?;
            if bundle.teacher.is_some() {
                ema_update(&mut bundle, ema_momentum(config.ema_beta, step)).map_err(numeric)?;
            }
            acc.accumulate(&obj.breakdown);
            batch += 1;
            step += 1;
        }
        let losses = acc.scaled(1.0 / batch as f64);
        let source_acc = evaluate(&bundle, view.x_s, view.y_s).map_err(|e| TrainError::Numeric {
            epoch,
            batch,
            source: e,
        })?;
        let target_acc = match &target_eval {
            Some(ev) => Some(ev.accuracy(&bundle).map_err(|e| TrainError::Numeric { epoch, batch, source: e })?),
            None => None,
        };
        let rec = MetricsRecord { epoch, losses, source_acc, target_acc, lr, grl_lambda: grl };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(TrainOutput { bundle, history })
}

/// Generates the configured dataset and trains on it, reporting target
/// accuracy from the held labels.
pub fn train_on_generated(config: &RunConfig) -> Result<(DomainPair, TrainOutput), TrainError> {
    let pair = config.dataset.generate(config.seed.data).map_err(TrainError::Config)?;
    let out = train(config, pair.training_view(), Some(TargetEval::new(&pair)), |_| {})?;
    Ok((pair, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_round_trip() {
        for s in ["source_only", "dann", "cdan", "cliv", "dann+tc", "cliv+tc", "source_only+tc"] {
            let m: Method = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert_eq!("tc".parse::<Method>().unwrap(), Method { adversary: AdvKind::None, tc: true });
        assert!("mmd".parse::<Method>().is_err());
    }

    #[test]
    fn grl_ramp() {
        assert_eq!(grl_lambda(0.0), 0.0);
        assert!((grl_lambda(1e3) - 1.0).abs() < 1e-15);
        let mut prev = -1.0;
        for i in 0..100 {
            let v = grl_lambda(i as f64 / 99.0);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn accuracy_ties_go_low() {
        let p = Tensor::matrix(2, 2, alloc::vec![0.5, 0.5, 0.2, 0.8]);
        let y = Tensor::matrix(2, 2, alloc::vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(accuracy(&p, &y).unwrap(), 1.0);
    }

    #[test]
    fn index_stream_cycles() {
        let mut rng = rng_from_seed(0);
        let mut s = IndexStream::new(5);
        let a = s.take(3, &mut rng);
        let b = s.take(3, &mut rng);
        assert_eq!(a.len(), 3);
        assert_eq!(b.len(), 3);
        let mut first: Vec<usize> = a.iter().chain(&b[..2]).copied().collect();
        first.sort();
        assert_eq!(first, alloc::vec![0, 1, 2, 3, 4]);
    }
}
