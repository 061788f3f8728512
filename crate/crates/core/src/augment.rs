//! Dirichlet-weighted mixing of randomly sampled augmentation operations.
//!
//! For each sample, `K` branches are drawn from an [`OpRegistry`]; every branch
//! applies one operation (or, when composition is enabled and `K > 1`,
//! possibly a pair) at a uniformly drawn severity, and the branch outputs are
//! combined with coefficients drawn from `Dir(c, …, c)`.
//!
//! Sampling order per sample, which [`mix_augment`] guarantees:
//!
//! 1. the `K` mixing coefficients ([`sample_dirichlet`]);
//! 2. for each branch in order: op index (uniform), severity (uniform in the
//!    op's range), then, only if composition applies, a fair coin and, on
//!    heads, a second op index and severity;
//! 3. the branch ops are applied (first, then second), each consuming any
//!    internal randomness it needs, before the next branch is sampled.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Points2d,
    Image,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Points2d => "points2d",
            Modality::Image => "image",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "points2d" => Ok(Modality::Points2d),
            "image" => Ok(Modality::Image),
            other => Err(Error::Unknown { kind: "modality", name: other.to_string() }),
        }
    }
}

/// Operation formulas. Point ops act on `[x, y]`; image ops act on a square
/// row-major grayscale image and clamp their output to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Identity,
    /// `p + s·n`, `n ~ N(0, I)`.
    GaussianJitter,
    /// Rotation by `s` degrees about the origin.
    RotateAboutOrigin,
    /// `s·p`.
    UniformScale,
    /// `p + (s, u)`, `u` uniform in the op's severity range.
    Translate,
    /// `x + s`.
    Brightness,
    /// `m + (1 + s)(x − m)`, `m` the image mean.
    Contrast,
    /// `round(x·(L−1))/(L−1)`, `L = 2^⌊s⌋`.
    Posterize,
    /// `1 − x` where `x ≥ 1 − s`, else `x`.
    Solarize,
    /// `x + s·n` per pixel.
    GaussianNoise,
    /// Shift right by `round(s)` pixels, zero fill.
    TranslateX,
    /// Shift down by `round(s)` pixels, zero fill.
    TranslateY,
    /// Nearest-neighbour rotation by `s` degrees about the centre, zero fill.
    Rotate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugOp {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub kind: OpKind,
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn image_side(n: usize) -> Result<usize> {
    let s = libm::sqrt(n as f64) as usize;
    if s * s == n && s > 0 {
        Ok(s)
    } else {
        Err(Error::invalid(alloc::format!("image sample of length {n} is not square")))
    }
}

fn shift(x: &[f64], side: usize, dr: isize, dc: isize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..side as isize {
        for c in 0..side as isize {
            let (sr, sc) = (r - dr, c - dc);
            if (0..side as isize).contains(&sr) && (0..side as isize).contains(&sc) {
                out[(r as usize) * side + c as usize] = x[(sr as usize) * side + sc as usize];
            }
        }
    }
    out
}

impl AugOp {
    pub fn new(name: &str, lo: f64, hi: f64, kind: OpKind) -> Self {
        AugOp { name: name.to_string(), lo, hi, kind }
    }

    pub fn identity() -> Self {
        Self::new("identity", 0.0, 0.0, OpKind::Identity)
    }

    /// Applies the op to one flattened sample. Output length equals input
    /// length.
    pub fn apply(&self, x: &[f64], severity: f64, rng: &mut Rng) -> Result<Vec<f64>> {
        let s = severity;
        let point = |x: &[f64]| -> Result<()> {
            if x.len() == 2 {
                Ok(())
            } else {
                Err(Error::invalid(alloc::format!("{} expects a 2d point", self.name)))
            }
        };
        Ok(match self.kind {
            OpKind::Identity => x.to_vec(),
            OpKind::GaussianJitter => {
                point(x)?;
                x.iter()
                    .map(|&v| {
                        let n: f64 = rng.sample(StandardNormal);
                        v + s * n
                    })
                    .collect()
            }
            OpKind::RotateAboutOrigin => {
                point(x)?;
                let t = s * PI / 180.0;
                let (sn, cs) = (libm::sin(t), libm::cos(t));
                vec![cs * x[0] - sn * x[1], sn * x[0] + cs * x[1]]
            }
            OpKind::UniformScale => {
                point(x)?;
                vec![s * x[0], s * x[1]]
            }
            OpKind::Translate => {
                point(x)?;
                let dy = if self.hi > self.lo { rng.random_range(self.lo..self.hi) } else { self.lo };
                vec![x[0] + s, x[1] + dy]
            }
            OpKind::Brightness => x.iter().map(|&v| clamp01(v + s)).collect(),
            OpKind::Contrast => {
                let m = x.iter().sum::<f64>() / x.len() as f64;
                x.iter().map(|&v| clamp01(m + (1.0 + s) * (v - m))).collect()
            }
            OpKind::Posterize => {
                let bits = libm::floor(s).clamp(1.0, 16.0);
                let levels = libm::pow(2.0, bits) - 1.0;
                x.iter().map(|&v| clamp01(libm::round(v * levels) / levels)).collect()
            }
            OpKind::Solarize => {
                let t = 1.0 - s;
                x.iter().map(|&v| clamp01(if v >= t { 1.0 - v } else { v })).collect()
            }
            OpKind::GaussianNoise => x
                .iter()
                .map(|&v| {
                    let n: f64 = rng.sample(StandardNormal);
                    clamp01(v + s * n)
                })
                .collect(),
            OpKind::TranslateX => {
                let side = image_side(x.len())?;
                shift(x, side, 0, libm::round(s) as isize).into_iter().map(clamp01).collect()
            }
            OpKind::TranslateY => {
                let side = image_side(x.len())?;
                shift(x, side, libm::round(s) as isize, 0).into_iter().map(clamp01).collect()
            }
            OpKind::Rotate => {
                let side = image_side(x.len())?;
                let t = s * PI / 180.0;
                let (sn, cs) = (libm::sin(t), libm::cos(t));
                let c0 = (side as f64 - 1.0) / 2.0;
                let mut out = vec![0.0; x.len()];
                for r in 0..side {
                    for c in 0..side {
                        let (dy, dx) = (r as f64 - c0, c as f64 - c0);
                        // inverse map: source = R(−θ)·dest
                        let sx = cs * dx + sn * dy + c0;
                        let sy = -sn * dx + cs * dy + c0;
                        let (sr, sc) = (libm::round(sy), libm::round(sx));
                        if sr >= 0.0 && sc >= 0.0 && (sr as usize) < side && (sc as usize) < side {
                            out[r * side + c] = clamp01(x[sr as usize * side + sc as usize]);
                        }
                    }
                }
                out
            }
        })
    }

    fn sample_severity(&self, rng: &mut Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..self.hi)
        } else {
            self.lo
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpRegistry {
    pub modality: Modality,
    pub ops: Vec<AugOp>,
    /// Allow a branch to be a composition of two ops when `K > 1`.
    pub compose: bool,
}

impl OpRegistry {
    pub fn new(modality: Modality, ops: Vec<AugOp>, compose: bool) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::Empty("augmentation registry"));
        }
        Ok(OpRegistry { modality, ops, compose })
    }

    /// A registry whose only op is the identity.
    pub fn identity(modality: Modality) -> Self {
        OpRegistry { modality, ops: vec![AugOp::identity()], compose: false }
    }

    pub fn get(&self, name: &str) -> Option<&AugOp> {
        self.ops.iter().find(|o| o.name == name)
    }

    /// Keeps only the named ops, in the given order.
    pub fn restrict(&self, names: &[String]) -> Result<Self> {
        let ops = names
            .iter()
            .map(|n| {
                self.get(n)
                    .cloned()
                    .ok_or_else(|| Error::Unknown { kind: "augmentation op", name: n.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.modality, ops, self.compose)
    }
}

/// The builtin op set for a modality, with composition enabled.
pub fn builtin_registry(modality: Modality) -> OpRegistry {
    use OpKind::*;
    let ops = match modality {
        Modality::Points2d => vec![
            AugOp::new("gaussian_jitter", 0.01, 0.1, GaussianJitter),
            AugOp::new("rotate_about_origin", -15.0, 15.0, RotateAboutOrigin),
            AugOp::new("uniform_scale", 0.9, 1.1, UniformScale),
            AugOp::new("translate", -0.1, 0.1, Translate),
        ],
        Modality::Image => vec![
            AugOp::new("brightness", -0.3, 0.3, Brightness),
            AugOp::new("contrast", -0.5, 0.5, Contrast),
            AugOp::new("posterize", 2.0, 8.0, Posterize),
            AugOp::new("solarize", 0.0, 0.5, Solarize),
            AugOp::new("gaussian_noise", 0.0, 0.1, GaussianNoise),
            AugOp::new("translate_x", -3.0, 3.0, TranslateX),
            AugOp::new("translate_y", -3.0, 3.0, TranslateY),
            AugOp::new("rotate", -30.0, 30.0, Rotate),
        ],
    };
    OpRegistry { modality, ops, compose: true }
}

/// Serializable registry selection stored in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistryChoice {
    /// Registry family; `None` follows the dataset's modality.
    pub modality: Option<Modality>,
    pub compose: bool,
    /// Optional subset of builtin op names.
    pub ops: Option<Vec<String>>,
}

impl Default for RegistryChoice {
    fn default() -> Self {
        RegistryChoice { modality: None, compose: true, ops: None }
    }
}

impl RegistryChoice {
    /// Builds the registry, falling back to `data` when no modality is set.
    pub fn build(&self, data: Option<Modality>) -> Result<OpRegistry> {
        let modality = self
            .modality
            .or(data)
            .ok_or_else(|| Error::invalid("no augmentation registry for this data modality"))?;
        let mut reg = builtin_registry(modality);
        reg.compose = self.compose;
        match &self.ops {
            Some(names) => reg.restrict(names),
            None => Ok(reg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixSpec {
    /// Number of mixed branches.
    pub k: usize,
    /// Symmetric Dirichlet concentration.
    pub concentration: f64,
}

impl Default for MixSpec {
    fn default() -> Self {
        MixSpec { k: 4, concentration: 1.0 }
    }
}

/// Draws `K` convex coefficients from a symmetric Dirichlet with the given
/// concentration, via normalized Gamma draws.
pub fn sample_dirichlet(k: usize, concentration: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::invalid("dirichlet needs K >= 1"));
    }
    if k == 1 {
        return Ok(vec![1.0]);
    }
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|_| Error::invalid("dirichlet concentration must be positive"))?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 {
        // every draw underflowed; fall back to the simplex centre
        return Ok(vec![1.0 / k as f64; k]);
    }
    Ok(draws.into_iter().map(|d| d / total).collect())
}

/// One sampled branch: an op with its severity, optionally followed by a
/// second op.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub first: (usize, f64),
    pub second: Option<(usize, f64)>,
}

/// Samples a branch following the documented order.
pub fn sample_branch(registry: &OpRegistry, k: usize, rng: &mut Rng) -> Branch {
    let n = registry.ops.len();
    let draw = |rng: &mut Rng| {
        let i = rng.random_range(0..n);
        (i, registry.ops[i].sample_severity(rng))
    };
    let first = draw(rng);
    let second = if registry.compose && k > 1 && rng.random_bool(0.5) { Some(draw(rng)) } else { None };
    Branch { first, second }
}

pub fn apply_branch(registry: &OpRegistry, branch: &Branch, x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
    let (i, s) = branch.first;
    let out = registry.ops[i].apply(x, s, rng)?;
    match branch.second {
        Some((j, s2)) => registry.ops[j].apply(&out, s2, rng),
        None => Ok(out),
    }
}

/// Mixes `alphas.len()` freshly sampled branches of one sample with the given
/// coefficients.
pub fn mix_with_coefficients(
    x: &[f64],
    registry: &OpRegistry,
    alphas: &[f64],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let k = alphas.len();
    let mut mixed = vec![0.0; x.len()];
    for &a in alphas {
        let branch = sample_branch(registry, k, rng);
        let out = apply_branch(registry, &branch, x, rng)?;
        for (m, o) in mixed.iter_mut().zip(&out) {
            *m += a * o;
        }
    }
    Ok(mixed)
}

/// `x̃ = Σ αᵢ·oᵢ(x)`, row by row, for a `[B, d]` batch.
pub fn mix_augment(x: &Tensor, registry: &OpRegistry, spec: &MixSpec, rng: &mut Rng) -> Result<Tensor> {
    if registry.ops.is_empty() {
        return Err(Error::Empty("augmentation registry"));
    }
    if spec.k == 0 {
        return Err(Error::invalid("mix K must be >= 1"));
    }
    match registry.modality {
        Modality::Points2d if x.cols() != 2 => {
            return Err(Error::invalid("points2d registry needs 2-column data"));
        }
        Modality::Image => {
            image_side(x.cols())?;
        }
        _ => {}
    }
    let mut out = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        let alphas = sample_dirichlet(spec.k, spec.concentration, rng)?;
        out.extend(mix_with_coefficients(x.row(r), registry, &alphas, rng)?);
    }
    Tensor::new(x.shape(), out)
}
