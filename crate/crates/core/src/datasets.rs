//! Synthetic domain-shift datasets.
//!
//! Every generator keeps the target labels, but only behind
//! [`DomainPair::target_labels`]; training code receives a [`TrainingView`],
//! which has no path to them.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::Modality;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataModality {
    Points { dim: usize },
    Image { size: usize },
}

impl DataModality {
    /// Matching augmentation modality, if the builtin registries cover it.
    pub fn augmentation(&self) -> Option<Modality> {
        match *self {
            DataModality::Points { dim: 2 } => Some(Modality::Points2d),
            DataModality::Points { .. } => None,
            DataModality::Image { .. } => Some(Modality::Image),
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, DataModality::Image { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            DataModality::Points { dim: 2 } => "points2d",
            DataModality::Points { .. } => "points",
            DataModality::Image { .. } => "image",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "amount", rename_all = "snake_case")]
pub enum GlyphShift {
    /// Adds a constant to every target pixel.
    BrightnessBias(f64),
    /// Adds `amount·(−1)^(row+col)` to every target pixel.
    AdditiveTexture(f64),
}

impl GlyphShift {
    pub fn from_name(kind: &str, amount: f64) -> Result<Self> {
        match kind {
            "brightness_bias" => Ok(GlyphShift::BrightnessBias(amount)),
            "additive_texture" => Ok(GlyphShift::AdditiveTexture(amount)),
            other => Err(Error::Unknown { kind: "shift kind", name: other.to_string() }),
        }
    }
}

/// Generator parameters; together with a seed they fully determine a
/// [`DomainPair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    TwoMoons {
        #[serde(default = "default_moons_n")]
        n_per_domain: usize,
        #[serde(default = "default_moons_noise")]
        noise: f64,
        #[serde(default = "default_moons_rotation")]
        rotation_deg: f64,
    },
    ShiftedBlobs {
        classes: usize,
        n_per_domain: usize,
        dim: usize,
        shift: Vec<f64>,
        #[serde(default = "default_blob_std")]
        blob_std: f64,
    },
    Glyphs {
        n_per_domain: usize,
        #[serde(default = "default_glyph_size")]
        size: usize,
        shift: GlyphShift,
    },
}

fn default_moons_n() -> usize {
    300
}
fn default_moons_noise() -> f64 {
    0.1
}
fn default_moons_rotation() -> f64 {
    45.0
}
fn default_blob_std() -> f64 {
    0.5
}
fn default_glyph_size() -> usize {
    16
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::TwoMoons { n_per_domain: 300, noise: 0.1, rotation_deg: 45.0 }
    }
}

impl DatasetSpec {
    pub fn generate(&self, seed: u64) -> Result<DomainPair> {
        match self {
            DatasetSpec::TwoMoons { n_per_domain, noise, rotation_deg } => {
                two_moons(*n_per_domain, *noise, *rotation_deg, seed)
            }
            DatasetSpec::ShiftedBlobs { classes, n_per_domain, dim, shift, blob_std } => {
                shifted_blobs_with_std(*classes, *n_per_domain, *dim, shift, *blob_std, seed)
            }
            DatasetSpec::Glyphs { n_per_domain, size, shift } => glyph_images(*n_per_domain, *size, *shift, seed),
        }
    }

    pub fn modality(&self) -> DataModality {
        match self {
            DatasetSpec::TwoMoons { .. } => DataModality::Points { dim: 2 },
            DatasetSpec::ShiftedBlobs { dim, .. } => DataModality::Points { dim: *dim },
            DatasetSpec::Glyphs { size, .. } => DataModality::Image { size: *size },
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            DatasetSpec::TwoMoons { .. } => 2,
            DatasetSpec::ShiftedBlobs { classes, .. } => *classes,
            DatasetSpec::Glyphs { .. } => GLYPH_CLASSES,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            DatasetSpec::TwoMoons { .. } => 2,
            DatasetSpec::ShiftedBlobs { dim, .. } => *dim,
            DatasetSpec::Glyphs { size, .. } => size * size,
        }
    }
}

/// Provenance of a generated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub spec: Option<DatasetSpec>,
    pub seed: u64,
}

/// Labeled source samples and unlabeled target samples. Target labels are
/// kept for evaluation only.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainPair {
    x_s: Tensor,
    y_s: Tensor,
    x_t: Tensor,
    y_t_eval: Tensor,
    modality: DataModality,
    meta: DatasetMeta,
}

/// What training code may see: source inputs and labels, target inputs.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub x_s: &'a Tensor,
    pub y_s: &'a Tensor,
    pub x_t: &'a Tensor,
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l] = 1.0;
    }
    Tensor::matrix(labels.len(), classes, data)
}

impl DomainPair {
    pub fn from_parts(
        x_s: Tensor,
        y_s: Tensor,
        x_t: Tensor,
        y_t_eval: Tensor,
        modality: DataModality,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if x_s.rows() != y_s.rows() || x_t.rows() != y_t_eval.rows() {
            return Err(Error::invalid("sample and label counts differ"));
        }
        if x_s.cols() != x_t.cols() || y_s.cols() != y_t_eval.cols() {
            return Err(Error::invalid("source and target widths differ"));
        }
        Ok(DomainPair { x_s, y_s, x_t, y_t_eval, modality, meta })
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView { x_s: &self.x_s, y_s: &self.y_s, x_t: &self.x_t }
    }

    pub fn x_s(&self) -> &Tensor {
        &self.x_s
    }
    pub fn y_s(&self) -> &Tensor {
        &self.y_s
    }
    pub fn x_t(&self) -> &Tensor {
        &self.x_t
    }

    /// Ground-truth target labels, for evaluation and diagnostics only.
    pub fn target_labels(&self) -> &Tensor {
        &self.y_t_eval
    }

    pub fn modality(&self) -> DataModality {
        self.modality
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn num_classes(&self) -> usize {
        self.y_s.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.x_s.cols()
    }

    /// Seeded split of each domain into `(train, eval)` with `frac` of the
    /// samples (rounded down, at least one) in train.
    pub fn split(&self, frac: f64, seed: u64) -> Result<(DomainPair, DomainPair)> {
        let mut rng = rng_from_seed(seed);
        let (s_tr, s_ev) = split_indices(self.x_s.rows(), frac, &mut rng)?;
        let (t_tr, t_ev) = split_indices(self.x_t.rows(), frac, &mut rng)?;
        let part = |s: &[usize], t: &[usize]| DomainPair {
            x_s: self.x_s.gather_rows(s),
            y_s: self.y_s.gather_rows(s),
            x_t: self.x_t.gather_rows(t),
            y_t_eval: self.y_t_eval.gather_rows(t),
            modality: self.modality,
            meta: self.meta.clone(),
        };
        Ok((part(&s_tr, &t_tr), part(&s_ev, &t_ev)))
    }
}

/// Shuffles `0..n` and cuts it at `⌊frac·n⌋` (clamped to `[1, n−1]`).
pub fn split_indices(n: usize, frac: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid("need at least two samples to split"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let cut = ((frac * n as f64) as usize).clamp(1, n - 1);
    let eval = idx.split_off(cut);
    Ok((idx, eval))
}

/// Centroid of the noiseless two-moons distribution.
pub const MOONS_CENTROID: [f64; 2] = [0.5, 0.25];

fn moons_draw(n: usize, noise: f64, rng: &mut Rng) -> (Vec<f64>, Vec<usize>) {
    let mut xs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let t = rng.random_range(0.0..PI);
        let (mut a, mut b) = if label == 0 {
            (libm::cos(t), libm::sin(t))
        } else {
            (1.0 - libm::cos(t), 0.5 - libm::sin(t))
        };
        let na: f64 = StandardNormal.sample(rng);
        let nb: f64 = StandardNormal.sample(rng);
        a += noise * na;
        b += noise * nb;
        xs.push(a);
        xs.push(b);
        labels.push(label);
    }
    (xs, labels)
}

/// Rotates 2d points by `deg` degrees about `center`.
pub fn rotate_points(points: &Tensor, center: [f64; 2], deg: f64) -> Tensor {
    let t = deg * PI / 180.0;
    let (s, c) = (libm::sin(t), libm::cos(t));
    let mut out = Vec::with_capacity(points.len());
    for r in 0..points.rows() {
        let p = points.row(r);
        let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
        out.push(center[0] + c * dx - s * dy);
        out.push(center[1] + s * dx + c * dy);
    }
    Tensor::matrix(points.rows(), 2, out)
}

/// Interleaved two moons. The target is an independent draw from the source
/// distribution rotated by `rotation_deg` about [`MOONS_CENTROID`].
pub fn two_moons(n_per_domain: usize, noise: f64, rotation_deg: f64, seed: u64) -> Result<DomainPair> {
    if n_per_domain < 2 {
        return Err(Error::invalid("two_moons needs n >= 2"));
    }
    if !(noise >= 0.0) {
        return Err(Error::invalid("two_moons noise must be >= 0"));
    }
    let mut rng = rng_from_seed(seed);
    let (xs, ls) = moons_draw(n_per_domain, noise, &mut rng);
    let (xt, lt) = moons_draw(n_per_domain, noise, &mut rng);
    let x_t = rotate_points(&Tensor::matrix(n_per_domain, 2, xt), MOONS_CENTROID, rotation_deg);
    Ok(DomainPair {
        x_s: Tensor::matrix(n_per_domain, 2, xs),
        y_s: one_hot(&ls, 2),
        x_t,
        y_t_eval: one_hot(&lt, 2),
        modality: DataModality::Points { dim: 2 },
        meta: DatasetMeta {
            spec: Some(DatasetSpec::TwoMoons { n_per_domain, noise, rotation_deg }),
            seed,
        },
    })
}

/// `C` isotropic Gaussian blobs (std 0.5) with centres drawn uniformly in
/// `[−3, 3]^d`; the target is the same mixture translated by `shift`.
pub fn shifted_blobs(classes: usize, n_per_domain: usize, dim: usize, shift: &[f64], seed: u64) -> Result<DomainPair> {
    shifted_blobs_with_std(classes, n_per_domain, dim, shift, default_blob_std(), seed)
}

pub fn shifted_blobs_with_std(
    classes: usize,
    n_per_domain: usize,
    dim: usize,
    shift: &[f64],
    blob_std: f64,
    seed: u64,
) -> Result<DomainPair> {
    if classes < 2 {
        return Err(Error::invalid("shifted_blobs needs C >= 2"));
    }
    if dim == 0 || n_per_domain == 0 {
        return Err(Error::invalid("shifted_blobs needs positive n and dim"));
    }
    if shift.len() != dim {
        return Err(Error::invalid("shift vector length must equal dim"));
    }
    let mut rng = rng_from_seed(seed);
    let centres: Vec<f64> = (0..classes * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    let draw = |offset: &[f64], rng: &mut Rng| {
        let mut xs = Vec::with_capacity(n_per_domain * dim);
        let mut ls = Vec::with_capacity(n_per_domain);
        for i in 0..n_per_domain {
            let c = i % classes;
            for j in 0..dim {
                let n: f64 = StandardNormal.sample(rng);
                xs.push(centres[c * dim + j] + blob_std * n + offset[j]);
            }
            ls.push(c);
        }
        (xs, ls)
    };
    let zero = vec![0.0; dim];
    let (xs, ls) = draw(&zero, &mut rng);
    let (xt, lt) = draw(shift, &mut rng);
    Ok(DomainPair {
        x_s: Tensor::matrix(n_per_domain, dim, xs),
        y_s: one_hot(&ls, classes),
        x_t: Tensor::matrix(n_per_domain, dim, xt),
        y_t_eval: one_hot(&lt, classes),
        modality: DataModality::Points { dim },
        meta: DatasetMeta {
            spec: Some(DatasetSpec::ShiftedBlobs {
                classes,
                n_per_domain,
                dim,
                shift: shift.to_vec(),
                blob_std,
            }),
            seed,
        },
    })
}

pub const GLYPH_CLASSES: usize = 4;
pub const GLYPH_NAMES: [&str; GLYPH_CLASSES] = ["bar", "cross", "square", "disc"];

const GLYPH_BACKGROUND: f64 = 0.1;
const GLYPH_FOREGROUND: f64 = 0.9;
const GLYPH_PIXEL_NOISE: f64 = 0.03;

/// Foreground mask of one glyph. `scale` sets the half-extent; the glyph is
/// centred at `(cr, cc)`.
pub fn glyph_mask(class: usize, size: usize, scale: isize, cr: isize, cc: isize) -> Vec<bool> {
    let mut m = vec![false; size * size];
    for r in 0..size as isize {
        for c in 0..size as isize {
            let (dr, dc) = (r - cr, c - cc);
            let on = match class {
                // thickness-2 horizontal bar, length 2s+1
                0 => (dr == 0 || dr == 1) && dc.abs() <= scale,
                // two crossing bars of thickness 2
                1 => ((dr == 0 || dr == 1) && dc.abs() <= scale) || ((dc == 0 || dc == 1) && dr.abs() <= scale),
                // filled square of side 2s−1
                2 => dr.abs() < scale && dc.abs() < scale,
                // disc of radius s+1
                _ => dr * dr + dc * dc <= (scale + 1) * (scale + 1),
            };
            if on {
                m[(r as usize) * size + c as usize] = true;
            }
        }
    }
    m
}

fn glyph_draw(n: usize, size: usize, rng: &mut Rng) -> (Vec<f64>, Vec<usize>) {
    let s_min = (size / 5).max(1) as isize;
    let s_max = ((size * 5) / 16).max(s_min as usize) as isize;
    let mut xs = Vec::with_capacity(n * size * size);
    let mut ls = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % GLYPH_CLASSES;
        let scale = rng.random_range(s_min as i64..=s_max as i64) as isize;
        let margin = scale + 1;
        let lo = margin;
        let hi = (size as isize - 1 - margin).max(lo);
        let cr = rng.random_range(lo as i64..=hi as i64) as isize;
        let cc = rng.random_range(lo as i64..=hi as i64) as isize;
        let mask = glyph_mask(class, size, scale, cr, cc);
        for on in mask {
            let base = if on { GLYPH_FOREGROUND } else { GLYPH_BACKGROUND };
            let n: f64 = StandardNormal.sample(rng);
            xs.push((base + GLYPH_PIXEL_NOISE * n).clamp(0.0, 1.0));
        }
        ls.push(class);
    }
    (xs, ls)
}

/// Procedural `size × size` glyph images of four classes (bar, cross,
/// square, disc) at random position and scale; pixels in `[0, 1]`. The
/// target domain applies `shift`.
pub fn glyph_images(n_per_domain: usize, size: usize, shift: GlyphShift, seed: u64) -> Result<DomainPair> {
    if size < 8 {
        return Err(Error::invalid("glyph size must be >= 8"));
    }
    if n_per_domain == 0 {
        return Err(Error::invalid("glyph_images needs n >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let (xs, ls) = glyph_draw(n_per_domain, size, &mut rng);
    let (mut xt, lt) = glyph_draw(n_per_domain, size, &mut rng);
    for (k, v) in xt.iter_mut().enumerate() {
        let p = k % (size * size);
        let (r, c) = (p / size, p % size);
        let delta = match shift {
            GlyphShift::BrightnessBias(b) => b,
            GlyphShift::AdditiveTexture(a) => {
                if (r + c) % 2 == 0 {
                    a
                } else {
                    -a
                }
            }
        };
        *v = (*v + delta).clamp(0.0, 1.0);
    }
    let d = size * size;
    Ok(DomainPair {
        x_s: Tensor::matrix(n_per_domain, d, xs),
        y_s: one_hot(&ls, GLYPH_CLASSES),
        x_t: Tensor::matrix(n_per_domain, d, xt),
        y_t_eval: one_hot(&lt, GLYPH_CLASSES),
        modality: DataModality::Image { size },
        meta: DatasetMeta { spec: Some(DatasetSpec::Glyphs { n_per_domain, size, shift }), seed },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons_shapes_and_balance() {
        let p = two_moons(300, 0.1, 45.0, 1).unwrap();
        assert_eq!(p.x_s().shape(), &[300, 2]);
        assert_eq!(p.y_s().shape(), &[300, 2]);
        let ones: f64 = p.y_s().data().iter().step_by(2).sum();
        assert_eq!(ones, 150.0);
        assert!(two_moons(1, 0.1, 0.0, 0).is_err());
        assert!(two_moons(4, -0.1, 0.0, 0).is_err());
    }

    #[test]
    fn blob_errors() {
        assert!(shifted_blobs(1, 10, 2, &[0.0, 0.0], 0).is_err());
        assert!(shifted_blobs(2, 10, 2, &[0.0], 0).is_err());
    }

    #[test]
    fn glyph_errors() {
        assert!(glyph_images(4, 7, GlyphShift::BrightnessBias(0.0), 0).is_err());
        assert!(GlyphShift::from_name("blur", 1.0).is_err());
    }

    #[test]
    fn split_sizes() {
        let p = two_moons(100, 0.1, 0.0, 3).unwrap();
        let (tr, ev) = p.split(0.8, 9).unwrap();
        assert_eq!(tr.x_s().rows(), 80);
        assert_eq!(ev.x_t().rows(), 20);
    }
}
