//! Generation from a trained checkpoint: instance control (style copied
//! from a reference image) and conditional sampling (class label plus a
//! random unsupervised code).

use std::path::Path;

use candle_core::{DType, Device};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::Checkpoint;
use crate::datagen::ClassLabel;
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::models::{EncoderOutput, LatentCode, Networks};

/// The two ways of choosing a style. Exactly one is ever populated.
#[derive(Debug, Clone, PartialEq)]
pub enum StyleSource {
    Reference(ImageTensor),
    Label(ClassLabel),
}

impl StyleSource {
    /// Build from optional inputs, rejecting both-or-neither.
    pub fn from_parts(reference: Option<ImageTensor>, label: Option<ClassLabel>) -> Result<Self> {
        match (reference, label) {
            (Some(r), None) => Ok(Self::Reference(r)),
            (None, Some(l)) => Ok(Self::Label(l)),
            (Some(_), Some(_)) => Err(Error::invalid(
                "a reference image and a class label are mutually exclusive",
            )),
            (None, None) => Err(Error::invalid(
                "either a reference image or a class label is required",
            )),
        }
    }
}

/// The operations the metrics need from a trained translator. Implemented by
/// [`Networks`]; tests substitute doubles.
pub trait Translator: Sync {
    fn n_classes(&self) -> usize;
    fn d_u(&self) -> usize;
    /// `G_Y(pose, z)`
    fn generate(&self, pose: &ImageTensor, z: &LatentCode) -> Result<ImageTensor>;
    /// `G_X(y)`
    fn extract_pose(&self, y: &ImageTensor) -> Result<ImageTensor>;
    /// `Q(y)`
    fn encode(&self, y: &ImageTensor) -> Result<EncoderOutput>;
}

impl Translator for Networks {
    fn n_classes(&self) -> usize {
        self.cfg.n_classes
    }

    fn d_u(&self) -> usize {
        self.cfg.d_u
    }

    fn generate(&self, pose: &ImageTensor, z: &LatentCode) -> Result<ImageTensor> {
        self.gy_forward(pose, z)
    }

    fn extract_pose(&self, y: &ImageTensor) -> Result<ImageTensor> {
        self.gx_forward(y)
    }

    fn encode(&self, y: &ImageTensor) -> Result<EncoderOutput> {
        self.q_encode(y)
    }
}

/// Load the networks of a checkpoint directory for inference.
pub fn load_model(dir: &Path) -> Result<Networks> {
    Checkpoint::read(dir)?.networks(DType::F32, &Device::Cpu)
}

/// `z = concat(z_s, mu)` from the reference, with no sampling noise.
pub fn instance_code<T: Translator + ?Sized>(
    model: &T,
    reference: &ImageTensor,
) -> Result<LatentCode> {
    Ok(model.encode(reference)?.mode())
}

pub fn infer_instance<T: Translator + ?Sized>(
    model: &T,
    pose: &ImageTensor,
    reference: &ImageTensor,
) -> Result<ImageTensor> {
    model.generate(pose, &instance_code(model, reference)?)
}

/// `n` codes with the exact one-hot `z_s` and `z_u` drawn from a unit normal.
pub fn sample_codes(
    label: &ClassLabel,
    d_u: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<LatentCode>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| LatentCode {
            z_s: label.one_hot().to_vec(),
            z_u: (0..d_u)
                .map(|_| rng.sample::<f32, _>(StandardNormal))
                .collect(),
        })
        .collect())
}

pub fn infer_sample<T: Translator + ?Sized>(
    model: &T,
    pose: &ImageTensor,
    label: &ClassLabel,
    n: usize,
    seed: u64,
) -> Result<Vec<ImageTensor>> {
    if label.n_classes() != model.n_classes() {
        return Err(Error::invalid(format!(
            "label has {} classes, model expects {}",
            label.n_classes(),
            model.n_classes()
        )));
    }
    sample_codes(label, model.d_u(), n, seed)?
        .iter()
        .map(|z| model.generate(pose, z))
        .collect()
}

/// Dispatch on a [`StyleSource`]; a reference yields one image.
pub fn infer<T: Translator + ?Sized>(
    model: &T,
    pose: &ImageTensor,
    style: &StyleSource,
    n: usize,
    seed: u64,
) -> Result<Vec<ImageTensor>> {
    match style {
        StyleSource::Reference(r) => Ok(vec![infer_instance(model, pose, r)?]),
        StyleSource::Label(l) => infer_sample(model, pose, l, n, seed),
    }
}
