//! Metrics: sample diversity, oracle-based class and instance adherence,
//! held-out latent consistency, SSIM nearest-neighbour audit and a 2-D
//! projection of the latent space.
//!
//! Diversity is the mean absolute pixel difference between sample pairs
//! (`diversity_metric=pixel_l1` in every report).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::datagen::{self, oracle_classify, ClassLabel, Dataset};
use crate::error::{Error, IoContext, Result};
use crate::exec::{self, Strategy};
use crate::imaging::ImageTensor;
use crate::inference::{infer_instance, infer_sample, Translator};
use crate::models::LatentCode;

pub const DIVERSITY_METRIC: &str = "pixel_l1";
/// Pairs drawn per sample set.
pub const DIVERSITY_PAIRS: usize = 19;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// Dynamic range of [-1, 1] data.
pub const SSIM_RANGE: f64 = 2.0;

// ---------------------------------------------------------------------------
// diversity

/// FNV-1a over the pixel bit patterns.
pub fn image_hash(im: &ImageTensor) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in im.data() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// The sample pairs scored by [`diversity_score`], as indices into
/// `samples`. Pairs are chosen on the hash-sorted order with a seed derived
/// from the sorted hashes, so any permutation of the input selects the same
/// unordered image pairs.
pub fn diversity_pairs(samples: &[ImageTensor]) -> Result<Vec<(usize, usize)>> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "diversity needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    for s in &samples[1..] {
        samples[0].check_same_shape(s)?;
    }
    let mut keyed: Vec<(u64, usize)> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (image_hash(s), i))
        .collect();
    keyed.sort_by_key(|&(h, _)| h);
    let seed = keyed
        .iter()
        .fold(0x5eed_u64, |acc, &(h, _)| acc.rotate_left(7) ^ h);
    let n = samples.len();
    let mut all: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect();
    if all.len() > DIVERSITY_PAIRS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Partial Fisher-Yates: the first DIVERSITY_PAIRS entries are a uniform draw.
        for i in 0..DIVERSITY_PAIRS {
            let j = rng.random_range(i..all.len());
            all.swap(i, j);
        }
        all.truncate(DIVERSITY_PAIRS);
    }
    Ok(all
        .into_iter()
        .map(|(a, b)| (keyed[a].1, keyed[b].1))
        .collect())
}

/// Average mean-absolute pixel difference over the selected pairs.
pub fn diversity_score(samples: &[ImageTensor]) -> Result<f64> {
    let pairs = diversity_pairs(samples)?;
    let mut total = 0.0;
    for &(a, b) in &pairs {
        total += samples[a].mean_abs_diff(&samples[b])?;
    }
    Ok(total / pairs.len() as f64)
}

// ---------------------------------------------------------------------------
// SSIM

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" Gaussian filter of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let k = SSIM_WINDOW;
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, gv) in g.iter().enumerate() {
                acc += gv * plane[y * w + x + t];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, gv) in g.iter().enumerate() {
                acc += gv * rows[(y + t) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean local SSIM (11x11 Gaussian window, sigma 1.5, L = 2), averaged over
/// channels. Only windows fully inside the image are used.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let [c, h, w] = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM window {SSIM_WINDOW} larger than image {h}x{w}"
        )));
    }
    let c1 = (0.01 * SSIM_RANGE).powi(2);
    let c2 = (0.03 * SSIM_RANGE).powi(2);
    let g = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let pa: Vec<f64> = a.plane(ch).iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.plane(ch).iter().map(|&v| v as f64).collect();
        let sq =
            |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
        let mu_a = filter_valid(&pa, h, w, &g);
        let mu_b = filter_valid(&pb, h, w, &g);
        let e_aa = filter_valid(&sq(&pa, &pa), h, w, &g);
        let e_bb = filter_valid(&sq(&pb, &pb), h, w, &g);
        let e_ab = filter_valid(&sq(&pa, &pb), h, w, &g);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

// ---------------------------------------------------------------------------
// oracle-based adherence

fn require_procedural(data: &Dataset) -> Result<usize> {
    match (data.procedural, data.n_classes) {
        (true, Some(k)) => Ok(k),
        _ => Err(Error::UnsupportedMetric(
            "oracle metrics need a procedurally generated dataset".into(),
        )),
    }
}

/// A fraction together with the number of trials behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fraction {
    pub hits: usize,
    pub total: usize,
}

impl Fraction {
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

fn sub_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((a << 20) ^ b);
    rng.random()
}

/// Conditional samples whose oracle class equals the requested label, over
/// `poses` x every class x `n_per_pose`.
pub fn class_adherence_on<T: Translator + ?Sized>(
    model: &T,
    poses: &[ImageTensor],
    n_per_pose: usize,
    seed: u64,
    strategy: Strategy,
) -> Result<Fraction> {
    let k = model.n_classes();
    let hits = exec::try_map_indexed(strategy, poses.len() * k, |i| -> Result<usize> {
        let (p, class) = (i / k, i % k);
        let label = ClassLabel::new(class, k)?;
        let samples = infer_sample(
            model,
            &poses[p],
            &label,
            n_per_pose,
            sub_seed(seed, p as u64, class as u64),
        )?;
        let mut hits = 0;
        for s in &samples {
            if oracle_classify(s, k)?.class_id == class {
                hits += 1;
            }
        }
        Ok(hits)
    })?;
    Ok(Fraction {
        hits: hits.iter().sum(),
        total: poses.len() * k * n_per_pose,
    })
}

/// [`class_adherence_on`] over the dataset's poses (at most `max_poses`).
pub fn class_adherence<T: Translator + ?Sized>(
    model: &T,
    data: &Dataset,
    n_per_pose: usize,
    max_poses: usize,
    seed: u64,
) -> Result<Fraction> {
    require_procedural(data)?;
    let n = data.x.len().min(max_poses);
    class_adherence_on(model, &data.x[..n], n_per_pose, seed, Strategy::default())
}

/// Instance-controlled outputs whose oracle class equals the oracle class of
/// their reference. Pose `i` is paired with a seeded random reference.
pub fn instance_adherence<T: Translator + ?Sized>(
    model: &T,
    data: &Dataset,
    pairs: usize,
    seed: u64,
) -> Result<Fraction> {
    let k = require_procedural(data)?;
    if data.x.is_empty() || data.y.is_empty() {
        return Err(Error::invalid(
            "instance adherence needs images in both domains",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let refs: Vec<usize> = (0..pairs)
        .map(|_| rng.random_range(0..data.y.len()))
        .collect();
    let hits = exec::try_map_indexed(Strategy::default(), pairs, |i| -> Result<bool> {
        let pose = &data.x[i % data.x.len()];
        let reference = &data.y[refs[i]].image;
        let want = oracle_classify(reference, k)?.class_id;
        Ok(oracle_classify(&infer_instance(model, pose, reference)?, k)?.class_id == want)
    })?;
    Ok(Fraction {
        hits: hits.iter().filter(|&&h| h).count(),
        total: pairs,
    })
}

/// Mean L1 gap between a sampled code and its re-encoding `concat(z_s, mu)`
/// of the generated image, over `n` seeded (pose, code) draws.
pub fn latent_consistency_metric<T: Translator + ?Sized>(
    model: &T,
    poses: &[ImageTensor],
    n: usize,
    seed: u64,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("latent consistency needs n >= 1"));
    }
    if poses.is_empty() {
        return Err(Error::invalid("latent consistency needs at least one pose"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(usize, LatentCode)> = (0..n)
        .map(|_| {
            let p = rng.random_range(0..poses.len());
            let class = rng.random_range(0..model.n_classes());
            let mut z_s = vec![0.0; model.n_classes()];
            z_s[class] = 1.0;
            let z_u = (0..model.d_u())
                .map(|_| rng.sample::<f32, _>(StandardNormal))
                .collect();
            (p, LatentCode { z_s, z_u })
        })
        .collect();
    let gaps = exec::try_map_indexed(Strategy::default(), n, |i| -> Result<f64> {
        let (p, z) = &draws[i];
        let z_hat = model
            .encode(&model.generate(&poses[*p], z)?)?
            .mode()
            .concat();
        let z = z.concat();
        Ok(z.iter()
            .zip(&z_hat)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / z.len() as f64)
    })?;
    Ok(gaps.iter().sum::<f64>() / n as f64)
}

// ---------------------------------------------------------------------------
// nearest-neighbour audit

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMatch {
    pub generated: String,
    /// Best matches, highest SSIM first.
    pub neighbors: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnReport {
    pub matches: Vec<NeighborMatch>,
    pub max_ssim: f64,
}

impl NnReport {
    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "# max_ssim\t{:.6}\ngenerated\trank\ttraining\tssim\n",
            self.max_ssim
        );
        for m in &self.matches {
            for (r, (name, v)) in m.neighbors.iter().enumerate() {
                let _ = writeln!(s, "{}\t{}\t{}\t{:.6}", m.generated, r + 1, name, v);
            }
        }
        s
    }
}

/// The `k` most SSIM-similar training images for every generated image.
pub fn nearest_neighbors(
    generated: &[(String, ImageTensor)],
    training: &[(String, ImageTensor)],
    k: usize,
    strategy: Strategy,
) -> Result<NnReport> {
    if generated.is_empty() || training.is_empty() {
        return Err(Error::invalid(
            "nearest-neighbour audit needs images on both sides",
        ));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let matches = exec::try_map_indexed(strategy, generated.len(), |i| -> Result<NeighborMatch> {
        let (name, g) = &generated[i];
        let mut scored = training
            .iter()
            .map(|(t_name, t)| Ok((t_name.clone(), ssim(g, t)?)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(NeighborMatch {
            generated: name.clone(),
            neighbors: scored,
        })
    })?;
    let max_ssim = matches
        .iter()
        .map(|m| m.neighbors[0].1)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(NnReport { matches, max_ssim })
}

fn load_dir(dir: &Path) -> Result<Vec<(String, ImageTensor)>> {
    let files = datagen::list_pngs(dir)?;
    if files.is_empty() {
        return Err(Error::io(
            dir.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no PNG images"),
        ));
    }
    files
        .iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, ImageTensor::load_png(p)?))
        })
        .collect()
}

/// Generated images whose shape differs from the training images (such as a
/// contact sheet next to the samples) are skipped with a warning.
pub fn nearest_neighbor_audit(
    generated_dir: &Path,
    training_dir: &Path,
    k: usize,
    strategy: Strategy,
) -> Result<NnReport> {
    let training = load_dir(training_dir)?;
    let shape = training[0].1.shape();
    let (generated, skipped): (Vec<_>, Vec<_>) = load_dir(generated_dir)?
        .into_iter()
        .partition(|(_, im)| im.shape() == shape);
    for (name, im) in &skipped {
        log::warn!(
            "skipping {name}: shape {:?} differs from training {shape:?}",
            im.shape()
        );
    }
    if generated.is_empty() {
        return Err(Error::invalid(format!(
            "{}: no image matches the training shape {shape:?}",
            generated_dir.display()
        )));
    }
    nearest_neighbors(&generated, &training, k, strategy)
}

// ---------------------------------------------------------------------------
// latent projection

#[derive(Debug, Clone)]
pub struct Pca {
    pub points: Vec<[f64; 2]>,
    /// Sum of squared distances between the centred codes and their
    /// reconstruction from two components.
    pub residual: f64,
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
}

/// Project rows onto their two leading principal components.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Pca> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two rows"));
    }
    let d = rows[0].len();
    if d < 2 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid(
            "PCA rows must share a dimension of at least 2",
        ));
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let centred = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let comp =
        |k: usize| -> Vec<f64> { eig.eigenvectors.column(order[k]).iter().copied().collect() };
    let components = [comp(0), comp(1)];
    let mut points = Vec::with_capacity(n);
    let mut residual = 0.0;
    for i in 0..n {
        let row = centred.row(i);
        let p = [0, 1].map(|k| {
            row.iter()
                .zip(&components[k])
                .map(|(a, b)| a * b)
                .sum::<f64>()
        });
        for j in 0..d {
            let recon = p[0] * components[0][j] + p[1] * components[1][j];
            residual += (row[j] - recon).powi(2);
        }
        points.push(p);
    }
    Ok(Pca {
        points,
        residual,
        mean,
        components,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub class_id: Option<usize>,
    /// Mean intensity of the non-background pixels.
    pub color_proxy: f64,
}

fn color_proxy(im: &ImageTensor) -> f64 {
    let [c, h, w] = im.shape();
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..h * w {
        let vals: Vec<f32> = (0..c).map(|ch| im.plane(ch)[p]).collect();
        if vals.iter().any(|&v| v > -0.9) {
            sum += vals.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
            count += 1;
        }
    }
    if count == 0 {
        -1.0
    } else {
        sum / count as f64
    }
}

/// Deterministic codes `concat(z_s, mu)` of every Y image, projected by PCA.
pub fn project_latents<T: Translator + ?Sized>(
    model: &T,
    data: &Dataset,
) -> Result<Vec<ProjectedPoint>> {
    let codes =
        exec::try_map_indexed(Strategy::default(), data.y.len(), |i| -> Result<Vec<f64>> {
            Ok(model
                .encode(&data.y[i].image)?
                .mode()
                .concat()
                .iter()
                .map(|&v| v as f64)
                .collect())
        })?;
    let pca = pca_2d(&codes)?;
    Ok(pca
        .points
        .iter()
        .zip(&data.y)
        .map(|(p, s)| ProjectedPoint {
            x: p[0],
            y: p[1],
            class_id: s.label.as_ref().map(|l| l.class_id()),
            color_proxy: color_proxy(&s.image),
        })
        .collect())
}

pub fn write_projection(path: &Path, points: &[ProjectedPoint]) -> Result<()> {
    let mut s = String::from("x\ty\tclass_id\tcolor_proxy\n");
    for p in points {
        let class = p.class_id.map(|c| c as i64).unwrap_or(-1);
        let _ = writeln!(s, "{:.6}\t{:.6}\t{}\t{:.6}", p.x, p.y, class, p.color_proxy);
    }
    fs::write(path, s).with_path(path)
}

/// Best accuracy of a line separating class `positive` from the rest,
/// searched over 360 directions and every threshold.
pub fn linear_separability(points: &[[f64; 2]], labels: &[usize], positive: usize) -> Result<f64> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(Error::invalid(
            "points and labels must be equal, non-empty lists",
        ));
    }
    let n = points.len();
    let mut best = 0usize;
    for step in 0..360 {
        let a = (step as f64).to_radians() * 0.5;
        let (s, c) = a.sin_cos();
        let mut proj: Vec<(f64, bool)> = points
            .iter()
            .zip(labels)
            .map(|(p, &l)| (p[0] * c + p[1] * s, l == positive))
            .collect();
        proj.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Threshold before index t: left side predicted negative.
        let total_pos = proj.iter().filter(|p| p.1).count();
        let mut left_pos = 0;
        for t in 0..=n {
            let right_pos = total_pos - left_pos;
            let left_neg = t - left_pos;
            let correct = left_neg + right_pos;
            best = best.max(correct).max(n - correct);
            if t < n && proj[t].1 {
                left_pos += 1;
            }
        }
    }
    Ok(best as f64 / n as f64)
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub poses: usize,
    pub samples_per_pose: usize,
    pub class_samples_per_pose: usize,
    pub instance_pairs: usize,
    pub consistency_draws: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            poses: 10,
            samples_per_pose: 20,
            class_samples_per_pose: 5,
            instance_pairs: 200,
            consistency_draws: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub diversity: f64,
    pub diversity_sets: usize,
    pub class_adherence: Fraction,
    pub instance_adherence: Fraction,
    pub latent_consistency_mae: f64,
    pub latent_consistency_draws: usize,
    pub nn_max_ssim: f64,
    pub nn_generated: usize,
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let rows = [
            ("diversity_metric", DIVERSITY_METRIC.to_string()),
            ("diversity", format!("{:.6}", self.diversity)),
            ("diversity_sets", self.diversity_sets.to_string()),
            (
                "class_adherence",
                format!("{:.6}", self.class_adherence.value()),
            ),
            (
                "class_adherence_samples",
                self.class_adherence.total.to_string(),
            ),
            (
                "instance_adherence",
                format!("{:.6}", self.instance_adherence.value()),
            ),
            (
                "instance_adherence_pairs",
                self.instance_adherence.total.to_string(),
            ),
            (
                "latent_consistency_mae",
                format!("{:.6}", self.latent_consistency_mae),
            ),
            (
                "latent_consistency_draws",
                self.latent_consistency_draws.to_string(),
            ),
            ("nn_max_ssim", format!("{:.6}", self.nn_max_ssim)),
            ("nn_generated", self.nn_generated.to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).with_path(path)
    }
}

/// All metrics on a held-out procedural dataset. Sampled images are also
/// audited against the dataset's Y images for near-copies.
pub fn evaluate<T: Translator + ?Sized>(
    model: &T,
    data: &Dataset,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let k = require_procedural(data)?;
    let poses = &data.x[..data.x.len().min(opts.poses)];
    if poses.is_empty() {
        return Err(Error::invalid("evaluation needs at least one pose"));
    }
    let sets = exec::try_map_indexed(
        Strategy::default(),
        poses.len(),
        |i| -> Result<Vec<ImageTensor>> {
            let label = ClassLabel::new(i % k, k)?;
            infer_sample(
                model,
                &poses[i],
                &label,
                opts.samples_per_pose,
                sub_seed(opts.seed, i as u64, 0xd1),
            )
        },
    )?;
    let mut diversity = 0.0;
    for s in &sets {
        diversity += diversity_score(s)?;
    }
    diversity /= sets.len() as f64;

    let class = class_adherence_on(
        model,
        poses,
        opts.class_samples_per_pose,
        opts.seed,
        Strategy::default(),
    )?;
    let instance = instance_adherence(model, data, opts.instance_pairs, opts.seed)?;
    let lc = latent_consistency_metric(model, &data.x, opts.consistency_draws, opts.seed)?;

    let generated: Vec<(String, ImageTensor)> = sets
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            s.iter()
                .enumerate()
                .map(move |(j, im)| (format!("p{i}_s{j}"), im.clone()))
        })
        .collect();
    let training: Vec<(String, ImageTensor)> = data
        .y
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("y{i}"), s.image.clone()))
        .collect();
    let nn = nearest_neighbors(&generated, &training, 1, Strategy::default())?;
    Ok(EvalReport {
        diversity,
        diversity_sets: sets.len(),
        class_adherence: class,
        instance_adherence: instance,
        latent_consistency_mae: lc,
        latent_consistency_draws: opts.consistency_draws,
        nn_max_ssim: nn.max_ssim,
        nn_generated: generated.len(),
    })
}
