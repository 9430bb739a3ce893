//! Procedural two-domain dataset: stick-figure pose sketches (domain X) and
//! class-labelled articulated figures wearing a class-specific garment
//! (domain Y), plus the geometric oracle classifier for the garment class.
//!
//! The figure is drawn in normalized coordinates with the body axis at
//! `x = 0.5`. Only the limbs articulate; the torso, head and every garment
//! template sit at fixed positions, so garment geometry is a function of the
//! class alone.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::exec::{self, Strategy};
use crate::imaging::ImageTensor;

pub const MIN_SIZE: usize = 16;
pub const MIN_CLASSES: usize = 2;
pub const MAX_CLASSES: usize = 8;
pub const CHANNELS: usize = 3;
pub const DEFAULT_ARTICULATION: f64 = 0.9;

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const DATASET_META_FILE: &str = "dataset_meta.tsv";

// Skeleton, in units of the image side.
const HEAD_Y: f64 = 0.16;
const HEAD_R: f64 = 0.075;
const NECK_Y: f64 = 0.26;
const HIP_Y: f64 = 0.58;
const UPPER_ARM: f64 = 0.17;
const FOREARM: f64 = 0.15;
const LEG: f64 = 0.33;
const LEG_REST: f64 = 0.22;
const TORSO_HALF_W: f64 = 0.07;
const LIMB_HALF_W: f64 = 0.045;

// Appearance shading.
const FILL_MIN: f64 = 0.4;
const GARMENT_SHADE: f64 = 0.4;
const TEXTURE_DEPTH: f64 = 0.15;
const TEXTURE_CYCLES: f64 = 3.0;

// Oracle thresholds, in [0, 1] luminance.
const FOREGROUND_LUM: f64 = 0.08;
const GARMENT_RATIO: f64 = 0.7;
const MIN_HEAD_LUM: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::X => "X",
            Domain::Y => "Y",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" | "x" => Ok(Domain::X),
            "Y" | "y" => Ok(Domain::Y),
            other => Err(Error::Format(format!("unknown domain `{other}`"))),
        }
    }
}

/// Joint order: left shoulder, left elbow, right shoulder, right elbow, left hip, right hip.
/// Angles are offsets from the rest pose (arms hanging along the body axis,
/// legs splayed symmetrically).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySceneSpec {
    pub joint_angles: [f64; 6],
    pub class_id: usize,
    pub fill_color: [f64; 3],
    pub texture_phase: f64,
}

impl ToySceneSpec {
    pub fn rest(class_id: usize) -> Self {
        Self {
            joint_angles: [0.0; 6],
            class_id,
            fill_color: [0.8, 0.6, 0.5],
            texture_phase: 0.0,
        }
    }

    pub fn validate(&self, n_classes: usize, articulation: f64) -> Result<()> {
        if self.class_id >= n_classes {
            return Err(Error::invalid(format!(
                "class_id {} out of range for {n_classes} classes",
                self.class_id
            )));
        }
        if let Some(a) = self.joint_angles.iter().find(|a| a.abs() > articulation) {
            return Err(Error::invalid(format!(
                "joint angle {a} outside articulation range ±{articulation}"
            )));
        }
        if self.fill_color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid("fill color outside [0, 1]"));
        }
        if !(0.0..std::f64::consts::TAU).contains(&self.texture_phase) {
            return Err(Error::invalid("texture phase outside [0, 2π)"));
        }
        Ok(())
    }

    /// Draw a random scene of the given class. Fill channels come from
    /// `[0.4, 1]` so the shaded garment always separates from the body.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, class_id: usize, articulation: f64) -> Self {
        let mut joint_angles = [0.0; 6];
        for a in &mut joint_angles {
            *a = rng.random_range(-articulation..=articulation);
        }
        let mut fill_color = [0.0; 3];
        for c in &mut fill_color {
            *c = rng.random_range(FILL_MIN..=1.0);
        }
        Self {
            joint_angles,
            class_id,
            fill_color,
            texture_phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }
}

/// One-hot class label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLabel {
    one_hot: Vec<f32>,
}

impl ClassLabel {
    pub fn new(class_id: usize, n_classes: usize) -> Result<Self> {
        if class_id >= n_classes {
            return Err(Error::invalid(format!(
                "class {class_id} out of range for {n_classes} classes"
            )));
        }
        let mut one_hot = vec![0.0; n_classes];
        one_hot[class_id] = 1.0;
        Ok(Self { one_hot })
    }

    pub fn from_one_hot(one_hot: Vec<f32>) -> Result<Self> {
        let ones = one_hot.iter().filter(|&&v| v == 1.0).count();
        let zeros = one_hot.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != one_hot.len() {
            return Err(Error::invalid("label is not a one-hot vector"));
        }
        Ok(Self { one_hot })
    }

    pub fn class_id(&self) -> usize {
        self.one_hot
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot invariant")
    }

    pub fn n_classes(&self) -> usize {
        self.one_hot.len()
    }

    pub fn one_hot(&self) -> &[f32] {
        &self.one_hot
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSample {
    pub image: ImageTensor,
    pub label: Option<ClassLabel>,
}

impl DomainSample {
    pub fn unlabeled(image: ImageTensor) -> Self {
        Self { image, label: None }
    }
}

// ---------------------------------------------------------------------------
// geometry

type Pt = (f64, f64);

struct Skeleton {
    /// Segments as (start, end), x relative to the body axis.
    limbs: Vec<(Pt, Pt)>,
}

fn direction(angle: f64) -> Pt {
    // Angle measured from straight down, positive towards +x.
    (angle.sin(), angle.cos())
}

fn skeleton(spec: &ToySceneSpec) -> Skeleton {
    let a = &spec.joint_angles;
    let shoulder = (0.0, NECK_Y);
    let hip = (0.0, HIP_Y);
    let mut limbs = vec![(shoulder, hip)];
    for (upper, lower) in [(a[0], a[1]), (a[2], a[3])] {
        let d1 = direction(upper);
        let elbow = (shoulder.0 + UPPER_ARM * d1.0, shoulder.1 + UPPER_ARM * d1.1);
        let d2 = direction(upper + lower);
        let hand = (elbow.0 + FOREARM * d2.0, elbow.1 + FOREARM * d2.1);
        limbs.push((shoulder, elbow));
        limbs.push((elbow, hand));
    }
    for (rest, off) in [(-LEG_REST, a[4]), (LEG_REST, a[5])] {
        let d = direction(rest + off);
        limbs.push((hip, (hip.0 + LEG * d.0, hip.1 + LEG * d.1)));
    }
    Skeleton { limbs }
}

fn segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

fn point_in_polygon(p: Pt, poly: &[Pt]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi.1 > p.1) != (pj.1 > p.1) {
            let x_cross = pj.0 + (p.1 - pj.1) * (pi.0 - pj.0) / (pi.1 - pj.1);
            if p.0 < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Pixel centre in normalized coordinates, x relative to the body axis.
/// `size - x - 1` maps exactly to the negated offset, which keeps renders
/// bitwise mirror-symmetric.
#[inline]
fn pixel_center(x: usize, y: usize, size: usize) -> Pt {
    let s = size as f64;
    ((2.0 * x as f64 + 1.0 - s) / (2.0 * s), (y as f64 + 0.5) / s)
}

/// Garment polygon for a class, x relative to the body axis.
pub fn garment_polygon(class_id: usize) -> Vec<Pt> {
    fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<Pt> {
        vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    }
    match class_id % MAX_CLASSES {
        // skirt
        0 => vec![(-0.06, 0.52), (0.06, 0.52), (0.16, 0.78), (-0.16, 0.78)],
        // torso panel
        1 => rect(-0.11, 0.11, 0.27, 0.51),
        // full-length dress
        2 => rect(-0.10, 0.10, 0.28, 0.80),
        // narrow stripe
        3 => rect(-0.04, 0.04, 0.26, 0.86),
        // crop top
        4 => rect(-0.14, 0.14, 0.27, 0.38),
        // shorts
        5 => rect(-0.10, 0.10, 0.52, 0.66),
        // apron
        6 => vec![(-0.16, 0.40), (0.16, 0.40), (0.0, 0.62)],
        // sash
        _ => rect(-0.20, 0.20, 0.40, 0.48),
    }
}

/// Rasterized garment template for a class at a given size.
pub fn template_mask(class_id: usize, size: usize) -> Vec<bool> {
    let poly = garment_polygon(class_id);
    let mut mask = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            mask[y * size + x] = point_in_polygon(pixel_center(x, y, size), &poly);
        }
    }
    mask
}

fn check_size(size: usize) -> Result<()> {
    if size < MIN_SIZE {
        return Err(Error::invalid(format!(
            "image size {size} below minimum {MIN_SIZE}"
        )));
    }
    Ok(())
}

/// Stick figure: limb and torso strokes plus a head outline, +1 on -1,
/// replicated over the three channels.
pub fn render_pose_sketch(spec: &ToySceneSpec, size: usize) -> Result<ImageTensor> {
    check_size(size)?;
    let sk = skeleton(spec);
    let half_w = (0.75 / 32.0_f64).max(0.6 / size as f64);
    let head = (0.0, HEAD_Y);
    let mut img = ImageTensor::filled([CHANNELS, size, size], -1.0);
    for y in 0..size {
        for x in 0..size {
            let p = pixel_center(x, y, size);
            let on_limb = sk
                .limbs
                .iter()
                .any(|&(a, b)| segment_distance(p, a, b) <= half_w);
            let r = ((p.0 - head.0).powi(2) + (p.1 - head.1).powi(2)).sqrt();
            let on_head = (r - HEAD_R).abs() <= half_w;
            if on_limb || on_head {
                for c in 0..CHANNELS {
                    img.set(c, y, x, 1.0);
                }
            }
        }
    }
    Ok(img)
}

/// Filled figure in `fill_color` with the class garment overlaid in a
/// darker, sinusoidally textured shade of the same color.
pub fn render_appearance(spec: &ToySceneSpec, size: usize) -> Result<ImageTensor> {
    check_size(size)?;
    let sk = skeleton(spec);
    let garment = garment_polygon(spec.class_id);
    let head = (0.0, HEAD_Y);
    let mut img = ImageTensor::filled([CHANNELS, size, size], -1.0);
    for y in 0..size {
        for x in 0..size {
            let p = pixel_center(x, y, size);
            let rgb = if point_in_polygon(p, &garment) {
                let tex = 1.0
                    + TEXTURE_DEPTH
                        * (std::f64::consts::TAU * TEXTURE_CYCLES * p.1 + spec.texture_phase).sin();
                Some(spec.fill_color.map(|c| c * GARMENT_SHADE * tex))
            } else {
                let in_torso = p.0.abs() <= TORSO_HALF_W && (NECK_Y..=HIP_Y).contains(&p.1);
                let in_head = ((p.0 - head.0).powi(2) + (p.1 - head.1).powi(2)).sqrt() <= HEAD_R;
                let on_limb = sk
                    .limbs
                    .iter()
                    .any(|&(a, b)| segment_distance(p, a, b) <= LIMB_HALF_W);
                (in_torso || in_head || on_limb).then_some(spec.fill_color)
            };
            if let Some(rgb) = rgb {
                for (c, v) in rgb.iter().enumerate() {
                    img.set(c, y, x, (2.0 * v - 1.0) as f32);
                }
            }
        }
    }
    Ok(img)
}

// ---------------------------------------------------------------------------
// oracle

#[derive(Debug, Clone, PartialEq)]
pub struct OracleVerdict {
    pub class_id: usize,
    pub confidence: f64,
    pub scores: Vec<f64>,
}

/// Garment class by template overlap. The body color is read off the head,
/// which no garment covers; garment pixels are foreground pixels clearly
/// darker than it. Each class scores the intersection-over-union of that
/// garment mask with its template, restricted to the union of the candidate
/// templates. Confidence is the best score.
pub fn oracle_classify(image: &ImageTensor, n_classes: usize) -> Result<OracleVerdict> {
    let [c, h, w] = image.shape();
    if h != w || h < MIN_SIZE || c != CHANNELS {
        return Err(Error::invalid(format!(
            "oracle expects [3, S, S], got {:?}",
            image.shape()
        )));
    }
    if !(1..=MAX_CLASSES).contains(&n_classes) {
        return Err(Error::invalid(format!(
            "n_classes {n_classes} outside [1, {MAX_CLASSES}]"
        )));
    }
    let size = h;
    let lum = |x: usize, y: usize| -> f64 {
        (0..CHANNELS)
            .map(|k| (image.get(k, y, x) as f64 + 1.0) / 2.0)
            .sum::<f64>()
            / CHANNELS as f64
    };

    let (mut head_sum, mut head_n) = (0.0, 0usize);
    for y in 0..size {
        for x in 0..size {
            let p = pixel_center(x, y, size);
            if (p.0.powi(2) + (p.1 - HEAD_Y).powi(2)).sqrt() <= 0.6 * HEAD_R {
                head_sum += lum(x, y);
                head_n += 1;
            }
        }
    }
    let head_lum = if head_n > 0 {
        head_sum / head_n as f64
    } else {
        0.0
    };
    if head_lum < MIN_HEAD_LUM {
        return Ok(OracleVerdict {
            class_id: 0,
            confidence: 0.0,
            scores: vec![0.0; n_classes],
        });
    }

    let templates: Vec<Vec<bool>> = (0..n_classes).map(|k| template_mask(k, size)).collect();
    let mut inter = vec![0usize; n_classes];
    let mut union = vec![0usize; n_classes];
    for i in 0..size * size {
        if !templates.iter().any(|t| t[i]) {
            continue;
        }
        let l = lum(i % size, i / size);
        let garment = l >= FOREGROUND_LUM && l < GARMENT_RATIO * head_lum;
        for k in 0..n_classes {
            let t = templates[k][i];
            inter[k] += (garment && t) as usize;
            union[k] += (garment || t) as usize;
        }
    }
    let scores: Vec<f64> = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| if u == 0 { 0.0 } else { i as f64 / u as f64 })
        .collect();
    let (class_id, confidence) =
        scores
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::MIN),
                |best, (k, s)| if s > best.1 { (k, s) } else { best },
            );
    Ok(OracleVerdict {
        class_id,
        confidence,
        scores,
    })
}

// ---------------------------------------------------------------------------
// dataset generation and manifests

#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub n_x: usize,
    pub n_y: usize,
    pub n_classes: usize,
    pub size: usize,
    pub seed: u64,
    pub articulation: f64,
}

impl DatasetOptions {
    pub fn validate(&self) -> Result<()> {
        if self.n_x == 0 || self.n_y == 0 {
            return Err(Error::invalid("dataset counts must be at least 1"));
        }
        if !(MIN_CLASSES..=MAX_CLASSES).contains(&self.n_classes) {
            return Err(Error::invalid(format!(
                "n_classes {} outside [{MIN_CLASSES}, {MAX_CLASSES}]",
                self.n_classes
            )));
        }
        check_size(self.size)
    }
}

/// Independent RNG stream per scene index. X scenes use indices `0..n_x`,
/// Y scenes `n_x..n_x + n_y`, so no scene is shared between domains.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub filename: String,
    pub domain: Domain,
    pub class_id: Option<usize>,
    pub hidden: HiddenSpec,
}

/// Generation-time scene description, kept for evaluation only. Training
/// code goes through [`Dataset`], which never exposes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenSpec {
    pub scene_index: u64,
    pub spec: ToySceneSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub n_classes: usize,
    pub size: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut out = String::from("filename\tdomain\tclass_id\thidden_spec_json\n");
        for e in &self.entries {
            let json =
                serde_json::to_string(&e.hidden).map_err(|e| Error::Format(e.to_string()))?;
            let class = e.class_id.map(|c| c as i64).unwrap_or(-1);
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.filename,
                e.domain.as_str(),
                class,
                json
            ));
        }
        fs::write(&path, out).with_path(&path)?;
        let meta = dir.join(DATASET_META_FILE);
        let text = format!(
            "n_classes\t{}\nsize\t{}\nseed\t{}\n",
            self.n_classes, self.size, self.seed
        );
        fs::write(&meta, text).with_path(&meta)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta = read_key_values(&dir.join(DATASET_META_FILE))?;
        let get = |k: &str| -> Result<u64> {
            meta.iter()
                .find(|(key, _)| key == k)
                .ok_or_else(|| Error::Format(format!("{DATASET_META_FILE}: missing `{k}`")))?
                .1
                .parse()
                .map_err(|_| Error::Format(format!("{DATASET_META_FILE}: bad `{k}`")))
        };
        let (n_classes, size, seed) = (
            get("n_classes")? as usize,
            get("size")? as usize,
            get("seed")?,
        );
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).with_path(&path)?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.splitn(4, '\t').collect();
            if cols.len() != 4 {
                return Err(Error::Format(format!(
                    "{}:{}: expected 4 columns",
                    path.display(),
                    lineno + 1
                )));
            }
            let class: i64 = cols[2].parse().map_err(|_| {
                Error::Format(format!("{}:{}: bad class id", path.display(), lineno + 1))
            })?;
            let hidden: HiddenSpec =
                serde_json::from_str(cols[3]).map_err(|e| Error::Format(e.to_string()))?;
            entries.push(ManifestEntry {
                filename: cols[0].to_string(),
                domain: cols[1].parse()?,
                class_id: (class >= 0).then_some(class as usize),
                hidden,
            });
        }
        Ok(Self {
            n_classes,
            size,
            seed,
            entries,
        })
    }

    pub fn domain(&self, domain: Domain) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.domain == domain)
    }
}

fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).with_path(path)?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

/// Draw all scenes for a dataset without rendering them.
pub fn sample_scenes(opts: &DatasetOptions) -> (Vec<HiddenSpec>, Vec<HiddenSpec>) {
    let draw = |index: u64, class_id: usize| {
        let mut rng = scene_rng(opts.seed, index);
        HiddenSpec {
            scene_index: index,
            spec: ToySceneSpec::sample(&mut rng, class_id, opts.articulation),
        }
    };
    let xs = (0..opts.n_x as u64)
        .map(|i| {
            // X carries no label; its class field only seeds the (unused) garment.
            draw(i, 0)
        })
        .collect();
    let ys = (0..opts.n_y)
        .map(|i| draw((opts.n_x + i) as u64, i % opts.n_classes))
        .collect();
    (xs, ys)
}

/// Render and write a dataset: `x/*.png`, `y/*.png`, `manifest.tsv`, `dataset_meta.tsv`.
pub fn generate_dataset(
    opts: &DatasetOptions,
    out_dir: &Path,
    strategy: Strategy,
) -> Result<Manifest> {
    opts.validate()?;
    for sub in ["x", "y"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).with_path(&d)?;
    }
    let (xs, ys) = sample_scenes(opts);
    let mut jobs: Vec<(ManifestEntry, bool)> = Vec::with_capacity(xs.len() + ys.len());
    for (i, h) in xs.into_iter().enumerate() {
        jobs.push((
            ManifestEntry {
                filename: format!("x/x_{i:06}.png"),
                domain: Domain::X,
                class_id: None,
                hidden: h,
            },
            false,
        ));
    }
    for (i, h) in ys.into_iter().enumerate() {
        let class = h.spec.class_id;
        jobs.push((
            ManifestEntry {
                filename: format!("y/y_{i:06}.png"),
                domain: Domain::Y,
                class_id: Some(class),
                hidden: h,
            },
            true,
        ));
    }
    exec::try_map_indexed(strategy, jobs.len(), |i| -> Result<()> {
        let (entry, appearance) = &jobs[i];
        let img = if *appearance {
            render_appearance(&entry.hidden.spec, opts.size)?
        } else {
            render_pose_sketch(&entry.hidden.spec, opts.size)?
        };
        img.save_png(&out_dir.join(&entry.filename))
    })?;
    let manifest = Manifest {
        n_classes: opts.n_classes,
        size: opts.size,
        seed: opts.seed,
        entries: jobs.into_iter().map(|(e, _)| e).collect(),
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// training-side loader

/// Images and labels only. Built either from a generated manifest or from a
/// plain directory with `X/` and `Y/` subfolders (an optional
/// `Y/labels.tsv` maps `filename<TAB>class_id`).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<ImageTensor>,
    pub y: Vec<DomainSample>,
    pub n_classes: Option<usize>,
    /// True when the directory came from [`generate_dataset`] and the oracle applies.
    pub procedural: bool,
}

impl Dataset {
    pub fn load(dir: &Path, strategy: Strategy) -> Result<Self> {
        if dir.join(MANIFEST_FILE).exists() {
            let m = Manifest::read(dir)?;
            let entries = &m.entries;
            let images = exec::try_map_indexed(strategy, entries.len(), |i| {
                ImageTensor::load_png(&dir.join(&entries[i].filename))
            })?;
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (e, img) in entries.iter().zip(images) {
                match e.domain {
                    Domain::X => x.push(img),
                    Domain::Y => y.push(DomainSample {
                        image: img,
                        label: e
                            .class_id
                            .map(|c| ClassLabel::new(c, m.n_classes))
                            .transpose()?,
                    }),
                }
            }
            return Self::checked(Self {
                x,
                y,
                n_classes: Some(m.n_classes),
                procedural: true,
            });
        }
        let (xdir, ydir) = (find_subdir(dir, "X")?, find_subdir(dir, "Y")?);
        let x_files = list_pngs(&xdir)?;
        let y_files = list_pngs(&ydir)?;
        let labels_path = ydir.join("labels.tsv");
        let labels: Vec<(String, usize)> = if labels_path.exists() {
            read_key_values(&labels_path)?
                .into_iter()
                .map(|(k, v)| {
                    v.parse()
                        .map(|c| (k.clone(), c))
                        .map_err(|_| Error::Format(format!("labels.tsv: bad class for `{k}`")))
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let n_classes = labels.iter().map(|(_, c)| c + 1).max();
        let x = exec::try_map_indexed(strategy, x_files.len(), |i| {
            ImageTensor::load_png(&x_files[i])
        })?;
        let y = exec::try_map_indexed(strategy, y_files.len(), |i| -> Result<DomainSample> {
            let path = &y_files[i];
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default();
            let label = match labels.iter().find(|(f, _)| f == name) {
                Some((_, c)) => Some(ClassLabel::new(*c, n_classes.unwrap_or(0))?),
                None => None,
            };
            Ok(DomainSample {
                image: ImageTensor::load_png(path)?,
                label,
            })
        })?;
        Self::checked(Self {
            x,
            y,
            n_classes,
            procedural: false,
        })
    }

    fn checked(self) -> Result<Self> {
        if self.x.is_empty() || self.y.is_empty() {
            return Err(Error::invalid(
                "dataset needs at least one image per domain",
            ));
        }
        let shape = self.x[0].shape();
        let mismatch = self
            .x
            .iter()
            .chain(self.y.iter().map(|s| &s.image))
            .any(|im| im.shape() != shape);
        if mismatch {
            return Err(Error::invalid("dataset images do not share one shape"));
        }
        Ok(self)
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.x[0].shape()
    }
}

fn find_subdir(dir: &Path, name: &str) -> Result<PathBuf> {
    for cand in [name.to_string(), name.to_lowercase()] {
        let p = dir.join(&cand);
        if p.is_dir() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.display().to_string(),
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no {MANIFEST_FILE} and no {name}/ subdirectory"),
        ),
    ))
}

pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_path(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_with(angles: [f64; 6], class_id: usize) -> ToySceneSpec {
        ToySceneSpec {
            joint_angles: angles,
            ..ToySceneSpec::rest(class_id)
        }
    }

    #[test]
    fn rest_pose_is_deterministic() {
        let s = ToySceneSpec::rest(0);
        let a = render_pose_sketch(&s, 32).unwrap();
        let b = render_pose_sketch(&s, 32).unwrap();
        assert_eq!(a, b);
        // Vertical body axis: rest figure is its own mirror image.
        assert_eq!(a.flip_horizontal(), a);
        assert!(a.data().iter().any(|&v| v == 1.0));
    }

    #[test]
    fn arm_angles_of_opposite_sign_are_mirror_images() {
        for size in [16, 32, 33, 64] {
            let plus =
                render_pose_sketch(&spec_with([0.5, 0.0, 0.0, 0.0, 0.0, 0.0], 0), size).unwrap();
            let minus =
                render_pose_sketch(&spec_with([-0.5, 0.0, 0.0, 0.0, 0.0, 0.0], 0), size).unwrap();
            assert_ne!(plus, minus);
            assert_eq!(plus.flip_horizontal(), minus, "size {size}");
        }
    }

    #[test]
    fn size_below_minimum_is_rejected() {
        let s = ToySceneSpec::rest(0);
        assert!(matches!(
            render_pose_sketch(&s, 15),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            render_appearance(&s, 8),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn color_changes_appearance_only() {
        let a = ToySceneSpec::rest(1);
        let b = ToySceneSpec {
            fill_color: [0.5, 0.9, 0.45],
            ..a.clone()
        };
        assert_ne!(
            render_appearance(&a, 32).unwrap(),
            render_appearance(&b, 32).unwrap()
        );
        assert_eq!(
            render_pose_sketch(&a, 32).unwrap(),
            render_pose_sketch(&b, 32).unwrap()
        );
    }

    #[test]
    fn appearance_values_in_range() {
        let mut rng = scene_rng(3, 0);
        for k in 0..MAX_CLASSES {
            let s = ToySceneSpec::sample(&mut rng, k, DEFAULT_ARTICULATION);
            let im = render_appearance(&s, 32).unwrap();
            assert!(im.in_unit_range());
            assert_eq!(im.shape(), [3, 32, 32]);
        }
    }

    #[test]
    fn rest_pose_class_zero_is_recognized() {
        let im = render_appearance(&ToySceneSpec::rest(0), 32).unwrap();
        let v = oracle_classify(&im, 2).unwrap();
        assert_eq!(v.class_id, 0);
        assert!(v.confidence > 0.9);
    }

    #[test]
    fn templates_are_mutually_distinct() {
        for size in [16, 32, 128] {
            let masks: Vec<Vec<bool>> = (0..MAX_CLASSES).map(|k| template_mask(k, size)).collect();
            for i in 0..MAX_CLASSES {
                assert!(masks[i].iter().any(|&b| b), "class {i} empty at {size}");
                for j in 0..i {
                    let inter = masks[i]
                        .iter()
                        .zip(&masks[j])
                        .filter(|(a, b)| **a && **b)
                        .count();
                    let union = masks[i]
                        .iter()
                        .zip(&masks[j])
                        .filter(|(a, b)| **a || **b)
                        .count();
                    assert!(
                        (inter as f64) / (union as f64) < 0.7,
                        "{i} vs {j} at {size}"
                    );
                }
            }
        }
    }

    #[test]
    fn oracle_on_blank_image_has_low_confidence() {
        let blank = ImageTensor::filled([3, 32, 32], -1.0);
        assert!(oracle_classify(&blank, 2).unwrap().confidence < 0.2);
    }

    #[test]
    fn oracle_is_exact_on_renders_for_every_class_count() {
        for n in MIN_CLASSES..=MAX_CLASSES {
            for i in 0..40u64 {
                let mut rng = scene_rng(11, i);
                let class = (i as usize) % n;
                let s = ToySceneSpec::sample(&mut rng, class, DEFAULT_ARTICULATION);
                let v = oracle_classify(&render_appearance(&s, 32).unwrap(), n).unwrap();
                assert_eq!(v.class_id, class);
                assert!(v.confidence > 0.9);
            }
        }
    }

    #[test]
    fn label_invariants() {
        let l = ClassLabel::new(1, 3).unwrap();
        assert_eq!(l.one_hot(), &[0.0, 1.0, 0.0]);
        assert_eq!(l.class_id(), 1);
        assert!(ClassLabel::new(3, 3).is_err());
        assert!(ClassLabel::from_one_hot(vec![1.0, 1.0]).is_err());
        assert!(ClassLabel::from_one_hot(vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn class_count_out_of_range_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for k in [1, 9] {
            let opts = DatasetOptions {
                n_x: 2,
                n_y: 2,
                n_classes: k,
                size: 16,
                seed: 0,
                articulation: DEFAULT_ARTICULATION,
            };
            assert!(matches!(
                generate_dataset(&opts, dir.path(), Strategy::Sequential),
                Err(Error::InvalidArgument(_))
            ));
        }
    }

    #[test]
    fn scene_validation() {
        let mut s = ToySceneSpec::rest(1);
        assert!(s.validate(2, 0.9).is_ok());
        assert!(s.validate(1, 0.9).is_err());
        s.joint_angles[2] = 1.2;
        assert!(s.validate(2, 0.9).is_err());
    }
}
