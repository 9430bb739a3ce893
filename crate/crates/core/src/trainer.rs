//! Alternating adversarial training.
//!
//! One iteration computes every loss term from a single forward pass, takes
//! two backward passes (discriminator objective on detached fakes, and the
//! weighted sum of the remaining terms), then applies the per-group updates
//! in the order D, Q, G_X, G_Y. All gradients are evaluated at the
//! pre-update parameters.
//!
//! The weighted sum yields each group's own objective gradient because the
//! terms a group must not see carry no gradient into it: the latent
//! consistency term translates with a detached code and re-encodes through a
//! frozen Q, and the supervision and KL terms only touch Q.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::{backprop::GradStore, DType, Device, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::{param_key, Array, Checkpoint};
use crate::config::TrainConfig;
use crate::datagen::{ClassLabel, Dataset, DomainSample};
use crate::error::{Error, IoContext, Result};
use crate::exec::Strategy;
use crate::imaging::ImageTensor;
use crate::losses::{self, compose, Group, LossParts, LossReport, Term};
use crate::models::{reparameterize_t, NetworkId, Networks};
use crate::optim::{Adam, AdamConfig};

/// Any loss term above this magnitude is treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e4;
pub const LOSS_LOG: &str = "losses.tsv";
pub const FINAL_DIR: &str = "final";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Networks updated by each group.
pub fn group_networks(g: Group) -> &'static [NetworkId] {
    match g {
        Group::D => &[NetworkId::DX, NetworkId::DY],
        Group::Q => &[NetworkId::Q],
        Group::GX => &[NetworkId::GX],
        Group::GY => &[NetworkId::GY],
    }
}

pub fn network_group(id: NetworkId) -> Group {
    match id {
        NetworkId::DX | NetworkId::DY => Group::D,
        NetworkId::Q => Group::Q,
        NetworkId::GX => Group::GX,
        NetworkId::GY => Group::GY,
    }
}

/// Randomness for iteration `iteration`, independent of how the run got there.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((1 << 48) | iteration);
    r
}

/// Standard normal noise for the reparameterized code, `[batch, d_u]`.
pub fn draw_noise<R: Rng + ?Sized>(
    rng: &mut R,
    batch: usize,
    d_u: usize,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let v: Vec<f64> = (0..batch * d_u)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Ok(Tensor::from_vec(v, (batch, d_u), device)?.to_dtype(dtype)?)
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
    pub labels: Vec<Option<ClassLabel>>,
}

impl Batch {
    pub fn new(nets: &Networks, x: &[&ImageTensor], y: &[&DomainSample]) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::invalid(format!(
                "batch needs equal, non-zero X and Y counts (got {} and {})",
                x.len(),
                y.len()
            )));
        }
        let shape = nets.cfg.image_shape();
        for im in x.iter().copied().chain(y.iter().map(|s| &s.image)) {
            if im.shape() != shape {
                return Err(Error::invalid(format!(
                    "batch image shape {:?}, model expects {shape:?}",
                    im.shape()
                )));
            }
        }
        let ys: Vec<&ImageTensor> = y.iter().map(|s| &s.image).collect();
        Ok(Self {
            x: ImageTensor::batch_to_tensor(x, nets.dtype(), nets.device())?,
            y: ImageTensor::batch_to_tensor(&ys, nets.dtype(), nets.device())?,
            labels: y.iter().map(|s| s.label.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Scalar loss tensors of one forward pass. Skipped terms are `None`.
#[derive(Debug, Clone)]
pub struct TermSet {
    pub gan_d: Tensor,
    pub gan_g: Tensor,
    pub rec: Tensor,
    pub kl: Tensor,
    pub c: Option<Tensor>,
    pub s: Option<Tensor>,
}

impl TermSet {
    pub fn get(&self, t: Term) -> Option<&Tensor> {
        match t {
            Term::GanD => Some(&self.gan_d),
            Term::GanG => Some(&self.gan_g),
            Term::Rec => Some(&self.rec),
            Term::Kl => Some(&self.kl),
            Term::C => self.c.as_ref(),
            Term::S => self.s.as_ref(),
        }
    }

    pub fn parts(&self) -> Result<LossParts> {
        let opt = |t: &Option<Tensor>| -> Result<f64> {
            t.as_ref().map(losses::scalar).unwrap_or(Ok(0.0))
        };
        Ok(LossParts {
            gan_d: losses::scalar(&self.gan_d)?,
            gan_g: losses::scalar(&self.gan_g)?,
            rec: losses::scalar(&self.rec)?,
            kl: losses::scalar(&self.kl)?,
            c: opt(&self.c)?,
            s: opt(&self.s)?,
            s_skipped: self.s.is_none(),
        })
    }

    /// `sum_t coefficient(group, t) * t` for the generator-side groups. The
    /// discriminator's objective is `gan_d` alone and is built separately.
    pub fn generator_total(&self, w: &losses::LossWeights) -> Result<Tensor> {
        let mut total = (&self.gan_g * w.w_gan)?;
        total = (total + (&self.rec * w.w_cyc)?)?;
        total = (total + (&self.kl * w.w_kl)?)?;
        if let Some(c) = &self.c {
            total = (total + (c * w.w_c)?)?;
        }
        if let Some(s) = &self.s {
            total = (total + (s * w.w_s)?)?;
        }
        Ok(total)
    }
}

/// Full forward pass: encode, translate both ways, reconstruct, score.
pub fn compute_terms(
    nets: &Networks,
    batch: &Batch,
    noise: &Tensor,
    with_c: bool,
    with_s: bool,
) -> Result<TermSet> {
    let enc = nets.q.forward(&batch.y, false)?;
    let z_u = reparameterize_t(&enc.mu, &enc.log_var, noise)?;
    let z = Tensor::cat(&[&enc.z_s, &z_u], 1)?;

    let x_hat = nets.g_x.forward(&batch.y, None)?;
    let y_hat = nets.g_y.forward(&batch.x, Some(&z))?;
    let x_rec = nets.g_x.forward(&y_hat, None)?;
    let y_rec = nets.g_y.forward(&x_hat, Some(&z))?;

    let gan_d = losses::lsgan_d_loss(
        &nets.d_x.forward(&batch.x)?,
        &nets.d_y.forward(&batch.y)?,
        &nets.d_x.forward(&x_hat.detach())?,
        &nets.d_y.forward(&y_hat.detach())?,
    )?;
    let gan_g = losses::lsgan_g_loss(&nets.d_x.forward(&x_hat)?, &nets.d_y.forward(&y_hat)?)?;
    let rec = losses::cycle_loss(&batch.x, &x_rec, &batch.y, &y_rec)?;
    let kl = losses::kl_loss(&enc.mu, &enc.log_var)?;

    let c = if with_c {
        // Separate translation on a detached code: through `y_hat` the term
        // would reach Q via the code input of G_Y.
        let y_hat_c = nets.g_y.forward(&batch.x, Some(&z.detach()))?;
        let re = nets.q.forward(&y_hat_c, true)?;
        let z_hat = Tensor::cat(&[&re.z_s, &re.mu], 1)?;
        Some(losses::latent_consistency_loss(&z.detach(), &z_hat)?)
    } else {
        None
    };
    let s = if with_s {
        losses::supervision_loss(&enc.z_s, &batch.labels)?
    } else {
        None
    };
    Ok(TermSet {
        gan_d,
        gan_g,
        rec,
        kl,
        c,
        s,
    })
}

/// Gradients of one iteration, all taken at the same parameter values.
pub struct StepGrads {
    pub d: GradStore,
    pub g: GradStore,
    pub parts: LossParts,
}

impl StepGrads {
    pub fn for_group(&self, g: Group) -> &GradStore {
        match g {
            Group::D => &self.d,
            _ => &self.g,
        }
    }
}

fn check_divergence(parts: &LossParts, iteration: u64) -> Result<()> {
    for t in Term::ALL {
        let v = parts.get(t);
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                iteration,
                term: t.as_str().to_string(),
                value: v,
                last_good: None,
            });
        }
    }
    Ok(())
}

pub struct TrainState {
    pub config: TrainConfig,
    pub nets: Networks,
    /// Completed iterations.
    pub iteration: u64,
    opts: Vec<Adam>,
}

impl TrainState {
    pub fn new(config: &TrainConfig, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let nets = Networks::new(&config.model(), config.seed, dtype, device)?;
        Self::with_networks(config, nets, 0)
    }

    fn with_networks(config: &TrainConfig, nets: Networks, iteration: u64) -> Result<Self> {
        let adam = AdamConfig {
            lr: config.lr,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
        };
        let opts = Group::ORDER
            .iter()
            .map(|&g| Adam::new(group_vars(&nets, g), adam))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            nets,
            iteration,
            opts,
        })
    }

    fn opt_index(g: Group) -> usize {
        Group::ORDER.iter().position(|&x| x == g).unwrap()
    }

    pub fn optimizer(&self, g: Group) -> &Adam {
        &self.opts[Self::opt_index(g)]
    }

    pub fn compute_gradients(&self, batch: &Batch, noise: &Tensor) -> Result<StepGrads> {
        let cfg = &self.config;
        let w = cfg.effective_weights();
        let terms = compute_terms(&self.nets, batch, noise, !cfg.ablate_lc, !cfg.ablate_ls)?;
        let parts = terms.parts()?;
        check_divergence(&parts, self.iteration)?;
        let d = (&terms.gan_d * w.w_gan)?.backward()?;
        let g = terms.generator_total(&w)?.backward()?;
        Ok(StepGrads { d, g, parts })
    }

    /// Apply one group's update. Other groups' parameters are untouched.
    pub fn apply_group(&mut self, g: Group, grads: &StepGrads) -> Result<()> {
        self.opts[Self::opt_index(g)].step(grads.for_group(g))
    }

    /// One full iteration on an explicit batch and noise draw.
    pub fn step_with(&mut self, batch: &Batch, noise: &Tensor) -> Result<LossReport> {
        let grads = self.compute_gradients(batch, noise)?;
        for g in Group::ORDER {
            self.apply_group(g, &grads)?;
        }
        let mut report = compose(&grads.parts, &self.config.effective_weights())?;
        report.iteration = self.iteration;
        self.iteration += 1;
        Ok(report)
    }

    /// One iteration; the code noise comes from the iteration's own stream.
    pub fn train_step(&mut self, x: &[&ImageTensor], y: &[&DomainSample]) -> Result<LossReport> {
        let batch = Batch::new(&self.nets, x, y)?;
        let mut rng = iteration_rng(self.config.seed, self.iteration);
        let noise = draw_noise(
            &mut rng,
            batch.len(),
            self.config.d_u,
            self.nets.dtype(),
            self.nets.device(),
        )?;
        self.step_with(&batch, &noise)
    }

    /// Draw a batch uniformly with replacement and train on it.
    pub fn train_step_sampled(&mut self, data: &Dataset) -> Result<LossReport> {
        let b = self.config.batch_size;
        let mut rng = iteration_rng(self.config.seed, self.iteration);
        let xi: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.x.len())).collect();
        let yi: Vec<usize> = (0..b).map(|_| rng.random_range(0..data.y.len())).collect();
        let xs: Vec<&ImageTensor> = xi.iter().map(|&i| &data.x[i]).collect();
        let ys: Vec<&DomainSample> = yi.iter().map(|&i| &data.y[i]).collect();
        let batch = Batch::new(&self.nets, &xs, &ys)?;
        let noise = draw_noise(
            &mut rng,
            b,
            self.config.d_u,
            self.nets.dtype(),
            self.nets.device(),
        )?;
        self.step_with(&batch, &noise)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::from_networks(&self.config, self.iteration, &self.nets)?;
        for g in Group::ORDER {
            let opt = self.optimizer(g);
            let (m, v) = opt.moments();
            for (i, key) in group_keys(&self.nets, g).iter().enumerate() {
                ck.arrays.insert(
                    format!("opt/{}/m/{key}", g.as_str()),
                    Array::from_tensor(m[i].as_tensor())?,
                );
                ck.arrays.insert(
                    format!("opt/{}/v/{key}", g.as_str()),
                    Array::from_tensor(v[i].as_tensor())?,
                );
            }
            ck.counters
                .insert(format!("opt_step_{}", g.as_str()), opt.step_count());
        }
        Ok(ck)
    }

    /// Resume from a checkpoint, restoring optimizer moments when present.
    pub fn from_checkpoint(ck: &Checkpoint, dtype: DType, device: &Device) -> Result<Self> {
        let nets = ck.networks(dtype, device)?;
        let mut state = Self::with_networks(&ck.config, nets, ck.iteration)?;
        for g in Group::ORDER {
            let keys = group_keys(&state.nets, g);
            let fetch = |which: &str| -> Result<Option<Vec<Tensor>>> {
                let mut out = Vec::new();
                for key in &keys {
                    match ck.arrays.get(&format!("opt/{}/{which}/{key}", g.as_str())) {
                        Some(a) => out.push(a.to_tensor(dtype, device)?),
                        None => return Ok(None),
                    }
                }
                Ok(Some(out))
            };
            let step = ck
                .counters
                .get(&format!("opt_step_{}", g.as_str()))
                .copied();
            if let (Some(m), Some(v), Some(step)) = (fetch("m")?, fetch("v")?, step) {
                state.opts[Self::opt_index(g)].restore(step, &m, &v)?;
            }
        }
        Ok(state)
    }
}

pub fn group_vars(nets: &Networks, g: Group) -> Vec<Var> {
    group_networks(g)
        .iter()
        .flat_map(|&id| nets.params(id).vars())
        .collect()
}

fn group_keys(nets: &Networks, g: Group) -> Vec<String> {
    group_networks(g)
        .iter()
        .flat_map(|&id| nets.params(id).iter().map(move |p| param_key(id, &p.name)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub reports: Vec<LossReport>,
}

/// Read a loss log written by [`train`].
pub fn read_loss_log(path: &Path) -> Result<Vec<LossReport>> {
    let text = fs::read_to_string(path).with_path(path)?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(LossReport::from_tsv_line)
        .collect()
}

/// Train on the dataset at `data_dir`, writing `resolved.cfg`, `losses.tsv`
/// (one row per iteration, columns as [`LossReport::HEADER`]), periodic
/// checkpoints under `checkpoints/` and the final one under `final/`.
pub fn train(
    config: &TrainConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let data = Dataset::load(data_dir, Strategy::default())?;
    if data.x.is_empty() || data.y.is_empty() {
        return Err(Error::invalid(format!(
            "{}: both domains need images",
            data_dir.display()
        )));
    }
    let want = config.model().image_shape();
    if data.image_shape() != want {
        return Err(Error::invalid(format!(
            "dataset images are {:?}, config expects {want:?}",
            data.image_shape()
        )));
    }
    if let Some(k) = data.n_classes {
        if k != config.n_classes {
            return Err(Error::invalid(format!(
                "dataset has {k} classes, config n_classes = {}",
                config.n_classes
            )));
        }
    }

    let device = Device::Cpu;
    let mut state = match resume {
        None => TrainState::new(config, DType::F32, &device)?,
        Some(dir) => {
            let ck = Checkpoint::read(dir)?;
            if ck.config.model() != config.model() {
                return Err(Error::Usage(format!(
                    "{}: checkpoint architecture differs from the requested config",
                    dir.display()
                )));
            }
            let mut st = TrainState::from_checkpoint(&ck, DType::F32, &device)?;
            st.config = config.clone();
            st
        }
    };

    fs::create_dir_all(out_dir).with_path(out_dir)?;
    config.write_resolved(out_dir)?;
    let log_path = out_dir.join(LOSS_LOG);
    let mut log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&log_path)
        .with_path(&log_path)?;

    let mut reports = Vec::new();
    let mut last_good: Option<PathBuf> = resume.map(Path::to_path_buf);
    while state.iteration < config.iterations {
        let report = match state.train_step_sampled(&data) {
            Ok(r) => r,
            Err(Error::Divergence {
                iteration,
                term,
                value,
                ..
            }) => {
                return Err(Error::Divergence {
                    iteration,
                    term,
                    value,
                    last_good,
                })
            }
            Err(e) => return Err(e),
        };
        writeln!(log_file, "{}", report.to_tsv_line()).with_path(&log_path)?;
        if report.iteration % 100 == 0 {
            log::info!(
                "iter {} gan_d {:.4} gan_g {:.4} rec {:.4} kl {:.4} c {:.4} s {:.4}",
                report.iteration,
                report.parts.gan_d,
                report.parts.gan_g,
                report.parts.rec,
                report.parts.kl,
                report.parts.c,
                report.parts.s
            );
        }
        reports.push(report);
        let k = config.checkpoint_every;
        if k > 0 && state.iteration % k == 0 && state.iteration < config.iterations {
            let dir = out_dir
                .join(CHECKPOINT_DIR)
                .join(format!("iter_{:06}", state.iteration));
            state.to_checkpoint()?.write(&dir)?;
            last_good = Some(dir);
        }
    }
    let final_dir = out_dir.join(FINAL_DIR);
    state.to_checkpoint()?.write(&final_dir)?;
    Ok(TrainOutcome {
        final_checkpoint: final_dir,
        loss_log: log_path,
        reports,
    })
}
