//! Finite-difference verification of every loss term against every network.
//!
//! Runs in double precision on a small configuration. For each (objective,
//! network) pair a handful of parameter coordinates are perturbed and the
//! central difference compared with the autodiff gradient. Pairs that must
//! not carry gradient (detached paths) are checked for absence instead.

use std::fmt;

use candle_core::{backprop::GradStore, DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::datagen::{
    render_appearance, render_pose_sketch, ClassLabel, DomainSample, ToySceneSpec,
};
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::losses::{self, Group, Term};
use crate::models::{NetworkId, Networks};
use crate::nn::Param;
use crate::trainer::{compute_terms, draw_noise, group_networks, Batch, TermSet};

/// Something whose gradient is checked: a single term, or a group's
/// composite objective differentiated the way training does it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Term(Term),
    Group(Group),
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Term(t) => f.write_str(t.as_str()),
            Objective::Group(g) => write!(f, "total_{}", g.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Pass,
    Fail,
    /// No gradient, as intended.
    Absent,
    /// A gradient where none should be.
    Leak,
    /// No gradient where one should be.
    Missing,
}

impl RowStatus {
    pub fn ok(self) -> bool {
        matches!(self, RowStatus::Pass | RowStatus::Absent)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Pass => "pass",
            RowStatus::Fail => "FAIL",
            RowStatus::Absent => "absent",
            RowStatus::Leak => "LEAK",
            RowStatus::Missing => "MISSING",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckRow {
    pub objective: Objective,
    pub network: NetworkId,
    pub status: RowStatus,
    pub coords: usize,
    /// Coordinates redrawn because the loss was not smooth around them.
    pub resampled: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.status.ok())
    }

    pub fn failures(&self) -> Vec<&GradcheckRow> {
        self.rows.iter().filter(|r| !r.status.ok()).collect()
    }

    pub fn row(&self, objective: Objective, network: NetworkId) -> Option<&GradcheckRow> {
        self.rows
            .iter()
            .find(|r| r.objective == objective && r.network == network)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("objective\tnetwork\tstatus\tcoords\tresampled\tmax_rel_error\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{:.3e}\n",
                r.objective,
                r.network.as_str(),
                r.status.as_str(),
                r.coords,
                r.resampled,
                r.max_rel_error
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Coordinates compared per pair (at most 20).
    pub coords: usize,
    pub tolerance: f64,
    /// Scale the analytic gradient of one pair, to exercise failure reporting.
    pub corrupt: Option<(Objective, NetworkId)>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            coords: 12,
            tolerance: 1e-4,
            corrupt: None,
        }
    }
}

/// Whether a term is supposed to carry gradient into a network.
pub fn reaches(term: Term, net: NetworkId) -> bool {
    use NetworkId::*;
    match term {
        Term::GanD => matches!(net, DX | DY),
        Term::GanG => true,
        Term::Rec => matches!(net, GX | GY | Q),
        Term::Kl | Term::S => net == Q,
        Term::C => net == GY,
    }
}

const STEP: f64 = 1e-5;
const STEP_FINE: f64 = 2.5e-6;
/// Gradients smaller than this are compared in absolute terms.
const MAGNITUDE_FLOOR: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(MAGNITUDE_FLOOR)
}

struct Harness {
    cfg: TrainConfig,
    nets: Networks,
    batch: Batch,
    noise: Tensor,
}

impl Harness {
    fn new(seed: u64) -> Result<Self> {
        let cfg = TrainConfig::tiny();
        let dev = Device::Cpu;
        let nets = Networks::new(&cfg.model(), seed, DType::F64, &dev)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
        let mut xs: Vec<ImageTensor> = Vec::new();
        let mut ys: Vec<DomainSample> = Vec::new();
        for i in 0..cfg.batch_size {
            let k = i % cfg.n_classes;
            let spec = ToySceneSpec::sample(&mut rng, k, 0.9);
            xs.push(render_pose_sketch(&spec, cfg.image_size)?);
            let other = ToySceneSpec::sample(&mut rng, k, 0.9);
            ys.push(DomainSample {
                image: render_appearance(&other, cfg.image_size)?,
                label: (i == 0)
                    .then(|| ClassLabel::new(k, cfg.n_classes))
                    .transpose()?,
            });
        }
        let xr: Vec<&ImageTensor> = xs.iter().collect();
        let yr: Vec<&DomainSample> = ys.iter().collect();
        let batch = Batch::new(&nets, &xr, &yr)?;
        let noise = draw_noise(&mut rng, cfg.batch_size, cfg.d_u, DType::F64, &dev)?;
        Ok(Self {
            cfg,
            nets,
            batch,
            noise,
        })
    }

    fn terms(&self) -> Result<TermSet> {
        compute_terms(&self.nets, &self.batch, &self.noise, true, true)
    }

    fn value(&self, obj: Objective) -> Result<f64> {
        let t = self.terms()?;
        let w = self.cfg.weights;
        match obj {
            Objective::Term(term) => t
                .get(term)
                .map(losses::scalar)
                .unwrap_or_else(|| Err(Error::Numeric(format!("term `{}` absent", term.as_str())))),
            Objective::Group(g) => {
                let parts = t.parts()?;
                Ok(Term::ALL
                    .iter()
                    .map(|&k| g.coefficient(k, &w) * parts.get(k))
                    .sum())
            }
        }
    }

    /// Gradients as training computes them.
    fn analytic(&self, obj: Objective) -> Result<GradStore> {
        let t = self.terms()?;
        let w = self.cfg.weights;
        Ok(match obj {
            Objective::Term(term) => t
                .get(term)
                .ok_or_else(|| Error::Numeric(format!("term `{}` absent", term.as_str())))?
                .backward()?,
            Objective::Group(Group::D) => (&t.gan_d * w.w_gan)?.backward()?,
            Objective::Group(_) => t.generator_total(&w)?.backward()?,
        })
    }

    fn central_difference(&self, obj: Objective, p: &Param, idx: usize, h: f64) -> Result<f64> {
        let original: Vec<f64> = p.var.as_tensor().flatten_all()?.to_vec1()?;
        let shape = p.var.as_tensor().shape().clone();
        let eval = |delta: f64| -> Result<f64> {
            let mut v = original.clone();
            v[idx] += delta;
            p.var
                .set(&Tensor::from_vec(v, shape.clone(), p.var.device())?)?;
            self.value(obj)
        };
        let plus = eval(h);
        let minus = eval(-h);
        p.var
            .set(&Tensor::from_vec(original, shape, p.var.device())?)?;
        Ok((plus? - minus?) / (2.0 * h))
    }
}

fn check_pair(
    h: &Harness,
    obj: Objective,
    net: NetworkId,
    grads: &GradStore,
    opts: &GradcheckOptions,
    rng: &mut ChaCha8Rng,
) -> Result<GradcheckRow> {
    let params: Vec<&Param> = h.nets.params(net).iter().collect();
    let expected = match obj {
        Objective::Term(t) => reaches(t, net),
        Objective::Group(_) => true,
    };
    let present = params
        .iter()
        .any(|p| grads.get(p.var.as_tensor()).is_some());
    let mut row = GradcheckRow {
        objective: obj,
        network: net,
        status: RowStatus::Pass,
        coords: 0,
        resampled: 0,
        max_rel_error: 0.0,
    };
    match (expected, present) {
        (false, false) => {
            row.status = RowStatus::Absent;
            return Ok(row);
        }
        (false, true) => {
            row.status = RowStatus::Leak;
            return Ok(row);
        }
        (true, false) => {
            row.status = RowStatus::Missing;
            return Ok(row);
        }
        (true, true) => {}
    }
    let scale = if opts.corrupt == Some((obj, net)) {
        2.0
    } else {
        1.0
    };
    let want = opts.coords.min(20);
    let mut attempts = 0;
    while row.coords < want && attempts < want * 5 {
        attempts += 1;
        let p = params[rng.random_range(0..params.len())];
        let idx = rng.random_range(0..p.numel());
        let fd = h.central_difference(obj, p, idx, STEP)?;
        let fd_fine = h.central_difference(obj, p, idx, STEP_FINE)?;
        if rel_err(fd, fd_fine) > opts.tolerance * 0.1 {
            // A ReLU or |.| kink lies within the step; the derivative is
            // not defined there.
            row.resampled += 1;
            continue;
        }
        let a = match grads.get(p.var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?[idx] * scale,
            None => 0.0,
        };
        row.max_rel_error = row.max_rel_error.max(rel_err(a, fd));
        row.coords += 1;
    }
    if row.coords < want || row.max_rel_error > opts.tolerance {
        row.status = RowStatus::Fail;
    }
    Ok(row)
}

/// Check every term against every network, and every group objective
/// against the networks it updates.
pub fn gradcheck_suite(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let h = Harness::new(opts.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(17));
    let mut rows = Vec::new();
    for term in Term::ALL {
        let obj = Objective::Term(term);
        let grads = h.analytic(obj)?;
        for net in NetworkId::ALL {
            rows.push(check_pair(&h, obj, net, &grads, opts, &mut rng)?);
        }
    }
    for g in Group::ORDER {
        let obj = Objective::Group(g);
        let grads = h.analytic(obj)?;
        for &net in group_networks(g) {
            rows.push(check_pair(&h, obj, net, &grads, opts, &mut rng)?);
        }
    }
    Ok(GradcheckReport {
        rows,
        tolerance: opts.tolerance,
    })
}
