//! Loss terms and their per-optimizer-group composition.
//!
//! Every squared or absolute-error term is reduced by the mean over all of
//! its elements (batch included), so weights do not depend on resolution.
//! The KL term sums over code dimensions and averages over the batch.

use candle_core::{DType, Tensor};

use crate::datagen::ClassLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_gan: f64,
    pub w_cyc: f64,
    pub w_kl: f64,
    pub w_c: f64,
    pub w_s: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_gan: 1.0,
            w_cyc: 10.0,
            w_kl: 0.01,
            w_c: 10.0,
            w_s: 1.0,
        }
    }
}

impl LossWeights {
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("w_gan", self.w_gan),
            ("w_cyc", self.w_cyc),
            ("w_kl", self.w_kl),
            ("w_c", self.w_c),
            ("w_s", self.w_s),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.named() {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!(
                    "loss weight `{name}` = {w} must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// The individual terms of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    GanD,
    GanG,
    Rec,
    Kl,
    C,
    S,
}

impl Term {
    pub const ALL: [Term; 6] = [
        Term::GanD,
        Term::GanG,
        Term::Rec,
        Term::Kl,
        Term::C,
        Term::S,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Term::GanD => "gan_d",
            Term::GanG => "gan_g",
            Term::Rec => "rec",
            Term::Kl => "kl",
            Term::C => "c",
            Term::S => "s",
        }
    }
}

/// The four optimizer groups, in update order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    D,
    Q,
    GX,
    GY,
}

impl Group {
    pub const ORDER: [Group; 4] = [Group::D, Group::Q, Group::GX, Group::GY];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::D => "d",
            Group::Q => "q",
            Group::GX => "g_x",
            Group::GY => "g_y",
        }
    }

    /// Weight applied to `term` in this group's objective.
    pub fn coefficient(self, term: Term, w: &LossWeights) -> f64 {
        use Term::*;
        match (self, term) {
            (Group::D, GanD) => w.w_gan,
            (Group::D, _) => 0.0,
            (_, GanG) => w.w_gan,
            (_, Rec) => w.w_cyc,
            (Group::Q, S) => w.w_s,
            (Group::Q, Kl) => w.w_kl,
            (Group::GY, C) => w.w_c,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub gan_d: f64,
    pub gan_g: f64,
    pub rec: f64,
    pub kl: f64,
    pub c: f64,
    pub s: f64,
    /// No labelled sample in the batch (or supervision ablated): `s` contributed nothing.
    pub s_skipped: bool,
}

impl LossParts {
    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::GanD => self.gan_d,
            Term::GanG => self.gan_g,
            Term::Rec => self.rec,
            Term::Kl => self.kl,
            Term::C => self.c,
            Term::S => self.s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub iteration: u64,
    pub parts: LossParts,
    /// Composite objective per group, in [`Group::ORDER`].
    pub composites: [f64; 4],
}

impl LossReport {
    pub const HEADER: &'static str =
        "iter\tgan_d\tgan_g\trec\tkl\tc\ts\ttotal_d\ttotal_q\ttotal_g_x\ttotal_g_y\ts_skipped";

    pub fn composite(&self, g: Group) -> f64 {
        self.composites[Group::ORDER.iter().position(|&x| x == g).unwrap()]
    }

    pub fn to_tsv_line(&self) -> String {
        let p = &self.parts;
        let c = &self.composites;
        format!(
            "{}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{}",
            self.iteration,
            p.gan_d,
            p.gan_g,
            p.rec,
            p.kl,
            p.c,
            p.s,
            c[0],
            c[1],
            c[2],
            c[3],
            p.s_skipped as u8
        )
    }

    pub fn from_tsv_line(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 12 {
            return Err(Error::Format(format!(
                "loss line has {} columns, expected 12",
                cols.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            cols[i]
                .parse()
                .map_err(|_| Error::Format(format!("bad number `{}` in loss line", cols[i])))
        };
        Ok(Self {
            iteration: cols[0]
                .parse()
                .map_err(|_| Error::Format("bad iteration in loss line".into()))?,
            parts: LossParts {
                gan_d: f(1)?,
                gan_g: f(2)?,
                rec: f(3)?,
                kl: f(4)?,
                c: f(5)?,
                s: f(6)?,
                s_skipped: cols[11] == "1",
            },
            composites: [f(7)?, f(8)?, f(9)?, f(10)?],
        })
    }
}

/// Weighted per-group objectives from the individual terms.
pub fn compose(parts: &LossParts, weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    for t in Term::ALL {
        ensure_finite(t.as_str(), parts.get(t))?;
    }
    let mut composites = [0.0; 4];
    for (slot, g) in composites.iter_mut().zip(Group::ORDER) {
        *slot = Term::ALL
            .iter()
            .map(|&t| g.coefficient(t, weights) * parts.get(t))
            .sum();
    }
    Ok(LossReport {
        iteration: 0,
        parts: *parts,
        composites,
    })
}

pub fn ensure_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "loss term `{name}` is not finite ({v})"
        )))
    }
}

fn same_dims(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "{what}: shape mismatch {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

fn mean_sq_from(t: &Tensor, target: f64) -> Result<Tensor> {
    Ok((t - target)?.sqr()?.mean_all()?)
}

/// `mean((D(x)-1)^2) + mean((D(y)-1)^2) + mean(D(x_hat)^2) + mean(D(y_hat)^2)`.
/// Callers pass fake score maps computed from detached generator outputs.
pub fn lsgan_d_loss(
    d_real_x: &Tensor,
    d_real_y: &Tensor,
    d_fake_x: &Tensor,
    d_fake_y: &Tensor,
) -> Result<Tensor> {
    let terms = [
        mean_sq_from(d_real_x, 1.0)?,
        mean_sq_from(d_real_y, 1.0)?,
        mean_sq_from(d_fake_x, 0.0)?,
        mean_sq_from(d_fake_y, 0.0)?,
    ];
    Ok((((&terms[0] + &terms[1])? + &terms[2])? + &terms[3])?)
}

/// `mean((D(x_hat)-1)^2) + mean((D(y_hat)-1)^2)`.
pub fn lsgan_g_loss(d_fake_x: &Tensor, d_fake_y: &Tensor) -> Result<Tensor> {
    Ok((mean_sq_from(d_fake_x, 1.0)? + mean_sq_from(d_fake_y, 1.0)?)?)
}

/// Mean absolute error of each round trip, summed over the two domains.
pub fn cycle_loss(x: &Tensor, x_rec: &Tensor, y: &Tensor, y_rec: &Tensor) -> Result<Tensor> {
    same_dims(x, x_rec, "cycle loss (x)")?;
    same_dims(y, y_rec, "cycle loss (y)")?;
    let lx = (x_rec - x)?.abs()?.mean_all()?;
    let ly = (y_rec - y)?.abs()?.mean_all()?;
    Ok((lx + ly)?)
}

/// `1/2 sum_k (exp(log_var) + mu^2 - 1 - log_var)`, summed over code
/// dimensions and averaged over the batch. Accepts `[d]` or `[B, d]`.
pub fn kl_loss(mu: &Tensor, log_var: &Tensor) -> Result<Tensor> {
    same_dims(mu, log_var, "kl loss")?;
    let batch = if mu.rank() == 2 { mu.dim(0)? } else { 1 };
    let per = ((log_var.exp()? + mu.sqr()?)? - 1.0)?;
    let per = (per - log_var)?;
    Ok(((per.sum_all()? * 0.5)? / batch as f64)?)
}

/// Mean absolute difference between the intended and the re-encoded code,
/// over every element of the concatenated `(z_s, z_u)` code.
pub fn latent_consistency_loss(z: &Tensor, z_hat: &Tensor) -> Result<Tensor> {
    same_dims(z, z_hat, "latent consistency loss")?;
    Ok((z_hat - z)?.abs()?.mean_all()?)
}

/// Mean absolute difference between the `z_s` head and the one-hot label,
/// averaged over labelled samples only. `None` when no sample is labelled.
pub fn supervision_loss(z_s: &Tensor, labels: &[Option<ClassLabel>]) -> Result<Option<Tensor>> {
    let (b, n) = z_s.dims2()?;
    if labels.len() != b {
        return Err(Error::invalid(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    let labelled = labels.iter().filter(|l| l.is_some()).count();
    if labelled == 0 {
        return Ok(None);
    }
    let mut target = vec![0f64; b * n];
    let mut mask = vec![0f64; b];
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            if l.n_classes() != n {
                return Err(Error::invalid(format!(
                    "label length {} != z_s length {n}",
                    l.n_classes()
                )));
            }
            for (k, v) in l.one_hot().iter().enumerate() {
                target[i * n + k] = *v as f64;
            }
            mask[i] = 1.0;
        }
    }
    let dev = z_s.device();
    let dt = z_s.dtype();
    let target = Tensor::from_vec(target, (b, n), dev)?.to_dtype(dt)?;
    let mask = Tensor::from_vec(mask, (b, 1), dev)?.to_dtype(dt)?;
    let per_sample = (z_s - target)?.abs()?.mean_keepdim(1)?;
    let loss = (per_sample.mul(&mask)?.sum_all()? / labelled as f64)?;
    Ok(Some(loss))
}

/// A scalar zero of matching dtype, for skipped terms.
pub fn zero_like(t: &Tensor) -> Result<Tensor> {
    Ok(Tensor::zeros((), t.dtype(), t.device())?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
