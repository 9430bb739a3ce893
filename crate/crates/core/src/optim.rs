//! Adam over an explicit parameter list, with inspectable moments so that
//! optimizer state can be checkpointed and resumed exactly.

use candle_core::{backprop::GradStore, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug)]
pub struct Adam {
    cfg: AdamConfig,
    vars: Vec<Var>,
    m: Vec<Var>,
    v: Vec<Var>,
    step: u64,
}

impl Adam {
    pub fn new(vars: Vec<Var>, cfg: AdamConfig) -> Result<Self> {
        let zeros =
            |var: &Var| -> Result<Var> { Ok(Var::zeros(var.shape(), var.dtype(), var.device())?) };
        let m = vars.iter().map(zeros).collect::<Result<Vec<_>>>()?;
        let v = vars.iter().map(zeros).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            vars,
            m,
            v,
            step: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// First and second moments, aligned with [`Adam::vars`].
    pub fn moments(&self) -> (&[Var], &[Var]) {
        (&self.m, &self.v)
    }

    /// Restore state saved from an optimizer over the same parameter list.
    pub fn restore(&mut self, step: u64, m: &[Tensor], v: &[Tensor]) -> Result<()> {
        if m.len() != self.vars.len() || v.len() != self.vars.len() {
            return Err(Error::invalid(
                "optimizer state does not match parameter count",
            ));
        }
        for ((dst, src), var) in self.m.iter().zip(m).zip(&self.vars) {
            if src.dims() != var.dims() {
                return Err(Error::invalid(format!(
                    "first-moment shape {:?} != parameter shape {:?}",
                    src.dims(),
                    var.dims()
                )));
            }
            dst.set(&src.to_dtype(var.dtype())?)?;
        }
        for ((dst, src), var) in self.v.iter().zip(v).zip(&self.vars) {
            if src.dims() != var.dims() {
                return Err(Error::invalid(format!(
                    "second-moment shape {:?} != parameter shape {:?}",
                    src.dims(),
                    var.dims()
                )));
            }
            dst.set(&src.to_dtype(var.dtype())?)?;
        }
        self.step = step;
        Ok(())
    }

    /// One bias-corrected Adam update. Parameters without a gradient in
    /// `grads` keep their value and their moments.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((var, m), v) in self.vars.iter().zip(&self.m).zip(&self.v) {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let m_new = ((m.as_tensor() * beta1)? + (g * (1.0 - beta1))?)?;
            let v_new = ((v.as_tensor() * beta2)? + (g.sqr()? * (1.0 - beta2))?)?;
            let m_hat = (&m_new / bc1)?;
            let v_hat = (&v_new / bc2)?;
            let delta = (m_hat / (v_hat.sqrt()? + eps)?)?;
            let updated = (var.as_tensor() - (delta * lr)?)?;
            m.set(&m_new)?;
            v.set(&v_new)?;
            var.set(&updated)?;
        }
        Ok(())
    }
}
