//! The five networks: pose generator `G_X: Y -> X`, appearance generator
//! `G_Y: X x Z -> Y`, patch discriminators `D_X`, `D_Y`, and the style
//! encoder `Q: Y -> Z`.
//!
//! Both generators share one downsample / residual chain / upsample layout.
//! `G_Y` receives its code by tiling `z` over the bottleneck grid and
//! concatenating it to the input of every residual block.

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datagen::Domain;
use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::nn::{self, Conv2d, Linear, NetworkParams, ParamBuilder};

const SQRT2: f64 = std::f64::consts::SQRT_2;
const LEAK: f64 = 0.2;

/// Architecture hyperparameters shared by every network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub d_u: usize,
    pub n_classes: usize,
    pub gen_channels: usize,
    pub gen_blocks: usize,
    pub disc_channels: usize,
    pub enc_channels: usize,
}

impl ModelConfig {
    pub fn d_z(&self) -> usize {
        self.d_u + self.n_classes
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size, self.image_size]
    }

    /// Side of the discriminator's score map: three stride-2 stages.
    pub fn patch_grid(&self) -> usize {
        self.image_size / 8
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || self.image_size % 8 != 0 {
            return Err(Error::invalid(format!(
                "image_size {} must be a multiple of 8 and at least 16",
                self.image_size
            )));
        }
        if self.d_u == 0 || self.n_classes == 0 {
            return Err(Error::invalid("d_u and n_classes must be positive"));
        }
        if self.gen_channels == 0 || self.disc_channels == 0 || self.enc_channels == 0 {
            return Err(Error::invalid("channel widths must be positive"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    fn new(pb: &mut ParamBuilder, name: &str, ch: usize, cond: usize) -> Result<Self> {
        pb.push(name);
        let conv1 = Conv2d::new(pb, "conv1", ch + cond, ch, 3, 1, 1, SQRT2);
        let conv2 = Conv2d::new(pb, "conv2", ch, ch, 3, 1, 1, 0.5);
        pb.pop();
        Ok(Self {
            conv1: conv1?,
            conv2: conv2?,
        })
    }

    /// Pre-activation block; the code joins after normalization so the
    /// norm cannot subtract it back out.
    fn forward(
        &self,
        h: &Tensor,
        z_grid: Option<&Tensor>,
        norm: bool,
        frozen: bool,
    ) -> Result<Tensor> {
        let a = if norm {
            nn::instance_norm(h)?
        } else {
            h.clone()
        };
        let mut a = a.relu()?;
        if let Some(z) = z_grid {
            a = Tensor::cat(&[&a, z], 1)?;
        }
        let a = self.conv1.forward(&a, frozen)?.relu()?;
        let a = self.conv2.forward(&a, frozen)?;
        Ok((h + a)?)
    }
}

/// Downsample -> residual chain -> upsample image translator with a `tanh` output.
#[derive(Clone, Debug)]
pub struct Generator {
    code_dim: usize,
    stem: Conv2d,
    down: Vec<Conv2d>,
    blocks: Vec<ResBlock>,
    up: Vec<Conv2d>,
    head: Conv2d,
    params: NetworkParams,
}

impl Generator {
    fn build(
        cfg: &ModelConfig,
        code_dim: usize,
        rng: &mut ChaCha8Rng,
        dtype: DType,
        dev: &Device,
    ) -> Result<Self> {
        let mut pb = ParamBuilder::new(rng, dtype, dev.clone());
        let c = cfg.gen_channels;
        let stem = Conv2d::new(&mut pb, "stem", cfg.channels, c, 7, 1, 3, SQRT2)?;
        let down = vec![
            Conv2d::new(&mut pb, "down0", c, 2 * c, 3, 2, 1, SQRT2)?,
            Conv2d::new(&mut pb, "down1", 2 * c, 4 * c, 3, 2, 1, SQRT2)?,
        ];
        let blocks = (0..cfg.gen_blocks)
            .map(|i| ResBlock::new(&mut pb, &format!("block{i}"), 4 * c, code_dim))
            .collect::<Result<Vec<_>>>()?;
        let up = vec![
            Conv2d::new(&mut pb, "up0", 4 * c, 2 * c, 3, 1, 1, SQRT2)?,
            Conv2d::new(&mut pb, "up1", 2 * c, c, 3, 1, 1, SQRT2)?,
        ];
        let head = Conv2d::new(&mut pb, "head", c, cfg.channels, 7, 1, 3, 1.0)?;
        Ok(Self {
            code_dim,
            stem,
            down,
            blocks,
            up,
            head,
            params: pb.finish(),
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    /// `x: [B, C, S, S]`, `z: [B, code_dim]` (required iff `code_dim > 0`).
    pub fn forward(&self, x: &Tensor, z: Option<&Tensor>) -> Result<Tensor> {
        match (self.code_dim, z) {
            (0, None) => {}
            (0, Some(_)) => return Err(Error::invalid("this generator takes no latent code")),
            (_, None) => return Err(Error::invalid("latent code required")),
            (d, Some(z)) => {
                let (zb, zl) = z.dims2()?;
                if zl != d || zb != x.dim(0)? {
                    return Err(Error::invalid(format!(
                        "latent code shape {:?}, expected [{}, {d}]",
                        z.dims(),
                        x.dim(0)?
                    )));
                }
            }
        }
        let mut h = self.stem.forward(x, false)?;
        h = nn::instance_norm(&h)?.relu()?;
        for d in &self.down {
            h = nn::instance_norm(&d.forward(&h, false)?)?.relu()?;
        }
        let (_, _, gh, gw) = h.dims4()?;
        let z_grid = z.map(|z| nn::tile_code(z, gh, gw)).transpose()?;
        for (i, b) in self.blocks.iter().enumerate() {
            // Only the first block normalizes; later blocks see z-dependent shifts.
            h = b.forward(&h, z_grid.as_ref(), i == 0, false)?;
        }
        h = h.relu()?;
        for u in &self.up {
            h = u.forward(&nn::upsample2x(&h)?, false)?.relu()?;
        }
        Ok(self.head.forward(&h, false)?.tanh()?)
    }
}

/// Patch discriminator: three stride-2 stages and a 3x3 scoring conv.
/// A 32x32 input yields a 4x4 map of raw scores.
#[derive(Clone, Debug)]
pub struct Discriminator {
    stages: Vec<Conv2d>,
    score: Conv2d,
    params: NetworkParams,
}

impl Discriminator {
    fn build(cfg: &ModelConfig, rng: &mut ChaCha8Rng, dtype: DType, dev: &Device) -> Result<Self> {
        let mut pb = ParamBuilder::new(rng, dtype, dev.clone());
        let c = cfg.disc_channels;
        let stages = vec![
            Conv2d::new(&mut pb, "stage0", cfg.channels, c, 4, 2, 1, SQRT2)?,
            Conv2d::new(&mut pb, "stage1", c, 2 * c, 4, 2, 1, SQRT2)?,
            Conv2d::new(&mut pb, "stage2", 2 * c, 4 * c, 4, 2, 1, SQRT2)?,
        ];
        let score = Conv2d::new(&mut pb, "score", 4 * c, 1, 3, 1, 1, 1.0)?;
        Ok(Self {
            stages,
            score,
            params: pb.finish(),
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    /// `[B, C, S, S] -> [B, 1, S/8, S/8]`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for s in &self.stages {
            h = nn::leaky_relu(&s.forward(&h, false)?, LEAK)?;
        }
        self.score.forward(&h, false)
    }
}

/// Encoder heads as tensors: `mu`, `log_var` are `[B, d_u]`, `z_s` is `[B, n_classes]`.
#[derive(Clone, Debug)]
pub struct EncoderTensors {
    pub mu: Tensor,
    pub log_var: Tensor,
    pub z_s: Tensor,
}

/// Style encoder: one convolutional residual trunk feeding three linear heads.
/// No normalization anywhere, since per-image color statistics are the
/// signal the code must carry.
#[derive(Clone, Debug)]
pub struct Encoder {
    stem: Conv2d,
    down0: Conv2d,
    block: ResBlock,
    down1: Conv2d,
    down2: Conv2d,
    mu: Linear,
    log_var: Linear,
    z_s: Linear,
    params: NetworkParams,
}

impl Encoder {
    fn build(cfg: &ModelConfig, rng: &mut ChaCha8Rng, dtype: DType, dev: &Device) -> Result<Self> {
        let mut pb = ParamBuilder::new(rng, dtype, dev.clone());
        let c = cfg.enc_channels;
        let stem = Conv2d::new(&mut pb, "stem", cfg.channels, c, 3, 1, 1, SQRT2)?;
        let down0 = Conv2d::new(&mut pb, "down0", c, 2 * c, 3, 2, 1, SQRT2)?;
        let block = ResBlock::new(&mut pb, "block", 2 * c, 0)?;
        let down1 = Conv2d::new(&mut pb, "down1", 2 * c, 2 * c, 3, 2, 1, SQRT2)?;
        let down2 = Conv2d::new(&mut pb, "down2", 2 * c, 2 * c, 3, 2, 1, SQRT2)?;
        let grid = cfg.image_size / 8;
        let feat = 2 * c * grid * grid;
        let mu = Linear::new(&mut pb, "mu", feat, cfg.d_u, 1.0)?;
        let log_var = Linear::new(&mut pb, "log_var", feat, cfg.d_u, 0.1)?;
        let z_s = Linear::new(&mut pb, "z_s", feat, cfg.n_classes, 1.0)?;
        Ok(Self {
            stem,
            down0,
            block,
            down1,
            down2,
            mu,
            log_var,
            z_s,
            params: pb.finish(),
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    /// With `frozen`, the parameters act as constants: gradients still reach
    /// the input but not the encoder's own weights.
    pub fn forward(&self, y: &Tensor, frozen: bool) -> Result<EncoderTensors> {
        let act = |t: Tensor| nn::leaky_relu(&t, LEAK);
        let mut h = act(self.stem.forward(y, frozen)?)?;
        h = act(self.down0.forward(&h, frozen)?)?;
        h = self.block.forward(&h, None, false, frozen)?;
        h = act(self.down1.forward(&h, frozen)?)?;
        h = act(self.down2.forward(&h, frozen)?)?;
        let b = h.dim(0)?;
        let flat = h.reshape((b, ()))?;
        Ok(EncoderTensors {
            mu: self.mu.forward(&flat, frozen)?,
            log_var: self.log_var.forward(&flat, frozen)?,
            z_s: self.z_s.forward(&flat, frozen)?,
        })
    }
}

/// Identifies one of the five networks; also the unit of optimizer grouping
/// (both discriminators share the D group).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetworkId {
    GX,
    GY,
    DX,
    DY,
    Q,
}

impl NetworkId {
    pub const ALL: [NetworkId; 5] = [
        NetworkId::GX,
        NetworkId::GY,
        NetworkId::DX,
        NetworkId::DY,
        NetworkId::Q,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NetworkId::GX => "g_x",
            NetworkId::GY => "g_y",
            NetworkId::DX => "d_x",
            NetworkId::DY => "d_y",
            NetworkId::Q => "q",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|n| n.as_str() == s)
    }
}

/// Latent code as plain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub z_s: Vec<f32>,
    pub z_u: Vec<f32>,
}

impl LatentCode {
    /// `z_s` followed by `z_u`, the layout the generator consumes.
    pub fn concat(&self) -> Vec<f32> {
        self.z_s.iter().chain(&self.z_u).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.z_s.len() + self.z_u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.z_s.iter().chain(&self.z_u).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mu: Vec<f32>,
    pub log_var: Vec<f32>,
    pub z_s: Vec<f32>,
}

impl EncoderOutput {
    /// The deterministic code `concat(z_s, mu)`.
    pub fn mode(&self) -> LatentCode {
        LatentCode {
            z_s: self.z_s.clone(),
            z_u: self.mu.clone(),
        }
    }
}

/// `mu + exp(log_var / 2) * noise`, elementwise, on tensors.
pub fn reparameterize_t(mu: &Tensor, log_var: &Tensor, noise: &Tensor) -> Result<Tensor> {
    if mu.dims() != log_var.dims() || mu.dims() != noise.dims() {
        return Err(Error::invalid(format!(
            "reparameterize shapes differ: {:?} {:?} {:?}",
            mu.dims(),
            log_var.dims(),
            noise.dims()
        )));
    }
    let std = (log_var * 0.5)?.exp()?;
    Ok((mu + std.mul(noise)?)?)
}

/// Vector form of [`reparameterize_t`].
pub fn reparameterize(mu: &[f64], log_var: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != log_var.len() || mu.len() != noise.len() {
        return Err(Error::invalid(format!(
            "reparameterize lengths differ: {} {} {}",
            mu.len(),
            log_var.len(),
            noise.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(log_var)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// All five networks, built deterministically from one seed.
#[derive(Clone, Debug)]
pub struct Networks {
    pub cfg: ModelConfig,
    pub g_x: Generator,
    pub g_y: Generator,
    pub d_x: Discriminator,
    pub d_y: Discriminator,
    pub q: Encoder,
    dtype: DType,
    device: Device,
}

impl Networks {
    pub fn new(cfg: &ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        // Each network gets its own stream so widening one leaves the others unchanged.
        let rng = |stream: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(1000 + stream);
            r
        };
        Ok(Self {
            cfg: cfg.clone(),
            g_x: Generator::build(cfg, 0, &mut rng(0), dtype, device)?,
            g_y: Generator::build(cfg, cfg.d_z(), &mut rng(1), dtype, device)?,
            d_x: Discriminator::build(cfg, &mut rng(2), dtype, device)?,
            d_y: Discriminator::build(cfg, &mut rng(3), dtype, device)?,
            q: Encoder::build(cfg, &mut rng(4), dtype, device)?,
            dtype,
            device: device.clone(),
        })
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn params(&self, id: NetworkId) -> &NetworkParams {
        match id {
            NetworkId::GX => self.g_x.params(),
            NetworkId::GY => self.g_y.params(),
            NetworkId::DX => self.d_x.params(),
            NetworkId::DY => self.d_y.params(),
            NetworkId::Q => self.q.params(),
        }
    }

    pub fn discriminator(&self, domain: Domain) -> &Discriminator {
        match domain {
            Domain::X => &self.d_x,
            Domain::Y => &self.d_y,
        }
    }

    pub fn param_count(&self) -> usize {
        NetworkId::ALL
            .iter()
            .map(|&id| self.params(id).numel())
            .sum()
    }

    fn image_batch(&self, im: &ImageTensor) -> Result<Tensor> {
        if im.shape() != self.cfg.image_shape() {
            return Err(Error::invalid(format!(
                "image shape {:?}, model expects {:?}",
                im.shape(),
                self.cfg.image_shape()
            )));
        }
        im.to_tensor(self.dtype, &self.device)
    }

    fn single(t: &Tensor) -> Result<ImageTensor> {
        Ok(ImageTensor::from_batch_tensor(t)?.remove(0))
    }

    /// `x_hat = G_X(y)`.
    pub fn gx_forward(&self, y: &ImageTensor) -> Result<ImageTensor> {
        Self::single(&self.g_x.forward(&self.image_batch(y)?, None)?)
    }

    /// `y_hat = G_Y(x, z)`.
    pub fn gy_forward(&self, x: &ImageTensor, z: &LatentCode) -> Result<ImageTensor> {
        if z.z_s.len() != self.cfg.n_classes || z.z_u.len() != self.cfg.d_u {
            return Err(Error::invalid(format!(
                "latent code ({} + {}) does not match n_classes {} + d_u {}",
                z.z_s.len(),
                z.z_u.len(),
                self.cfg.n_classes,
                self.cfg.d_u
            )));
        }
        let zt = self.code_tensor(&[z])?;
        Self::single(&self.g_y.forward(&self.image_batch(x)?, Some(&zt))?)
    }

    pub fn q_encode(&self, y: &ImageTensor) -> Result<EncoderOutput> {
        let out = self.q.forward(&self.image_batch(y)?, true)?;
        let row =
            |t: &Tensor| -> Result<Vec<f32>> { Ok(t.to_dtype(DType::F32)?.squeeze(0)?.to_vec1()?) };
        Ok(EncoderOutput {
            mu: row(&out.mu)?,
            log_var: row(&out.log_var)?,
            z_s: row(&out.z_s)?,
        })
    }

    /// Raw patch scores, `[S/8, S/8]` flattened row-major.
    pub fn d_forward(&self, image: &ImageTensor, domain: Domain) -> Result<Vec<f32>> {
        let s = self
            .discriminator(domain)
            .forward(&self.image_batch(image)?)?;
        Ok(s.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?)
    }

    /// `[B, d_z]` tensor from codes.
    pub fn code_tensor(&self, codes: &[&LatentCode]) -> Result<Tensor> {
        let d = self.cfg.d_z();
        let mut flat = Vec::with_capacity(codes.len() * d);
        for c in codes {
            if c.len() != d {
                return Err(Error::invalid(format!(
                    "latent code length {} != {d}",
                    c.len()
                )));
            }
            flat.extend(c.concat());
        }
        Ok(Tensor::from_vec(flat, (codes.len(), d), &self.device)?.to_dtype(self.dtype)?)
    }
}
