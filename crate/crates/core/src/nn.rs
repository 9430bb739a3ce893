//! Parameter storage and the handful of layers the networks need.
//!
//! Convolutions are lowered to im2col followed by one matmul; the backward
//! pass of im2col is the matching col2im scatter.

use candle_core::{CpuStorage, CustomOp1, DType, Device, Layout, Shape, Tensor, Var, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A named trainable array.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub var: Var,
}

impl Param {
    pub fn shape(&self) -> Vec<usize> {
        self.var.dims().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.var.elem_count()
    }
}

/// Parameters of one network, in construction order.
#[derive(Clone, Debug, Default)]
pub struct NetworkParams {
    params: Vec<Param>,
}

impl NetworkParams {
    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn vars(&self) -> Vec<Var> {
        self.params.iter().map(|p| p.var.clone()).collect()
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    /// Deep copy of every value, as flat f64 vectors.
    pub fn snapshot(&self) -> Result<Vec<Vec<f64>>> {
        self.params
            .iter()
            .map(|p| {
                Ok(p.var
                    .as_tensor()
                    .to_dtype(DType::F64)?
                    .flatten_all()?
                    .to_vec1()?)
            })
            .collect()
    }
}

/// Allocates parameters with seeded initialization.
pub struct ParamBuilder<'a> {
    rng: &'a mut ChaCha8Rng,
    dtype: DType,
    device: Device,
    prefix: Vec<String>,
    params: Vec<Param>,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(rng: &'a mut ChaCha8Rng, dtype: DType, device: Device) -> Self {
        Self {
            rng,
            dtype,
            device,
            prefix: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn push(&mut self, scope: &str) {
        self.prefix.push(scope.to_string());
    }

    pub fn pop(&mut self) {
        self.prefix.pop();
    }

    fn full_name(&self, name: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(name.to_string());
        parts.join(".")
    }

    /// Normal init with the given standard deviation.
    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<Var> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = StandardNormal.sample(self.rng);
                v * std
            })
            .collect();
        self.register(name, shape, data)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.register(name, shape, vec![0.0; n])
    }

    fn register(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let full = self.full_name(name);
        if self.params.iter().any(|p| p.name == full) {
            return Err(Error::invalid(format!("duplicate parameter name `{full}`")));
        }
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.params.push(Param {
            name: full,
            var: var.clone(),
        });
        Ok(var)
    }

    /// Draws a fresh value from the builder's stream; used to decorrelate
    /// sibling networks built from one seed.
    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    pub fn finish(self) -> NetworkParams {
        NetworkParams {
            params: self.params,
        }
    }
}

/// Read a parameter either as a live graph leaf or as a constant that
/// carries no gradient back to the parameter.
#[inline]
pub(crate) fn read(var: &Var, frozen: bool) -> Tensor {
    if frozen {
        var.as_tensor().detach()
    } else {
        var.as_tensor().clone()
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// He-normal weights scaled by `gain / sqrt(2)`; zero bias.
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
    ) -> Result<Self> {
        let fan_in = (in_c * kernel * kernel) as f64;
        pb.push(name);
        let weight = pb.normal(
            "weight",
            &[out_c, in_c, kernel, kernel],
            gain / fan_in.sqrt(),
        );
        let bias = pb.zeros("bias", &[out_c]);
        pb.pop();
        Ok(Self {
            weight: weight?,
            bias: bias?,
            kernel,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor, frozen: bool) -> Result<Tensor> {
        conv2d(
            x,
            &read(&self.weight, frozen),
            &read(&self.bias, frozen),
            self.stride,
            self.padding,
        )
    }

    pub fn out_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }
}

/// 2-D convolution as im2col followed by a single GEMM.
///
/// `x: [B, C, H, W]`, `w: [O, C, K, K]`, `b: [O]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (batch, c, h, wd) = x.dims4()?;
    let (o, wc, k, k2) = w.dims4()?;
    if wc != c || k != k2 {
        return Err(Error::invalid(format!(
            "conv weight {:?} incompatible with input {:?}",
            w.dims(),
            x.dims()
        )));
    }
    if h + 2 * padding < k || wd + 2 * padding < k || stride == 0 {
        return Err(Error::invalid(
            "convolution window larger than padded input",
        ));
    }
    let geom = ConvGeom {
        batch,
        c,
        h,
        w: wd,
        k,
        stride,
        padding,
    };
    let (ho, wo) = geom.out_hw();
    let cols = x.contiguous()?.apply_op1(Im2Col(geom))?;
    let out = w.reshape((o, c * k * k))?.matmul(&cols)?;
    let out = out.broadcast_add(&b.reshape((o, 1))?)?;
    Ok(out
        .reshape((o, batch, ho, wo))?
        .transpose(0, 1)?
        .contiguous()?)
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.padding - self.k) / self.stride + 1,
            (self.w + 2 * self.padding - self.k) / self.stride + 1,
        )
    }

    /// Output columns `[lo, hi)` whose tap at offset `j` lands inside `[0, len)`.
    fn valid_range(&self, j: usize, len: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let p = self.padding;
        let lo = if p > j { (p - j).div_ceil(s) } else { 0 };
        let hi = if len + p > j {
            ((len - 1 + p - j) / s + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Walk the row segments shared by im2col and col2im. For each run,
    /// `f(col_start, in_start, count)`; input elements are `stride` apart.
    /// Columns are laid out `[C*K*K, B*Ho*Wo]`.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ho, wo) = self.out_hw();
        let n = self.batch * ho * wo;
        for ch in 0..self.c {
            for i in 0..self.k {
                let (ylo, yhi) = self.valid_range(i, self.h, ho);
                for j in 0..self.k {
                    let (xlo, xhi) = self.valid_range(j, self.w, wo);
                    if xlo >= xhi {
                        continue;
                    }
                    let row = (ch * self.k + i) * self.k + j;
                    for bi in 0..self.batch {
                        let plane = (bi * self.c + ch) * self.h * self.w;
                        for oy in ylo..yhi {
                            let iy = oy * self.stride + i - self.padding;
                            let ix = xlo * self.stride + j - self.padding;
                            f(
                                row * n + (bi * ho + oy) * wo + xlo,
                                plane + iy * self.w + ix,
                                xhi - xlo,
                            );
                        }
                    }
                }
            }
        }
    }

    fn cols_len(&self) -> usize {
        let (ho, wo) = self.out_hw();
        self.c * self.k * self.k * self.batch * ho * wo
    }
}

fn contiguous_slice<'a, T>(
    data: &'a [T],
    layout: &Layout,
    op: &str,
) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => candle_core::bail!("{op}: input must be contiguous"),
    }
}

fn im2col<T: Copy + Default>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::default(); g.cols_len()];
    let s = g.stride;
    g.for_each_run(|col, inp, len| {
        let dst = &mut out[col..col + len];
        if s == 1 {
            dst.copy_from_slice(&x[inp..inp + len]);
        } else {
            for (d, v) in dst.iter_mut().zip(x[inp..].iter().step_by(s)) {
                *d = *v;
            }
        }
    });
    out
}

fn col2im<T: Copy + Default + std::ops::AddAssign>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::default(); g.batch * g.c * g.h * g.w];
    let s = g.stride;
    g.for_each_run(|col, inp, len| {
        let src = &cols[col..col + len];
        if s == 1 {
            for (d, v) in out[inp..inp + len].iter_mut().zip(src) {
                *d += *v;
            }
        } else {
            for (d, v) in out[inp..].iter_mut().step_by(s).zip(src) {
                *d += *v;
            }
        }
    });
    out
}

struct Im2Col(ConvGeom);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let (ho, wo) = g.out_hw();
        let shape = Shape::from((g.c * g.k * g.k, g.batch * ho * wo));
        let out = match storage {
            CpuStorage::F32(v) => {
                CpuStorage::F32(im2col(contiguous_slice(v, layout, "im2col")?, g))
            }
            CpuStorage::F64(v) => {
                CpuStorage::F64(im2col(contiguous_slice(v, layout, "im2col")?, g))
            }
            _ => candle_core::bail!("im2col: only f32 and f64 are supported"),
        };
        Ok((out, shape))
    }

    fn bwd(
        &self,
        _arg: &Tensor,
        _res: &Tensor,
        grad_res: &Tensor,
    ) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(
            grad_res.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?,
        ))
    }
}

struct Col2Im(ConvGeom);

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(
        &self,
        storage: &CpuStorage,
        layout: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let shape = Shape::from((g.batch, g.c, g.h, g.w));
        let out = match storage {
            CpuStorage::F32(v) => {
                CpuStorage::F32(col2im(contiguous_slice(v, layout, "col2im")?, g))
            }
            CpuStorage::F64(v) => {
                CpuStorage::F64(col2im(contiguous_slice(v, layout, "col2im")?, g))
            }
            _ => candle_core::bail!("col2im: only f32 and f64 are supported"),
        };
        Ok((out, shape))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_f: usize,
        out_f: usize,
        gain: f64,
    ) -> Result<Self> {
        pb.push(name);
        let weight = pb.normal("weight", &[in_f, out_f], gain / (in_f as f64).sqrt());
        let bias = pb.zeros("bias", &[out_f]);
        pb.pop();
        Ok(Self {
            weight: weight?,
            bias: bias?,
        })
    }

    /// `x: [B, in] -> [B, out]`
    pub fn forward(&self, x: &Tensor, frozen: bool) -> Result<Tensor> {
        let y = x.matmul(&read(&self.weight, frozen))?;
        Ok(y.broadcast_add(&read(&self.bias, frozen))?)
    }
}

/// Per-sample, per-channel normalization over the spatial dimensions, no affine.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    const EPS: f64 = 1e-5;
    let (b, c, h, w) = x.dims4()?;
    let flat = x.reshape((b, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let out = centered.broadcast_div(&(var + EPS)?.sqrt()?)?;
    Ok(out.reshape((b, c, h, w))?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Nearest-neighbour 2x upsampling, built from a broadcast so its gradient
/// is a plain sum.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    Ok(x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, 2, w, 2))?
        .contiguous()?
        .reshape((b, c, 2 * h, 2 * w))?)
}

/// Tile a `[B, L]` code over an `h x w` grid: `[B, L, h, w]`.
pub fn tile_code(z: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (b, l) = z.dims2()?;
    Ok(z.reshape((b, l, 1, 1))?
        .broadcast_as((b, l, h, w))?
        .contiguous()?)
}
