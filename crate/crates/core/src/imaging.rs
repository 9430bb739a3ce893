//! Image tensors in `[C, H, W]` layout with values in `[-1, 1]`, and PNG I/O.

use std::path::Path;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: [usize; 3],
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(shape: [usize; 3], data: Vec<f32>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "image data has {} values, shape {:?} needs {expected}",
                data.len(),
                shape
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("degenerate image shape {shape:?}")));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: [usize; 3], value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.shape[1] + y) * self.shape[2] + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let w = self.shape[2];
        let h = self.shape[1];
        self.data[(c * h + y) * w + x] = v;
    }

    /// One channel as a contiguous slice.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.shape[1] * self.shape[2];
        &self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    /// Mirror along the width axis.
    pub fn flip_horizontal(&self) -> Self {
        let [c, h, w] = self.shape;
        let mut out = self.clone();
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out.set(ci, y, x, self.get(ci, y, w - 1 - x));
                }
            }
        }
        out
    }

    pub fn mean_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// `[1, C, H, W]` tensor of the requested dtype.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(
            &self.data,
            (1, self.shape[0], self.shape[1], self.shape[2]),
            device,
        )?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Stack into a `[B, C, H, W]` batch. All images must share a shape.
    pub fn batch_to_tensor(
        images: &[&ImageTensor],
        dtype: DType,
        device: &Device,
    ) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("empty image batch"))?;
        let mut data = Vec::with_capacity(first.data.len() * images.len());
        for im in images {
            first.check_same_shape(im)?;
            data.extend_from_slice(&im.data);
        }
        let [c, h, w] = first.shape;
        let t = Tensor::from_vec(data, (images.len(), c, h, w), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Split a `[B, C, H, W]` tensor back into images.
    pub fn from_batch_tensor(t: &Tensor) -> Result<Vec<ImageTensor>> {
        let (b, c, h, w) = t.dims4()?;
        let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let n = c * h * w;
        (0..b)
            .map(|i| ImageTensor::new([c, h, w], flat[i * n..(i + 1) * n].to_vec()))
            .collect()
    }

    /// Linear map `[-1, 1] -> [0, 255]` with rounding; 1-channel images become gray.
    pub fn to_rgb8(&self) -> Result<::image::RgbImage> {
        let [c, h, w] = self.shape;
        if c != 1 && c != 3 {
            return Err(Error::invalid(format!("cannot encode {c}-channel image")));
        }
        let mut img = ::image::RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let mut px = [0u8; 3];
                for (k, p) in px.iter_mut().enumerate() {
                    let v = self.get(if c == 1 { 0 } else { k }, y, x);
                    *p = to_byte(v);
                }
                img.put_pixel(x as u32, y as u32, ::image::Rgb(px));
            }
        }
        Ok(img)
    }

    pub fn from_rgb8(img: &::image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = ImageTensor::filled([3, h, w], 0.0);
        for (x, y, px) in img.enumerate_pixels() {
            for k in 0..3 {
                out.set(k, y as usize, x as usize, from_byte(px.0[k]));
            }
        }
        out
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()?
            .save_with_format(path, ::image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = ::image::open(path)?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }
}

pub fn to_byte(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

pub fn from_byte(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

/// Tile images row-major into one contact sheet with a 1-pixel black gutter.
pub fn contact_sheet(images: &[ImageTensor], columns: usize) -> Result<ImageTensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("contact sheet needs at least one image"))?;
    let [c, h, w] = first.shape();
    let cols = columns.max(1).min(images.len());
    let rows = images.len().div_ceil(cols);
    let (sh, sw) = (rows * (h + 1) - 1, cols * (w + 1) - 1);
    let mut sheet = ImageTensor::filled([c, sh, sw], -1.0);
    for (i, im) in images.iter().enumerate() {
        first.check_same_shape(im)?;
        let (oy, ox) = ((i / cols) * (h + 1), (i % cols) * (w + 1));
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    sheet.set(ci, oy + y, ox + x, im.get(ci, y, x));
                }
            }
        }
    }
    Ok(sheet)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping_endpoints() {
        assert_eq!(to_byte(-1.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(from_byte(0), -1.0);
        assert_eq!(from_byte(255), 1.0);
        for b in 0..=255u8 {
            assert_eq!(to_byte(from_byte(b)), b);
        }
    }

    #[test]
    fn png_round_trip_is_exact_on_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..3 * 5 * 4)
            .map(|i| from_byte((i * 17 % 256) as u8))
            .collect();
        let im = ImageTensor::new([3, 5, 4], data).unwrap();
        let p = dir.path().join("a.png");
        im.save_png(&p).unwrap();
        assert_eq!(ImageTensor::load_png(&p).unwrap(), im);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(ImageTensor::new([3, 2, 2], vec![0.0; 11]).is_err());
    }

    #[test]
    fn batch_tensor_round_trip() {
        let a = ImageTensor::filled([3, 4, 4], 0.25);
        let b = ImageTensor::filled([3, 4, 4], -0.5);
        let t = ImageTensor::batch_to_tensor(&[&a, &b], DType::F32, &Device::Cpu).unwrap();
        let back = ImageTensor::from_batch_tensor(&t).unwrap();
        assert_eq!(back, vec![a, b]);
    }
}
