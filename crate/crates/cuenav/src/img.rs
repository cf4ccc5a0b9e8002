//! In-memory RGB images and binary masks.
//!
//! Images are channel-last `[H, W, 3]` f32 in `[0, 1]`; masks are `[H, W]`
//! with values 0/1. Conversion to the network's `[C, H, W]` tensor layout
//! happens at the training boundary.

use std::path::Path;

use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub h: usize,
    pub w: usize,
    data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(h: usize, w: usize) -> Self {
        ImageBuf {
            h,
            w,
            data: vec![0.0; h * w * 3],
        }
    }

    pub fn white(h: usize, w: usize) -> Self {
        ImageBuf {
            h,
            w,
            data: vec![1.0; h * w * 3],
        }
    }

    pub fn from_data(h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), h * w * 3);
        ImageBuf { h, w, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> [f32; 3] {
        let i = (r * self.w + c) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, px: [f32; 3]) {
        let i = (r * self.w + c) * 3;
        self.data[i] = px[0];
        self.data[i + 1] = px[1];
        self.data[i + 2] = px[2];
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Mean over all pixels and channels.
    pub fn mean(&self) -> f32 {
        let s: f64 = self.data.iter().map(|&v| v as f64).sum();
        (s / self.data.len() as f64) as f32
    }

    /// `[1, 3, H, W]` tensor for the network.
    pub fn to_chw_tensor(&self) -> Tensor<f32> {
        let hw = self.h * self.w;
        let mut out = vec![0.0f32; 3 * hw];
        for p in 0..hw {
            out[p] = self.data[p * 3];
            out[hw + p] = self.data[p * 3 + 1];
            out[2 * hw + p] = self.data[p * 3 + 2];
        }
        Tensor::from_vec(&[1, 3, self.h, self.w], out).unwrap()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut img = image::RgbImage::new(self.w as u32, self.h as u32);
        for r in 0..self.h {
            for c in 0..self.w {
                let px = self.get(r, c);
                img.put_pixel(
                    c as u32,
                    r as u32,
                    image::Rgb([to_u8(px[0]), to_u8(px[1]), to_u8(px[2])]),
                );
            }
        }
        img.save(path)
            .map_err(|e| TensorError::Invalid {
                op: "save_png",
                msg: format!("{}: {e}", path.display()),
            })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| TensorError::Invalid {
                op: "load_png",
                msg: format!("{}: {e}", path.display()),
            })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = ImageBuf::new(h, w);
        for r in 0..h {
            for c in 0..w {
                let px = img.get_pixel(c as u32, r as u32);
                out.set(r, c, [
                    px[0] as f32 / 255.0,
                    px[1] as f32 / 255.0,
                    px[2] as f32 / 255.0,
                ]);
            }
        }
        Ok(out)
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskBuf {
    pub h: usize,
    pub w: usize,
    data: Vec<u8>,
}

impl MaskBuf {
    pub fn new(h: usize, w: usize) -> Self {
        MaskBuf {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.w + c] != 0
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.w + c] = v as u8;
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// `[1, 1, H, W]` float tensor (0.0 / 1.0).
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data: Vec<f32> = self.data.iter().map(|&v| v as f32).collect();
        Tensor::from_vec(&[1, 1, self.h, self.w], data).unwrap()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut img = image::GrayImage::new(self.w as u32, self.h as u32);
        for r in 0..self.h {
            for c in 0..self.w {
                img.put_pixel(c as u32, r as u32, image::Luma([if self.get(r, c) { 255 } else { 0 }]));
            }
        }
        img.save(path)
            .map_err(|e| TensorError::Invalid {
                op: "save_png",
                msg: format!("{}: {e}", path.display()),
            })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| TensorError::Invalid {
                op: "load_png",
                msg: format!("{}: {e}", path.display()),
            })?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = MaskBuf::new(h, w);
        for r in 0..h {
            for c in 0..w {
                out.set(r, c, img.get_pixel(c as u32, r as u32)[0] > 127);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chw_conversion_orders_channels() {
        let mut img = ImageBuf::new(2, 2);
        img.set(0, 0, [0.1, 0.5, 0.9]);
        let t = img.to_chw_tensor();
        assert_eq!(t.shape(), &[1, 3, 2, 2]);
        assert_eq!(t.data()[0], 0.1);
        assert_eq!(t.data()[4], 0.5);
        assert_eq!(t.data()[8], 0.9);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = ImageBuf::white(4, 5);
        img.set(1, 2, [0.0, 0.5, 1.0]);
        let p = dir.path().join("x.png");
        img.save_png(&p).unwrap();
        let back = ImageBuf::load_png(&p).unwrap();
        assert_eq!(back.h, 4);
        assert_eq!(back.w, 5);
        // 8-bit quantization: within 1/255.
        let px = back.get(1, 2);
        assert!((px[1] - 0.5).abs() <= 1.0 / 255.0 + 1e-6);
        assert_eq!(back.get(0, 0), [1.0, 1.0, 1.0]);
    }
}
