//! Float images used by the optimizers: bilinear sampling with analytic
//! gradients, and metric depth maps.

use image::RgbImage;

/// Row-major multi-channel `f32` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Rec. 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

impl FloatImage {
    pub fn new(width: u32, height: u32, channels: usize) -> Self {
        FloatImage {
            width,
            height,
            channels,
            data: vec![0.0; width as usize * height as usize * channels],
        }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        FloatImage {
            width: img.width(),
            height: img.height(),
            channels: 3,
            data,
        }
    }

    pub fn luminance(img: &RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| {
                ((LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64) / 255.0)
                    as f32
            })
            .collect();
        FloatImage {
            width: img.width(),
            height: img.height(),
            channels: 1,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: usize) -> f32 {
        self.data[(y as usize * self.width as usize + x as usize) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: usize, v: f32) {
        let i = (y as usize * self.width as usize + x as usize) * self.channels + c;
        self.data[i] = v;
    }

    /// Bilinear sample at `(u, v)` (pixel centers at integers), clamped at the
    /// border. Writes one value per channel.
    pub fn sample(&self, u: f64, v: f64, out: &mut [f64]) {
        let (x0, y0, x1, y1, fx, fy) = self.cell(u, v);
        for c in 0..self.channels {
            let a = self.get(x0, y0, c) as f64;
            let b = self.get(x1, y0, c) as f64;
            let d = self.get(x0, y1, c) as f64;
            let e = self.get(x1, y1, c) as f64;
            out[c] = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * d + fx * e);
        }
    }

    /// Bilinear sample plus its exact partial derivatives in `u` and `v`.
    /// Outside the image the clamped sample is constant, so the gradient is 0.
    pub fn sample_grad(&self, u: f64, v: f64, val: &mut [f64], du: &mut [f64], dv: &mut [f64]) {
        let (x0, y0, x1, y1, fx, fy) = self.cell(u, v);
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        let gu = if u < 0.0 || u > max_u { 0.0 } else { 1.0 };
        let gv = if v < 0.0 || v > max_v { 0.0 } else { 1.0 };
        for c in 0..self.channels {
            let a = self.get(x0, y0, c) as f64;
            let b = self.get(x1, y0, c) as f64;
            let d = self.get(x0, y1, c) as f64;
            let e = self.get(x1, y1, c) as f64;
            val[c] = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * d + fx * e);
            du[c] = gu * ((1.0 - fy) * (b - a) + fy * (e - d));
            dv[c] = gv * (((1.0 - fx) * d + fx * e) - ((1.0 - fx) * a + fx * b));
        }
    }

    #[inline]
    fn cell(&self, u: f64, v: f64) -> (u32, u32, u32, u32, f64, f64) {
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        let u = u.clamp(0.0, max_u);
        let v = v.clamp(0.0, max_v);
        let mut x0 = u.floor();
        let mut y0 = v.floor();
        if x0 >= max_u && self.width > 1 {
            x0 = max_u - 1.0;
        }
        if y0 >= max_v && self.height > 1 {
            y0 = max_v - 1.0;
        }
        let x0i = x0 as u32;
        let y0i = y0 as u32;
        let x1 = (x0i + 1).min(self.width - 1);
        let y1 = (y0i + 1).min(self.height - 1);
        (x0i, y0i, x1, y1, u - x0, v - y0)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        assert_eq!(self.channels, 3);
        let raw = self
            .data
            .iter()
            .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width, self.height, raw).expect("buffer size")
    }
}

/// Metric depth map; 0 marks a missing measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32) -> Self {
        DepthImage {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn from_raw_u16(width: u32, height: u32, raw: &[u16], depth_scale: f64) -> Self {
        let data = raw
            .iter()
            .map(|&d| (d as f64 / depth_scale) as f32)
            .collect();
        DepthImage {
            width,
            height,
            data,
        }
    }

    pub fn to_raw_u16(&self, depth_scale: f64) -> Vec<u16> {
        self.data
            .iter()
            .map(|&d| (d as f64 * depth_scale).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect()
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Nearest-neighbor depth lookup; `None` outside the image or on a hole.
    #[inline]
    pub fn nearest(&self, u: f64, v: f64) -> Option<f64> {
        let x = u.round();
        let y = v.round();
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        let d = self.get(x as u32, y as u32);
        (d > 0.0).then_some(d as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> FloatImage {
        let mut img = FloatImage::new(5, 4, 1);
        for y in 0..4 {
            for x in 0..5 {
                img.set(x, y, 0, (0.1 * x as f64 + 0.05 * (y * y) as f64) as f32);
            }
        }
        img
    }

    #[test]
    fn bilinear_hits_pixels() {
        let img = ramp();
        let mut v = [0.0];
        img.sample(3.0, 2.0, &mut v);
        assert!((v[0] - img.get(3, 2, 0) as f64).abs() < 1e-7);
        img.sample(4.0, 3.0, &mut v);
        assert!((v[0] - img.get(4, 3, 0) as f64).abs() < 1e-7);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let img = ramp();
        let (u, v) = (1.37, 2.21);
        let (mut val, mut du, mut dv) = ([0.0], [0.0], [0.0]);
        img.sample_grad(u, v, &mut val, &mut du, &mut dv);
        let h = 1e-6;
        let (mut a, mut b) = ([0.0], [0.0]);
        img.sample(u + h, v, &mut a);
        img.sample(u - h, v, &mut b);
        assert!(((a[0] - b[0]) / (2.0 * h) - du[0]).abs() < 1e-6);
        img.sample(u, v + h, &mut a);
        img.sample(u, v - h, &mut b);
        assert!(((a[0] - b[0]) / (2.0 * h) - dv[0]).abs() < 1e-6);
    }

    #[test]
    fn depth_roundtrip_and_holes() {
        let d = DepthImage::from_raw_u16(2, 1, &[0, 10000], 5000.0);
        assert_eq!(d.nearest(0.0, 0.0), None);
        assert_eq!(d.nearest(1.2, 0.3), Some(2.0));
        assert_eq!(d.nearest(-0.6, 0.0), None);
        assert_eq!(d.to_raw_u16(5000.0), vec![0, 10000]);
    }
}
