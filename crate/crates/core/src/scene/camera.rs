use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::PixelRemap;

/// 2x2 color filter layout; `Mono` means a single-channel sensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BayerPattern {
    #[default]
    Mono,
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    /// Channel index (0 = R, 1 = G, 2 = B) seen by the pixel at `(x, y)`.
    #[inline]
    pub fn channel_at(self, x: usize, y: usize) -> usize {
        // cells in (row, column) order within the 2x2 tile
        let cells: [[usize; 2]; 2] = match self {
            BayerPattern::Mono => return 0,
            BayerPattern::Rggb => [[0, 1], [1, 2]],
            BayerPattern::Bggr => [[2, 1], [1, 0]],
            BayerPattern::Grbg => [[1, 0], [2, 1]],
            BayerPattern::Gbrg => [[1, 2], [0, 1]],
        };
        cells[y % 2][x % 2]
    }

    pub fn is_mono(self) -> bool {
        self == BayerPattern::Mono
    }
}

/// Pinhole camera with radial-tangential distortion. Pixel centers sit at
/// integer coordinates; the camera looks down +z with +y pointing down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// `[k1, k2, p1, p2]`.
    #[serde(default)]
    pub distortion: [f64; 4],
    #[serde(default)]
    pub bayer: BayerPattern,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            distortion: [0.0; 4],
            bayer: BayerPattern::Mono,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Square-pixel camera with the principal point at the image center and a
    /// horizontal field of view of `fov_x` radians.
    pub fn with_fov(width: usize, height: usize, fov_x: f64) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn with_bayer(mut self, bayer: BayerPattern) -> Self {
        self.bayer = bayer;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Invalid(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("camera resolution must be non-zero".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::Invalid(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cam: Camera =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cam.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cam)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        crate::image::write_atomic(path.as_ref(), text.as_bytes())
    }

    fn distort_normalized(&self, x: f64, y: f64) -> (f64, f64) {
        let [k1, k2, p1, p2] = self.distortion;
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
        (
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    /// Raw (distorted) pixel to ideal pinhole pixel coordinates.
    pub fn undistort_point(&self, u: f64, v: f64) -> (f64, f64) {
        let xd = (u - self.cx) / self.fx;
        let yd = (v - self.cy) / self.fy;
        let [k1, k2, p1, p2] = self.distortion;
        let (mut x, mut y) = (xd, yd);
        for _ in 0..20 {
            let r2 = x * x + y * y;
            let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
            let dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
            let dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
            x = (xd - dx) / radial;
            y = (yd - dy) / radial;
        }
        (x * self.fx + self.cx, y * self.fy + self.cy)
    }

    /// Ideal pinhole pixel to raw (distorted) pixel coordinates.
    pub fn distort_point(&self, u: f64, v: f64) -> (f64, f64) {
        let (x, y) = self.distort_normalized((u - self.cx) / self.fx, (v - self.cy) / self.fy);
        (x * self.fx + self.cx, y * self.fy + self.cy)
    }

    /// Nearest-pixel undistortion table for event accumulation.
    pub fn undistort_map(&self) -> PixelRemap {
        let targets = (0..self.height)
            .flat_map(|v| (0..self.width).map(move |u| (u, v)))
            .map(|(u, v)| {
                let (x, y) = self.undistort_point(u as f64, v as f64);
                let (xi, yi) = (x.round(), y.round());
                if xi >= 0.0 && yi >= 0.0 && xi < self.width as f64 && yi < self.height as f64 {
                    Some((xi as u16, yi as u16))
                } else {
                    None
                }
            })
            .collect();
        PixelRemap {
            width: self.width as u32,
            height: self.height as u32,
            targets,
        }
    }
}
