//! Image planes, channel stacks and square boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Result, UalError};

/// A single real-valued image plane stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(UalError::Dimension(format!(
                "grid {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Grid {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.shape() == other.shape()
    }

    pub fn transpose(&self) -> Grid {
        Grid::from_fn(self.width, self.height, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// Threshold at 0.5 into a 0/1 plane.
    pub fn binarize(&self) -> Grid {
        self.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Stack a single plane as a one-channel feature stack.
    pub fn to_stack(&self) -> FeatureStack {
        FeatureStack {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }
}

/// C×H×W activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureStack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureStack {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(UalError::Dimension(format!(
                "stack {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(FeatureStack {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_grid(&self, c: usize) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenate along the channel axis.
    pub fn concat(parts: &[&FeatureStack]) -> Result<FeatureStack> {
        let first = parts
            .first()
            .ok_or_else(|| UalError::Dimension("concat of zero stacks".into()))?;
        let (h, w) = (first.height, first.width);
        if let Some(bad) = parts.iter().find(|p| p.height != h || p.width != w) {
            return Err(UalError::Dimension(format!(
                "concat spatial mismatch: {h}x{w} vs {}x{}",
                bad.height, bad.width
            )));
        }
        let channels = parts.iter().map(|p| p.channels).sum();
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(FeatureStack {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Split a channel-concatenated gradient back into pieces of the given channel counts.
    pub fn split(&self, channel_counts: &[usize]) -> Vec<FeatureStack> {
        let n = self.plane_len();
        let mut start = 0;
        channel_counts
            .iter()
            .map(|&c| {
                let part = FeatureStack {
                    channels: c,
                    height: self.height,
                    width: self.width,
                    data: self.data[start * n..(start + c) * n].to_vec(),
                };
                start += c;
                part
            })
            .collect()
    }

    pub fn add_assign(&mut self, other: &FeatureStack) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }
}

/// Square box in pixel-index coordinates: centre (`cx` column, `cy` row) and side length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxTuple {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
}

/// Integer raster window of a box: top-left corner and side, possibly extending past the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelWindow {
    pub row0: i64,
    pub col0: i64,
    pub side: usize,
}

impl PixelWindow {
    pub fn contains(&self, row: i64, col: i64) -> bool {
        let s = self.side as i64;
        row >= self.row0 && row < self.row0 + s && col >= self.col0 && col < self.col0 + s
    }
}

/// Round to nearest with ties toward +inf.
#[inline]
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

impl BoxTuple {
    pub fn new(cx: f64, cy: f64, side: f64) -> Result<Self> {
        if !(side > 0.0) || !cx.is_finite() || !cy.is_finite() || !side.is_finite() {
            return Err(UalError::Domain(format!(
                "box needs finite centre and positive side, got ({cx}, {cy}, {side})"
            )));
        }
        Ok(BoxTuple { cx, cy, side })
    }

    /// Smallest enclosing square of the nonzero pixels of `mask`, or `None` for an empty mask.
    pub fn enclosing(mask: &Grid) -> Option<BoxTuple> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for r in 0..mask.height {
            for c in 0..mask.width {
                if mask.get(r, c) != 0.0 {
                    bounds = Some(match bounds {
                        None => (r, r, c, c),
                        Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
                    });
                }
            }
        }
        bounds.map(|(r0, r1, c0, c1)| {
            let extent = (r1 - r0 + 1).max(c1 - c0 + 1);
            BoxTuple {
                cx: (c0 + c1) as f64 / 2.0,
                cy: (r0 + r1) as f64 / 2.0,
                side: extent as f64,
            }
        })
    }

    /// Rasterized window: side and centre rounded half-up, window starts `side / 2` before the centre.
    pub fn pixel_window(&self) -> PixelWindow {
        let side = round_half_up(self.side).max(1) as usize;
        let half = (side / 2) as i64;
        PixelWindow {
            row0: round_half_up(self.cy) - half,
            col0: round_half_up(self.cx) - half,
            side,
        }
    }

    /// Continuous extent `[x0, x1) x [y0, y1)` treating pixels as unit cells centred on their index.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        let h = self.side / 2.0;
        (
            self.cx - h + 0.5,
            self.cy - h + 0.5,
            self.cx + h + 0.5,
            self.cy + h + 0.5,
        )
    }

    /// Shrink and shift so the box lies inside a `height`×`width` image.
    pub fn clamped(&self, height: usize, width: usize) -> BoxTuple {
        let limit = height.min(width) as f64;
        let side = self.side.clamp(1.0, limit);
        let h = side / 2.0;
        let cx = self.cx.clamp(h - 0.5, width as f64 - h - 0.5);
        let cy = self.cy.clamp(h - 0.5, height as f64 - h - 0.5);
        BoxTuple { cx, cy, side }
    }
}
