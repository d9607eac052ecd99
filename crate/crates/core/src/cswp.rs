//! Coordinate sharing with padding.
//!
//! A square window centred on the box is cut from a mask (or probability map)
//! and placed at the centre of a 64x64 canvas whose remaining cells hold the
//! sentinel 2. Segmentation and detection thereby share one discriminator input.
//!
//! Hard mode crops the rounded window exactly. Soft mode samples the map
//! bilinearly around the continuous box centre and blends a smooth window
//! weight `w` between the sample and the sentinel, `w * p + (1 - w) * 2`, so the
//! canvas is differentiable in the box centre and side as well as the map.

use std::str::FromStr;

use crate::error::{Result, UalError};
use crate::grid::{BoxTuple, Grid, PixelWindow};
use crate::nn::layers::sigmoid;

pub const CANVAS: usize = 64;
pub const PAD_VALUE: f64 = 2.0;
/// Slope of the soft window edge per pixel.
pub const SOFT_SHARPNESS: f64 = 6.0;
const CENTRE: f64 = (CANVAS as f64 - 1.0) / 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CswpMode {
    Hard,
    #[default]
    Soft,
}

impl CswpMode {
    pub fn name(self) -> &'static str {
        match self {
            CswpMode::Hard => "hard",
            CswpMode::Soft => "soft",
        }
    }
}

impl FromStr for CswpMode {
    type Err = UalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(CswpMode::Hard),
            "soft" => Ok(CswpMode::Soft),
            other => Err(UalError::Config(format!("unknown cswp mode {other:?} (expected hard|soft)"))),
        }
    }
}

/// Canvas of a hard integration together with the window it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationCanvas {
    /// 64x64, values in `{0, 1, 2}` for a binary source.
    pub values: Grid,
    /// The `s x s` crop before padding; zero where the window leaves the image.
    pub window: Grid,
    pub source_center: (f64, f64),
    pub source_side: f64,
    /// Image coordinates `(row, col)` of the window's top-left cell.
    pub origin: (i64, i64),
}

impl IntegrationCanvas {
    pub fn side(&self) -> usize {
        self.window.height
    }

    /// Canvas offset of the window's top-left cell.
    pub fn offset(&self) -> usize {
        (CANVAS - self.side()) / 2
    }

    /// Image coordinates of the window cells with value `>= 0.5` that lie inside an `height`×`width` image.
    pub fn region(&self, height: usize, width: usize) -> Vec<(usize, usize)> {
        let s = self.side();
        let mut out = Vec::new();
        for i in 0..s {
            for j in 0..s {
                let (r, c) = (self.origin.0 + i as i64, self.origin.1 + j as i64);
                if self.window.get(i, j) >= 0.5 && r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width {
                    out.push((r as usize, c as usize));
                }
            }
        }
        out
    }
}

/// Rounded window side, clamped to `1..=64`; larger boxes are logged and clamped.
pub fn canvas_side(side: f64) -> usize {
    let s = crate::grid::round_half_up(side);
    if s > CANVAS as i64 {
        log::warn!("box side {side:.2} exceeds the {CANVAS}px canvas; clamping");
    }
    s.clamp(1, CANVAS as i64) as usize
}

fn window_of(bbox: &BoxTuple) -> PixelWindow {
    let mut w = BoxTuple {
        side: canvas_side(bbox.side) as f64,
        ..*bbox
    }
    .pixel_window();
    w.side = w.side.min(CANVAS);
    w
}

fn value_at(g: &Grid, r: i64, c: i64) -> f64 {
    if r < 0 || c < 0 || r >= g.height as i64 || c >= g.width as i64 {
        0.0
    } else {
        g.get(r as usize, c as usize)
    }
}

fn hard_canvas(values: &Grid, bbox: &BoxTuple) -> IntegrationCanvas {
    let win = window_of(bbox);
    let s = win.side;
    let window = Grid::from_fn(s, s, |i, j| value_at(values, win.row0 + i as i64, win.col0 + j as i64));
    let o = (CANVAS - s) / 2;
    let mut canvas = Grid::filled(CANVAS, CANVAS, PAD_VALUE);
    for i in 0..s {
        for j in 0..s {
            canvas.set(o + i, o + j, window.get(i, j));
        }
    }
    IntegrationCanvas {
        values: canvas,
        window,
        source_center: (bbox.cx, bbox.cy),
        source_side: bbox.side,
        origin: (win.row0, win.col0),
    }
}

/// Integrate a binary mask with a box by exact cropping.
pub fn integrate(mask: &Grid, bbox: &BoxTuple) -> Result<IntegrationCanvas> {
    if !mask.is_binary() {
        return Err(UalError::Domain("integration mask must contain only 0 and 1".into()));
    }
    Ok(hard_canvas(mask, bbox))
}

fn check_probs(probs: &Grid) -> Result<()> {
    if probs.data.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(UalError::Domain("integration probabilities must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Hard crop of a probability map; also the radiomics region source in both modes.
pub fn integrate_probs(probs: &Grid, bbox: &BoxTuple) -> Result<IntegrationCanvas> {
    check_probs(probs)?;
    Ok(hard_canvas(probs, bbox))
}

/// Soft-window parameters shared by the forward and backward passes.
struct SoftWindow {
    /// Whether `side` was clamped, which zeroes its gradient.
    clamped: bool,
    /// Per-row/column window factor and its derivative w.r.t. the side.
    a: [f64; CANVAS],
    da: [f64; CANVAS],
}

impl SoftWindow {
    fn new(side: f64) -> Self {
        let s = side.clamp(1.0, CANVAS as f64);
        let mut a = [0.0; CANVAS];
        let mut da = [0.0; CANVAS];
        for k in 0..CANVAS {
            let v = sigmoid(SOFT_SHARPNESS * (s / 2.0 - (k as f64 - CENTRE).abs()));
            a[k] = v;
            da[k] = 0.5 * SOFT_SHARPNESS * v * (1.0 - v);
        }
        SoftWindow {
            clamped: s != side,
            a,
            da,
        }
    }
}

/// Bilinear sample with zeros outside the image; returns the value and its `(d/dy, d/dx)`.
fn bilinear(g: &Grid, y: f64, x: f64) -> (f64, f64, f64) {
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (r, c) = (y0 as i64, x0 as i64);
    let p00 = value_at(g, r, c);
    let p01 = value_at(g, r, c + 1);
    let p10 = value_at(g, r + 1, c);
    let p11 = value_at(g, r + 1, c + 1);
    let v = (1.0 - fy) * ((1.0 - fx) * p00 + fx * p01) + fy * ((1.0 - fx) * p10 + fx * p11);
    let dy = (1.0 - fx) * (p10 - p00) + fx * (p11 - p01);
    let dx = (1.0 - fy) * (p01 - p00) + fy * (p11 - p10);
    (v, dy, dx)
}

fn source_coords(bbox: &BoxTuple, r: usize, c: usize) -> (f64, f64) {
    (bbox.cy + (r as f64 - CENTRE), bbox.cx + (c as f64 - CENTRE))
}

/// Integrate a probability map with a box in the given mode.
pub fn integrate_soft(probs: &Grid, bbox: &BoxTuple, mode: CswpMode) -> Result<Grid> {
    check_probs(probs)?;
    Ok(match mode {
        CswpMode::Hard => hard_canvas(probs, bbox).values,
        CswpMode::Soft => {
            let win = SoftWindow::new(bbox.side);
            Grid::from_fn(CANVAS, CANVAS, |r, c| {
                let (y, x) = source_coords(bbox, r, c);
                let p = bilinear(probs, y, x).0;
                let w = win.a[r] * win.a[c];
                w * p + (1.0 - w) * PAD_VALUE
            })
        }
    })
}

/// Gradients of `sum(d_canvas * canvas)` w.r.t. the map and the box `(cx, cy, side)`.
///
/// Hard mode passes no gradient to the box.
pub fn integrate_soft_backward(probs: &Grid, bbox: &BoxTuple, mode: CswpMode, d_canvas: &Grid) -> (Grid, [f64; 3]) {
    let mut d_probs = Grid::zeros(probs.height, probs.width);
    let mut d_box = [0.0; 3];
    let mut scatter = |r: i64, c: i64, v: f64| {
        if r >= 0 && c >= 0 && (r as usize) < probs.height && (c as usize) < probs.width {
            let i = r as usize * probs.width + c as usize;
            d_probs.data[i] += v;
        }
    };
    match mode {
        CswpMode::Hard => {
            let win = window_of(bbox);
            let o = (CANVAS - win.side) / 2;
            for i in 0..win.side {
                for j in 0..win.side {
                    scatter(win.row0 + i as i64, win.col0 + j as i64, d_canvas.get(o + i, o + j));
                }
            }
        }
        CswpMode::Soft => {
            let win = SoftWindow::new(bbox.side);
            for r in 0..CANVAS {
                for c in 0..CANVAS {
                    let g = d_canvas.get(r, c);
                    if g == 0.0 {
                        continue;
                    }
                    let (y, x) = source_coords(bbox, r, c);
                    let (p, dpy, dpx) = bilinear(probs, y, x);
                    let w = win.a[r] * win.a[c];
                    d_box[0] += g * w * dpx;
                    d_box[1] += g * w * dpy;
                    if !win.clamped {
                        let dw = win.da[r] * win.a[c] + win.a[r] * win.da[c];
                        d_box[2] += g * (p - PAD_VALUE) * dw;
                    }
                    let (y0, x0) = (y.floor(), x.floor());
                    let (fy, fx) = (y - y0, x - x0);
                    let (ri, ci) = (y0 as i64, x0 as i64);
                    let gw = g * w;
                    scatter(ri, ci, gw * (1.0 - fy) * (1.0 - fx));
                    scatter(ri, ci + 1, gw * (1.0 - fy) * fx);
                    scatter(ri + 1, ci, gw * fy * (1.0 - fx));
                    scatter(ri + 1, ci + 1, gw * fy * fx);
                }
            }
        }
    }
    (d_probs, d_box)
}

/// Average-pool a map whose sides are multiples of 64 down to 64x64.
pub fn resize64(g: &Grid) -> Result<Grid> {
    if g.height % CANVAS != 0 || g.width % CANVAS != 0 {
        return Err(UalError::Dimension(format!(
            "cannot pool {}x{} to {CANVAS}x{CANVAS}: sides must be multiples of {CANVAS}",
            g.height, g.width
        )));
    }
    let (fy, fx) = (g.height / CANVAS, g.width / CANVAS);
    let k = 1.0 / (fy * fx) as f64;
    Ok(Grid::from_fn(CANVAS, CANVAS, |r, c| {
        let mut s = 0.0;
        for i in 0..fy {
            for j in 0..fx {
                s += g.get(r * fy + i, c * fx + j);
            }
        }
        s * k
    }))
}

pub fn resize64_backward(height: usize, width: usize, d: &Grid) -> Grid {
    let (fy, fx) = (height / CANVAS, width / CANVAS);
    let k = 1.0 / (fy * fx) as f64;
    Grid::from_fn(height, width, |r, c| d.get(r / fy, c / fx) * k)
}
