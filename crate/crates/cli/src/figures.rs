//! Static PNG renderings: boundary overlays on each input plane and probability heatmaps.

use std::path::Path;

use image::{Rgb, RgbImage};
use ual_core::error::{Result, UalError};
use ual_core::grid::{BoxTuple, Grid};
use ual_core::modality::Modality;
use ual_core::phantom::Sample;

const GT_COLOUR: Rgb<u8> = Rgb([40, 220, 60]);
const PRED_COLOUR: Rgb<u8> = Rgb([235, 40, 40]);
const BOX_COLOUR: Rgb<u8> = Rgb([250, 210, 30]);

fn grey(plane: &Grid) -> RgbImage {
    let (lo, hi) = plane.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    RgbImage::from_fn(plane.width as u32, plane.height as u32, |x, y| {
        let v = ((plane.get(y as usize, x as usize) - lo) / span * 255.0).round() as u8;
        Rgb([v, v, v])
    })
}

/// Foreground pixels (>= 0.5) with a 4-neighbour in the background or outside the image.
fn boundary(mask: &Grid) -> Vec<(usize, usize)> {
    let on = |r: i64, c: i64| r >= 0 && c >= 0 && (r as usize) < mask.height && (c as usize) < mask.width && mask.get(r as usize, c as usize) >= 0.5;
    let mut out = Vec::new();
    for r in 0..mask.height as i64 {
        for c in 0..mask.width as i64 {
            if on(r, c) && [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|(dr, dc)| !on(r + dr, c + dc)) {
                out.push((r as usize, c as usize));
            }
        }
    }
    out
}

fn draw_box(img: &mut RgbImage, b: &BoxTuple) {
    let w = b.pixel_window();
    let (h, wd) = (img.height() as i64, img.width() as i64);
    let side = w.side as i64;
    if side == 0 {
        return;
    }
    let mut put = |r: i64, c: i64| {
        if (0..h).contains(&r) && (0..wd).contains(&c) {
            img.put_pixel(c as u32, r as u32, BOX_COLOUR);
        }
    };
    for k in 0..side {
        put(w.row0, w.col0 + k);
        put(w.row0 + side - 1, w.col0 + k);
        put(w.row0 + k, w.col0);
        put(w.row0 + k, w.col0 + side - 1);
    }
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| UalError::Data(format!("cannot write {}: {e}", path.display())))
}

/// `<sample_id>_<modality>_overlay.png` for each non-contrast plane: ground-truth boundary in
/// green, predicted boundary in red, predicted box in yellow when a tumour is predicted.
pub fn write_overlays(dir: &Path, sample: &Sample, probs: &Grid, pred_box: Option<&BoxTuple>) -> Result<()> {
    let gt = boundary(&sample.mask);
    let pred = boundary(probs);
    for m in Modality::ALL {
        let mut img = grey(m.plane(sample));
        for &(r, c) in &gt {
            img.put_pixel(c as u32, r as u32, GT_COLOUR);
        }
        for &(r, c) in &pred {
            img.put_pixel(c as u32, r as u32, PRED_COLOUR);
        }
        if let Some(b) = pred_box {
            draw_box(&mut img, b);
        }
        save(&img, &dir.join(format!("{}_{}_overlay.png", sample.sample_id, m.name())))?;
    }
    Ok(())
}

/// Blue through green to red.
fn ramp(p: f64) -> Rgb<u8> {
    let p = p.clamp(0.0, 1.0);
    let (r, g, b) = if p < 0.5 {
        let t = p * 2.0;
        (0.0, t, 1.0 - t)
    } else {
        let t = (p - 0.5) * 2.0;
        (t, 1.0 - t, 0.0)
    };
    Rgb([(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8])
}

/// `<sample_id>_heatmap.png`: the segmentation probabilities on a fixed colour scale.
pub fn write_heatmap(dir: &Path, sample_id: &str, probs: &Grid) -> Result<()> {
    let img = RgbImage::from_fn(probs.width as u32, probs.height as u32, |x, y| ramp(probs.get(y as usize, x as usize)));
    save(&img, &dir.join(format!("{sample_id}_heatmap.png")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_of_square_is_its_ring() {
        let m = Grid::from_fn(6, 6, |r, c| ((1..5).contains(&r) && (1..5).contains(&c)) as u8 as f64);
        assert_eq!(boundary(&m).len(), 12);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), Rgb([0, 0, 255]));
        assert_eq!(ramp(1.0), Rgb([255, 0, 0]));
    }
}
