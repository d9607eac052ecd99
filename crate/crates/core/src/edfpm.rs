//! Edge-dissimilarity pyramids.
//!
//! Sobel gradient magnitudes of two modalities are subtracted element-wise and
//! the signed difference is block-averaged into a pyramid whose levels match
//! the encoder block resolutions. Each level is lifted to the block's channel
//! count by a bias-free 1x1 projection and added to the block output.

use crate::error::{Result, UalError};
use crate::grid::{FeatureStack, Grid};
use crate::modality::{Modality, ModalityCombo};
use crate::phantom::Sample;

/// Mirror an out-of-range index back into `0..n` without repeating the edge sample.
#[inline]
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Sobel gradient magnitude with reflect padding; output has the input's shape.
pub fn sobel_edges(img: &Grid) -> Result<Grid> {
    let (h, w) = img.shape();
    if h < 3 || w < 3 {
        return Err(UalError::Dimension(format!("sobel needs at least 3x3, got {h}x{w}")));
    }
    Ok(Grid::from_fn(h, w, |r, c| {
        let at = |dr: i64, dc: i64| img.get(reflect(r as i64 + dr, h), reflect(c as i64 + dc, w));
        // Paired differences keep constant regions exactly zero and Gx/Gy exactly transpose-symmetric.
        let gx = (at(-1, 1) - at(-1, -1)) + 2.0 * (at(0, 1) - at(0, -1)) + (at(1, 1) - at(1, -1));
        let gy = (at(1, -1) - at(-1, -1)) + 2.0 * (at(1, 0) - at(-1, 0)) + (at(1, 1) - at(-1, 1));
        (gx * gx + gy * gy).sqrt()
    }))
}

/// Signed element-wise difference `edge_m - edge_n`.
pub fn edge_dissimilarity(edge_m: &Grid, edge_n: &Grid) -> Result<Grid> {
    if !edge_m.same_shape(edge_n) {
        return Err(UalError::Dimension(format!(
            "edge maps differ in shape: {:?} vs {:?}",
            edge_m.shape(),
            edge_n.shape()
        )));
    }
    Ok(Grid {
        height: edge_m.height,
        width: edge_m.width,
        data: edge_m.data.iter().zip(&edge_n.data).map(|(a, b)| a - b).collect(),
    })
}

/// Half-resolution plane where each pixel is the mean of its aligned 2x2 block.
pub fn downsample2(g: &Grid) -> Grid {
    Grid::from_fn(g.height / 2, g.width / 2, |r, c| {
        0.25 * (g.get(2 * r, 2 * c) + g.get(2 * r, 2 * c + 1) + g.get(2 * r + 1, 2 * c) + g.get(2 * r + 1, 2 * c + 1))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgePyramid {
    pub levels: Vec<Grid>,
    /// Modalities `(m, n)` of the dissimilarity `edge(m) - edge(n)`.
    pub source_pair: (Modality, Modality),
}

impl EdgePyramid {
    pub fn zeros(height: usize, width: usize, levels: usize, source_pair: (Modality, Modality)) -> Self {
        EdgePyramid {
            levels: (0..levels).map(|k| Grid::zeros(height >> k, width >> k)).collect(),
            source_pair,
        }
    }

    pub fn level(&self, k: usize) -> &Grid {
        &self.levels[k]
    }
}

pub fn build_pyramid(dmap: &Grid, levels: usize, source_pair: (Modality, Modality)) -> Result<EdgePyramid> {
    if levels == 0 {
        return Err(UalError::Dimension("pyramid needs at least one level".into()));
    }
    let factor = 1usize << (levels - 1);
    if dmap.height % factor != 0 || dmap.width % factor != 0 {
        return Err(UalError::Dimension(format!(
            "{}x{} map cannot form {levels} levels: both sides must be divisible by {factor}",
            dmap.height, dmap.width
        )));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(dmap.clone());
    for k in 1..levels {
        let next = downsample2(&out[k - 1]);
        out.push(next);
    }
    Ok(EdgePyramid {
        levels: out,
        source_pair,
    })
}

/// Pyramids for the three encoder channels in modality order (T1, T2, DWI).
///
/// Channel `i` receives `edge(m) - edge(n)` for the other two modalities. Modalities
/// outside `combo` contribute an all-zero edge map.
pub fn sample_pyramids(sample: &Sample, combo: &ModalityCombo, levels: usize) -> Result<[EdgePyramid; 3]> {
    let planes = Modality::ALL.map(|m| combo.contains(m).then(|| m.plane(sample)));
    plane_pyramids(planes, levels)
}

/// As [`sample_pyramids`] for planes given directly; `None` marks an absent modality.
pub fn plane_pyramids(planes: [Option<&Grid>; 3], levels: usize) -> Result<[EdgePyramid; 3]> {
    let (h, w) = planes
        .iter()
        .flatten()
        .next()
        .map(|g| g.shape())
        .ok_or_else(|| UalError::Data("no modality plane given".into()))?;
    let edges: Vec<Grid> = planes
        .iter()
        .map(|p| match p {
            Some(g) if g.shape() == (h, w) => sobel_edges(g),
            Some(g) => Err(UalError::Dimension(format!("modality planes differ: {:?} vs {:?}", g.shape(), (h, w)))),
            None => Ok(Grid::zeros(h, w)),
        })
        .collect::<Result<_>>()?;
    let build = |target: Modality| {
        let pair = target.edge_pair();
        let d = edge_dissimilarity(&edges[pair.0.index()], &edges[pair.1.index()])?;
        build_pyramid(&d, levels, pair)
    };
    Ok([build(Modality::T1)?, build(Modality::T2)?, build(Modality::Dwi)?])
}

/// Lift a one-channel map to `feat.channels` with per-channel weights and add it to `feat`.
pub fn inject(pyr_level: &Grid, feat: &FeatureStack, weights: &[f64]) -> Result<FeatureStack> {
    if (pyr_level.height, pyr_level.width) != (feat.height, feat.width) {
        return Err(UalError::Dimension(format!(
            "pyramid level {:?} does not match feature maps {}x{}",
            pyr_level.shape(),
            feat.height,
            feat.width
        )));
    }
    if weights.len() != feat.channels {
        return Err(UalError::Dimension(format!(
            "projection has {} weights for {} channels",
            weights.len(),
            feat.channels
        )));
    }
    let mut out = feat.clone();
    inject_in_place(pyr_level, &mut out, weights);
    Ok(out)
}

pub(crate) fn inject_in_place(pyr_level: &Grid, feat: &mut FeatureStack, weights: &[f64]) {
    let n = feat.plane_len();
    for (c, &wc) in weights.iter().enumerate() {
        if wc == 0.0 {
            continue;
        }
        for (o, &p) in feat.data[c * n..(c + 1) * n].iter_mut().zip(&pyr_level.data) {
            *o += wc * p;
        }
    }
}

/// Gradient of the projection weights given the output gradient.
pub(crate) fn inject_weight_grad(pyr_level: &Grid, dout: &FeatureStack, dweights: &mut [f64]) {
    let n = dout.plane_len();
    for (c, dw) in dweights.iter_mut().enumerate() {
        *dw += dout.data[c * n..(c + 1) * n]
            .iter()
            .zip(&pyr_level.data)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
}
