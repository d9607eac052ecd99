//! Multi-phase radiomics: first-order statistics and grey-level co-occurrence
//! texture of the contrast phases inside the integrated tumour region.
//!
//! Per phase the vector holds, in order:
//! `mean, variance, skewness, kurtosis, min, max, energy, entropy,
//! glcm_contrast, glcm_correlation, glcm_energy, glcm_homogeneity, glcm_entropy`.
//! Phases are concatenated in the order arterial, portal-venous, delay.

use crate::cswp::IntegrationCanvas;
use crate::error::{Result, UalError};
use crate::grid::Grid;
use crate::modality::{Phase, PhaseCombo};
use crate::phantom::Sample;

pub const FIRST_ORDER_LEN: usize = 8;
pub const GLCM_LEN: usize = 5;
pub const PER_PHASE: usize = FIRST_ORDER_LEN + GLCM_LEN;
pub const HISTOGRAM_BINS: usize = 32;
pub const GLCM_LEVELS: usize = 16;
/// Horizontal neighbour, `(d_col, d_row)`.
pub const GLCM_OFFSET: (i64, i64) = (1, 0);

pub const FEATURE_NAMES: [&str; PER_PHASE] = [
    "mean",
    "variance",
    "skewness",
    "kurtosis",
    "min",
    "max",
    "energy",
    "entropy",
    "glcm_contrast",
    "glcm_correlation",
    "glcm_energy",
    "glcm_homogeneity",
    "glcm_entropy",
];

/// Column names `<phase>_<feature>` for a phase combination.
pub fn feature_names(phases: &PhaseCombo) -> Vec<String> {
    phases
        .items()
        .iter()
        .flat_map(|p| FEATURE_NAMES.iter().map(move |f| format!("{}_{f}", p.name())))
        .collect()
}

pub fn vector_len(phases: &PhaseCombo) -> usize {
    PER_PHASE * phases.len()
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Equal-width bin of `v` over `[lo, hi]`; everything falls in bin 0 when `lo == hi`.
fn bin(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if hi > lo {
        (((v - lo) / (hi - lo)) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
    } else {
        0
    }
}

fn entropy_bits(probs: impl Iterator<Item = f64>) -> f64 {
    probs.filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum()
}

/// `(mean, variance, skewness, kurtosis, min, max, energy, entropy)` of a nonempty region.
///
/// Variance is the population variance; kurtosis is the non-excess fourth standardized moment.
/// Both higher moments are 0 for a constant region.
pub fn first_order(values: &[f64]) -> Result<[f64; FIRST_ORDER_LEN]> {
    if values.is_empty() {
        return Err(UalError::Region("first-order features need a nonempty region".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (lo, hi) = min_max(values.iter().copied());
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let (skew, kurt) = if hi > lo && m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2)) } else { (0.0, 0.0) };
    let energy = values.iter().map(|v| v * v).sum();
    let mut hist = [0usize; HISTOGRAM_BINS];
    for &v in values {
        hist[bin(v, lo, hi, HISTOGRAM_BINS)] += 1;
    }
    let entropy = entropy_bits(hist.iter().map(|&c| c as f64 / n));
    Ok([mean, if hi > lo { m2 } else { 0.0 }, skew, kurt, lo, hi, energy, entropy])
}

/// Symmetric, normalized co-occurrence matrix (`levels x levels`, row-major) of the masked pixels.
///
/// Intensities are quantized over the masked min-max range; only pairs with both ends in the mask count.
pub fn glcm(image: &Grid, mask: &Grid, levels: usize, offset: (i64, i64)) -> Result<Vec<f64>> {
    if !image.same_shape(mask) {
        return Err(UalError::Dimension(format!(
            "glcm image {:?} and mask {:?} differ",
            image.shape(),
            mask.shape()
        )));
    }
    if levels == 0 {
        return Err(UalError::Config("glcm needs at least one grey level".into()));
    }
    let inside = |r: i64, c: i64| {
        r >= 0 && c >= 0 && (r as usize) < mask.height && (c as usize) < mask.width && mask.get(r as usize, c as usize) != 0.0
    };
    let (lo, hi) = min_max(image.data.iter().zip(&mask.data).filter(|(_, &m)| m != 0.0).map(|(&v, _)| v));
    let mut counts = vec![0.0; levels * levels];
    let mut total = 0.0;
    let (dc, dr) = offset;
    for r in 0..image.height as i64 {
        for c in 0..image.width as i64 {
            if !inside(r, c) || !inside(r + dr, c + dc) {
                continue;
            }
            let a = bin(image.get(r as usize, c as usize), lo, hi, levels);
            let b = bin(image.get((r + dr) as usize, (c + dc) as usize), lo, hi, levels);
            counts[a * levels + b] += 1.0;
            counts[b * levels + a] += 1.0;
            total += 2.0;
        }
    }
    if total == 0.0 {
        return Err(UalError::Region("glcm region has no pixel pair at the requested offset".into()));
    }
    counts.iter_mut().for_each(|v| *v /= total);
    Ok(counts)
}

/// `(contrast, correlation, energy, homogeneity, entropy)` of a normalized co-occurrence matrix.
///
/// Energy is the angular second moment, homogeneity weights by `1 / (1 + (i - j)^2)`,
/// and correlation is 0 when the marginals have zero variance.
pub fn glcm_summary(p: &[f64], levels: usize) -> [f64; GLCM_LEN] {
    let idx = |k: usize| ((k / levels) as f64, (k % levels) as f64);
    let (mut mu_i, mut mu_j) = (0.0, 0.0);
    for (k, &v) in p.iter().enumerate() {
        let (i, j) = idx(k);
        mu_i += i * v;
        mu_j += j * v;
    }
    let (mut var_i, mut var_j, mut cov) = (0.0, 0.0, 0.0);
    let (mut contrast, mut energy, mut homogeneity) = (0.0, 0.0, 0.0);
    for (k, &v) in p.iter().enumerate() {
        let (i, j) = idx(k);
        var_i += (i - mu_i).powi(2) * v;
        var_j += (j - mu_j).powi(2) * v;
        cov += (i - mu_i) * (j - mu_j) * v;
        contrast += (i - j).powi(2) * v;
        energy += v * v;
        homogeneity += v / (1.0 + (i - j).powi(2));
    }
    let correlation = if var_i > 1e-15 && var_j > 1e-15 { cov / (var_i * var_j).sqrt() } else { 0.0 };
    [contrast, correlation, energy, homogeneity, entropy_bits(p.iter().copied())]
}

pub fn glcm_features(image: &Grid, mask: &Grid, levels: usize, offset: (i64, i64)) -> Result<[f64; GLCM_LEN]> {
    Ok(glcm_summary(&glcm(image, mask, levels, offset)?, levels))
}

/// Contrast planes of a sample in combination order.
pub fn phase_planes<'a>(sample: &'a Sample, phases: &PhaseCombo) -> Vec<&'a Grid> {
    phases.items().into_iter().map(|p: Phase| p.plane(sample)).collect()
}

/// Radiomics of one region over the configured phases.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiomicsVector {
    pub values: Vec<f64>,
    /// The region was empty and `values` is the all-zero sentinel.
    pub empty: bool,
}

/// Raw features of the pixels listed in `region` on each phase plane.
pub fn region_features(region: &[(usize, usize)], phases: &[&Grid]) -> RadiomicsVector {
    let len = PER_PHASE * phases.len();
    if region.is_empty() {
        return RadiomicsVector {
            values: vec![0.0; len],
            empty: true,
        };
    }
    let mut values = Vec::with_capacity(len);
    for plane in phases {
        let px: Vec<f64> = region.iter().map(|&(r, c)| plane.get(r, c)).collect();
        values.extend(first_order(&px).expect("region is nonempty"));
        let mut mask = Grid::zeros(plane.height, plane.width);
        for &(r, c) in region {
            mask.set(r, c, 1.0);
        }
        values.extend(glcm_features(plane, &mask, GLCM_LEVELS, GLCM_OFFSET).unwrap_or([0.0; GLCM_LEN]));
    }
    RadiomicsVector { values, empty: false }
}

/// Radiomics of the canvas window region (cells `>= 0.5`) mapped back onto the phase planes.
///
/// The sentinel ring never enters the region; an empty region yields the all-zero vector.
pub fn extract_mpr(canvas: &IntegrationCanvas, phases: &[&Grid], stats: Option<&MprStats>) -> RadiomicsVector {
    let (h, w) = phases.first().map(|g| g.shape()).unwrap_or((0, 0));
    let mut v = region_features(&canvas.region(h, w), phases);
    if let (Some(s), false) = (stats, v.empty) {
        s.normalize(&mut v.values);
    }
    v
}

/// Per-feature mean and standard deviation used for z-normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct MprStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MprStats {
    /// Statistics over nonempty vectors; a feature with (near) zero spread gets unit scale.
    pub fn fit(vectors: &[RadiomicsVector], len: usize) -> MprStats {
        let rows: Vec<&Vec<f64>> = vectors.iter().filter(|v| !v.empty).map(|v| &v.values).collect();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; len];
        for r in &rows {
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; len];
        for r in &rows {
            for ((s, x), m) in std.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (x - m).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        MprStats { mean, std }
    }

    pub fn identity(len: usize) -> MprStats {
        MprStats {
            mean: vec![0.0; len],
            std: vec![1.0; len],
        }
    }

    pub fn normalize(&self, values: &mut [f64]) {
        for ((v, m), s) in values.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}
