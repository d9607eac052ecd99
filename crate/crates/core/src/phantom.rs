//! Synthetic multi-modality liver phantoms.
//!
//! Each sample is a 2-D slice with three non-contrast planes (T1, T2, DWI),
//! three contrast-enhanced phases (arterial, portal-venous, delay), a binary
//! tumour mask, its enclosing square box and a class label. Contrast rules are
//! synthetic and only mimic the qualitative appearance of the two tumour types:
//!
//! * hemangioma: bright on T2 and DWI, bright rim in every contrast phase with
//!   progressive fill-in;
//! * HCC: half of the cases have (almost) no contrast on T1/T2, visible on DWI,
//!   hyperintense in the arterial phase and washed out in the delay phase.
//!
//! Every sample draws from its own ChaCha stream keyed by the corpus seed and
//! the sample index, so generation order never changes the output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, UalError};
use crate::grid::{BoxTuple, Grid};
use crate::parallel::Exec;

pub const NO_TUMOR: u8 = 0;
pub const HEMANGIOMA: u8 = 1;
pub const HCC: u8 = 2;

/// One training/testing slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t1: Grid,
    pub t2: Grid,
    pub dwi: Grid,
    pub cemri_arterial: Grid,
    pub cemri_pv: Grid,
    pub cemri_delay: Grid,
    pub mask: Grid,
    pub bbox: Option<BoxTuple>,
    pub cls: u8,
    pub sample_id: String,
}

impl Sample {
    pub fn shape(&self) -> (usize, usize) {
        self.t1.shape()
    }

    pub fn planes(&self) -> [(&'static str, &Grid); 7] {
        [
            ("t1", &self.t1),
            ("t2", &self.t2),
            ("dwi", &self.dwi),
            ("ce_a", &self.cemri_arterial),
            ("ce_pv", &self.cemri_pv),
            ("ce_d", &self.cemri_delay),
            ("mask", &self.mask),
        ]
    }

    /// Check every structural invariant of a sample.
    pub fn validate(&self) -> Result<()> {
        let shape = self.shape();
        for (name, g) in self.planes() {
            if g.shape() != shape {
                return Err(UalError::Data(format!(
                    "{}: plane {name} is {:?}, expected {shape:?}",
                    self.sample_id,
                    g.shape()
                )));
            }
            if name != "mask" && g.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(UalError::Data(format!(
                    "{}: plane {name} has intensities outside [0, 1]",
                    self.sample_id
                )));
            }
        }
        if !self.mask.is_binary() {
            return Err(UalError::Data(format!("{}: mask is not binary", self.sample_id)));
        }
        if self.cls > HCC {
            return Err(UalError::Data(format!("{}: class {} out of range", self.sample_id, self.cls)));
        }
        let empty = self.mask.count_nonzero() == 0;
        match (self.cls, empty, self.bbox) {
            (NO_TUMOR, true, None) => Ok(()),
            (c, false, Some(b)) if c >= HEMANGIOMA => {
                let w = b.pixel_window();
                for r in 0..self.mask.height {
                    for col in 0..self.mask.width {
                        if self.mask.get(r, col) != 0.0 && !w.contains(r as i64, col as i64) {
                            return Err(UalError::Data(format!(
                                "{}: mask pixel ({r}, {col}) lies outside the box",
                                self.sample_id
                            )));
                        }
                    }
                }
                Ok(())
            }
            _ => Err(UalError::Data(format!(
                "{}: class {}, empty mask {empty} and box presence {} disagree",
                self.sample_id,
                self.cls,
                self.bbox.is_some()
            ))),
        }
    }
}

/// Class fractions (no tumour, hemangioma, HCC).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMix(pub [f64; 3]);

impl Default for ClassMix {
    fn default() -> Self {
        ClassMix([0.2, 0.4, 0.4])
    }
}

impl ClassMix {
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(UalError::Config(format!("class fractions must be nonnegative: {:?}", self.0)));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(UalError::Config(format!("class fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Per-class counts `round(count * fraction)`, with any rounding surplus or
    /// deficit absorbed by the class with the largest fraction.
    pub fn counts(&self, count: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for (o, f) in out.iter_mut().zip(self.0) {
            *o = (count as f64 * f).round() as usize;
        }
        let total: usize = out.iter().sum();
        let major = (0..3)
            .max_by(|&a, &b| self.0[a].partial_cmp(&self.0[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        if total > count {
            out[major] -= total - count;
        } else {
            out[major] += count - total;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub class_mix: ClassMix,
}

impl CorpusSpec {
    pub fn new(seed: u64, count: usize, height: usize, width: usize, class_mix: ClassMix) -> Self {
        CorpusSpec {
            seed,
            count,
            height,
            width,
            class_mix,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count < 1 {
            return Err(UalError::Config("corpus count must be at least 1".into()));
        }
        if self.height < 32 || self.width < 32 {
            return Err(UalError::Config(format!(
                "image size {}x{} below the 32x32 minimum",
                self.height, self.width
            )));
        }
        self.class_mix.validate()
    }
}

/// Generate a corpus sequentially.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<Sample>> {
    generate_corpus_with(spec, Exec::Sequential)
}

/// Generate a corpus; output is identical for every execution mode.
pub fn generate_corpus_with(spec: &CorpusSpec, exec: Exec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let labels = class_labels(spec);
    Ok(exec.map_range(spec.count, |i| generate_sample(spec, i, labels[i])))
}

fn class_labels(spec: &CorpusSpec) -> Vec<u8> {
    let counts = spec.class_mix.counts(spec.count);
    let mut labels: Vec<u8> = counts
        .iter()
        .enumerate()
        .flat_map(|(cls, &n)| std::iter::repeat_n(cls as u8, n))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Fisher-Yates on a dedicated stream keeps the label order independent of sample content.
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    labels
}

/// Per-modality base intensities: liver parenchyma and surrounding tissue.
const LIVER_LEVEL: [f64; 6] = [0.45, 0.35, 0.30, 0.40, 0.50, 0.45];
const BODY_LEVEL: [f64; 6] = [0.20, 0.15, 0.10, 0.18, 0.22, 0.20];

/// Additive tumour contrast per modality: (interior, rim).
type Contrast = [(f64, f64); 6];

fn hemangioma_contrast() -> Contrast {
    [
        (-0.12, -0.12),
        (0.38, 0.38),
        (0.30, 0.30),
        (0.08, 0.38),
        (0.20, 0.32),
        (0.28, 0.30),
    ]
}

fn hcc_contrast(invisible_ncmri: bool) -> Contrast {
    let (t1, t2) = if invisible_ncmri { (0.0, 0.01) } else { (-0.08, 0.12) };
    [
        (t1, t1),
        (t2, t2),
        (0.26, 0.26),
        (0.36, 0.36),
        (0.04, 0.08),
        (-0.22, 0.12),
    ]
}

fn generate_sample(spec: &CorpusSpec, index: usize, cls: u8) -> Sample {
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);

    // Liver: a large ellipse slightly off centre.
    let lcy = h as f64 * rng.random_range(0.45..0.55);
    let lcx = w as f64 * rng.random_range(0.45..0.55);
    let lry = h as f64 * rng.random_range(0.36..0.44);
    let lrx = w as f64 * rng.random_range(0.38..0.46);
    let liver = Grid::from_fn(h, w, |r, c| {
        let dy = (r as f64 - lcy) / lry;
        let dx = (c as f64 - lcx) / lrx;
        if dx * dx + dy * dy <= 1.0 {
            1.0
        } else {
            0.0
        }
    });

    let scale = h.min(w) as f64 / 64.0;
    let mask = if cls == NO_TUMOR {
        Grid::zeros(h, w)
    } else {
        let ry = rng.random_range(3.0..9.0) * scale;
        let rx = rng.random_range(3.0..9.0) * scale;
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let margin = rx.max(ry) + 2.0;
        let cy = rng.random_range((lcy - lry * 0.5).max(margin)..(lcy + lry * 0.5).min(h as f64 - margin - 1.0));
        let cx = rng.random_range((lcx - lrx * 0.5).max(margin)..(lcx + lrx * 0.5).min(w as f64 - margin - 1.0));
        let (sin, cos) = theta.sin_cos();
        Grid::from_fn(h, w, |r, c| {
            let y = r as f64 - cy;
            let x = c as f64 - cx;
            let u = x * cos + y * sin;
            let v = -x * sin + y * cos;
            if (u / rx).powi(2) + (v / ry).powi(2) <= 1.0 {
                1.0
            } else {
                0.0
            }
        })
    };
    let rim = rim_of(&mask);

    let contrast = match cls {
        HEMANGIOMA => Some(hemangioma_contrast()),
        HCC => Some(hcc_contrast(rng.random_bool(0.5))),
        _ => None,
    };

    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut planes: Vec<Grid> = (0..6)
        .map(|m| {
            let mut g = Grid::from_fn(h, w, |r, c| {
                let base = if liver.get(r, c) > 0.0 { LIVER_LEVEL[m] } else { BODY_LEVEL[m] };
                base + noise.sample(&mut rng)
            });
            if let Some(con) = &contrast {
                let (inner, edge) = con[m];
                for i in 0..g.data.len() {
                    if rim.data[i] > 0.0 {
                        g.data[i] += edge;
                    } else if mask.data[i] > 0.0 {
                        g.data[i] += inner;
                    }
                }
            }
            g = box_blur(&g);
            // Quantize to f32 so the planes survive the on-disk format unchanged.
            g.map(|v| v.clamp(0.0, 1.0) as f32 as f64)
        })
        .collect();

    let cemri_delay = planes.pop().unwrap();
    let cemri_pv = planes.pop().unwrap();
    let cemri_arterial = planes.pop().unwrap();
    let dwi = planes.pop().unwrap();
    let t2 = planes.pop().unwrap();
    let t1 = planes.pop().unwrap();

    Sample {
        t1,
        t2,
        dwi,
        cemri_arterial,
        cemri_pv,
        cemri_delay,
        bbox: BoxTuple::enclosing(&mask),
        mask,
        cls,
        sample_id: format!("s{index:05}"),
    }
}

/// Mask pixels with at least one 4-neighbour outside the mask.
fn rim_of(mask: &Grid) -> Grid {
    let (h, w) = mask.shape();
    Grid::from_fn(h, w, |r, c| {
        if mask.get(r, c) == 0.0 {
            return 0.0;
        }
        let outside = |rr: i64, cc: i64| {
            rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 || mask.get(rr as usize, cc as usize) == 0.0
        };
        let (r, c) = (r as i64, c as i64);
        if outside(r - 1, c) || outside(r + 1, c) || outside(r, c - 1) || outside(r, c + 1) {
            1.0
        } else {
            0.0
        }
    })
}

/// 3x3 mean filter with edge replication.
fn box_blur(g: &Grid) -> Grid {
    let (h, w) = g.shape();
    Grid::from_fn(h, w, |r, c| {
        let mut acc = 0.0;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let rr = (r as i64 + dr).clamp(0, h as i64 - 1) as usize;
                let cc = (c as i64 + dc).clamp(0, w as i64 - 1) as usize;
                acc += g.get(rr, cc);
            }
        }
        acc / 9.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64, count: usize, mix: [f64; 3]) -> CorpusSpec {
        CorpusSpec::new(seed, count, 64, 64, ClassMix(mix))
    }

    #[test]
    fn same_arguments_give_identical_corpora() {
        let s = spec(7, 4, [0.2, 0.4, 0.4]);
        assert_eq!(generate_corpus(&s).unwrap(), generate_corpus(&s).unwrap());
    }

    #[test]
    fn parallel_generation_matches_sequential() {
        let s = spec(11, 9, [0.2, 0.4, 0.4]);
        assert_eq!(
            generate_corpus_with(&s, Exec::Sequential).unwrap(),
            generate_corpus_with(&s, Exec::Parallel).unwrap()
        );
    }

    #[test]
    fn all_background_mix() {
        for s in generate_corpus(&spec(3, 6, [1.0, 0.0, 0.0])).unwrap() {
            assert_eq!(s.cls, NO_TUMOR);
            assert_eq!(s.mask.count_nonzero(), 0);
            assert!(s.bbox.is_none());
        }
    }

    #[test]
    fn class_counts_follow_rounded_fractions() {
        let corpus = generate_corpus(&spec(7, 100, [0.2, 0.4, 0.4])).unwrap();
        let mut counts = [0usize; 3];
        for s in &corpus {
            counts[s.cls as usize] += 1;
        }
        assert_eq!(counts, [20, 40, 40]);
    }

    #[test]
    fn rounding_surplus_goes_to_largest_class() {
        assert_eq!(ClassMix([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).counts(10), [4, 3, 3]);
        assert_eq!(ClassMix([0.25, 0.25, 0.5]).counts(2), [1, 1, 0]);
        assert_eq!(ClassMix([0.2, 0.4, 0.4]).counts(8), [2, 3, 3]);
    }

    #[test]
    fn invalid_specs_are_configuration_errors() {
        let bad = [
            spec(1, 0, [0.2, 0.4, 0.4]),
            CorpusSpec::new(1, 4, 16, 64, ClassMix::default()),
            spec(1, 4, [0.5, 0.5, 0.5]),
            spec(1, 4, [-0.2, 0.6, 0.6]),
        ];
        for s in bad {
            assert!(matches!(generate_corpus(&s), Err(UalError::Config(_))), "{s:?}");
        }
    }

    #[test]
    fn generated_samples_validate() {
        for s in generate_corpus(&spec(5, 30, [0.2, 0.4, 0.4])).unwrap() {
            s.validate().unwrap();
        }
    }

    #[test]
    fn larger_images_are_supported() {
        let corpus = generate_corpus(&CorpusSpec::new(2, 3, 256, 256, ClassMix([0.0, 0.5, 0.5]))).unwrap();
        for s in corpus {
            assert_eq!(s.shape(), (256, 256));
            s.validate().unwrap();
        }
    }
}
