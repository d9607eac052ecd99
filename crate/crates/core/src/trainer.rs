//! Alternating adversarial training, checkpointed runs, inference and evaluation.
//!
//! One step on a batch of `n` samples:
//!
//! 1. generator forward for every sample;
//! 2. discriminator update on the tumour samples (`cls >= 1`) from the fake and
//!    real canvases;
//! 3. the fake canvases are re-scored by the updated, now frozen, discriminator;
//! 4. one combined generator backward pass and an update of the segmentation
//!    and detection groups.
//!
//! Every loss is a mean over the `n` samples. Samples without a tumour contribute
//! only the pixel cross-entropy and the classification term. The segmentation
//! adversarial term reaches the probabilities scaled by `lambda1`; the detection
//! adversarial term reaches the box scaled by `lambda3`.
//!
//! Per-sample work runs through [`Exec`]; per-sample gradients are summed in batch
//! order, so parallel and sequential runs are bit-identical.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::cswp;
use crate::error::{Result, UalError};
use crate::grid::{BoxTuple, Grid};
use crate::heads::{DetPrediction, SegPrediction, NUM_CLASSES};
use crate::metrics::{EvalReport, SampleRecord};
use crate::model::{GenTrace, ModelConfig, NcmriView, UalNetwork};
use crate::nn::{Gradients, Group, Optimizer, ParamSet};
use crate::objectives::{self as obj, disc_labels};
use crate::parallel::Exec;
use crate::phantom::Sample;
use crate::radiomics::{self, MprStats, RadiomicsVector};

pub const LOG_HEADER: &str = "step,l_seg,l_pixce,l_adv_seg,l_cls,l_reg,l_adv_dec,l_disc";

/// Batch-mean loss values of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepRecord {
    /// 1-based index of the step.
    pub step: usize,
    pub l_seg: f64,
    pub l_pixce: f64,
    pub l_adv_seg: f64,
    pub l_cls: f64,
    pub l_reg: f64,
    pub l_adv_dec: f64,
    pub l_disc: f64,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8}",
            self.step, self.l_seg, self.l_pixce, self.l_adv_seg, self.l_cls, self.l_reg, self.l_adv_dec, self.l_disc
        )
    }

    fn values(&self) -> [f64; 7] {
        [self.l_seg, self.l_pixce, self.l_adv_seg, self.l_cls, self.l_reg, self.l_adv_dec, self.l_disc]
    }
}

/// Discriminator input of one sample.
#[derive(Debug, Clone)]
struct CanvasInput {
    canvas: Grid,
    mpr: Option<Vec<f64>>,
}

struct Forward {
    trace: GenTrace,
    fake: Option<CanvasInput>,
}

#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub network: UalNetwork,
    pub params: ParamSet,
    pub optimizer: Optimizer,
    /// Steps completed so far.
    pub step: usize,
    pub exec: Exec,
    corpus: &'a [Sample],
    real: Vec<Option<CanvasInput>>,
    stats: Option<MprStats>,
    height: usize,
    width: usize,
}

fn check_corpus(corpus: &[Sample]) -> Result<(usize, usize)> {
    let first = corpus.first().ok_or_else(|| UalError::Config("training corpus is empty".into()))?;
    let shape = first.shape();
    for s in corpus {
        s.validate()?;
        if s.shape() != shape {
            return Err(UalError::Data(format!(
                "sample {} is {:?}, corpus is {:?}",
                s.sample_id,
                s.shape(),
                shape
            )));
        }
    }
    Ok(shape)
}

/// Radiomics region of a full-image map, used when canvases are disabled.
fn full_region(map: &Grid) -> Vec<(usize, usize)> {
    (0..map.height)
        .flat_map(|r| (0..map.width).map(move |c| (r, c)))
        .filter(|&(r, c)| map.get(r, c) >= 0.5)
        .collect()
}

impl<'a> Trainer<'a> {
    pub fn new(corpus: &'a [Sample], cfg: &TrainConfig, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let (height, width) = check_corpus(corpus)?;
        let (network, params) = UalNetwork::new(ModelConfig::from_train(cfg, height, width), cfg.seed)?;
        let optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
        let mut t = Trainer {
            cfg: cfg.clone(),
            network,
            params,
            optimizer,
            step: 0,
            exec,
            corpus,
            real: Vec::new(),
            stats: None,
            height,
            width,
        };
        t.prepare_targets()?;
        Ok(t)
    }

    /// Continue from a checkpoint; `cfg` may differ from the stored configuration only in
    /// `iterations` and `checkpoint_every`.
    pub fn resume(corpus: &'a [Sample], cfg: &TrainConfig, ckpt: Checkpoint, exec: Exec) -> Result<Self> {
        cfg.validate()?;
        let stored = TrainConfig {
            iterations: cfg.iterations,
            checkpoint_every: cfg.checkpoint_every,
            ..ckpt.config.clone()
        };
        if &stored != cfg {
            return Err(UalError::Config("checkpoint was trained with a different configuration".into()));
        }
        let (height, width) = check_corpus(corpus)?;
        if (height, width) != (ckpt.height, ckpt.width) {
            return Err(UalError::Data(format!(
                "checkpoint expects {}x{} images, corpus is {height}x{width}",
                ckpt.height, ckpt.width
            )));
        }
        let network = ckpt.network()?;
        let mut t = Trainer {
            cfg: cfg.clone(),
            network,
            params: ckpt.params,
            optimizer: ckpt.optimizer,
            step: ckpt.step,
            exec,
            corpus,
            real: Vec::new(),
            stats: None,
            height,
            width,
        };
        t.prepare_targets()?;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            config: self.cfg.clone(),
            height: self.height,
            width: self.width,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    fn region_of(&self, map: &Grid, bbox: &BoxTuple) -> Result<Vec<(usize, usize)>> {
        Ok(if self.cfg.ablations.cswp {
            cswp::integrate_probs(map, bbox)?.region(self.height, self.width)
        } else {
            full_region(map)
        })
    }

    fn canvas_of(&self, map: &Grid, bbox: &BoxTuple) -> Result<Grid> {
        if self.cfg.ablations.cswp {
            cswp::integrate_soft(map, bbox, self.cfg.cswp_mode)
        } else {
            cswp::resize64(map)
        }
    }

    /// Real canvases and radiomics of every tumour sample, plus the normalization statistics.
    fn prepare_targets(&mut self) -> Result<()> {
        if !self.cfg.ablations.adversarial() {
            self.real = vec![None; self.corpus.len()];
            return Ok(());
        }
        let phases = self.cfg.phases;
        let raw: Vec<Option<(Grid, Option<RadiomicsVector>)>> = self
            .corpus
            .iter()
            .map(|s| {
                let Some(b) = s.bbox.filter(|_| s.cls >= 1) else { return Ok(None) };
                let canvas = self.canvas_of(&s.mask, &b)?;
                let mpr = if self.cfg.ablations.radiomics() {
                    let region = self.region_of(&s.mask, &b)?;
                    Some(radiomics::region_features(&region, &radiomics::phase_planes(s, &phases)))
                } else {
                    None
                };
                Ok(Some((canvas, mpr)))
            })
            .collect::<Result<_>>()?;
        if self.cfg.ablations.radiomics() {
            let vectors: Vec<RadiomicsVector> = raw.iter().flatten().filter_map(|(_, m)| m.clone()).collect();
            self.stats = Some(MprStats::fit(&vectors, radiomics::vector_len(&phases)));
        }
        let stats = self.stats.clone();
        self.real = raw
            .into_iter()
            .map(|o| {
                o.map(|(canvas, m)| CanvasInput {
                    canvas,
                    mpr: m.map(|mut v| {
                        if !v.empty {
                            stats.as_ref().unwrap().normalize(&mut v.values);
                        }
                        v.values
                    }),
                })
            })
            .collect();
        Ok(())
    }

    /// Corpus indices of the batch for step `step` (0-based): consecutive slices of
    /// per-epoch permutations drawn from the seed.
    pub fn batch_indices(&self, step: usize) -> Vec<usize> {
        let n = self.corpus.len();
        let bs = self.cfg.batch_size;
        let mut out = Vec::with_capacity(bs);
        let mut cached: Option<(usize, Vec<usize>)> = None;
        for k in 0..bs {
            let pos = step * bs + k;
            let epoch = pos / n;
            if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
                rng.set_stream(epoch as u64 + 1);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                cached = Some((epoch, perm));
            }
            out.push(cached.as_ref().unwrap().1[pos % n]);
        }
        out
    }

    fn forward_sample(&self, idx: usize) -> Result<Forward> {
        let s = &self.corpus[idx];
        let trace = self.network.generator_forward(&self.params, &NcmriView::of(s, &self.cfg.modalities))?;
        let fake = if self.network.dis.is_some() && s.cls >= 1 {
            let probs = trace.probs();
            let bbox = trace.det.raw_box;
            let canvas = self.canvas_of(probs, &bbox)?;
            let mpr = if self.cfg.ablations.radiomics() {
                let region = self.region_of(probs, &bbox)?;
                let mut v = radiomics::region_features(&region, &radiomics::phase_planes(s, &self.cfg.phases));
                if v.empty {
                    log::debug!("sample {}: empty predicted region, radiomics set to zero", s.sample_id);
                } else {
                    self.stats.as_ref().unwrap().normalize(&mut v.values);
                }
                Some(v.values)
            } else {
                None
            };
            Some(CanvasInput { canvas, mpr })
        } else {
            None
        };
        Ok(Forward { trace, fake })
    }

    /// Discriminator update; returns the batch-mean discriminator loss.
    fn discriminator_step(&mut self, batch: &[usize], fwd: &[Forward]) -> Result<f64> {
        let Some(dis) = self.network.dis.as_ref() else { return Ok(0.0) };
        let n = batch.len() as f64;
        let (yf, yr) = disc_labels(self.cfg.swap_disc_labels);
        let items: Vec<(&CanvasInput, &CanvasInput)> = batch
            .iter()
            .zip(fwd)
            .filter_map(|(&i, f)| Some((f.fake.as_ref()?, self.real[i].as_ref()?)))
            .collect();
        if items.is_empty() {
            return Ok(0.0);
        }
        let params = &self.params;
        let parts = self.exec.map(&items, |(fake, real)| -> Result<(f64, Gradients)> {
            let mut g = Gradients::zeros_like(params);
            let tf = dis.forward(params, &fake.canvas, fake.mpr.as_deref())?;
            let tr = dis.forward(params, &real.canvas, real.mpr.as_deref())?;
            dis.backward_logit(params, &tf, obj::adv_loss_grad_logit(tf.score, yf) / n, &mut g);
            dis.backward_logit(params, &tr, obj::adv_loss_grad_logit(tr.score, yr) / n, &mut g);
            Ok((obj::disc_loss(tf.score, tr.score, self.cfg.swap_disc_labels), g))
        });
        let mut total = Gradients::zeros_like(&self.params);
        let mut loss = 0.0;
        for p in parts {
            let (l, g) = p?;
            loss += l;
            total.add_assign(&g);
        }
        if !total.is_finite() {
            return Err(UalError::Numeric(format!("step {}: non-finite discriminator gradient", self.step + 1)));
        }
        self.optimizer.step(&mut self.params, &total, &[Group::Dis]);
        Ok(loss / n)
    }

    /// Generator losses and gradient of one sample under the frozen discriminator.
    fn generator_sample(&self, idx: usize, f: &Forward, n: f64) -> Result<([f64; 6], Gradients)> {
        let s = &self.corpus[idx];
        let w = &self.cfg.weights;
        let trace = &f.trace;
        let probs = trace.probs();
        let pix = obj::pix_ce(probs, &s.mask)?;
        let mut d_probs = obj::pix_ce_grad(probs, &s.mask)?;
        d_probs.data.iter_mut().for_each(|v| *v /= n);
        let cls = obj::cls_loss(&trace.det.class_probs, s.cls);
        let d_logits: [f64; NUM_CLASSES] = obj::cls_loss_grad_logits(&trace.det.class_probs, s.cls).map(|v| v / n);
        let mut d_box = [0.0; 3];
        let mut reg = 0.0;
        if s.cls >= 1 {
            let target = s.bbox.as_ref().ok_or_else(|| UalError::Data(format!("sample {} has a tumour but no box", s.sample_id)))?;
            reg = obj::reg_loss(&trace.det.raw_box, target, self.height, self.width);
            let g = obj::reg_loss_grad(&trace.det.raw_box, target, self.height, self.width);
            for k in 0..3 {
                d_box[k] += w.lambda2 * g[k] / n;
            }
        }
        let mut grads = Gradients::zeros_like(&self.params);
        let (mut adv_seg, mut adv_dec) = (0.0, 0.0);
        if let (Some(dis), Some(fake)) = (self.network.dis.as_ref(), f.fake.as_ref()) {
            let t = dis.forward(&self.params, &fake.canvas, fake.mpr.as_deref())?;
            let adv = obj::adv_loss(t.score, 1.0);
            // Discriminator parameter gradients land in a scratch buffer and are dropped.
            let mut scratch = Gradients::zeros_like(&self.params);
            let d_canvas = dis.backward_logit(&self.params, &t, obj::adv_loss_grad_logit(t.score, 1.0), &mut scratch);
            adv_seg = adv;
            if self.cfg.ablations.cswp {
                adv_dec = adv;
                let (dp, db) = cswp::integrate_soft_backward(probs, &trace.det.raw_box, self.cfg.cswp_mode, &d_canvas);
                for (d, g) in d_probs.data.iter_mut().zip(&dp.data) {
                    *d += w.lambda1 * g / n;
                }
                for k in 0..3 {
                    d_box[k] += w.lambda3 * db[k] / n;
                }
            } else {
                let dp = cswp::resize64_backward(self.height, self.width, &d_canvas);
                for (d, g) in d_probs.data.iter_mut().zip(&dp.data) {
                    *d += w.lambda1 * g / n;
                }
            }
        }
        self.network.generator_backward(&self.params, trace, &d_probs, d_logits, d_box, &mut grads);
        Ok(([pix, adv_seg, cls, reg, adv_dec, 0.0], grads))
    }

    fn forward_all(&self, batch: &[usize]) -> Result<Vec<Forward>> {
        if batch.is_empty() {
            return Err(UalError::Config("empty batch".into()));
        }
        self.exec.map(batch, |&i| self.forward_sample(i)).into_iter().collect()
    }

    /// Summed generator gradient and batch-mean generator losses
    /// `[pix_ce, adv_seg, cls, reg, adv_dec, 0]` under the current discriminator.
    fn generator_pass(&self, batch: &[usize], fwd: &[Forward]) -> Result<(Gradients, [f64; 6])> {
        let n = batch.len() as f64;
        let pairs: Vec<(usize, &Forward)> = batch.iter().copied().zip(fwd).collect();
        let parts = self.exec.map(&pairs, |&(i, f)| self.generator_sample(i, f, n));
        let mut total = Gradients::zeros_like(&self.params);
        let mut sums = [0.0; 6];
        for p in parts {
            let (l, g) = p?;
            for k in 0..6 {
                sums[k] += l[k];
            }
            total.add_assign(&g);
        }
        Ok((total, sums.map(|v| v / n)))
    }

    /// Gradient of the combined generator loss on `batch` without updating anything.
    pub fn generator_gradients(&self, batch: &[usize]) -> Result<Gradients> {
        let fwd = self.forward_all(batch)?;
        Ok(self.generator_pass(batch, &fwd)?.0)
    }

    /// Generator half of a step alone: update the segmentation and detection groups
    /// and return the gradient that was applied.
    pub fn generator_step(&mut self, batch: &[usize]) -> Result<Gradients> {
        let g = self.generator_gradients(batch)?;
        if !g.is_finite() {
            return Err(UalError::Numeric(format!("step {}: non-finite generator gradient", self.step + 1)));
        }
        self.optimizer.step(&mut self.params, &g, &[Group::Seg, Group::Dec]);
        Ok(g)
    }

    /// Train on an explicit batch of corpus indices.
    pub fn step_on(&mut self, batch: &[usize]) -> Result<StepRecord> {
        let fwd = self.forward_all(batch)?;
        let l_disc = self.discriminator_step(batch, &fwd)?;
        let (total, m) = self.generator_pass(batch, &fwd)?;
        let w = &self.cfg.weights;
        let rec = StepRecord {
            step: self.step + 1,
            l_seg: m[0] + w.lambda1 * m[1],
            l_pixce: m[0],
            l_adv_seg: m[1],
            l_cls: m[2],
            l_reg: m[3],
            l_adv_dec: m[4],
            l_disc,
        };
        if rec.values().iter().any(|v| !v.is_finite()) || !total.is_finite() {
            return Err(UalError::Numeric(format!("step {}: non-finite loss ({LOG_HEADER} = {})", rec.step, rec.csv_row())));
        }
        self.optimizer.step(&mut self.params, &total, &[Group::Seg, Group::Dec]);
        self.step += 1;
        Ok(rec)
    }

    /// One step on the seeded batch for the current step index.
    pub fn train_step(&mut self) -> Result<StepRecord> {
        let batch = self.batch_indices(self.step);
        self.step_on(&batch)
    }

    pub fn infer(&self, sample: &Sample) -> Result<(SegPrediction, DetPrediction)> {
        infer(&self.network, &self.params, sample)
    }

    pub fn evaluate(&self, samples: &[Sample]) -> Result<EvalReport> {
        evaluate(&self.network, &self.params, samples, self.exec)
    }
}

/// Test-time forward on the configured non-contrast planes only.
pub fn infer(network: &UalNetwork, params: &ParamSet, sample: &Sample) -> Result<(SegPrediction, DetPrediction)> {
    network.infer(params, &NcmriView::of(sample, &network.config.modalities))
}

pub fn evaluate(network: &UalNetwork, params: &ParamSet, samples: &[Sample], exec: Exec) -> Result<EvalReport> {
    let records = exec.map(samples, |s| -> Result<SampleRecord> {
        let (seg, det) = infer(network, params, s)?;
        SampleRecord::new(&s.sample_id, &seg.probs, &s.mask, &det.bbox, s.bbox.as_ref(), s.cls, det.predicted_class())
    });
    EvalReport::from_records(records.into_iter().collect::<Result<_>>()?)
}

/// Where a run writes its artifacts and whether it continues from a checkpoint.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub exec: Exec,
}

pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";

pub fn checkpoint_path(out_dir: &Path, step: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("step_{step:06}.ckpt"))
}

/// Keep the header and the first `rows` data rows of an existing log.
fn truncate_log(path: &Path, rows: usize) -> Result<()> {
    let f = File::open(path).map_err(|e| UalError::io(path, e))?;
    let kept: Vec<String> = BufReader::new(f)
        .lines()
        .take(rows + 1)
        .collect::<std::io::Result<_>>()
        .map_err(|e| UalError::io(path, e))?;
    let mut body = kept.join("\n");
    body.push('\n');
    fs::write(path, body).map_err(|e| UalError::io(path, e))
}

/// Run `cfg.iterations` steps in total, logging every step and checkpointing as configured.
pub fn train<'a>(corpus: &'a [Sample], cfg: &TrainConfig, opts: &TrainOptions) -> Result<(Trainer<'a>, Vec<StepRecord>)> {
    let mut trainer = match &opts.resume {
        Some(p) => Trainer::resume(corpus, cfg, Checkpoint::load(p)?, opts.exec)?,
        None => Trainer::new(corpus, cfg, opts.exec)?,
    };
    let mut log = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| UalError::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            if trainer.step > 0 && path.exists() {
                truncate_log(&path, trainer.step)?;
            } else {
                fs::write(&path, format!("{LOG_HEADER}\n")).map_err(|e| UalError::io(&path, e))?;
            }
            Some((OpenOptions::new().append(true).open(&path).map_err(|e| UalError::io(&path, e))?, path))
        }
        None => None,
    };
    let mut records = Vec::with_capacity(cfg.iterations.saturating_sub(trainer.step));
    while trainer.step < cfg.iterations {
        let rec = trainer.train_step()?;
        if let Some((f, path)) = log.as_mut() {
            writeln!(f, "{}", rec.csv_row()).map_err(|e| UalError::io(path.as_path(), e))?;
        }
        if rec.step % 50 == 0 || rec.step == cfg.iterations {
            log::info!(
                "step {}: l_seg {:.4} l_cls {:.4} l_reg {:.4} l_disc {:.4}",
                rec.step,
                rec.l_seg,
                rec.l_cls,
                rec.l_reg,
                rec.l_disc
            );
        }
        if let Some(dir) = &opts.out_dir {
            if cfg.checkpoint_every > 0 && rec.step % cfg.checkpoint_every == 0 {
                trainer.checkpoint().save(&checkpoint_path(dir, rec.step))?;
            }
        }
        records.push(rec);
    }
    if let Some(dir) = &opts.out_dir {
        trainer.checkpoint().save(&dir.join(FINAL_CHECKPOINT))?;
    }
    Ok((trainer, records))
}
