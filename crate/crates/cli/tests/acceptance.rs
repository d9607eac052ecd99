//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ual_core::config::TrainConfig;
use ual_core::cswp::{self, CswpMode, CANVAS, PAD_VALUE};
use ual_core::edfpm::sobel_edges;
use ual_core::fsc::Fsc;
use ual_core::grid::{BoxTuple, FeatureStack, Grid};
use ual_core::heads::softmax;
use ual_core::metrics::{box_iou, classification_report, dsc, mask_iou, pixel_accuracy};
use ual_core::nn::{Conv2d, Group, ParamSet};
use ual_core::objectives as obj;
use ual_core::parallel::Exec;
use ual_core::phantom::{generate_corpus, ClassMix, CorpusSpec};
use ual_core::radiomics::glcm;
use ual_core::sweep::{run_sweep, SweepKind, Variant};
use ual_core::trainer::Trainer;

const DESK: &str = include_str!("../../../configs/desk.cfg");

fn desk(iterations: usize) -> TrainConfig {
    let mut cfg = TrainConfig::parse(DESK).unwrap();
    cfg.iterations = iterations;
    cfg
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid {
    Grid::from_fn(h, w, |_, _| rng.random::<f64>())
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Grid {
    Grid::from_fn(h, w, |_, _| (rng.random::<f64>() < p) as u8 as f64)
}

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

// ---------------------------------------------------------------- oracle suites

fn sobel_oracle(img: &Grid) -> Grid {
    let (h, w) = img.shape();
    let refl = |i: i64, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * (n - 1) - i as usize
        } else {
            i as usize
        }
    };
    let padded: Vec<Vec<f64>> = (-1..=h as i64).map(|r| (-1..=w as i64).map(|c| img.get(refl(r, h), refl(c, w))).collect()).collect();
    let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    Grid::from_fn(h, w, |r, c| {
        let (mut gx, mut gy) = (0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let v = padded[r + i][c + j];
                gx += kx[i][j] * v;
                gy += kx[j][i] * v;
            }
        }
        (gx * gx + gy * gy).sqrt()
    })
}

fn conv_oracle(params: &ParamSet, conv: &Conv2d, x: &FeatureStack) -> FeatureStack {
    let (k, pad) = (conv.k, (conv.k / 2) as i64);
    let w = params.get(conv.weight);
    let b = params.get(conv.bias.unwrap());
    let mut out = FeatureStack::zeros(conv.cout, x.height, x.width);
    for co in 0..conv.cout {
        for r in 0..x.height {
            for c in 0..x.width {
                let mut s = b[co];
                for ci in 0..conv.cin {
                    for ki in 0..k {
                        for kj in 0..k {
                            let (sr, sc) = (r as i64 + ki as i64 - pad, c as i64 + kj as i64 - pad);
                            if sr >= 0 && sc >= 0 && (sr as usize) < x.height && (sc as usize) < x.width {
                                s += w[co * conv.cin * k * k + (ci * k + ki) * k + kj] * x.get(ci, sr as usize, sc as usize);
                            }
                        }
                    }
                }
                out.data[(co * x.height + r) * x.width + c] = s;
            }
        }
    }
    out
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn oracle_suites() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);

    let mut sobel_err: f64 = 0.0;
    for (h, w) in [(3, 3), (5, 7), (16, 16), (31, 20)] {
        let img = random_grid(&mut rng, h, w);
        sobel_err = sobel_err.max(max_diff(&sobel_edges(&img).unwrap().data, &sobel_oracle(&img).data));
    }
    check(sobel_err <= 1e-6, format!("sobel max diff {sobel_err:e}"))?;

    let (c, hh, ww) = (3, 5, 4);
    let mut params = ParamSet::new();
    let fsc = Fsc::gated(c, 3, &mut params, &mut rng);
    params.values_mut().iter_mut().for_each(|v| *v = rng.random::<f64>() - 0.5);
    let fs: Vec<FeatureStack> = (0..3)
        .map(|_| FeatureStack::from_vec(c, hh, ww, (0..c * hh * ww).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap())
        .collect();
    let (seg, dec) = fsc.fuse(&params, &fs[0], &fs[1], &fs[2]).unwrap();
    let Fsc::Gated { conv_a, conv_b, conv_c, conv_d } = &fsc else { unreachable!() };
    let relu = |s: FeatureStack| FeatureStack { data: s.data.iter().map(|v| v.max(0.0)).collect(), ..s };
    let x = FeatureStack::concat(&[&fs[0], &fs[1], &fs[2]]).unwrap();
    let hidden = relu(conv_oracle(&params, conv_a, &x));
    let fa = conv_oracle(&params, conv_b, &hidden);
    let fa = FeatureStack { data: fa.data.iter().map(|v| v.tanh()).collect(), ..fa };
    let seg_o = relu(conv_oracle(&params, conv_c, &FeatureStack::concat(&[&fa, &fs[0]]).unwrap()));
    let dec_o = relu(conv_oracle(&params, conv_d, &FeatureStack::concat(&[&fa, &fs[2]]).unwrap()));
    let fsc_err = max_diff(&seg.data, &seg_o.data).max(max_diff(&dec.data, &dec_o.data));
    check(fsc_err <= 1e-6, format!("fsc max diff {fsc_err:e}"))?;

    for trial in 0..20 {
        let (h, w) = (6 + trial % 5, 7 + trial % 3);
        let img = Grid::from_fn(h, w, |_, _| rng.random_range(0..16) as f64);
        let mut mask = random_mask(&mut rng, h, w, 0.7);
        mask.set(0, 0, 1.0);
        mask.set(0, 1, 1.0);
        let mut img = img;
        img.set(0, 0, 0.0);
        img.set(0, 1, 15.0);
        let p = glcm(&img, &mask, 16, (1, 0)).unwrap();
        let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        let mut total = 0u64;
        for r in 0..h {
            for c in 0..w - 1 {
                if mask.get(r, c) != 0.0 && mask.get(r, c + 1) != 0.0 {
                    let (a, b) = (img.get(r, c) as usize, img.get(r, c + 1) as usize);
                    *counts.entry((a, b)).or_default() += 1;
                    *counts.entry((b, a)).or_default() += 1;
                    total += 2;
                }
            }
        }
        for i in 0..16 {
            for j in 0..16 {
                let got = p[i * 16 + j] * total as f64;
                let want = counts.get(&(i, j)).copied().unwrap_or(0);
                check(got.round() as u64 == want && (got - got.round()).abs() < 1e-9, format!("glcm ({i},{j}): {got} vs {want}"))?;
            }
        }
    }

    let pred = Grid::from_vec(2, 2, vec![0.9, 0.2, 0.6, 0.05]).unwrap();
    let tgt = Grid::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let hand = -(0.9f64.ln() + 0.8f64.ln() + 0.4f64.ln() + 0.95f64.ln()) / 4.0;
    let mut loss_err = (obj::pix_ce(&pred, &tgt).unwrap() - hand).abs();
    loss_err = loss_err.max((obj::adv_loss(0.3, 1.0) + 0.3f64.ln()).abs());
    loss_err = loss_err.max((obj::adv_loss(0.3, 0.0) + 0.7f64.ln()).abs());
    loss_err = loss_err.max((obj::disc_loss(0.8, 0.25, false) - (-(0.8f64.ln()) - 0.75f64.ln())).abs());
    loss_err = loss_err.max((obj::disc_loss(0.8, 0.25, true) - (-(0.2f64.ln()) - 0.25f64.ln())).abs());
    loss_err = loss_err.max((obj::smooth_l1(0.5) - 0.125).abs()).max((obj::smooth_l1(-2.0) - 1.5).abs());
    let probs = [0.2, 0.5, 0.3];
    loss_err = loss_err.max((obj::cls_loss(&probs, 1) + 0.5f64.ln()).abs());
    let (pb, tb) = (BoxTuple { cx: 40.0, cy: 10.0, side: 20.0 }, BoxTuple { cx: 8.0, cy: 12.0, side: 16.0 });
    let hand_reg = (32.0f64 / 64.0).powi(2) * 0.5 + (2.0f64 / 32.0).powi(2) * 0.5 + (4.0f64 / 64.0).powi(2) * 0.5;
    loss_err = loss_err.max((obj::reg_loss(&pb, &tb, 32, 64) - hand_reg).abs());
    check(loss_err <= 1e-9, format!("loss formula max diff {loss_err:e}"))?;

    let mut metric_err: f64 = 0.0;
    for _ in 0..50 {
        let a = random_mask(&mut rng, 9, 11, 0.4);
        let b = random_mask(&mut rng, 9, 11, 0.4);
        let on = |g: &Grid| -> std::collections::HashSet<usize> { (0..g.data.len()).filter(|&i| g.data[i] >= 0.5).collect() };
        let (sa, sb) = (on(&a), on(&b));
        let inter = sa.intersection(&sb).count() as f64;
        let uni = sa.union(&sb).count() as f64;
        let d = if sa.len() + sb.len() == 0 { 100.0 } else { 200.0 * inter / (sa.len() + sb.len()) as f64 };
        let j = if uni == 0.0 { 100.0 } else { 100.0 * inter / uni };
        let agree = (0..a.data.len()).filter(|&i| sa.contains(&i) == sb.contains(&i)).count() as f64;
        metric_err = metric_err.max((dsc(&a, &b).unwrap() - d).abs());
        metric_err = metric_err.max((mask_iou(&a, &b).unwrap() - j).abs());
        metric_err = metric_err.max((pixel_accuracy(&a, &b).unwrap() - 100.0 * agree / 99.0).abs());
        let bx = |rng: &mut ChaCha8Rng| {
            let side = rng.random_range(1..12) as f64;
            let half = if side as i64 % 2 == 0 { 0.5 } else { 0.0 };
            BoxTuple { cx: rng.random_range(0..20) as f64 + half, cy: rng.random_range(0..20) as f64 + half, side }
        };
        let (p, g) = (bx(&mut rng), bx(&mut rng));
        let cells = |bb: &BoxTuple| -> std::collections::HashSet<(i64, i64)> {
            let (x0, y0, x1, y1) = bb.extent();
            let (x0, y0, x1, y1) = (x0.floor() as i64, y0.floor() as i64, x1.floor() as i64, y1.floor() as i64);
            (y0..y1).flat_map(|y| (x0..x1).map(move |x| (y, x))).collect()
        };
        let (cp, cg) = (cells(&p), cells(&g));
        let want = 100.0 * cp.intersection(&cg).count() as f64 / cp.union(&cg).count() as f64;
        metric_err = metric_err.max((box_iou(&p, &g) - want).abs());
    }
    let gts: Vec<u8> = (0..200).map(|_| rng.random_range(0..3)).collect();
    let preds: Vec<u8> = (0..200).map(|_| rng.random_range(0..3)).collect();
    let r = classification_report(&preds, &gts).unwrap();
    let count = |g: u8, p: &dyn Fn(u8) -> bool| gts.iter().zip(&preds).filter(|(&gg, &pp)| gg == g && p(pp)).count() as f64;
    let (tp, fnn) = (count(1, &|p| p == 1), count(1, &|p| p != 1));
    let (tn, fp) = (count(2, &|p| p == 2), count(2, &|p| p != 2));
    metric_err = metric_err.max((r.tpr - 100.0 * tp / (tp + fnn)).abs());
    metric_err = metric_err.max((r.tnr - 100.0 * tn / (tn + fp)).abs());
    metric_err = metric_err.max((r.acc - 100.0 * (tp + tn) / (tp + tn + fp + fnn)).abs());
    check(metric_err <= 1e-9, format!("metric max diff {metric_err:e}"))?;

    let t = t0.elapsed();
    check(t < Duration::from_secs(30), format!("took {t:?}"))?;
    Ok(format!(
        "sobel {sobel_err:.1e}, fsc {fsc_err:.1e}, glcm exact, losses {loss_err:.1e}, metrics {metric_err:.1e}, {:.2}s",
        t.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- CSWP invariants

fn cswp_invariants() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut cases = 0;
    for s in 1..=CANVAS {
        for _ in 0..3 {
            let mask = random_mask(&mut rng, 80, 72, 0.5);
            let b = BoxTuple { cx: rng.random_range(-5.0..77.0), cy: rng.random_range(-5.0..85.0), side: s as f64 };
            let canvas = cswp::integrate(&mask, &b).unwrap();
            let twos = canvas.values.data.iter().filter(|&&v| v == PAD_VALUE).count();
            check(twos == CANVAS * CANVAS - s * s, format!("side {s}: {twos} sentinel cells"))?;
            cases += 1;
        }
    }

    for _ in 0..40 {
        // Support kept clear of the border so no content leaves the frame under the shift.
        let noise = random_mask(&mut rng, 96, 96, 0.4);
        let mask = Grid::from_fn(96, 96, |r, c| if (32..64).contains(&r) && (32..64).contains(&c) { noise.get(r, c) } else { 0.0 });
        let side = rng.random_range(1..40) as f64;
        let b = BoxTuple { cx: rng.random_range(40..56) as f64 + 0.5, cy: rng.random_range(40..56) as f64, side };
        let (dy, dx) = (rng.random_range(-15..15), rng.random_range(-15..15));
        let shifted = Grid::from_fn(96, 96, |r, c| {
            let (sr, sc) = (r as i64 - dy, c as i64 - dx);
            if (0..96).contains(&sr) && (0..96).contains(&sc) {
                mask.get(sr as usize, sc as usize)
            } else {
                0.0
            }
        });
        let bs = BoxTuple { cx: b.cx + dx as f64, cy: b.cy + dy as f64, side };
        check(cswp::integrate(&mask, &b).unwrap().values == cswp::integrate(&shifted, &bs).unwrap().values, "hard translation")?;
        check(
            cswp::integrate_soft(&mask, &b, CswpMode::Soft).unwrap() == cswp::integrate_soft(&shifted, &bs, CswpMode::Soft).unwrap(),
            "soft translation",
        )?;
        cases += 1;
    }

    let blob = Grid::from_fn(64, 64, |r, c| {
        let d2 = (r as f64 - 30.0).powi(2) + (c as f64 - 34.0).powi(2);
        (-d2 / 60.0).exp()
    });
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let d_canvas = random_grid(&mut rng, CANVAS, CANVAS).map(|v| v - 0.5);
        let b = BoxTuple { cx: rng.random_range(26.0..38.0), cy: rng.random_range(26.0..38.0), side: rng.random_range(8.0..30.0) };
        let objective = |bb: &BoxTuple| -> f64 {
            let cv = cswp::integrate_soft(&blob, bb, CswpMode::Soft).unwrap();
            cv.data.iter().zip(&d_canvas.data).map(|(a, g)| a * g).sum()
        };
        let (_, g) = cswp::integrate_soft_backward(&blob, &b, CswpMode::Soft, &d_canvas);
        let h = 1e-5;
        let fd_x = (objective(&BoxTuple { cx: b.cx + h, ..b }) - objective(&BoxTuple { cx: b.cx - h, ..b })) / (2.0 * h);
        let fd_y = (objective(&BoxTuple { cy: b.cy + h, ..b }) - objective(&BoxTuple { cy: b.cy - h, ..b })) / (2.0 * h);
        worst = worst.max(rel_err(g[0], fd_x)).max(rel_err(g[1], fd_y));
    }
    check(worst < 1e-2, format!("soft centre gradient rel err {worst:e}"))?;
    let t = t0.elapsed();
    check(t < Duration::from_secs(30), format!("took {t:?}"))?;
    Ok(format!("{cases} partition/translation cases exact, centre FD rel err {worst:.1e}, {:.2}s", t.as_secs_f64()))
}

// ---------------------------------------------------------------- gradient flow

fn gradient_flow() -> Outcome {
    let t0 = Instant::now();
    let corpus = generate_corpus(&CorpusSpec::new(5, 8, 64, 64, ClassMix([0.0, 0.5, 0.5]))).unwrap();
    let mut cfg = desk(1);
    cfg.base_channels = 4;
    cfg.batch_size = 2;
    let mut t = Trainer::new(&corpus, &cfg, Exec::Parallel).unwrap();
    let batch = t.batch_indices(0);
    let before = t.params.clone();
    let grads = t.generator_step(&batch).map_err(|e| e.to_string())?;
    let mut audited = 0;
    for spec in before.specs() {
        let g = &grads.values()[spec.offset..spec.offset + spec.len];
        let (p0, p1) = (&before.values()[spec.offset..][..spec.len], &t.params.values()[spec.offset..][..spec.len]);
        check(g.iter().all(|v| v.is_finite()), format!("{} has a non-finite gradient", spec.name))?;
        match spec.group {
            Group::Dis => {
                check(p0 == p1, format!("{} changed during the generator step", spec.name))?;
                check(g.iter().all(|&v| v == 0.0), format!("{} received generator gradient", spec.name))?;
            }
            _ => {
                check(g.iter().any(|&v| v != 0.0), format!("{} received an identically zero gradient", spec.name))?;
                audited += 1;
            }
        }
    }
    let t = t0.elapsed();
    check(t < Duration::from_secs(60), format!("took {t:?}"))?;
    Ok(format!("{audited} generator tensors with nonzero gradient, discriminator bit-identical, {:.2}s", t.as_secs_f64()))
}

// ---------------------------------------------------------------- loss gradients

fn loss_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let h = 1e-6;
    let mut worst: f64 = 0.0;

    let pred = Grid::from_fn(3, 4, |_, _| rng.random_range(0.05..0.95));
    let tgt = random_mask(&mut rng, 3, 4, 0.5);
    let g = obj::pix_ce_grad(&pred, &tgt).unwrap();
    for i in 0..pred.data.len() {
        let (mut a, mut b) = (pred.clone(), pred.clone());
        a.data[i] += h;
        b.data[i] -= h;
        let fd = (obj::pix_ce(&a, &tgt).unwrap() - obj::pix_ce(&b, &tgt).unwrap()) / (2.0 * h);
        worst = worst.max(rel_err(g.data[i], fd));
    }

    for _ in 0..20 {
        let s: f64 = rng.random_range(0.02..0.98);
        let y = rng.random_range(0..2) as f64;
        let fd = (obj::adv_loss(s + h, y) - obj::adv_loss(s - h, y)) / (2.0 * h);
        worst = worst.max(rel_err(obj::adv_loss_grad(s, y), fd));
        let z: f64 = rng.random_range(-4.0..4.0);
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let fdz = (obj::adv_loss(sig(z + h), y) - obj::adv_loss(sig(z - h), y)) / (2.0 * h);
        worst = worst.max(rel_err(obj::adv_loss_grad_logit(sig(z), y), fdz));
    }

    for _ in 0..20 {
        let t = BoxTuple { cx: rng.random_range(5.0..50.0), cy: rng.random_range(5.0..30.0), side: rng.random_range(4.0..20.0) };
        let p = BoxTuple { cx: rng.random_range(0.0..64.0), cy: rng.random_range(0.0..40.0), side: rng.random_range(1.0..40.0) };
        let g = obj::reg_loss_grad(&p, &t, 40, 64);
        let bump = |k: usize, d: f64| {
            let mut q = p;
            match k {
                0 => q.cx += d,
                1 => q.cy += d,
                _ => q.side += d,
            }
            obj::reg_loss(&q, &t, 40, 64)
        };
        for k in 0..3 {
            let fd = (bump(k, h) - bump(k, -h)) / (2.0 * h);
            worst = worst.max(rel_err(g[k], fd));
        }
        for x in [rng.random_range(-3.0..3.0), 0.3, -1.7] {
            let fd = (obj::smooth_l1(x + h) - obj::smooth_l1(x - h)) / (2.0 * h);
            worst = worst.max(rel_err(obj::smooth_l1_grad(x), fd));
        }
    }

    let logits = [0.3, -1.2, 0.8];
    for cls in 0..3u8 {
        let g = obj::cls_loss_grad_logits(&softmax(&logits), cls);
        for k in 0..3 {
            let (mut a, mut b) = (logits, logits);
            a[k] += h;
            b[k] -= h;
            let fd = (obj::cls_loss(&softmax(&a), cls) - obj::cls_loss(&softmax(&b), cls)) / (2.0 * h);
            worst = worst.max(rel_err(g[k], fd));
        }
    }
    check(worst < 1e-3, format!("worst rel err {worst:e}"))?;
    Ok(format!("pix_ce, adv_loss, smooth_l1 box regression, class CE: worst rel err {worst:.1e}"))
}

// ---------------------------------------------------------------- overfit

fn overfit() -> Outcome {
    let t0 = Instant::now();
    let corpus = generate_corpus(&CorpusSpec::new(7, 8, 64, 64, ClassMix::default())).unwrap();
    let cfg = desk(500);
    let mut t = Trainer::new(&corpus, &cfg, Exec::Parallel).map_err(|e| e.to_string())?;
    for _ in 0..cfg.iterations {
        t.train_step().map_err(|e| e.to_string())?;
    }
    let r = t.evaluate(&corpus).map_err(|e| e.to_string())?;
    let el = t0.elapsed();
    let line = format!(
        "DSC {:.2} (>= 90), Acc {:.1} (= 100), box IoU {:.2} (>= 70), {:.0}s (< 600)",
        r.dsc,
        r.acc3,
        r.iou,
        el.as_secs_f64()
    );
    check(r.dsc >= 90.0 && r.acc3 == 100.0 && r.iou >= 70.0 && el < Duration::from_secs(600), line.clone())?;
    Ok(line)
}

// ---------------------------------------------------------------- ablation monotonicity

fn ablation_monotonicity() -> Outcome {
    let t0 = Instant::now();
    let train = generate_corpus(&CorpusSpec::new(11, 64, 64, 64, ClassMix::default())).unwrap();
    let test = generate_corpus(&CorpusSpec::new(12, 32, 64, 64, ClassMix::default())).unwrap();
    let kind = SweepKind::Ablation;
    let res = run_sweep(kind, &kind.default_variants(), &desk(600), &train, &test, 1).map_err(|e| e.to_string())?;
    let full = &res.row(&Variant::Ablation(None)).unwrap().report;
    let mut held = 0;
    let mut detail = Vec::new();
    for row in res.rows.iter().filter(|r| r.variant != Variant::Ablation(None)) {
        let ok = full.dsc >= row.report.dsc && full.acc >= row.report.acc;
        held += ok as usize;
        detail.push(format!("{}:{:.1}/{:.0}{}", row.variant.label_cells()[0], row.report.dsc, row.report.acc, if ok { "" } else { "*" }));
    }
    let line = format!(
        "full DSC/Acc {:.1}/{:.0} >= variant in {held}/5 [{}], {:.0}s",
        full.dsc,
        full.acc,
        detail.join(" "),
        t0.elapsed().as_secs_f64()
    );
    check(held >= 3, line.clone())?;
    Ok(line)
}

// ---------------------------------------------------------------- sweep shape and determinism via the binary

fn ual(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ual")).args(args).env("RUST_LOG", "warn").output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("ual {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn sweep_shape() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ual(&["generate", "--seed", "3", "--count", "4", "--height", "32", "--width", "32", "--out", data.to_str().unwrap()])?;
    let mut shapes = Vec::new();
    for (kind, header) in [("modality", "t1,t2,dwi,dsc,p_acc,iou,tpr,tnr,acc"), ("phase", "arterial,pv,delay,dsc,p_acc,iou,tpr,tnr,acc")] {
        let out = d.join(format!("{kind}.csv"));
        let s = data.to_str().unwrap();
        ual(&["sweep", "--kind", kind, "--train", s, "--test", s, "--out", out.to_str().unwrap(), "--iterations", "2", "--base-channels", "2"])?;
        let text = fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        check(lines[0] == header, format!("{kind} header {:?}", lines[0]))?;
        check(lines.len() == 8, format!("{kind} sweep has {} rows", lines.len() - 1))?;
        let labels: std::collections::HashSet<&str> = lines[1..].iter().map(|l| &l[..5]).collect();
        check(labels.len() == 7, format!("{kind} rows are not distinct combinations"))?;
        shapes.push(format!("{kind} 7 rows"));
    }
    Ok(shapes.join(", "))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();
    for run in ["a", "b"] {
        ual(&["generate", "--seed", "7", "--count", "6", "--out", &p(&format!("data_{run}"))])?;
    }
    check(tree(&d.join("data_a")) == tree(&d.join("data_b")), "generated trees differ")?;
    let common = ["--iterations", "20", "--base-channels", "4", "--checkpoint-every", "10", "--seed", "7", "--optimizer", "adam", "--learning-rate", "1e-3"];
    for run in ["a", "b"] {
        let mut args = vec!["train".to_string(), "--data".into(), p("data_a"), "--out".into(), p(&format!("run_{run}"))];
        args.extend(common.iter().map(|s| s.to_string()));
        ual(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    }
    check(tree(&d.join("run_a")) == tree(&d.join("run_b")), "training artifacts differ")?;
    for run in ["a", "b"] {
        ual(&["eval", "--data", &p("data_a"), "--checkpoint", &p("run_a/model.ckpt"), "--out", &p(&format!("eval_{run}"))])?;
    }
    check(tree(&d.join("eval_a")) == tree(&d.join("eval_b")), "evaluation outputs differ")?;

    let mut args = vec!["train".to_string(), "--data".into(), p("data_a"), "--out".into(), p("resumed"), "--resume".into(), p("run_a/checkpoints/step_000010.ckpt")];
    args.extend(["--iterations", "20"].iter().map(|s| s.to_string()));
    ual(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    check(fs::read(d.join("resumed/model.ckpt")).unwrap() == fs::read(d.join("run_a/model.ckpt")).unwrap(), "resumed model differs")?;
    let tail = |path: &str| fs::read_to_string(d.join(path)).unwrap().lines().skip(11).map(String::from).collect::<Vec<_>>();
    let continuous = tail("run_a/train_log.csv");
    let resumed: Vec<String> = fs::read_to_string(d.join("resumed/train_log.csv")).unwrap().lines().skip(1).map(String::from).collect();
    check(continuous.len() == 10 && continuous == resumed, "resumed loss rows differ")?;
    Ok("generate, train and eval bit-identical across runs; resume from step 10 equals the 20-step run".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("oracle suites", oracle_suites),
        ("cswp invariants", cswp_invariants),
        ("gradient-flow audit", gradient_flow),
        ("loss-gradient correctness", loss_gradients),
        ("overfit sanity", overfit),
        ("ablation monotonicity", ablation_monotonicity),
        ("combination sweep shape", sweep_shape),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        match f() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
