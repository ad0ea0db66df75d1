//! Acceptance run: one PASS/FAIL line per criterion, in order.
//!
//! Built with `harness = false`, so criteria run sequentially and their
//! runtimes are not skewed by parallel tests.

use std::time::{Duration, Instant};

use glee_core::au::{sigmoid, weighted_ce, weighted_ce_logits, AuClassifier, ClassifierConfig, DatasetStats};
use glee_core::embed::{triplet_loss, triplet_loss_grad, EmbeddingConfig};
use glee_core::eval::{ave_var, evaluate, f1_per_au};
use glee_core::geometry::{crop_image, crop_region, CropName, Rect, RgbImage};
use glee_core::morphable::synthetic::project_landmarks;
use glee_core::morphable::{fit_coefficients, FitConfig};
use glee_core::tensor::{Graph, ParamStore, Tensor};
use glee_core::train::fixtures::{fitting_scenes, ClusterFixture, PlantedAuFixture};
use glee_core::train::{
    finetune, pretrain, pretrain_with, ranking_accuracy, Checkpoint, FaceSample, GleeModel, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: Vec<(&str, Option<Duration>, fn() -> Outcome)> = vec![
        ("1 crop geometry", Some(Duration::from_secs(1)), crop_geometry),
        (
            "2 3DMM round trip",
            Some(Duration::from_secs(120)),
            morphable_round_trip,
        ),
        ("3 loss identities", None, loss_identities),
        ("4 gradient checks", Some(Duration::from_secs(30)), gradient_checks),
        ("5 architecture invariants", None, architecture_invariants),
        (
            "6 pretraining sanity",
            Some(Duration::from_secs(300)),
            pretraining_sanity,
        ),
        ("7 finetuning sanity", Some(Duration::from_secs(300)), finetuning_sanity),
        ("8 evaluation correctness", None, evaluation_correctness),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let result = match (result, limit) {
            (Ok(detail), Some(limit)) if elapsed > limit => {
                Err(format!("{detail}; exceeded {:.0} s", limit.as_secs_f64()))
            }
            (r, _) => r,
        };
        let budget = limit
            .map(|l| format!(" / {:.0} s", l.as_secs_f64()))
            .unwrap_or_default();
        match result {
            Ok(detail) => println!(
                "PASS criterion {name}: {detail} [{:.2} s{budget}]",
                elapsed.as_secs_f64()
            ),
            Err(detail) => {
                failed += 1;
                println!(
                    "FAIL criterion {name}: {detail} [{:.2} s{budget}]",
                    elapsed.as_secs_f64()
                );
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

/// Rectangle from the textual crop name: T/B keep the top/bottom rows,
/// L/R the left/right columns; `12` keeps ceil(half) and `34` ceil(3/4).
fn oracle_rect(name: &str, h: usize, w: usize) -> Rect {
    let frac = if name.ends_with("34") { 0.75 } else { 0.5 };
    let span = |dim: usize| (frac * dim as f64).ceil() as usize;
    let (mut r0, mut r1, mut c0, mut c1) = (0, h, 0, w);
    if name.contains('T') {
        r1 = span(h);
    }
    if name.contains('B') {
        r0 = h - span(h);
    }
    if name.contains('L') {
        c1 = span(w);
    }
    if name.contains('R') {
        c0 = w - span(w);
    }
    Rect {
        row_start: r0,
        row_end: r1,
        col_start: c0,
        col_end: c1,
    }
}

fn crop_geometry() -> Outcome {
    let sizes = [96, 128, 176];
    let mut rects = 0;
    for h in sizes {
        for w in sizes {
            for name in CropName::ALL {
                let got = crop_region(name, h, w).map_err(|e| e.to_string())?;
                check!(got == oracle_rect(name.as_str(), h, w), "{name} at {h}x{w}: {got:?}");
                rects += 1;
            }
        }
    }
    let mut worst = 0.0f32;
    for size in sizes {
        let img = RgbImage::from_fn(size, size, |r, c| {
            let x = ((r * 7 + c * 13) % 17) as f32 / 16.0;
            [x, c as f32 / size as f32, ((r * c) % 5) as f32 / 4.0]
        });
        let crops = crop_image(&img).map_err(|e| e.to_string())?;
        let mirrored = crop_image(&img.mirror_horizontal()).map_err(|e| e.to_string())?;
        for name in CropName::ALL {
            let a = mirrored.get(name);
            let b = crops.get(name.mirrored()).mirror_horizontal();
            let diff = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            worst = worst.max(diff);
        }
    }
    check!(worst <= 1e-6, "mirror mismatch {worst}");
    Ok(format!("{rects} rectangles match; mirror max diff {worst:e}"))
}

fn morphable_round_trip() -> Outcome {
    let (model, scenes) = fitting_scenes(2024, 50).map_err(|e| e.to_string())?;
    let cfg = FitConfig::default();
    let mut good = 0;
    let mut monotone = 0;
    let mut worst_rmse = 0.0f64;
    for scene in &scenes {
        let bound = scene.f_s.iter().chain(&scene.f_exp).fold(0.0f64, |a, v| a.max(v.abs()));
        check!(bound <= 1.0, "scene coefficients exceed 1: {bound}");
        let fit = fit_coefficients(&model, &scene.landmarks, &cfg).map_err(|e| e.to_string())?;
        if fit.cost_history.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        }
        let rmse = (fit
            .f_exp
            .iter()
            .zip(&scene.f_exp)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / fit.f_exp.len() as f64)
            .sqrt();
        let (h, _) = scene.landmarks.image_size();
        let proj = project_landmarks(&model, &fit.f_s, &fit.f_exp, &fit.pose, h).map_err(|e| e.to_string())?;
        let reproj = proj
            .points()
            .iter()
            .zip(scene.landmarks.points())
            .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
            .sum::<f64>()
            / 68.0;
        worst_rmse = worst_rmse.max(rmse);
        if rmse < 0.05 && reproj < 0.5 {
            good += 1;
        }
    }
    check!(
        monotone == scenes.len(),
        "cost increased in {} runs",
        scenes.len() - monotone
    );
    check!(
        good * 100 >= 95 * scenes.len(),
        "only {good}/{} scenes recovered",
        scenes.len()
    );
    Ok(format!(
        "{good}/50 scenes recovered (worst f_exp RMSE {worst_rmse:.4}); cost monotone in 50/50"
    ))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dyadic_vec(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..16)
        .map(|_| f64::from(rng.random_range(-64i32..=64)) / 64.0)
        .collect()
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for m in [0.1, 0.2, 0.5, 1.0] {
        let v = random_vec(&mut rng, 16);
        let l = triplet_loss(&v, &v, &v, m).map_err(|e| e.to_string())?;
        check!(l == 2.0 * m, "coincident triplet gave {l} for margin {m}");
    }
    let hand = weighted_ce(&[0.5], &[1], &DatasetStats::new(vec![0.5]).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let hand_err = (hand - 2.0 * std::f64::consts::LN_2).abs();
    check!(hand_err < 1e-9, "weighted CE hand case off by {hand_err}");
    let mut cases = 0;
    for _ in 0..200 {
        let (a, p, n) = (dyadic_vec(&mut rng), dyadic_vec(&mut rng), dyadic_vec(&mut rng));
        if [&a, &p, &n].iter().any(|v| v.iter().all(|&x| x == 0.0)) {
            continue;
        }
        let base = triplet_loss(&a, &p, &n, 0.2).map_err(|e| e.to_string())?;
        for k in [0.5, 3.0, 100.0] {
            let s = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
            let scaled = triplet_loss(&s(&a), &s(&p), &s(&n), 0.2).map_err(|e| e.to_string())?;
            check!(scaled == base, "scale {k}: {scaled} vs {base}");
            cases += 1;
        }
    }
    Ok(format!(
        "coincident = 2m exactly; hand case error {hand_err:.1e}; {cases} exact scale checks (k in 0.5, 3, 100, exactly representable inputs)"
    ))
}

/// Largest entry of `|analytic - central|`, relative to the larger gradient.
fn relative_error(analytic: &[f64], central: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(central)
        .map(|(a, c)| (a - c).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().chain(central).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn gradient_checks() -> Outcome {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut triplet_worst, mut skipped, mut done) = (0.0f64, 0, 0);
    while done < 100 {
        let (a, p, n) = (
            random_vec(&mut rng, 16),
            random_vec(&mut rng, 16),
            random_vec(&mut rng, 16),
        );
        let m = rng.random_range(0.05..1.0);
        let g = triplet_loss_grad(&a, &p, &n, m).map_err(|e| e.to_string())?;
        // Instances within reach of a hinge kink have no central derivative.
        let near_kink = [(&a, &p, &n), (&p, &a, &n)].iter().any(|(x, y, z)| {
            let unit = |v: &[f64]| {
                let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
                v.iter().map(|t| t / norm).collect::<Vec<_>>()
            };
            let d = |u: &[f64], w: &[f64]| u.iter().zip(w).map(|(s, t)| (s - t).powi(2)).sum::<f64>();
            let (ux, uy, uz) = (unit(x), unit(y), unit(z));
            (d(&ux, &uy) - d(&ux, &uz) + m).abs() < 1e-3
        });
        if near_kink {
            skipped += 1;
            continue;
        }
        let mut analytic = Vec::new();
        let mut central = Vec::new();
        for (which, grad) in [(0, &g.anchor), (1, &g.positive), (2, &g.negative)] {
            for i in 0..16 {
                let eval = |delta: f64| {
                    let mut v = [a.clone(), p.clone(), n.clone()];
                    v[which][i] += delta;
                    triplet_loss(&v[0], &v[1], &v[2], m)
                };
                let fd = (eval(h).map_err(|e| e.to_string())? - eval(-h).map_err(|e| e.to_string())?) / (2.0 * h);
                analytic.push(grad[i]);
                central.push(fd);
            }
        }
        let err = relative_error(&analytic, &central);
        check!(err < 1e-4, "triplet instance {done}: relative error {err:.2e}");
        triplet_worst = triplet_worst.max(err);
        done += 1;
    }
    let mut ce_worst = 0.0f64;
    for i in 0..100 {
        let na = rng.random_range(1..=12);
        let z: Vec<f64> = (0..na).map(|_| rng.random_range(-6.0..6.0)).collect();
        let labels: Vec<u8> = (0..na).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let stats =
            DatasetStats::new((0..na).map(|_| rng.random_range(0.01..1.0)).collect()).map_err(|e| e.to_string())?;
        let (_, grad) = weighted_ce_logits(&z, &labels, &stats).map_err(|e| e.to_string())?;
        let loss = |z: &[f64]| {
            let probs: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
            weighted_ce(&probs, &labels, &stats)
        };
        let mut central = Vec::with_capacity(na);
        for k in 0..na {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[k] += h;
            zm[k] -= h;
            central.push((loss(&zp).map_err(|e| e.to_string())? - loss(&zm).map_err(|e| e.to_string())?) / (2.0 * h));
        }
        let err = relative_error(&grad, &central);
        check!(err < 1e-4, "weighted CE instance {i}: relative error {err:.2e}");
        ce_worst = ce_worst.max(err);
    }
    Ok(format!(
        "triplet worst {triplet_worst:.2e} over 100 ({skipped} near-kink draws redrawn); weighted CE worst {ce_worst:.2e} over 100"
    ))
}

fn snapshot(model: &GleeModel, prefix: &str) -> Vec<(String, Vec<f32>)> {
    model
        .store
        .iter()
        .filter(|(_, p)| p.name.starts_with(prefix))
        .map(|(_, p)| (p.name.clone(), p.value.data().to_vec()))
        .collect()
}

fn rows_sum_to_one(t: &Tensor) -> f64 {
    let n = *t.shape().last().unwrap();
    t.data()
        .chunks(n)
        .map(|row| (row.iter().map(|&v| f64::from(v)).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn architecture_invariants() -> Outcome {
    let mut cfg = TrainConfig::pretrain();
    cfg.embedding = EmbeddingConfig::compact();
    cfg.epochs = 3;
    cfg.batch_size = 4;
    let fx = ClusterFixture::generate(5, 8, 2, 4).map_err(|e| e.to_string())?;
    let samples = fx.samples(&cfg.alignment).map_err(|e| e.to_string())?;
    let data = fx.data(&samples, false).map_err(|e| e.to_string())?;
    let initial = GleeModel::new(&cfg.embedding, &cfg.classifier, cfg.seed).map_err(|e| e.to_string())?;
    let identity = snapshot(&initial, "global.identity");
    let probe: Vec<&FaceSample> = samples.iter().take(3).collect();
    let mut steps = 0;
    let mut additivity = 0.0f32;
    let mut frozen = true;
    let ckpt = pretrain_with(&data, &cfg, &mut |_, _, model| {
        steps += 1;
        frozen &= snapshot(model, "global.identity") == identity;
        for e in model.embed(&probe)? {
            for ((&x, &g), &l) in e.embedding.iter().zip(&e.global).zip(&e.local) {
                additivity = additivity.max((x - (g + l)).abs());
            }
        }
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    check!(frozen, "identity weights changed during pretraining");
    check!(
        snapshot(&ckpt.model, "global.identity") == identity,
        "identity weights changed"
    );
    check!(additivity <= 1e-6, "E - (G + L) reached {additivity}");

    // Encoder equivariance and attention normalization on the trained model and a fresh classifier.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let classifier =
        AuClassifier::new(&mut store, &mut rng, &ClassifierConfig::with_aus(12)).map_err(|e| e.to_string())?;
    let mut worst_equiv = 0.0f32;
    let mut worst_rows = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f32> = (0..2 * 12 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut perm: Vec<usize> = (0..12).collect();
        perm.shuffle(&mut rng);
        let mut px = Vec::with_capacity(x.len());
        for n in 0..2 {
            for &src in &perm {
                px.extend_from_slice(&x[(n * 12 + src) * 32..(n * 12 + src + 1) * 32]);
            }
        }
        let run = |data: Vec<f32>| -> Result<(Tensor, Vec<Tensor>), String> {
            let mut g = Graph::new(&store);
            let v = g.input(Tensor::new(&[2, 12, 32], data).map_err(|e| e.to_string())?);
            let (y, att) = classifier.encode(&mut g, v).map_err(|e| e.to_string())?;
            Ok((g.value(y).clone(), att.iter().map(|&a| g.value(a).clone()).collect()))
        };
        let (y, att) = run(x)?;
        let (py, _) = run(px)?;
        for n in 0..2 {
            for (i, &src) in perm.iter().enumerate() {
                let a = &py.data()[(n * 12 + i) * 32..(n * 12 + i + 1) * 32];
                let b = &y.data()[(n * 12 + src) * 32..(n * 12 + src + 1) * 32];
                for (u, v) in a.iter().zip(b) {
                    worst_equiv = worst_equiv.max((u - v).abs());
                }
            }
        }
        for w in &att {
            worst_rows = worst_rows.max(rows_sum_to_one(w));
        }
    }
    let f_exp = vec![0.1f64; glee_core::morphable::NUM_EXPR];
    {
        let model = &ckpt.model;
        let mut g = Graph::new(&model.store);
        let coeffs: Vec<&[f64]> = probe.iter().map(|_| f_exp.as_slice()).collect();
        let vars = model.forward(&mut g, &probe, &coeffs).map_err(|e| e.to_string())?;
        for &w in vars.embedding.attention.iter().chain(&vars.classifier.attention) {
            worst_rows = worst_rows.max(rows_sum_to_one(g.value(w)));
        }
    }
    check!(worst_equiv <= 1e-5, "permutation equivariance error {worst_equiv}");
    check!(worst_rows <= 1e-6, "attention row sum error {worst_rows}");
    Ok(format!(
        "identity bitwise frozen over {steps} steps / 3 epochs; max |E-(G+L)| {additivity:e}; equivariance error {worst_equiv:.1e}; row-sum error {worst_rows:.1e}"
    ))
}

fn pretraining_sanity() -> Outcome {
    let cfg = TrainConfig::pretrain();
    check!(
        cfg.epochs == 10
            && cfg.batch_size == 30
            && cfg.optimizer.learning_rate == 2e-4
            && cfg.optimizer.momentum == 0.9,
        "schedule differs from SGD 0.9 / 2e-4 / batch 30 / 10 epochs"
    );
    let fx = ClusterFixture::generate(11, 200, 100, 12).map_err(|e| e.to_string())?;
    let samples = fx.samples(&cfg.alignment).map_err(|e| e.to_string())?;
    let train = fx.data(&samples, false).map_err(|e| e.to_string())?;
    let heldout = fx.data(&samples, true).map_err(|e| e.to_string())?;
    let ckpt = pretrain(&train, &cfg).map_err(|e| e.to_string())?;
    let h = &ckpt.meta.loss_history;
    check!(h.len() == 10, "loss history has {} entries", h.len());
    let (first, last) = (h[0], h[h.len() - 1]);
    check!(
        last < first,
        "mean triplet loss did not decrease: {first:.4} -> {last:.4}"
    );
    let acc = ranking_accuracy(&ckpt.model, &heldout).map_err(|e| e.to_string())?;
    check!(acc >= 0.95, "held-out ranking accuracy {acc:.3}");
    Ok(format!(
        "mean loss {first:.4} -> {last:.4}; held-out ranking accuracy {acc:.3} on {} triplets",
        heldout.len()
    ))
}

fn finetuning_sanity() -> Outcome {
    let fx = PlantedAuFixture::generate(3, 60, 12, 6).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig::finetune();
    cfg.embedding = EmbeddingConfig::compact();
    cfg.epochs = 200;
    cfg.batch_size = 10;
    cfg.stop_when_perfect = true;
    let data = fx.data(&cfg.alignment).map_err(|e| e.to_string())?;
    let stats = DatasetStats::from_labels(&data.labels()).map_err(|e| e.to_string())?;

    // A short pretraining run on a separate cluster fixture supplies the initial branches.
    let mut pcfg = TrainConfig::pretrain();
    pcfg.embedding = cfg.embedding.clone();
    pcfg.epochs = 6;
    let cluster = ClusterFixture::generate(12, 100, 50, 12).map_err(|e| e.to_string())?;
    let samples = cluster.samples(&pcfg.alignment).map_err(|e| e.to_string())?;
    let pre = pretrain(&cluster.data(&samples, false).map_err(|e| e.to_string())?, &pcfg).map_err(|e| e.to_string())?;
    let pre_acc = ranking_accuracy(&pre.model, &cluster.data(&samples, true).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let untrained = GleeModel::new(&pcfg.embedding, &pcfg.classifier, pcfg.seed).map_err(|e| e.to_string())?;
    let moved = snapshot(&pre.model, "")
        .iter()
        .zip(snapshot(&untrained, ""))
        .flat_map(|((_, a), (_, b))| a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        .fold(0.0f32, f32::max);

    let tuned = finetune(&data, Some(&pre), &stats, &cfg).map_err(|e| e.to_string())?;
    let report = evaluate(&tuned.model, &data).map_err(|e| e.to_string())?.report;
    check!(
        report.average_f1 == 1.0,
        "pretrained init reached training F1 {:.4}",
        report.average_f1
    );
    let epochs = tuned.meta.loss_history.len();
    check!(epochs <= 200, "ran {epochs} epochs");

    let mut ablation = cfg.clone();
    ablation.fresh_start = true;
    let fresh = finetune(&data, None, &stats, &ablation).map_err(|e| e.to_string())?;
    let fresh_f1 = evaluate(&fresh.model, &data)
        .map_err(|e| e.to_string())?
        .report
        .average_f1;
    let dir = std::env::temp_dir().join(format!("glee-acceptance-{}", std::process::id()));
    tuned.save(&dir).map_err(|e| e.to_string())?;
    let early = |c: &Checkpoint| c.meta.f1_history.get(4).copied().unwrap_or(f64::NAN);
    Ok(format!(
        "init held-out ranking {pre_acc:.3}, max weight change {moved:.3}; pretrained init: F1 1.0 after {epochs} epochs (epoch 5 F1 {:.3}); w/o pretrain: F1 {fresh_f1:.4} after {} epochs (epoch 5 F1 {:.3})",
        early(&tuned),
        fresh.meta.loss_history.len(),
        early(&fresh)
    ))
}

fn evaluation_correctness() -> Outcome {
    let cases: [(usize, usize, usize, usize, f64); 10] = [
        (2, 1, 1, 0, 2.0 / 3.0),
        (5, 0, 0, 5, 1.0),
        (0, 3, 2, 1, 0.0),
        (1, 0, 3, 2, 2.0 / 5.0),
        (3, 3, 0, 0, 2.0 / 3.0),
        (4, 1, 2, 9, 8.0 / 11.0),
        (1, 1, 1, 1, 1.0 / 2.0),
        (7, 2, 5, 0, 14.0 / 21.0),
        (10, 0, 1, 4, 20.0 / 21.0),
        (0, 0, 0, 6, 1.0),
    ];
    for (tp, fp, fn_, tn, want) in cases {
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for (count, p, l) in [
            (tp, true, true),
            (fp, true, false),
            (fn_, false, true),
            (tn, false, false),
        ] {
            preds.extend(std::iter::repeat([p]).take(count));
            labels.extend(std::iter::repeat([l]).take(count));
        }
        let r = f1_per_au(&preds, &labels).map_err(|e| e.to_string())?;
        check!(
            r.per_au[0].f1 == want,
            "({tp},{fp},{fn_},{tn}) gave {} not {want}",
            r.per_au[0].f1
        );
    }
    let e: Vec<f32> = (0..16).map(|i| (i as f32 - 7.5) / 3.0).collect();
    let neg: Vec<f32> = e.iter().map(|v| -v).collect();
    let av = ave_var(&[e.clone(), neg], &[[1u8], [1]]).map_err(|e| e.to_string())?;
    let want: f64 = e.iter().map(|&v| 2.0 * f64::from(v) * f64::from(v)).sum();
    check!(av.ave_var == want, "two-point Ave-Var {} vs {want}", av.ave_var);

    let dir = std::env::temp_dir().join(format!("glee-acceptance-{}", std::process::id()));
    let saved = Checkpoint::load(&dir).map_err(|e| format!("needs the criterion 7 checkpoint: {e}"))?;
    let fx = PlantedAuFixture::generate(3, 60, 12, 6).map_err(|e| e.to_string())?;
    let data = fx.data(&saved.meta.config.alignment).map_err(|e| e.to_string())?;
    let resaved = dir.with_extension("copy");
    saved.save(&resaved).map_err(|e| e.to_string())?;
    let loaded = Checkpoint::load(&resaved).map_err(|e| e.to_string())?;
    let samples: Vec<&FaceSample> = data.frames.iter().map(|f| &f.sample).collect();
    let coeffs: Vec<&[f64]> = data.frames.iter().map(|f| f.f_exp.as_slice()).collect();
    let before = saved.model.predict(&samples, &coeffs).map_err(|e| e.to_string())?;
    let after = loaded.model.predict(&samples, &coeffs).map_err(|e| e.to_string())?;
    let _ = std::fs::remove_dir_all(&dir);
    let _ = std::fs::remove_dir_all(&resaved);
    check!(before == after, "reloaded checkpoint changed predictions");
    Ok(format!(
        "10/10 confusion tables exact; two-point Ave-Var = 2|e|^2 = {want} exactly; round trip bitwise on {} frames",
        samples.len()
    ))
}
