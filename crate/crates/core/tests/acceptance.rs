//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Throughput has no absolute budget; only
//! the ordering of the three generators is checked.

mod common;

use std::time::{Duration, Instant};

use common::*;
use xsal::detector::{iou, match_box, BBox, ConstantAdapter, Detection, DetectorAdapter, InputSize, MatchThresholds};
use xsal::gradcam::{gradcam_saliency, GradCamConfig};
use xsal::metrics::{auc, deletion_curve, insertion_curve, random_baseline, InsertionBase, MetricConfig};
use xsal::micro::MicroDetector;
use xsal::rise::{rise_explain, sample_mask, sample_masks, RiseConfig};
use xsal::sidu::{sidu_saliency, SiduConfig};
use xsal::tensor::{Image, Tensor2D};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn maps_of(stack: &xsal::detector::MapStack<f64>) -> Vec<Vec<f64>> {
    stack.iter().map(|m| m.data().to_vec()).collect()
}

// ---------------------------------------------------------------------------

fn generator_oracles() -> Outcome {
    let mut worst_g: f64 = 0.0;
    let mut worst_s: f64 = 0.0;
    for seed in 0..10u64 {
        let (w, h) = (32, 32);
        let det = random_micro(w, h, seed);
        let img = seeded_image(w, h, 10_000 + seed);
        let target = top_detection(&det, &img);
        let f = maps_of(&det.features(&img).map_err(|e| e.to_string())?);
        let g = maps_of(&det.grad_features(&img, &target).map_err(|e| e.to_string())?);
        let want = ref_resize(&ref_gradcam(&f, &g, true), w / 4, h / 4, w, h);
        let got = gradcam_saliency(&det, &img, &target, &GradCamConfig::default()).map_err(|e| e.to_string())?;
        worst_g = worst_g.max(max_abs_diff(got.data(), &want));

        let want = ref_sidu(&det, &img, &target, &f, w / 4, h / 4, 0.25);
        let got = sidu_saliency(&det, &img, &target, &SiduConfig::default()).map_err(|e| e.to_string())?;
        worst_s = worst_s.max(max_abs_diff(got.data(), &want));
    }
    ensure(worst_g <= 1e-6 && worst_s <= 1e-6, || format!("max |Δ| gradcam {worst_g:.2e}, sidu {worst_s:.2e}"))?;
    Ok(format!("10 configs, max |Δ| gradcam {worst_g:.1e}, sidu {worst_s:.1e}"))
}

fn gradient_correctness() -> Outcome {
    let eps = 1e-3;
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let det = random_micro(16, 16, 50 + seed);
        let img = seeded_image(16, 16, 60 + seed);
        let out = det.forward(&img).map_err(|e| e.to_string())?;
        let target = out.detections[(seed as usize * 7) % out.detections.len()];
        let cell = det.cell_of(&target.bbox).ok_or("target is not an anchor")?;
        let class = target.class_id as usize;
        let grads = det.grad_score_wrt_features(&img, &target).map_err(|e| e.to_string())?;
        let base = out.features.maps().to_vec();
        for i in 0..base.len() {
            for y in 0..4 {
                for x in 0..4 {
                    let logit_at = |delta: f64| {
                        let mut maps = base.clone();
                        let v = maps[i].get(x, y);
                        maps[i].set(x, y, v + delta);
                        det.head_logit(&xsal::detector::MapStack::new(maps).unwrap(), cell, class)
                    };
                    let fd = (logit_at(eps) - logit_at(-eps)) / (2.0 * eps);
                    let an = grads.maps()[i].get(x, y);
                    if an != 0.0 || fd != 0.0 {
                        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()));
                    }
                }
            }
        }
    }
    ensure(worst < 1e-3, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("10 cases, max relative error {worst:.1e}"))
}

fn rise_statistics() -> Outcome {
    // Constant adapter: every pixel within 3 standard errors of k.
    let (w, h, k) = (32, 32, 0.7);
    let c = ConstantAdapter::new(InputSize::rgb(w, h), k).map_err(|e| e.to_string())?;
    let img = seeded_image(w, h, 1);
    let cfg = RiseConfig { n_masks: 2000, seed: 11, ..Default::default() };
    let out = rise_explain(&c, &img, &c.detection(), &cfg).map_err(|e| e.to_string())?;
    let n = cfg.n_masks as f64;
    let (mut sum, mut sq) = (vec![0.0; w * h], vec![0.0; w * h]);
    for i in 0..cfg.n_masks {
        let m: Tensor2D<f64> = sample_mask(&cfg, i, w, h).map_err(|e| e.to_string())?;
        for (p, &v) in m.data().iter().enumerate() {
            let x = k * v / cfg.p_on;
            sum[p] += x;
            sq[p] += x * x;
        }
    }
    let mut worst_z: f64 = 0.0;
    for p in 0..w * h {
        let mean = sum[p] / n;
        let se = ((sq[p] / n - mean * mean) * n / (n - 1.0) / n).sqrt();
        worst_z = worst_z.max((out.saliency.data()[p] - k).abs() / se);
    }
    ensure(worst_z <= 3.0, || format!("a pixel deviates by {worst_z:.2} standard errors"))?;

    // Degenerate probabilities.
    for (p, v) in [(0.0, 0.0), (1.0, 1.0)] {
        let masks = sample_masks::<f64>(&RiseConfig { p_on: p, n_masks: 50, ..Default::default() }, w, h)
            .map_err(|e| e.to_string())?;
        ensure(masks.iter().all(|m| m.data().iter().all(|&x| x == v)), || format!("p_on={p} masks not all {v}"))?;
    }

    // Bitwise determinism across thread counts.
    let det = random_micro(32, 32, 5);
    let img = seeded_image(32, 32, 6);
    let target = top_detection(&det, &img);
    let rcfg = RiseConfig { n_masks: 200, seed: 3, ..Default::default() };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| rise_explain(&det, &img, &target, &rcfg).unwrap().saliency)
    };
    let (one, four) = (run(1), run(4));
    ensure(one.data().iter().zip(four.data()).all(|(a, b)| a.to_bits() == b.to_bits()), || {
        "1-thread and 4-thread maps differ".into()
    })?;
    Ok(format!("max deviation {worst_z:.2} SE at N=2000; p_on 0/1 exact; 1 vs 4 threads bitwise equal"))
}

fn causal_metric_oracle() -> Outcome {
    let img = Image::filled(2, 2, 3, 1.0);
    let target = ToyScorer::box_();
    let cfg = MetricConfig { steps: 4, insertion_base: InsertionBase::Fill { value: 0.0 }, ..Default::default() };
    let sal = tensor(2, 2, TOY_WEIGHTS.to_vec());
    let del = auc(&deletion_curve(&ToyScorer, &img, &target, &sal, &cfg).map_err(|e| e.to_string())?);
    let ins = auc(&insertion_curve(&ToyScorer, &img, &target, &sal, &cfg).map_err(|e| e.to_string())?);
    let (mut min_del, mut max_ins) = (f64::INFINITY, f64::NEG_INFINITY);
    for order in permutations(4) {
        let (mut removed, mut added) = ([1.0; 4], [0.0; 4]);
        let mut d = vec![ToyScorer::score_of(&removed)];
        let mut i = vec![0.0];
        for &p in &order {
            removed[p] = 0.0;
            added[p] = 1.0;
            let floor = |s: f64| if s >= 0.05 { s } else { 0.0 };
            d.push(floor(ToyScorer::score_of(&removed)));
            i.push(floor(ToyScorer::score_of(&added)));
        }
        min_del = min_del.min(ref_auc(&d));
        max_ins = max_ins.max(ref_auc(&i));
    }
    ensure((del - min_del).abs() < 1e-12 && (ins - max_ins).abs() < 1e-12, || {
        format!("deletion {del} vs min {min_del}, insertion {ins} vs max {max_ins}")
    })?;
    Ok(format!("24 orderings; deletion {del:.4} = min, insertion {ins:.4} = max"))
}

fn better_than_random() -> Outcome {
    let (w, h) = (32, 32);
    let images = 20u64;
    let det = brightness_micro(w, h);
    let cfg = MetricConfig::default();
    let mut wins = [0usize; 3];
    let names = ["Grad-CAM", "RISE", "SIDU"];
    for i in 0..images {
        let img = blob_image(w, h, 9_000 + i);
        let target = top_detection(&det, &img);
        let base = random_baseline(&det, &img, &target, &cfg, i, 20).map_err(|e| e.to_string())?;
        let maps = [
            gradcam_saliency(&det, &img, &target, &GradCamConfig::default()),
            rise_explain(&det, &img, &target, &RiseConfig { seed: i, ..Default::default() }).map(|o| o.saliency),
            sidu_saliency(&det, &img, &target, &SiduConfig::default()),
        ];
        for (g, map) in maps.into_iter().enumerate() {
            let map = map.map_err(|e| format!("{}: {e}", names[g]))?;
            let d = auc(&deletion_curve(&det, &img, &target, &map, &cfg).map_err(|e| e.to_string())?);
            let s = auc(&insertion_curve(&det, &img, &target, &map, &cfg).map_err(|e| e.to_string())?);
            if d < base.deletion_auc && s > base.insertion_auc {
                wins[g] += 1;
            }
        }
    }
    let detail = names.iter().zip(wins).map(|(n, c)| format!("{n} {c}/{images}")).collect::<Vec<_>>().join(", ");
    ensure(wins.iter().all(|&c| c * 10 >= images as usize * 9), || detail.clone())?;
    Ok(detail)
}

fn procedure_fidelity() -> Outcome {
    let th = MatchThresholds::default();
    ensure((th.score_min, th.iou_min) == (0.05, 0.5), || format!("thresholds {th:?}"))?;
    let target = Detection::new(BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), 0, 0.9).unwrap();
    let shifted = |q: f64| {
        let s = 10.0 * (1.0 - q) / (1.0 + q);
        BBox::new(s, 0.0, 10.0 + s, 10.0).unwrap()
    };
    let dup = target;
    let a = Detection::new(shifted(0.6), 0, 0.9).unwrap();
    let b = Detection::new(shifted(0.8), 0, 0.3).unwrap();
    let weak = Detection::new(target.bbox, 0, 0.04).unwrap();
    ensure(match_box(&[a, dup], &target, th) == Some(dup), || "duplicate not matched".into())?;
    ensure((iou(&a.bbox, &target.bbox) - 0.6).abs() < 1e-12, || "iou fixture".into())?;
    ensure(match_box(&[a, b], &target, th) == Some(b), || "highest IoU not selected".into())?;
    ensure(match_box(&[weak], &target, th).is_none(), || "score 0.04 matched".into())?;
    let r = RiseConfig::default();
    ensure((r.n_masks, r.grid, r.p_on) == (500, 8, 0.1), || format!("RISE defaults {r:?}"))?;
    Ok("match_box examples exact; RISE defaults (500, 8x8, 0.1)".into())
}

fn gradcam_relu_variants() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut min_on = f64::INFINITY;
    let mut negative_seen = false;
    for seed in 0..10u64 {
        let det = random_micro(32, 32, 200 + seed);
        let img = seeded_image(32, 32, 300 + seed);
        let target = top_detection(&det, &img);
        let on = gradcam_saliency(&det, &img, &target, &GradCamConfig::default()).map_err(|e| e.to_string())?;
        min_on = min_on.min(on.min());
        let cfg = GradCamConfig { upsample_to_input: false, ..GradCamConfig::without_relu() };
        let off = gradcam_saliency(&det, &img, &target, &cfg).map_err(|e| e.to_string())?;
        let f = maps_of(&det.features(&img).unwrap());
        let g = maps_of(&det.grad_features(&img, &target).unwrap());
        worst = worst.max(max_abs_diff(off.data(), &ref_gradcam(&f, &g, false)));
        negative_seen |= off.min() < 0.0;
    }
    ensure(min_on >= 0.0, || format!("ReLU-on minimum {min_on}"))?;
    ensure(worst <= 1e-6, || format!("ReLU-free max |Δ| {worst:.2e}"))?;
    Ok(format!(
        "ReLU-on min {min_on:.2e} >= 0; ReLU-free max |Δ| {worst:.1e}{}",
        if negative_seen { " (negative values present)" } else { "" }
    ))
}

fn throughput() -> Outcome {
    let n = 512;
    let det: MicroDetector<f64> = brightness_micro(n, n);
    let img = blob_image(n, n, 1);
    let target = top_detection(&det, &img);
    let time = |f: &dyn Fn()| {
        let t = Instant::now();
        f();
        t.elapsed()
    };
    let g = time(&|| {
        gradcam_saliency(&det, &img, &target, &GradCamConfig::default()).unwrap();
    });
    let s = time(&|| {
        sidu_saliency(&det, &img, &target, &SiduConfig::default()).unwrap();
    });
    let r = time(&|| {
        rise_explain(&det, &img, &target, &RiseConfig::default()).unwrap();
    });
    let detail = format!("gradcam {g:.2?}, sidu {s:.2?}, rise(500) {r:.2?}");
    if g < s && s < r {
        Ok(detail)
    } else {
        Err(format!("ordering not observed: {detail}"))
    }
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
    report_only: bool,
}

fn main() {
    let criteria = [
        Criterion { name: "generator oracles", budget: Duration::from_secs(10), run: generator_oracles, report_only: false },
        Criterion { name: "gradient correctness", budget: Duration::from_secs(30), run: gradient_correctness, report_only: false },
        Criterion { name: "RISE statistics", budget: Duration::from_secs(60), run: rise_statistics, report_only: false },
        Criterion { name: "causal-metric oracle", budget: Duration::from_secs(1), run: causal_metric_oracle, report_only: false },
        Criterion { name: "better than random", budget: Duration::from_secs(300), run: better_than_random, report_only: false },
        Criterion { name: "procedure fidelity", budget: Duration::from_secs(1), run: procedure_fidelity, report_only: false },
        Criterion { name: "Grad-CAM ReLU variants", budget: Duration::from_secs(5), run: gradcam_relu_variants, report_only: false },
        Criterion { name: "throughput ordering", budget: Duration::MAX, run: throughput, report_only: false },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > c.budget => Err(format!("{d}; over budget {:?}", c.budget)),
            o => o,
        };
        let (tag, detail) = match (&outcome, c.report_only) {
            (Ok(d), _) => ("PASS", d.clone()),
            (Err(d), true) => ("INFO", d.clone()),
            (Err(d), false) => {
                failed += 1;
                ("FAIL", d.clone())
            }
        };
        println!("{tag} {:<24} {:>9.2?}  {detail}", c.name, took);
    }
    println!("acceptance: {} of {} criteria failed", failed, criteria.iter().filter(|c| !c.report_only).count());
    if failed > 0 {
        std::process::exit(1);
    }
}
