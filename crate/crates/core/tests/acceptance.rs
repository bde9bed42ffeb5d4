//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{lively_params, oracles, random_gt, random_image, random_pred, rng};
use tscnet::checkpoint;
use tscnet::data::{generate_dataset, generate_sample, SynthConfig};
use tscnet::harness;
use tscnet::metrics::{self, Map};
use tscnet::model::tscm::branch_schedule;
use tscnet::model::{forward, input, Mode};
use tscnet::objective::{bce_loss, iou_loss};
use tscnet::params::param_specs;
use tscnet::{ModelConfig, ParamStore, RunConfig, TrainConfig, Units};
use tscnet_tensor::kernels::attention::channelwise_attention_forward;
use tscnet_tensor::{AllocCounter, FiniteDiffOptions, Graph, Padding, Tensor};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let report = ok(harness::gradcheck(&ModelConfig::micro(), 0, &FiniteDiffOptions::default()))?;
    let elapsed = start.elapsed();
    for group in ["fe.", ".pau.", ".tru.", ".tru.beta", ".msp.", "shared_vit.", "sp."] {
        ensure!(report.entries.iter().any(|e| e.name.contains(group)), "no parameters matching {group}");
    }
    let worst = report.entries.iter().max_by(|a, b| a.max_error.total_cmp(&b.max_error)).unwrap();
    ensure!(report.max_error() < 1e-4, "{} has relative error {:.3e}", worst.name, worst.max_error);
    ensure!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    Ok(format!(
        "{} tensors, max relative error {:.2e} ({}), {:.0} s",
        report.entries.len(),
        report.max_error(),
        worst.name,
        elapsed.as_secs_f64()
    ))
}

fn check_shapes(cfg: &ModelConfig) -> Result<(), String> {
    let s = cfg.size;
    let c = cfg.channels;
    let params = ok(ParamStore::init(cfg, 0))?;
    let mut g = Graph::<f32>::new();
    let p = params.bind_frozen(&mut g);
    let x = ok(input(&mut g, &random_image(1, s)))?;
    let out = ok(forward(&mut g, &p, cfg, x, Mode::Eval))?;
    for i in 1..=5 {
        let side = s >> (i - 1);
        ensure!(g.dims(out.features.level(i)) == [c, side, side], "S={s}: level {i} is {:?}", g.dims(out.features.level(i)));
    }
    for t in &out.tscm {
        let side = 2 * (s >> (t.level - 1));
        ensure!(g.dims(t.f_ts) == [c, side, side], "S={s}: TSCM {} output is {:?}", t.level, g.dims(t.f_ts));
    }
    ensure!(g.dims(out.s2) == [1, s, s], "S={s}: S2 {:?}", g.dims(out.s2));
    ensure!(g.dims(out.s3) == [1, s, s], "S={s}: S3 {:?}", g.dims(out.s3));
    ensure!(g.dims(out.s4) == [1, s / 2, s / 2], "S={s}: S4 {:?}", g.dims(out.s4));
    Ok(())
}

fn shape_contract() -> Outcome {
    let start = Instant::now();
    check_shapes(&ModelConfig::desk_at(64))?;
    check_shapes(&ModelConfig::desk_at(256))?;
    check_shapes(&ModelConfig::full())?;
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("desk layout at 64 and 256, full layout at 256, {:.1} s", elapsed.as_secs_f64()))
}

fn attention_complexity() -> Outcome {
    let rows = ok(harness::bench_attention(&[(32, 16), (32, 32), (32, 64)], 5, 1 << 26, 0))?;
    let mut detail = Vec::new();
    for r in &rows {
        let (c, h) = (r.c, r.h);
        ensure!(r.channelwise_elements == c * h * h, "h={h}: channel-wise {} elements", r.channelwise_elements);
        ensure!(r.standard_elements == Some(h.pow(4)), "h={h}: standard {:?} elements", r.standard_elements);
        ensure!(r.standard_elements.unwrap() * c == r.channelwise_elements * h * h, "h={h}: ratio is not h²/c");
        detail.push(format!("h={h} ratio {}", r.ratio().unwrap()));
    }
    let last = rows.last().unwrap();
    let std_ms = last.standard_ms.unwrap();
    ensure!(last.channelwise_ms < std_ms, "h=64: channel-wise {:.2} ms vs standard {std_ms:.2} ms", last.channelwise_ms);
    detail.push(format!("h=64 median {:.2} ms vs {std_ms:.1} ms", last.channelwise_ms));
    Ok(detail.join(", "))
}

fn invariants() -> Outcome {
    // Softmax rows of channel-wise attention, including large scores.
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for scale in [0.1, 1.0, 10.0, 100.0] {
        let q = common::uniform(&mut r, &[8, 12, 12], -scale, scale);
        let k = common::uniform(&mut r, &[8, 12, 12], -scale, scale);
        let mut counter = AllocCounter::new();
        let (_, attn) = channelwise_attention_forward(q.data(), k.data(), k.data(), (8, 12, 12), &mut counter);
        let (_, attn32) = channelwise_attention_forward(
            q.cast::<f32>().data(),
            k.cast::<f32>().data(),
            k.cast::<f32>().data(),
            (8, 12, 12),
            &mut counter,
        );
        for row in attn.chunks(12) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        for row in attn32.chunks(12) {
            worst = worst.max((row.iter().map(|&v| f64::from(v)).sum::<f64>() - 1.0).abs());
        }
        let mut g = Graph::<f64>::new();
        let x = g.constant(q.clone().reshape(vec![96, 12]).unwrap());
        let y = ok(g.softmax(x))?;
        for row in g.value(y).data().chunks(12) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure!(worst <= 1e-6, "softmax row sum off by {worst:.3e}");

    // β = 0 at initialisation: TRU is plain upsampling, bit for bit.
    let cfg = ModelConfig::desk();
    let params = ok(ParamStore::init(&cfg, 2))?;
    let mut g = Graph::<f32>::new();
    let p = params.bind_frozen(&mut g);
    let x = ok(input(&mut g, &random_image(3, 64)))?;
    let out = ok(forward(&mut g, &p, &cfg, x, Mode::Eval))?;
    for t in &out.tscm {
        let (_, h, w) = g.value(t.f_pau).chw().unwrap();
        let up = ok(g.bilinear_up(t.f_pau, 2 * h, 2 * w))?;
        let same = g.value(t.f_tru).data().iter().zip(g.value(up).data()).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "TRU level {} differs from its upsampled input with β = 0", t.level);
    }

    // Branch schedule.
    let s1 = branch_schedule(1);
    ensure!(s1.len() == 1 && (s1[0].0, s1[0].1) == (1, 1), "branch 1 is not a single 1×1 conv");
    for (j, k) in [(2, 3), (3, 5), (4, 7)] {
        let s = branch_schedule(j);
        let shapes: Vec<(usize, usize)> = s.iter().map(|e| (e.0, e.1)).collect();
        ensure!(shapes == [(1, k), (k, 1), (3, 3)], "branch {j}: {shapes:?}");
        ensure!(s[2].2.dilation == k && s[2].2.padding == Padding::uniform(k), "branch {j}: dilated conv {:?}", s[2].2);
        ensure!(s[..2].iter().all(|e| e.2.dilation == 1), "branch {j}: separable convs are dilated");
    }
    Ok(format!("max softmax row error {worst:.1e}; β = 0 identity at 3 levels; schedule k ∈ {{3, 5, 7}}"))
}

fn graph_loss(f: fn(&mut Graph<f64>, tscnet_tensor::Var, tscnet_tensor::Var) -> tscnet::Result<tscnet_tensor::Var>, p: &Map, g: &Map) -> Result<f64, String> {
    let mut graph = Graph::<f64>::new();
    let pv = graph.constant(ok(Tensor::new(vec![1, p.h, p.w], p.data.clone()))?);
    let gv = graph.constant(ok(Tensor::new(vec![1, g.h, g.w], g.data.clone()))?);
    let out = ok(f(&mut graph, pv, gv))?;
    Ok(graph.value(out).item())
}

fn loss_metric_oracles() -> Outcome {
    let mut r = rng(2024);
    let mut worst = [0.0f64; 6];
    for _ in 0..50 {
        let (p, g) = (random_pred(&mut r, 8, 8), random_gt(&mut r, 8, 8));
        let got = [
            graph_loss(bce_loss, &p, &g)?,
            graph_loss(iou_loss, &p, &g)?,
            ok(metrics::mae(&p, &g))?,
            ok(metrics::f_measure_mean(&p, &g))?,
            ok(metrics::s_measure(&p, &g))?,
            ok(metrics::e_measure_mean(&p, &g))?,
        ];
        let want = [
            oracles::bce(&p.data, &g.data),
            oracles::iou(&p.data, &g.data),
            oracles::mae(&p.data, &g.data),
            oracles::f_mean(&p.data, &g.data),
            oracles::s_measure(&p.data, &g.data, 8, 8),
            oracles::e_mean(&p.data, &g.data),
        ];
        for i in 0..6 {
            worst[i] = worst[i].max((got[i] - want[i]).abs());
        }
    }
    let names = ["BCE", "IoU", "MAE", "F", "S", "E"];
    let tol = [1e-9, 1e-9, 1e-9, 1e-9, 1e-6, 1e-6];
    for i in 0..6 {
        ensure!(worst[i] < tol[i], "{} differs from its oracle by {:.3e}", names[i], worst[i]);
    }
    let half = ok(Map::new(16, 16, (0..256).map(|i| f64::from(u8::from(i < 128))).collect()))?;
    let p = Map::filled(16, 16, 0.5);
    let bce = graph_loss(bce_loss, &p, &half)?;
    let iou = graph_loss(iou_loss, &p, &half)?;
    ensure!((bce - std::f64::consts::LN_2).abs() < 1e-9, "BCE anchor {bce}");
    ensure!((iou - (1.0 - 65.0 / 193.0)).abs() < 1e-9, "IoU anchor {iou}");
    let max = worst.iter().cloned().fold(0.0, f64::max);
    Ok(format!("50 cases, largest deviation {max:.1e}; anchors ln 2 and 1 − 65/193 hold"))
}

fn training_sanity() -> Outcome {
    // Overfit one image.
    let cfg = ModelConfig::desk();
    let sample = ok(generate_sample(&SynthConfig::default(), 0))?;
    let t = TrainConfig { lr: 1e-3, batch: 1, epochs: 300, max_steps: Some(300), decay_every: 0, augment: false, seed: 0, ..TrainConfig::default() };
    let start = Instant::now();
    let out = harness::train(&cfg, &t, std::slice::from_ref(&sample), ok(ParamStore::init(&cfg, 0))?, None)
        .map_err(|d| d.error.to_string())?;
    let overfit_time = start.elapsed();
    let pred = ok(harness::predict(&cfg, &out.params, &sample.image))?;
    let mae = ok(metrics::mae(&ok(harness::to_map(&pred.s2))?, &ok(harness::to_map(&sample.mask))?))?;
    ensure!(mae < 0.05, "overfit MAE {mae:.4} after 300 steps");
    ensure!(overfit_time < Duration::from_secs(900), "overfit took {overfit_time:?}");

    // Ten images at the default settings.
    let data = ok(generate_dataset(&SynthConfig { seed: 1, ..SynthConfig::default() }, 10))?;
    let t = TrainConfig { max_steps: Some(200), epochs: 1000, ..TrainConfig::default() };
    let init = ok(ParamStore::init(&cfg, 0))?;
    let before = ok(harness::mean_loss(&cfg, &init, &data))?;
    let out = harness::train(&cfg, &t, &data, init, None).map_err(|d| d.error.to_string())?;
    let after = ok(harness::mean_loss(&cfg, &out.params, &data))?;
    ensure!(out.log.len() == 200, "{} steps logged", out.log.len());
    ensure!(after < before / 2.0, "loss {before:.3} → {after:.3} in 200 steps");

    let d = TrainConfig::default();
    ensure!(d.lr_at(30) == d.lr / 10.0 && d.lr_at(60) == d.lr / 100.0, "lr at 30/60: {} {}", d.lr_at(30), d.lr_at(60));
    ensure!(d.lr_at(29) == d.lr, "lr decays early");
    Ok(format!(
        "overfit MAE {mae:.4} in {:.0} s; 10-image loss {before:.3} → {after:.3}; lr {} → {} → {}",
        overfit_time.as_secs_f64(),
        d.lr_at(0),
        d.lr_at(30),
        d.lr_at(60)
    ))
}

fn unit_params(name: &str) -> Option<&'static str> {
    if name.starts_with("tscm.shared_vit.") || name.contains(".msp.") {
        Some("riu")
    } else if name.contains(".pau.") {
        Some("pau")
    } else if name.contains(".tru.") {
        Some("tru")
    } else {
        None
    }
}

fn ablation_structure() -> Outcome {
    let base: std::collections::BTreeSet<String> =
        param_specs(&ModelConfig::desk().with_units(Units::BASELINE)).into_iter().map(|s| s.name).collect();
    let data = ok(generate_dataset(&SynthConfig { seed: 2, ..SynthConfig::default() }, 4))?;
    let mut detail = Vec::new();
    for (label, units) in Units::ablation_rows() {
        let cfg = ModelConfig::desk().with_units(units);
        let names: std::collections::BTreeSet<String> = param_specs(&cfg).into_iter().map(|s| s.name).collect();
        ensure!(base.is_subset(&names), "{label}: drops baseline parameters");
        let mut extra: Vec<&str> = names.difference(&base).map(|n| unit_params(n).unwrap_or("other")).collect();
        extra.sort();
        extra.dedup();
        let want: Vec<&str> = [("pau", units.pau), ("riu", units.riu), ("tru", units.tru)]
            .into_iter()
            .filter_map(|(n, on)| on.then_some(n))
            .collect();
        ensure!(extra == want, "{label}: extra parameters belong to {extra:?}, expected {want:?}");
        let t = TrainConfig { batch: 1, max_steps: Some(20), epochs: 100, seed: 5, ..TrainConfig::default() };
        let out = harness::train(&cfg, &t, &data, ok(ParamStore::init(&cfg, 0))?, None)
            .map_err(|d| format!("{label}: {}", d.error))?;
        ensure!(out.log.len() == 20, "{label}: {} steps", out.log.len());
        detail.push(format!("{label} +{}", names.len() - base.len()));
    }
    Ok(format!("parameter tensors beyond baseline: {}", detail.join(", ")))
}

fn read_all(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for entry in ok(fs::read_dir(dir))? {
        let path = ok(entry)?.path();
        files.push((path.file_name().unwrap().to_string_lossy().into_owned(), ok(fs::read(&path))?));
    }
    files.sort();
    Ok(files)
}

fn reproducibility() -> Outcome {
    let dir = ok(tempfile::tempdir())?;
    let manifest = ok(harness::gen_data(&dir.path().join("data"), &SynthConfig { seed: 3, ..SynthConfig::default() }, 4))?;
    let run = |out: &str| -> Result<Vec<(String, Vec<u8>)>, String> {
        let mut cfg = RunConfig::default();
        for (k, v) in [("batch", "2"), ("max_steps", "6"), ("checkpoint_every", "1"), ("seed", "11")] {
            ok(cfg.set(k, v))?;
        }
        cfg.manifest = Some(manifest.clone());
        cfg.out_dir = Some(dir.path().join(out));
        ok(harness::train_run(&cfg))?;
        read_all(&dir.path().join(out))
    };
    let (a, b) = (run("a")?, run("b")?);
    ensure!(a.len() >= 4, "only {} artifacts", a.len());
    for ((na, xa), (nb, xb)) in a.iter().zip(&b) {
        ensure!(na == nb && xa == xb, "{na} differs between runs");
    }
    let path = dir.path().join("a/final.ckpt");
    let bytes = ok(fs::read(&path))?;
    let params = ok(checkpoint::load(&path))?;
    ensure!(checkpoint::encode(&params) == bytes, "re-encoding changes the checkpoint");
    let copy = dir.path().join("copy.ckpt");
    ok(checkpoint::save(&copy, &params))?;
    ensure!(ok(fs::read(&copy))? == bytes, "save(load(x)) differs from x");
    ensure!(lively_params(&ModelConfig::micro(), 1, 0.5) == lively_params(&ModelConfig::micro(), 1, 0.5), "init differs");
    Ok(format!("{} artifacts identical across two runs; checkpoint round trip byte-identical", a.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("gradient correctness", gradient_correctness),
        ("shape contract", shape_contract),
        ("attention complexity", attention_complexity),
        ("attention and normalization invariants", invariants),
        ("loss and metric oracles", loss_metric_oracles),
        ("training sanity", training_sanity),
        ("ablation structure", ablation_structure),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
}
