//! Orchestration: training, evaluation, inference, gradient checks and the
//! attention benchmark.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscnet_tensor::kernels::attention::{channelwise_attention_forward, standard_attention_forward};
use tscnet_tensor::{finite_diff_check, AllocCounter, FiniteDiffOptions, GradCheckReport, Graph, Tensor};

use crate::checkpoint;
use crate::config::{ModelConfig, RunConfig, TrainConfig};
use crate::data::{self, Sample, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, Map, MetricsReport};
use crate::model::{self, Mode};
use crate::objective::{model_loss, LossReport};
use crate::optim::Adam;
use crate::params::{name_seed, Bindings, ParamStore};

/// Maps produced by one eval-mode forward pass.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub s2: Tensor<f32>,
    pub s3: Tensor<f32>,
    pub s4: Tensor<f32>,
}

pub fn predict(cfg: &ModelConfig, params: &ParamStore<f32>, image: &Tensor<f32>) -> Result<Prediction> {
    let mut g = Graph::<f32>::new();
    let p = params.bind_frozen(&mut g);
    let x = model::input(&mut g, image)?;
    let out = model::forward(&mut g, &p, cfg, x, Mode::Eval)?;
    Ok(Prediction { s2: g.value(out.s2).clone(), s3: g.value(out.s3).clone(), s4: g.value(out.s4).clone() })
}

/// Eval-mode loss of one sample.
pub fn sample_loss(cfg: &ModelConfig, params: &ParamStore<f32>, sample: &Sample) -> Result<LossReport> {
    let mut g = Graph::<f32>::new();
    let p = params.bind_frozen(&mut g);
    let x = model::input(&mut g, &sample.image)?;
    let out = model::forward(&mut g, &p, cfg, x, Mode::Eval)?;
    Ok(model_loss(&mut g, &out, &sample.mask)?.report(&g))
}

/// Mean eval-mode total loss over `samples`.
pub fn mean_loss(cfg: &ModelConfig, params: &ParamStore<f32>, samples: &[Sample]) -> Result<f64> {
    let mut s = 0.0;
    for sample in samples {
        s += sample_loss(cfg, params, sample)?.total;
    }
    Ok(s / samples.len() as f64)
}

/// One optimizer step in the log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the images of the step.
    pub loss: LossReport,
}

pub const LOG_HEADER: &str = "step,epoch,lr,bce2,bce3,bce4,iou2,iou3,iou4,total";

pub fn log_csv(log: &[StepLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for s in log {
        let _ = writeln!(out, "{},{},{:e},{}", s.step, s.epoch, s.lr, s.loss.csv_fields());
    }
    out
}

/// Called after every epoch with `(epoch, params, log so far)`.
pub type EpochHook<'a> = dyn FnMut(usize, &ParamStore<f32>, &[StepLog]) -> Result<()> + 'a;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub log: Vec<StepLog>,
}

/// Numeric failure during training, carrying the last parameters that
/// produced a finite loss.
#[derive(Debug)]
pub struct Diverged {
    pub step: usize,
    pub last_good: ParamStore<f32>,
    pub log: Vec<StepLog>,
    pub error: Error,
}

/// Forward + backward on one image; returns its loss and gradients.
fn image_grads(
    cfg: &ModelConfig,
    params: &ParamStore<f32>,
    sample: &Sample,
    seed: u64,
) -> Result<(LossReport, BTreeMap<String, Tensor<f32>>)> {
    let mut g = Graph::<f32>::new();
    let p: Bindings = params.bind(&mut g);
    let x = model::input(&mut g, &sample.image)?;
    let out = model::forward(&mut g, &p, cfg, x, Mode::Train { seed })?;
    let loss = model_loss(&mut g, &out, &sample.mask)?;
    let report = loss.report(&g);
    if !report.total.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss on {}", sample.id)));
    }
    g.backward(loss.total)?;
    let grads = p
        .iter()
        .filter_map(|(name, v)| g.grad(v).map(|t| (name.to_string(), t.clone())))
        .collect();
    Ok((report, grads))
}

fn mean_report(reports: &[LossReport]) -> LossReport {
    let n = reports.len() as f64;
    let mut m = LossReport::default();
    for r in reports {
        for i in 0..3 {
            m.bce[i] += r.bce[i] / n;
            m.iou[i] += r.iou[i] / n;
        }
        m.total += r.total / n;
    }
    m
}

/// Trains from `params` on `samples`. Deterministic for a fixed seed.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    samples: &[Sample],
    params: ParamStore<f32>,
    mut hook: Option<&mut EpochHook<'_>>,
) -> std::result::Result<TrainOutcome, Box<Diverged>> {
    let fail = |error: Error, params: &ParamStore<f32>, log: &[StepLog], step| {
        Box::new(Diverged { step, last_good: params.clone(), log: log.to_vec(), error })
    };
    let mut params = params;
    let mut log = Vec::new();
    if let Err(e) = model_cfg.validate().and_then(|_| train_cfg.validate()).and_then(|_| params.check_matches(model_cfg)) {
        return Err(fail(e, &params, &log, 0));
    }
    if samples.is_empty() {
        return Err(fail(Error::Data("no training samples".into()), &params, &log, 0));
    }
    if let Some(bad) = samples.iter().find(|s| s.image.dims() != [3, model_cfg.size, model_cfg.size]) {
        let e = Error::Data(format!("{} is {:?}, model expects 3×{s}×{s}", bad.id, bad.image.dims(), s = model_cfg.size));
        return Err(fail(e, &params, &log, 0));
    }
    let mut adam = Adam::from_config(train_cfg);
    let seed = train_cfg.seed;
    let mut step = 0usize;
    'epochs: for epoch in 0..train_cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(name_seed(seed, &format!("epoch{epoch}"))));
        let lr = train_cfg.lr_at(epoch);
        for batch in order.chunks(train_cfg.batch) {
            if train_cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let mut sum: BTreeMap<String, Tensor<f64>> = BTreeMap::new();
            let mut reports = Vec::with_capacity(batch.len());
            for (b, &idx) in batch.iter().enumerate() {
                let tag = format!("step{step}.{b}");
                let sample = if train_cfg.augment {
                    data::augment(&samples[idx], name_seed(seed, &format!("aug.{tag}")))
                } else {
                    samples[idx].clone()
                };
                let (report, grads) = match image_grads(model_cfg, &params, &sample, name_seed(seed, &format!("drop.{tag}"))) {
                    Ok(r) => r,
                    Err(e) => return Err(fail(e, &params, &log, step)),
                };
                reports.push(report);
                for (name, gr) in grads {
                    let acc = sum.entry(name).or_insert_with(|| Tensor::zeros(gr.dims().to_vec()));
                    for (a, &v) in acc.data_mut().iter_mut().zip(gr.data()) {
                        *a += f64::from(v);
                    }
                }
            }
            let n = batch.len() as f64;
            for t in sum.values_mut() {
                t.data_mut().iter_mut().for_each(|v| *v /= n);
            }
            let before = params.clone();
            adam.step(&mut params, &sum, lr);
            if !params.is_finite() {
                let e = Error::Numeric(format!("parameters became non-finite at step {step}"));
                return Err(fail(e, &before, &log, step));
            }
            log.push(StepLog { step, epoch, lr, loss: mean_report(&reports) });
            step += 1;
        }
        if let Some(h) = hook.as_mut() {
            if let Err(e) = h(epoch, &params, &log) {
                return Err(fail(e, &params, &log, step));
            }
        }
    }
    Ok(TrainOutcome { params, log })
}

/// Loads every sample listed in a manifest.
pub fn load_manifest(path: &Path) -> Result<Vec<Sample>> {
    data::read_manifest(path)?.iter().map(|e| data::load_sample(&e.image, &e.mask)).collect()
}

/// Writes `n` synthetic samples to `dir` with a `manifest.tsv`; returns
/// the manifest path.
pub fn gen_data(dir: &Path, cfg: &SynthConfig, n: usize) -> Result<PathBuf> {
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let s = data::generate_sample(cfg, i)?;
        let (image, mask) = data::save_sample(dir, &s)?;
        entries.push(data::ManifestEntry { image, mask });
    }
    let manifest = dir.join("manifest.tsv");
    data::write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Full CLI training run: reads the manifest, writes `train_log.csv`,
/// periodic checkpoints and `final.ckpt` under `out_dir`.
pub fn train_run(run: &RunConfig) -> Result<TrainOutcome> {
    run.validate()?;
    let manifest = run.manifest.as_deref().ok_or_else(|| Error::Config("train needs a manifest".into()))?;
    let out_dir = run.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"));
    let samples = load_manifest(manifest)?;
    let params = match &run.checkpoint {
        Some(p) => {
            let params = checkpoint::load(p)?;
            params.check_matches(&run.model)?;
            params
        }
        None => ParamStore::init(&run.model, run.train.seed)?,
    };
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let log_path = out_dir.join("train_log.csv");
    let every = run.train.checkpoint_every;
    let mut hook = |epoch: usize, p: &ParamStore<f32>, log: &[StepLog]| -> Result<()> {
        fs::write(&log_path, log_csv(log)).map_err(|e| Error::io(&log_path, e))?;
        if every > 0 && (epoch + 1) % every == 0 {
            checkpoint::save(&out_dir.join(format!("epoch{:03}.ckpt", epoch + 1)), p)?;
        }
        Ok(())
    };
    match train(&run.model, &run.train, &samples, params, Some(&mut hook)) {
        Ok(outcome) => {
            fs::write(&log_path, log_csv(&outcome.log)).map_err(|e| Error::io(&log_path, e))?;
            checkpoint::save(&out_dir.join("final.ckpt"), &outcome.params)?;
            Ok(outcome)
        }
        Err(d) => {
            fs::write(&log_path, log_csv(&d.log)).map_err(|e| Error::io(&log_path, e))?;
            checkpoint::save(&out_dir.join("last_good.ckpt"), &d.last_good)?;
            Err(d.error)
        }
    }
}

pub fn to_map(t: &Tensor<f32>) -> Result<Map> {
    let d = t.dims();
    let (h, w) = (d[d.len() - 2], d[d.len() - 1]);
    Map::new(h, w, t.data().iter().map(|&v| f64::from(v)).collect())
}

/// Metrics of precomputed maps.
pub fn evaluate_maps(maps: &[(String, Map, Map)]) -> Result<MetricsReport> {
    let images = maps
        .iter()
        .map(|(id, pred, gt)| metrics::evaluate_pair(id.clone(), pred, gt))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_images(images)
}

/// Metrics of the model's S² against each sample's mask.
pub fn evaluate(cfg: &ModelConfig, params: &ParamStore<f32>, samples: &[Sample]) -> Result<MetricsReport> {
    params.check_matches(cfg)?;
    let mut maps = Vec::with_capacity(samples.len());
    for s in samples {
        let pred = predict(cfg, params, &s.image)?;
        maps.push((s.id.clone(), to_map(&pred.s2)?, to_map(&s.mask)?));
    }
    evaluate_maps(&maps)
}

/// Writes `{stem}_s2.png`, plus `_s3`/`_s4` when `laterals` is set.
pub fn infer(
    cfg: &ModelConfig,
    params: &ParamStore<f32>,
    image_path: &Path,
    out_dir: &Path,
    laterals: bool,
) -> Result<Vec<PathBuf>> {
    let rgb = image::ImageReader::open(image_path)
        .map_err(|e| Error::io(image_path, e))?
        .decode()
        .map_err(|e| Error::Image { path: image_path.to_path_buf(), msg: e.to_string() })?
        .to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if (h, w) != (cfg.size, cfg.size) {
        return Err(Error::Data(format!(
            "{} is {w}×{h}, model expects {s}×{s}",
            image_path.display(),
            s = cfg.size
        )));
    }
    let mut img = vec![0.0f32; 3 * h * w];
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            img[c * h * w + y as usize * w + x as usize] = f32::from(p[c]) / 255.0;
        }
    }
    let pred = predict(cfg, params, &Tensor::new(vec![3, h, w], img)?)?;
    let stem = image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
    let mut written = vec![out_dir.join(format!("{stem}_s2.png"))];
    data::save_map(&written[0], &pred.s2)?;
    if laterals {
        for (tag, map) in [("s3", &pred.s3), ("s4", &pred.s4)] {
            let path = out_dir.join(format!("{stem}_{tag}.png"));
            data::save_map(&path, map)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Value every TRU gate is set to during gradient checks, so that the
/// attention projections receive a gradient.
pub const GRADCHECK_BETA: f32 = 0.5;

/// Finite-difference check of every parameter of `cfg` against the total
/// loss on one synthetic sample, in 64-bit precision.
pub fn gradcheck(cfg: &ModelConfig, seed: u64, opts: &FiniteDiffOptions) -> Result<GradCheckReport> {
    let mut params = ParamStore::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, "gradcheck.bias"));
    for (name, t) in params.iter_mut() {
        if name.ends_with(".beta") && name.contains(".tru.") {
            t.data_mut().fill(GRADCHECK_BETA);
        } else if name.ends_with(".bias") {
            // Small non-zero biases keep ReLU inputs away from exact zeros.
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let sample = data::generate_sample(&SynthConfig { size: cfg.size, seed, ..SynthConfig::default() }, 0)?;
    let named: Vec<(String, Tensor<f64>)> = params.iter().map(|(n, t)| (n.to_string(), t.cast())).collect();
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let mask = sample.mask.clone();
    let image = sample.image.clone();
    let mode = Mode::Train { seed: name_seed(seed, "gradcheck.dropout") };
    let report = finite_diff_check(&named, opts, |g, vars| {
        let p = Bindings::from_pairs(names.iter().cloned().zip(vars.iter().copied()));
        let x = model::input(g, &image).map_err(to_tensor_err)?;
        let out = model::forward(g, &p, cfg, x, mode).map_err(to_tensor_err)?;
        Ok(model_loss(g, &out, &mask).map_err(to_tensor_err)?.total)
    })?;
    Ok(report)
}

fn to_tensor_err(e: Error) -> tscnet_tensor::TensorError {
    match e {
        Error::Tensor(t) => t,
        other => tscnet_tensor::TensorError::InvalidOption(other.to_string()),
    }
}

/// Worst-first table of a gradient-check report.
pub fn gradcheck_table(report: &GradCheckReport) -> String {
    let mut out = String::from("parameter,checked,max_rel_error,max_abs_error,worst_index,analytic,numeric,non_finite,kinks\n");
    for e in &report.entries {
        let _ = writeln!(
            out,
            "{},{},{:.3e},{:.3e},{},{:.6e},{:.6e},{},{}",
            e.name, e.checked, e.max_error, e.max_abs_error, e.worst_index, e.analytic, e.numeric, e.non_finite, e.kinks
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub c: usize,
    pub h: usize,
    pub channelwise_elements: usize,
    /// `None` when the standard path would exceed the memory cap.
    pub standard_elements: Option<usize>,
    pub channelwise_ms: f64,
    pub standard_ms: Option<f64>,
}

impl BenchRow {
    pub fn ratio(&self) -> Option<f64> {
        self.standard_elements.map(|s| s as f64 / self.channelwise_elements as f64)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Peak attention-buffer sizes and median timings of channel-wise versus
/// standard attention on random `c×h×h` inputs. Rows whose standard map
/// would exceed `cap_elements` are skipped for that path.
pub fn bench_attention(sizes: &[(usize, usize)], reps: usize, cap_elements: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let reps = reps.max(1);
    let mut rows = Vec::with_capacity(sizes.len());
    for &(c, h) in sizes {
        if c == 0 || h == 0 {
            return Err(Error::Config(format!("invalid benchmark size c={c}, h={h}")));
        }
        let n = c * h * h;
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, &format!("bench{c}x{h}")));
        let mut rand_vec = || -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (q, k, v) = (rand_vec(), rand_vec(), rand_vec());
        let mut cw_counter = AllocCounter::new();
        let mut cw_times = Vec::with_capacity(reps);
        for _ in 0..reps {
            cw_counter.reset();
            let t = Instant::now();
            let out = channelwise_attention_forward(&q, &k, &v, (c, h, h), &mut cw_counter);
            std::hint::black_box(out);
            cw_times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let tokens = h * h;
        let (standard_elements, standard_ms) = if tokens.saturating_mul(tokens) > cap_elements {
            (None, None)
        } else {
            let mut counter = AllocCounter::new();
            let mut times = Vec::with_capacity(reps);
            for _ in 0..reps {
                counter.reset();
                let t = Instant::now();
                let out = standard_attention_forward(&q, &k, &v, (c, h, h), &mut counter);
                std::hint::black_box(out);
                times.push(t.elapsed().as_secs_f64() * 1e3);
            }
            (Some(counter.peak_elements()), Some(median(times)))
        };
        rows.push(BenchRow {
            c,
            h,
            channelwise_elements: cw_counter.peak_elements(),
            standard_elements,
            channelwise_ms: median(cw_times),
            standard_ms,
        });
    }
    Ok(rows)
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let mut out = String::from("c,h,channelwise_elements,standard_elements,ratio,channelwise_ms,standard_ms\n");
    for r in rows {
        let _ = match (r.standard_elements, r.standard_ms) {
            (Some(se), Some(sm)) => writeln!(
                out,
                "{},{},{},{},{},{:.3},{:.3}",
                r.c,
                r.h,
                r.channelwise_elements,
                se,
                r.ratio().unwrap_or(0.0),
                r.channelwise_ms,
                sm
            ),
            _ => writeln!(out, "{},{},{},skipped (cap),,{:.3},", r.c, r.h, r.channelwise_elements, r.channelwise_ms),
        };
    }
    out
}
