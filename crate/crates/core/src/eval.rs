//! Fake-sample accuracy, paired MSE, discriminator feature distance, paired
//! t-tests and discriminator throughput.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::augment::{apply, draw_batch, TransformSpec};
use crate::data::{batcher, Dataset, DomainPair, ImageBatch};
use crate::error::{Error, Result};
use crate::models::{Classifier, Discriminator, Generator, Net};
use crate::rng;
use crate::training::{discriminator_pass, effective_weights, sample, TrainConfig, TrainState};

const CHUNK: usize = 128;

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n).step_by(CHUNK).map(move |s| (s..(s + CHUNK).min(n)).collect())
}

/// Percentage of translated source images the classifier assigns the source label.
pub fn fake_accuracy(g: &Generator, source: &Dataset, classifier: &Classifier) -> Result<f64> {
    fake_accuracy_with(|x| g.translate(x), source, classifier)
}

/// [`fake_accuracy`] for an arbitrary translation.
pub fn fake_accuracy_with(
    translate: impl Fn(&ImageBatch) -> Result<ImageBatch>,
    source: &Dataset,
    classifier: &Classifier,
) -> Result<f64> {
    let labels = source.labels().ok_or_else(|| Error::Validation(format!("{} has no labels", source.name)))?;
    if source.is_empty() {
        return Err(Error::Validation("fake accuracy over an empty dataset".into()));
    }
    let mut correct = 0usize;
    for idx in chunks(source.len()) {
        let pred = classifier.predict(&translate(&source.batch(&idx))?)?;
        correct += idx.iter().zip(pred).filter(|(&i, p)| labels[i] == *p).count();
    }
    Ok(100.0 * correct as f64 / source.len() as f64)
}

/// Mean per-pixel squared error between `G(source_i)` and `target_i`, in `[0, 1]` pixel units.
pub fn paired_mse(g: &Generator, pair: &DomainPair) -> Result<f64> {
    paired_mse_with(|x| g.translate(x), pair)
}

pub fn paired_mse_with(translate: impl Fn(&ImageBatch) -> Result<ImageBatch>, pair: &DomainPair) -> Result<f64> {
    if !pair.paired {
        return Err(Error::Validation("paired MSE needs a paired domain pair".into()));
    }
    if pair.source.is_empty() {
        return Err(Error::Validation("paired MSE over an empty dataset".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for idx in chunks(pair.source.len()) {
        let out = translate(&pair.source.batch(&idx))?;
        let target = pair.target.batch(&idx);
        if out.tensor().shape() != target.tensor().shape() {
            return Err(Error::Shape(format!(
                "translation shape {:?} differs from target {:?}",
                out.tensor().shape(),
                target.tensor().shape()
            )));
        }
        // (a - b) / 2 maps the [-1, 1] difference to [0, 1] units.
        total +=
            out.tensor().data().iter().zip(target.tensor().data()).map(|(a, b)| ((a - b) / 2.0).powi(2)).sum::<f64>();
        count += out.tensor().len();
    }
    Ok(total / count as f64)
}

/// Mean over images and draws of the mean squared difference between the
/// penultimate features of `x` and `T(x)`.
pub fn feature_distance(
    d: &Discriminator,
    testset: &Dataset,
    t: &TransformSpec,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    if testset.is_empty() || n_draws == 0 {
        return Err(Error::Validation("feature distance needs images and at least one draw".into()));
    }
    let mut total = 0.0;
    for (k, idx) in chunks(testset.len()).enumerate() {
        let x = testset.batch(&idx);
        let (_, fx) = d.evaluate(&x)?;
        let per_image = fx.len() / idx.len();
        for draw in 0..n_draws {
            let tx = apply(&draw_batch(t, rng::derive(seed, &[0xfd, k as u64, draw as u64]), idx.len())?, &x)?;
            if tx.tensor().shape() != x.tensor().shape() {
                return Err(Error::Shape("transform changed the image shape".into()));
            }
            let (_, ft) = d.evaluate(&tx)?;
            let sq: f64 = fx.data().iter().zip(ft.data()).map(|(a, b)| (a - b).powi(2)).sum();
            total += sq / per_image as f64;
        }
    }
    Ok(total / (testset.len() * n_draws) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    /// Absent when the differences have zero variance but nonzero mean.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
    pub degenerate: bool,
    pub n: usize,
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Validation("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_std(&diffs);
    let sd = sd.expect("n >= 2");
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { statistic: Some(0.0), p_value: Some(1.0), significant: false, degenerate: false, n }
        } else {
            TTest { statistic: None, p_value: None, significant: false, degenerate: true, n }
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    let p = (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0);
    Ok(TTest { statistic: Some(t), p_value: Some(p), significant: p < alpha, degenerate: false, n })
}

/// Mean and sample standard deviation; the deviation needs two values.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.len() >= 2).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, sd)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedReport {
    pub steps_per_sec_mean: f64,
    pub steps_per_sec_std: Option<f64>,
    pub samples: Vec<f64>,
    pub timed_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedOptions {
    pub warmup: usize,
    pub repeats: usize,
}

impl Default for SpeedOptions {
    fn default() -> Self {
        Self { warmup: 5, repeats: 3 }
    }
}

/// Discriminator updates per second at the final-epoch regularizer weights.
/// The first `warmup` of `n_steps` are untimed in every repeat.
pub fn speed_benchmark(
    cfg: &TrainConfig,
    pair: &DomainPair,
    n_steps: usize,
    opts: SpeedOptions,
) -> Result<SpeedReport> {
    if n_steps < opts.warmup + 10 {
        return Err(Error::Validation(format!(
            "{n_steps} steps leave fewer than 10 timed steps after {} warmup",
            opts.warmup
        )));
    }
    if opts.repeats == 0 {
        return Err(Error::Validation("speed benchmark needs at least one repeat".into()));
    }
    let mut state = TrainState::new(cfg)?;
    let w = effective_weights(cfg.total_epochs() - 1, cfg);
    let (_, lr_d) = crate::training::lr_schedule(0, cfg);
    let b1 = batcher(&pair.source, cfg.batch_size, rng::derive(cfg.data_seed, &[1]), true)?;
    let b2 = batcher(&pair.target, cfg.batch_size, rng::derive(cfg.data_seed, &[2]), true)?;
    if b1.is_empty() || b2.is_empty() {
        return Err(Error::Validation("batch size exceeds a domain".into()));
    }
    let mut inputs = Vec::new();
    for ((_, x1), (_, x2)) in b1.epoch(0).zip(b2.epoch(0)).take(4) {
        let s = sample(&state.bundle, &x1, &x2)?;
        inputs.push((x1, x2, s));
    }
    let step = |state: &mut TrainState, k: usize| -> Result<()> {
        let (x1, x2, s) = &inputs[k % inputs.len()];
        let (_, g1, g2) = discriminator_pass(&state.bundle, cfg, k as u64, x1, x2, s, &w)?;
        state.opt_d1.step(state.bundle.d1.params_mut(), &g1, lr_d);
        state.opt_d2.step(state.bundle.d2.params_mut(), &g2, lr_d);
        Ok(())
    };
    let timed = n_steps - opts.warmup;
    let mut samples = Vec::with_capacity(opts.repeats);
    for _ in 0..opts.repeats {
        for k in 0..opts.warmup {
            step(&mut state, k)?;
        }
        let start = Instant::now();
        for k in 0..timed {
            step(&mut state, opts.warmup + k)?;
        }
        samples.push(timed as f64 / start.elapsed().as_secs_f64());
    }
    let (mean, sd) = mean_std(&samples);
    Ok(SpeedReport { steps_per_sec_mean: mean, steps_per_sec_std: sd, samples, timed_steps: timed })
}

/// Metrics of a single trained run; absent fields were not measured.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub mse: Option<f64>,
    pub feature_distance: Option<f64>,
    pub steps_per_sec: Option<f64>,
}

/// Aggregate over seeds of one (task, variant) cell group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub variant: String,
    pub seeds: Vec<u64>,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub mse_mean: Option<f64>,
    pub mse_std: Option<f64>,
    pub feature_distance_mean: Option<f64>,
    pub feature_distance_std: Option<f64>,
    pub steps_per_sec_mean: Option<f64>,
    pub steps_per_sec_std: Option<f64>,
    /// Against the baseline variant on the primary metric, paired by seed.
    pub t_test: Option<TTest>,
}

fn column(cells: &[CellMetrics], f: impl Fn(&CellMetrics) -> Option<f64>) -> (Option<f64>, Option<f64>) {
    let xs: Option<Vec<f64>> = cells.iter().map(f).collect();
    match xs {
        Some(xs) if !xs.is_empty() => {
            let (m, s) = mean_std(&xs);
            (Some(m), s)
        }
        _ => (None, None),
    }
}

impl EvalReport {
    pub fn aggregate(task: &str, variant: &str, cells: &[CellMetrics]) -> Self {
        let (accuracy_mean, accuracy_std) = column(cells, |c| c.accuracy);
        let (mse_mean, mse_std) = column(cells, |c| c.mse);
        let (feature_distance_mean, feature_distance_std) = column(cells, |c| c.feature_distance);
        let (steps_per_sec_mean, steps_per_sec_std) = column(cells, |c| c.steps_per_sec);
        Self {
            task: task.into(),
            variant: variant.into(),
            seeds: cells.iter().map(|c| c.seed).collect(),
            accuracy_mean,
            accuracy_std,
            mse_mean,
            mse_std,
            feature_distance_mean,
            feature_distance_std,
            steps_per_sec_mean,
            steps_per_sec_std,
            t_test: None,
        }
    }
}
