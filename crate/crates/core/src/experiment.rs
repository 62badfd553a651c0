//! Desk-scale tasks, variant-by-seed experiment plans, aggregation and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::TransformSpec;
use crate::data::{
    make_paired_surrogate, preprocess, read_cache, render_digits, synthesize_colored_digits, write_cache, Background,
    Dataset, DomainPair, Split,
};
use crate::error::{Error, Result};
use crate::eval::{
    fake_accuracy, feature_distance, paired_mse, paired_t_test, speed_benchmark, CellMetrics, EvalReport, SpeedOptions,
};
use crate::losses::LossWeights;
use crate::models::{Classifier, DiscriminatorConfig, GeneratorConfig};
use crate::rng;
use crate::training::{
    load_classifier, save_classifier, train, train_classifier, ClassifierTrainConfig, TrainConfig, TrainState, Variant,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// Colored digits (source) to plain digits (target).
    Digits {
        #[serde(default = "default_size")]
        size: usize,
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_n_classifier")]
        n_classifier: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_background")]
        background: Background,
    },
    /// Label maps (source) to textured photos (target), aligned.
    Paired {
        #[serde(default = "default_size")]
        size: usize,
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_size() -> usize {
    16
}
fn default_n_train() -> usize {
    4000
}
fn default_n_test() -> usize {
    500
}
fn default_n_classifier() -> usize {
    3000
}
fn default_background() -> Background {
    Background::Procedural
}

impl TaskSpec {
    pub fn digits() -> Self {
        Self::Digits {
            size: default_size(),
            n_train: default_n_train(),
            n_test: default_n_test(),
            n_classifier: default_n_classifier(),
            seed: 0,
            background: default_background(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Digits { .. } => "colored-digits-to-digits",
            Self::Paired { .. } => "labels-to-photos",
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Self::Digits { size, .. } | Self::Paired { size, .. } => *size,
        }
    }

    pub fn build(&self) -> Result<TaskData> {
        match self {
            Self::Digits { size, n_train, n_test, n_classifier, seed, background } => {
                let s = |k| rng::derive(*seed, &[0xd1, k]);
                let plain = |n, k, split| preprocess(&render_digits(n, s(k)), *size, "digits", split);
                let colored = |n, k, split| synthesize_colored_digits(&plain(n, k, split)?, s(k + 100), background);
                Ok(TaskData {
                    train: DomainPair::unpaired(colored(*n_train, 1, Split::Train)?, plain(*n_train, 2, Split::Train)?),
                    test: DomainPair::unpaired(colored(*n_test, 3, Split::Val)?, plain(*n_test, 4, Split::Val)?),
                    classifier_data: Some(plain(*n_classifier, 5, Split::Train)?),
                })
            }
            Self::Paired { size, n_train, n_test, seed } => {
                let train = make_paired_surrogate(*n_train, *size, rng::derive(*seed, &[0x9a, 1]))?;
                let test = make_paired_surrogate(*n_test, *size, rng::derive(*seed, &[0x9a, 2]))?;
                let val = |d: Dataset| {
                    let idx: Vec<usize> = (0..d.len()).collect();
                    d.subset(d.name.clone(), Split::Val, &idx)
                };
                let test = DomainPair::paired(val(test.source), val(test.target))?;
                Ok(TaskData { train, test, classifier_data: None })
            }
        }
    }

    /// Default training configuration at desk scale: 16-wide nets, one
    /// downsampling stage for 16x16 inputs, 2+2 epochs.
    pub fn desk_config(&self, variant: Variant, seed: u64) -> TrainConfig {
        let digits = matches!(self, Self::Digits { .. });
        TrainConfig {
            variant,
            epochs_constant: 2,
            epochs_decay: 2,
            lr_g: 1e-3,
            lr_d: 5e-4,
            batch_size: 16,
            weights: if digits {
                LossWeights { lambda_cyc_1: 0.1, lambda_cyc_2: 10.0, ..Default::default() }
            } else {
                LossWeights::default()
            },
            transform: if digits { TransformSpec::crop() } else { TransformSpec::jitter() },
            seed,
            generator: GeneratorConfig { width: 16, downsampling: 1, ..Default::default() },
            discriminator: DiscriminatorConfig {
                width: 16,
                strides: if self.size() <= 16 { vec![2, 2, 1] } else { vec![2, 2, 2, 1] },
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

/// Train and test splits of a task plus labelled target-domain digits for the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub train: DomainPair,
    pub test: DomainPair,
    pub classifier_data: Option<Dataset>,
}

const DATA_FILES: [&str; 5] = ["train_source", "train_target", "test_source", "test_target", "classifier"];

impl TaskData {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let sets = [
            Some(&self.train.source),
            Some(&self.train.target),
            Some(&self.test.source),
            Some(&self.test.target),
            self.classifier_data.as_ref(),
        ];
        for (name, set) in DATA_FILES.iter().zip(sets) {
            if let Some(set) = set {
                write_cache(&dir.join(format!("{name}.accrds")), set)?;
            }
        }
        let meta = serde_json::json!({ "train_paired": self.train.paired, "test_paired": self.test.paired });
        let path = dir.join("task.json");
        fs::write(&path, meta.to_string()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("task.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Format { path: path.clone(), reason: e.to_string() })?;
        let read = |name: &str| read_cache(&dir.join(format!("{name}.accrds")));
        let pair = |a, b, paired: bool| if paired { DomainPair::paired(a, b) } else { Ok(DomainPair::unpaired(a, b)) };
        let classifier = dir.join("classifier.accrds");
        Ok(Self {
            train: pair(read("train_source")?, read("train_target")?, meta["train_paired"] == true)?,
            test: pair(read("test_source")?, read("test_target")?, meta["test_paired"] == true)?,
            classifier_data: if classifier.exists() { Some(read_cache(&classifier)?) } else { None },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Transform for the discriminator feature-distance probe.
    pub feature_transform: TransformSpec,
    pub feature_draws: usize,
    /// Discriminator steps for the throughput benchmark; skipped when unset.
    pub benchmark_steps: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { feature_transform: TransformSpec::crop(), feature_draws: 1, benchmark_steps: None }
    }
}

/// Evaluates a trained state on the task's test split.
pub fn evaluate_state(
    state: &TrainState,
    cfg: &TrainConfig,
    data: &TaskData,
    classifier: Option<&Classifier>,
    opts: &EvalOptions,
) -> Result<CellMetrics> {
    let accuracy = match (classifier, data.test.source.labels()) {
        (Some(c), Some(_)) => Some(fake_accuracy(&state.bundle.g1, &data.test.source, c)?),
        _ => None,
    };
    let mse = if data.test.paired { Some(paired_mse(&state.bundle.g1, &data.test)?) } else { None };
    let fd = feature_distance(&state.bundle.d2, &data.test.target, &opts.feature_transform, opts.feature_draws, 0)?;
    let steps_per_sec = match opts.benchmark_steps {
        Some(n) => Some(speed_benchmark(cfg, &data.train, n, SpeedOptions::default())?.steps_per_sec_mean),
        None => None,
    };
    Ok(CellMetrics { seed: cfg.seed, accuracy, mse, feature_distance: Some(fd), steps_per_sec })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantEntry {
    pub name: String,
    /// Fields merged over the plan's base configuration.
    #[serde(default = "empty_delta")]
    pub delta: serde_json::Value,
}

fn empty_delta() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl VariantEntry {
    /// Entry whose delta only selects `variant`.
    pub fn of(variant: Variant) -> Self {
        Self { name: variant.name().into(), delta: serde_json::json!({ "variant": variant }) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    /// Dotted path into the training configuration, e.g. `weights.lambda_real`.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub task: TaskSpec,
    /// Starting point for every cell; the task's desk configuration when unset.
    #[serde(default)]
    pub base: Option<TrainConfig>,
    pub variants: Vec<VariantEntry>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    pub output_dir: PathBuf,
    #[serde(default = "desk_classifier")]
    pub classifier: ClassifierTrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
}

/// Classifier recipe trained on crop-jittered, randomly erased digits.
pub fn desk_classifier() -> ClassifierTrainConfig {
    let augment = TransformSpec::Compose { children: vec![TransformSpec::crop(), TransformSpec::erasing()] };
    ClassifierTrainConfig { augment: Some(augment), ..Default::default() }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// One (variant, sweep value, seed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub variant: String,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub config: TrainConfig,
    pub dir: PathBuf,
}

fn set_path(root: &mut serde_json::Value, path: &str, value: serde_json::Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("sweep path {path:?} does not address a configuration field")))?;
        if !obj.contains_key(*key) {
            return Err(Error::Config(format!("unknown configuration field {key:?} in {path:?}")));
        }
        if i + 1 == parts.len() {
            obj.insert((*key).into(), value);
            return Ok(());
        }
        node = obj.get_mut(*key).expect("checked");
    }
    Err(Error::Config("empty sweep path".into()))
}

fn merge(base: &mut serde_json::Value, delta: &serde_json::Value) {
    match (base, delta) {
        (serde_json::Value::Object(b), serde_json::Value::Object(d)) => {
            for (k, v) in d {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, d) => *b = d.clone(),
    }
}

impl ExperimentPlan {
    pub fn base_config(&self) -> TrainConfig {
        self.base.clone().unwrap_or_else(|| self.task.desk_config(Variant::Baseline, 0))
    }

    /// Every cell in plan order. Cells share the base `data_seed`.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        if self.variants.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("plan needs at least one variant and one seed".into()));
        }
        let base = serde_json::to_value(self.base_config()).expect("config serializes");
        let sweep: Vec<Option<f64>> = match &self.sweep {
            Some(s) if s.values.is_empty() => return Err(Error::Config("sweep has no values".into())),
            Some(s) => s.values.iter().copied().map(Some).collect(),
            None => vec![None],
        };
        let mut cells = Vec::new();
        let mut names = std::collections::HashSet::new();
        for v in &self.variants {
            if !names.insert(&v.name) || v.name.is_empty() || v.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("variant name {:?} is empty, repeated or not a plain name", v.name)));
            }
            for &value in &sweep {
                for &seed in &self.seeds {
                    let mut json = base.clone();
                    merge(&mut json, &v.delta);
                    let mut label = v.name.clone();
                    if let (Some(s), Some(x)) = (&self.sweep, value) {
                        set_path(&mut json, &s.parameter, serde_json::json!(x))?;
                        label = format!("{label}@{}={x}", s.parameter);
                    }
                    set_path(&mut json, "seed", serde_json::json!(seed))?;
                    let config: TrainConfig =
                        serde_json::from_value(json).map_err(|e| Error::Config(format!("variant {}: {e}", v.name)))?;
                    config.validate()?;
                    let dir = self.output_dir.join("runs").join(&label).join(format!("seed-{seed}"));
                    cells.push(Cell { variant: v.name.clone(), sweep_value: value, seed, config, dir });
                }
            }
        }
        Ok(cells)
    }
}

pub const CELL_REPORT: &str = "report.json";
pub const CONFIG_FILE: &str = "config.json";

/// Contents of a run directory's `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub task: String,
    pub variant: String,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: Option<CellMetrics>,
    pub error: Option<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: path.into(), reason: e.to_string() })
}

fn plan_classifier(plan: &ExperimentPlan, data: &TaskData) -> Result<Option<Classifier>> {
    let Some(set) = &data.classifier_data else { return Ok(None) };
    let path = plan.output_dir.join("classifier.ckpt");
    if path.exists() {
        return load_classifier(&path).map(Some);
    }
    let trained = train_classifier(set, &plan.classifier)?;
    log::info!("classifier validation accuracy {:.4}", trained.val_accuracy);
    save_classifier(&trained.net, &path)?;
    Ok(Some(trained.net))
}

/// Runs every cell not already completed under the same configuration hash,
/// then writes the summary. A failing cell is recorded and the rest continue.
pub fn run_plan(plan: &ExperimentPlan) -> Result<Summary> {
    let cells = plan.cells()?;
    fs::create_dir_all(&plan.output_dir).map_err(|e| Error::io(&plan.output_dir, e))?;
    write_json(&plan.output_dir.join("plan.json"), plan)?;
    let data = plan.task.build()?;
    let classifier = plan_classifier(plan, &data)?;
    for cell in &cells {
        let report_path = cell.dir.join(CELL_REPORT);
        let hash = cell.config.hash();
        if let Ok(done) = read_json::<CellReport>(&report_path) {
            if done.config_hash == hash && done.error.is_none() {
                log::info!("{} seed {}: already complete", cell.variant, cell.seed);
                continue;
            }
        }
        write_json(&cell.dir.join(CONFIG_FILE), &cell.config)?;
        log::info!("{} seed {}: training", cell.variant, cell.seed);
        let outcome = train(&cell.config, &data.train, Some(&cell.dir))
            .and_then(|state| evaluate_state(&state, &cell.config, &data, classifier.as_ref(), &plan.eval));
        let (metrics, error) = match outcome {
            Ok(m) => (Some(m), None),
            Err(e) => {
                log::error!("{} seed {} failed: {e}", cell.variant, cell.seed);
                (None, Some(e.to_string()))
            }
        };
        let report = CellReport {
            task: plan.task.name().into(),
            variant: cell.variant.clone(),
            sweep_value: cell.sweep_value,
            seed: cell.seed,
            config_hash: hash,
            metrics,
            error,
        };
        write_json(&report_path, &report)?;
    }
    let summary = summarize(&plan.output_dir)?;
    write_summary(&plan.output_dir, &summary)?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub sweep_value: Option<f64>,
    pub report: EvalReport,
    pub failed_seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: String,
    pub primary: Metric,
    pub sweep_parameter: Option<String>,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn all_succeeded(&self) -> bool {
        self.rows.iter().all(|r| r.failed_seeds.is_empty())
    }
}

fn primary_value(m: &CellMetrics, metric: Metric) -> Option<f64> {
    match metric {
        Metric::Accuracy => m.accuracy,
        Metric::Mse => m.mse,
    }
}

fn collect_reports(dir: &Path, out: &mut Vec<CellReport>) -> Result<()> {
    let Ok(entries) = fs::read_dir(dir) else { return Ok(()) };
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            collect_reports(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == CELL_REPORT) {
            out.push(read_json(&p)?);
        }
    }
    Ok(())
}

/// Aggregates every cell report under `output_dir/runs`, pairing each group
/// with the `baseline` group at the same sweep value by seed.
pub fn summarize(output_dir: &Path) -> Result<Summary> {
    let mut reports = Vec::new();
    collect_reports(&output_dir.join("runs"), &mut reports)?;
    let plan: Option<ExperimentPlan> = read_json(&output_dir.join("plan.json")).ok();
    let order: Vec<String> =
        plan.as_ref().map(|p| p.variants.iter().map(|v| v.name.clone()).collect()).unwrap_or_default();
    let primary = if reports.iter().any(|r| r.metrics.as_ref().is_some_and(|m| m.accuracy.is_some())) {
        Metric::Accuracy
    } else {
        Metric::Mse
    };
    let task = reports.first().map(|r| r.task.clone()).unwrap_or_default();
    type Key = (usize, String, Option<u64>);
    let rank = |v: &str| order.iter().position(|o| o == v).unwrap_or(usize::MAX);
    let mut groups: BTreeMap<Key, (Option<f64>, Vec<CellReport>)> = BTreeMap::new();
    for r in reports {
        let key = (rank(&r.variant), r.variant.clone(), r.sweep_value.map(f64::to_bits));
        groups.entry(key).or_insert_with(|| (r.sweep_value, Vec::new())).1.push(r);
    }
    for (_, cells) in groups.values_mut() {
        cells.sort_by_key(|c| c.seed);
    }
    let ok = |cells: &[CellReport]| -> Vec<CellMetrics> { cells.iter().filter_map(|c| c.metrics.clone()).collect() };
    let mut rows = Vec::new();
    for ((_, variant, bits), (sweep_value, cells)) in &groups {
        let metrics = ok(cells);
        let mut report = EvalReport::aggregate(&task, variant, &metrics);
        if variant != "baseline" {
            let base = groups.iter().find(|((_, v, b), _)| v == "baseline" && b == bits).map(|(_, (_, c))| ok(c));
            if let Some(base) = base {
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for m in &metrics {
                    let other = base.iter().find(|o| o.seed == m.seed);
                    if let (Some(x), Some(y)) =
                        (primary_value(m, primary), other.and_then(|o| primary_value(o, primary)))
                    {
                        a.push(x);
                        b.push(y);
                    }
                }
                if a.len() >= 2 {
                    report.t_test = Some(paired_t_test(&a, &b, 0.05)?);
                }
            }
        }
        rows.push(SummaryRow {
            variant: variant.clone(),
            sweep_value: *sweep_value,
            report,
            failed_seeds: cells.iter().filter(|c| c.metrics.is_none()).map(|c| c.seed).collect(),
        });
    }
    Ok(Summary { task, primary, sweep_parameter: plan.and_then(|p| p.sweep.map(|s| s.parameter)), rows })
}

/// Rendered report: a text table, plus CSV and SVG bar chart for sweeps.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    pub csv: Option<String>,
    pub svg: Option<String>,
}

fn cell(mean: Option<f64>, std: Option<f64>, digits: usize) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.digits$} ± {s:.digits$}"),
        (Some(m), None) => format!("{m:.digits$}"),
        _ => "-".into(),
    }
}

pub fn render_report(summary: &Summary) -> RenderedReport {
    let rows: Vec<&SummaryRow> = summary.rows.iter().filter(|r| !r.report.seeds.is_empty()).collect();
    if rows.is_empty() {
        let failed: usize = summary.rows.iter().map(|r| r.failed_seeds.len()).sum();
        let mut text = "no results\n".to_string();
        if failed > 0 {
            let _ = writeln!(text, "{failed} failed run(s)");
        }
        return RenderedReport { text, csv: None, svg: None };
    }
    let header = ["variant", "seeds", "accuracy (%)", "mse", "feature dist.", "steps/s", "t", "p"];
    let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in &rows {
        let e = &r.report;
        let star = |m: Metric| match &e.t_test {
            Some(t) if t.significant && summary.primary == m => "*",
            _ => "",
        };
        let mut name = r.variant.clone();
        if let (Some(p), Some(v)) = (&summary.sweep_parameter, r.sweep_value) {
            let _ = write!(name, " [{p}={v}]");
        }
        let (t, p) = match &e.t_test {
            Some(t) if t.degenerate => ("degenerate".to_string(), "-".to_string()),
            Some(t) => (
                t.statistic.map_or("-".into(), |v| format!("{v:.3}")),
                t.p_value.map_or("-".into(), |v| format!("{v:.4}")),
            ),
            None => ("-".into(), "-".into()),
        };
        let mut seeds = e.seeds.len().to_string();
        if !r.failed_seeds.is_empty() {
            let _ = write!(seeds, " ({} failed)", r.failed_seeds.len());
        }
        table.push(vec![
            name,
            seeds,
            cell(e.accuracy_mean, e.accuracy_std, 1) + star(Metric::Accuracy),
            cell(e.mse_mean, e.mse_std, 4) + star(Metric::Mse),
            cell(e.feature_distance_mean, e.feature_distance_std, 4),
            cell(e.steps_per_sec_mean, e.steps_per_sec_std, 2),
            t,
            p,
        ]);
    }
    let widths: Vec<usize> =
        (0..header.len()).map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
    let mut text = format!("task: {}\n", summary.task);
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        let _ = writeln!(text, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(text, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        }
    }
    let _ = writeln!(text, "* significant difference from baseline (paired t-test, alpha 0.05)");
    let (csv, svg) = match &summary.sweep_parameter {
        Some(param) => {
            let metric = match summary.primary {
                Metric::Accuracy => "accuracy",
                Metric::Mse => "mse",
            };
            let mut csv = format!("variant,{param},{metric}_mean,{metric}_std,n\n");
            let mut bars = Vec::new();
            for r in &rows {
                let (m, s) = match summary.primary {
                    Metric::Accuracy => (r.report.accuracy_mean, r.report.accuracy_std),
                    Metric::Mse => (r.report.mse_mean, r.report.mse_std),
                };
                let fmt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
                let value = fmt(r.sweep_value);
                let _ = writeln!(csv, "{},{},{},{},{}", r.variant, value, fmt(m), fmt(s), r.report.seeds.len());
                if let Some(m) = m {
                    bars.push((format!("{} {value}", r.variant), m, s.unwrap_or(0.0)));
                }
            }
            (Some(csv), Some(bar_chart(&bars, &format!("{metric} vs {param}"))))
        }
        None => (None, None),
    };
    RenderedReport { text, csv, svg }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Vertical bars with one-std whiskers.
fn bar_chart(bars: &[(String, f64, f64)], title: &str) -> String {
    let (w, h, margin) = (80.0 * bars.len().max(1) as f64 + 80.0, 320.0, 50.0);
    let top = bars.iter().map(|b| b.1 + b.2).fold(0.0, f64::max).max(1e-12);
    let scale = (h - 2.0 * margin) / top;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{}</text>\n",
        w / 2.0,
        escape(title)
    );
    let base = h - margin;
    let _ = writeln!(svg, "<line x1=\"40\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>", w - 20.0);
    for (i, (label, mean, std)) in bars.iter().enumerate() {
        let x = 60.0 + 80.0 * i as f64;
        let bh = mean.max(0.0) * scale;
        let _ = writeln!(svg, "<rect x=\"{x}\" y=\"{}\" width=\"50\" height=\"{bh}\" fill=\"#4a7ab5\"/>", base - bh);
        let (lo, hi) = (base - (mean - std).max(0.0) * scale, base - (mean + std) * scale);
        let cx = x + 25.0;
        let _ = writeln!(svg, "<line x1=\"{cx}\" y1=\"{lo}\" x2=\"{cx}\" y2=\"{hi}\" stroke=\"black\"/>");
        let _ = writeln!(svg, "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{mean:.3}</text>", hi - 4.0);
        let _ = writeln!(svg, "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{}</text>", base + 15.0, escape(label));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `summary.json`, `summary.txt` and, for sweeps, `sweep.csv` and `sweep.svg`.
pub fn write_summary(dir: &Path, summary: &Summary) -> Result<RenderedReport> {
    write_json(&dir.join("summary.json"), summary)?;
    let report = render_report(summary);
    let put = |name: &str, text: &str| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    put("summary.txt", &report.text)?;
    if let Some(csv) = &report.csv {
        put("sweep.csv", csv)?;
    }
    if let Some(svg) = &report.svg {
        put("sweep.svg", svg)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_and_paths() {
        let mut v = serde_json::json!({"a": {"b": 1, "c": 2}, "d": 3});
        merge(&mut v, &serde_json::json!({"a": {"b": 5}}));
        assert_eq!(v, serde_json::json!({"a": {"b": 5, "c": 2}, "d": 3}));
        set_path(&mut v, "a.c", serde_json::json!(9)).unwrap();
        assert_eq!(v["a"]["c"], 9);
        assert!(set_path(&mut v, "a.zz", serde_json::json!(1)).is_err());
    }

    #[test]
    fn plan_cells_cover_variants_sweeps_and_seeds() {
        let plan = ExperimentPlan {
            task: TaskSpec::digits(),
            base: None,
            variants: vec![VariantEntry::of(Variant::Cr)],
            seeds: vec![0, 1],
            sweep: Some(Sweep { parameter: "weights.lambda_real".into(), values: vec![0.1, 1.0, 10.0, 100.0] }),
            output_dir: "out".into(),
            classifier: desk_classifier(),
            eval: Default::default(),
        };
        let cells = plan.cells().unwrap();
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[7].config.weights.lambda_real, 100.0);
        assert_eq!(cells[7].config.seed, 1);
        assert_eq!(cells[0].config.variant, Variant::Cr);
        assert!(cells.iter().all(|c| c.config.data_seed == cells[0].config.data_seed));
        let dirs: std::collections::HashSet<_> = cells.iter().map(|c| c.dir.clone()).collect();
        assert_eq!(dirs.len(), 8);
    }

    #[test]
    fn empty_summary_says_so() {
        let s = Summary { task: "t".into(), primary: Metric::Accuracy, sweep_parameter: None, rows: vec![] };
        assert_eq!(render_report(&s).text, "no results\n");
    }
}
