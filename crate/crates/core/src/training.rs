//! Two-generator, two-discriminator optimization with learning-rate decay,
//! regularizer ramps, ablation variants, and digit-classifier training.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use accr_autodiff::{Adam, Graph, ParamSet, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{apply, draw_batch, TransformSpec};
use crate::checkpoint::Archive;
use crate::data::{batcher, Dataset, DomainPair, ImageBatch};
use crate::error::{Error, Result};
use crate::losses::{
    adv_loss_d, adv_loss_g, assemble_objective, consistency, cycle_loss, gradient_penalty, penalty_mix, Critic,
    DiscriminatorTerms, GeneratorTerms, LossReport, LossWeights,
};
use crate::models::{
    Classifier, ClassifierConfig, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, InitScheme, Net,
    CLASSES,
};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Cr,
    CrFake,
    CrRec,
    Accr,
    Gp,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Self::Baseline, Self::Cr, Self::CrFake, Self::CrRec, Self::Accr, Self::Gp];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Cr => "cr",
            Self::CrFake => "cr_fake",
            Self::CrRec => "cr_rec",
            Self::Accr => "accr",
            Self::Gp => "gp",
        }
    }

    /// Zeroes the weights this variant does not use.
    pub fn gate(self, w: LossWeights, lambda_gp: f64) -> LossWeights {
        let mut w = LossWeights { lambda_gp: 0.0, ..w };
        match self {
            Self::Baseline => {
                w.lambda_real = 0.0;
                w.lambda_fake = 0.0;
                w.lambda_rec = 0.0;
            }
            Self::Cr => {
                w.lambda_fake = 0.0;
                w.lambda_rec = 0.0;
            }
            Self::CrFake => w.lambda_rec = 0.0,
            Self::CrRec => w.lambda_fake = 0.0,
            Self::Accr => {}
            Self::Gp => {
                w.lambda_real = 0.0;
                w.lambda_fake = 0.0;
                w.lambda_rec = 0.0;
                w.lambda_gp = lambda_gp;
            }
        }
        w
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    GeneratorFirst,
    DiscriminatorFirst,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub epochs_constant: usize,
    pub epochs_decay: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    /// `lambda_fake` and `lambda_rec` are ramp endpoints when `ramp` is set.
    pub weights: LossWeights,
    pub ramp: bool,
    pub lambda_gp: f64,
    pub transform: TransformSpec,
    /// Model initialization and augmentation draws.
    pub seed: u64,
    /// Batch order; kept fixed across variants so runs pair by seed.
    pub data_seed: u64,
    pub update_order: UpdateOrder,
    pub init: InitScheme,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub max_steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Accr,
            epochs_constant: 10,
            epochs_decay: 20,
            lr_g: 2e-4,
            lr_d: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            batch_size: 64,
            weights: LossWeights::default(),
            ramp: true,
            lambda_gp: 10.0,
            transform: TransformSpec::crop(),
            seed: 0,
            data_seed: 0,
            update_order: UpdateOrder::GeneratorFirst,
            init: InitScheme::Normal002,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            max_steps_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        self.epochs_constant + self.epochs_decay
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.transform.validate()?;
        let positive = [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("lambda_gp", self.lambda_gp + 1.0)];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.total_epochs() == 0 {
            return Err(Error::Config("schedule has no epochs".into()));
        }
        if self.generator.in_channels != self.discriminator.in_channels
            || self.generator.out_channels != self.discriminator.in_channels
        {
            return Err(Error::Config("generator and discriminator channel counts disagree".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form; identifies a run for resumption.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// `(lr_g, lr_d)`: constant, then linear decay reaching 0 after the last epoch.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> (f64, f64) {
    let factor = if epoch < cfg.epochs_constant {
        1.0
    } else if epoch >= cfg.total_epochs() || cfg.epochs_decay == 0 {
        0.0
    } else {
        1.0 - (epoch - cfg.epochs_constant) as f64 / cfg.epochs_decay as f64
    };
    (cfg.lr_g * factor, cfg.lr_d * factor)
}

/// Weights for `epoch`: `lambda_fake`/`lambda_rec` rise linearly from 0 at
/// epoch 0 to their configured values at the final epoch.
pub fn lambda_schedule(epoch: usize, cfg: &TrainConfig) -> LossWeights {
    let w = cfg.weights;
    if !cfg.ramp {
        return w;
    }
    let last = cfg.total_epochs().saturating_sub(1);
    let frac = if last == 0 { 0.0 } else { (epoch as f64 / last as f64).min(1.0) };
    LossWeights { lambda_fake: w.lambda_fake * frac, lambda_rec: w.lambda_rec * frac, ..w }
}

/// Weights actually optimized at `epoch` under the configured variant.
pub fn effective_weights(epoch: usize, cfg: &TrainConfig) -> LossWeights {
    cfg.variant.gate(lambda_schedule(epoch, cfg), cfg.lambda_gp)
}

/// G1: X1 -> X2, G2: X2 -> X1, D1 judges X1, D2 judges X2.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub g1: Generator,
    pub g2: Generator,
    pub d1: Discriminator,
    pub d2: Discriminator,
}

impl ModelBundle {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let seed = |k| rng::derive(cfg.seed, &[0x40de1, k]);
        Ok(Self {
            g1: Generator::new(cfg.generator.clone(), seed(1), cfg.init)?,
            g2: Generator::new(cfg.generator.clone(), seed(2), cfg.init)?,
            d1: Discriminator::new(cfg.discriminator.clone(), seed(3), cfg.init)?,
            d2: Discriminator::new(cfg.discriminator.clone(), seed(4), cfg.init)?,
        })
    }

    fn nets(&self) -> [(&'static str, &ParamSet); 4] {
        [("g1", self.g1.params()), ("g2", self.g2.params()), ("d1", self.d1.params()), ("d2", self.d2.params())]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub bundle: ModelBundle,
    pub opt_g1: Adam,
    pub opt_g2: Adam,
    pub opt_d1: Adam,
    pub opt_d2: Adam,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed steps over the whole run.
    pub step: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let bundle = ModelBundle::new(cfg)?;
        let adam = |p: &ParamSet| Adam::new(p, cfg.adam_beta1, cfg.adam_beta2);
        Ok(Self {
            opt_g1: adam(bundle.g1.params()),
            opt_g2: adam(bundle.g2.params()),
            opt_d1: adam(bundle.d1.params()),
            opt_d2: adam(bundle.d2.params()),
            bundle,
            epoch: 0,
            step: 0,
        })
    }

    fn optimizers(&self) -> [(&'static str, &Adam); 4] {
        [("g1", &self.opt_g1), ("g2", &self.opt_g2), ("d1", &self.opt_d1), ("d2", &self.opt_d2)]
    }

    pub fn to_archive(&self, cfg: &TrainConfig) -> Archive {
        let steps: serde_json::Map<String, serde_json::Value> =
            self.optimizers().iter().map(|(n, o)| (n.to_string(), o.steps().into())).collect();
        let mut a = Archive::new(serde_json::json!({
            "config_hash": cfg.hash(),
            "epoch": self.epoch,
            "step": self.step,
            "seed": cfg.seed,
            "variant": cfg.variant.name(),
            "optimizer_steps": steps,
        }));
        for (name, params) in self.bundle.nets() {
            a.push_params(name, params);
        }
        for ((name, opt), (_, params)) in self.optimizers().into_iter().zip(self.bundle.nets()) {
            let (m, v) = opt.moments();
            for (k, (pname, _)) in params.iter().enumerate() {
                a.push(format!("opt/{name}/m/{pname}"), m[k].clone());
                a.push(format!("opt/{name}/v/{pname}"), v[k].clone());
            }
        }
        a
    }

    pub fn save(&self, path: &Path, cfg: &TrainConfig) -> Result<()> {
        self.to_archive(cfg).save(path)
    }

    /// Restores a state saved under the same configuration.
    pub fn load(path: &Path, cfg: &TrainConfig) -> Result<Self> {
        let a = Archive::load(path)?;
        let bad = |reason: String| Error::Format { path: path.into(), reason };
        let hash = a.meta["config_hash"].as_str().unwrap_or_default();
        if hash != cfg.hash() {
            return Err(Error::Config(format!("{} was written by a different configuration", path.display())));
        }
        let mut state = Self::new(cfg)?;
        a.load_params("g1", state.bundle.g1.params_mut(), path)?;
        a.load_params("g2", state.bundle.g2.params_mut(), path)?;
        a.load_params("d1", state.bundle.d1.params_mut(), path)?;
        a.load_params("d2", state.bundle.d2.params_mut(), path)?;
        let restore = |name: &str, params: &ParamSet, opt: &mut Adam| -> Result<()> {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (pname, _) in params.iter() {
                for (kind, out) in [("m", &mut m), ("v", &mut v)] {
                    let key = format!("opt/{name}/{kind}/{pname}");
                    out.push(a.get(&key).ok_or_else(|| bad(format!("missing {key}")))?.clone());
                }
            }
            let steps = a.meta["optimizer_steps"][name]
                .as_u64()
                .ok_or_else(|| bad(format!("missing step count for {name}")))?;
            opt.restore(steps, m, v).map_err(bad)
        };
        let b = state.bundle.clone();
        restore("g1", b.g1.params(), &mut state.opt_g1)?;
        restore("g2", b.g2.params(), &mut state.opt_g2)?;
        restore("d1", b.d1.params(), &mut state.opt_d1)?;
        restore("d2", b.d2.params(), &mut state.opt_d2)?;
        state.epoch = a.meta["epoch"].as_u64().ok_or_else(|| bad("missing epoch".into()))? as usize;
        state.step = a.meta["step"].as_u64().ok_or_else(|| bad("missing step".into()))?;
        Ok(state)
    }
}

/// Detached translations and reconstructions for the discriminator step.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples {
    /// `G1(x1)`, judged by D2.
    pub fake2: ImageBatch,
    /// `G2(x2)`, judged by D1.
    pub fake1: ImageBatch,
    /// `G2(G1(x1))`, judged by D1.
    pub rec1: ImageBatch,
    /// `G1(G2(x2))`, judged by D2.
    pub rec2: ImageBatch,
}

fn batch_of(v: accr_autodiff::Var<'_>) -> Result<ImageBatch> {
    ImageBatch::new(v.value().as_ref().clone())
}

/// Generator losses at the current parameters, with gradients for G1 and G2
/// when `grads` is set. Discriminators enter as constants.
#[allow(clippy::type_complexity)]
pub fn generator_pass(
    b: &ModelBundle,
    x1: &ImageBatch,
    x2: &ImageBatch,
    w: &LossWeights,
    grads: bool,
) -> Result<(GeneratorTerms<f64>, Samples, Option<(Vec<Tensor>, Vec<Tensor>)>)> {
    let graph = Graph::new();
    let pg1 = b.g1.params().bind(&graph, grads);
    let pg2 = b.g2.params().bind(&graph, grads);
    let pd1 = b.d1.params().bind(&graph, false);
    let pd2 = b.d2.params().bind(&graph, false);
    let (x1v, x2v) = (graph.constant(x1.tensor().clone()), graph.constant(x2.tensor().clone()));
    let fake2 = b.g1.forward(&pg1, x1v)?;
    let rec1 = b.g2.forward(&pg2, fake2)?;
    let fake1 = b.g2.forward(&pg2, x2v)?;
    let rec2 = b.g1.forward(&pg1, fake1)?;
    let terms = GeneratorTerms {
        gan_g1: adv_loss_g(b.d2.scores(&pd2, fake2)?)?,
        gan_g2: adv_loss_g(b.d1.scores(&pd1, fake1)?)?,
        cyc: cycle_loss(x1v, rec1, x2v, rec2, w)?,
    };
    let total = terms.total();
    let samples =
        Samples { fake2: batch_of(fake2)?, fake1: batch_of(fake1)?, rec1: batch_of(rec1)?, rec2: batch_of(rec2)? };
    let values = terms.map(|v| v.value().item());
    let g = grads.then(|| {
        let mut wrt = pg1.vars().to_vec();
        wrt.extend_from_slice(pg2.vars());
        let mut all = graph.grad(total, &wrt);
        let second = all.split_off(pg1.vars().len());
        (all, second)
    });
    Ok((values, samples, g))
}

/// Translations and reconstructions of both batches, without gradients.
pub fn sample(b: &ModelBundle, x1: &ImageBatch, x2: &ImageBatch) -> Result<Samples> {
    Ok(generator_pass(b, x1, x2, &LossWeights::default(), false)?.1)
}

/// Term ids for per-step random streams.
const DRAW_REAL: u64 = 1;
const DRAW_FAKE: u64 = 2;
const DRAW_REC: u64 = 3;
const DRAW_GP: u64 = 4;

/// Discriminator losses with regularizers active under `w`, and gradients for D1, D2.
#[allow(clippy::type_complexity)]
pub fn discriminator_pass(
    b: &ModelBundle,
    cfg: &TrainConfig,
    step: u64,
    x1: &ImageBatch,
    x2: &ImageBatch,
    s: &Samples,
    w: &LossWeights,
) -> Result<(DiscriminatorTerms<f64>, Vec<Tensor>, Vec<Tensor>)> {
    let graph = Graph::new();
    let pd1 = b.d1.params().bind(&graph, true);
    let pd2 = b.d2.params().bind(&graph, true);
    let (c1, c2) = (Critic::new(&b.d1, &pd1), Critic::new(&b.d2, &pd2));
    let real1 = c1.scores_of(x1)?;
    let real2 = c2.scores_of(x2)?;
    let fake1 = c1.scores_of(&s.fake1)?;
    let fake2 = c2.scores_of(&s.fake2)?;
    let draw = |term: u64, n: usize| draw_batch(&cfg.transform, rng::derive(cfg.seed, &[0xd4a3, step, term]), n);
    let cr_real = if w.lambda_real > 0.0 {
        let t = draw(DRAW_REAL, x1.len())?;
        Some(consistency(c1, real1, x1, &t)? + consistency(c2, real2, x2, &t)?)
    } else {
        None
    };
    let cr_fake = if w.lambda_fake > 0.0 {
        let t = draw(DRAW_FAKE, x1.len())?;
        Some(consistency(c2, fake2, &s.fake2, &t)? + consistency(c1, fake1, &s.fake1, &t)?)
    } else {
        None
    };
    let cr_rec = if w.lambda_rec > 0.0 {
        let t = draw(DRAW_REC, x1.len())?;
        let rec1 = c1.scores_of(&s.rec1)?;
        let rec2 = c2.scores_of(&s.rec2)?;
        Some(consistency(c1, rec1, &s.rec1, &t)? + consistency(c2, rec2, &s.rec2, &t)?)
    } else {
        None
    };
    let gp = if w.lambda_gp > 0.0 {
        let seed = rng::derive(cfg.seed, &[0xd4a3, step, DRAW_GP]);
        let p1 = gradient_penalty(c1, x1.tensor(), s.fake1.tensor(), &penalty_mix(seed, x1.len()))?;
        let p2 = gradient_penalty(c2, x2.tensor(), s.fake2.tensor(), &penalty_mix(seed ^ 1, x2.len()))?;
        Some(p1 + p2)
    } else {
        None
    };
    let terms = DiscriminatorTerms {
        gan_d1: adv_loss_d(real1, fake1)?,
        gan_d2: adv_loss_d(real2, fake2)?,
        cr_real,
        cr_fake,
        cr_rec,
        gp,
    };
    let total = terms.total(w);
    let mut wrt = pd1.vars().to_vec();
    wrt.extend_from_slice(pd2.vars());
    let mut g1 = graph.grad(total, &wrt);
    let g2 = g1.split_off(pd1.vars().len());
    Ok((terms.map(|v| v.value().item()), g1, g2))
}

fn check_grads(grads: &[Tensor], what: &str) -> Result<()> {
    if grads.iter().all(Tensor::all_finite) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what} gradient")))
    }
}

/// One generator update and one discriminator update on a pair of batches.
pub fn train_step(state: &mut TrainState, x1: &ImageBatch, x2: &ImageBatch, cfg: &TrainConfig) -> Result<LossReport> {
    if x1.len() != x2.len() {
        return Err(Error::Shape(format!("domain batches differ in size: {} vs {}", x1.len(), x2.len())));
    }
    let w = effective_weights(state.epoch, cfg);
    let (lr_g, lr_d) = lr_schedule(state.epoch, cfg);
    let diagnose = |e: Error, partial: &str| match e {
        Error::Numeric(msg) => Error::Numeric(format!("step {} epoch {}: {msg}; {partial}", state.step, state.epoch)),
        other => other,
    };
    let (g_terms, d_terms) = match cfg.update_order {
        UpdateOrder::GeneratorFirst => {
            let (g_terms, samples, grads) =
                generator_pass(&state.bundle, x1, x2, &w, true).map_err(|e| diagnose(e, ""))?;
            let (gg1, gg2) = grads.expect("requested");
            check_grads(&gg1, "G1").and(check_grads(&gg2, "G2")).map_err(|e| diagnose(e, &format!("{g_terms:?}")))?;
            state.opt_g1.step(state.bundle.g1.params_mut(), &gg1, lr_g);
            state.opt_g2.step(state.bundle.g2.params_mut(), &gg2, lr_g);
            let (d_terms, gd1, gd2) = discriminator_pass(&state.bundle, cfg, state.step, x1, x2, &samples, &w)
                .map_err(|e| diagnose(e, &format!("{g_terms:?}")))?;
            check_grads(&gd1, "D1").and(check_grads(&gd2, "D2")).map_err(|e| diagnose(e, &format!("{d_terms:?}")))?;
            state.opt_d1.step(state.bundle.d1.params_mut(), &gd1, lr_d);
            state.opt_d2.step(state.bundle.d2.params_mut(), &gd2, lr_d);
            (g_terms, d_terms)
        }
        UpdateOrder::DiscriminatorFirst => {
            let (_, samples, _) = generator_pass(&state.bundle, x1, x2, &w, false).map_err(|e| diagnose(e, ""))?;
            let (d_terms, gd1, gd2) = discriminator_pass(&state.bundle, cfg, state.step, x1, x2, &samples, &w)
                .map_err(|e| diagnose(e, ""))?;
            check_grads(&gd1, "D1").and(check_grads(&gd2, "D2")).map_err(|e| diagnose(e, &format!("{d_terms:?}")))?;
            state.opt_d1.step(state.bundle.d1.params_mut(), &gd1, lr_d);
            state.opt_d2.step(state.bundle.d2.params_mut(), &gd2, lr_d);
            let (g_terms, _, grads) = generator_pass(&state.bundle, x1, x2, &w, true).map_err(|e| diagnose(e, ""))?;
            let (gg1, gg2) = grads.expect("requested");
            check_grads(&gg1, "G1").and(check_grads(&gg2, "G2")).map_err(|e| diagnose(e, &format!("{g_terms:?}")))?;
            state.opt_g1.step(state.bundle.g1.params_mut(), &gg1, lr_g);
            state.opt_g2.step(state.bundle.g2.params_mut(), &gg2, lr_g);
            (g_terms, d_terms)
        }
    };
    let report = assemble_objective(&g_terms, &d_terms, &w).map_err(|e| diagnose(e, ""))?;
    state.step += 1;
    Ok(report)
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossReport,
    pub weights: LossWeights,
    pub lr_g: f64,
    pub lr_d: f64,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:04}.ckpt"))
}

/// Newest checkpoint in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir.join(CHECKPOINT_DIR))
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    found.sort();
    found.pop()
}

/// Reads every record of a metrics log.
pub fn read_metrics(path: &Path) -> Result<Vec<StepRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line)
                .map_err(|e| Error::Format { path: path.into(), reason: format!("line {}: {e}", i + 1) })
        })
        .collect()
}

/// Opens the metrics log, keeping only records from epochs before `epoch`.
fn open_metrics(dir: &Path, epoch: usize) -> Result<BufWriter<fs::File>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(METRICS_FILE);
    let kept: Vec<StepRecord> = if epoch > 0 && path.exists() {
        read_metrics(&path)?.into_iter().filter(|r| r.epoch < epoch).collect()
    } else {
        Vec::new()
    };
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(f);
    for r in kept {
        writeln!(w, "{}", serde_json::to_string(&r).expect("record serializes")).map_err(|e| Error::io(&path, e))?;
    }
    Ok(w)
}

/// Runs the full schedule. With `out`, logs every step to `metrics.jsonl`,
/// checkpoints after every epoch, and resumes from the newest checkpoint.
pub fn train(cfg: &TrainConfig, pair: &DomainPair, out: Option<&Path>) -> Result<TrainState> {
    cfg.validate()?;
    let mut state = match out.and_then(latest_checkpoint) {
        Some(path) => {
            log::info!("resuming from {}", path.display());
            TrainState::load(&path, cfg)?
        }
        None => TrainState::new(cfg)?,
    };
    let b1 = batcher(&pair.source, cfg.batch_size, rng::derive(cfg.data_seed, &[1]), true)?;
    let b2 = batcher(&pair.target, cfg.batch_size, rng::derive(cfg.data_seed, &[2]), true)?;
    if b1.is_empty() || b2.is_empty() {
        return Err(Error::Validation(format!(
            "batch size {} exceeds a domain ({} and {} images)",
            cfg.batch_size,
            pair.source.len(),
            pair.target.len()
        )));
    }
    let metrics_path = out.map(|d| d.join(METRICS_FILE));
    let mut log = out.map(|d| open_metrics(d, state.epoch)).transpose()?;
    let steps = b1.len().min(b2.len()).min(cfg.max_steps_per_epoch.unwrap_or(usize::MAX));
    while state.epoch < cfg.total_epochs() {
        let epoch = state.epoch;
        let (lr_g, lr_d) = lr_schedule(epoch, cfg);
        let weights = effective_weights(epoch, cfg);
        for ((_, x1), (_, x2)) in b1.epoch(epoch as u64).zip(b2.epoch(epoch as u64)).take(steps) {
            let step = state.step;
            let losses = train_step(&mut state, &x1, &x2, cfg)?;
            if let (Some(w), Some(p)) = (log.as_mut(), metrics_path.as_ref()) {
                let record = StepRecord { step, epoch, losses, weights, lr_g, lr_d };
                writeln!(w, "{}", serde_json::to_string(&record).expect("record serializes"))
                    .map_err(|e| Error::io(p, e))?;
            }
        }
        state.epoch += 1;
        if let (Some(dir), Some(w), Some(p)) = (out, log.as_mut(), metrics_path.as_ref()) {
            w.flush().map_err(|e| Error::io(p, e))?;
            state.save(&checkpoint_path(dir, epoch), cfg)?;
        }
        log::debug!("epoch {epoch} done after step {}", state.step);
    }
    Ok(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub width: usize,
    pub hidden: usize,
    /// Share of the data held out for validation (needs at least 10 items).
    pub val_fraction: f64,
    /// Input augmentation drawn afresh for every training batch.
    pub augment: Option<TransformSpec>,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self { epochs: 10, lr: 1e-3, batch_size: 64, seed: 0, width: 32, hidden: 128, val_fraction: 0.1, augment: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedClassifier {
    pub net: Classifier,
    /// In `[0, 1]`; measured on the training data when no split was possible.
    pub val_accuracy: f64,
}

/// Fraction of `dataset` the classifier labels correctly.
pub fn accuracy(net: &Classifier, dataset: &Dataset) -> Result<f64> {
    let labels = dataset.labels().ok_or_else(|| Error::Validation(format!("{} has no labels", dataset.name)))?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in (0..dataset.len()).collect::<Vec<_>>().chunks(256) {
        let pred = net.predict(&dataset.batch(chunk))?;
        correct += chunk.iter().zip(pred).filter(|(&i, p)| labels[i] == *p).count();
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Mean cross-entropy of `logits` `[N, 10]` against `labels`.
pub fn cross_entropy<'g>(logits: accr_autodiff::Var<'g>, labels: &[u8]) -> accr_autodiff::Var<'g> {
    let n = labels.len();
    let mut onehot = vec![0.0; n * CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * CLASSES + l as usize] = 1.0;
    }
    let mask = Rc::new(Tensor::new(&[n, CLASSES], onehot).expect("shape matches"));
    logits.log_softmax().mask_mul(mask).sum().scale(-1.0 / n as f64)
}

/// Trains a digit classifier with Adam and cross-entropy.
pub fn train_classifier(dataset: &Dataset, cfg: &ClassifierTrainConfig) -> Result<TrainedClassifier> {
    let labels =
        dataset.labels().ok_or_else(|| Error::Validation(format!("{} has no labels to train on", dataset.name)))?;
    if dataset.is_empty() {
        return Err(Error::Validation("cannot train a classifier on an empty dataset".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) || cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::Config(format!("invalid classifier config {cfg:?}")));
    }
    let (c, h, w) = dataset.image_shape();
    if h != w {
        return Err(Error::Shape(format!("classifier needs square images, got {h}x{w}")));
    }
    debug_assert_eq!(labels.len(), dataset.len());
    let n_val = if dataset.len() >= 10 { (dataset.len() as f64 * cfg.val_fraction).round() as usize } else { 0 };
    let (train_set, val_set) = dataset.split_at(dataset.len() - n_val);
    let config = ClassifierConfig { in_channels: c, size: h, width: cfg.width, hidden: cfg.hidden };
    let mut net = Classifier::new(config, rng::derive(cfg.seed, &[0xc1a5]), InitScheme::Default)?;
    let mut opt = Adam::new(net.params(), 0.9, 0.999);
    let batches = batcher(&train_set, cfg.batch_size.min(train_set.len()), rng::derive(cfg.seed, &[0xba7]), false)?;
    for epoch in 0..cfg.epochs {
        for (k, (idx, x)) in batches.epoch(epoch as u64).enumerate() {
            let x = match &cfg.augment {
                Some(t) => apply(&draw_batch(t, rng::derive(cfg.seed, &[0xa6, epoch as u64, k as u64]), x.len())?, &x)?,
                None => x,
            };
            let y = train_set.labels_of(&idx).expect("labelled");
            let graph = Graph::new();
            let p = net.params().bind(&graph, true);
            let loss = cross_entropy(net.forward(&p, graph.constant(x.into_tensor()))?, &y);
            let grads = p.grads(loss);
            check_grads(&grads, "classifier")?;
            opt.step(net.params_mut(), &grads, cfg.lr);
        }
    }
    let val_accuracy = if val_set.is_empty() { accuracy(&net, &train_set)? } else { accuracy(&net, &val_set)? };
    Ok(TrainedClassifier { net, val_accuracy })
}

/// Saves a classifier with its configuration.
pub fn save_classifier(net: &Classifier, path: &Path) -> Result<()> {
    let mut a = Archive::new(serde_json::json!({ "classifier": net.config }));
    a.push_params("classifier", net.params());
    a.save(path)
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    let a = Archive::load(path)?;
    let config: ClassifierConfig = serde_json::from_value(a.meta["classifier"].clone())
        .map_err(|e| Error::Format { path: path.into(), reason: format!("bad classifier config: {e}") })?;
    let mut net = Classifier::new(config, 0, InitScheme::Default)?;
    a.load_params("classifier", net.params_mut(), path)?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), (2e-4, 1e-4));
        assert_eq!(lr_schedule(9, &cfg), (2e-4, 1e-4));
        let (g, d) = lr_schedule(20, &cfg);
        assert!((g - 1e-4).abs() < 1e-18 && (d - 5e-5).abs() < 1e-18);
        assert_eq!(lr_schedule(30, &cfg), (0.0, 0.0));
        assert_eq!(lr_schedule(100, &cfg), (0.0, 0.0));
    }

    #[test]
    fn lambda_ramp_points() {
        let cfg = TrainConfig { epochs_constant: 2, epochs_decay: 3, ..Default::default() };
        let w0 = lambda_schedule(0, &cfg);
        assert_eq!((w0.lambda_fake, w0.lambda_rec, w0.lambda_real), (0.0, 0.0, 1.0));
        let mid = lambda_schedule(2, &cfg);
        assert_eq!((mid.lambda_fake, mid.lambda_rec), (0.25, 0.25));
        let last = lambda_schedule(4, &cfg);
        assert_eq!((last.lambda_fake, last.lambda_rec), (0.5, 0.5));
        assert_eq!(last.lambda_cyc_1, cfg.weights.lambda_cyc_1);
    }

    #[test]
    fn variant_gating() {
        let w = LossWeights::default();
        let b = Variant::Baseline.gate(w, 10.0);
        assert_eq!((b.lambda_real, b.lambda_fake, b.lambda_rec, b.lambda_gp), (0.0, 0.0, 0.0, 0.0));
        let c = Variant::Cr.gate(w, 10.0);
        assert_eq!((c.lambda_real, c.lambda_fake, c.lambda_rec), (1.0, 0.0, 0.0));
        assert_eq!(Variant::CrFake.gate(w, 10.0).lambda_rec, 0.0);
        assert_eq!(Variant::CrRec.gate(w, 10.0).lambda_fake, 0.0);
        assert_eq!(Variant::Gp.gate(w, 10.0).lambda_gp, 10.0);
        assert_eq!(Variant::Accr.gate(w, 10.0), LossWeights { lambda_gp: 0.0, ..w });
        assert_eq!("cr_fake".parse::<Variant>().unwrap(), Variant::CrFake);
        assert!("nope".parse::<Variant>().is_err());
    }

    #[test]
    fn config_toml_and_hash() {
        let cfg: TrainConfig = toml::from_str(
            "variant = \"cr\"\nbatch_size = 8\n[transform]\nkind = \"random_crop\"\npad = 1\n[generator]\nin_channels = 3\nout_channels = 3\nwidth = 8\ndownsampling = 2\nres_blocks = 1\nnorm = true\n",
        )
        .unwrap();
        assert_eq!(cfg.variant, Variant::Cr);
        assert_eq!(cfg.transform, TransformSpec::RandomCrop { pad: Some(1) });
        assert_eq!(cfg.lr_g, 2e-4);
        assert_eq!(cfg.hash(), cfg.clone().hash());
        assert_ne!(cfg.hash(), TrainConfig { seed: 1, ..cfg.clone() }.hash());
        assert!(toml::from_str::<TrainConfig>("bogus = 1").is_err());
        assert!(TrainConfig { lr_g: -1.0, ..Default::default() }.validate().is_err());
    }
}
