//! Least-squares adversarial losses, cycle consistency, consistency
//! regularization on real/fake/reconstructed samples, gradient penalty.
//!
//! CR terms take detached images: they train discriminators only.

use accr_autodiff::{Bound, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{apply, TransformDraw};
use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::models::Discriminator;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_real: f64,
    pub lambda_fake: f64,
    pub lambda_rec: f64,
    /// Cycle weight on the X1 side, `|G2(G1(x1)) - x1|`.
    pub lambda_cyc_1: f64,
    /// Cycle weight on the X2 side, `|G1(G2(x2)) - x2|`.
    pub lambda_cyc_2: f64,
    /// Gradient-penalty weight; only the `gp` variant sets it.
    #[serde(default)]
    pub lambda_gp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_real: 1.0,
            lambda_fake: 0.5,
            lambda_rec: 0.5,
            lambda_cyc_1: 10.0,
            lambda_cyc_2: 10.0,
            lambda_gp: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_real", self.lambda_real),
            ("lambda_fake", self.lambda_fake),
            ("lambda_rec", self.lambda_rec),
            ("lambda_cyc_1", self.lambda_cyc_1),
            ("lambda_cyc_2", self.lambda_cyc_2),
            ("lambda_gp", self.lambda_gp),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

fn finite(v: Var<'_>, what: &str) -> Result<()> {
    if v.value_ref().all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} contains NaN or Inf")))
    }
}

/// `mean((real - 1)^2) + mean(fake^2)`; `fake` must come from detached generator output.
pub fn adv_loss_d<'g>(real: Var<'g>, fake: Var<'g>) -> Result<Var<'g>> {
    finite(real, "real scores")?;
    finite(fake, "fake scores")?;
    Ok(real.add_scalar(-1.0).square().mean() + fake.square().mean())
}

/// `mean((fake - 1)^2)`.
pub fn adv_loss_g(fake: Var<'_>) -> Result<Var<'_>> {
    finite(fake, "fake scores")?;
    Ok(fake.add_scalar(-1.0).square().mean())
}

fn same_shape(a: &Var<'_>, b: &Var<'_>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// `λ1·mean|rec1 - x1| + λ2·mean|rec2 - x2|`.
pub fn cycle_loss<'g>(x1: Var<'g>, rec1: Var<'g>, x2: Var<'g>, rec2: Var<'g>, w: &LossWeights) -> Result<Var<'g>> {
    same_shape(&x1, &rec1, "cycle X1")?;
    same_shape(&x2, &rec2, "cycle X2")?;
    Ok((rec1 - x1).abs().mean().scale(w.lambda_cyc_1) + (rec2 - x2).abs().mean().scale(w.lambda_cyc_2))
}

/// A discriminator together with its parameters recorded on a graph.
#[derive(Clone, Copy)]
pub struct Critic<'a, 'g> {
    pub net: &'a Discriminator,
    pub params: &'a Bound<'g>,
}

impl<'a, 'g> Critic<'a, 'g> {
    pub fn new(net: &'a Discriminator, params: &'a Bound<'g>) -> Self {
        Self { net, params }
    }

    pub fn graph(&self) -> &'g accr_autodiff::Graph {
        self.params.vars()[0].graph()
    }

    pub fn scores(&self, x: Var<'g>) -> Result<Var<'g>> {
        self.net.scores(self.params, x)
    }

    /// Scores a detached batch.
    pub fn scores_of(&self, x: &ImageBatch) -> Result<Var<'g>> {
        self.scores(self.graph().constant(x.tensor().clone()))
    }
}

/// `mean((D(x) - D(T(x)))^2)` given the already computed `D(x)`.
pub fn consistency<'g>(d: Critic<'_, 'g>, scores_x: Var<'g>, x: &ImageBatch, t: &TransformDraw) -> Result<Var<'g>> {
    let scores_t = d.scores_of(&apply(t, x)?)?;
    if scores_t.shape() != scores_x.shape() {
        return Err(Error::Shape(format!(
            "augmented score map {:?} differs from {:?}; transforms must preserve shape",
            scores_t.shape(),
            scores_x.shape()
        )));
    }
    let term = (scores_x - scores_t).square().mean();
    finite(term, "consistency term")?;
    Ok(term)
}

fn cr_pair<'g>(
    d1: Critic<'_, 'g>,
    x1: &ImageBatch,
    d2: Critic<'_, 'g>,
    x2: &ImageBatch,
    t: &TransformDraw,
) -> Result<Var<'g>> {
    let a = consistency(d1, d1.scores_of(x1)?, x1, t)?;
    let b = consistency(d2, d2.scores_of(x2)?, x2, t)?;
    Ok(a + b)
}

/// Consistency on real samples of both domains.
pub fn cr_real<'g>(
    d1: Critic<'_, 'g>,
    d2: Critic<'_, 'g>,
    x1: &ImageBatch,
    x2: &ImageBatch,
    t: &TransformDraw,
) -> Result<Var<'g>> {
    cr_pair(d1, x1, d2, x2, t)
}

/// Consistency on translated samples: `fake2 = G1(x1)` is judged by D2,
/// `fake1 = G2(x2)` by D1.
pub fn cr_fake<'g>(
    d1: Critic<'_, 'g>,
    d2: Critic<'_, 'g>,
    fake2: &ImageBatch,
    fake1: &ImageBatch,
    t: &TransformDraw,
) -> Result<Var<'g>> {
    cr_pair(d2, fake2, d1, fake1, t)
}

/// Consistency on reconstructions: `rec1 = G2(G1(x1))` is judged by D1,
/// `rec2 = G1(G2(x2))` by D2.
pub fn cr_rec<'g>(
    d1: Critic<'_, 'g>,
    d2: Critic<'_, 'g>,
    rec1: &ImageBatch,
    rec2: &ImageBatch,
    t: &TransformDraw,
) -> Result<Var<'g>> {
    cr_pair(d1, rec1, d2, rec2, t)
}

/// Interpolation weights for [`gradient_penalty`], one per sample.
pub fn penalty_mix(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng::rng(seed, &[0x6e9]);
    (0..n).map(|_| r.gen::<f64>()).collect()
}

/// `mean((|grad_x sum D(x̂)|_2 - 1)^2)` with `x̂ = ε·real + (1 - ε)·fake`,
/// the norm taken per sample over the whole image.
pub fn gradient_penalty<'g>(d: Critic<'_, 'g>, real: &Tensor, fake: &Tensor, eps: &[f64]) -> Result<Var<'g>> {
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!("penalty inputs {:?} vs {:?}", real.shape(), fake.shape())));
    }
    let n = real.shape()[0];
    if eps.len() != n {
        return Err(Error::Shape(format!("{} mixing weights for {n} samples", eps.len())));
    }
    let per = real.len() / n.max(1);
    let mixed: Vec<f64> = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (r, f))| {
            let e = eps[i / per];
            e * r + (1.0 - e) * f
        })
        .collect();
    let graph = d.graph();
    let x = graph.leaf(Tensor::new(real.shape(), mixed)?);
    let out = d.scores(x)?.sum();
    let grad = graph.grad_vars(out, &[x], true)[0].unwrap_or_else(|| graph.constant(Tensor::zeros(real.shape())));
    finite(grad, "penalty input gradient")?;
    let norms = grad.square().sum_trailing(1).add_scalar(1e-12).sqrt();
    Ok(norms.add_scalar(-1.0).square().mean())
}

/// Generic over scalar values and graph variables so reported totals and
/// optimized totals are assembled by one formula.
pub trait Term: Copy {
    fn plus(self, other: Self) -> Self;
    fn times(self, c: f64) -> Self;
}

impl Term for f64 {
    fn plus(self, other: Self) -> Self {
        self + other
    }
    fn times(self, c: f64) -> Self {
        self * c
    }
}

impl Term for Var<'_> {
    fn plus(self, other: Self) -> Self {
        self + other
    }
    fn times(self, c: f64) -> Self {
        self.scale(c)
    }
}

/// Generator-step terms. `gan_g1` is G1's adversarial loss under D2.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorTerms<T> {
    pub gan_g1: T,
    pub gan_g2: T,
    pub cyc: T,
}

/// Discriminator-step terms; inactive regularizers are `None`.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorTerms<T> {
    pub gan_d1: T,
    pub gan_d2: T,
    pub cr_real: Option<T>,
    pub cr_fake: Option<T>,
    pub cr_rec: Option<T>,
    pub gp: Option<T>,
}

impl<T: Term> GeneratorTerms<T> {
    pub fn total(&self) -> T {
        self.gan_g1.plus(self.gan_g2).plus(self.cyc)
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> GeneratorTerms<U> {
        GeneratorTerms { gan_g1: f(self.gan_g1), gan_g2: f(self.gan_g2), cyc: f(self.cyc) }
    }
}

impl<T: Term> DiscriminatorTerms<T> {
    pub fn total(&self, w: &LossWeights) -> T {
        let mut total = self.gan_d1.plus(self.gan_d2);
        for (term, weight) in [
            (self.cr_real, w.lambda_real),
            (self.cr_fake, w.lambda_fake),
            (self.cr_rec, w.lambda_rec),
            (self.gp, w.lambda_gp),
        ] {
            if let Some(term) = term {
                total = total.plus(term.times(weight));
            }
        }
        total
    }

    pub fn map<U>(&self, f: impl Fn(T) -> U) -> DiscriminatorTerms<U> {
        DiscriminatorTerms {
            gan_d1: f(self.gan_d1),
            gan_d2: f(self.gan_d2),
            cr_real: self.cr_real.map(&f),
            cr_fake: self.cr_fake.map(&f),
            cr_rec: self.cr_rec.map(&f),
            gp: self.gp.map(&f),
        }
    }
}

/// Per-step loss values; inactive terms are reported as 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub gan_g1: f64,
    pub gan_g2: f64,
    pub gan_d1: f64,
    pub gan_d2: f64,
    pub cyc: f64,
    pub cr_real: f64,
    pub cr_fake: f64,
    pub cr_rec: f64,
    pub gp: f64,
    pub total_g: f64,
    pub total_d: f64,
}

/// Fills a report with `total_g = gan_g1 + gan_g2 + cyc` and
/// `total_d = gan_d1 + gan_d2 + Σ λ·regularizer`.
pub fn assemble_objective(g: &GeneratorTerms<f64>, d: &DiscriminatorTerms<f64>, w: &LossWeights) -> Result<LossReport> {
    w.validate()?;
    let report = LossReport {
        gan_g1: g.gan_g1,
        gan_g2: g.gan_g2,
        gan_d1: d.gan_d1,
        gan_d2: d.gan_d2,
        cyc: g.cyc,
        cr_real: d.cr_real.unwrap_or(0.0),
        cr_fake: d.cr_fake.unwrap_or(0.0),
        cr_rec: d.cr_rec.unwrap_or(0.0),
        gp: d.gp.unwrap_or(0.0),
        total_g: g.total(),
        total_d: d.total(w),
    };
    let values = [
        report.gan_g1,
        report.gan_g2,
        report.gan_d1,
        report.gan_d2,
        report.cyc,
        report.cr_real,
        report.cr_fake,
        report.cr_rec,
        report.gp,
        report.total_g,
        report.total_d,
    ];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite loss term in {report:?}")));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{draw, draw_batch, TransformSpec};
    use crate::models::{DiscriminatorConfig, InitScheme, Net};
    use accr_autodiff::Graph;

    fn images(n: usize, seed: u64) -> ImageBatch {
        let mut r = rng::rng(seed, &[]);
        let data = (0..n * 3 * 8 * 8).map(|_| r.gen_range(-1.0..1.0)).collect();
        ImageBatch::new(Tensor::new(&[n, 3, 8, 8], data).unwrap()).unwrap()
    }

    fn tiny_d(seed: u64) -> Discriminator {
        Discriminator::new(
            DiscriminatorConfig { in_channels: 3, width: 2, strides: vec![2], norm: true },
            seed,
            InitScheme::Default,
        )
        .unwrap()
    }

    fn scalar(g: &Graph, v: f64, n: usize) -> Var<'_> {
        g.constant(Tensor::full(&[n], v))
    }

    #[test]
    fn lsgan_arithmetic() {
        let g = Graph::new();
        let v = |a, b| adv_loss_d(scalar(&g, a, 4), scalar(&g, b, 4)).unwrap().value().item();
        assert_eq!(v(1.0, 0.0), 0.0);
        assert_eq!(v(0.5, 0.5), 0.5);
        assert_eq!(v(0.0, 1.0), 2.0);
        let fake = g.constant(Tensor::new(&[4], vec![0.0, 1.0, 0.5, 0.5]).unwrap());
        assert_eq!(adv_loss_g(fake).unwrap().value().item(), 0.375);
        assert_eq!(adv_loss_g(scalar(&g, 1.0, 3)).unwrap().value().item(), 0.0);
        assert_eq!(adv_loss_g(scalar(&g, 0.0, 3)).unwrap().value().item(), 1.0);
        assert!(matches!(adv_loss_g(scalar(&g, f64::NAN, 2)), Err(Error::Numeric(_))));
    }

    #[test]
    fn cycle_arithmetic() {
        let g = Graph::new();
        let w = LossWeights { lambda_cyc_1: 10.0, lambda_cyc_2: 0.1, ..Default::default() };
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let rec1 = g.constant(Tensor::full(&[2, 3], 0.2));
        let rec2 = g.constant(Tensor::full(&[2, 3], -0.5));
        let v = cycle_loss(x, rec1, x, rec2, &w).unwrap().value().item();
        assert!((v - 2.05).abs() < 1e-12);
        assert_eq!(cycle_loss(x, x, x, x, &w).unwrap().value().item(), 0.0);
        let w2 = LossWeights { lambda_cyc_1: 20.0, lambda_cyc_2: 0.0, ..w };
        let doubled = cycle_loss(x, rec1, x, rec2, &w2).unwrap().value().item();
        assert!((doubled - 4.0).abs() < 1e-12);
        assert!(cycle_loss(x, g.constant(Tensor::zeros(&[3, 2])), x, x, &w).is_err());
    }

    #[test]
    fn identity_transform_nullifies_cr() {
        let (d1, d2) = (tiny_d(1), tiny_d(2));
        let g = Graph::new();
        let (p1, p2) = (d1.params().bind(&g, true), d2.params().bind(&g, true));
        let (c1, c2) = (Critic::new(&d1, &p1), Critic::new(&d2, &p2));
        let t = draw(&TransformSpec::Identity, 0).unwrap();
        let (x1, x2) = (images(4, 1), images(4, 2));
        assert_eq!(cr_real(c1, c2, &x1, &x2, &t).unwrap().value().item(), 0.0);
        assert_eq!(cr_fake(c1, c2, &x2, &x1, &t).unwrap().value().item(), 0.0);
        assert_eq!(cr_rec(c1, c2, &x1, &x2, &t).unwrap().value().item(), 0.0);
        let crop = draw_batch(&TransformSpec::crop(), 3, 4).unwrap();
        assert!(cr_real(c1, c2, &x1, &x2, &crop).unwrap().value().item() > 0.0);
    }

    #[test]
    fn constant_discriminator_has_no_consistency_penalty() {
        let mut d = tiny_d(3);
        let head = d.params().find("head.weight").unwrap();
        let zeros = Tensor::zeros(d.params().get(head).shape());
        d.params_mut().set(head, zeros);
        let g = Graph::new();
        let p = d.params().bind(&g, true);
        let c = Critic::new(&d, &p);
        let t = draw_batch(&full_menu_entry(), 5, 4).unwrap();
        assert_eq!(cr_real(c, c, &images(4, 4), &images(4, 5), &t).unwrap().value().item(), 0.0);
    }

    fn full_menu_entry() -> TransformSpec {
        crate::augment::augmentation_menu(7).unwrap()
    }

    #[test]
    fn gradient_penalty_reference_cases() {
        // Linear critic on 1x1 images: only the head's centre tap sees the input.
        let mut d = Discriminator::new(
            DiscriminatorConfig { in_channels: 3, width: 1, strides: vec![], norm: false },
            0,
            InitScheme::Default,
        )
        .unwrap();
        let head = d.params().find("head.weight").unwrap();
        let mut w = Tensor::zeros(&[1, 3, 3, 3]);
        w.data_mut()[4] = 0.6;
        w.data_mut()[9 + 4] = 0.8;
        d.params_mut().set(head, w);
        let real = Tensor::new(&[2, 3, 1, 1], vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
        let fake = real.map(|v| -v);
        let g = Graph::new();
        let p = d.params().bind(&g, true);
        let gp = gradient_penalty(Critic::new(&d, &p), &real, &fake, &[0.3, 0.9]).unwrap().value().item();
        assert!(gp.abs() < 1e-10, "{gp}");

        let zero = Tensor::zeros(&[1, 3, 3, 3]);
        d.params_mut().set(head, zero);
        let g = Graph::new();
        let p = d.params().bind(&g, true);
        let gp = gradient_penalty(Critic::new(&d, &p), &real, &fake, &[0.3, 0.9]).unwrap().value().item();
        assert!((gp - 1.0).abs() < 1e-5, "{gp}");
    }

    #[test]
    fn assembly_rules() {
        let g = GeneratorTerms { gan_g1: 0.5, gan_g2: 0.25, cyc: 1.0 };
        let d =
            DiscriminatorTerms { gan_d1: 0.1, gan_d2: 0.2, cr_real: Some(0.3), cr_fake: None, cr_rec: None, gp: None };
        let w = LossWeights { lambda_real: 1.0, lambda_fake: 0.0, lambda_rec: 0.0, ..Default::default() };
        let r = assemble_objective(&g, &d, &w).unwrap();
        assert!((r.total_d - 0.6).abs() < 1e-12);
        assert_eq!(r.total_g, 1.75);
        let zero = LossWeights { lambda_real: 0.0, ..w };
        assert!((assemble_objective(&g, &d, &zero).unwrap().total_d - 0.3).abs() < 1e-12);
        let neg = LossWeights { lambda_rec: -1.0, ..w };
        assert!(matches!(assemble_objective(&g, &d, &neg), Err(Error::Validation(_))));
        let nan = LossWeights { lambda_fake: f64::NAN, ..w };
        assert!(assemble_objective(&g, &d, &nan).is_err());
    }

    #[test]
    fn cr_terms_leave_generators_untouched() {
        // Anything leading into a CR term arrives as a plain batch, so a
        // generator leaf on the same graph receives no gradient.
        let (d1, d2) = (tiny_d(1), tiny_d(2));
        let g = Graph::new();
        let (p1, p2) = (d1.params().bind(&g, true), d2.params().bind(&g, true));
        let gen_leaf = g.leaf(images(4, 9).into_tensor());
        let fake = ImageBatch::clamped(gen_leaf.tanh().value().as_ref().clone()).unwrap();
        let t = draw_batch(&TransformSpec::crop(), 1, 4).unwrap();
        let term = cr_fake(Critic::new(&d1, &p1), Critic::new(&d2, &p2), &fake, &fake, &t).unwrap();
        assert!(g.grad_vars(term, &[gen_leaf], false)[0].is_none());
    }
}
