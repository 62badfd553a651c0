//! Stochastic semantics-preserving augmentations.
//!
//! Randomness lives only in [`draw`]; [`apply`] is a pure function of the
//! draw and the batch.

use accr_autodiff::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageBatch;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    Identity,
    /// Zero-pad by `pad` on every side, then crop back to the input size.
    /// Unset means 2 pixels per 32 of image height.
    RandomCrop {
        #[serde(default)]
        pad: Option<usize>,
    },
    /// Angle uniform in `[-degrees, degrees]`, bilinear, zero outside the frame.
    RandomRotation {
        #[serde(default = "default_degrees")]
        degrees: f64,
    },
    /// One square set to 0. Unset side means a quarter of the image height.
    Cutout {
        #[serde(default)]
        side: Option<usize>,
    },
    /// With `probability`, one rectangle filled with uniform noise in `[-1, 1]`.
    RandomErasing {
        #[serde(default = "default_area")]
        area: (f64, f64),
        #[serde(default = "default_aspect")]
        aspect: (f64, f64),
        #[serde(default = "default_erase_probability")]
        probability: f64,
    },
    /// Factors uniform in `[1 - s, 1 + s]`, applied brightness, contrast, saturation.
    ColorJitter {
        #[serde(default = "default_jitter")]
        brightness: f64,
        #[serde(default = "default_jitter")]
        contrast: f64,
        #[serde(default = "default_jitter")]
        saturation: f64,
    },
    Compose {
        children: Vec<TransformSpec>,
    },
    /// One child picked uniformly per image.
    OneOf {
        children: Vec<TransformSpec>,
    },
}

fn default_degrees() -> f64 {
    10.0
}
fn default_erase_probability() -> f64 {
    0.5
}
fn default_area() -> (f64, f64) {
    (0.02, 0.2)
}
fn default_aspect() -> (f64, f64) {
    (0.3, 3.3)
}
fn default_jitter() -> f64 {
    0.2
}

impl TransformSpec {
    pub fn crop() -> Self {
        Self::RandomCrop { pad: None }
    }

    pub fn rotation() -> Self {
        Self::RandomRotation { degrees: default_degrees() }
    }

    pub fn cutout() -> Self {
        Self::Cutout { side: None }
    }

    pub fn erasing() -> Self {
        Self::RandomErasing { area: default_area(), aspect: default_aspect(), probability: default_erase_probability() }
    }

    pub fn jitter() -> Self {
        Self::ColorJitter { brightness: default_jitter(), contrast: default_jitter(), saturation: default_jitter() }
    }

    /// True for transforms that only move or overwrite pixels.
    pub fn is_geometric(&self) -> bool {
        match self {
            Self::ColorJitter { .. } => false,
            Self::Compose { children } | Self::OneOf { children } => children.iter().all(Self::is_geometric),
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        match self {
            Self::Identity | Self::RandomCrop { .. } => Ok(()),
            Self::RandomRotation { degrees } => {
                if !(degrees.is_finite() && (0.0..=180.0).contains(degrees)) {
                    return bad(format!("rotation degrees {degrees} outside [0, 180]"));
                }
                Ok(())
            }
            Self::Cutout { side } => {
                if *side == Some(0) {
                    return bad("cutout side must be positive".into());
                }
                Ok(())
            }
            Self::RandomErasing { area, aspect, probability } => {
                if !(0.0..=1.0).contains(probability) {
                    return bad(format!("erasing probability {probability} outside [0, 1]"));
                }
                if !(area.0 > 0.0 && area.0 <= area.1 && area.1 <= 1.0) {
                    return bad(format!("erasing area range {area:?} must satisfy 0 < lo <= hi <= 1"));
                }
                if !(aspect.0 > 0.0 && aspect.0 <= aspect.1 && aspect.1.is_finite()) {
                    return bad(format!("erasing aspect range {aspect:?} must satisfy 0 < lo <= hi"));
                }
                Ok(())
            }
            Self::ColorJitter { brightness, contrast, saturation } => {
                for (name, s) in [("brightness", brightness), ("contrast", contrast), ("saturation", saturation)] {
                    if !(s.is_finite() && (0.0..1.0).contains(s)) {
                        return bad(format!("{name} jitter {s} outside [0, 1)"));
                    }
                }
                Ok(())
            }
            Self::Compose { children } => children.iter().try_for_each(Self::validate),
            Self::OneOf { children } => {
                if children.is_empty() {
                    return bad("one_of needs at least one child".into());
                }
                children.iter().try_for_each(Self::validate)
            }
        }
    }
}

/// Transform menu 1..=7: crop, rotation, crop+rotation, cutout, random
/// erasing, color jitter, crop+rotation+jitter.
pub fn augmentation_menu(index: usize) -> Result<TransformSpec> {
    use TransformSpec as T;
    Ok(match index {
        1 => T::crop(),
        2 => T::rotation(),
        3 => T::Compose { children: vec![T::crop(), T::rotation()] },
        4 => T::cutout(),
        5 => T::erasing(),
        6 => T::jitter(),
        7 => T::Compose { children: vec![T::crop(), T::rotation(), T::jitter()] },
        _ => return Err(Error::Validation(format!("augmentation menu index {index} outside 1..=7"))),
    })
}

/// Concrete parameters for one image. Positions are fractions in `[0, 1)`
/// resolved against the image size at apply time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Realized {
    Identity,
    Crop { dy: f64, dx: f64 },
    Rotation { degrees: f64 },
    Cutout { y: f64, x: f64 },
    Erasing { erase: bool, area: f64, aspect: f64, y: f64, x: f64, noise_seed: u64 },
    Jitter { brightness: f64, contrast: f64, saturation: f64 },
    Compose(Vec<Realized>),
    OneOf(usize, Box<Realized>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformDraw {
    pub spec: TransformSpec,
    pub seed: u64,
    /// One entry shared by the whole batch, or one per image.
    pub realized: Vec<Realized>,
}

fn realize(spec: &TransformSpec, rng: &mut ChaCha8Rng) -> Realized {
    let factor = |rng: &mut ChaCha8Rng, s: f64| if s == 0.0 { 1.0 } else { rng.gen_range(1.0 - s..=1.0 + s) };
    match spec {
        TransformSpec::Identity => Realized::Identity,
        TransformSpec::RandomCrop { .. } => Realized::Crop { dy: rng.gen(), dx: rng.gen() },
        TransformSpec::RandomRotation { degrees } => {
            Realized::Rotation { degrees: if *degrees == 0.0 { 0.0 } else { rng.gen_range(-degrees..=*degrees) } }
        }
        TransformSpec::Cutout { .. } => Realized::Cutout { y: rng.gen(), x: rng.gen() },
        TransformSpec::RandomErasing { area, aspect, probability } => Realized::Erasing {
            erase: rng.gen::<f64>() < *probability,
            area: if area.0 == area.1 { area.0 } else { rng.gen_range(area.0..area.1) },
            aspect: if aspect.0 == aspect.1 { aspect.0 } else { rng.gen_range(aspect.0.ln()..aspect.1.ln()).exp() },
            y: rng.gen(),
            x: rng.gen(),
            noise_seed: rng.gen(),
        },
        TransformSpec::ColorJitter { brightness, contrast, saturation } => Realized::Jitter {
            brightness: factor(rng, *brightness),
            contrast: factor(rng, *contrast),
            saturation: factor(rng, *saturation),
        },
        TransformSpec::Compose { children } => Realized::Compose(children.iter().map(|c| realize(c, rng)).collect()),
        TransformSpec::OneOf { children } => {
            let k = rng.gen_range(0..children.len());
            Realized::OneOf(k, Box::new(realize(&children[k], rng)))
        }
    }
}

/// One realization applied identically to every image.
pub fn draw(spec: &TransformSpec, seed: u64) -> Result<TransformDraw> {
    draw_batch(spec, seed, 1)
}

/// Independent realizations for `n` images.
pub fn draw_batch(spec: &TransformSpec, seed: u64, n: usize) -> Result<TransformDraw> {
    spec.validate()?;
    let realized = (0..n as u64).map(|i| realize(spec, &mut rng::rng(seed, &[0xa09, i]))).collect();
    Ok(TransformDraw { spec: spec.clone(), seed, realized })
}

/// Applies `draw` to every image of `x`.
pub fn apply(draw: &TransformDraw, x: &ImageBatch) -> Result<ImageBatch> {
    let n = x.len();
    let k = draw.realized.len();
    if k != 1 && k != n {
        return Err(Error::Shape(format!("draw holds {k} realizations for a batch of {n}")));
    }
    let (c, h, w) = x.image_shape();
    let size = c * h * w;
    let mut out = Vec::with_capacity(n * size);
    for i in 0..n {
        let img = &x.tensor().data()[i * size..(i + 1) * size];
        let r = &draw.realized[if k == 1 { 0 } else { i }];
        out.extend(apply_one(&draw.spec, r, img.to_vec(), (c, h, w))?);
    }
    ImageBatch::new(Tensor::new(x.tensor().shape(), out)?)
}

type Shape = (usize, usize, usize);

fn apply_one(spec: &TransformSpec, r: &Realized, img: Vec<f64>, shape: Shape) -> Result<Vec<f64>> {
    let (_, h, w) = shape;
    Ok(match (spec, r) {
        (TransformSpec::Identity, Realized::Identity) => img,
        (TransformSpec::RandomCrop { pad }, Realized::Crop { dy, dx }) => {
            let pad = pad.unwrap_or_else(|| default_pad(h));
            let oy = pick(*dy, 2 * pad + 1);
            let ox = pick(*dx, 2 * pad + 1);
            crop(&img, shape, pad, oy, ox)
        }
        (TransformSpec::RandomRotation { .. }, Realized::Rotation { degrees }) => rotate(&img, shape, *degrees),
        (TransformSpec::Cutout { side }, Realized::Cutout { y, x }) => {
            let side = side.unwrap_or_else(|| (h / 4).max(1));
            if side > h || side > w {
                return Err(Error::Shape(format!("cutout side {side} exceeds {h}x{w} image")));
            }
            let (y0, x0) = (pick(*y, h - side + 1), pick(*x, w - side + 1));
            fill_rect(img, shape, (y0, x0, side, side), |_, _| 0.0)
        }
        (TransformSpec::RandomErasing { .. }, Realized::Erasing { erase: false, .. }) => img,
        (TransformSpec::RandomErasing { .. }, Realized::Erasing { area, aspect, y, x, noise_seed, .. }) => {
            let target = area * (h * w) as f64;
            let eh = ((target * aspect).sqrt().round() as usize).clamp(1, h);
            let ew = ((target / aspect).sqrt().round() as usize).clamp(1, w);
            let (y0, x0) = (pick(*y, h - eh + 1), pick(*x, w - ew + 1));
            // one noise value per pixel, shared by all channels
            let mut noise_rng = rng::rng(*noise_seed, &[]);
            let noise: Vec<f64> = (0..eh * ew).map(|_| noise_rng.gen_range(-1.0..=1.0)).collect();
            fill_rect(img, shape, (y0, x0, eh, ew), |yy, xx| noise[(yy - y0) * ew + (xx - x0)])
        }
        (TransformSpec::ColorJitter { .. }, Realized::Jitter { brightness, contrast, saturation }) => {
            jitter(img, shape, *brightness, *contrast, *saturation)?
        }
        (TransformSpec::Compose { children }, Realized::Compose(rs)) if children.len() == rs.len() => {
            let mut img = img;
            for (s, r) in children.iter().zip(rs) {
                img = apply_one(s, r, img, shape)?;
            }
            img
        }
        (TransformSpec::OneOf { children }, Realized::OneOf(k, r)) if *k < children.len() => {
            apply_one(&children[*k], r, img, shape)?
        }
        _ => return Err(Error::Validation("draw realization does not match its spec".into())),
    })
}

/// Crop pad for an image of height `h`: 2 pixels at 32, scaled proportionally.
pub fn default_pad(h: usize) -> usize {
    ((2 * h) as f64 / 32.0).round().max(1.0) as usize
}

/// Maps a fraction in `[0, 1)` to `0..count`.
fn pick(frac: f64, count: usize) -> usize {
    ((frac * count as f64) as usize).min(count - 1)
}

/// Window of the zero-padded image whose top-left is `(oy, ox)` in padded coordinates.
fn crop(img: &[f64], (c, h, w): Shape, pad: usize, oy: usize, ox: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        for y in 0..h {
            let sy = (y + oy) as isize - pad as isize;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w {
                let sx = (x + ox) as isize - pad as isize;
                if sx >= 0 && sx < w as isize {
                    out[(ch * h + y) * w + x] = img[(ch * h + sy as usize) * w + sx as usize];
                }
            }
        }
    }
    out
}

fn rotate(img: &[f64], (c, h, w): Shape, degrees: f64) -> Vec<f64> {
    if degrees == 0.0 {
        return img.to_vec();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let sample = |ch: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            img[(ch * h + y as usize) * w + x as usize]
        }
    };
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            // inverse map: rotate the output coordinate back by -angle
            let (u, v) = (x as f64 - cx, y as f64 - cy);
            let sx = cos * u + sin * v + cx;
            let sy = -sin * u + cos * v + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let v = sample(ch, y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + sample(ch, y0, x0 + 1) * (1.0 - fy) * fx
                    + sample(ch, y0 + 1, x0) * fy * (1.0 - fx)
                    + sample(ch, y0 + 1, x0 + 1) * fy * fx;
                out[(ch * h + y) * w + x] = v;
            }
        }
    }
    out
}

fn fill_rect(
    mut img: Vec<f64>,
    (c, h, w): Shape,
    (y0, x0, rh, rw): (usize, usize, usize, usize),
    value: impl Fn(usize, usize) -> f64,
) -> Vec<f64> {
    for ch in 0..c {
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                img[(ch * h + y) * w + x] = value(y, x);
            }
        }
    }
    img
}

/// Photometric jitter in `[0, 1]` space, clamping after each stage.
fn jitter(img: Vec<f64>, (c, h, w): Shape, brightness: f64, contrast: f64, saturation: f64) -> Result<Vec<f64>> {
    if c != 1 && c != 3 {
        return Err(Error::Shape(format!("color jitter needs 1 or 3 channels, got {c}")));
    }
    let plane = h * w;
    let mut u: Vec<f64> = img.iter().map(|v| ((v + 1.0) / 2.0 * brightness).clamp(0.0, 1.0)).collect();
    let gray = |u: &[f64], p: usize| {
        if c == 3 {
            0.299 * u[p] + 0.587 * u[plane + p] + 0.114 * u[2 * plane + p]
        } else {
            u[p]
        }
    };
    let mean = (0..plane).map(|p| gray(&u, p)).sum::<f64>() / plane as f64;
    for v in &mut u {
        *v = ((*v - mean) * contrast + mean).clamp(0.0, 1.0);
    }
    if c == 3 {
        for p in 0..plane {
            let g = gray(&u, p);
            for ch in 0..3 {
                let v = &mut u[ch * plane + p];
                *v = ((*v - g) * saturation + g).clamp(0.0, 1.0);
            }
        }
    }
    Ok(u.into_iter().map(|v| v * 2.0 - 1.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn batch(n: usize, c: usize, h: usize, w: usize, seed: u64) -> ImageBatch {
        let mut r = rng::rng(seed, &[]);
        let data = (0..n * c * h * w).map(|_| r.gen_range(-1.0..=1.0)).collect();
        ImageBatch::new(Tensor::new(&[n, c, h, w], data).unwrap()).unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let x = batch(3, 3, 8, 8, 1);
        let d = draw(&TransformSpec::Identity, 42).unwrap();
        assert_eq!(d.realized, vec![Realized::Identity]);
        assert_eq!(apply(&d, &x).unwrap(), x);
    }

    #[test]
    fn draws_are_deterministic() {
        let spec = TransformSpec::RandomCrop { pad: Some(2) };
        assert_eq!(draw(&spec, 9).unwrap(), draw(&spec, 9).unwrap());
        let x = batch(4, 3, 8, 8, 2);
        let d = draw_batch(&augmentation_menu(7).unwrap(), 3, 4).unwrap();
        assert_eq!(apply(&d, &x).unwrap(), apply(&d, &x).unwrap());
    }

    #[test]
    fn crop_matches_padded_window() {
        // Independent reference: build the zero-padded 36x36 image explicitly.
        let x = batch(1, 3, 32, 32, 3);
        for seed in 0..20 {
            let d = draw(&TransformSpec::RandomCrop { pad: Some(2) }, seed).unwrap();
            let Realized::Crop { dy, dx } = d.realized[0] else { panic!() };
            let (oy, ox) = ((dy * 5.0) as usize, (dx * 5.0) as usize);
            let mut padded = vec![0.0; 3 * 36 * 36];
            for c in 0..3 {
                for y in 0..32 {
                    for xx in 0..32 {
                        padded[(c * 36 + y + 2) * 36 + xx + 2] = x.tensor().data()[(c * 32 + y) * 32 + xx];
                    }
                }
            }
            let out = apply(&d, &x).unwrap();
            for c in 0..3 {
                for y in 0..32 {
                    for xx in 0..32 {
                        assert_eq!(
                            out.tensor().data()[(c * 32 + y) * 32 + xx],
                            padded[(c * 36 + y + oy) * 36 + xx + ox]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn default_pad_scales_with_size() {
        assert_eq!(default_pad(32), 2);
        assert_eq!(default_pad(16), 1);
        assert_eq!(default_pad(64), 4);
        assert_eq!(default_pad(8), 1);
    }

    #[test]
    fn cutout_changes_one_square() {
        let x = batch(1, 3, 32, 32, 4);
        for seed in 0..20 {
            let d = draw(&TransformSpec::Cutout { side: Some(8) }, seed).unwrap();
            let out = apply(&d, &x).unwrap();
            for c in 0..3 {
                let changed: Vec<usize> = (0..32 * 32)
                    .filter(|&p| out.tensor().data()[c * 1024 + p] != x.tensor().data()[c * 1024 + p])
                    .collect();
                assert!(changed.len() <= 64);
                let ys: Vec<usize> = changed.iter().map(|p| p / 32).collect();
                let xs: Vec<usize> = changed.iter().map(|p| p % 32).collect();
                assert!(ys.iter().max().unwrap() - ys.iter().min().unwrap() < 8);
                assert!(xs.iter().max().unwrap() - xs.iter().min().unwrap() < 8);
                assert!(changed.iter().all(|&p| out.tensor().data()[c * 1024 + p] == 0.0));
            }
        }
    }

    #[test]
    fn rotation_angles_are_centered() {
        let spec = TransformSpec::rotation();
        let angles: Vec<f64> = (0..10_000)
            .map(|s| match draw(&spec, s).unwrap().realized[0] {
                Realized::Rotation { degrees } => degrees,
                _ => unreachable!(),
            })
            .collect();
        assert!(angles.iter().all(|a| a.abs() <= 10.0));
        let mean = angles.iter().sum::<f64>() / angles.len() as f64;
        assert!(mean.abs() < 0.5, "mean angle {mean}");
    }

    #[test]
    fn rotation_by_zero_and_quarter_turn() {
        let x = batch(1, 1, 5, 5, 5);
        let r0 = rotate(x.tensor().data(), (1, 5, 5), 0.0);
        assert_eq!(r0, x.tensor().data());
        let r90 = rotate(x.tensor().data(), (1, 5, 5), 90.0);
        // a quarter turn about the center is an exact pixel permutation
        let mut sorted_in = x.tensor().data().to_vec();
        let mut sorted_out: Vec<f64> = r90.iter().map(|v| (v * 1e9).round() / 1e9).collect();
        sorted_in.iter_mut().for_each(|v| *v = (*v * 1e9).round() / 1e9);
        sorted_in.sort_by(f64::total_cmp);
        sorted_out.sort_by(f64::total_cmp);
        assert_eq!(sorted_in, sorted_out);
    }

    #[test]
    fn menu_entries() {
        use TransformSpec as T;
        assert_eq!(augmentation_menu(3).unwrap(), T::Compose { children: vec![T::crop(), T::rotation()] });
        assert!(matches!(augmentation_menu(6).unwrap(), T::ColorJitter { .. }));
        let T::Compose { children } = augmentation_menu(7).unwrap() else { panic!() };
        assert!(matches!(children[..], [T::RandomCrop { .. }, T::RandomRotation { .. }, T::ColorJitter { .. }]));
        assert!(augmentation_menu(0).is_err());
        assert!(augmentation_menu(8).is_err());
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(draw(&TransformSpec::RandomRotation { degrees: -1.0 }, 0).is_err());
        assert!(draw(&TransformSpec::Cutout { side: Some(0) }, 0).is_err());
        assert!(
            draw(&TransformSpec::RandomErasing { area: (0.3, 0.1), aspect: (0.3, 3.3), probability: 0.5 }, 0).is_err()
        );
        assert!(draw(&TransformSpec::ColorJitter { brightness: 1.5, contrast: 0.2, saturation: 0.2 }, 0).is_err());
        let x = batch(2, 3, 8, 8, 0);
        let d = draw_batch(&TransformSpec::crop(), 0, 3).unwrap();
        assert!(matches!(apply(&d, &x), Err(Error::Shape(_))));
        let d = draw(&TransformSpec::Cutout { side: Some(9) }, 0).unwrap();
        assert!(matches!(apply(&d, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn jitter_keeps_palette_argmax() {
        use crate::data::PALETTE;
        let n = PALETTE.len();
        let mut data = vec![0.0; n * 3 * 4];
        for (i, col) in PALETTE.iter().enumerate() {
            for c in 0..3 {
                for p in 0..4 {
                    data[(i * 3 + c) * 4 + p] = col[c] * 2.0 - 1.0;
                }
            }
        }
        let x = ImageBatch::new(Tensor::new(&[n, 3, 2, 2], data).unwrap()).unwrap();
        let argmax = |v: &[f64]| (0..3).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
        for seed in 0..500 {
            let d = draw_batch(&TransformSpec::jitter(), seed, n).unwrap();
            let out = apply(&d, &x).unwrap();
            for (i, color) in PALETTE.iter().enumerate() {
                for p in 0..4 {
                    let px: Vec<f64> = (0..3).map(|c| out.tensor().data()[(i * 3 + c) * 4 + p]).collect();
                    assert_eq!(argmax(&px), argmax(color), "seed {seed} color {i}");
                }
            }
        }
    }

    #[test]
    fn erasing_probability_bounds() {
        let x = batch(200, 3, 16, 16, 6);
        let erased = |p: f64| {
            let spec = TransformSpec::RandomErasing { area: (0.1, 0.2), aspect: (1.0, 1.0), probability: p };
            let out = apply(&draw_batch(&spec, 11, 200).unwrap(), &x).unwrap();
            let size = 3 * 16 * 16;
            (0..200)
                .filter(|i| out.tensor().data()[i * size..][..size] != x.tensor().data()[i * size..][..size])
                .count()
        };
        assert_eq!(erased(0.0), 0);
        assert_eq!(erased(1.0), 200);
        let half = erased(0.5);
        assert!((70..=130).contains(&half), "{half} of 200 erased at p = 0.5");
    }

    #[test]
    fn one_of_applies_the_drawn_child() {
        let spec =
            TransformSpec::OneOf { children: vec![TransformSpec::Identity, TransformSpec::Cutout { side: Some(4) }] };
        let x = batch(64, 3, 8, 8, 7);
        let d = draw_batch(&spec, 5, 64).unwrap();
        let out = apply(&d, &x).unwrap();
        let size = 3 * 64;
        let mut picked = [0; 2];
        for (i, r) in d.realized.iter().enumerate() {
            let Realized::OneOf(k, _) = r else { panic!("{r:?}") };
            picked[*k] += 1;
            let same = out.tensor().data()[i * size..][..size] == x.tensor().data()[i * size..][..size];
            assert_eq!(same, *k == 0);
        }
        assert!(picked.iter().all(|&c| c > 10), "{picked:?}");
        assert!(draw(&TransformSpec::OneOf { children: vec![] }, 0).is_err());
        assert!(!TransformSpec::OneOf { children: vec![TransformSpec::crop(), TransformSpec::jitter()] }.is_geometric());
    }

    #[test]
    fn spec_toml_roundtrip() {
        let spec = augmentation_menu(7).unwrap();
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(toml::from_str::<TransformSpec>(&text).unwrap(), spec);
        let parsed: TransformSpec = toml::from_str("kind = \"random_rotation\"").unwrap();
        assert_eq!(parsed, TransformSpec::rotation());
    }

    fn permute_channels(x: &ImageBatch, perm: &[usize]) -> ImageBatch {
        let (c, h, w) = x.image_shape();
        let plane = h * w;
        let mut out = vec![0.0; x.tensor().len()];
        for i in 0..x.len() {
            for (dst, &src) in perm.iter().enumerate() {
                let s = &x.tensor().data()[(i * c + src) * plane..][..plane];
                out[(i * c + dst) * plane..][..plane].copy_from_slice(s);
            }
        }
        ImageBatch::new(Tensor::new(x.tensor().shape(), out).unwrap()).unwrap()
    }

    proptest! {
        #[test]
        fn every_menu_entry_preserves_shape_and_range(
            index in 1usize..=7, seed in 0u64..10_000, size in 6usize..20, n in 1usize..4,
        ) {
            let x = batch(n, 3, size, size + 1, seed);
            let d = draw_batch(&augmentation_menu(index).unwrap(), seed, n).unwrap();
            let out = apply(&d, &x).unwrap();
            prop_assert_eq!(out.tensor().shape(), x.tensor().shape());
            prop_assert!(out.tensor().min() >= -1.0 && out.tensor().max() <= 1.0);
        }

        #[test]
        fn geometric_ops_commute_with_channel_permutation(
            index in prop::sample::select(vec![1usize, 2, 3, 4, 5]), seed in 0u64..10_000,
        ) {
            let spec = augmentation_menu(index).unwrap();
            prop_assert!(spec.is_geometric());
            let x = batch(2, 3, 12, 12, seed);
            let d = draw_batch(&spec, seed, 2).unwrap();
            let perm = [2, 0, 1];
            let a = apply(&d, &permute_channels(&x, &perm)).unwrap();
            let b = permute_channels(&apply(&d, &x).unwrap(), &perm);
            prop_assert_eq!(a, b);
        }
    }
}
