//! Synthetic domains: colored-background digits and paired label/photo scenes.

use std::f64::consts::PI;
use std::fs;
use std::path::PathBuf;

use accr_autodiff::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ingest::resize_bilinear;
use super::{Dataset, DomainPair, Split};
use crate::error::{Error, Result};
use crate::rng;

/// Where colored-digit backgrounds come from.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    /// Colored noise over smooth two-color gradients.
    Procedural,
    /// Random crops of the color photos in `source` (a directory of PNGs).
    Patches { source: Option<PathBuf> },
}

fn to_unit(v: f64) -> f64 {
    (v + 1.0) / 2.0
}

fn to_signed(v: f64) -> f64 {
    (v * 2.0 - 1.0).clamp(-1.0, 1.0)
}

/// `[3, H, W]` background in `[0, 1]`.
fn procedural_background(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let c0: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let c1: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    let theta: f64 = rng.gen_range(0.0..2.0 * PI);
    let (dx, dy) = (theta.cos(), theta.sin());
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            let fx = rng.gen_range(-2.0..2.0) * 2.0 * PI / w as f64;
            let fy = rng.gen_range(-2.0..2.0) * 2.0 * PI / h as f64;
            let phase = rng.gen_range(0.0..2.0 * PI);
            let amp = [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
            (fx, fy, phase, amp)
        })
        .collect();
    let noise = Normal::new(0.0, 0.06).expect("valid sigma");
    let mut out = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let u = x as f64 / (w - 1).max(1) as f64 - 0.5;
            let v = y as f64 / (h - 1).max(1) as f64 - 0.5;
            let t = ((u * dx + v * dy) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                let mut value = c0[c] * (1.0 - t) + c1[c] * t;
                for (fx, fy, phase, amp) in &waves {
                    value += amp[c] * (fx * x as f64 + fy * y as f64 + phase).sin();
                }
                value += noise.sample(rng);
                out[(c * h + y) * w + x] = value.clamp(0.0, 1.0);
            }
        }
    }
    out
}

struct PatchSource {
    images: Vec<(usize, usize, Vec<f64>)>,
}

impl PatchSource {
    fn load(dir: &PathBuf) -> Result<Self> {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::Config(format!("patch source {}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!("patch source {} holds no .png files", dir.display())));
        }
        let mut images = Vec::new();
        for f in files {
            let (h, w, c, bytes) = super::ingest::decode_png(&f)?;
            let mut planes = vec![0.0; 3 * h * w];
            for p in 0..h * w {
                for ch in 0..3 {
                    planes[ch * h * w + p] = f64::from(bytes[p * c + if c == 1 { 0 } else { ch }]) / 255.0;
                }
            }
            images.push((h, w, planes));
        }
        Ok(Self { images })
    }

    fn crop(&self, rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
        let (sh, sw, planes) = &self.images[rng.gen_range(0..self.images.len())];
        let (sh, sw) = (*sh, *sw);
        let mut out = Vec::with_capacity(3 * h * w);
        if sh >= h && sw >= w {
            let y0 = rng.gen_range(0..=sh - h);
            let x0 = rng.gen_range(0..=sw - w);
            for c in 0..3 {
                for y in 0..h {
                    let row = &planes[(c * sh + y0 + y) * sw + x0..][..w];
                    out.extend_from_slice(row);
                }
            }
        } else {
            for c in 0..3 {
                out.extend(resize_bilinear(&planes[c * sh * sw..(c + 1) * sh * sw], sh, sw, h, w));
            }
        }
        out
    }
}

/// Blends each digit over a random color background, MNIST-M style:
/// `out = bg * (1 - m) + (1 - bg) * m` where `m` is the digit intensity.
pub fn synthesize_colored_digits(base: &Dataset, seed: u64, background: &Background) -> Result<Dataset> {
    let labels =
        base.labels().ok_or_else(|| Error::Validation(format!("{} has no labels to carry over", base.name)))?.to_vec();
    let patches = match background {
        Background::Procedural => None,
        Background::Patches { source: None } => {
            return Err(Error::Config("patch backgrounds requested but no patch source directory is configured".into()))
        }
        Background::Patches { source: Some(dir) } => Some(PatchSource::load(dir)?),
    };
    let (c, h, w) = base.image_shape();
    let plane = h * w;
    let mut rng = rng::rng(seed, &[0xc010]);
    let mut data = Vec::with_capacity(base.len() * 3 * plane);
    for i in 0..base.len() {
        let img = &base.images().data()[i * c * plane..(i + 1) * c * plane];
        let bg = match &patches {
            None => procedural_background(&mut rng, h, w),
            Some(p) => p.crop(&mut rng, h, w),
        };
        for ch in 0..3 {
            for p in 0..plane {
                let m = to_unit(img[p]);
                let b = bg[ch * plane + p];
                data.push(to_signed(b * (1.0 - m) + (1.0 - b) * m));
            }
        }
    }
    let images = Tensor::new(&[base.len(), 3, h, w], data)?;
    Dataset::new(format!("{}-colored", base.name), base.split, images, Some(labels), None)
}

/// Flat label colors of the paired surrogate, in `[0, 1]`; each has a
/// distinct dominant channel margin so mild photometric jitter keeps the
/// per-pixel argmax channel.
pub const PALETTE: [[f64; 3]; 4] = [[0.85, 0.3, 0.2], [0.2, 0.8, 0.25], [0.2, 0.3, 0.85], [0.8, 0.45, 0.1]];

fn render_scene(rng: &mut ChaCha8Rng, size: usize) -> Vec<u8> {
    let mut classes = vec![0u8; size * size];
    let shapes = rng.gen_range(2..=5);
    for _ in 0..shapes {
        let class = rng.gen_range(1..4u8);
        let cx = rng.gen_range(0.0..size as f64);
        let cy = rng.gen_range(0.0..size as f64);
        let rx = rng.gen_range(0.12..0.35) * size as f64;
        let ry = rng.gen_range(0.12..0.35) * size as f64;
        let disc = rng.gen_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (u, v) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                let inside = if disc { u * u + v * v <= 1.0 } else { u.abs() <= 1.0 && v.abs() <= 1.0 };
                if inside {
                    classes[y * size + x] = class;
                }
            }
        }
    }
    classes
}

fn texture(rng: &mut ChaCha8Rng, class: u8, x: usize, y: usize, light: f64) -> [f64; 3] {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n = noise.sample(rng);
    let base = match class {
        0 => [0.55 + 0.08 * n, 0.45 + 0.08 * n, 0.3 + 0.06 * n],
        1 => {
            let stripe = if y.is_multiple_of(3) { -0.12 } else { 0.04 };
            [0.6 + stripe, 0.6 + stripe, 0.66 + stripe]
        }
        2 => [0.18 + 0.05 * n, 0.48 + 0.12 * n, 0.2 + 0.05 * n],
        _ => {
            let ripple = 0.06 * ((x as f64) * 1.3 + (y as f64) * 0.4).sin();
            [0.15 + ripple, 0.3 + ripple, 0.6 + ripple + 0.03 * n]
        }
    };
    base.map(|v| (v + light).clamp(0.0, 1.0))
}

/// Aligned (label map, textured photo) renderings of random scenes.
pub fn make_paired_surrogate(n: usize, size: usize, seed: u64) -> Result<DomainPair> {
    if n == 0 {
        return Err(Error::Validation("paired surrogate needs at least one scene".into()));
    }
    if size < 4 {
        return Err(Error::Validation(format!("surrogate size {size} is too small")));
    }
    let mut rng = rng::rng(seed, &[0x9a1d]);
    let plane = size * size;
    let mut labels = Vec::with_capacity(n * 3 * plane);
    let mut photos = Vec::with_capacity(n * 3 * plane);
    for _ in 0..n {
        let classes = render_scene(&mut rng, size);
        let tilt: f64 = rng.gen_range(-0.1..0.1);
        let mut label_img = vec![0.0; 3 * plane];
        let mut photo_img = vec![0.0; 3 * plane];
        for y in 0..size {
            for x in 0..size {
                let class = classes[y * size + x];
                let light = tilt * (x as f64 / size as f64 - 0.5) * 2.0;
                let t = texture(&mut rng, class, x, y, light);
                for c in 0..3 {
                    label_img[c * plane + y * size + x] = to_signed(PALETTE[class as usize][c]);
                    photo_img[c * plane + y * size + x] = to_signed(t[c]);
                }
            }
        }
        labels.extend(label_img);
        photos.extend(photo_img);
    }
    let labels = Tensor::new(&[n, 3, size, size], labels)?;
    let photos = Tensor::new(&[n, 3, size, size], photos)?;
    let source = Dataset::new("scene-labels", Split::Train, labels.clone(), None, Some(photos.clone()))?;
    let target = Dataset::new("scene-photos", Split::Train, photos, None, Some(labels))?;
    DomainPair::paired(source, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{preprocess, render_digits};

    fn digits(n: usize) -> Dataset {
        preprocess(&render_digits(n, 11), 16, "digits", Split::Train).unwrap()
    }

    #[test]
    fn colored_digits_are_deterministic() {
        let base = digits(12);
        let a = synthesize_colored_digits(&base, 7, &Background::Procedural).unwrap();
        let b = synthesize_colored_digits(&base, 7, &Background::Procedural).unwrap();
        assert_eq!(a, b);
        let c = synthesize_colored_digits(&base, 8, &Background::Procedural).unwrap();
        assert_ne!(a.images(), c.images());
    }

    #[test]
    fn single_image_label_is_preserved() {
        let base = digits(10);
        let three = base.labels().unwrap().iter().position(|&l| l == 3).unwrap();
        let one = base.subset("one", Split::Train, &[three]);
        let out = synthesize_colored_digits(&one, 1, &Background::Procedural).unwrap();
        assert_eq!(out.labels().unwrap(), &[3]);
        assert_eq!(out.image_shape(), (3, 16, 16));
    }

    #[test]
    fn patches_without_source_is_config_error() {
        let base = digits(2);
        let err = synthesize_colored_digits(&base, 1, &Background::Patches { source: None }).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn patches_from_png_directory() {
        let dir = tempfile::tempdir().unwrap();
        let file = std::fs::File::create(dir.path().join("photo.png")).unwrap();
        let mut enc = png::Encoder::new(file, 20, 20);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let pixels: Vec<u8> = (0..20 * 20 * 3).map(|i| (i % 251) as u8).collect();
        enc.write_header().unwrap().write_image_data(&pixels).unwrap();
        let base = digits(3);
        let out = synthesize_colored_digits(&base, 2, &Background::Patches { source: Some(dir.path().to_path_buf()) })
            .unwrap();
        assert_eq!(out.len(), 3);
    }

    /// Per-image, per-channel variance over background pixels (digit mask < 0.05).
    fn mean_background_variance(ds: &Dataset, mask_from: &Dataset) -> f64 {
        let (c, h, w) = ds.image_shape();
        let plane = h * w;
        let mut total = 0.0;
        let mut count = 0.0;
        for i in 0..ds.len() {
            let img = &ds.images().data()[i * c * plane..(i + 1) * c * plane];
            let mask = &mask_from.images().data()[i * 3 * plane..i * 3 * plane + plane];
            for ch in 0..c {
                let vals: Vec<f64> =
                    (0..plane).filter(|&p| to_unit(mask[p]) < 0.05).map(|p| img[ch * plane + p]).collect();
                if vals.len() < 2 {
                    continue;
                }
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                total += vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn colored_backgrounds_vary_more_than_base() {
        let base = preprocess(&render_digits(1000, 5), 16, "digits", Split::Train).unwrap();
        let colored = synthesize_colored_digits(&base, 9, &Background::Procedural).unwrap();
        let base_var = mean_background_variance(&base, &base);
        let colored_var = mean_background_variance(&colored, &base);
        assert!(colored_var > base_var, "{colored_var} <= {base_var}");
    }

    #[test]
    fn paired_surrogate_contract() {
        let pair = make_paired_surrogate(4, 32, 0).unwrap();
        assert!(pair.paired);
        assert_eq!(pair.source.len(), 4);
        assert_eq!(pair.target.len(), 4);
        assert_eq!(pair.source.paired_partner().unwrap(), pair.target.images());
        assert_eq!(pair, make_paired_surrogate(4, 32, 0).unwrap());
        // textured photos differ from their label rendering
        for i in 0..4 {
            let s = pair.source.images().select(i);
            let t = pair.target.images().select(i);
            let mse = s.zip_map(&t, |a, b| (a - b).powi(2)).unwrap().mean();
            assert!(mse > 0.0);
        }
        assert!(make_paired_surrogate(0, 32, 0).is_err());
    }
}
