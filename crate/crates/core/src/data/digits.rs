//! Procedural handwritten-style digits, a stand-in for MNIST when the real
//! files are not available. Glyphs are stroke skeletons rendered with random
//! affine jitter and stroke width into 28x28 grayscale bytes.

use rand::Rng;

use crate::rng;

/// Undecoded digit images, `pixels` laid out `[count, height, width, channels]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDigits {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
    pub labels: Option<Vec<u8>>,
}

type Stroke = Vec<(f64, f64)>;

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, steps: usize) -> Stroke {
    (0..=steps)
        .map(|i| {
            let t = from + (to - from) * i as f64 / steps as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Stroke skeletons in a unit box, y pointing down.
fn glyph(digit: u8) -> Vec<Stroke> {
    use std::f64::consts::PI;
    match digit {
        0 => vec![ellipse(0.5, 0.5, 0.28, 0.42, 0.0, 2.0 * PI, 24)],
        1 => vec![vec![(0.35, 0.25), (0.55, 0.08), (0.55, 0.92)]],
        2 => vec![vec![
            (0.22, 0.28),
            (0.32, 0.12),
            (0.52, 0.07),
            (0.72, 0.16),
            (0.74, 0.36),
            (0.55, 0.58),
            (0.22, 0.92),
            (0.8, 0.92),
        ]],
        3 => vec![vec![
            (0.22, 0.14),
            (0.5, 0.07),
            (0.72, 0.2),
            (0.68, 0.38),
            (0.45, 0.48),
            (0.7, 0.58),
            (0.75, 0.78),
            (0.55, 0.93),
            (0.22, 0.86),
        ]],
        4 => vec![vec![(0.62, 0.92), (0.62, 0.07), (0.18, 0.65), (0.82, 0.65)]],
        5 => vec![vec![
            (0.76, 0.08),
            (0.32, 0.08),
            (0.28, 0.45),
            (0.52, 0.4),
            (0.74, 0.52),
            (0.76, 0.76),
            (0.55, 0.93),
            (0.24, 0.86),
        ]],
        6 => {
            let mut s = vec![(0.72, 0.1), (0.48, 0.2), (0.32, 0.45)];
            s.extend(ellipse(0.5, 0.7, 0.22, 0.22, PI, 3.0 * PI, 18));
            vec![s]
        }
        7 => vec![vec![(0.18, 0.08), (0.82, 0.08), (0.42, 0.92)]],
        8 => vec![ellipse(0.5, 0.28, 0.2, 0.2, 0.0, 2.0 * PI, 18), ellipse(0.5, 0.7, 0.25, 0.22, 0.0, 2.0 * PI, 20)],
        9 => {
            let mut s = ellipse(0.5, 0.3, 0.22, 0.22, 0.0, 2.0 * PI, 18);
            s.extend([(0.72, 0.3), (0.68, 0.6), (0.58, 0.92)]);
            vec![s]
        }
        _ => panic!("not a digit: {digit}"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Renders `n` random digits (balanced labels, shuffled order) at 28x28.
pub fn render_digits(n: usize, seed: u64) -> RawDigits {
    const SIDE: usize = 28;
    const BOX: f64 = 19.0;
    let mut rng = rng::rng(seed, &[0xd161]);
    let mut labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    // Fisher-Yates with our own generator keeps this independent of rand's shuffle impl.
    for i in (1..labels.len()).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
    for &label in &labels {
        let angle: f64 = rng.gen_range(-0.22..0.22);
        let scale: f64 = rng.gen_range(0.8..1.05);
        let aspect: f64 = rng.gen_range(0.85..1.1);
        let shear: f64 = rng.gen_range(-0.25..0.25);
        let shift = (rng.gen_range(-3.5..3.5), rng.gen_range(-3.5..3.5));
        let thickness: f64 = rng.gen_range(1.7..3.0);
        let (sin, cos) = angle.sin_cos();
        let center = SIDE as f64 / 2.0;
        let strokes: Vec<Stroke> = glyph(label)
            .into_iter()
            .map(|stroke| {
                stroke
                    .into_iter()
                    .map(|(u, v)| {
                        let u = u + rng.gen_range(-0.04..0.04);
                        let v = v + rng.gen_range(-0.04..0.04);
                        let x = (u - 0.5) * BOX * scale * aspect;
                        let y = (v - 0.5) * BOX * scale;
                        let x = x + shear * y;
                        (center + cos * x - sin * y + shift.0, center + sin * x + cos * y + shift.1)
                    })
                    .collect()
            })
            .collect();
        let half = thickness / 2.0;
        for py in 0..SIDE {
            for px in 0..SIDE {
                let p = (px as f64 + 0.5, py as f64 + 0.5);
                let d = strokes
                    .iter()
                    .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                    .fold(f64::INFINITY, f64::min);
                let ink = (half + 0.5 - d).clamp(0.0, 1.0);
                pixels.push((ink * 255.0).round() as u8);
            }
        }
    }
    RawDigits { count: n, height: SIDE, width: SIDE, channels: 1, pixels, labels: Some(labels) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = render_digits(50, 3);
        assert_eq!(a, render_digits(50, 3));
        assert_ne!(a.pixels, render_digits(50, 4).pixels);
        let labels = a.labels.unwrap();
        for d in 0..10u8 {
            assert_eq!(labels.iter().filter(|&&l| l == d).count(), 5);
        }
    }

    #[test]
    fn digits_have_ink_on_black() {
        let r = render_digits(20, 1);
        for img in r.pixels.chunks(28 * 28) {
            let ink = img.iter().filter(|&&p| p > 128).count();
            assert!(ink > 25 && ink < 400, "ink pixels {ink}");
            // corners stay background
            assert_eq!(img[0], 0);
            assert_eq!(img[28 * 28 - 1], 0);
        }
    }
}
