//! Raw digit ingestion: IDX byte files or directories of PNGs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use accr_autodiff::Tensor;

use super::digits::RawDigits;
use super::{Dataset, Split};
use crate::error::{Error, Result};

const IDX_UBYTE: u8 = 0x08;

/// Loads a digit set and rescales it to `size x size` RGB in `[-1, 1]`.
///
/// `path` is either an IDX image file (labels are picked up from the sibling
/// `*labels-idx1*` file when present) or a directory of `.png` files named
/// `<label>_<anything>.png`. Resizing is bilinear with half-pixel centers.
pub fn load_mnist_like(path: &Path, size: usize) -> Result<Dataset> {
    if size < 8 {
        return Err(Error::Validation(format!("target size {size} is below the minimum of 8")));
    }
    let raw = if path.is_dir() { read_png_dir(path)? } else { read_idx_pair(path)? };
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "digits".into());
    preprocess(&raw, size, &name, Split::Train)
}

/// Grayscale-to-RGB, bilinear resize and `[0, 255] -> [-1, 1]` scaling.
pub fn preprocess(raw: &RawDigits, size: usize, name: &str, split: Split) -> Result<Dataset> {
    let (h, w, c) = (raw.height, raw.width, raw.channels);
    let plane = h * w;
    let mut data = Vec::with_capacity(raw.count * 3 * size * size);
    let mut channel = vec![0.0; plane];
    for i in 0..raw.count {
        let img = &raw.pixels[i * plane * c..(i + 1) * plane * c];
        for ch in 0..3 {
            let src_ch = if c == 1 { 0 } else { ch };
            for (p, dst) in channel.iter_mut().enumerate() {
                *dst = f64::from(img[p * c + src_ch]) / 255.0;
            }
            let resized =
                if (h, w) == (size, size) { channel.clone() } else { resize_bilinear(&channel, h, w, size, size) };
            data.extend(resized.into_iter().map(|v| (v * 2.0 - 1.0).clamp(-1.0, 1.0)));
        }
    }
    let images = Tensor::new(&[raw.count, 3, size, size], data)?;
    Dataset::new(name, split, images, raw.labels.clone(), None)
}

/// Bilinear resampling of one plane with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bottom = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

fn ingestion(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion { path: path.to_path_buf(), reason: reason.into() }
}

fn read_idx(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| ingestion(path, e.to_string()))?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(ingestion(path, "missing IDX magic number"));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(ingestion(path, format!("unsupported IDX element type 0x{:02x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(ingestion(path, "truncated IDX header"));
    }
    let dims: Vec<usize> =
        bytes[4..header].chunks_exact(4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize).collect();
    let expected: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() != expected {
        return Err(ingestion(path, format!("IDX body holds {} bytes, dims {:?} need {expected}", body.len(), dims)));
    }
    Ok((dims, body.to_vec()))
}

fn labels_path_for(images: &Path) -> Option<PathBuf> {
    let name = images.file_name()?.to_string_lossy().into_owned();
    let swapped = if name.contains("images-idx3") {
        name.replace("images-idx3", "labels-idx1")
    } else if name.contains("images") {
        name.replace("images", "labels")
    } else {
        return None;
    };
    let candidate = images.with_file_name(swapped);
    candidate.exists().then_some(candidate)
}

fn read_idx_pair(path: &Path) -> Result<RawDigits> {
    let (dims, pixels) = read_idx(path)?;
    let (count, height, width, channels) = match dims[..] {
        [n, h, w] => (n, h, w, 1),
        [n, h, w, c] if c == 1 || c == 3 => (n, h, w, c),
        _ => {
            return Err(Error::Shape(format!(
                "{}: image IDX must be (n, h, w) or (n, h, w, 1|3), got {:?}",
                path.display(),
                dims
            )))
        }
    };
    if height == 0 || width == 0 {
        return Err(Error::Shape(format!("{}: empty image dimensions {:?}", path.display(), dims)));
    }
    let labels = match labels_path_for(path) {
        Some(lp) => {
            let (ldims, labels) = read_idx(&lp)?;
            if ldims != [count] {
                return Err(Error::Shape(format!(
                    "{}: label dims {:?} do not match {count} images",
                    lp.display(),
                    ldims
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 9) {
                return Err(ingestion(&lp, format!("label {bad} is not a digit")));
            }
            Some(labels)
        }
        None => None,
    };
    Ok(RawDigits { count, height, width, channels, pixels, labels })
}

pub(super) fn decode_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let file = fs::File::open(path).map_err(|e| ingestion(path, e.to_string()))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| ingestion(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| ingestion(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_channels = info.color_type.samples();
    let keep = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => 1,
        _ => 3,
    };
    let mut out = Vec::with_capacity(w * h * keep);
    for px in buf[..info.buffer_size()].chunks_exact(src_channels) {
        out.extend_from_slice(&px[..keep]);
    }
    Ok((h, w, keep, out))
}

fn read_png_dir(dir: &Path) -> Result<RawDigits> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ingestion(dir, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(ingestion(dir, "no .png files"));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut geometry = None;
    for file in &files {
        let (h, w, c, data) = decode_png(file)?;
        match geometry {
            None => geometry = Some((h, w, c)),
            Some(g) if g == (h, w, c) => {}
            Some(g) => {
                return Err(Error::Shape(format!(
                    "{}: {h}x{w}x{c} differs from the first image's {}x{}x{}",
                    file.display(),
                    g.0,
                    g.1,
                    g.2
                )))
            }
        }
        pixels.extend(data);
        let stem = file.file_stem().unwrap_or_default().to_string_lossy();
        labels.push(stem.split_once('_').and_then(|(l, _)| l.parse::<u8>().ok()).filter(|&l| l <= 9));
    }
    let (height, width, channels) = geometry.expect("at least one file");
    let labels = labels.iter().all(Option::is_some).then(|| labels.into_iter().flatten().collect());
    Ok(RawDigits { count: files.len(), height, width, channels, pixels, labels })
}

/// Writes `raw` as an IDX image file plus, when labelled, an IDX label file.
pub fn write_idx(images_path: &Path, labels_path: Option<&Path>, raw: &RawDigits) -> Result<()> {
    let mut dims = vec![raw.count as u32, raw.height as u32, raw.width as u32];
    if raw.channels != 1 {
        dims.push(raw.channels as u32);
    }
    write_idx_file(images_path, &dims, &raw.pixels)?;
    if let (Some(lp), Some(labels)) = (labels_path, &raw.labels) {
        write_idx_file(lp, &[labels.len() as u32], labels)?;
    }
    Ok(())
}

fn write_idx_file(path: &Path, dims: &[u32], body: &[u8]) -> Result<()> {
    let mut out = vec![0, 0, IDX_UBYTE, dims.len() as u8];
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(body);
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(count: usize, h: usize, w: usize, c: usize, value: u8) -> RawDigits {
        RawDigits {
            count,
            height: h,
            width: w,
            channels: c,
            pixels: vec![value; count * h * w * c],
            labels: Some((0..count).map(|i| (i % 10) as u8).collect()),
        }
    }

    #[test]
    fn grayscale_digits_become_rgb_32() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("train-images-idx3-ubyte");
        let labels = dir.path().join("train-labels-idx1-ubyte");
        let mut r = raw(3, 28, 28, 1, 0);
        r.pixels[28 * 14 + 14] = 200;
        write_idx(&images, Some(&labels), &r).unwrap();
        let ds = load_mnist_like(&images, 32).unwrap();
        assert_eq!(ds.image_shape(), (3, 32, 32));
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels().unwrap(), &[0, 1, 2]);
        assert!(ds.images().min() >= -1.0 && ds.images().max() <= 1.0);
        // channels are replicated
        let plane = 32 * 32;
        let d = ds.images().data();
        assert_eq!(&d[..plane], &d[plane..2 * plane]);
    }

    #[test]
    fn rgb_at_native_size_only_rescales_range() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images.idx");
        let mut r = raw(1, 8, 8, 3, 0);
        for (i, p) in r.pixels.iter_mut().enumerate() {
            *p = (i * 7 % 256) as u8;
        }
        r.labels = None;
        write_idx(&images, None, &r).unwrap();
        let ds = load_mnist_like(&images, 8).unwrap();
        assert!(ds.labels().is_none());
        let d = ds.images().data();
        for ch in 0..3 {
            for p in 0..64 {
                let expect = f64::from(r.pixels[p * 3 + ch]) / 255.0 * 2.0 - 1.0;
                assert!((d[ch * 64 + p] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_white_maps_to_ones() {
        let ds = preprocess(&raw(1, 28, 28, 1, 255), 16, "w", Split::Train).unwrap();
        assert!(ds.images().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn errors_name_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope-images-idx3-ubyte");
        let err = load_mnist_like(&missing, 32).unwrap_err();
        assert!(err.to_string().contains("nope-images-idx3-ubyte"), "{err}");

        let corrupt = dir.path().join("bad.idx");
        fs::write(&corrupt, [0u8, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28, 1, 2, 3]).unwrap();
        let err = load_mnist_like(&corrupt, 32).unwrap_err();
        assert!(matches!(err, Error::Ingestion { .. }) && err.to_string().contains("bad.idx"), "{err}");
    }

    #[test]
    fn wrong_dimensionality_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.idx");
        write_idx_file(&path, &[4, 5], &[0; 20]).unwrap();
        assert!(matches!(load_mnist_like(&path, 32), Err(Error::Shape(_))));
        let path = dir.path().join("fourch.idx");
        write_idx_file(&path, &[1, 2, 2, 4], &[0; 16]).unwrap();
        assert!(matches!(load_mnist_like(&path, 32), Err(Error::Shape(_))));
    }

    #[test]
    fn size_below_minimum_is_rejected() {
        assert!(matches!(load_mnist_like(Path::new("whatever"), 4), Err(Error::Validation(_))));
    }

    #[test]
    fn png_directory_with_labels() {
        let dir = tempfile::tempdir().unwrap();
        for (i, label) in [3u8, 7].iter().enumerate() {
            let path = dir.path().join(format!("{label}_{i}.png"));
            let file = fs::File::create(&path).unwrap();
            let mut enc = png::Encoder::new(file, 10, 10);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[255u8; 100]).unwrap();
        }
        let ds = load_mnist_like(dir.path(), 12).unwrap();
        assert_eq!(ds.labels().unwrap(), &[3, 7]);
        assert_eq!(ds.image_shape(), (3, 12, 12));
        assert!(ds.images().data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn bilinear_identity_and_constant() {
        let src: Vec<f64> = (0..16).map(f64::from).collect();
        assert_eq!(resize_bilinear(&src, 4, 4, 4, 4), src);
        let flat = vec![0.25; 9];
        assert!(resize_bilinear(&flat, 3, 3, 7, 5).iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
