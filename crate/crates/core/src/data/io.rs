//! PNG images and masks, saliency-map export and manifest files.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};
use tscnet_tensor::Tensor;

use super::Sample;
use crate::error::{Error, Result};

/// Mask pixels at or above this value are foreground.
pub const MASK_THRESHOLD: u8 = 128;

/// `[0, 1] → {0..255}`, rounding half up.
pub fn quantize(v: f32) -> u8 {
    (f64::from(v).clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn image_err(path: &Path, msg: impl ToString) -> Error {
    Error::Image { path: path.to_path_buf(), msg: msg.to_string() }
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| image_err(path, format!("cannot decode PNG: {e}")))
}

fn save_png(path: &Path, img: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img(path).map_err(|e| image_err(path, format!("cannot write PNG: {e}")))
}

/// Loads an RGB image and its grayscale mask, binarised at 128.
pub fn load_sample(image_path: &Path, mask_path: &Path) -> Result<Sample> {
    let rgb = open(image_path)?.to_rgb8();
    let gray = open(mask_path)?.to_luma8();
    if rgb.dimensions() != gray.dimensions() {
        return Err(Error::Data(format!(
            "{} is {}×{} but {} is {}×{}",
            image_path.display(),
            rgb.width(),
            rgb.height(),
            mask_path.display(),
            gray.width(),
            gray.height()
        )));
    }
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut img = vec![0.0f32; 3 * h * w];
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            img[c * h * w + y as usize * w + x as usize] = f32::from(p[c]) / 255.0;
        }
    }
    let mask: Vec<f32> = gray.pixels().map(|p| if p[0] >= MASK_THRESHOLD { 1.0 } else { 0.0 }).collect();
    let id = image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Sample {
        id,
        image: Tensor::new(vec![3, h, w], img)?,
        mask: Tensor::new(vec![1, h, w], mask)?,
    })
}

/// Writes `{dir}/{id}.png` and `{dir}/{id}_mask.png`; returns both paths.
pub fn save_sample(dir: &Path, sample: &Sample) -> Result<(PathBuf, PathBuf)> {
    let (_, h, w) = sample.image.chw().ok_or_else(|| Error::Data("image must be 3×H×W".into()))?;
    let d = sample.image.data();
    let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([quantize(d[i]), quantize(d[h * w + i]), quantize(d[2 * h * w + i])])
    });
    let m = sample.mask.data();
    let gray = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if m[y as usize * w + x as usize] >= 0.5 { 255 } else { 0 }])
    });
    let ip = dir.join(format!("{}.png", sample.id));
    let mp = dir.join(format!("{}_mask.png", sample.id));
    save_png(&ip, |p| rgb.save(p))?;
    save_png(&mp, |p| gray.save(p))?;
    Ok((ip, mp))
}

/// Writes a `1×H×W` or `H×W` map in `[0, 1]` as 8-bit grayscale.
pub fn save_map(path: &Path, map: &Tensor<f32>) -> Result<()> {
    let dims = map.dims();
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    let d = map.data();
    let gray = GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([quantize(d[y as usize * w + x as usize])]));
    save_png(path, |p| gray.save(p))
}

/// Loads an 8-bit grayscale map as `1×H×W` values `k/255`.
pub fn load_map(path: &Path) -> Result<Tensor<f32>> {
    let gray = open(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.pixels().map(|p| f32::from(p[0]) / 255.0).collect();
    Ok(Tensor::new(vec![1, h, w], data)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Reads `image<TAB>mask` lines; relative paths resolve against the
/// manifest's directory. An empty manifest is an error.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (img, mask) = line.split_once('\t').ok_or_else(|| {
            Error::Data(format!("{}:{}: expected image<TAB>mask", path.display(), n + 1))
        })?;
        out.push(ManifestEntry { image: base.join(img.trim()), mask: base.join(mask.trim()) });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: manifest lists no samples", path.display())));
    }
    Ok(out)
}

/// Writes entries, relative to the manifest's directory where possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let text: String = entries.iter().map(|e| format!("{}\t{}\n", rel(&e.image), rel(&e.mask))).collect();
    if !base.as_os_str().is_empty() {
        fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
