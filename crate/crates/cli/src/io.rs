//! PNG rasters and the dataset directory layout.
//!
//! A dataset directory holds `manifest.txt`, `images/` and `labels/`. The
//! manifest starts with a `classes=K` line followed by one
//! `images/NNNN.png labels/NNNN.png` pair per line, paths relative to the
//! directory. Label PNGs are 8-bit grayscale class indices; 255 marks
//! ignored pixels.

use std::path::{Path, PathBuf};

use ducdlc::labels::DEFAULT_IGNORE_INDEX;
use ducdlc::train::Sample;
use ducdlc::{LabelMap, Shape4, Tensor4};
use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{CliError, CliResult};
use crate::palette;

pub const MANIFEST: &str = "manifest.txt";

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn open(path: &Path) -> CliResult<DynamicImage> {
    image::open(path).map_err(|e| CliError::io(path, e))
}

fn from_rgb(img: &RgbImage) -> Tensor4 {
    let (w, h) = img.dimensions();
    Tensor4::from_fn(Shape4::new(1, 3, h as usize, w as usize), |_, c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
    })
}

fn from_gray(img: &GrayImage) -> Tensor4 {
    let (w, h) = img.dimensions();
    Tensor4::from_fn(Shape4::new(1, 1, h as usize, w as usize), |_, _, y, x| {
        img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
    })
}

/// `1x3xHxW` in `[0, 1]`; alpha is dropped, gray is replicated.
pub fn read_rgb(path: &Path) -> CliResult<Tensor4> {
    Ok(from_rgb(&open(path)?.to_rgb8()))
}

/// `1x1xHxW` luma in `[0, 1]`.
pub fn read_gray(path: &Path) -> CliResult<Tensor4> {
    Ok(from_gray(&open(path)?.to_luma8()))
}

/// Grayscale files load with one channel, everything else with three.
pub fn read_image(path: &Path) -> CliResult<Tensor4> {
    let img = open(path)?;
    Ok(if img.color().has_color() {
        from_rgb(&img.to_rgb8())
    } else {
        from_gray(&img.to_luma8())
    })
}

/// Writes item 0 of a one- or three-channel tensor, clamped to `[0, 1]`.
pub fn write_image(path: &Path, t: &Tensor4) -> CliResult<()> {
    let s = t.shape();
    let (w, h) = (s.w as u32, s.h as u32);
    let result = match s.c {
        1 => GrayImage::from_fn(w, h, |x, y| image::Luma([to_u8(t.get(0, 0, y as usize, x as usize))])).save(path),
        3 => RgbImage::from_fn(w, h, |x, y| {
            image::Rgb(std::array::from_fn(|c| to_u8(t.get(0, c, y as usize, x as usize))))
        })
        .save(path),
        c => return Err(CliError::Usage(format!("cannot write a {c}-channel image"))),
    };
    result.map_err(|e| CliError::io(path, e))
}

fn label_u8(v: u32) -> CliResult<u8> {
    u8::try_from(v).map_err(|_| CliError::Data(format!("label {v} does not fit an 8-bit PNG")))
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> CliResult<()> {
    let (_, h, w) = labels.dims();
    let data = labels.item(0).iter().map(|&v| label_u8(v)).collect::<CliResult<Vec<u8>>>()?;
    let img = GrayImage::from_raw(w as u32, h as u32, data).expect("sized from the label map");
    img.save(path).map_err(|e| CliError::io(path, e))
}

pub fn write_colorized(path: &Path, labels: &LabelMap) -> CliResult<()> {
    let (_, h, w) = labels.dims();
    let item = labels.item(0);
    let mut img = RgbImage::new(w as u32, h as u32);
    for (i, px) in img.pixels_mut().enumerate() {
        *px = image::Rgb(palette::color(label_u8(item[i])?));
    }
    img.save(path).map_err(|e| CliError::io(path, e))
}

/// Reads a label PNG and checks every non-ignored value against `classes`.
pub fn read_labels(path: &Path, classes: usize) -> CliResult<LabelMap> {
    let img = open(path)?;
    if img.color() != image::ColorType::L8 {
        return Err(CliError::Data(format!(
            "{}: label maps must be 8-bit grayscale, found {:?}",
            path.display(),
            img.color()
        )));
    }
    let g = img.to_luma8();
    let (w, h) = g.dimensions();
    let data = g.into_raw().into_iter().map(u32::from).collect();
    let labels = LabelMap::with_ignore(1, h as usize, w as usize, data, DEFAULT_IGNORE_INDEX)?;
    labels.validate(classes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(labels)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub classes: usize,
    pub pairs: Vec<(String, String)>,
}

impl Manifest {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| CliError::Data("manifest is empty".into()))?;
        let classes = header
            .strip_prefix("classes=")
            .and_then(|v| v.trim().parse::<usize>().ok())
            .ok_or_else(|| CliError::Data(format!("manifest header must be classes=K, found {header:?}")))?;
        let pairs = lines
            .map(|l| {
                let mut parts = l.split_whitespace();
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(a), Some(b), None) => Ok((a.to_string(), b.to_string())),
                    _ => Err(CliError::Data(format!("manifest line must hold two paths: {l:?}"))),
                }
            })
            .collect::<CliResult<_>>()?;
        Ok(Self { classes, pairs })
    }

    pub fn render(&self) -> String {
        let mut out = format!("classes={}\n", self.classes);
        for (a, b) in &self.pairs {
            out.push_str(&format!("{a} {b}\n"));
        }
        out
    }
}

/// Fails with a usage error naming `dir` when it is not a directory.
pub fn require_dir(dir: &Path) -> CliResult<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("data directory {} does not exist", dir.display())))
    }
}

pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("file {} does not exist", path.display())))
    }
}

/// Loads every pair listed in `dir/manifest.txt`, in manifest order.
pub fn load_dataset(dir: &Path) -> CliResult<(usize, Vec<Sample>)> {
    require_dir(dir)?;
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest = Manifest::parse(&text)?;
    let samples = manifest
        .pairs
        .iter()
        .map(|(img, lbl)| {
            let image = read_rgb(&dir.join(img))?;
            let label = read_labels(&dir.join(lbl), manifest.classes)?;
            Sample::new(image, label).map_err(|e| CliError::Data(format!("{img}: {e}")))
        })
        .collect::<CliResult<_>>()?;
    Ok((manifest.classes, samples))
}

/// `seg.png` -> `seg_index.png`.
pub fn index_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "png".into());
    out.with_file_name(format!("{stem}_index.{ext}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_roundtrip() {
        let m = Manifest {
            classes: 4,
            pairs: vec![("images/0000.png".into(), "labels/0000.png".into())],
        };
        assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
        assert_eq!(Manifest::parse("classes=3\n").unwrap().pairs.len(), 0);
        assert!(Manifest::parse("").is_err());
        assert!(Manifest::parse("classes=x\n").is_err());
        assert!(Manifest::parse("classes=2\na b c\n").is_err());
    }

    #[test]
    fn index_path_keeps_directory() {
        assert_eq!(index_path(Path::new("out/seg.png")), PathBuf::from("out/seg_index.png"));
    }

    #[test]
    fn quantization() {
        assert_eq!(to_u8(-0.5), 0);
        assert_eq!(to_u8(1.5), 255);
        assert_eq!(to_u8(0.5), 128);
    }
}
