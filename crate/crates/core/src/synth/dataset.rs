//! Dataset directories: `NNNNN.png` (8-bit RGB) next to `NNNNN.json`.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::render::render;
use super::truth::{gt_boundaries, CornerAnnotation};
use super::{sample_room, GeneratorConfig, RoomSpec, SynthError};
use crate::boundary::BoundaryMap;
use crate::rng::stream;
use crate::tensor::Tensor;
use rand::Rng;

/// Per-image annotation. `spec` is absent for panoramas that were not
/// generated here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<RoomSpec>,
    pub width: usize,
    pub height: usize,
    pub corners: Vec<CornerAnnotation>,
    pub y_c: Vec<f64>,
    pub y_f: Vec<f64>,
    pub y_w: Vec<f64>,
}

impl Annotation {
    pub fn map(&self) -> BoundaryMap {
        BoundaryMap {
            y_c: self.y_c.clone(),
            y_f: self.y_f.clone(),
            y_w: self.y_w.clone(),
        }
    }
}

pub fn save_png(image: &Tensor, path: &Path) -> Result<(), SynthError> {
    let [3, h, w] = image.shape()[..] else {
        return Err(SynthError::Invalid(format!("expected [3, H, W], got {:?}", image.shape())));
    };
    let plane = h * w;
    let src = image.data();
    let mut bytes = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for ch in 0..3 {
            bytes.push((src[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| SynthError::Png(e.to_string()))?;
        writer
            .write_image_data(&bytes)
            .map_err(|e| SynthError::Png(e.to_string()))?;
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Loads any 8-bit PNG as a `[3, H, W]` tensor in `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Tensor, SynthError> {
    let bytes = fs::read(path)?;
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| SynthError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| SynthError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| SynthError::Png(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(SynthError::Png(format!("unsupported color type {other:?}"))),
    };
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..plane {
        let px = &buf[i * stride..(i + 1) * stride];
        for ch in 0..3 {
            let v = if stride >= 3 { px[ch] } else { px[0] };
            data[ch * plane + i] = v as f64 / 255.0;
        }
    }
    Ok(Tensor::new(vec![3, h, w], data)?)
}

pub fn write_sample(
    dir: &Path,
    index: usize,
    image: &Tensor,
    ann: &Annotation,
) -> Result<PathBuf, SynthError> {
    let json = dir.join(format!("{index:05}.json"));
    save_png(image, &dir.join(format!("{index:05}.png")))?;
    fs::write(&json, serde_json::to_string_pretty(ann)? + "\n")?;
    Ok(json)
}

pub fn read_annotation(json: &Path) -> Result<Annotation, SynthError> {
    let text = fs::read_to_string(json)?;
    let ann: Annotation = serde_json::from_str(&text)?;
    let n = ann.width;
    if ann.y_c.len() != n || ann.y_f.len() != n || ann.y_w.len() != n {
        return Err(SynthError::Invalid(format!(
            "{}: boundary rows must have width {n}",
            json.display()
        )));
    }
    Ok(ann)
}

/// Reads the annotation and its sibling PNG.
pub fn read_sample(json: &Path) -> Result<(Tensor, Annotation), SynthError> {
    let ann = read_annotation(json)?;
    let image = load_png(&json.with_extension("png"))?;
    if image.shape()[1] != ann.height || image.shape()[2] != ann.width {
        return Err(SynthError::Invalid(format!(
            "{}: image is {:?}, annotation says {}x{}",
            json.display(),
            image.shape(),
            ann.height,
            ann.width
        )));
    }
    Ok((image, ann))
}

/// Annotation files of a dataset directory, sorted by name.
pub fn list_samples(dir: &Path) -> Result<Vec<PathBuf>, SynthError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.len() == 10 && name.ends_with(".json") && name[..5].bytes().all(|b| b.is_ascii_digit())
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Writes `count` rendered rooms. Sample `i` draws its room seed from the
/// `"dataset"` stream of `seed`, so a prefix of a larger dataset is identical
/// to a smaller one.
pub fn generate_dataset(
    dir: &Path,
    count: usize,
    seed: u64,
    cfg: &GeneratorConfig,
    width: usize,
    height: usize,
) -> Result<Vec<PathBuf>, SynthError> {
    fs::create_dir_all(dir)?;
    let mut seeds = stream(seed, "dataset");
    let mut written = Vec::with_capacity(count);
    for i in 0..count {
        let room_seed: u64 = seeds.random();
        let spec = sample_room(cfg, room_seed)?;
        let image = render(&spec, width, height)?;
        let gt = gt_boundaries(&spec.layout(), width, height)?;
        let ann = Annotation {
            spec: Some(spec),
            width,
            height,
            corners: gt.corners,
            y_c: gt.map.y_c,
            y_f: gt.map.y_f,
            y_w: gt.map.y_w,
        };
        written.push(write_sample(dir, i, &image, &ann)?);
    }
    Ok(written)
}
