//! On-disk dataset layout, PNG and Middlebury `.flo` I/O, and the manifest.
//!
//! ```text
//! <root>/manifest.json
//! <root>/clips/<id>/frames/000000.png     8-bit RGB
//! <root>/clips/<id>/labels/000000.png     8-bit class index, 255 = ignore
//! <root>/clips/<id>/flows/000000.flo      frame t -> t+1, stored on t+1
//! <root>/clips/<id>/occlusion/000000.png  0/255 mask on frame t+1
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{LabelMap, Normalization, SynthSpec, VideoClip};
use crate::error::Result;
use crate::propagation::FlowField;
use crate::Error;

const FLO_MAGIC: f32 = 202021.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub id: String,
    pub split: Split,
    pub num_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub num_classes: u8,
    pub ignore_index: u8,
    pub height: usize,
    pub width: usize,
    pub normalization: Normalization,
    pub clips: Vec<ClipEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(Self::FILE_NAME);
        let file = File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingPrerequisite(format!("no dataset manifest at {}", path.display())),
            _ => Error::Io { path: path.clone(), source: e },
        })?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::DataIntegrity(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(Self::FILE_NAME);
        let mut w = BufWriter::new(File::create(&path).map_err(Error::io(&path))?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(Error::io(&path))?;
        w.flush().map_err(Error::io(&path))
    }
}

/// A dataset root together with its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = Manifest::read(&root)?;
        Ok(Self { root, manifest })
    }

    pub fn clip_dir(&self, id: &str) -> PathBuf {
        self.root.join("clips").join(id)
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.manifest.clips.iter().filter(move |c| c.split == split)
    }

    pub fn load(&self, entry: &ClipEntry, frame_range: Option<Range<usize>>) -> Result<VideoClip> {
        let range = frame_range.unwrap_or(0..entry.num_frames);
        load_clip(&self.clip_dir(&entry.id), Some(range), self.manifest.num_classes, self.manifest.ignore_index, &self.manifest.normalization)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<VideoClip>> {
        self.entries(split).map(|e| self.load(e, None)).collect()
    }
}

fn frame_file(dir: &Path, sub: &str, t: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("{t:06}.{ext}"))
}

/// Loads a clip directory. Without a range every frame from `000000.png`
/// up to the first gap is loaded; with a range every frame in it must exist.
pub fn load_clip(
    dir: &Path,
    frame_range: Option<Range<usize>>,
    num_classes: u8,
    ignore_index: u8,
    normalization: &Normalization,
) -> Result<VideoClip> {
    let id = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let range = match frame_range {
        Some(r) => r,
        None => {
            let mut n = 0;
            while frame_file(dir, "frames", n, "png").is_file() {
                n += 1;
            }
            0..n
        }
    };
    if range.is_empty() {
        return Err(Error::DataIntegrity(format!("{}: no frames in range {range:?}", dir.display())));
    }
    let mut frames = Vec::with_capacity(range.len());
    for t in range.clone() {
        let path = frame_file(dir, "frames", t, "png");
        if !path.is_file() {
            return Err(Error::DataIntegrity(format!("missing frame {}", path.display())));
        }
        let rgb = read_rgb_png(&path)?;
        frames.push(normalization.apply(rgb.mapv(|v| v as f32 / 255.0)));
    }
    let (h, w) = (frames[0].dim().1, frames[0].dim().2);

    let mut labels = BTreeMap::new();
    for t in range.clone() {
        let path = frame_file(dir, "labels", t, "png");
        if path.is_file() {
            let values = read_label_png(&path)?;
            if values.dim() != (h, w) {
                return Err(Error::DataIntegrity(format!(
                    "{}: label is {:?}, frames are {h}x{w}",
                    path.display(),
                    values.dim()
                )));
            }
            let map = LabelMap::new(values, num_classes, ignore_index)
                .map_err(|e| Error::DataIntegrity(format!("{}: {e}", path.display())))?;
            labels.insert(t - range.start, map);
        }
    }

    let mut gt_flows = BTreeMap::new();
    let mut occlusion = BTreeMap::new();
    if dir.join("flows").is_dir() {
        for t in range.start..range.end - 1 {
            let path = frame_file(dir, "flows", t, "flo");
            if !path.is_file() {
                return Err(Error::DataIntegrity(format!("missing flow {}", path.display())));
            }
            gt_flows.insert(t - range.start, read_flo(&path)?);
        }
    }
    if dir.join("occlusion").is_dir() {
        for t in range.start..range.end - 1 {
            let path = frame_file(dir, "occlusion", t, "png");
            if path.is_file() {
                occlusion.insert(t - range.start, read_mask_png(&path)?);
            }
        }
    }
    VideoClip::new(id, frames, labels, gt_flows, occlusion).map_err(|e| match e {
        Error::Shape(m) => Error::DataIntegrity(format!("{}: {m}", dir.display())),
        other => other,
    })
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image { path: path.to_path_buf(), source }
}

/// Writes a `(3, H, W)` array as 8-bit RGB.
pub fn write_rgb_png(path: &Path, rgb: &Array3<u8>) -> Result<()> {
    let (c, h, w) = rgb.dim();
    if c != 3 {
        return Err(Error::Shape(format!("rgb image needs 3 channels, got {c}")));
    }
    let img: RgbImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([rgb[[0, y, x]], rgb[[1, y, x]], rgb[[2, y, x]]])
    });
    img.save_with_format(path, image::ImageFormat::Png).map_err(image_err(path))
}

pub fn read_rgb_png(path: &Path) -> Result<Array3<u8>> {
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| img.get_pixel(x as u32, y as u32)[c]))
}

pub fn write_label_png(path: &Path, values: &Array2<u8>) -> Result<()> {
    let (h, w) = values.dim();
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| Luma([values[[y as usize, x as usize]]]));
    img.save_with_format(path, image::ImageFormat::Png).map_err(image_err(path))
}

pub fn read_label_png(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(image_err(path))?;
    let img = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::DataIntegrity(format!(
                "{}: labels must be 8-bit single channel, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| img.get_pixel(x as u32, y as u32)[0]))
}

pub fn write_mask_png(path: &Path, mask: &Array2<bool>) -> Result<()> {
    write_label_png(path, &mask.mapv(|m| if m { 255 } else { 0 }))
}

pub fn read_mask_png(path: &Path) -> Result<Array2<bool>> {
    Ok(read_label_png(path)?.mapv(|v| v >= 128))
}

/// Writes a Middlebury `.flo` file.
pub fn write_flo(path: &Path, flow: &FlowField<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(Error::io(path))?);
    let mut buf = Vec::with_capacity(12 + 8 * flow.height() * flow.width());
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    buf.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    let (u, v) = (flow.u(), flow.v());
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            buf.extend_from_slice(&u[[y, x]].to_le_bytes());
            buf.extend_from_slice(&v[[y, x]].to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(Error::io(path))?;
    w.flush().map_err(Error::io(path))
}

pub fn read_flo(path: &Path) -> Result<FlowField<f32>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(Error::io(path))?;
    let corrupt = |msg: &str| Error::DataIntegrity(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 {
        return Err(corrupt("truncated header"));
    }
    let word = |i: usize| <[u8; 4]>::try_from(&bytes[4 * i..4 * i + 4]).expect("4 bytes");
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (w, h) = (i32::from_le_bytes(word(1)), i32::from_le_bytes(word(2)));
    if w <= 0 || h <= 0 {
        return Err(corrupt("non-positive size"));
    }
    let (w, h) = (w as usize, h as usize);
    if bytes.len() != 12 + 8 * w * h {
        return Err(corrupt("payload size does not match header"));
    }
    let mut u = Array2::zeros((h, w));
    let mut v = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let i = 3 + 2 * (y * w + x);
            u[[y, x]] = f32::from_le_bytes(word(i));
            v[[y, x]] = f32::from_le_bytes(word(i + 1));
        }
    }
    FlowField::from_uv(u, v)
}
