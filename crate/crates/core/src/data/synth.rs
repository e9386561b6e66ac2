//! Deterministic synthetic scenes: textured shapes translating by whole
//! pixels over a panning background, with an optional static occluder strip.
//!
//! Every surface carries its texture in local coordinates, so moving a
//! surface by an integer displacement moves its pixels exactly and the
//! ground-truth flow is exact.

use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{write_flo, write_label_png, write_mask_png, write_rgb_png, ClipEntry, Manifest, Split};
use super::{LabelMap, Normalization, VideoClip, DEFAULT_IGNORE_INDEX};
use crate::error::Result;
use crate::propagation::FlowField;
use crate::Error;

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    pub num_clips: usize,
    /// The last `val_clips` clips form the validation split.
    pub val_clips: usize,
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
    /// Class 0 is background and the last class is the occluder; the
    /// classes in between are shapes.
    pub num_classes: u8,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Shape radius range in pixels.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Per-axis shape speed bound in pixels per frame.
    pub max_speed: i32,
    /// Per-axis background pan bound in pixels per frame.
    pub max_pan: i32,
    pub texture_noise: f64,
    /// Probability that a clip contains the occluder strip.
    pub occluder_probability: f64,
    pub occluder_width: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            num_clips: 50,
            val_clips: 10,
            frames_per_clip: 30,
            height: 64,
            width: 64,
            num_classes: 4,
            min_shapes: 2,
            max_shapes: 4,
            min_radius: 6.0,
            max_radius: 13.0,
            max_speed: 3,
            max_pan: 1,
            texture_noise: 0.06,
            occluder_probability: 0.8,
            occluder_width: 6,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synth: {msg}")));
        if self.frames_per_clip < 10 {
            return bad(format!("frames_per_clip must be at least 10, got {}", self.frames_per_clip));
        }
        if self.num_clips == 0 || self.val_clips > self.num_clips {
            return bad(format!("need 0 < num_clips and val_clips <= num_clips, got {} / {}", self.num_clips, self.val_clips));
        }
        if self.height < 8 || self.width < 8 {
            return bad(format!("frame size {}x{} is too small", self.height, self.width));
        }
        if self.num_classes < 3 || self.num_classes == DEFAULT_IGNORE_INDEX {
            return bad(format!("num_classes must be in [3, 255), got {}", self.num_classes));
        }
        if self.min_shapes > self.max_shapes {
            return bad("min_shapes exceeds max_shapes".into());
        }
        if !(self.min_radius > 0.0 && self.min_radius <= self.max_radius) {
            return bad("radius range must satisfy 0 < min_radius <= max_radius".into());
        }
        if self.max_speed < 0 || self.max_pan < 0 {
            return bad("speeds must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.occluder_probability) || !(0.0..=0.5).contains(&self.texture_noise) {
            return bad("occluder_probability must be in [0,1] and texture_noise in [0,0.5]".into());
        }
        if self.occluder_width == 0 || self.occluder_width >= self.width.min(self.height) {
            return bad(format!("occluder_width {} does not fit the frame", self.occluder_width));
        }
        Ok(())
    }

    pub fn occluder_class(&self) -> u8 {
        self.num_classes - 1
    }

    pub fn clip_id(index: usize) -> String {
        format!("clip_{index:04}")
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index >= self.num_clips - self.val_clips {
            Split::Val
        } else {
            Split::Train
        }
    }
}

/// Sinusoidal texture with hashed value noise, evaluated in local coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub base: [f64; 3],
    pub amplitude: f64,
    pub freq: [f64; 2],
    pub phase: [f64; 3],
    pub noise: f64,
    pub noise_seed: u64,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, base: [f64; 3], jitter: f64, noise: f64) -> Self {
        let mut b = base;
        for v in &mut b {
            *v = (*v + rng.random_range(-jitter..=jitter)).clamp(0.05, 0.95);
        }
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let k: f64 = rng.random_range(0.3..0.9);
        Self {
            base: b,
            amplitude: rng.random_range(0.05..0.15),
            freq: [k * angle.cos(), k * angle.sin()],
            phase: [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)],
            noise,
            noise_seed: rng.random(),
        }
    }

    fn sample(&self, lx: i64, ly: i64) -> [f64; 3] {
        let t = self.freq[0] * lx as f64 + self.freq[1] * ly as f64;
        let n = hash_unit(self.noise_seed, lx, ly) * self.noise;
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = (self.base[c] + self.amplitude * (t + self.phase[c]).sin() + n).clamp(0.0, 1.0);
        }
        out
    }
}

/// Deterministic value in `[-1, 1]` for an integer lattice point.
fn hash_unit(seed: u64, x: i64, y: i64) -> f64 {
    let mut z = seed ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Outline {
    Ellipse { rx: f64, ry: f64 },
    /// Regular polygon with `sides` vertices at distance `radius`.
    Polygon { sides: u32, radius: f64, rotation: f64 },
}

impl Outline {
    /// Membership of the pixel centre at local offset `(dx, dy)` from the
    /// shape's anchor.
    fn contains(&self, dx: i64, dy: i64) -> bool {
        let (x, y) = (dx as f64 + 0.5, dy as f64 + 0.5);
        match *self {
            Outline::Ellipse { rx, ry } => (x / rx).powi(2) + (y / ry).powi(2) <= 1.0,
            Outline::Polygon { sides, radius, rotation } => {
                let n = sides as f64;
                let apothem = radius * (std::f64::consts::PI / n).cos();
                (0..sides).all(|i| {
                    let a = rotation + (i as f64 + 0.5) * std::f64::consts::TAU / n;
                    x * a.cos() + y * a.sin() <= apothem
                })
            }
        }
    }

    fn extent(&self) -> f64 {
        match *self {
            Outline::Ellipse { rx, ry } => rx.max(ry),
            Outline::Polygon { radius, .. } => radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub class: u8,
    pub outline: Outline,
    pub texture: Texture,
    /// Anchor position at frame 0.
    pub start: [i64; 2],
    pub velocity: [i64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub vertical: bool,
    /// Column (vertical strip) or row (horizontal strip) where it starts.
    pub offset: usize,
    pub width: usize,
    pub texture: Texture,
}

/// A complete scene description; rendering it is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub background: Texture,
    pub pan: [i64; 2],
    /// Back to front.
    pub shapes: Vec<Shape>,
    pub occluder: Option<(Occluder, u8)>,
}

/// Base colours per shape class, cycled when there are more classes.
const PALETTE: [[f64; 3]; 6] = [
    [0.85, 0.30, 0.25],
    [0.25, 0.45, 0.85],
    [0.30, 0.80, 0.35],
    [0.85, 0.75, 0.20],
    [0.70, 0.30, 0.80],
    [0.20, 0.80, 0.80],
];

impl Scene {
    pub fn random(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Self {
        let (h, w) = (spec.height as i64, spec.width as i64);
        let background = Texture::random(rng, [0.45, 0.45, 0.45], 0.1, spec.texture_noise);
        let pan = [rng.random_range(-spec.max_pan..=spec.max_pan) as i64, rng.random_range(-spec.max_pan..=spec.max_pan) as i64];
        let n_shape_classes = spec.num_classes - 2;
        let n_shapes = rng.random_range(spec.min_shapes..=spec.max_shapes);
        let mut shapes = Vec::with_capacity(n_shapes);
        for _ in 0..n_shapes {
            let class = 1 + rng.random_range(0..n_shape_classes);
            let r = rng.random_range(spec.min_radius..=spec.max_radius);
            let outline = if class % 2 == 1 {
                Outline::Ellipse { rx: r, ry: r * rng.random_range(0.6..=1.0) }
            } else {
                Outline::Polygon { sides: rng.random_range(3..=5), radius: r, rotation: rng.random_range(0.0..std::f64::consts::TAU) }
            };
            let colour = PALETTE[(class as usize - 1) % PALETTE.len()];
            let texture = Texture::random(rng, colour, 0.08, spec.texture_noise);
            let mut velocity = [0i64; 2];
            if spec.max_speed > 0 {
                while velocity == [0, 0] {
                    velocity = [
                        rng.random_range(-spec.max_speed..=spec.max_speed) as i64,
                        rng.random_range(-spec.max_speed..=spec.max_speed) as i64,
                    ];
                }
            }
            shapes.push(Shape {
                class,
                outline,
                texture,
                start: [rng.random_range(0..w), rng.random_range(0..h)],
                velocity,
            });
        }
        let occluder = rng.random_bool(spec.occluder_probability).then(|| {
            let vertical = rng.random_bool(0.5);
            let span = if vertical { spec.width } else { spec.height };
            let offset = rng.random_range(span / 4..(3 * span / 4).min(span - spec.occluder_width));
            let texture = Texture::random(rng, [0.15, 0.15, 0.15], 0.05, spec.texture_noise);
            (Occluder { vertical, offset, width: spec.occluder_width, texture }, spec.occluder_class())
        });
        Self { height: spec.height, width: spec.width, frames: spec.frames_per_clip, background, pan, shapes, occluder }
    }

    /// Anchor positions of every shape at every frame. Shapes bounce off the
    /// frame borders (their anchor stays inside the frame).
    pub fn trajectories(&self) -> Vec<Vec<[i64; 2]>> {
        let bounds = [self.width as i64, self.height as i64];
        self.shapes
            .iter()
            .map(|s| {
                let margin = (s.outline.extent() * 0.5) as i64;
                let mut pos = s.start;
                let mut vel = s.velocity;
                let mut out = Vec::with_capacity(self.frames);
                out.push(pos);
                for _ in 1..self.frames {
                    for a in 0..2 {
                        let lo = -margin;
                        let hi = bounds[a] - 1 + margin;
                        if pos[a] + vel[a] < lo || pos[a] + vel[a] > hi {
                            vel[a] = -vel[a];
                        }
                        pos[a] += vel[a];
                    }
                    out.push(pos);
                }
                out
            })
            .collect()
    }
}

/// Which surface covers a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Surface {
    Background,
    Shape(usize),
    Occluder,
}

/// In-memory rendering of one clip with all annotations.
#[derive(Debug, Clone)]
pub struct RenderedClip {
    /// `(3, H, W)` 8-bit frames.
    pub frames: Vec<Array3<u8>>,
    pub labels: Vec<Array2<u8>>,
    /// `flows[t]` lives on frame `t + 1` and points into frame `t`.
    pub flows: Vec<FlowField<f32>>,
    /// `occlusion[t]` marks pixels of frame `t + 1` without a source in frame `t`.
    pub occlusion: Vec<Array2<bool>>,
}

impl RenderedClip {
    pub fn into_clip(self, clip_id: &str, num_classes: u8, normalization: &Normalization) -> Result<VideoClip> {
        let frames = self
            .frames
            .iter()
            .map(|f| normalization.apply(f.mapv(|v| v as f32 / 255.0)))
            .collect();
        let labels = self
            .labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| Ok((i, LabelMap::new(l, num_classes, DEFAULT_IGNORE_INDEX)?)))
            .collect::<Result<_>>()?;
        let gt_flows = self.flows.into_iter().enumerate().collect();
        let occlusion = self.occlusion.into_iter().enumerate().collect();
        VideoClip::new(clip_id, frames, labels, gt_flows, occlusion)
    }
}

fn surface_map(scene: &Scene, positions: &[[i64; 2]]) -> Array2<Surface> {
    Array2::from_shape_fn((scene.height, scene.width), |(y, x)| {
        let (x, y) = (x as i64, y as i64);
        if let Some((o, _)) = &scene.occluder {
            let c = if o.vertical { x } else { y } as usize;
            if c >= o.offset && c < o.offset + o.width {
                return Surface::Occluder;
            }
        }
        for (i, s) in scene.shapes.iter().enumerate().rev() {
            let p = positions[i];
            if s.outline.contains(x - p[0], y - p[1]) {
                return Surface::Shape(i);
            }
        }
        Surface::Background
    })
}

/// Renders a scene into frames, labels, flows and occlusion masks.
pub fn render_clip(scene: &Scene) -> RenderedClip {
    let traj = scene.trajectories();
    let n = scene.frames;
    let mut frames = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut surfaces = Vec::with_capacity(n);
    for t in 0..n {
        let positions: Vec<[i64; 2]> = traj.iter().map(|p| p[t]).collect();
        let pan = [scene.pan[0] * t as i64, scene.pan[1] * t as i64];
        let surf = surface_map(scene, &positions);
        let mut img = Array3::<u8>::zeros((3, scene.height, scene.width));
        let mut lab = Array2::<u8>::zeros((scene.height, scene.width));
        for ((y, x), s) in surf.indexed_iter() {
            let (xi, yi) = (x as i64, y as i64);
            let (rgb, class) = match *s {
                Surface::Background => (scene.background.sample(xi - pan[0], yi - pan[1]), 0),
                Surface::Shape(i) => {
                    let p = positions[i];
                    (scene.shapes[i].texture.sample(xi - p[0], yi - p[1]), scene.shapes[i].class)
                }
                Surface::Occluder => {
                    let (o, class) = scene.occluder.as_ref().expect("occluder surface");
                    (o.texture.sample(xi, yi), *class)
                }
            };
            for c in 0..3 {
                img[[c, y, x]] = (rgb[c] * 255.0).round() as u8;
            }
            lab[[y, x]] = class;
        }
        frames.push(img);
        labels.push(lab);
        surfaces.push(surf);
    }

    let mut flows = Vec::with_capacity(n.saturating_sub(1));
    let mut occlusion = Vec::with_capacity(n.saturating_sub(1));
    for t in 0..n.saturating_sub(1) {
        let mut u = Array2::<f32>::zeros((scene.height, scene.width));
        let mut v = Array2::<f32>::zeros((scene.height, scene.width));
        let mut occ = Array2::from_elem((scene.height, scene.width), false);
        for ((y, x), s) in surfaces[t + 1].indexed_iter() {
            let d = match *s {
                Surface::Background => scene.pan,
                Surface::Shape(i) => [traj[i][t + 1][0] - traj[i][t][0], traj[i][t + 1][1] - traj[i][t][1]],
                Surface::Occluder => [0, 0],
            };
            u[[y, x]] = -d[0] as f32;
            v[[y, x]] = -d[1] as f32;
            let sx = x as i64 - d[0];
            let sy = y as i64 - d[1];
            let inside = sx >= 0 && sy >= 0 && sx < scene.width as i64 && sy < scene.height as i64;
            occ[[y, x]] = !inside || surfaces[t][[sy as usize, sx as usize]] != *s;
        }
        flows.push(FlowField::from_uv(u, v).expect("same shape"));
        occlusion.push(occ);
    }
    RenderedClip { frames, labels, flows, occlusion }
}

/// Renders clip `index` of a dataset. Each clip draws from its own stream of
/// the dataset seed, so clips are independent of generation order.
pub fn render_indexed_clip(spec: &SynthSpec, index: usize) -> RenderedClip {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    render_clip(&Scene::random(spec, &mut rng))
}

/// Writes a full synthetic dataset under `out` and returns its manifest.
pub fn generate_synthetic_dataset(spec: &SynthSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    let normalization = Normalization::default();
    let mut clips = Vec::with_capacity(spec.num_clips);
    for index in 0..spec.num_clips {
        let id = SynthSpec::clip_id(index);
        let rendered = render_indexed_clip(spec, index);
        let dir = out.join("clips").join(&id);
        for sub in ["frames", "labels", "flows", "occlusion"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(Error::io(dir.join(sub)))?;
        }
        for (t, f) in rendered.frames.iter().enumerate() {
            write_rgb_png(&dir.join("frames").join(format!("{t:06}.png")), f)?;
            write_label_png(&dir.join("labels").join(format!("{t:06}.png")), &rendered.labels[t])?;
        }
        for (t, f) in rendered.flows.iter().enumerate() {
            write_flo(&dir.join("flows").join(format!("{t:06}.flo")), f)?;
            write_mask_png(&dir.join("occlusion").join(format!("{t:06}.png")), &rendered.occlusion[t])?;
        }
        clips.push(ClipEntry { id, split: spec.split_of(index), num_frames: spec.frames_per_clip });
    }
    let manifest = Manifest {
        num_classes: spec.num_classes,
        ignore_index: DEFAULT_IGNORE_INDEX,
        height: spec.height,
        width: spec.width,
        normalization,
        clips,
        synth: Some(spec.clone()),
    };
    manifest.write(out)?;
    Ok(manifest)
}
