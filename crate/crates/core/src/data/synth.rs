//! Synthetic capsule-endoscopy-like frames.
//!
//! Appearance recipes are rough stand-ins and make no claim of clinical
//! realism; only the geometry (lesion size distribution, class mix,
//! redundancy rate) is meant to follow real data.

use std::f64::consts::PI;

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnnotatedFrame, ClassLabel, Object, PatientLabel, PatientSequence};
use crate::geometry::BBox;
use crate::seed::stream_rng;
use crate::{Error, Result};

/// Pixel scale the size parameters are quoted at.
pub const REFERENCE_SIZE: f64 = 256.0;

/// Log-normal side-length distribution quoted at the 256-pixel scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeDist {
    pub median: f64,
    pub log_sigma: f64,
}

impl SizeDist {
    pub const fn new(median: f64, log_sigma: f64) -> Self {
        Self { median, log_sigma }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Recipes {
    pub mucosa: [u8; 3],
    pub bulge: [u8; 3],
    pub blood: [u8; 3],
    pub ulcer_floor: [u8; 3],
    pub ulcer_rim: [u8; 3],
    pub bubble: [u8; 3],
    pub residue: [u8; 3],
    pub villi: [u8; 3],
}

impl Default for Recipes {
    fn default() -> Self {
        Self {
            mucosa: [196, 110, 84],
            bulge: [240, 160, 158],
            blood: [140, 15, 20],
            ulcer_floor: [235, 225, 190],
            ulcer_rim: [170, 50, 45],
            bubble: [242, 242, 228],
            residue: [150, 132, 48],
            villi: [214, 128, 100],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub image_size: usize,
    pub patients_per_category: usize,
    pub frames_per_patient: usize,
    pub lesion_size: SizeDist,
    /// Log-sigma of the width/height aspect jitter of every object.
    pub aspect_log_sigma: f64,
    pub finding_size: SizeDist,
    pub redundancy_size: SizeDist,
    pub texture_size: SizeDist,
    /// Chance that a frame of an occupant patient shows a lesion.
    pub positive_frame_fraction: f64,
    /// Chance that a frame of a non-occupant patient shows bleeding or ulcer.
    pub finding_frame_fraction: f64,
    /// Chance that a frame carries bubbles or residues.
    pub redundancy_fraction: f64,
    /// Chance that a frame carries a dome-shaped residue clump.
    pub hard_negative_fraction: f64,
    /// Annotated texture patches per frame of a normal patient.
    pub texture_patches: (usize, usize),
    pub recipes: Recipes,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            image_size: 64,
            patients_per_category: 6,
            frames_per_patient: 40,
            lesion_size: SizeDist::new(90.0, 0.16),
            aspect_log_sigma: 0.06,
            finding_size: SizeDist::new(76.0, 0.22),
            redundancy_size: SizeDist::new(64.0, 0.25),
            texture_size: SizeDist::new(60.0, 0.2),
            positive_frame_fraction: 0.5,
            finding_frame_fraction: 0.5,
            redundancy_fraction: 0.35,
            hard_negative_fraction: 0.2,
            texture_patches: (1, 2),
            recipes: Recipes::default(),
        }
    }
}

impl SynthConfig {
    pub fn scale(&self) -> f64 {
        self.image_size as f64 / REFERENCE_SIZE
    }

    /// Radius of the circular field of view.
    pub fn fov_radius(&self) -> f64 {
        0.48 * self.image_size as f64
    }

    /// Square that bounds the field of view, as `(lo, hi)` on both axes.
    pub fn fov_square(&self) -> (f64, f64) {
        let c = self.image_size as f64 / 2.0;
        let r = self.fov_radius();
        ((c - r).floor(), (c + r).ceil())
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [
            self.positive_frame_fraction,
            self.finding_frame_fraction,
            self.redundancy_fraction,
            self.hard_negative_fraction,
        ];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("synthetic frame fractions must lie in [0, 1]".into()));
        }
        if self.texture_patches.0 > self.texture_patches.1 {
            return Err(Error::Config("texture patch range is inverted".into()));
        }
        let smallest = self.lesion_size.median * (-3.0 * self.lesion_size.log_sigma).exp() * self.scale();
        if self.image_size < 16 || smallest < 4.0 {
            return Err(Error::Config(format!(
                "image size {} too small: lesions would shrink to {smallest:.1} px",
                self.image_size
            )));
        }
        if self.patients_per_category > 0 && self.frames_per_patient == 0 {
            return Err(Error::Config("patients need at least one frame".into()));
        }
        Ok(())
    }
}

/// What gets painted inside an object's box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stamp {
    Bulge,
    Blood,
    Crater,
    Bubbles,
    Speckle,
    Clump,
    Villi,
}

impl Stamp {
    fn label(self) -> ClassLabel {
        match self {
            Stamp::Bulge => ClassLabel::SpaceOccupying,
            Stamp::Blood => ClassLabel::Bleeding,
            Stamp::Crater => ClassLabel::Ulcer,
            Stamp::Bubbles => ClassLabel::Bubble,
            Stamp::Speckle | Stamp::Clump => ClassLabel::Residues,
            Stamp::Villi => ClassLabel::Normal,
        }
    }
}

/// Side lengths `(w, h)` in pixels at the configured image size.
fn sample_size(dist: SizeDist, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let side = LogNormal::new(dist.median.ln(), dist.log_sigma)
        .expect("valid log-normal")
        .sample(rng)
        * cfg.scale();
    let aspect = Normal::new(0.0, cfg.aspect_log_sigma).expect("valid normal").sample(rng);
    let max_side = 2.0 * cfg.fov_radius() * 0.7;
    let w = (side * aspect.exp()).clamp(3.0, max_side);
    let h = (side * (-aspect).exp()).clamp(3.0, max_side);
    (w, h)
}

/// Integer box of size about `(w, h)` whose center lies well inside the
/// field of view and whose extent stays inside its bounding square.
fn place_box(w: f64, h: f64, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> BBox {
    let c = cfg.image_size as f64 / 2.0;
    let reach = (cfg.fov_radius() - 0.35 * w.max(h)).max(1.0);
    let (cx, cy) = loop {
        let x = rng.random_range(-reach..reach);
        let y = rng.random_range(-reach..reach);
        if x * x + y * y <= reach * reach {
            break (c + x, c + y);
        }
    };
    let (lo, hi) = cfg.fov_square();
    let x0 = (cx - w / 2.0).round().clamp(lo, hi - 2.0);
    let y0 = (cy - h / 2.0).round().clamp(lo, hi - 2.0);
    let x1 = (x0 + w.round()).clamp(x0 + 2.0, hi);
    let y1 = (y0 + h.round()).clamp(y0 + 2.0, hi);
    BBox { x_min: x0, y_min: y0, x_max: x1, y_max: y1 }
}

/// One space-occupying box drawn exactly as the generator draws them.
pub fn sample_lesion_box(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> BBox {
    let (w, h) = sample_size(cfg.lesion_size, cfg, rng);
    place_box(w, h, cfg, rng)
}

struct Canvas {
    size: usize,
    px: Vec<[f64; 3]>,
}

fn lerp(a: [f64; 3], b: [u8; 3], t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [0, 1, 2].map(|c| a[c] + (b[c] as f64 - a[c]) * t)
}

impl Canvas {
    fn mucosa(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let size = cfg.image_size;
        let s = size as f64;
        let jitter: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(-12.0..12.0));
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.5..2.5),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.03..0.08),
                )
            })
            .collect();
        let noise = Normal::new(0.0, 3.0).expect("valid normal");
        let mut px = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let (u, v) = (x as f64 / s, y as f64 / s);
                let shade = 1.0
                    + waves
                        .iter()
                        .map(|&(f, dir, ph, amp)| amp * (2.0 * PI * f * (u * dir.cos() + v * dir.sin()) + ph).sin())
                        .sum::<f64>();
                px.push([0, 1, 2].map(|c| (cfg.recipes.mucosa[c] as f64 + jitter[c]) * shade + noise.sample(rng)));
            }
        }
        Self { size, px }
    }

    fn at(&mut self, x: usize, y: usize) -> &mut [f64; 3] {
        &mut self.px[y * self.size + x]
    }

    /// Calls `f(pixel, u, v)` for every pixel of `b`, with `(u, v)` the
    /// pixel-center offset from the box center normalized to `[-1, 1]`.
    fn each(&mut self, b: &BBox, mut f: impl FnMut(&mut [f64; 3], f64, f64)) {
        let (cx, cy) = b.center();
        let (hw, hh) = (b.width() / 2.0, b.height() / 2.0);
        for y in b.y_min as usize..b.y_max as usize {
            for x in b.x_min as usize..b.x_max as usize {
                let u = (x as f64 + 0.5 - cx) / hw;
                let v = (y as f64 + 0.5 - cy) / hh;
                f(self.at(x, y), u, v);
            }
        }
    }

    fn stamp(&mut self, stamp: Stamp, b: &BBox, cfg: &SynthConfig, rng: &mut ChaCha8Rng) {
        let r = &cfg.recipes;
        match stamp {
            Stamp::Bulge => {
                let (hx, hy) = (rng.random_range(-0.45..-0.2), rng.random_range(-0.45..-0.2));
                self.each(b, |p, u, v| {
                    let rr = u * u + v * v;
                    if rr >= 1.0 {
                        return;
                    }
                    let dome = (1.0 - rr).sqrt();
                    let mut q = lerp(*p, r.bulge, 0.55 + 0.4 * dome);
                    q = q.map(|c| c * (0.8 + 0.3 * dome));
                    if rr > 0.85 {
                        q = q.map(|c| c * 0.85);
                    }
                    let spec = (u - hx).powi(2) + (v - hy).powi(2);
                    if spec < 0.05 {
                        q = lerp(q, [255, 255, 255], 0.8);
                    }
                    *p = q;
                });
            }
            Stamp::Clump => {
                self.each(b, |p, u, v| {
                    let rr = u * u + v * v;
                    if rr >= 1.0 {
                        return;
                    }
                    let dome = (1.0 - rr).sqrt();
                    let mut q = lerp(*p, r.residue, 0.5 + 0.4 * dome);
                    q = q.map(|c| c * (0.8 + 0.3 * dome));
                    *p = q;
                });
                let dots = (b.area() * 0.2) as usize;
                self.speckle(b, dots, r.residue, 0.55, rng);
            }
            Stamp::Blood => {
                let (p1, p2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
                self.each(b, |p, u, v| {
                    let rho = (u * u + v * v).sqrt();
                    let theta = v.atan2(u);
                    let edge = 0.85 + 0.1 * (3.0 * theta + p1).sin() + 0.05 * (5.0 * theta + p2).sin();
                    if rho < edge {
                        let soft = ((edge - rho) / 0.15).min(1.0);
                        *p = lerp(*p, r.blood, 0.85 * soft);
                    }
                });
            }
            Stamp::Crater => {
                self.each(b, |p, u, v| {
                    let rr = u * u + v * v;
                    if rr < 0.45 {
                        *p = lerp(*p, r.ulcer_floor, 0.85);
                    } else if rr < 1.0 {
                        *p = lerp(*p, r.ulcer_rim, 0.6);
                    }
                });
            }
            Stamp::Bubbles => {
                let count = rng.random_range(3..=6);
                let min_side = b.width().min(b.height());
                for _ in 0..count {
                    let rad = rng.random_range(0.15..0.3) * min_side;
                    let cx = rng.random_range(b.x_min + rad..=b.x_max - rad);
                    let cy = rng.random_range(b.y_min + rad..=b.y_max - rad);
                    let circle = BBox { x_min: (cx - rad).floor(), y_min: (cy - rad).floor(), x_max: (cx + rad).ceil(), y_max: (cy + rad).ceil() };
                    self.each(&circle, |p, u, v| {
                        let d = (u * u + v * v).sqrt() * rad;
                        if d > rad {
                            return;
                        }
                        if d > rad - 1.0 {
                            *p = lerp(*p, r.bubble, 0.7);
                        } else {
                            *p = lerp(*p, r.bubble, 0.2);
                        }
                        if (u + 0.4).powi(2) + (v + 0.4).powi(2) < 0.06 {
                            *p = lerp(*p, [255, 255, 255], 0.9);
                        }
                    });
                }
            }
            Stamp::Speckle => {
                self.each(b, |p, u, v| {
                    if u * u + v * v < 1.0 {
                        *p = lerp(*p, r.residue, 0.2);
                    }
                });
                let dots = (b.area() * 0.3) as usize;
                self.speckle(b, dots, r.residue, 0.8, rng);
            }
            Stamp::Villi => {
                let angle = rng.random_range(0.0..PI);
                let period = (12.0 * cfg.scale()).max(2.5);
                let (x0, y0) = (b.x_min, b.y_min);
                let (w, h) = (b.width(), b.height());
                self.each(b, |p, u, v| {
                    let (x, y) = (x0 + (u + 1.0) * w / 2.0, y0 + (v + 1.0) * h / 2.0);
                    let wave = (2.0 * PI * (x * angle.cos() + y * angle.sin()) / period).sin();
                    let q = lerp(*p, r.villi, 0.35);
                    *p = q.map(|c| c * (1.0 + 0.12 * wave));
                });
            }
        }
    }

    fn speckle(&mut self, b: &BBox, dots: usize, color: [u8; 3], strength: f64, rng: &mut ChaCha8Rng) {
        let (cx, cy) = b.center();
        let (hw, hh) = (b.width() / 2.0, b.height() / 2.0);
        for _ in 0..dots {
            let x = rng.random_range(b.x_min..b.x_max);
            let y = rng.random_range(b.y_min..b.y_max);
            let (u, v) = ((x - cx) / hw, (y - cy) / hh);
            if u * u + v * v < 1.0 {
                let dark = color.map(|c| (c as f64 * rng.random_range(0.55..0.9)) as u8);
                let p = self.at(x as usize, y as usize);
                *p = lerp(*p, dark, strength);
            }
        }
    }

    fn finish(self, cfg: &SynthConfig) -> RgbImage {
        let s = self.size as f64;
        let radius = cfg.fov_radius();
        let mut img = RgbImage::new(self.size as u32, self.size as u32);
        for (i, p) in self.px.into_iter().enumerate() {
            let (x, y) = ((i % self.size) as f64 + 0.5, (i / self.size) as f64 + 0.5);
            let r = ((x - s / 2.0).powi(2) + (y - s / 2.0).powi(2)).sqrt() / radius;
            let q = if r > 1.0 {
                [0u8; 3]
            } else {
                let vignette = 1.0 - 0.35 * r * r;
                p.map(|c| (c * vignette).round().clamp(0.0, 255.0) as u8)
            };
            img.put_pixel((i % self.size) as u32, (i / self.size) as u32, Rgb(q));
        }
        img
    }
}

fn try_place(
    stamp: Stamp,
    dist: SizeDist,
    placed: &mut Vec<(Stamp, BBox)>,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    attempts: usize,
) -> bool {
    for _ in 0..attempts {
        let (w, h) = sample_size(dist, cfg, rng);
        let b = place_box(w, h, cfg, rng);
        if placed.iter().all(|(_, o)| o.intersection_area(&b.expand(0.1)) == 0.0) {
            placed.push((stamp, b));
            return true;
        }
    }
    false
}

fn generate_frame(
    cfg: &SynthConfig,
    label: PatientLabel,
    force_positive: bool,
    frame_id: String,
    patient_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<AnnotatedFrame> {
    let mut placed: Vec<(Stamp, BBox)> = Vec::new();
    match label {
        PatientLabel::Occupant => {
            if force_positive || rng.random_bool(cfg.positive_frame_fraction) {
                let count = if rng.random_bool(0.1) { 2 } else { 1 };
                for i in 0..count {
                    let placed_ok = try_place(Stamp::Bulge, cfg.lesion_size, &mut placed, cfg, rng, 1000);
                    if i == 0 && !placed_ok {
                        return Err(Error::Config(format!("could not place a lesion in {frame_id}")));
                    }
                }
            }
        }
        PatientLabel::NonOccupant => {
            if rng.random_bool(cfg.finding_frame_fraction) {
                let stamp = if rng.random_bool(0.5) { Stamp::Blood } else { Stamp::Crater };
                try_place(stamp, cfg.finding_size, &mut placed, cfg, rng, 50);
            }
        }
        PatientLabel::Normal => {
            let (lo, hi) = cfg.texture_patches;
            for _ in 0..rng.random_range(lo..=hi) {
                try_place(Stamp::Villi, cfg.texture_size, &mut placed, cfg, rng, 50);
            }
        }
    }
    if rng.random_bool(cfg.redundancy_fraction) {
        for _ in 0..rng.random_range(1..=2) {
            let stamp = if rng.random_bool(0.5) { Stamp::Bubbles } else { Stamp::Speckle };
            try_place(stamp, cfg.redundancy_size, &mut placed, cfg, rng, 50);
        }
    }
    if rng.random_bool(cfg.hard_negative_fraction) {
        try_place(Stamp::Clump, cfg.lesion_size, &mut placed, cfg, rng, 50);
    }

    let mut canvas = Canvas::mucosa(cfg, rng);
    for (stamp, b) in &placed {
        canvas.stamp(*stamp, b, cfg, rng);
    }
    Ok(AnnotatedFrame {
        frame_id,
        patient_id: patient_id.to_string(),
        image: canvas.finish(cfg),
        objects: placed
            .into_iter()
            .map(|(stamp, bbox)| Object { bbox, label: stamp.label() })
            .collect(),
    })
}

fn generate_patient(cfg: &SynthConfig, label: PatientLabel, category: usize, index: usize) -> Result<PatientSequence> {
    let mut rng = stream_rng(cfg.seed, &[category as u64, index as u64]);
    let patient_id = format!("{}_{index:02}", label.name());
    let forced = rng.random_range(0..cfg.frames_per_patient);
    let frames = (0..cfg.frames_per_patient)
        .map(|f| {
            let frame_id = format!("{patient_id}_f{f:03}");
            generate_frame(cfg, label, f == forced, frame_id, &patient_id, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatientSequence { patient_id, label, frames })
}

/// Generates `patients_per_category` patients for each of the occupant,
/// non-occupant and normal categories, in that order. Patients are built in
/// parallel from independent derived seeds.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<PatientSequence>> {
    cfg.validate()?;
    let jobs: Vec<(usize, PatientLabel, usize)> = PatientLabel::ALL
        .iter()
        .enumerate()
        .flat_map(|(c, &l)| (0..cfg.patients_per_category).map(move |i| (c, l, i)))
        .collect();
    jobs.into_par_iter()
        .map(|(c, l, i)| generate_patient(cfg, l, c, i))
        .collect()
}
