//! Synthetic ultrasound-like sequences with known ground truth.
//!
//! A frame is a sector ("cone") of temporally varying speckle on a static
//! dark background. Burned-in text blocks are static; an optional EKG trace
//! scrolls along the bottom of the image. Because only the cone and the
//! EKG change between frames, the motion pipeline in [`crate::maskgen`]
//! sees the same structure it sees on real clips.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maskgen::BinaryMask;
use crate::sequence_io::{
    write_frame, write_manifest, DatasetManifest, Frame, FrameSequence, ManifestEntry, PixelScale,
    SeedRecord, Split, MANIFEST_FILE, TRUTH_MASK_FILE,
};

pub const TEXT_MASK_FILE: &str = "text_mask.png";
pub const EKG_MASK_FILE: &str = "ekg_mask.png";
pub const PARAMS_FILE: &str = "synth_params.json";

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub image_size: (usize, usize),
    pub cone_apex: (f64, f64),
    /// Degrees.
    pub cone_half_angle: f64,
    pub cone_radius: f64,
    /// Degrees; 0 points the cone straight down.
    pub rotation: f64,
    pub speckle_amplitude: f64,
    /// Share of the speckle that is redrawn every frame.
    pub motion_amplitude: f64,
    pub n_frames: usize,
    pub text_regions: Vec<Rect>,
    pub ekg_enabled: bool,
    /// Horizontal extent of the EKG strip as fractions of the width.
    #[serde(default = "default_ekg_span")]
    pub ekg_span: (f64, f64),
    pub occlusion: Option<Rect>,
    /// Dark, nearly motionless regions inside the cone (anechoic areas,
    /// acoustic shadows). They stay part of the truth mask.
    #[serde(default)]
    pub shadows: Vec<Shadow>,
    /// Overall brightness of the cone.
    #[serde(default = "default_gain")]
    pub gain: f64,
}

/// Disc in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Shadow {
    fn contains(&self, px: f64, py: f64) -> bool {
        (px - self.cx).hypot(py - self.cy) <= self.radius
    }
}

const SHADOW_GAIN: f64 = 0.1;

fn default_gain() -> f64 {
    1.0
}

fn default_ekg_span() -> (f64, f64) {
    (0.0, 1.0)
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            image_size: (96, 96),
            cone_apex: (48.0, 6.0),
            cone_half_angle: 35.0,
            cone_radius: 80.0,
            rotation: 0.0,
            speckle_amplitude: 0.5,
            motion_amplitude: 0.8,
            n_frames: 12,
            text_regions: vec![
                Rect { x: 2, y: 2, w: 20, h: 8 },
                Rect { x: 72, y: 2, w: 22, h: 8 },
            ],
            ekg_enabled: false,
            ekg_span: default_ekg_span(),
            occlusion: None,
            shadows: Vec::new(),
            gain: 1.0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.image_size;
        if w == 0 || h == 0 {
            return Err(Error::invalid("image size must be non-zero"));
        }
        if self.cone_radius <= 0.0 || self.cone_half_angle <= 0.0 {
            return Err(Error::invalid("degenerate cone sector (radius or half-angle is 0)"));
        }
        if self.cone_half_angle >= 90.0 {
            return Err(Error::invalid("cone half-angle must be below 90 degrees"));
        }
        if self.n_frames < 2 {
            return Err(Error::invalid("a sequence needs at least 2 frames"));
        }
        for (name, v) in [
            ("speckle_amplitude", self.speckle_amplitude),
            ("motion_amplitude", self.motion_amplitude),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1]")));
            }
        }
        let (a, b) = self.ekg_span;
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::invalid("ekg_span must satisfy 0 <= start < end <= 1"));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::invalid("gain must be positive"));
        }
        Ok(())
    }

    fn axis(&self) -> (f64, f64) {
        let t = self.rotation.to_radians();
        (-t.sin(), t.cos())
    }

    /// Distance from the apex relative to the radius when `(x, y)` lies in
    /// the sector, ignoring occlusion.
    fn sector_depth(&self, px: f64, py: f64) -> Option<f64> {
        let (dx, dy) = (px - self.cone_apex.0, py - self.cone_apex.1);
        let r = dx.hypot(dy);
        if r > self.cone_radius {
            return None;
        }
        if r == 0.0 {
            return Some(0.0);
        }
        let (ax, ay) = self.axis();
        let cos = (dx * ax + dy * ay) / r;
        (cos >= self.cone_half_angle.to_radians().cos()).then_some(r / self.cone_radius)
    }

    /// Pixel (x, y) belongs to the cone: its center is in the sector and
    /// outside the occlusion.
    pub fn in_cone(&self, x: usize, y: usize) -> bool {
        if self.occlusion.is_some_and(|o| o.contains(x, y)) {
            return false;
        }
        self.sector_depth(x as f64 + 0.5, y as f64 + 0.5).is_some()
    }

    /// Ground-truth cone mask; depends on geometry fields only.
    pub fn truth_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(self.image_size.0, self.image_size.1, |x, y| self.in_cone(x, y))
    }

    /// Closed-form sector area in pixels, `r² · half_angle` (the sector
    /// spans twice the half-angle).
    pub fn sector_area(&self) -> f64 {
        self.cone_radius * self.cone_radius * self.cone_half_angle.to_radians()
    }

    pub fn text_mask(&self) -> BinaryMask {
        BinaryMask::from_fn(self.image_size.0, self.image_size.1, |x, y| {
            self.text_regions.iter().any(|r| r.contains(x, y))
        })
    }

    fn ekg_row(&self, x: usize, frame: usize) -> usize {
        let (_, h) = self.image_size;
        let baseline = h.saturating_sub(6) as f64;
        let period = 24.0;
        let phase = ((x + frame * EKG_SHIFT) as f64 % period) / period;
        // Flat line with a sharp QRS-like spike and a low T bump.
        let lift = if phase < 0.08 {
            phase / 0.08 * 4.0
        } else if phase < 0.16 {
            4.0 - (phase - 0.08) / 0.08 * 6.0
        } else if phase < 0.22 {
            -2.0 + (phase - 0.16) / 0.06 * 2.0
        } else if (0.4..0.6).contains(&phase) {
            1.5 * ((phase - 0.4) / 0.2 * PI).sin()
        } else {
            0.0
        };
        (baseline - lift).round().clamp(0.0, (h - 1) as f64) as usize
    }

    fn ekg_pixels(&self, frame: usize) -> Vec<(usize, usize)> {
        let (w, _) = self.image_size;
        let x0 = (self.ekg_span.0 * w as f64).round() as usize;
        let x1 = ((self.ekg_span.1 * w as f64).round() as usize).clamp(x0 + 1, w);
        let mut out = Vec::new();
        let mut prev = self.ekg_row(x0, frame);
        for x in x0..x1 {
            let row = self.ekg_row(x, frame);
            let (lo, hi) = (row.min(prev), row.max(prev));
            for y in lo..=hi {
                out.push((x, y));
            }
            prev = row;
        }
        out
    }
}

const EKG_SHIFT: usize = 3;
const EKG_INTENSITY: f64 = 235.0;

/// Pixels where clutter was drawn on top of the cone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub text_cone_pixels: usize,
    pub ekg_cone_pixels: usize,
}

#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub sequence: FrameSequence,
    pub truth: BinaryMask,
    /// Burned-in text (the sensitive region for de-identification).
    pub text_mask: BinaryMask,
    /// Union of EKG pixels over all frames.
    pub ekg_mask: BinaryMask,
    pub overlap: OverlapReport,
}

/// Renders a sequence; identical `(params, seed)` give identical output.
pub fn generate_sequence(params: &SynthParams, seed: u64) -> Result<SynthSequence> {
    params.validate()?;
    let (w, h) = params.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = params.truth_mask();
    let text_mask = params.text_mask();

    let depth: Vec<Option<f64>> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if truth.get(x, y) {
                params.sector_depth(x as f64 + 0.5, y as f64 + 0.5)
            } else {
                None
            }
        })
        .collect();
    let shade: Vec<f64> = (0..w * h)
        .map(|i| {
            let (px, py) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            if params.shadows.iter().any(|s| s.contains(px, py)) {
                SHADOW_GAIN
            } else {
                1.0
            }
        })
        .collect();
    let static_speckle: Vec<f64> = (0..w * h).map(|_| rng.gen::<f64>()).collect();
    let background: Vec<f64> = (0..w * h).map(|_| 6.0 + (rng.gen::<f64>() * 10.0).floor()).collect();
    // Glyph cells: 4x6 strokes on a 6x8 grid, each cell present with p=0.7.
    let text_layer: Vec<Option<f64>> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let region = params.text_regions.iter().find(|r| r.contains(x, y))?;
            let (cx, cy) = ((x - region.x) / 6, (y - region.y) / 8);
            let (ix, iy) = ((x - region.x) % 6, (y - region.y) % 8);
            let glyph_on = glyph_bit(seed, region, cx, cy) && ix < 4 && iy < 6;
            let dither = rng.gen::<f64>();
            Some(if glyph_on {
                (175.0 + 80.0 * dither).floor()
            } else {
                (20.0 + 25.0 * dither).floor()
            })
        })
        .collect();

    let mut ekg_mask = BinaryMask::empty(w, h);
    let mut overlap = OverlapReport {
        text_cone_pixels: text_mask.intersection(&truth)?.count(),
        ekg_cone_pixels: 0,
    };
    let amp = params.speckle_amplitude;
    let motion = params.motion_amplitude;
    let mut frames = Vec::with_capacity(params.n_frames);
    for t in 0..params.n_frames {
        let mut px = Vec::with_capacity(w * h);
        for i in 0..w * h {
            let fresh: f64 = rng.gen();
            let v = if let Some(text) = text_layer[i] {
                text
            } else if let Some(d) = depth[i] {
                let s = (1.0 - motion) * static_speckle[i] + motion * fresh;
                let base = params.gain * (75.0 + 125.0 * (1.0 - d)) * shade[i];
                (base * (1.0 + amp * (2.0 * s - 1.0))).round().clamp(0.0, 255.0)
            } else if params.occlusion.is_some_and(|o| o.contains(i % w, i / w)) {
                0.0
            } else {
                background[i]
            };
            px.push(v);
        }
        if params.ekg_enabled {
            for (x, y) in params.ekg_pixels(t) {
                px[y * w + x] = EKG_INTENSITY;
                ekg_mask.set(x, y, true);
            }
        }
        frames.push(Frame::from_raw(w, h, px, PixelScale::Byte));
    }
    overlap.ekg_cone_pixels = ekg_mask.intersection(&truth)?.count();
    Ok(SynthSequence {
        sequence: FrameSequence::new(format!("synth_{seed}"), frames)?,
        truth,
        text_mask,
        ekg_mask,
        overlap,
    })
}

fn glyph_bit(seed: u64, region: &Rect, cx: usize, cy: usize) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ ((region.x as u64) << 40) ^ ((region.y as u64) << 24) ^ ((cx as u64) << 8) ^ cy as u64,
    );
    rng.gen_bool(0.7)
}

/// Seeded recipe for a desk-scale corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecipe {
    pub sequences: usize,
    pub seed: u64,
    /// Candidate native frame sizes.
    pub sizes: Vec<(usize, usize)>,
    pub frames: (usize, usize),
    pub ekg_probability: f64,
    pub occlusion_probability: f64,
    pub low_motion_probability: f64,
    /// Each sequence gets 0..=max_shadows dark regions in the cone.
    #[serde(default)]
    pub max_shadows: usize,
}

impl Default for CorpusRecipe {
    /// 72 sequences: 60 for the training pool plus 12 for the
    /// representative test set.
    fn default() -> Self {
        CorpusRecipe {
            sequences: 72,
            seed: 7,
            sizes: vec![(96, 96), (112, 96), (104, 88), (96, 80)],
            frames: (10, 14),
            ekg_probability: 0.15,
            occlusion_probability: 0.15,
            low_motion_probability: 0.1,
            max_shadows: 3,
        }
    }
}

impl CorpusRecipe {
    pub fn sequence_id(index: usize) -> String {
        format!("seq_{index:03}")
    }

    /// Parameters and render seed of sequence `index`.
    pub fn params(&self, index: usize) -> (SynthParams, u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64);
        let (w, h) = self.sizes[rng.gen_range(0..self.sizes.len())];
        let (wf, hf) = (w as f64, h as f64);
        let apex = (wf / 2.0 + rng.gen_range(-0.08..0.08) * wf, rng.gen_range(2.0..0.1 * hf));
        let rotation = rng.gen_range(-12.0..12.0);
        let half_angle = rng.gen_range(22.0..42.0);
        let ekg = rng.gen_bool(self.ekg_probability);
        let mut radius = rng.gen_range(0.5..0.9) * hf;
        if ekg {
            // Keep the cone clear of the trace band.
            radius = radius.min(hf - 14.0 - apex.1);
        }
        // The strip sits under the cone and covers about half the width.
        let centre = apex.0 / wf;
        let half = rng.gen_range(0.2..0.3);
        let ekg_span = ((centre - half).max(0.0), (centre + half).min(1.0));
        let low_motion = rng.gen_bool(self.low_motion_probability);
        let motion = if low_motion {
            rng.gen_range(0.05..0.15)
        } else {
            rng.gen_range(0.5..1.0)
        };
        let speckle = rng.gen_range(0.3..0.8);
        let gain = rng.gen_range(0.7..1.2);
        let n_frames = rng.gen_range(self.frames.0..=self.frames.1);
        let mut params = SynthParams {
            image_size: (w, h),
            cone_apex: apex,
            cone_half_angle: half_angle,
            cone_radius: radius,
            rotation,
            speckle_amplitude: speckle,
            motion_amplitude: motion,
            n_frames,
            text_regions: Vec::new(),
            ekg_enabled: ekg,
            ekg_span,
            occlusion: None,
            shadows: Vec::new(),
            gain,
        };
        if rng.gen_bool(self.occlusion_probability) {
            let ow = rng.gen_range(8..w / 4);
            let x = if rng.gen_bool(0.5) { 0 } else { w - ow };
            params.occlusion = Some(Rect { x, y: 0, w: ow, h });
        }
        let (ax, ay) = params.axis();
        for _ in 0..rng.gen_range(0..=self.max_shadows) {
            // Polar position inside the sector; some discs reach the rim.
            let along = rng.gen_range(0.3..0.95) * radius;
            let angle = rng.gen_range(-1.0..1.0) * half_angle.to_radians();
            let (c, s) = (angle.cos(), angle.sin());
            let (dx, dy) = (ax * c - ay * s, ax * s + ay * c);
            params.shadows.push(Shadow {
                cx: apex.0 + along * dx,
                cy: apex.1 + along * dy,
                radius: rng.gen_range(0.08..0.18) * radius,
            });
        }
        let truth = params.truth_mask();
        let n_text = rng.gen_range(1..=3);
        let mut corners = vec![(0, 0), (1, 0), (0, 1), (1, 1)];
        for _ in 0..n_text {
            let (cx, cy) = corners.swap_remove(rng.gen_range(0..corners.len()));
            let tw = rng.gen_range(14..24);
            let th = rng.gen_range(6..10);
            let x = if cx == 0 { rng.gen_range(1..4) } else { w - tw - rng.gen_range(1..4) };
            let y = if cy == 0 {
                rng.gen_range(1..4)
            } else if ekg {
                h - 14 - th
            } else {
                h - th - rng.gen_range(1..4)
            };
            let rect = Rect { x, y, w: tw, h: th };
            let clashes = (rect.y..rect.y + rect.h)
                .any(|yy| (rect.x..rect.x + rect.w).any(|xx| truth.get(xx, yy)));
            if !clashes {
                params.text_regions.push(rect);
            }
        }
        let render_seed = rng.gen();
        (params, render_seed)
    }
}

/// Writes `recipe` under `root` in the dataset layout plus `truth_mask.png`,
/// `text_mask.png`, `ekg_mask.png` and `synth_params.json` per sequence,
/// and a manifest with every entry unsorted.
pub fn write_corpus(root: &Path, recipe: &CorpusRecipe) -> Result<DatasetManifest> {
    if recipe.sequences == 0 || recipe.sizes.is_empty() {
        return Err(Error::invalid("corpus recipe needs at least one sequence and one frame size"));
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut entries = Vec::with_capacity(recipe.sequences);
    for index in 0..recipe.sequences {
        let id = CorpusRecipe::sequence_id(index);
        let (params, seed) = recipe.params(index);
        let synth = generate_sequence(&params, seed)?;
        let dir = root.join(&id);
        write_synth_sequence(&dir, &params, &synth)?;
        entries.push(ManifestEntry {
            sequence_id: id.clone(),
            path: id.into(),
            frame_count: params.n_frames,
            split: Split::Unsorted,
        });
    }
    let manifest = DatasetManifest {
        entries,
        seed_log: vec![SeedRecord {
            purpose: "synth corpus".into(),
            seed: recipe.seed,
        }],
    };
    write_manifest(&manifest, &root.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn write_synth_sequence(dir: &Path, params: &SynthParams, synth: &SynthSequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in synth.sequence.frames().iter().enumerate() {
        write_frame(&dir.join(format!("frame_{i:03}.png")), frame)?;
    }
    synth.truth.write_png(&dir.join(TRUTH_MASK_FILE))?;
    synth.text_mask.write_png(&dir.join(TEXT_MASK_FILE))?;
    synth.ekg_mask.write_png(&dir.join(EKG_MASK_FILE))?;
    let json = serde_json::to_string_pretty(params).map_err(|e| Error::malformed(dir, e))?;
    let path = dir.join(PARAMS_FILE);
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}

pub fn read_params(dir: &Path) -> Result<SynthParams> {
    let path = dir.join(PARAMS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))
}
