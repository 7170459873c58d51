//! Frame sequences on disk.
//!
//! A dataset root holds one directory per sequence:
//!
//! ```text
//! <root>/manifest.json
//! <root>/<sequence_id>/frame_000.png
//! <root>/<sequence_id>/frame_001.png
//! <root>/<sequence_id>/truth_mask.png      (optional, 0 / 255)
//! ```
//!
//! Frames are ordered by file name, so zero-padded numeric names are
//! expected (`frame_000.png`, `frame_001.png`, ...).

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
pub const TRUTH_MASK_FILE: &str = "truth_mask.png";

/// Value range of a frame's pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelScale {
    /// 0..=255 intensity units.
    Byte,
    /// 0.0..=1.0.
    Unit,
}

impl PixelScale {
    pub fn max_value(self) -> f64 {
        match self {
            PixelScale::Byte => 255.0,
            PixelScale::Unit => 1.0,
        }
    }
}

/// Single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    scale: PixelScale,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, scale: PixelScale) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel buffer has {} values, {}x{} frame needs {}",
                pixels.len(),
                width,
                height,
                width * height
            )));
        }
        let max = scale.max_value();
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=max).contains(*v)) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, {max}]")));
        }
        Ok(Frame {
            width,
            height,
            pixels,
            scale,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64, scale: PixelScale) -> Self {
        Frame {
            width,
            height,
            pixels: vec![value; width * height],
            scale,
        }
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Frame::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b)).collect(),
            PixelScale::Byte,
        )
    }

    // Used by kernels that already guarantee the invariants.
    pub(crate) fn from_raw(width: usize, height: usize, pixels: Vec<f64>, scale: PixelScale) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        Frame {
            width,
            height,
            pixels,
            scale,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn scale(&self) -> PixelScale {
        self.scale
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Rescales to [0, 1].
    pub fn normalized(&self) -> Frame {
        match self.scale {
            PixelScale::Unit => self.clone(),
            PixelScale::Byte => Frame {
                width: self.width,
                height: self.height,
                pixels: self.pixels.iter().map(|v| v / 255.0).collect(),
                scale: PixelScale::Unit,
            },
        }
    }

    /// Rounds to the nearest byte value, for PNG output.
    pub fn to_bytes(&self) -> Vec<u8> {
        let factor = match self.scale {
            PixelScale::Byte => 1.0,
            PixelScale::Unit => 255.0,
        };
        self.pixels
            .iter()
            .map(|v| (v * factor).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// One ultrasound clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub id: String,
    frames: Vec<Frame>,
    pub source_size: (usize, usize),
}

impl FrameSequence {
    pub fn new(id: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        let id = id.into();
        if frames.len() < 2 {
            return Err(Error::TooFewFrames {
                path: PathBuf::from(&id),
                found: frames.len(),
            });
        }
        let (w, h) = frames[0].dims();
        if let Some(f) = frames.iter().find(|f| f.dims() != (w, h)) {
            return Err(Error::MixedDimensions {
                path: PathBuf::from(&id),
                expected_w: w,
                expected_h: h,
                found_w: f.width(),
                found_h: f.height(),
            });
        }
        Ok(FrameSequence {
            id,
            frames,
            source_size: (w, h),
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.source_size
    }
}

/// ITU-R 601 luma, rounded to the nearest integer.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Decodes any 8/16-bit PNG into a grayscale byte raster.
pub fn read_gray_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let decode_err = |e: &dyn std::fmt::Display| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| decode_err(&e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err(&"image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| decode_err(&e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let data = &buf[..info.buffer_size()];
    let stride = info.line_size;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(decode_err(&"unexpanded palette image")),
    };
    let mut gray = Vec::with_capacity(w * h);
    for row in data.chunks(stride).take(h) {
        for px in row[..w * channels].chunks_exact(channels) {
            gray.push(match channels {
                1 | 2 => px[0],
                _ => luma(px[0], px[1], px[2]),
            });
        }
    }
    Ok((w, h, gray))
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(bytes).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(())
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    let (w, h, bytes) = read_gray_png(path)?;
    Frame::from_bytes(w, h, &bytes)
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    write_gray_png(path, frame.width(), frame.height(), &frame.to_bytes())
}

/// Lists `frame_*.png` files in lexicographic order.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".png"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads `<dir>/frame_*.png` as a grayscale sequence named after the
/// directory.
pub fn load_sequence(dir: &Path) -> Result<FrameSequence> {
    let paths = frame_paths(dir)?;
    if paths.len() < 2 {
        return Err(Error::TooFewFrames {
            path: dir.to_path_buf(),
            found: paths.len(),
        });
    }
    let mut frames = Vec::with_capacity(paths.len());
    for path in &paths {
        let frame = read_frame(path)?;
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if first.dims() != frame.dims() {
                return Err(Error::MixedDimensions {
                    path: path.clone(),
                    expected_w: first.width(),
                    expected_h: first.height(),
                    found_w: frame.width(),
                    found_h: frame.height(),
                });
            }
        }
        frames.push(frame);
    }
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or_default()
        .to_string();
    FrameSequence::new(id, frames)
}

/// Bilinear resampling with half-pixel centers and clamped edges.
pub fn resize_bilinear(frame: &Frame, out_w: usize, out_h: usize) -> Result<Frame> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!("resize target {out_w}x{out_h} is empty")));
    }
    let (in_w, in_h) = frame.dims();
    if (in_w, in_h) == (out_w, out_h) {
        return Ok(frame.clone());
    }
    let sx = in_w as f64 / out_w as f64;
    let sy = in_h as f64 / out_h as f64;
    let src = frame.pixels();
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (in_h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let wy = fy - y0 as f64;
        for x in 0..out_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (in_w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * in_w + x0] * (1.0 - wx) + src[y0 * in_w + x1] * wx;
            let bottom = src[y1 * in_w + x0] * (1.0 - wx) + src[y1 * in_w + x1] * wx;
            out.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    Ok(Frame::from_raw(out_w, out_h, out, frame.scale()))
}

/// Role of a sequence in the method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Unsorted,
    TrainGood,
    Rejected,
    RepresentativeTest,
    BadMaskTest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sequence_id: String,
    /// Relative to the dataset root.
    pub path: PathBuf,
    pub frame_count: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub purpose: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed_log: Vec<SeedRecord>,
}

#[derive(Serialize, Deserialize)]
struct ManifestDocument {
    version: u32,
    #[serde(flatten)]
    manifest: DatasetManifest,
}

impl DatasetManifest {
    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.sequence_id == id)
    }

    pub fn entry_mut(&mut self, id: &str) -> Option<&mut ManifestEntry> {
        self.entries.iter_mut().find(|e| e.sequence_id == id)
    }

    pub fn ids_in(&self, split: Split) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.sequence_id.clone())
            .collect()
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.sequence_id.as_str()) {
                return Err(Error::DuplicateId(e.sequence_id.clone()));
            }
        }
        Ok(())
    }

    /// Builds a manifest from every sequence directory under `root`.
    pub fn scan(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::MissingDirectory(root.to_path_buf()));
        }
        let mut dirs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut entries = Vec::new();
        for dir in dirs {
            let count = frame_paths(&dir)?.len();
            if count == 0 {
                continue;
            }
            let id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            entries.push(ManifestEntry {
                path: PathBuf::from(&id),
                sequence_id: id,
                frame_count: count,
                split: Split::Unsorted,
            });
        }
        Ok(DatasetManifest {
            entries,
            seed_log: Vec::new(),
        })
    }
}

/// Writes `manifest` atomically (temp file + rename). Relative entry paths
/// are checked against the manifest's directory.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.check_unique()?;
    let base = path.parent().unwrap_or(Path::new("."));
    for e in &manifest.entries {
        let p = base.join(&e.path);
        if !p.exists() {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "manifest entry path missing"),
            ));
        }
    }
    let doc = ManifestDocument {
        version: MANIFEST_VERSION,
        manifest: manifest.clone(),
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::malformed(path, e))?;
    let dir = if base.as_os_str().is_empty() { Path::new(".") } else { base };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    tmp.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: ManifestDocument = serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))?;
    if doc.version != MANIFEST_VERSION {
        return Err(Error::malformed(
            path,
            format!("unsupported manifest version {}", doc.version),
        ));
    }
    doc.manifest.check_unique()?;
    Ok(doc.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_rgb_png(path: &Path, w: u32, h: u32, rgb: [u8; 3]) {
        let file = File::create(path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().unwrap();
        let data: Vec<u8> = (0..w * h).flat_map(|_| rgb).collect();
        writer.write_image_data(&data).unwrap();
    }

    #[test]
    fn loads_identical_white_frames() {
        let dir = tempfile::tempdir().unwrap();
        let seq_dir = dir.path().join("seq");
        fs::create_dir(&seq_dir).unwrap();
        for i in 0..3 {
            write_gray_png(&seq_dir.join(format!("frame_{i:03}.png")), 8, 8, &[255; 64]).unwrap();
        }
        let seq = load_sequence(&seq_dir).unwrap();
        assert_eq!(seq.id, "seq");
        assert_eq!(seq.len(), 3);
        assert!(seq.frames().iter().all(|f| f.pixels().iter().all(|&v| v == 255.0)));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_gray_png(&dir.path().join("frame_0.png"), 8, 8, &[0; 64]).unwrap();
        write_gray_png(&dir.path().join("frame_1.png"), 16, 16, &[0; 256]).unwrap();
        match load_sequence(dir.path()) {
            Err(Error::MixedDimensions { path, .. }) => assert!(path.ends_with("frame_1.png")),
            other => panic!("expected mixed dimensions, got {other:?}"),
        }
    }

    #[test]
    fn too_few_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        write_gray_png(&dir.path().join("frame_0.png"), 2, 2, &[0; 4]).unwrap();
        assert!(matches!(load_sequence(dir.path()), Err(Error::TooFewFrames { found: 1, .. })));
        assert!(matches!(
            load_sequence(&dir.path().join("nope")),
            Err(Error::MissingDirectory(_))
        ));
    }

    #[test]
    fn undecodable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        write_gray_png(&dir.path().join("frame_0.png"), 2, 2, &[0; 4]).unwrap();
        fs::write(dir.path().join("frame_1.png"), b"not a png").unwrap();
        match load_sequence(dir.path()) {
            Err(Error::Decode { path, .. }) => assert!(path.ends_with("frame_1.png")),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn rgb_red_converts_to_76() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("red.png");
        write_rgb_png(&p, 2, 2, [255, 0, 0]);
        let frame = read_frame(&p).unwrap();
        // round(0.299 * 255) = round(76.245)
        assert!(frame.pixels().iter().all(|&v| v == 76.0));
        assert_eq!(luma(255, 0, 0), 76);
    }

    #[test]
    fn gray_conversion_is_idempotent() {
        for v in 0..=255u8 {
            assert_eq!(luma(v, v, v), v);
        }
    }

    #[test]
    fn resize_constant_and_identity() {
        let f = Frame::filled(5, 3, 37.0, PixelScale::Byte);
        let r = resize_bilinear(&f, 11, 7).unwrap();
        assert_eq!(r.dims(), (11, 7));
        assert!(r.pixels().iter().all(|&v| (v - 37.0).abs() < 1e-12));

        let g = Frame::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], PixelScale::Byte).unwrap();
        assert_eq!(resize_bilinear(&g, 3, 2).unwrap(), g);
        assert!(resize_bilinear(&g, 0, 2).is_err());
    }

    #[test]
    fn resize_matches_per_pixel_reference() {
        // Independent reference: map each output center back to the source,
        // clamp, and blend the two neighbours.
        fn reference(src: &[f64], in_w: usize, out_w: usize) -> Vec<f64> {
            (0..out_w)
                .map(|x| {
                    let c = ((x as f64 + 0.5) * in_w as f64 / out_w as f64 - 0.5)
                        .max(0.0)
                        .min((in_w - 1) as f64);
                    let lo = c.floor() as usize;
                    let hi = (lo + 1).min(in_w - 1);
                    src[lo] + (src[hi] - src[lo]) * (c - lo as f64)
                })
                .collect()
        }
        let f = Frame::new(2, 1, vec![0.0, 100.0], PixelScale::Byte).unwrap();
        let r = resize_bilinear(&f, 4, 1).unwrap();
        let expected = reference(&[0.0, 100.0], 2, 4);
        assert_eq!(expected, vec![0.0, 25.0, 75.0, 100.0]);
        for (a, b) in r.pixels().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn sample_manifest(root: &Path) -> DatasetManifest {
        for id in ["a", "b"] {
            fs::create_dir_all(root.join(id)).unwrap();
        }
        DatasetManifest {
            entries: vec![
                ManifestEntry {
                    sequence_id: "a".into(),
                    path: "a".into(),
                    frame_count: 12,
                    split: Split::Unsorted,
                },
                ManifestEntry {
                    sequence_id: "b".into(),
                    path: "b".into(),
                    frame_count: 10,
                    split: Split::TrainGood,
                },
            ],
            seed_log: vec![SeedRecord {
                purpose: "testset".into(),
                seed: 7,
            }],
        }
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);

        let empty = DatasetManifest::default();
        write_manifest(&empty, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), empty);

        let m = sample_manifest(dir.path());
        write_manifest(&m, &path).unwrap();
        assert_eq!(load_manifest(&path).unwrap(), m);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"version\": 1"));
        assert!(text.contains("\"train_good\""));
    }

    #[test]
    fn manifest_duplicate_id_fails_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut m = sample_manifest(dir.path());
        m.entries[1].sequence_id = "a".into();
        assert!(matches!(write_manifest(&m, &path), Err(Error::DuplicateId(_))));
        let doc = ManifestDocument {
            version: 1,
            manifest: m,
        };
        fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn manifest_write_requires_existing_paths() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = sample_manifest(dir.path());
        m.entries[0].path = "missing".into();
        assert!(write_manifest(&m, &dir.path().join(MANIFEST_FILE)).is_err());
        assert!(load_manifest(&dir.path().join("absent.json")).is_err());
        fs::write(dir.path().join("bad.json"), "{ nope").unwrap();
        assert!(matches!(
            load_manifest(&dir.path().join("bad.json")),
            Err(Error::Malformed { .. })
        ));
    }

    proptest::proptest! {
        #[test]
        fn resize_stays_within_input_bounds(
            w in 1usize..8, h in 1usize..8, ow in 1usize..12, oh in 1usize..12,
            seed in proptest::collection::vec(0u8..=255, 64)
        ) {
            let px: Vec<f64> = (0..w * h).map(|i| f64::from(seed[i % seed.len()])).collect();
            let lo = px.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let f = Frame::new(w, h, px, PixelScale::Byte).unwrap();
            let r = resize_bilinear(&f, ow, oh).unwrap();
            for &v in r.pixels() {
                proptest::prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }

        #[test]
        fn manifest_round_trip_any_splits(splits in proptest::collection::vec(0u8..5, 0..6), seed in proptest::num::u64::ANY) {
            let dir = tempfile::tempdir().unwrap();
            let all = [Split::Unsorted, Split::TrainGood, Split::Rejected, Split::RepresentativeTest, Split::BadMaskTest];
            let entries = splits.iter().enumerate().map(|(i, s)| {
                let id = format!("seq_{i:03}");
                fs::create_dir_all(dir.path().join(&id)).unwrap();
                ManifestEntry { path: id.clone().into(), sequence_id: id, frame_count: i + 2, split: all[*s as usize] }
            }).collect();
            let m = DatasetManifest { entries, seed_log: vec![SeedRecord { purpose: "x".into(), seed }] };
            let path = dir.path().join(MANIFEST_FILE);
            write_manifest(&m, &path).unwrap();
            proptest::prop_assert_eq!(load_manifest(&path).unwrap(), m);
        }
    }
}
