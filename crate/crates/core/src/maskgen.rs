//! Mask generation from frame motion.
//!
//! Consecutive frames are differenced, the differences averaged into one
//! motion image, and the motion image thresholded against its local mean.
//! Two optional stages follow: background holes are filled, then the
//! result is replaced by its filled convex hull. Each stage only adds
//! foreground, so `threshold ⊆ filled ⊆ hull` holds for every sequence.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence_io::{read_gray_png, write_gray_png, Frame, FrameSequence, PixelScale};

/// Row-major foreground/background raster.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryMask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "mask has {} bits, {}x{} needs {}",
                bits.len(),
                width,
                height,
                width * height
            )));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask { width, height, bits }
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    fn zip_with(&self, other: &BinaryMask, op: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| op(a, b)).collect(),
        })
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    /// Every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Nearest-neighbour resampling (pixel centers).
    pub fn resize_nearest(&self, out_w: usize, out_h: usize) -> BinaryMask {
        if self.dims() == (out_w, out_h) {
            return self.clone();
        }
        let xs: Vec<usize> = (0..out_w)
            .map(|x| (((x as f64 + 0.5) * self.width as f64 / out_w as f64) as usize).min(self.width - 1))
            .collect();
        BinaryMask::from_fn(out_w, out_h, |x, y| {
            let sy = (((y as f64 + 0.5) * self.height as f64 / out_h as f64) as usize).min(self.height - 1);
            self.get(xs[x], sy)
        })
    }

    /// 0 / 255 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    /// Values ≥ 128 are foreground.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        BinaryMask::new(width, height, bytes.iter().map(|&b| b >= 128).collect())
    }

    pub fn to_frame(&self) -> Frame {
        Frame::from_raw(
            self.width,
            self.height,
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            PixelScale::Unit,
        )
    }

    pub fn read_png(path: &Path) -> Result<Self> {
        let (w, h, bytes) = read_gray_png(path)?;
        BinaryMask::from_bytes(w, h, &bytes)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        write_gray_png(path, self.width, self.height, &self.to_bytes())
    }
}

/// Pipeline depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Threshold,
    #[serde(alias = "filled")]
    FilledThreshold,
    Hull,
}

impl MaskKind {
    pub const ALL: [MaskKind; 3] = [MaskKind::Threshold, MaskKind::FilledThreshold, MaskKind::Hull];

    /// Short name used in file names and CLI flags.
    pub fn short_name(self) -> &'static str {
        match self {
            MaskKind::Threshold => "threshold",
            MaskKind::FilledThreshold => "filled",
            MaskKind::Hull => "hull",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            MaskKind::Threshold => "Threshold",
            MaskKind::FilledThreshold => "Filled Threshold",
            MaskKind::Hull => "Hull",
        }
    }

    pub fn mask_file_name(self) -> String {
        format!("mask_{}.png", self.short_name())
    }
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(MaskKind::Threshold),
            "filled" | "filled_threshold" => Ok(MaskKind::FilledThreshold),
            "hull" => Ok(MaskKind::Hull),
            other => Err(Error::invalid(format!("unknown mask algorithm `{other}`"))),
        }
    }
}

pub const DEFAULT_BLOCK: usize = 51;
pub const DEFAULT_OFFSET: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskAlgorithm {
    pub kind: MaskKind,
    pub threshold_block: usize,
    pub threshold_offset: f64,
    #[serde(default)]
    pub hull_on_largest_component: bool,
}

impl MaskAlgorithm {
    pub fn new(kind: MaskKind) -> Self {
        MaskAlgorithm {
            kind,
            threshold_block: DEFAULT_BLOCK,
            threshold_offset: DEFAULT_OFFSET,
            hull_on_largest_component: false,
        }
    }

    pub fn with_threshold(mut self, block: usize, offset: f64) -> Self {
        self.threshold_block = block;
        self.threshold_offset = offset;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_block(self.threshold_block)?;
        if !self.threshold_offset.is_finite() {
            return Err(Error::invalid("threshold offset must be finite"));
        }
        Ok(())
    }
}

fn check_block(block: usize) -> Result<()> {
    if block < 3 || block % 2 == 0 {
        return Err(Error::invalid(format!(
            "threshold block must be odd and >= 3, got {block}"
        )));
    }
    Ok(())
}

/// `|frame[i+1] - frame[i]|` for each consecutive pair.
pub fn frame_differences(seq: &FrameSequence) -> Result<Vec<Frame>> {
    let frames = seq.frames();
    if frames.len() < 2 {
        return Err(Error::TooFewFrames {
            path: seq.id.clone().into(),
            found: frames.len(),
        });
    }
    Ok(frames
        .windows(2)
        .map(|pair| {
            let px = pair[0]
                .pixels()
                .iter()
                .zip(pair[1].pixels())
                .map(|(a, b)| (b - a).abs())
                .collect();
            Frame::from_raw(pair[0].width(), pair[0].height(), px, pair[0].scale())
        })
        .collect())
}

/// Per-pixel arithmetic mean, accumulated in frame order.
pub fn mean_image(frames: &[Frame]) -> Result<Frame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("mean of an empty frame list"))?;
    let mut acc = vec![0.0; first.pixels().len()];
    for f in frames {
        if f.dims() != first.dims() {
            return Err(Error::dims(first.dims(), f.dims()));
        }
        for (a, v) in acc.iter_mut().zip(f.pixels()) {
            *a += v;
        }
    }
    let n = frames.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(Frame::from_raw(first.width(), first.height(), acc, first.scale()))
}

/// Foreground where a pixel exceeds the mean of its `block`×`block`
/// neighbourhood (replicated borders) by more than `offset`.
pub fn adaptive_threshold(img: &Frame, block: usize, offset: f64) -> Result<BinaryMask> {
    check_block(block)?;
    let (w, h) = img.dims();
    let r = block / 2;
    let (pw, ph) = (w + 2 * r, h + 2 * r);
    // Summed-area table over the border-replicated image, one extra
    // leading row and column of zeros.
    let mut sat = vec![0.0f64; (pw + 1) * (ph + 1)];
    let src = img.pixels();
    for py in 0..ph {
        let sy = py.saturating_sub(r).min(h - 1);
        let mut row = 0.0;
        for px in 0..pw {
            let sx = px.saturating_sub(r).min(w - 1);
            row += src[sy * w + sx];
            sat[(py + 1) * (pw + 1) + px + 1] = sat[py * (pw + 1) + px + 1] + row;
        }
    }
    let n = (block * block) as f64;
    let mut bits = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            // Window in padded coordinates is [x, x+block) × [y, y+block).
            let sum = sat[(y + block) * (pw + 1) + x + block] - sat[y * (pw + 1) + x + block]
                - sat[(y + block) * (pw + 1) + x]
                + sat[y * (pw + 1) + x];
            bits.push(src[y * w + x] > sum / n + offset);
        }
    }
    Ok(BinaryMask { width: w, height: h, bits })
}

/// Converts background regions that are not 4-connected to the image
/// border into foreground.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    let seed = |x: usize, y: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<(usize, usize)>| {
        let i = y * w + x;
        if !mask.bits[i] && !outside[i] {
            outside[i] = true;
            queue.push_back((x, y));
        }
    };
    for x in 0..w {
        seed(x, 0, &mut outside, &mut queue);
        seed(x, h.saturating_sub(1), &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(0, y, &mut outside, &mut queue);
        seed(w.saturating_sub(1), y, &mut outside, &mut queue);
    }
    while let Some((x, y)) = queue.pop_front() {
        if x > 0 {
            seed(x - 1, y, &mut outside, &mut queue);
        }
        if x + 1 < w {
            seed(x + 1, y, &mut outside, &mut queue);
        }
        if y > 0 {
            seed(x, y - 1, &mut outside, &mut queue);
        }
        if y + 1 < h {
            seed(x, y + 1, &mut outside, &mut queue);
        }
    }
    BinaryMask {
        width: w,
        height: h,
        bits: outside.iter().map(|&o| !o).collect(),
    }
}

type Point = (i64, i64);

fn cross(o: Point, a: Point, b: Point) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; counter-clockwise, collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

fn inside_hull(hull: &[Point], p: Point) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            cross(a, b, p) == 0
                && p.0 >= a.0.min(b.0)
                && p.0 <= a.0.max(b.0)
                && p.1 >= a.1.min(b.1)
                && p.1 <= a.1.max(b.1)
        }
        n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0),
    }
}

fn foreground_points(mask: &BinaryMask) -> Vec<Point> {
    let w = mask.width;
    mask.bits
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| ((i % w) as i64, (i / w) as i64))
        .collect()
}

fn fill_hull(w: usize, h: usize, hull: &[Point]) -> BinaryMask {
    let mut out = BinaryMask::empty(w, h);
    if hull.is_empty() {
        return out;
    }
    let (min_x, max_x) = hull.iter().fold((i64::MAX, i64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (min_y, max_y) = hull.iter().fold((i64::MAX, i64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    for y in min_y..=max_y {
        for x in min_x..=max_x {
            if inside_hull(hull, (x, y)) {
                out.set(x as usize, y as usize, true);
            }
        }
    }
    out
}

/// Filled convex hull of all foreground pixel centers, boundary inclusive.
pub fn convex_hull_fill(mask: &BinaryMask) -> BinaryMask {
    let hull = convex_hull(&foreground_points(mask));
    fill_hull(mask.width, mask.height, &hull)
}

/// Largest 8-connected foreground component; ties keep the first found in
/// raster order.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut label = vec![0usize; w * h];
    let mut best: (usize, usize) = (0, 0); // (label, size)
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits[j] && label[j] == 0 {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    BinaryMask {
        width: w,
        height: h,
        bits: label.iter().map(|&l| l != 0 && l == best.0).collect(),
    }
}

/// Mask for the whole sequence (one mask serves every frame).
pub fn generate_mask(seq: &FrameSequence, algo: &MaskAlgorithm) -> Result<BinaryMask> {
    Ok(generate_stages(seq, algo)?.get(algo.kind).clone())
}

/// All three pipeline outputs from one pass.
#[derive(Debug, Clone)]
pub struct MaskStages {
    pub threshold: BinaryMask,
    pub filled: BinaryMask,
    pub hull: BinaryMask,
}

impl MaskStages {
    pub fn get(&self, kind: MaskKind) -> &BinaryMask {
        match kind {
            MaskKind::Threshold => &self.threshold,
            MaskKind::FilledThreshold => &self.filled,
            MaskKind::Hull => &self.hull,
        }
    }
}

/// Runs the pipeline once and keeps each stage. `algo.kind` is ignored.
pub fn generate_stages(seq: &FrameSequence, algo: &MaskAlgorithm) -> Result<MaskStages> {
    algo.validate()?;
    let motion = mean_image(&frame_differences(seq)?)?;
    let threshold = adaptive_threshold(&motion, algo.threshold_block, algo.threshold_offset)?;
    let filled = fill_holes(&threshold);
    let hull = if algo.hull_on_largest_component {
        // Union keeps the Threshold ⊆ Filled ⊆ Hull chain intact.
        convex_hull_fill(&largest_component(&filled)).union(&filled)?
    } else {
        convex_hull_fill(&filled)
    };
    Ok(MaskStages {
        threshold,
        filled,
        hull,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, v: f64) -> Frame {
        Frame::filled(w, h, v, PixelScale::Byte)
    }

    fn mask_from_rows(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        BinaryMask::from_fn(w, h, |x, y| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn differences_of_static_sequence_are_zero() {
        let seq = FrameSequence::new("s", vec![frame(4, 4, 9.0); 5]).unwrap();
        let diffs = frame_differences(&seq).unwrap();
        assert_eq!(diffs.len(), 4);
        assert!(diffs.iter().all(|d| d.pixels().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn differences_count_and_magnitude() {
        let seq = FrameSequence::new("s", vec![frame(3, 3, 1.0); 12]).unwrap();
        assert_eq!(frame_differences(&seq).unwrap().len(), 11);
        let seq = FrameSequence::new("s", vec![frame(3, 3, 10.0), frame(3, 3, 25.0)]).unwrap();
        let d = frame_differences(&seq).unwrap();
        assert_eq!(d.len(), 1);
        assert!(d[0].pixels().iter().all(|&v| v == 15.0));
    }

    #[test]
    fn mean_of_frames() {
        let one = frame(2, 2, 3.0);
        assert_eq!(mean_image(std::slice::from_ref(&one)).unwrap(), one);
        let m = mean_image(&[frame(2, 2, 0.0), frame(2, 2, 10.0)]).unwrap();
        assert!(m.pixels().iter().all(|&v| v == 5.0));
        assert!(mean_image(&[]).is_err());
        assert!(matches!(
            mean_image(&[frame(2, 2, 0.0), frame(3, 2, 0.0)]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn threshold_on_uniform_image() {
        let img = frame(9, 7, 50.0);
        assert!(adaptive_threshold(&img, 5, 2.0).unwrap().is_empty());
        assert_eq!(adaptive_threshold(&img, 5, -2.0).unwrap().count(), 63);
        assert!(adaptive_threshold(&img, 4, 0.0).is_err());
        assert!(adaptive_threshold(&img, 1, 0.0).is_err());
    }

    #[test]
    fn fills_the_canonical_hole() {
        let ring = mask_from_rows(&[".....", ".###.", ".#.#.", ".###.", "....."]);
        let filled = fill_holes(&ring);
        assert!(filled.get(2, 2));
        assert_eq!(filled.count(), 9);
        assert_eq!(fill_holes(&filled), filled);
    }

    #[test]
    fn c_shape_cavity_stays_open() {
        let c = mask_from_rows(&[".....", ".###.", ".#...", ".###.", "....."]);
        assert_eq!(fill_holes(&c), c);
    }

    #[test]
    fn diagonal_gap_does_not_leak() {
        // Background only touches the border diagonally: still a hole under
        // 4-connectivity.
        let m = mask_from_rows(&["###", "#.#", "###"]);
        assert!(fill_holes(&m).get(1, 1));
    }

    #[test]
    fn hull_of_rectangle_and_point() {
        let rect = BinaryMask::from_fn(8, 6, |x, y| (2..6).contains(&x) && (1..4).contains(&y));
        assert_eq!(convex_hull_fill(&rect), rect);
        let mut single = BinaryMask::empty(5, 5);
        single.set(3, 1, true);
        assert_eq!(convex_hull_fill(&single), single);
        assert!(convex_hull_fill(&BinaryMask::empty(4, 4)).is_empty());
    }

    #[test]
    fn hull_of_three_corners_is_triangle() {
        let mut m = BinaryMask::empty(6, 6);
        for (x, y) in [(0, 0), (4, 0), (0, 4)] {
            m.set(x, y, true);
        }
        let hull = convex_hull_fill(&m);
        assert_eq!(hull.count(), 15);
        for y in 0..6 {
            for x in 0..6 {
                assert_eq!(hull.get(x, y), x + y <= 4, "({x},{y})");
            }
        }
    }

    #[test]
    fn hull_of_collinear_points_is_segment() {
        let mut m = BinaryMask::empty(7, 7);
        m.set(1, 1, true);
        m.set(5, 5, true);
        let hull = convex_hull_fill(&m);
        assert_eq!(hull.count(), 5);
        assert!((1..=5).all(|i| hull.get(i, i)));
    }

    #[test]
    fn largest_component_picks_bigger_blob() {
        let m = mask_from_rows(&["##....", "##....", "......", "...###", "...###"]);
        let big = largest_component(&m);
        assert_eq!(big.count(), 6);
        assert!(big.get(4, 4) && !big.get(0, 0));
    }

    #[test]
    fn static_sequence_yields_empty_threshold_mask() {
        let seq = FrameSequence::new("s", vec![frame(20, 20, 80.0); 4]).unwrap();
        let algo = MaskAlgorithm::new(MaskKind::Threshold).with_threshold(5, 4.0);
        assert!(generate_mask(&seq, &algo).unwrap().is_empty());
    }

    #[test]
    fn mask_kind_parsing() {
        for k in MaskKind::ALL {
            assert_eq!(k.short_name().parse::<MaskKind>().unwrap(), k);
        }
        assert!("nope".parse::<MaskKind>().is_err());
        assert_eq!(MaskKind::Hull.mask_file_name(), "mask_hull.png");
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask::from_fn(7, 5, |x, y| (x * y) % 3 == 0);
        let p = dir.path().join("m.png");
        m.write_png(&p).unwrap();
        assert_eq!(BinaryMask::read_png(&p).unwrap(), m);
    }

    proptest::proptest! {
        #[test]
        fn fill_and_hull_are_extensive_and_idempotent(bits in proptest::collection::vec(proptest::bool::weighted(0.3), 12 * 10)) {
            let m = BinaryMask::new(12, 10, bits).unwrap();
            let f = fill_holes(&m);
            proptest::prop_assert!(m.is_subset_of(&f));
            proptest::prop_assert_eq!(fill_holes(&f), f.clone());
            let c = convex_hull_fill(&f);
            proptest::prop_assert!(f.is_subset_of(&c));
            proptest::prop_assert_eq!(convex_hull_fill(&c), c);
        }
    }
}
