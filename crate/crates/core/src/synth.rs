//! Deterministic synthetic coin benchmark with planted class glyphs.
//!
//! Each sample is an (obverse, reverse) pair of grayscale discs on black.
//! The obverse carries the parent glyph at the center; the reverse carries the
//! leaf glyph at the leaf's canonical position. Both sides also carry the same
//! distractor glyphs, which hold no label information.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::HierarchyTree;
use crate::image::Image;

pub const GLYPH: usize = 7;

const CLASS_GLYPHS: [(&str, [&str; GLYPH]); 8] = [
    ("ring", ["..###..", ".#...#.", "#.....#", "#.....#", "#.....#", ".#...#.", "..###.."]),
    ("bar", [".......", ".......", "#######", "#######", "#######", ".......", "......."]),
    ("cross", ["...#...", "...#...", "...#...", "#######", "...#...", "...#...", "...#..."]),
    ("chevron", ["#.....#", "##...##", ".##.##.", "..###..", "...#...", ".......", "......."]),
    ("dots", ["##...##", "##...##", ".......", "..###..", ".......", "##...##", "##...##"]),
    ("square", ["#######", "#.....#", "#.....#", "#.....#", "#.....#", "#.....#", "#######"]),
    ("saltire", ["#.....#", ".#...#.", "..#.#..", "...#...", "..#.#..", ".#...#.", "#.....#"]),
    ("pillar", ["..###..", "..###..", "..###..", "..###..", "..###..", "..###..", "..###.."]),
];

const DISTRACTOR_GLYPHS: [(&str, [&str; GLYPH]); 2] = [
    ("diamond", ["...#...", "..###..", ".#####.", "#######", ".#####.", "..###..", "...#..."]),
    ("triangle", ["...#...", "..###..", "..###..", ".#####.", ".#####.", "#######", "......."]),
];

/// Canonical leaf glyph centers, as offsets from the image center.
const LEAF_POSITIONS: [(i32, i32); 2] = [(-6, 0), (6, 0)];
/// Distractor centers, as offsets from the image center.
const DISTRACTOR_POSITIONS: [(i32, i32); 2] = [(0, -9), (0, 9)];

/// A binary `GLYPH x GLYPH` stamp.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Glyph {
    pub name: &'static str,
    pub cells: [[bool; GLYPH]; GLYPH],
}

impl Glyph {
    fn parse(name: &'static str, rows: &[&str; GLYPH]) -> Self {
        let mut cells = [[false; GLYPH]; GLYPH];
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.bytes().enumerate() {
                cells[y][x] = ch == b'#';
            }
        }
        Glyph { name, cells }
    }

    pub fn area(&self) -> usize {
        self.cells.iter().flatten().filter(|&&c| c).count()
    }
}

pub fn class_glyphs() -> Vec<Glyph> {
    CLASS_GLYPHS.iter().map(|(n, r)| Glyph::parse(n, r)).collect()
}

pub fn distractor_glyphs() -> Vec<Glyph> {
    DISTRACTOR_GLYPHS.iter().map(|(n, r)| Glyph::parse(n, r)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_parents: usize,
    pub leaves_per_parent: usize,
    pub images_per_leaf: usize,
    /// Square storage size in pixels.
    pub size: usize,
    pub disc_radius: f64,
    /// Maximum glyph displacement per axis, in pixels.
    pub jitter: i32,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_parents: 8,
            leaves_per_parent: 2,
            images_per_leaf: 200,
            size: 40,
            disc_radius: 16.0,
            jitter: 2,
            noise: 0.05,
            distractors: 2,
            seed: 0,
        }
    }
}

/// Where a leaf class's glyph lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Landmark {
    pub glyph: usize,
    pub offset: (i32, i32),
}

impl SyntheticSpec {
    pub fn num_leaves(&self) -> usize {
        self.num_parents * self.leaves_per_parent
    }

    /// Leaf `n = leaves_per_parent * p + j` uses glyph `n mod 8` at position
    /// `n div 8`, so leaves sharing a glyph always belong to different parents.
    pub fn landmark(&self, leaf: usize) -> Landmark {
        let g = CLASS_GLYPHS.len();
        Landmark {
            glyph: leaf % g,
            offset: LEAF_POSITIONS[leaf / g],
        }
    }

    pub fn parent_labels(&self) -> Vec<String> {
        (0..self.num_parents).map(|p| format!("e{p}")).collect()
    }

    pub fn leaf_labels(&self) -> Vec<String> {
        (0..self.num_leaves()).map(|n| format!("r{n:02}")).collect()
    }

    pub fn parent_of(&self, leaf: usize) -> usize {
        leaf / self.leaves_per_parent
    }

    pub fn tree(&self) -> Result<HierarchyTree> {
        HierarchyTree::new(
            self.parent_labels(),
            self.leaf_labels(),
            (0..self.num_leaves()).map(|n| self.parent_of(n)).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_parents == 0 || self.leaves_per_parent == 0 || self.images_per_leaf == 0 {
            return Err(Error::invalid("parents, leaves per parent and images per leaf must be positive"));
        }
        if self.num_parents > CLASS_GLYPHS.len() {
            return Err(Error::invalid(format!(
                "at most {} parents (one obverse glyph each)",
                CLASS_GLYPHS.len()
            )));
        }
        let capacity = CLASS_GLYPHS.len() * LEAF_POSITIONS.len();
        if self.num_leaves() > capacity {
            return Err(Error::invalid(format!(
                "{} leaf classes exceed the {capacity} (glyph, position) pairs",
                self.num_leaves()
            )));
        }
        if self.distractors > DISTRACTOR_POSITIONS.len() {
            return Err(Error::invalid(format!(
                "at most {} distractors",
                DISTRACTOR_POSITIONS.len()
            )));
        }
        if self.jitter < 0 {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be a finite non-negative value"));
        }
        if !(self.disc_radius > 0.0) || self.disc_radius > self.size as f64 / 2.0 {
            return Err(Error::invalid(format!(
                "disc radius {} must be in (0, {}]",
                self.disc_radius,
                self.size as f64 / 2.0
            )));
        }
        let mut centers: Vec<(&str, (i32, i32))> = vec![("parent glyph", (0, 0))];
        centers.extend((0..self.num_leaves()).map(|n| ("leaf glyph", self.landmark(n).offset)));
        centers.extend(self.distractor_offsets().map(|o| ("distractor", o)));
        for (what, offset) in centers {
            for dy in [-self.jitter, self.jitter] {
                for dx in [-self.jitter, self.jitter] {
                    let (x0, y0) = self.glyph_origin((offset.0 + dx, offset.1 + dy));
                    let inside = (0..GLYPH as i32).all(|gy| {
                        (0..GLYPH as i32).all(|gx| self.in_disc_signed(x0 + gx, y0 + gy))
                    });
                    if !inside {
                        return Err(Error::invalid(format!(
                            "{what} at offset {offset:?} with jitter {} escapes the disc",
                            self.jitter
                        )));
                    }
                }
            }
        }
        let glyphs = class_glyphs();
        for n in 0..self.num_leaves() {
            let lm = self.landmark(n);
            let glyph = &glyphs[lm.glyph];
            let (gx0, gy0) = self.glyph_origin(lm.offset);
            for d in self.distractor_offsets() {
                let (dx0, dy0) = self.glyph_origin(d);
                let overlap = cells(glyph)
                    .filter(|&(x, y)| {
                        let (px, py) = (gx0 + x, gy0 + y);
                        (dx0..dx0 + GLYPH as i32).contains(&px) && (dy0..dy0 + GLYPH as i32).contains(&py)
                    })
                    .count();
                if overlap * 10 > glyph.area() {
                    return Err(Error::invalid(format!(
                        "leaf {n} glyph overlaps a distractor on {overlap} of {} pixels",
                        glyph.area()
                    )));
                }
            }
        }
        Ok(())
    }

    fn distractor_offsets(&self) -> impl Iterator<Item = (i32, i32)> {
        DISTRACTOR_POSITIONS.into_iter().take(self.distractors)
    }

    fn glyph_origin(&self, offset: (i32, i32)) -> (i32, i32) {
        let c = (self.size / 2) as i32;
        let half = (GLYPH / 2) as i32;
        (c + offset.0 - half, c + offset.1 - half)
    }

    fn in_disc_signed(&self, x: i32, y: i32) -> bool {
        let c = self.size as f64 / 2.0;
        let (dx, dy) = (f64::from(x) + 0.5 - c, f64::from(y) + 0.5 - c);
        x >= 0 && y >= 0 && dx * dx + dy * dy <= self.disc_radius * self.disc_radius
    }

    /// Row-major in-disc indicator over the storage image.
    pub fn disc_mask(&self) -> Vec<bool> {
        (0..self.size * self.size)
            .map(|i| self.in_disc_signed((i % self.size) as i32, (i / self.size) as i32))
            .collect()
    }
}

fn cells(glyph: &Glyph) -> impl Iterator<Item = (i32, i32)> + '_ {
    (0..GLYPH).flat_map(move |y| {
        (0..GLYPH).filter(move |&x| glyph.cells[y][x]).map(move |x| (x as i32, y as i32))
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    /// Row-major pixels of the leaf glyph as stamped on the reverse.
    pub mask: Vec<bool>,
    pub leaf: usize,
    pub parent: usize,
}

impl GroundTruth {
    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub obverse: Image<f64>,
    pub reverse: Image<f64>,
    pub truth: GroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticSpec,
    pub tree: HierarchyTree,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn leaf_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.truth.leaf).collect()
    }

    pub fn parent_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.truth.parent).collect()
    }

    pub fn reverses(&self) -> Vec<Image<f64>> {
        self.samples.iter().map(|s| s.reverse.clone()).collect()
    }

    pub fn obverses(&self) -> Vec<Image<f64>> {
        self.samples.iter().map(|s| s.obverse.clone()).collect()
    }
}

/// Samples are ordered leaf-major; sample `i` draws from its own ChaCha stream `i`.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let total = spec.num_leaves() * spec.images_per_leaf;
    let samples = (0..total)
        .into_par_iter()
        .map(|i| render_sample(spec, i, i / spec.images_per_leaf))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        spec: spec.clone(),
        tree: spec.tree()?,
        samples,
    })
}

fn render_sample(spec: &SyntheticSpec, index: usize, leaf: usize) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let parent = spec.parent_of(leaf);
    let glyphs = class_glyphs();
    let distractors = distractor_glyphs();

    let mut sides = Vec::with_capacity(2);
    let mut mask = Vec::new();
    for side in 0..2 {
        let mut canvas = background(spec, &mut rng);
        for (k, offset) in spec.distractor_offsets().enumerate() {
            let at = jittered(offset, spec.jitter, &mut rng);
            stamp(spec, &mut canvas, &distractors[k % distractors.len()], at, None);
        }
        if side == 0 {
            let at = jittered((0, 0), spec.jitter, &mut rng);
            stamp(spec, &mut canvas, &glyphs[parent], at, None);
        } else {
            let lm = spec.landmark(leaf);
            let at = jittered(lm.offset, spec.jitter, &mut rng);
            mask = vec![false; spec.size * spec.size];
            stamp(spec, &mut canvas, &glyphs[lm.glyph], at, Some(&mut mask));
        }
        add_noise(spec, &mut canvas, &mut rng)?;
        sides.push(Image::new(spec.size, spec.size, 1, canvas)?);
    }
    let reverse = sides.pop().expect("two sides");
    let obverse = sides.pop().expect("two sides");
    Ok(Sample {
        obverse,
        reverse,
        truth: GroundTruth { mask, leaf, parent },
    })
}

/// Disc filled with a low-contrast sinusoidal texture, black outside.
fn background(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fx = rng.random_range(1.0..3.0);
    let fy = rng.random_range(1.0..3.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let disc = spec.disc_mask();
    let n = spec.size as f64;
    (0..spec.size * spec.size)
        .map(|i| {
            if !disc[i] {
                return 0.0;
            }
            let (x, y) = ((i % spec.size) as f64, (i / spec.size) as f64);
            let t = std::f64::consts::TAU * (fx * x + fy * y) / n + phase;
            0.3 + 0.05 * t.sin()
        })
        .collect()
}

fn jittered(offset: (i32, i32), jitter: i32, rng: &mut ChaCha8Rng) -> (i32, i32) {
    if jitter == 0 {
        return offset;
    }
    (
        offset.0 + rng.random_range(-jitter..=jitter),
        offset.1 + rng.random_range(-jitter..=jitter),
    )
}

fn stamp(spec: &SyntheticSpec, canvas: &mut [f64], glyph: &Glyph, at: (i32, i32), mut mask: Option<&mut Vec<bool>>) {
    let (x0, y0) = spec.glyph_origin(at);
    for (gx, gy) in cells(glyph) {
        let i = (y0 + gy) as usize * spec.size + (x0 + gx) as usize;
        canvas[i] = 1.0;
        if let Some(m) = mask.as_deref_mut() {
            m[i] = true;
        }
    }
}

/// Adds in-disc noise, clamps to `[0,1]` and snaps to the 8-bit grid so that
/// writing and re-reading a P5 file is lossless.
fn add_noise(spec: &SyntheticSpec, canvas: &mut [f64], rng: &mut ChaCha8Rng) -> Result<()> {
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let disc = spec.disc_mask();
    for (v, inside) in canvas.iter_mut().zip(disc) {
        if inside && spec.noise > 0.0 {
            *v += normal.sample(rng);
        }
        *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_parents: 2,
            leaves_per_parent: 2,
            images_per_leaf: 10,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn counts() {
        let d = generate(&small(1)).unwrap();
        assert_eq!(d.len(), 40);
        assert_eq!(d.tree.leaves().len(), 4);
        assert_eq!(d.tree.parents().len(), 2);
        assert_eq!(d.samples.iter().filter(|s| s.truth.leaf == 3).count(), 10);
        assert!(d.samples.iter().all(|s| s.truth.parent == s.truth.leaf / 2));
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate(&small(5)).unwrap(), generate(&small(5)).unwrap());
        assert_ne!(generate(&small(5)).unwrap(), generate(&small(6)).unwrap());
    }

    #[test]
    fn no_randomness_means_identical_within_class() {
        let spec = SyntheticSpec { jitter: 0, noise: 0.0, ..small(3) };
        let d = generate(&spec).unwrap();
        for leaf in 0..4 {
            let of: Vec<&Sample> = d.samples.iter().filter(|s| s.truth.leaf == leaf).collect();
            for s in &of[1..] {
                assert_eq!(s.truth.mask, of[0].truth.mask);
                // Only the texture phase differs; glyph pixels agree.
                for (i, &m) in s.truth.mask.iter().enumerate() {
                    if m {
                        assert_eq!(s.reverse.pixels()[i], 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn masks_inside_disc_and_match_glyph_area() {
        let d = generate(&small(2)).unwrap();
        let disc = d.spec.disc_mask();
        let glyphs = class_glyphs();
        for s in &d.samples {
            let area = glyphs[d.spec.landmark(s.truth.leaf).glyph].area();
            assert_eq!(s.truth.area(), area);
            assert!(s.truth.mask.iter().zip(&disc).all(|(&m, &d)| !m || d));
        }
    }

    #[test]
    fn default_spec_is_valid_and_glyphs_distinct() {
        SyntheticSpec::default().validate().unwrap();
        let g = class_glyphs();
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                assert_ne!(g[i].cells, g[j].cells);
            }
        }
        let spec = SyntheticSpec::default();
        let mut pairs: Vec<Landmark> = (0..16).map(|n| spec.landmark(n)).collect();
        pairs.dedup();
        assert_eq!(pairs.len(), 16);
    }

    #[test]
    fn escaping_glyph_is_rejected() {
        let spec = SyntheticSpec { disc_radius: 9.0, ..small(0) };
        assert!(spec.validate().is_err());
        let spec = SyntheticSpec { jitter: 8, ..small(0) };
        assert!(spec.validate().is_err());
        let spec = SyntheticSpec { num_parents: 9, ..small(0) };
        assert!(spec.validate().is_err());
    }
}
