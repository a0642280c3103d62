//! Deterministic synthetic datasets in the standard on-disk layout.
//!
//! Each tile is split into a 3x3 grid of cells. Every foreground class is
//! painted with probability `class_density[c]` as one rectangle or disc inside
//! its own cell, so regions never touch each other; with probability
//! `overlap_rate` a region carries a second, distinct foreground label.

use std::path::Path;

use rayon::prelude::*;

use crate::class::{ClassId, LabelSet, NUM_CLASSES};
use crate::dataset::{ingest_dataset, prepare_output_dir, write_tile, Manifest, Split};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tile::TileSample;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub tile_count: usize,
    pub size: usize,
    pub seed: u64,
    /// Index 0 (Background) is ignored.
    pub class_density: [f64; NUM_CLASSES],
    pub overlap_rate: f64,
}

/// Roughly follows the relative class frequencies of the real train split.
pub const DEFAULT_DENSITY: [f64; NUM_CLASSES] = [0.0, 0.25, 0.5, 0.2, 0.4, 0.15, 0.15, 0.2, 0.35];

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            tile_count: 16,
            size: 64,
            seed: 0,
            class_density: DEFAULT_DENSITY,
            overlap_rate: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::malformed("synthetic config", reason));
        if self.size < 3 {
            return bad(format!("size {} is below the 3-pixel minimum", self.size));
        }
        if !(0.0..=1.0).contains(&self.overlap_rate) {
            return bad(format!("overlap rate {} outside [0, 1]", self.overlap_rate));
        }
        if let Some(d) = self.class_density.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return bad(format!("class density {d} outside [0, 1]"));
        }
        Ok(())
    }
}

pub fn tile_id(index: usize) -> String {
    format!("tile_{index:05}")
}

const BASE_COLOR: [i32; 4] = [96, 120, 72, 150];
const CLASS_TINT: [[i32; 4]; NUM_CLASSES] = [
    [0, 0, 0, 0],
    [30, -10, 5, 20],
    [70, 50, 20, -40],
    [-20, 30, 10, 30],
    [50, 60, -30, -20],
    [-40, -50, -20, -30],
    [-60, -40, 90, -120],
    [-30, 20, 60, -60],
    [10, 60, -10, 60],
];

#[derive(Clone, Copy)]
enum Shape {
    Rect { y0: usize, x0: usize, y1: usize, x1: usize },
    Disc { cy: usize, cx: usize, r: usize },
}

impl Shape {
    fn contains(self, y: usize, x: usize) -> bool {
        match self {
            Shape::Rect { y0, x0, y1, x1 } => (y0..y1).contains(&y) && (x0..x1).contains(&x),
            Shape::Disc { cy, cx, r } => {
                let dy = y as i64 - cy as i64;
                let dx = x as i64 - cx as i64;
                dy * dy + dx * dx <= (r * r) as i64
            }
        }
    }
}

/// Picks a shape inside the half-open cell `[y0, y1) x [x0, x1)`.
fn pick_shape(rng: &mut CounterRng, y0: usize, x0: usize, y1: usize, x1: usize) -> Shape {
    let (ch, cw) = (y1 - y0, x1 - x0);
    if rng.chance(0.5) {
        let h = rng.range((ch as u64).div_ceil(3), ch as u64) as usize;
        let w = rng.range((cw as u64).div_ceil(3), cw as u64) as usize;
        let oy = y0 + rng.below((ch - h) as u64 + 1) as usize;
        let ox = x0 + rng.below((cw - w) as u64 + 1) as usize;
        Shape::Rect { y0: oy, x0: ox, y1: oy + h, x1: ox + w }
    } else {
        let max_r = (ch.min(cw) - 1) / 2;
        let r = rng.range(0, max_r as u64) as usize;
        Shape::Disc { cy: y0 + ch / 2, cx: x0 + cw / 2, r }
    }
}

/// Generates tile `index` in memory.
pub fn synth_tile(config: &SynthConfig, index: usize) -> TileSample {
    let size = config.size;
    let mut rng = CounterRng::new(config.seed, index as u64);
    let mut cells: Vec<usize> = (0..9).collect();
    rng.shuffle(&mut cells);
    let bounds = |i: usize| (i * size / 3, (i + 1) * size / 3);

    let mut regions: Vec<(Shape, LabelSet)> = Vec::new();
    let mut next_cell = cells.into_iter();
    for class in ClassId::foreground() {
        if !rng.chance(config.class_density[class.index()]) {
            continue;
        }
        let cell = next_cell.next().expect("nine cells for eight classes");
        let (y0, y1) = bounds(cell / 3);
        let (x0, x1) = bounds(cell % 3);
        let shape = pick_shape(&mut rng, y0, x0, y1, x1);
        let mut labels = LabelSet::single(class);
        if rng.chance(config.overlap_rate) {
            // one of the other seven foreground classes
            let mut other = 1 + rng.below(7) as usize;
            if other >= class.index() {
                other += 1;
            }
            labels.insert(ClassId::new(other).expect("in range"));
        }
        regions.push((shape, labels));
    }

    let noise = CounterRng::keyed(config.seed, &[index as u64, 1]);
    let mut image = Vec::with_capacity(size * size);
    let mut labels = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let l = regions
                .iter()
                .filter(|(s, _)| s.contains(y, x))
                .fold(LabelSet::EMPTY, |acc, (_, l)| acc.union(*l));
            let tint = CLASS_TINT[l.first().map_or(0, ClassId::index)];
            let n = noise.at((y * size + x) as u64);
            let mut px = [0u8; 4];
            for ch in 0..4 {
                let jitter = ((n >> (16 * ch)) & 0xF) as i32 - 8;
                px[ch] = (BASE_COLOR[ch] + tint[ch] + jitter).clamp(0, 255) as u8;
            }
            image.push(px);
            labels.push(l);
        }
    }
    TileSample::new(tile_id(index), size, size, image, labels, vec![true; size * size])
        .expect("rasters sized consistently")
}

/// Writes `config.tile_count` tiles under `out_root` and ingests the result.
pub fn generate_synthetic(config: &SynthConfig, out_root: &Path) -> Result<Manifest> {
    config.validate()?;
    prepare_output_dir(out_root)?;
    (0..config.tile_count)
        .into_par_iter()
        .try_for_each(|i| write_tile(out_root, &synth_tile(config, i)))?;
    let mut manifest = ingest_dataset(out_root, Split::Synthetic)?;
    manifest.provenance = format!(
        "synthetic tiles={} size={} seed={} overlap_rate={}",
        config.tile_count, config.size, config.seed, config.overlap_rate
    );
    Ok(manifest)
}
