#![allow(dead_code)]

pub mod plan_oracle;

use std::fs;
use std::path::{Path, PathBuf};

use agvision::class::{ClassId, LabelSet, NUM_CLASSES};
use agvision::rng::CounterRng;
use agvision::TileSample;
use sha2::{Digest, Sha256};

/// On-disk label directories for classes 1 to 8.
pub const LABEL_DIRS: [&str; 8] = [
    "double_plant",
    "drydown",
    "endrow",
    "nutrient_deficiency",
    "planter_skip",
    "water",
    "waterway",
    "weed_cluster",
];

pub fn c(i: usize) -> ClassId {
    ClassId::new(i).unwrap()
}

pub fn set(classes: &[usize]) -> LabelSet {
    classes.iter().fold(LabelSet::EMPTY, |mut s, i| {
        s.insert(c(*i));
        s
    })
}

/// Binary raster decoded straight from a single-channel PNG, thresholded at 128.
pub fn read_binary(path: &Path) -> (usize, usize, Vec<bool>) {
    let img = image::open(path).unwrap().to_luma8();
    let (w, h) = img.dimensions();
    (h as usize, w as usize, img.pixels().map(|p| p.0[0] >= 128).collect())
}

/// Class presence recomputed from the raw files of tile `id` under `root`.
pub fn scan_presence(root: &Path, id: &str) -> [bool; NUM_CLASSES] {
    let (_, _, boundary) = read_binary(&root.join("boundaries").join(format!("{id}.png")));
    let (_, _, mask) = read_binary(&root.join("masks").join(format!("{id}.png")));
    let valid: Vec<bool> = boundary.iter().zip(&mask).map(|(b, m)| *b && *m).collect();
    let mut any_fg = vec![false; valid.len()];
    let mut presence = [false; NUM_CLASSES];
    for (k, dir) in LABEL_DIRS.iter().enumerate() {
        let (_, _, label) = read_binary(&root.join("labels").join(dir).join(format!("{id}.png")));
        for (p, on) in label.iter().enumerate() {
            if *on && valid[p] {
                presence[k + 1] = true;
                any_fg[p] = true;
            }
        }
    }
    presence[0] = valid.iter().zip(&any_fg).any(|(v, f)| *v && !*f);
    presence
}

/// Ids of every RGB image under `root`, sorted.
pub fn tree_ids(root: &Path) -> Vec<String> {
    let mut ids: Vec<String> = fs::read_dir(root.join("images").join("rgb"))
        .unwrap()
        .map(|e| e.unwrap().path().file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    ids
}

/// Per-class image counts from raw files alone.
pub fn scan_counts(root: &Path) -> [u64; NUM_CLASSES] {
    let mut counts = [0u64; NUM_CLASSES];
    for id in tree_ids(root) {
        for (c, p) in scan_presence(root, &id).iter().enumerate() {
            counts[c] += *p as u64;
        }
    }
    counts
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            walk(&path, out);
        } else {
            out.push(path);
        }
    }
}

/// SHA-256 over every file below `root` (relative path and bytes, sorted by path).
pub fn tree_digest(root: &Path) -> String {
    let mut files = Vec::new();
    walk(root, &mut files);
    files.sort();
    let mut hasher = Sha256::new();
    for f in files {
        hasher.update(f.strip_prefix(root).unwrap().to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(fs::read(&f).unwrap());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Seeded tile with random pixels, labels drawn from up to `max_labels`
/// foreground classes (0 means single Background-or-foreground labels) and
/// the given fraction of invalid pixels.
pub fn random_tile(seed: u64, id: &str, h: usize, w: usize, max_labels: usize, invalid: f64) -> TileSample {
    let mut rng = CounterRng::new(seed, 0x7465_7374);
    let n = h * w;
    let image = (0..n)
        .map(|_| {
            let v = rng.next_u64().to_le_bytes();
            [v[0], v[1], v[2], v[3]]
        })
        .collect();
    let labels = (0..n)
        .map(|_| {
            let k = if max_labels == 0 { 1 } else { rng.range(0, max_labels as u64) as usize };
            let mut s = LabelSet::EMPTY;
            for _ in 0..k {
                let class = if max_labels == 0 { rng.below(9) } else { rng.range(1, 8) };
                s.insert(c(class as usize));
            }
            s
        })
        .collect();
    let valid = (0..n).map(|_| !rng.chance(invalid)).collect();
    TileSample::new(id, h, w, image, labels, valid).unwrap()
}

/// Horizontal flip (when `flip`) followed by `rot` clockwise quarter turns,
/// computed pixel by pixel from coordinates. `stride` values per pixel.
pub fn d4_by_coordinates<T: Copy>(data: &[T], stride: usize, h: usize, w: usize, rot: u8, flip: bool) -> (Vec<T>, usize, usize) {
    let mut cur: Vec<T> = Vec::with_capacity(data.len());
    for y in 0..h {
        for x in 0..w {
            let sx = if flip { w - 1 - x } else { x };
            cur.extend_from_slice(&data[(y * w + sx) * stride..(y * w + sx + 1) * stride]);
        }
    }
    let (mut ch, mut cw) = (h, w);
    for _ in 0..rot {
        // clockwise: out(y, x) = in(ch - 1 - x, y), output is cw x ch
        let mut next = Vec::with_capacity(cur.len());
        for y in 0..cw {
            for x in 0..ch {
                let src = (ch - 1 - x) * cw + y;
                next.extend_from_slice(&cur[src * stride..(src + 1) * stride]);
            }
        }
        cur = next;
        (ch, cw) = (cw, ch);
    }
    (cur, ch, cw)
}

/// Seeded valid score map with strictly positive entries.
pub fn random_scores(seed: u64, id: &str, h: usize, w: usize) -> agvision::ScoreMap {
    let mut rng = CounterRng::new(seed, 0x7363_6f72);
    let mut scores = Vec::with_capacity(h * w * NUM_CLASSES);
    for _ in 0..h * w {
        let raw: Vec<f64> = (0..NUM_CLASSES).map(|_| rng.next_f64() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        scores.extend(raw.iter().map(|v| (v / total) as f32));
    }
    agvision::ScoreMap::new(id, h, w, scores).unwrap()
}
