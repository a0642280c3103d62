//! Score maps and the pluggable predictor contract.
//!
//! Score files (`<tile id>.agsc`) are little-endian:
//!
//! ```text
//! b"AGSC" | u32 version=1 | u32 H | u32 W | u32 C=9 | H*W*C f32, row-major, class-fastest
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::class::{ClassId, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::rng::{hash_str, CounterRng};
use crate::tile::TileSample;

pub const SCORE_MAGIC: &[u8; 4] = b"AGSC";
pub const SCORE_FORMAT_VERSION: u32 = 1;
pub const SCORE_EXTENSION: &str = "agsc";
const HEADER_LEN: usize = 20;

/// Allowed deviation of a per-pixel score sum from 1.
pub const NORMALIZATION_TOLERANCE: f32 = 1e-5;

/// Per-pixel probability distribution over the nine classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub tile_id: String,
    height: usize,
    width: usize,
    scores: Vec<f32>,
}

impl ScoreMap {
    /// Builds and validates a score map.
    pub fn new(tile_id: impl Into<String>, height: usize, width: usize, scores: Vec<f32>) -> Result<Self> {
        let map = ScoreMap::new_unchecked(tile_id.into(), height, width, scores);
        map.validate()?;
        Ok(map)
    }

    pub(crate) fn new_unchecked(tile_id: String, height: usize, width: usize, scores: Vec<f32>) -> Self {
        debug_assert_eq!(scores.len(), height * width * NUM_CLASSES);
        ScoreMap {
            tile_id,
            height,
            width,
            scores,
        }
    }

    /// One-hot map from a per-pixel class raster.
    pub fn one_hot(tile_id: impl Into<String>, height: usize, width: usize, classes: &[ClassId]) -> Self {
        assert_eq!(classes.len(), height * width);
        let mut scores = vec![0.0f32; height * width * NUM_CLASSES];
        for (px, c) in scores.chunks_exact_mut(NUM_CLASSES).zip(classes) {
            px[c.index()] = 1.0;
        }
        ScoreMap::new_unchecked(tile_id.into(), height, width, scores)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn into_scores(self) -> Vec<f32> {
        self.scores
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * NUM_CLASSES;
        &self.scores[i..i + NUM_CLASSES]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f32]> {
        self.scores.chunks_exact(NUM_CLASSES)
    }

    /// Checks finiteness, bounds and per-pixel normalization.
    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidScores {
            tile: self.tile_id.clone(),
            reason,
        };
        if self.scores.len() != self.height * self.width * NUM_CLASSES {
            return Err(invalid(format!(
                "{} values for a {}x{}x{} map",
                self.scores.len(),
                self.height,
                self.width,
                NUM_CLASSES
            )));
        }
        for (i, px) in self.pixels().enumerate() {
            if let Some(v) = px
                .iter()
                .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0 + NORMALIZATION_TOLERANCE)
            {
                return Err(invalid(format!("pixel {i}: score {v} outside [0, 1]")));
            }
            let sum: f64 = px.iter().map(|v| *v as f64).sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE as f64 {
                return Err(invalid(format!("pixel {i}: scores sum to {sum}")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.scores.len() * 4);
        out.extend_from_slice(SCORE_MAGIC);
        for v in [
            SCORE_FORMAT_VERSION,
            self.height as u32,
            self.width as u32,
            NUM_CLASSES as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in &self.scores {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(tile_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        let tile_id = tile_id.into();
        let corrupt = |reason: &str| Error::InvalidScores {
            tile: tile_id.clone(),
            reason: reason.to_string(),
        };
        if bytes.len() < HEADER_LEN || &bytes[..4] != SCORE_MAGIC {
            return Err(corrupt("missing AGSC header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
        let (version, h, w, c) = (word(0), word(1) as usize, word(2) as usize, word(3) as usize);
        if version != SCORE_FORMAT_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        if c != NUM_CLASSES {
            return Err(corrupt(&format!("expected {NUM_CLASSES} classes, got {c}")));
        }
        let body = &bytes[HEADER_LEN..];
        if body.len() != h * w * c * 4 {
            return Err(corrupt(&format!("payload is {} bytes, expected {}", body.len(), h * w * c * 4)));
        }
        let scores = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        ScoreMap::new(tile_id, h, w, scores)
    }

    pub fn path_in(dir: &Path, tile_id: &str) -> PathBuf {
        dir.join(format!("{tile_id}.{SCORE_EXTENSION}"))
    }

    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        let path = ScoreMap::path_in(dir, &self.tile_id);
        fs::write(&path, self.to_bytes()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read_from_dir(dir: &Path, tile_id: &str) -> Result<Self> {
        let path = ScoreMap::path_in(dir, tile_id);
        if !path.is_file() {
            return Err(Error::MissingScoreFile(tile_id.to_string(), dir.to_path_buf()));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        ScoreMap::from_bytes(tile_id, &bytes)
    }
}

/// Lists tile ids with a score file in `dir`, sorted.
pub fn list_score_ids(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(SCORE_EXTENSION) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

#[derive(Clone, Debug, PartialEq)]
pub enum PredictorSpec {
    /// One-hot on the lowest-index ground-truth label; Background off-validity.
    Oracle,
    Constant(ClassId),
    /// Oracle with each valid pixel replaced by a uniform one-hot with probability `p`.
    /// A `None` seed must be filled in before use.
    NoisyOracle { p: f64, seed: Option<u64> },
    /// Precomputed score files, one per tile id.
    External(PathBuf),
}

impl PredictorSpec {
    pub fn is_external(&self) -> bool {
        matches!(self, PredictorSpec::External(_))
    }
}

impl FromStr for PredictorSpec {
    type Err = Error;

    /// `oracle`, `constant:K`, `noisy-oracle:P[:SEED]`, `external:DIR`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidPredictor(s.to_string());
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "oracle" if rest.is_empty() => Ok(PredictorSpec::Oracle),
            "constant" => {
                let k: usize = rest.parse().map_err(|_| bad())?;
                ClassId::new(k).map(PredictorSpec::Constant).ok_or_else(bad)
            }
            "noisy-oracle" => {
                let (p, seed) = match rest.split_once(':') {
                    Some((p, seed)) => (p, Some(seed.parse::<u64>().map_err(|_| bad())?)),
                    None => (rest, None),
                };
                let p: f64 = p.parse().map_err(|_| bad())?;
                if !(0.0..1.0).contains(&p) {
                    return Err(bad());
                }
                Ok(PredictorSpec::NoisyOracle { p, seed })
            }
            "external" if !rest.is_empty() => Ok(PredictorSpec::External(PathBuf::from(rest))),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorSpec::Oracle => write!(f, "oracle"),
            PredictorSpec::Constant(k) => write!(f, "constant:{}", k.index()),
            PredictorSpec::NoisyOracle { p, seed: Some(s) } => write!(f, "noisy-oracle:{p}:{s}"),
            PredictorSpec::NoisyOracle { p, seed: None } => write!(f, "noisy-oracle:{p}"),
            PredictorSpec::External(dir) => write!(f, "external:{}", dir.display()),
        }
    }
}

fn oracle_classes(tile: &TileSample) -> Vec<ClassId> {
    tile.labels()
        .iter()
        .map(|l| l.first().unwrap_or(ClassId::BACKGROUND))
        .collect()
}

pub fn predict(spec: &PredictorSpec, tile: &TileSample) -> Result<ScoreMap> {
    let (h, w) = tile.dims();
    let id = tile.id.clone();
    match spec {
        PredictorSpec::Oracle => Ok(ScoreMap::one_hot(id, h, w, &oracle_classes(tile))),
        PredictorSpec::Constant(k) => Ok(ScoreMap::one_hot(id, h, w, &vec![*k; h * w])),
        PredictorSpec::NoisyOracle { p, seed } => {
            let seed = seed.ok_or_else(|| Error::InvalidPredictor(format!("{spec} (no seed)")))?;
            let tile_key = hash_str(&tile.id);
            let mut classes = oracle_classes(tile);
            for y in 0..h {
                for x in 0..w {
                    if !tile.is_valid(y, x) {
                        continue;
                    }
                    let mut rng = CounterRng::keyed(seed, &[tile_key, y as u64, x as u64]);
                    if rng.chance(*p) {
                        classes[y * w + x] =
                            ClassId::new(rng.below(NUM_CLASSES as u64) as usize).expect("in range");
                    }
                }
            }
            Ok(ScoreMap::one_hot(id, h, w, &classes))
        }
        PredictorSpec::External(dir) => {
            let map = ScoreMap::read_from_dir(dir, &tile.id)?;
            if map.dims() != (h, w) {
                return Err(Error::dims((h, w), map.dims()));
            }
            Ok(map)
        }
    }
}
