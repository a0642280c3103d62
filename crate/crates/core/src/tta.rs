//! Test-time augmentation: predict on transformed copies of a tile, map each
//! score map back to the original frame, and average.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::class::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::mosaic::reduce_frame;
use crate::predictor::{predict, PredictorSpec, ScoreMap};
use crate::raster::{apply_d4, invert_d4, replicate, rotated_dims};
use crate::tile::TileSample;

/// `scale_down(k) ∘ rotate_cw^rotation ∘ hflip^hflip`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TtaTransform {
    rotation: u8,
    hflip: bool,
    scale_divisor: u8,
}

impl TtaTransform {
    pub const IDENTITY: TtaTransform = TtaTransform {
        rotation: 0,
        hflip: false,
        scale_divisor: 1,
    };

    /// `rotation` in quarter turns clockwise; `scale_divisor` 1, 2 or 3.
    pub fn new(rotation: u8, hflip: bool, scale_divisor: u8) -> Result<Self> {
        if rotation > 3 {
            return Err(Error::InvalidTta(format!("rotation {rotation} is not a quarter-turn count")));
        }
        if !(1..=3).contains(&scale_divisor) {
            return Err(Error::InvalidTta(format!("scale 1/{scale_divisor} unsupported")));
        }
        Ok(TtaTransform {
            rotation,
            hflip,
            scale_divisor,
        })
    }

    /// All eight rotation/flip combinations at full scale.
    pub fn d4() -> impl Iterator<Item = TtaTransform> {
        (0..4u8).flat_map(|r| [false, true].map(move |f| TtaTransform::new(r, f, 1).expect("valid")))
    }

    pub fn rotation(&self) -> u8 {
        self.rotation
    }

    pub fn hflip(&self) -> bool {
        self.hflip
    }

    pub fn scale_divisor(&self) -> usize {
        self.scale_divisor as usize
    }

    pub fn is_identity(&self) -> bool {
        *self == TtaTransform::IDENTITY
    }

    /// Output dims for an `h x w` input.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.scale_divisor();
        if !h.is_multiple_of(k) || !w.is_multiple_of(k) {
            return Err(Error::IndivisibleSize(h, w, k));
        }
        let (rh, rw) = rotated_dims(h, w, self.rotation);
        Ok((rh / k, rw / k))
    }
}

impl fmt::Display for TtaTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.hflip {
            parts.push("hflip".to_string());
        }
        if self.rotation != 0 {
            parts.push(format!("rot{}", 90 * self.rotation as u32));
        }
        if self.scale_divisor != 1 {
            parts.push(format!("scale{}", self.scale_divisor));
        }
        if parts.is_empty() {
            f.write_str("identity")
        } else {
            f.write_str(&parts.join("+"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TtaConfig {
    transforms: Vec<TtaTransform>,
}

impl TtaConfig {
    pub fn new(transforms: Vec<TtaTransform>) -> Result<Self> {
        if transforms.is_empty() {
            return Err(Error::InvalidTta("no transforms".into()));
        }
        for (i, t) in transforms.iter().enumerate() {
            if transforms[..i].contains(t) {
                return Err(Error::InvalidTta(format!("duplicate transform {t}")));
            }
        }
        Ok(TtaConfig { transforms })
    }

    pub fn identity() -> Self {
        TtaConfig {
            transforms: vec![TtaTransform::IDENTITY],
        }
    }

    pub fn d4() -> Self {
        TtaConfig {
            transforms: TtaTransform::d4().collect(),
        }
    }

    pub fn transforms(&self) -> &[TtaTransform] {
        &self.transforms
    }
}

impl FromStr for TtaConfig {
    type Err = Error;

    /// Comma list of `identity`, `rot90`, `rot180`, `rot270`, `hflip`,
    /// `scale2`, `scale3` and `d4` (all eight rotation/flip combinations).
    /// The identity is always included; repeats collapse.
    fn from_str(s: &str) -> Result<Self> {
        let mut out = vec![TtaTransform::IDENTITY];
        let mut push = |t: TtaTransform| {
            if !out.contains(&t) {
                out.push(t);
            }
        };
        for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match token {
                "identity" | "id" => push(TtaTransform::IDENTITY),
                "rot90" => push(TtaTransform::new(1, false, 1)?),
                "rot180" => push(TtaTransform::new(2, false, 1)?),
                "rot270" => push(TtaTransform::new(3, false, 1)?),
                "hflip" => push(TtaTransform::new(0, true, 1)?),
                "scale2" => push(TtaTransform::new(0, false, 2)?),
                "scale3" => push(TtaTransform::new(0, false, 3)?),
                "d4" => TtaTransform::d4().for_each(&mut push),
                other => return Err(Error::InvalidTta(format!("unknown token `{other}`"))),
            }
        }
        TtaConfig::new(out)
    }
}

pub fn apply_transform(tile: &TileSample, t: TtaTransform) -> Result<TileSample> {
    let (h, w) = tile.dims();
    let (out_h, out_w) = t.output_dims(h, w)?;
    let (image, rh, rw) = apply_d4(tile.image(), 1, h, w, t.rotation, t.hflip);
    let (labels, _, _) = apply_d4(tile.labels(), 1, h, w, t.rotation, t.hflip);
    let (valid, _, _) = apply_d4(tile.validity(), 1, h, w, t.rotation, t.hflip);
    let k = t.scale_divisor();
    if k == 1 {
        return Ok(TileSample::from_parts_unchecked(tile.id.clone(), rh, rw, image, labels, valid));
    }
    Ok(reduce_frame(tile.id.clone(), out_h, out_w, k, |y, x| {
        let i = y * rw + x;
        (image[i], labels[i], valid[i])
    }))
}

/// Maps a score map predicted on `t(tile)` back onto the `target_h x target_w` frame.
pub fn invert_scores(scores: &ScoreMap, t: TtaTransform, target_h: usize, target_w: usize) -> Result<ScoreMap> {
    let expected = t.output_dims(target_h, target_w)?;
    if scores.dims() != expected {
        return Err(Error::dims(expected, scores.dims()));
    }
    let k = t.scale_divisor();
    let (sh, sw) = scores.dims();
    let data = if k == 1 {
        scores.scores().to_vec()
    } else {
        replicate(scores.scores(), NUM_CLASSES, sh, sw, k)
    };
    let (data, h, w) = invert_d4(&data, NUM_CLASSES, sh * k, sw * k, t.rotation, t.hflip);
    debug_assert_eq!((h, w), (target_h, target_w));
    Ok(ScoreMap::new_unchecked(scores.tile_id.clone(), h, w, data))
}

/// Pairwise (cascade) summation: split in halves, sum each, add.
/// This is the fixed reduction order for averaging over transforms.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Element-wise mean of equally sized score maps using [`pairwise_sum`].
pub(crate) fn mean_scores(maps: &[ScoreMap]) -> ScoreMap {
    let first = &maps[0];
    let n = maps.len() as f64;
    let mut column = vec![0.0f64; maps.len()];
    let scores = (0..first.scores().len())
        .map(|i| {
            for (slot, m) in column.iter_mut().zip(maps) {
                *slot = m.scores()[i] as f64;
            }
            (pairwise_sum(&column) / n) as f32
        })
        .collect();
    ScoreMap::new_unchecked(first.tile_id.clone(), first.height(), first.width(), scores)
}

pub fn tta_predict(spec: &PredictorSpec, tile: &TileSample, config: &TtaConfig) -> Result<ScoreMap> {
    if spec.is_external() && config.transforms().iter().any(|t| !t.is_identity()) {
        return Err(Error::InvalidTta(
            "external score files cannot be re-predicted on transformed tiles".into(),
        ));
    }
    let (h, w) = tile.dims();
    for t in config.transforms() {
        t.output_dims(h, w)?;
    }
    let branches: Vec<ScoreMap> = config
        .transforms()
        .par_iter()
        .map(|t| {
            let variant = apply_transform(tile, *t)?;
            let scores = predict(spec, &variant)?;
            invert_scores(&scores, *t, h, w)
        })
        .collect::<Result<_>>()?;
    let out = mean_scores(&branches);
    out.validate()?;
    Ok(out)
}
