//! Weighted probability averaging across models and the final argmax.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::class::{ClassId, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::predictor::ScoreMap;

/// Validates weights and rescales them to sum to one.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidWeights(format!("weight {w} is not a non-negative number")));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

pub fn ensemble_scores(maps: &[ScoreMap], weights: &[f64]) -> Result<ScoreMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidWeights("no score maps to ensemble".into()))?;
    if weights.len() != maps.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} score maps",
            weights.len(),
            maps.len()
        )));
    }
    let weights = normalize_weights(weights)?;
    for m in &maps[1..] {
        if m.dims() != first.dims() {
            return Err(Error::dims(first.dims(), m.dims()));
        }
        if m.tile_id != first.tile_id {
            return Err(Error::TileIdMismatch(first.tile_id.clone(), m.tile_id.clone()));
        }
    }
    let scores = (0..first.scores().len())
        .map(|i| {
            maps.iter()
                .zip(&weights)
                .map(|(m, w)| w * m.scores()[i] as f64)
                .sum::<f64>() as f32
        })
        .collect();
    let out = ScoreMap::new_unchecked(first.tile_id.clone(), first.height(), first.width(), scores);
    out.validate()?;
    Ok(out)
}

/// Per-pixel class decisions; invalid pixels carry Background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRaster {
    pub tile_id: String,
    height: usize,
    width: usize,
    labels: Vec<ClassId>,
}

impl LabelRaster {
    pub fn new(tile_id: impl Into<String>, height: usize, width: usize, labels: Vec<ClassId>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::malformed(
                "label raster",
                format!("{} labels for {height}x{width}", labels.len()),
            ));
        }
        Ok(LabelRaster {
            tile_id: tile_id.into(),
            height,
            width,
            labels,
        })
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

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn at(&self, y: usize, x: usize) -> ClassId {
        self.labels[y * self.width + x]
    }

    /// Single-channel PNG of class indices 0..=8.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let data = self.labels.iter().map(|c| c.index() as u8).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, data)
            .expect("buffer sized")
            .save_with_format(path, ImageFormat::Png)
            .map_err(|e| Error::corrupt(path, e))
    }

    pub fn read_png(path: &Path, tile_id: impl Into<String>) -> Result<Self> {
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| Error::corrupt(path, e))?;
        let DynamicImage::ImageLuma8(img) = img else {
            return Err(Error::corrupt(path, "label PNG must be single-channel 8-bit"));
        };
        let (w, h) = (img.width() as usize, img.height() as usize);
        let labels = img
            .into_raw()
            .into_iter()
            .map(|v| ClassId::new(v as usize).ok_or_else(|| Error::corrupt(path, format!("class value {v} > 8"))))
            .collect::<Result<_>>()?;
        LabelRaster::new(tile_id, h, w, labels)
    }
}

/// Smallest class index attaining the maximum score.
pub fn argmax_pixel(scores: &[f32]) -> ClassId {
    let mut best = 0;
    for (c, s) in scores.iter().enumerate().take(NUM_CLASSES).skip(1) {
        if *s > scores[best] {
            best = c;
        }
    }
    ClassId::new(best).expect("in range")
}

pub fn argmax_labels(scores: &ScoreMap, validity: &[bool]) -> Result<LabelRaster> {
    let (h, w) = scores.dims();
    if validity.len() != h * w {
        return Err(Error::malformed(
            "validity raster",
            format!("{} pixels for a {h}x{w} score map", validity.len()),
        ));
    }
    let labels = scores
        .pixels()
        .zip(validity)
        .map(|(px, v)| if *v { argmax_pixel(px) } else { ClassId::BACKGROUND })
        .collect();
    LabelRaster::new(scores.tile_id.clone(), h, w, labels)
}
