//! Overlap-aware confusion matrices and per-class IoU / mIoU.
//!
//! `counts[t][p]` counts evaluation events with ground truth `t` and
//! prediction `p`. A valid pixel whose ground-truth set contains the
//! prediction is one true positive for that class; otherwise every
//! ground-truth label of the pixel records a miss against the prediction.
//! IoU for class `c` is `diag / (row + col - diag)`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::class::{ClassId, LabelSet, CLASS_ABBREVIATIONS, CLASS_NAMES, NUM_CLASSES};
use crate::ensemble::LabelRaster;
use crate::error::{Error, Result};
use crate::tile::TileSample;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub valid_pixels: u64,
}

impl ConfusionMatrix {
    pub fn zero() -> Self {
        ConfusionMatrix::default()
    }

    /// The overlap rule for one valid pixel.
    pub fn record_pixel(&mut self, truth: LabelSet, pred: ClassId) {
        self.valid_pixels += 1;
        if truth.contains(pred) {
            self.counts[pred.index()][pred.index()] += 1;
        } else {
            for t in truth.iter() {
                self.counts[t.index()][pred.index()] += 1;
            }
        }
    }

    pub fn accumulate(&mut self, pred: &LabelRaster, gt: &TileSample) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::dims(gt.dims(), pred.dims()));
        }
        for ((p, truth), valid) in pred.labels().iter().zip(gt.labels()).zip(gt.validity()) {
            if *valid {
                self.record_pixel(*truth, *p);
            }
        }
        Ok(())
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        let mut out = *self;
        for (row, orow) in out.counts.iter_mut().zip(&other.counts) {
            for (v, o) in row.iter_mut().zip(orow) {
                *v = v.checked_add(*o).ok_or(Error::ArithmeticOverflow)?;
            }
        }
        out.valid_pixels = out
            .valid_pixels
            .checked_add(other.valid_pixels)
            .ok_or(Error::ArithmeticOverflow)?;
        Ok(out)
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// `None` when the class never occurs in truth or prediction.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.counts[c][c];
        let union = self.row_sum(c) + self.col_sum(c) - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }
}

pub fn accumulate_tile(pred: &LabelRaster, gt: &TileSample) -> Result<ConfusionMatrix> {
    let mut m = ConfusionMatrix::zero();
    m.accumulate(pred, gt)?;
    Ok(m)
}

/// Evaluates items `0..n` in `partitions` contiguous chunks, merging chunk
/// results in chunk order. Any partition count yields the same matrix.
pub fn evaluate_partitioned<F>(n: usize, partitions: usize, eval_item: F) -> Result<ConfusionMatrix>
where
    F: Fn(usize) -> Result<ConfusionMatrix> + Sync,
{
    let partitions = partitions.clamp(1, n.max(1));
    let chunk = n.div_ceil(partitions).max(1);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let partials: Vec<ConfusionMatrix> = starts
        .par_iter()
        .map(|&start| {
            (start..(start + chunk).min(n)).try_fold(ConfusionMatrix::zero(), |acc, i| acc.merge(&eval_item(i)?))
        })
        .collect::<Result<_>>()?;
    partials
        .iter()
        .try_fold(ConfusionMatrix::zero(), |acc, m| acc.merge(m))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub miou: f64,
    pub iou: [Option<f64>; NUM_CLASSES],
    pub class_names: [&'static str; NUM_CLASSES],
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub valid_pixels: u64,
}

/// Per-class IoU; undefined classes are left out of the mean.
pub fn metrics(conf: &ConfusionMatrix) -> Result<MetricsReport> {
    let iou: [Option<f64>; NUM_CLASSES] = std::array::from_fn(|c| conf.iou(c));
    let defined: Vec<f64> = iou.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::NoDefinedClasses);
    }
    Ok(MetricsReport {
        miou: defined.iter().sum::<f64>() / defined.len() as f64,
        iou,
        class_names: CLASS_NAMES,
        confusion: conf.counts,
        valid_pixels: conf.valid_pixels,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table: `Models | mIoU | BG(0) ... WC(8)`.
    pub fn to_table(&self, row_name: &str) -> String {
        let name_w = row_name.len().max("Models".len());
        let mut out = String::new();
        let _ = write!(out, "{:<name_w$}  {:>6}", "Models", "mIoU");
        for (c, abbr) in CLASS_ABBREVIATIONS.iter().enumerate() {
            let _ = write!(out, "  {:>6}", format!("{abbr}({c})"));
        }
        out.push('\n');
        let _ = write!(out, "{:<name_w$}  {:>6.3}", row_name, self.miou);
        for v in &self.iou {
            match v {
                Some(v) => {
                    let _ = write!(out, "  {v:>6.3}");
                }
                None => {
                    let _ = write!(out, "  {:>6}", "-");
                }
            }
        }
        out.push('\n');
        out
    }
}
