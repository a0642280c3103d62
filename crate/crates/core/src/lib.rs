//! Multi-label RGBN aerial-tile pipeline: dataset ingest, class-balanced
//! resampling, mosaic datasets, test-time augmentation, probability
//! ensembling and overlap-aware mIoU evaluation around a pluggable predictor.
//!
//! Every randomized step is driven by an explicit seed through [`rng`], and
//! every reduction has a fixed order, so outputs are reproducible bit-for-bit
//! regardless of thread count.

pub mod class;
pub mod cli;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod mosaic;
pub mod predictor;
pub mod raster;
pub mod resample;
pub mod rng;
pub mod synth;
pub mod tile;
pub mod tta;

pub use class::{ClassId, LabelSet, CLASS_NAMES, NUM_CLASSES};
pub use dataset::{class_counts, ingest_dataset, load_tile, ClassCounts, Manifest, Split, TileRecord};
pub use ensemble::{argmax_labels, ensemble_scores, LabelRaster};
pub use error::{Error, Result};
pub use eval::{metrics, ConfusionMatrix, MetricsReport};
pub use mosaic::{build_mosaic_dataset, mosaic_grid, MosaicSpec};
pub use predictor::{predict, PredictorSpec, ScoreMap};
pub use resample::{apply_plan, plan_resample, SamplePlan, TargetCounts};
pub use synth::{generate_synthetic, SynthConfig};
pub use tile::TileSample;
pub use tta::{apply_transform, invert_scores, tta_predict, TtaConfig, TtaTransform};
