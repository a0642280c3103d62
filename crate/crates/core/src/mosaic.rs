//! k x k mosaics down-sampled back to single-tile size.
//!
//! Images are reduced by block mean (rounded half-up), labels and validity by
//! block OR, after which Background is recomputed.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::class::LabelSet;
use crate::dataset::{ingest_dataset, prepare_output_dir, write_tile, Manifest};
use crate::error::{Error, Result};
use crate::raster::{block_fold, block_mean_rgbn};
use crate::rng::CounterRng;
use crate::tile::TileSample;

/// Longest tile id written to disk verbatim; longer joined ids are hashed.
pub const MAX_FILE_ID_LEN: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MosaicSpec {
    factor: usize,
    pub seed: u64,
}

impl MosaicSpec {
    pub fn new(factor: usize, seed: u64) -> Result<Self> {
        if !(2..=3).contains(&factor) {
            return Err(Error::BadFactor(factor));
        }
        Ok(MosaicSpec { factor, seed })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }
}

/// Reduces a `(k*out_h) x (k*out_w)` frame to `out_h x out_w`.
///
/// `sample(y, x)` returns the image pixel, label set and validity of frame pixel `(y, x)`.
pub(crate) fn reduce_frame(
    id: String,
    out_h: usize,
    out_w: usize,
    k: usize,
    sample: impl Fn(usize, usize) -> ([u8; 4], LabelSet, bool),
) -> TileSample {
    let image = block_mean_rgbn(out_h, out_w, k, |y, x| sample(y, x).0);
    let labels = block_fold(out_h, out_w, k, LabelSet::EMPTY, |y, x| sample(y, x).1, |acc, l| {
        acc.union(l.foreground())
    });
    let valid = block_fold(out_h, out_w, k, false, |y, x| sample(y, x).2, |acc, v| acc || v);
    TileSample::new(id, out_h, out_w, image, labels, valid).expect("reduced rasters agree in size")
}

/// Fuses `k * k` tiles, given row-major, into one tile of the common size.
pub fn mosaic_grid(tiles: &[TileSample]) -> Result<TileSample> {
    let k = match tiles.len() {
        4 => 2,
        9 => 3,
        n => {
            let k = (1..=n).find(|k| k * k >= n).unwrap_or(0);
            if k * k == n {
                return Err(Error::BadFactor(k));
            }
            return Err(Error::malformed("mosaic grid", format!("{n} tiles is not a square grid")));
        }
    };
    let (h, w) = tiles[0].dims();
    if let Some(t) = tiles.iter().find(|t| t.dims() != (h, w)) {
        return Err(Error::dims((h, w), t.dims()));
    }
    let id = tiles.iter().map(|t| t.id.as_str()).collect::<Vec<_>>().join("+");
    Ok(reduce_frame(id, h, w, k, |y, x| {
        let t = &tiles[(y / h) * k + x / w];
        let (ty, tx) = (y % h, x % w);
        (t.pixel(ty, tx), t.labels_at(ty, tx), t.is_valid(ty, tx))
    }))
}

/// File-system safe id for a mosaic: the joined id when short enough.
fn file_id(joined: &str, factor: usize) -> String {
    if joined.len() <= MAX_FILE_ID_LEN {
        return joined.to_string();
    }
    let digest = Sha256::digest(joined.as_bytes());
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    format!("mosaic{factor}x-{hex}")
}

/// Shuffles the manifest with `spec.seed`, fuses consecutive groups of `k*k`
/// records and writes the mosaics under `out_root`. Leftover records are dropped.
pub fn build_mosaic_dataset(manifest: &Manifest, spec: MosaicSpec, out_root: &Path) -> Result<Manifest> {
    let k = spec.factor();
    let group = k * k;
    if manifest.len() < group {
        return Err(Error::TooFewTiles {
            needed: group,
            got: manifest.len(),
        });
    }
    let mut order: Vec<usize> = (0..manifest.len()).collect();
    CounterRng::new(spec.seed, k as u64).shuffle(&mut order);
    let groups: Vec<&[usize]> = order.chunks_exact(group).collect();
    log::info!(
        "mosaic {k}x: {} groups, {} leftover records dropped",
        groups.len(),
        manifest.len() % group
    );

    prepare_output_dir(out_root)?;
    let mosaics: Vec<TileSample> = groups
        .par_iter()
        .map(|members| {
            let tiles = members
                .iter()
                .map(|&i| manifest.load_tile(i))
                .collect::<Result<Vec<_>>>()?;
            mosaic_grid(&tiles)
        })
        .collect::<Result<_>>()?;

    // resampled inputs can repeat a grouping; disambiguate in group order
    let mut used = BTreeSet::new();
    let mosaics: Vec<TileSample> = mosaics
        .into_iter()
        .map(|mut t| {
            let base = file_id(&t.id, k);
            let mut id = base.clone();
            let mut n = 2;
            while !used.insert(id.clone()) {
                id = format!("{base}~{n}");
                n += 1;
            }
            t.id = id;
            t
        })
        .collect();
    mosaics.par_iter().try_for_each(|t| write_tile(out_root, t))?;

    let mut out = ingest_dataset(out_root, manifest.split)?;
    out.provenance = format!(
        "mosaic {k}x of [{}] with seed {}",
        manifest.provenance, spec.seed
    );
    Ok(out)
}
