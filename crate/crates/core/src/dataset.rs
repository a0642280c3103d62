//! On-disk dataset layout, manifests and per-class statistics.
//!
//! Layout under a split root:
//!
//! ```text
//! images/rgb/<id>.{jpg,png}
//! images/nir/<id>.{jpg,png}
//! boundaries/<id>.png
//! masks/<id>.png
//! labels/<class_dir>/<id>.png     one directory per foreground class
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::class::{ClassId, LabelSet, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tile::TileSample;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Synthetic,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "synthetic" => Ok(Split::Synthetic),
            other => Err(format!(
                "unknown split `{other}` (expected train, val, test or synthetic)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRecord {
    pub id: String,
    /// `<id>#<k>` tag on resampled copies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occurrence: Option<String>,
    /// Artifact name (`rgb`, `nir`, `boundary`, `mask`, class dir) to a path relative to the root.
    pub paths: BTreeMap<String, String>,
    pub presence: [bool; NUM_CLASSES],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub split: Split,
    pub provenance: String,
    /// Dataset root the record paths are relative to.
    pub root: PathBuf,
    pub records: Vec<TileRecord>,
}

#[derive(Serialize, Deserialize)]
struct ManifestHeader {
    split: Split,
    provenance: String,
    format_version: u32,
    root: String,
}

/// Per-class image counts: tiles where the class is present.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassCounts(pub [u64; NUM_CLASSES]);

impl ClassCounts {
    pub fn add_presence(&mut self, presence: &[bool; NUM_CLASSES], times: u64) {
        for (count, present) in self.0.iter_mut().zip(presence) {
            if *present {
                *count += times;
            }
        }
    }

    pub fn get(&self, class: usize) -> u64 {
        self.0[class]
    }
}

pub fn class_counts(manifest: &Manifest) -> ClassCounts {
    let mut counts = ClassCounts::default();
    for r in &manifest.records {
        counts.add_presence(&r.presence, 1);
    }
    counts
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load_tile(&self, index: usize) -> Result<TileSample> {
        load_tile(&self.root, &self.records[index])
    }

    pub fn to_jsonl(&self) -> String {
        let header = ManifestHeader {
            split: self.split,
            provenance: self.provenance.clone(),
            format_version: MANIFEST_FORMAT_VERSION,
            root: self.root.to_string_lossy().into_owned(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let what = || format!("manifest {}", path.display());
        let header_line = lines
            .next()
            .ok_or_else(|| Error::malformed(what(), "missing header line"))?
            .map_err(|e| Error::io(path, e))?;
        let header: ManifestHeader =
            serde_json::from_str(&header_line).map_err(|e| Error::malformed(what(), e))?;
        if header.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::malformed(
                what(),
                format!("unsupported format_version {}", header.format_version),
            ));
        }
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TileRecord = serde_json::from_str(&line)
                .map_err(|e| Error::malformed(what(), format!("line {}: {e}", n + 2)))?;
            records.push(record);
        }
        Ok(Manifest {
            split: header.split,
            provenance: header.provenance,
            root: PathBuf::from(header.root),
            records,
        })
    }
}

fn find_with_ext(dir: &Path, id: &str, exts: &[&str]) -> Option<PathBuf> {
    exts.iter()
        .map(|e| dir.join(format!("{id}.{e}")))
        .find(|p| p.is_file())
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root)
        .unwrap_or(p)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Locates every artifact of tile `id`, relative to `root`.
fn companion_paths(root: &Path, id: &str, rgb: &Path) -> Result<BTreeMap<String, String>> {
    let missing = |p: PathBuf| Error::MissingCompanionFile(id.to_string(), p);
    let mut paths = BTreeMap::new();
    paths.insert("rgb".to_string(), rel(root, rgb));
    let nir_dir = root.join("images").join("nir");
    let nir = find_with_ext(&nir_dir, id, &IMAGE_EXTENSIONS)
        .ok_or_else(|| missing(nir_dir.join(format!("{id}.png"))))?;
    paths.insert("nir".to_string(), rel(root, &nir));
    for (name, dir) in [("boundary", root.join("boundaries")), ("mask", root.join("masks"))] {
        let p = dir.join(format!("{id}.png"));
        if !p.is_file() {
            return Err(missing(p));
        }
        paths.insert(name.to_string(), rel(root, &p));
    }
    for class in ClassId::foreground() {
        let dir = class.label_dir().expect("foreground class");
        let p = root.join("labels").join(dir).join(format!("{id}.png"));
        if !p.is_file() {
            return Err(missing(p));
        }
        paths.insert(dir.to_string(), rel(root, &p));
    }
    Ok(paths)
}

/// Scans a split root and builds its manifest, sorted by id.
///
/// Tiles without a single valid pixel are skipped with a warning.
pub fn ingest_dataset(root: &Path, split: Split) -> Result<Manifest> {
    let rgb_dir = root.join("images").join("rgb");
    let entries = fs::read_dir(&rgb_dir).map_err(|e| Error::io(&rgb_dir, e))?;
    let mut found: BTreeMap<String, PathBuf> = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&rgb_dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if found.insert(id.to_string(), path.clone()).is_some() {
            return Err(Error::DuplicateTile(id.to_string()));
        }
    }

    let candidates: Vec<(String, PathBuf)> = found.into_iter().collect();
    let loaded: Vec<Option<TileRecord>> = candidates
        .par_iter()
        .map(|(id, rgb)| -> Result<Option<TileRecord>> {
            let paths = companion_paths(root, id, rgb)?;
            let mut record = TileRecord {
                id: id.clone(),
                occurrence: None,
                paths,
                presence: [false; NUM_CLASSES],
            };
            let tile = load_tile(root, &record).map_err(|e| match e {
                Error::DimensionMismatch { .. } => Error::corrupt(rgb, e),
                other => other,
            })?;
            if tile.valid_pixels() == 0 {
                log::warn!("skipping tile `{id}`: no valid pixels");
                return Ok(None);
            }
            record.presence = tile.class_presence();
            Ok(Some(record))
        })
        .collect::<Result<_>>()?;

    let records: Vec<TileRecord> = loaded.into_iter().flatten().collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Manifest {
        split,
        provenance: format!("ingested from {}", root.display()),
        root: root.to_path_buf(),
        records,
    })
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::corrupt(path, e))
}

/// Reads a single-channel {0, 255} PNG thresholded at 128.
fn read_binary(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    match open_image(path)? {
        DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            Ok((h as usize, w as usize, img.into_raw().into_iter().map(|v| v >= 128).collect()))
        }
        other => Err(Error::corrupt(
            path,
            format!("expected single-channel 8-bit PNG, got {:?}", other.color()),
        )),
    }
}

fn artifact<'a>(record: &'a TileRecord, name: &str) -> Result<&'a str> {
    record.paths.get(name).map(String::as_str).ok_or_else(|| {
        Error::MissingCompanionFile(record.id.clone(), PathBuf::from(format!("<{name}>")))
    })
}

/// Decodes a tile. Validity is `boundary AND mask`.
pub fn load_tile(root: &Path, record: &TileRecord) -> Result<TileSample> {
    let rgb = open_image(&root.join(artifact(record, "rgb")?))?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let check = |dims: (usize, usize)| {
        if dims == (h, w) {
            Ok(())
        } else {
            Err(Error::dims((h, w), dims))
        }
    };
    let nir = open_image(&root.join(artifact(record, "nir")?))?.to_luma8();
    check((nir.height() as usize, nir.width() as usize))?;

    let (bh, bw, boundary) = read_binary(&root.join(artifact(record, "boundary")?))?;
    check((bh, bw))?;
    let (mh, mw, mask) = read_binary(&root.join(artifact(record, "mask")?))?;
    check((mh, mw))?;
    let valid: Vec<bool> = boundary.iter().zip(&mask).map(|(b, m)| *b && *m).collect();

    let mut labels = vec![LabelSet::EMPTY; h * w];
    for class in ClassId::foreground() {
        let dir = class.label_dir().expect("foreground class");
        let (lh, lw, raster) = read_binary(&root.join(artifact(record, dir)?))?;
        check((lh, lw))?;
        for (l, on) in labels.iter_mut().zip(raster) {
            if on {
                l.insert(class);
            }
        }
    }

    let image = rgb
        .pixels()
        .zip(nir.pixels())
        .map(|(c, n)| [c[0], c[1], c[2], n[0]])
        .collect();
    TileSample::new(record.id.clone(), h, w, image, labels, valid)
}

/// Creates `root` if absent; fails unless it is empty.
pub fn prepare_output_dir(root: &Path) -> Result<()> {
    if root.exists() {
        let mut it = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        if it.next().is_some() {
            return Err(Error::OutputNotEmpty(root.to_path_buf()));
        }
    }
    for sub in [
        PathBuf::from("images").join("rgb"),
        PathBuf::from("images").join("nir"),
        PathBuf::from("boundaries"),
        PathBuf::from("masks"),
    ]
    .into_iter()
    .chain(label_dir_paths())
    {
        let p = root.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn label_dir_paths() -> impl Iterator<Item = PathBuf> {
    ClassId::foreground().map(|c| PathBuf::from("labels").join(c.label_dir().expect("foreground")))
}

fn save_png_gray(path: &Path, w: usize, h: usize, data: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(w as u32, h as u32, data).expect("buffer sized");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::corrupt(path, e))
}

/// Writes a tile into the standard layout (PNG everywhere). Validity is
/// stored in the boundary raster; the mask raster is all-on.
pub fn write_tile(root: &Path, tile: &TileSample) -> Result<()> {
    let (h, w) = tile.dims();
    let id = &tile.id;
    let rgb: Vec<u8> = tile.image().iter().flat_map(|p| [p[0], p[1], p[2]]).collect();
    let rgb_path = root.join("images").join("rgb").join(format!("{id}.png"));
    RgbImage::from_raw(w as u32, h as u32, rgb)
        .expect("buffer sized")
        .save_with_format(&rgb_path, ImageFormat::Png)
        .map_err(|e| Error::corrupt(&rgb_path, e))?;
    save_png_gray(
        &root.join("images").join("nir").join(format!("{id}.png")),
        w,
        h,
        tile.image().iter().map(|p| p[3]).collect(),
    )?;
    save_png_gray(
        &root.join("boundaries").join(format!("{id}.png")),
        w,
        h,
        tile.validity().iter().map(|v| if *v { 255 } else { 0 }).collect(),
    )?;
    save_png_gray(&root.join("masks").join(format!("{id}.png")), w, h, vec![255; w * h])?;
    for class in ClassId::foreground() {
        let dir = class.label_dir().expect("foreground class");
        save_png_gray(
            &root.join("labels").join(dir).join(format!("{id}.png")),
            w,
            h,
            tile.labels()
                .iter()
                .map(|l| if l.contains(class) { 255 } else { 0 })
                .collect(),
        )?;
    }
    Ok(())
}
