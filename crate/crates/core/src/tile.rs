use crate::class::{ClassId, LabelSet, NUM_CLASSES};
use crate::error::{Error, Result};

/// One raster sample: RGBN image, multi-label ground truth and validity.
///
/// Construction normalizes labels so that invalid pixels carry no label and
/// Background is set exactly on valid pixels without any foreground class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileSample {
    pub id: String,
    height: usize,
    width: usize,
    image: Vec<[u8; 4]>,
    labels: Vec<LabelSet>,
    valid: Vec<bool>,
}

fn normalize(labels: LabelSet, valid: bool) -> LabelSet {
    if !valid {
        return LabelSet::EMPTY;
    }
    let fg = labels.foreground();
    if fg.is_empty() {
        LabelSet::single(ClassId::BACKGROUND)
    } else {
        fg
    }
}

impl TileSample {
    /// Any Background bits in `labels` are ignored and recomputed.
    pub fn new(
        id: impl Into<String>,
        height: usize,
        width: usize,
        image: Vec<[u8; 4]>,
        labels: Vec<LabelSet>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let n = height * width;
        for len in [image.len(), labels.len(), valid.len()] {
            if len != n {
                return Err(Error::malformed(
                    "tile",
                    format!("raster has {len} pixels, expected {height}x{width}"),
                ));
            }
        }
        let labels = labels
            .into_iter()
            .zip(&valid)
            .map(|(l, &v)| normalize(l, v))
            .collect();
        Ok(TileSample {
            id: id.into(),
            height,
            width,
            image,
            labels,
            valid,
        })
    }

    /// Fully valid tile of one colour with no foreground labels.
    pub fn uniform(id: impl Into<String>, height: usize, width: usize, pixel: [u8; 4]) -> Self {
        let n = height * width;
        TileSample::new(
            id,
            height,
            width,
            vec![pixel; n],
            vec![LabelSet::EMPTY; n],
            vec![true; n],
        )
        .expect("sizes agree")
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

    pub fn image(&self) -> &[[u8; 4]] {
        &self.image
    }

    pub fn labels(&self) -> &[LabelSet] {
        &self.labels
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 4] {
        self.image[y * self.width + x]
    }

    pub fn labels_at(&self, y: usize, x: usize) -> LabelSet {
        self.labels[y * self.width + x]
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }

    /// Binary raster for one class.
    pub fn label_mask(&self, class: ClassId) -> Vec<bool> {
        self.labels.iter().map(|l| l.contains(class)).collect()
    }

    /// Whether each class labels at least one valid pixel.
    pub fn class_presence(&self) -> [bool; NUM_CLASSES] {
        let all = self
            .labels
            .iter()
            .fold(LabelSet::EMPTY, |acc, l| acc.union(*l));
        let mut out = [false; NUM_CLASSES];
        for c in all.iter() {
            out[c.index()] = true;
        }
        out
    }

    pub fn valid_pixels(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Skips normalization; callers guarantee labels already satisfy the invariants.
    pub(crate) fn from_parts_unchecked(
        id: String,
        height: usize,
        width: usize,
        image: Vec<[u8; 4]>,
        labels: Vec<LabelSet>,
        valid: Vec<bool>,
    ) -> Self {
        debug_assert_eq!(image.len(), height * width);
        TileSample {
            id,
            height,
            width,
            image,
            labels,
            valid,
        }
    }
}
