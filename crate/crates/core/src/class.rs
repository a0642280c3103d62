//! The nine label classes and a compact per-pixel label set.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const NUM_CLASSES: usize = 9;

/// Display names, in class-index order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "Background",
    "Double Plant",
    "Drydown",
    "Endrow",
    "Nutrient Deficiency",
    "Planter Skip",
    "Water",
    "Waterway",
    "Weed Cluster",
];

/// Report column headers.
pub const CLASS_ABBREVIATIONS: [&str; NUM_CLASSES] =
    ["BG", "DP", "D", "E", "ND", "PS", "W", "WW", "WC"];

/// Directory names under `labels/` for the foreground classes 1..=8.
pub const LABEL_DIRS: [&str; NUM_CLASSES - 1] = [
    "double_plant",
    "drydown",
    "endrow",
    "nutrient_deficiency",
    "planter_skip",
    "water",
    "waterway",
    "weed_cluster",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ClassId(u8);

impl ClassId {
    pub const BACKGROUND: ClassId = ClassId(0);

    pub fn new(index: usize) -> Option<Self> {
        (index < NUM_CLASSES).then_some(ClassId(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self.index()]
    }

    /// Directory under `labels/`; `None` for Background.
    pub fn label_dir(self) -> Option<&'static str> {
        self.0.checked_sub(1).map(|i| LABEL_DIRS[i as usize])
    }

    pub fn all() -> impl Iterator<Item = ClassId> {
        (0..NUM_CLASSES as u8).map(ClassId)
    }

    pub fn foreground() -> impl Iterator<Item = ClassId> {
        (1..NUM_CLASSES as u8).map(ClassId)
    }
}

impl TryFrom<u8> for ClassId {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        ClassId::new(v as usize).ok_or_else(|| format!("class index {v} out of range"))
    }
}

impl From<ClassId> for u8 {
    fn from(c: ClassId) -> u8 {
        c.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name(), self.0)
    }
}

/// Bit set over the nine classes; bit `c` set means class `c` labels the pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct LabelSet(u16);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);
    const FOREGROUND_MASK: u16 = 0b1_1111_1110;

    pub fn from_bits(bits: u16) -> Self {
        LabelSet(bits & 0x1ff)
    }

    pub fn single(c: ClassId) -> Self {
        LabelSet(1 << c.0)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn contains(self, c: ClassId) -> bool {
        self.0 & (1 << c.0) != 0
    }

    pub fn insert(&mut self, c: ClassId) {
        self.0 |= 1 << c.0;
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn foreground(self) -> LabelSet {
        LabelSet(self.0 & Self::FOREGROUND_MASK)
    }

    /// Lowest-index class in the set.
    pub fn first(self) -> Option<ClassId> {
        (self.0 != 0).then(|| ClassId(self.0.trailing_zeros() as u8))
    }

    pub fn iter(self) -> impl Iterator<Item = ClassId> {
        ClassId::all().filter(move |c| self.contains(*c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_dirs_follow_class_order() {
        assert_eq!(ClassId::new(6).unwrap().label_dir(), Some("water"));
        assert_eq!(ClassId::BACKGROUND.label_dir(), None);
        assert!(ClassId::new(9).is_none());
    }

    #[test]
    fn label_set_ops() {
        let mut s = LabelSet::EMPTY;
        s.insert(ClassId::new(7).unwrap());
        s.insert(ClassId::new(2).unwrap());
        assert_eq!(s.len(), 2);
        assert_eq!(s.first(), ClassId::new(2));
        assert_eq!(s.iter().map(ClassId::index).collect::<Vec<_>>(), vec![2, 7]);
        s.insert(ClassId::BACKGROUND);
        assert_eq!(s.foreground().len(), 2);
    }
}
