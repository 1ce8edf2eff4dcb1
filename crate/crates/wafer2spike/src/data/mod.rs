//! Wafer-map data model: the 3-code cell grid, the frozen 9-class label
//! set, nearest-neighbor resizing, normalization to network input tensors,
//! and the dataset container shared by the codec, split, augmentation, and
//! synthetic-generation submodules.

pub(crate) mod codec;
mod split;
mod synthetic;
mod transform;

pub use codec::{import_csv, load_wfm, save_wfm};
pub use split::{split, SplitSpec};
pub use synthetic::{generate_synthetic, uniform_counts};
pub use transform::{augment_minority, D4Transform};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::TrainSample;

/// The nine wafer-map defect classes in their frozen serialization order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ClassLabel {
    NoPattern = 0,
    Center = 1,
    Donut = 2,
    EdgeLoc = 3,
    EdgeRing = 4,
    Local = 5,
    Random = 6,
    Scratch = 7,
    NearFull = 8,
}

impl ClassLabel {
    pub const COUNT: usize = 9;
    pub const ALL: [ClassLabel; 9] = [
        ClassLabel::NoPattern,
        ClassLabel::Center,
        ClassLabel::Donut,
        ClassLabel::EdgeLoc,
        ClassLabel::EdgeRing,
        ClassLabel::Local,
        ClassLabel::Random,
        ClassLabel::Scratch,
        ClassLabel::NearFull,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<ClassLabel> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::NoPattern => "NoPattern",
            ClassLabel::Center => "Center",
            ClassLabel::Donut => "Donut",
            ClassLabel::EdgeLoc => "EdgeLoc",
            ClassLabel::EdgeRing => "EdgeRing",
            ClassLabel::Local => "Local",
            ClassLabel::Random => "Random",
            ClassLabel::Scratch => "Scratch",
            ClassLabel::NearFull => "NearFull",
        }
    }

    pub fn from_name(name: &str) -> Option<ClassLabel> {
        Self::ALL.iter().copied().find(|c| c.name().eq_ignore_ascii_case(name))
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a map (or a whole dataset) came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Synthetic,
    Augmented,
}

/// One wafer map: a `height × width` grid of cell codes with a class label.
/// Codes: 0 = no die, 1 = operational die, 2 = defective die.
#[derive(Clone, Debug)]
pub struct WaferMap {
    height: usize,
    width: usize,
    cells: Vec<u8>,
    label: ClassLabel,
    origin: Provenance,
}

/// Equality ignores provenance: two maps are the same wafer if grid and
/// label agree, regardless of how each copy was produced.
impl PartialEq for WaferMap {
    fn eq(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.cells == other.cells
            && self.label == other.label
    }
}
impl Eq for WaferMap {}

impl WaferMap {
    pub fn new(
        height: usize,
        width: usize,
        cells: Vec<u8>,
        label: ClassLabel,
        origin: Provenance,
    ) -> Result<WaferMap> {
        if height == 0 || width == 0 {
            return Err(Error::Input(format!("map extent {height}×{width} must be positive")));
        }
        if cells.len() != height * width {
            return Err(Error::Input(format!(
                "{} cells for a {height}×{width} map",
                cells.len()
            )));
        }
        if let Some(pos) = cells.iter().position(|c| *c > 2) {
            return Err(Error::Input(format!(
                "cell code {} at index {pos} is outside {{0,1,2}}",
                cells[pos]
            )));
        }
        Ok(WaferMap { height, width, cells, label, origin })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.width + col]
    }

    pub fn label(&self) -> ClassLabel {
        self.label
    }

    pub fn origin(&self) -> Provenance {
        self.origin
    }
}

/// A collection of wafer maps with a collection-level provenance tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub maps: Vec<WaferMap>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(maps: Vec<WaferMap>, provenance: Provenance) -> Dataset {
        Dataset { maps, provenance }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// Map count per class, indexed by class code.
    pub fn class_counts(&self) -> [usize; ClassLabel::COUNT] {
        let mut counts = [0; ClassLabel::COUNT];
        for m in &self.maps {
            counts[m.label().code() as usize] += 1;
        }
        counts
    }
}

/// Nearest-neighbor resample to `target × target`. Source index =
/// `floor(dst_index * src_extent / target)`, so output cells are always a
/// subset of input cells and stay in the 3-code alphabet.
pub fn resize_nearest(map: &WaferMap, target: usize) -> Result<WaferMap> {
    if target == 0 {
        return Err(Error::Input("resize target must be positive".into()));
    }
    if map.height == target && map.width == target {
        return Ok(map.clone());
    }
    let mut cells = Vec::with_capacity(target * target);
    for r in 0..target {
        let src_r = r * map.height / target;
        for c in 0..target {
            let src_c = c * map.width / target;
            cells.push(map.cell(src_r, src_c));
        }
    }
    WaferMap::new(target, target, cells, map.label, map.origin)
}

/// Cell codes to input intensities: 0 → 0.0, 1 → 0.5, 2 → 1.0. Shape
/// `[1, height, width]`.
pub fn normalize(map: &WaferMap) -> Tensor {
    let mut t = Tensor::zeros(&[1, map.height, map.width]);
    for (x, &c) in t.data_mut().iter_mut().zip(&map.cells) {
        *x = [0.0, 0.5, 1.0][c as usize];
    }
    t
}

/// Inverse of [`normalize`]; any intensity other than 0.0/0.5/1.0 is an
/// input error.
pub fn denormalize(t: &Tensor, label: ClassLabel, origin: Provenance) -> Result<WaferMap> {
    let [depth, height, width] = *t.expect_rank::<3>("normalized map")?;
    if depth != 1 {
        return Err(Error::dimension(format!("normalized map has depth {depth}")));
    }
    let cells = t
        .data()
        .iter()
        .map(|&x| match x {
            0.0 => Ok(0u8),
            0.5 => Ok(1),
            1.0 => Ok(2),
            other => Err(Error::Input(format!("intensity {other} is not a cell code"))),
        })
        .collect::<Result<Vec<u8>>>()?;
    WaferMap::new(height, width, cells, label, origin)
}

/// Normalized training sample for the network: input plus class index.
pub fn to_sample(map: &WaferMap) -> TrainSample {
    TrainSample { input: normalize(map), label: map.label().code() as usize }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn map_from(
        height: usize,
        width: usize,
        cells: &[u8],
        label: ClassLabel,
    ) -> WaferMap {
        WaferMap::new(height, width, cells.to_vec(), label, Provenance::Real).unwrap()
    }

    #[test]
    fn label_codes_are_frozen() {
        let names = [
            "NoPattern", "Center", "Donut", "EdgeLoc", "EdgeRing", "Local", "Random", "Scratch",
            "NearFull",
        ];
        for (code, name) in names.iter().enumerate() {
            let label = ClassLabel::from_code(code as u8).unwrap();
            assert_eq!(label.code() as usize, code);
            assert_eq!(label.name(), *name);
            assert_eq!(ClassLabel::from_name(name), Some(label));
        }
        assert_eq!(ClassLabel::from_code(9), None);
        assert_eq!(ClassLabel::from_name("center"), Some(ClassLabel::Center));
    }

    #[test]
    fn map_construction_validates() {
        assert!(WaferMap::new(2, 2, vec![0, 1, 2, 1], ClassLabel::Center, Provenance::Real).is_ok());
        assert!(WaferMap::new(2, 2, vec![0, 1, 3, 1], ClassLabel::Center, Provenance::Real).is_err());
        assert!(WaferMap::new(2, 2, vec![0, 1], ClassLabel::Center, Provenance::Real).is_err());
        assert!(WaferMap::new(0, 2, vec![], ClassLabel::Center, Provenance::Real).is_err());
    }

    #[test]
    fn equality_ignores_origin() {
        let a = WaferMap::new(1, 2, vec![1, 2], ClassLabel::Donut, Provenance::Real).unwrap();
        let b = WaferMap::new(1, 2, vec![1, 2], ClassLabel::Donut, Provenance::Augmented).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resize_36_is_identity() {
        let cells: Vec<u8> = (0..36 * 36).map(|i| (i % 3) as u8).collect();
        let map = map_from(36, 36, &cells, ClassLabel::Random);
        let out = resize_nearest(&map, 36).unwrap();
        assert_eq!(out, map);
    }

    #[test]
    fn resize_halves_constant_blocks() {
        // 72×72 built from constant 2×2 blocks → the 36×36 block-value map
        let mut block_values = vec![0u8; 36 * 36];
        for (i, v) in block_values.iter_mut().enumerate() {
            *v = ((i * 7) % 3) as u8;
        }
        let mut cells = vec![0u8; 72 * 72];
        for r in 0..72 {
            for c in 0..72 {
                cells[r * 72 + c] = block_values[(r / 2) * 36 + c / 2];
            }
        }
        let map = map_from(72, 72, &cells, ClassLabel::Local);
        let out = resize_nearest(&map, 36).unwrap();
        assert_eq!(out.cells(), block_values.as_slice());
        assert_eq!(out.label(), ClassLabel::Local);
    }

    #[test]
    fn resize_extends_single_cell() {
        let map = map_from(1, 1, &[2], ClassLabel::NearFull);
        let out = resize_nearest(&map, 36).unwrap();
        assert_eq!(out.height(), 36);
        assert!(out.cells().iter().all(|&c| c == 2));
    }

    #[test]
    fn resize_values_are_subset_of_input() {
        let mut rng = crate::testutil::rng(50);
        for _ in 0..10 {
            let h = rand::Rng::gen_range(&mut rng, 1..50usize);
            let w = rand::Rng::gen_range(&mut rng, 1..50usize);
            let cells: Vec<u8> =
                (0..h * w).map(|_| rand::Rng::gen_range(&mut rng, 0..3u8)).collect();
            let map = map_from(h, w, &cells, ClassLabel::Scratch);
            let out = resize_nearest(&map, 36).unwrap();
            for &c in out.cells() {
                assert!(cells.contains(&c));
            }
        }
    }

    #[test]
    fn normalize_hand_values_and_round_trip() {
        let map = map_from(1, 3, &[0, 1, 2], ClassLabel::EdgeLoc);
        let t = normalize(&map);
        assert_eq!(t.shape(), &[1, 1, 3]);
        assert_eq!(t.data(), &[0.0, 0.5, 1.0]);
        let back = denormalize(&t, ClassLabel::EdgeLoc, Provenance::Real).unwrap();
        assert_eq!(back, map);

        let zeros = normalize(&map_from(2, 2, &[0; 4], ClassLabel::NoPattern));
        assert!(zeros.data().iter().all(|&x| x == 0.0));
        let twos = normalize(&map_from(2, 2, &[2; 4], ClassLabel::NearFull));
        assert!(twos.data().iter().all(|&x| x == 1.0));

        let mut bad = t.clone();
        bad.data_mut()[0] = 0.25;
        assert!(denormalize(&bad, ClassLabel::EdgeLoc, Provenance::Real).is_err());
    }

    #[test]
    fn sample_conversion_keeps_label() {
        let map = map_from(2, 2, &[2, 0, 1, 1], ClassLabel::Scratch);
        let sample = to_sample(&map);
        assert_eq!(sample.label, 7);
        assert_eq!(sample.input.shape(), &[1, 2, 2]);
    }

    #[test]
    fn class_counts_tally_labels() {
        let ds = Dataset::new(
            vec![
                map_from(1, 1, &[1], ClassLabel::Center),
                map_from(1, 1, &[1], ClassLabel::Center),
                map_from(1, 1, &[0], ClassLabel::Scratch),
            ],
            Provenance::Real,
        );
        let counts = ds.class_counts();
        assert_eq!(counts[1], 2);
        assert_eq!(counts[7], 1);
        assert_eq!(counts.iter().sum::<usize>(), 3);
    }
}
