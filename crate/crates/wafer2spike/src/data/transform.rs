//! The eight symmetries of the square grid (dihedral group D4) and the
//! class-balance augmentation built on the seven non-identity elements.
//! Transforms act on the raw cell grid, are exactly invertible, and never
//! touch the original maps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ClassLabel, Dataset, Provenance, WaferMap};
use crate::error::{Error, Result};

/// Non-identity elements of D4. Rotations are clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum D4Transform {
    Rot90,
    Rot180,
    Rot270,
    FlipHorizontal,
    FlipVertical,
    FlipDiagonal,
    FlipAntiDiagonal,
}

impl D4Transform {
    pub const ALL: [D4Transform; 7] = [
        D4Transform::Rot90,
        D4Transform::Rot180,
        D4Transform::Rot270,
        D4Transform::FlipHorizontal,
        D4Transform::FlipVertical,
        D4Transform::FlipDiagonal,
        D4Transform::FlipAntiDiagonal,
    ];

    pub fn inverse(self) -> D4Transform {
        match self {
            D4Transform::Rot90 => D4Transform::Rot270,
            D4Transform::Rot270 => D4Transform::Rot90,
            other => other,
        }
    }

    /// Applies the transform to a map's cell grid; rotations by a quarter
    /// turn and the diagonal flips swap height and width.
    pub fn apply(self, map: &WaferMap) -> WaferMap {
        let (h, w) = (map.height(), map.width());
        let swaps = matches!(
            self,
            D4Transform::Rot90
                | D4Transform::Rot270
                | D4Transform::FlipDiagonal
                | D4Transform::FlipAntiDiagonal
        );
        let (out_h, out_w) = if swaps { (w, h) } else { (h, w) };
        let mut cells = Vec::with_capacity(h * w);
        for i in 0..out_h {
            for j in 0..out_w {
                let (r, c) = match self {
                    D4Transform::Rot90 => (h - 1 - j, i),
                    D4Transform::Rot180 => (h - 1 - i, w - 1 - j),
                    D4Transform::Rot270 => (j, w - 1 - i),
                    D4Transform::FlipHorizontal => (i, w - 1 - j),
                    D4Transform::FlipVertical => (h - 1 - i, j),
                    D4Transform::FlipDiagonal => (j, i),
                    D4Transform::FlipAntiDiagonal => (h - 1 - j, w - 1 - i),
                };
                cells.push(map.cell(r, c));
            }
        }
        WaferMap::new(out_h, out_w, cells, map.label(), Provenance::Augmented)
            .expect("transform preserves cell count and codes")
    }
}

/// Raises under-target classes to their requested counts by appending D4
/// images of randomly chosen template maps. Originals are kept unchanged
/// and in order; generated maps are tagged [`Provenance::Augmented`].
///
/// With `allow_repeats` false, a target beyond the `7 × templates` distinct
/// (template, transform) pairs is an error; with it true the pool is drawn
/// from again and the returned flag reports that repeats occurred.
pub fn augment_minority(
    dataset: &Dataset,
    targets: &[(ClassLabel, usize)],
    seed: u64,
    allow_repeats: bool,
) -> Result<(Dataset, bool)> {
    let counts = dataset.class_counts();
    for &(label, target) in targets {
        let have = counts[label.code() as usize];
        if target < have {
            return Err(Error::Input(format!(
                "class {label} already has {have} maps, above the target {target}"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = dataset.maps.clone();
    let mut repeated = false;
    // Classes are processed in label order so results depend only on the
    // seed, not on the order targets were listed.
    let mut targets_sorted = targets.to_vec();
    targets_sorted.sort_by_key(|(label, _)| label.code());
    for (label, target) in targets_sorted {
        let templates: Vec<usize> = (0..dataset.maps.len())
            .filter(|&i| dataset.maps[i].label() == label)
            .collect();
        let have = templates.len();
        if target == have {
            continue;
        }
        if templates.is_empty() {
            return Err(Error::Input(format!(
                "class {label} has no template maps to augment from"
            )));
        }
        let mut deficit = target - have;
        let mut pool: Vec<(usize, D4Transform)> = templates
            .iter()
            .flat_map(|&i| D4Transform::ALL.iter().map(move |&t| (i, t)))
            .collect();
        if deficit > pool.len() && !allow_repeats {
            return Err(Error::Input(format!(
                "class {label} target {target} needs {deficit} new maps but only {} distinct \
                 (template, transform) pairs exist; enable repeats to proceed",
                pool.len()
            )));
        }
        while deficit > 0 {
            pool.shuffle(&mut rng);
            let take = deficit.min(pool.len());
            if take < deficit {
                repeated = true;
            }
            for &(idx, transform) in &pool[..take] {
                out.push(transform.apply(&dataset.maps[idx]));
            }
            deficit -= take;
            if deficit > 0 {
                repeated = true;
            }
        }
    }
    Ok((Dataset::new(out, Provenance::Augmented), repeated))
}
