//! Seeded dataset splitting: shuffle, then partition by ratios, either
//! globally or stratified per class. Part sizes are floor-based with the
//! remainder assigned to the first part, so an 8:2 split of 172,950 maps is
//! exactly 138,360 / 34,590.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{ClassLabel, Dataset};
use crate::error::{Error, Result};

/// Ratios, seed, and stratification flag for one split.
#[derive(Clone, Debug)]
pub struct SplitSpec {
    /// 1 to 3 positive ratios summing to 1 (within 1e-9).
    pub ratios: Vec<f64>,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() || self.ratios.len() > 3 {
            return Err(Error::Input(format!(
                "{} split parts; expected 1 to 3",
                self.ratios.len()
            )));
        }
        if self.ratios.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Input(format!("ratios must be positive: {:?}", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("ratios {:?} sum to {sum}, not 1", self.ratios)));
        }
        Ok(())
    }
}

/// Floor-based part sizes with the remainder on the first part.
fn part_sizes(n: usize, ratios: &[f64]) -> Vec<usize> {
    let mut sizes: Vec<usize> = ratios.iter().map(|&r| (r * n as f64).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    sizes[0] += n - assigned;
    sizes
}

fn partition(indices: Vec<usize>, ratios: &[f64]) -> Vec<Vec<usize>> {
    let sizes = part_sizes(indices.len(), ratios);
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for size in sizes {
        parts.push(indices[start..start + size].to_vec());
        start += size;
    }
    parts
}

/// Splits a dataset into disjoint, exhaustive parts per the given
/// `SplitSpec`. The same seed always produces the same split.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Vec<Dataset>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_parts = spec.ratios.len();
    let mut part_indices: Vec<Vec<usize>> = vec![Vec::new(); n_parts];

    if spec.stratified {
        // Per class: shuffle that class's members, split by ratios, then
        // append to each part in class order.
        for label in ClassLabel::ALL {
            let mut members: Vec<usize> = (0..dataset.maps.len())
                .filter(|&i| dataset.maps[i].label() == label)
                .collect();
            if members.is_empty() {
                continue;
            }
            members.shuffle(&mut rng);
            for (part, idx) in part_indices.iter_mut().zip(partition(members, &spec.ratios)) {
                part.extend(idx);
            }
        }
    } else {
        let mut order: Vec<usize> = (0..dataset.maps.len()).collect();
        order.shuffle(&mut rng);
        part_indices = partition(order, &spec.ratios);
    }

    Ok(part_indices
        .into_iter()
        .map(|idx| {
            Dataset::new(
                idx.into_iter().map(|i| dataset.maps[i].clone()).collect(),
                dataset.provenance,
            )
        })
        .collect())
}
