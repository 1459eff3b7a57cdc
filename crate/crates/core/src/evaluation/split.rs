//! Train/test split protocols.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Every vehicle can appear on both sides; images never do.
    SubjectOverlapped,
    /// Vehicles are exclusive to one side.
    SubjectDisjoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetImage {
    pub image_id: String,
    pub vehicle_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

/// Train share of `n` items: `round(fraction * n)`, clamped so both sides get
/// at least one item when `n >= 2`.
pub fn train_count(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return n;
    }
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

pub fn make_split(
    images: &[DatasetImage],
    mode: SplitMode,
    seed: u64,
) -> Result<SplitSpec, EvalError> {
    make_split_with_fraction(images, mode, seed, DEFAULT_TRAIN_FRACTION)
}

/// Deterministic in `(images as a set, mode, seed, fraction)`: input order
/// does not matter.
pub fn make_split_with_fraction(
    images: &[DatasetImage],
    mode: SplitMode,
    seed: u64,
    fraction: f64,
) -> Result<SplitSpec, EvalError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EvalError::Invalid(format!(
            "train fraction {fraction} outside (0, 1)"
        )));
    }
    let mut by_vehicle: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for img in images {
        if !seen.insert(img.image_id.as_str()) {
            return Err(EvalError::Invalid(format!(
                "duplicate image_id {:?}",
                img.image_id
            )));
        }
        by_vehicle
            .entry(&img.vehicle_id)
            .or_default()
            .push(&img.image_id);
    }
    for ids in by_vehicle.values_mut() {
        ids.sort_unstable();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = BTreeSet::new();
    let mut test_ids = BTreeSet::new();
    match mode {
        SplitMode::SubjectDisjoint => {
            if by_vehicle.len() < 2 {
                return Err(EvalError::Invalid(format!(
                    "subject-disjoint split needs at least 2 vehicles, got {}",
                    by_vehicle.len()
                )));
            }
            let mut vehicles: Vec<&str> = by_vehicle.keys().copied().collect();
            vehicles.shuffle(&mut rng);
            let n_train = train_count(vehicles.len(), fraction);
            for (i, v) in vehicles.iter().enumerate() {
                let side = if i < n_train {
                    &mut train_ids
                } else {
                    &mut test_ids
                };
                side.extend(by_vehicle[v].iter().map(|s| s.to_string()));
            }
        }
        SplitMode::SubjectOverlapped => {
            for ids in by_vehicle.values() {
                let mut ids = ids.clone();
                ids.shuffle(&mut rng);
                let n_train = train_count(ids.len(), fraction);
                for (i, id) in ids.into_iter().enumerate() {
                    let side = if i < n_train {
                        &mut train_ids
                    } else {
                        &mut test_ids
                    };
                    side.insert(id.to_string());
                }
            }
        }
    }
    Ok(SplitSpec {
        mode,
        seed,
        train_ids,
        test_ids,
    })
}
