//! Probe/gallery construction and CMC (rank-k) retrieval curves.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::claimstore::EnrolledFeature;
use crate::features::FusedDescriptor;
use crate::matcher::GalleryIndex;

/// A close-up image in a retrieval experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalItem {
    pub image_id: String,
    pub vehicle_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeGallery {
    pub probes: Vec<RetrievalItem>,
    pub gallery: Vec<RetrievalItem>,
}

/// Picks one close-up per vehicle as probe; the rest form the gallery.
/// Both lists come out ordered by vehicle then image id.
pub fn make_probe_gallery(
    closeups: &[RetrievalItem],
    seed: u64,
) -> Result<ProbeGallery, EvalError> {
    let mut by_vehicle: BTreeMap<&str, Vec<&RetrievalItem>> = BTreeMap::new();
    for item in closeups {
        by_vehicle.entry(&item.vehicle_id).or_default().push(item);
    }
    let short: Vec<String> = by_vehicle
        .iter()
        .filter(|(_, items)| items.len() < 2)
        .map(|(v, _)| v.to_string())
        .collect();
    if !short.is_empty() {
        return Err(EvalError::TooFewCloseUps(short));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(by_vehicle.len());
    let mut gallery = Vec::new();
    for items in by_vehicle.values_mut() {
        items.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let pick = rng.random_range(0..items.len());
        for (i, item) in items.iter().enumerate() {
            if i == pick {
                probes.push((*item).clone());
            } else {
                gallery.push((*item).clone());
            }
        }
    }
    Ok(ProbeGallery { probes, gallery })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    /// `rates[k - 1]` is the fraction of probes matched within rank `k`.
    pub rates: Vec<f64>,
    pub probe_count: usize,
}

impl CmcCurve {
    /// Rate at rank `k` (1-based); ranks past the end saturate.
    pub fn rank(&self, k: usize) -> f64 {
        assert!(k >= 1, "ranks are 1-based");
        self.rates[(k - 1).min(self.rates.len() - 1)]
    }
}

/// CMC over `probes` against `gallery`. A probe's correct matches are the
/// gallery entries of the same vehicle; ranking follows the matcher's order.
/// Probes whose vehicle is absent from the gallery count as never matched.
pub fn cmc<F, E>(
    probes: &[RetrievalItem],
    gallery: &[RetrievalItem],
    max_rank: usize,
    descriptor_fn: F,
) -> Result<CmcCurve, EvalError>
where
    F: Fn(&RetrievalItem) -> Result<FusedDescriptor, E> + Sync,
    E: std::fmt::Display,
{
    if max_rank == 0 {
        return Err(EvalError::Invalid("max_rank must be at least 1".into()));
    }
    if probes.is_empty() {
        return Err(EvalError::Invalid("no probes".into()));
    }
    let describe = |item: &RetrievalItem| {
        descriptor_fn(item).map_err(|e| EvalError::Descriptor {
            image_id: item.image_id.clone(),
            message: e.to_string(),
        })
    };
    let entries = gallery
        .par_iter()
        .enumerate()
        .map(|(i, item)| {
            Ok(EnrolledFeature {
                claim_id: item.image_id.clone(),
                vehicle_id: item.vehicle_id.clone(),
                image_id: item.image_id.clone(),
                descriptor: describe(item)?,
                enrolled_at: 0,
                enrollment_seq: i as u64,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let present: HashSet<&str> = gallery.iter().map(|g| g.vehicle_id.as_str()).collect();
    for p in probes
        .iter()
        .filter(|p| !present.contains(p.vehicle_id.as_str()))
    {
        log::warn!(
            "probe {} (vehicle {}) has no gallery match; counted as never matched",
            p.image_id,
            p.vehicle_id
        );
    }
    let index = GalleryIndex::build(&entries);
    let first_hits = probes
        .par_iter()
        .map(|p| {
            let hits = index
                .search(&describe(p)?, max_rank, |_| true)
                .map_err(|e| EvalError::Descriptor {
                    image_id: p.image_id.clone(),
                    message: e.to_string(),
                })?;
            Ok(hits.iter().position(|m| m.vehicle_id == p.vehicle_id))
        })
        .collect::<Result<Vec<Option<usize>>, EvalError>>()?;
    let mut counts = vec![0usize; max_rank];
    for pos in first_hits.into_iter().flatten() {
        counts[pos] += 1;
    }
    let n = probes.len();
    let mut cumulative = 0;
    let rates = counts
        .into_iter()
        .map(|c| {
            cumulative += c;
            cumulative as f64 / n as f64
        })
        .collect();
    Ok(CmcCurve {
        rates,
        probe_count: n,
    })
}
