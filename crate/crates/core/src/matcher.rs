//! Exact 1-to-N cosine search over enrolled descriptors and fraud scoring.
//!
//! [`search`] is the reference scan. [`search_fast`] caches gallery norms,
//! scans fixed-size blocks in parallel with a bounded top-k per block and
//! merges the blocks. Both evaluate the same floating-point expression per
//! entry, so their outputs agree exactly, ties included.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claimstore::{ClaimRecord, EnrolledFeature, GalleryFilter, StoreState};
use crate::features::FusedDescriptor;

/// Threshold calibrated on the synthetic fixture (seed 7, 50 vehicles):
/// midway between the highest novel-claim similarity and the lowest
/// duplicate-resubmission similarity.
pub const DEFAULT_THRESHOLD: f64 = 0.985;
pub const DEFAULT_TOP_K: usize = 10;

const SCAN_BLOCK: usize = 1024;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("vector dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("gallery entry {index} (claim {claim_id:?}, image {image_id:?}) does not share the probe layout")]
    LayoutMismatch {
        index: usize,
        claim_id: String,
        image_id: String,
    },
    #[error("invalid fraud policy: {0}")]
    InvalidPolicy(String),
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`; 0 when either norm is 0.
pub fn cosine_similarity<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64, MatchError> {
    if a.len() != b.len() {
        return Err(MatchError::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y): (f64, f64) = (x.into(), y.into());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    Ok(finish_cosine(dot, na.sqrt(), nb.sqrt()))
}

#[inline]
fn finish_cosine(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub claim_id: String,
    pub vehicle_id: String,
    pub image_id: String,
    pub similarity: f64,
    pub rank: usize,
    pub enrollment_seq: u64,
}

/// Ranking key: higher similarity first, then lower enrollment_seq.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    similarity: f64,
    seq: u64,
    index: usize,
}

impl Candidate {
    fn better(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then(self.seq.cmp(&other.seq))
    }
}

// Heap order: the worst candidate sits on top so it can be evicted.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.better(other)
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

fn check_layouts(probe: &FusedDescriptor, gallery: &[EnrolledFeature]) -> Result<(), MatchError> {
    match gallery
        .iter()
        .position(|f| f.descriptor.layout() != probe.layout())
    {
        Some(index) => Err(MatchError::LayoutMismatch {
            index,
            claim_id: gallery[index].claim_id.clone(),
            image_id: gallery[index].image_id.clone(),
        }),
        None => Ok(()),
    }
}

fn to_results(
    gallery: &[EnrolledFeature],
    ranked: impl IntoIterator<Item = Candidate>,
) -> Vec<MatchResult> {
    ranked
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let f = &gallery[c.index];
            MatchResult {
                claim_id: f.claim_id.clone(),
                vehicle_id: f.vehicle_id.clone(),
                image_id: f.image_id.clone(),
                similarity: c.similarity,
                rank: i + 1,
                enrollment_seq: f.enrollment_seq,
            }
        })
        .collect()
}

/// Reference scan: score every accepted entry, sort, take `k`.
pub fn search<F>(
    probe: &FusedDescriptor,
    gallery: &[EnrolledFeature],
    k: usize,
    filter: F,
) -> Result<Vec<MatchResult>, MatchError>
where
    F: Fn(&EnrolledFeature) -> bool,
{
    check_layouts(probe, gallery)?;
    let mut scored = Vec::new();
    for (index, f) in gallery.iter().enumerate() {
        if !filter(f) {
            continue;
        }
        scored.push(Candidate {
            similarity: cosine_similarity(probe.values(), f.descriptor.values())?,
            seq: f.enrollment_seq,
            index,
        });
    }
    scored.sort_by(Candidate::better);
    scored.truncate(k);
    Ok(to_results(gallery, scored))
}

const LANES: usize = 8;

/// Sum of `a[i] * b[i]` in f64 over independent accumulator lanes, so the
/// loop is not bound by one add-latency chain.
fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let mut s: f64 = acc.iter().sum();
    for (&x, &y) in ra.iter().zip(rb) {
        s += x as f64 * y as f64;
    }
    s
}

fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// Gallery with cached descriptor norms, reusable across probes.
pub struct GalleryIndex<'a> {
    gallery: &'a [EnrolledFeature],
    norms: Vec<f64>,
}

impl<'a> GalleryIndex<'a> {
    pub fn build(gallery: &'a [EnrolledFeature]) -> Self {
        let norms = gallery
            .par_iter()
            .map(|f| norm(f.descriptor.values()))
            .collect();
        Self { gallery, norms }
    }

    pub fn search<F>(
        &self,
        probe: &FusedDescriptor,
        k: usize,
        filter: F,
    ) -> Result<Vec<MatchResult>, MatchError>
    where
        F: Fn(&EnrolledFeature) -> bool + Sync,
    {
        check_layouts(probe, self.gallery)?;
        if k == 0 || self.gallery.is_empty() {
            return Ok(Vec::new());
        }
        let p = probe.values();
        let probe_norm = norm(p);
        let partials: Vec<BinaryHeap<Candidate>> = self
            .gallery
            .par_chunks(SCAN_BLOCK)
            .enumerate()
            .map(|(block, chunk)| {
                let base = block * SCAN_BLOCK;
                let mut heap = BinaryHeap::with_capacity(k + 1);
                for (offset, f) in chunk.iter().enumerate() {
                    if !filter(f) {
                        continue;
                    }
                    let index = base + offset;
                    let c = Candidate {
                        similarity: finish_cosine(
                            dot(p, f.descriptor.values()),
                            probe_norm,
                            self.norms[index],
                        ),
                        seq: f.enrollment_seq,
                        index,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if heap
                        .peek()
                        .is_some_and(|worst| c.better(worst) == Ordering::Less)
                    {
                        heap.pop();
                        heap.push(c);
                    }
                }
                heap
            })
            .collect();
        let mut merged: Vec<Candidate> = partials.into_iter().flatten().collect();
        merged.sort_by(Candidate::better);
        merged.truncate(k);
        Ok(to_results(self.gallery, merged))
    }
}

/// Same contract as [`search`], on the blocked parallel path.
pub fn search_fast<F>(
    probe: &FusedDescriptor,
    gallery: &[EnrolledFeature],
    k: usize,
    filter: F,
) -> Result<Vec<MatchResult>, MatchError>
where
    F: Fn(&EnrolledFeature) -> bool + Sync,
{
    GalleryIndex::build(gallery).search(probe, k, filter)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FraudMode {
    /// Search the whole history.
    CrossVehicle,
    /// Search only the probe vehicle's own history.
    SameVehicle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FraudPolicy {
    pub mode: FraudMode,
    pub threshold: f64,
    pub top_k: usize,
}

impl Default for FraudPolicy {
    fn default() -> Self {
        Self {
            mode: FraudMode::CrossVehicle,
            threshold: DEFAULT_THRESHOLD,
            top_k: DEFAULT_TOP_K,
        }
    }
}

impl FraudPolicy {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.top_k == 0 {
            return Err(MatchError::InvalidPolicy("top_k must be at least 1".into()));
        }
        if !(self.threshold.is_finite() && (-1.0..=1.0).contains(&self.threshold)) {
            return Err(MatchError::InvalidPolicy(format!(
                "threshold {} outside [-1, 1]",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn gallery_filter(&self, probe_claim: &ClaimRecord) -> GalleryFilter {
        GalleryFilter {
            exclude_claim: Some(probe_claim.claim_id.clone()),
            only_vehicle: match self.mode {
                FraudMode::SameVehicle => Some(probe_claim.vehicle_id.clone()),
                FraudMode::CrossVehicle => None,
            },
            ..GalleryFilter::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FraudAssessment {
    pub flagged: bool,
    pub best: Option<MatchResult>,
    pub matches: Vec<MatchResult>,
    pub policy: FraudPolicy,
}

/// Scores a claim's descriptors against the history. Each gallery entry is
/// scored by its best similarity over all probe descriptors.
pub fn fraud_check(
    probe_claim: &ClaimRecord,
    probe_descriptors: &[FusedDescriptor],
    store: &StoreState,
    policy: &FraudPolicy,
) -> Result<FraudAssessment, MatchError> {
    policy.validate()?;
    let filter = policy.gallery_filter(probe_claim);
    let index = GalleryIndex::build(store.features());
    let mut best_per_entry: HashMap<u64, MatchResult> = HashMap::new();
    for probe in probe_descriptors {
        for m in index.search(probe, policy.top_k, |f| store.accepts(&filter, f))? {
            match best_per_entry.get(&m.enrollment_seq) {
                Some(prev) if prev.similarity >= m.similarity => {}
                _ => {
                    best_per_entry.insert(m.enrollment_seq, m);
                }
            }
        }
    }
    let mut matches: Vec<MatchResult> = best_per_entry.into_values().collect();
    matches.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.enrollment_seq.cmp(&b.enrollment_seq))
    });
    matches.truncate(policy.top_k);
    for (i, m) in matches.iter_mut().enumerate() {
        m.rank = i + 1;
    }
    let best = matches.first().cloned();
    let flagged = best
        .as_ref()
        .is_some_and(|b| b.similarity >= policy.threshold);
    Ok(FraudAssessment {
        flagged,
        best,
        matches,
        policy: *policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claimstore::{
        ClaimStore, Clock, DamageClass, DamageRegion, ImageDescriptor, ImageEvidence, ImageKind,
        NormalizedBBox, StoreOptions,
    };
    use crate::features::{BlockWeights, FusionConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn layout(dim: usize) -> FusionConfig {
        FusionConfig {
            local_dim: dim,
            global_dim: 1,
            hist_bins: 0,
            block_weights: BlockWeights::default(),
        }
    }

    /// Descriptor whose local block is `v` and whose global block is 0.
    fn d(v: &[f32]) -> FusedDescriptor {
        let mut values = v.to_vec();
        values.push(0.0);
        FusedDescriptor::from_raw(layout(v.len()), values).unwrap()
    }

    fn feature(i: usize, vehicle: &str, v: &[f32]) -> EnrolledFeature {
        EnrolledFeature {
            claim_id: format!("g{i}"),
            vehicle_id: vehicle.into(),
            image_id: format!("g{i}-img"),
            descriptor: d(v),
            enrolled_at: 0,
            enrollment_seq: i as u64,
        }
    }

    fn all(_: &EnrolledFeature) -> bool {
        true
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 32.0 / (14f64.sqrt() * 77f64.sqrt())).abs() < 1e-12);
        assert!((c - 0.974632).abs() < 1e-6);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(MatchError::DimMismatch { .. })
        ));
    }

    #[test]
    fn search_hand_cosines() {
        let gallery = vec![
            feature(1, "a", &[1.0, 0.0]),
            feature(2, "b", &[0.6, 0.8]),
            feature(3, "c", &[0.0, 1.0]),
        ];
        for run in [search::<fn(&EnrolledFeature) -> bool>, search_fast] {
            let r = run(&d(&[1.0, 0.0]), &gallery, 3, all).unwrap();
            let ids: Vec<_> = r.iter().map(|m| m.claim_id.as_str()).collect();
            assert_eq!(ids, ["g1", "g2", "g3"]);
            let sims: Vec<_> = r.iter().map(|m| m.similarity).collect();
            assert!((sims[0] - 1.0).abs() < 1e-12);
            assert!((sims[1] - 0.6).abs() < 1e-6);
            assert!(sims[2].abs() < 1e-12);
            assert_eq!(r.iter().map(|m| m.rank).collect::<Vec<_>>(), [1, 2, 3]);
        }
    }

    #[test]
    fn k_is_clamped_and_empty_gallery_is_empty() {
        let gallery: Vec<_> = (0..4).map(|i| feature(i, "v", &[1.0, i as f32])).collect();
        assert_eq!(search(&d(&[1.0, 0.0]), &gallery, 10, all).unwrap().len(), 4);
        assert_eq!(
            search_fast(&d(&[1.0, 0.0]), &gallery, 10, all)
                .unwrap()
                .len(),
            4
        );
        assert!(search_fast(&d(&[1.0, 0.0]), &[], 10, all)
            .unwrap()
            .is_empty());
        assert!(search(&d(&[1.0, 0.0]), &[], 10, all).unwrap().is_empty());
    }

    #[test]
    fn ties_break_by_enrollment_seq() {
        let gallery: Vec<_> = [5usize, 2, 9]
            .iter()
            .map(|&i| feature(i, "v", &[0.3, 0.4]))
            .collect();
        let r = search_fast(&d(&[3.0, 4.0]), &gallery, 3, all).unwrap();
        let seqs: Vec<_> = r.iter().map(|m| m.enrollment_seq).collect();
        assert_eq!(seqs, [2, 5, 9]);
    }

    #[test]
    fn layout_mismatch_names_entry() {
        let gallery = vec![
            feature(1, "a", &[1.0, 0.0]),
            feature(2, "b", &[1.0, 0.0, 0.0]),
        ];
        let err = search(&d(&[1.0, 0.0]), &gallery, 3, all).unwrap_err();
        assert_eq!(
            err,
            MatchError::LayoutMismatch {
                index: 1,
                claim_id: "g2".into(),
                image_id: "g2-img".into()
            }
        );
        assert_eq!(
            search_fast(&d(&[1.0, 0.0]), &gallery, 3, all).unwrap_err(),
            err
        );
    }

    #[test]
    fn fast_matches_reference_on_large_gallery() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let gallery: Vec<_> = (0..5000)
            .map(|i| {
                let v: Vec<f32> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
                feature(i, if i % 7 == 0 { "x" } else { "y" }, &v)
            })
            .collect();
        let probe: Vec<f32> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let filt = |f: &EnrolledFeature| f.vehicle_id != "x";
        let a = search(&d(&probe), &gallery, 25, filt).unwrap();
        let b = search_fast(&d(&probe), &gallery, 25, filt).unwrap();
        assert_eq!(a, b);
    }

    fn claim(id: &str, vehicle: &str) -> ClaimRecord {
        let b = NormalizedBBox::new(0.5, 0.5, 0.5, 0.5).unwrap();
        ClaimRecord::new(
            id,
            vehicle,
            0,
            vec![
                ImageEvidence {
                    image_id: "body".into(),
                    kind: ImageKind::FullBody,
                    content_ref: "body.png".into(),
                    regions: vec![],
                },
                ImageEvidence {
                    image_id: "close".into(),
                    kind: ImageKind::CloseUp,
                    content_ref: "close.png".into(),
                    regions: vec![DamageRegion::annotation(b, DamageClass::Dent)],
                },
            ],
        )
    }

    fn store_with(entries: &[(&str, &str, [f32; 2])]) -> ClaimStore {
        let mut s = ClaimStore::in_memory(
            layout(2),
            StoreOptions {
                clock: Clock::Fixed(0),
                sync: false,
                snapshot_every: None,
            },
        )
        .unwrap();
        for (id, vehicle, v) in entries {
            s.enroll_claim(
                claim(id, vehicle),
                vec![ImageDescriptor {
                    image_id: "close".into(),
                    descriptor: d(v),
                }],
            )
            .unwrap();
        }
        s
    }

    #[test]
    fn fraud_check_flags_exact_duplicate() {
        let s = store_with(&[("A", "V1", [1.0, 0.2]), ("B", "V2", [0.0, 1.0])]);
        let probe = claim("NEW", "V9");
        let a = fraud_check(
            &probe,
            &[d(&[1.0, 0.2])],
            s.state(),
            &FraudPolicy::default(),
        )
        .unwrap();
        assert!(a.flagged);
        let best = a.best.unwrap();
        assert_eq!(best.claim_id, "A");
        assert!((best.similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn fraud_check_empty_history() {
        let s = store_with(&[]);
        let a = fraud_check(
            &claim("NEW", "V"),
            &[d(&[1.0, 0.0])],
            s.state(),
            &FraudPolicy::default(),
        )
        .unwrap();
        assert!(!a.flagged);
        assert!(a.best.is_none());
        assert!(a.matches.is_empty());
    }

    #[test]
    fn fraud_check_excludes_own_claim_and_honors_mode() {
        let s = store_with(&[
            ("A", "V1", [1.0, 0.0]),
            ("B", "V2", [1.0, 0.1]),
            ("C", "V1", [0.0, 1.0]),
        ]);
        let probe = claim("A", "V1");
        let cross = fraud_check(
            &probe,
            &[d(&[1.0, 0.0])],
            s.state(),
            &FraudPolicy::default(),
        )
        .unwrap();
        assert!(cross.matches.iter().all(|m| m.claim_id != "A"));
        assert_eq!(cross.best.unwrap().claim_id, "B");
        let same = FraudPolicy {
            mode: FraudMode::SameVehicle,
            ..FraudPolicy::default()
        };
        let a = fraud_check(&probe, &[d(&[1.0, 0.0])], s.state(), &same).unwrap();
        assert!(a
            .matches
            .iter()
            .all(|m| m.vehicle_id == "V1" && m.claim_id != "A"));
        assert_eq!(a.best.unwrap().claim_id, "C");
    }

    #[test]
    fn multiple_probe_descriptors_take_best() {
        let s = store_with(&[("A", "V1", [1.0, 0.0]), ("B", "V2", [0.0, 1.0])]);
        let a = fraud_check(
            &claim("N", "V3"),
            &[d(&[1.0, 0.05]), d(&[0.0, 1.0])],
            s.state(),
            &FraudPolicy::default(),
        )
        .unwrap();
        assert_eq!(a.matches.len(), 2);
        assert_eq!(a.best.as_ref().unwrap().claim_id, "B");
        assert!((a.best.unwrap().similarity - 1.0).abs() < 1e-9);
        assert_eq!(a.matches[1].claim_id, "A");
        assert_eq!(a.matches[1].rank, 2);
    }

    #[test]
    fn invalid_policy_rejected() {
        let s = store_with(&[]);
        let bad = FraudPolicy {
            top_k: 0,
            ..FraudPolicy::default()
        };
        assert!(fraud_check(&claim("N", "V"), &[], s.state(), &bad).is_err());
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(prop_oneof![4 => -1.0f32..1.0, 1 => Just(0.0f32)], n)
    }

    proptest! {
        #[test]
        fn fast_equals_reference(
            rows in proptest::collection::vec(arb_vec(6), 0..80),
            probe in arb_vec(6),
            k in 1usize..20,
            dup in any::<bool>(),
        ) {
            let mut gallery: Vec<_> = rows.iter().enumerate().map(|(i, v)| feature(i, if i % 3 == 0 { "a" } else { "b" }, v)).collect();
            if dup && !gallery.is_empty() {
                let copy = gallery[0].descriptor.values()[..6].to_vec();
                let n = gallery.len();
                gallery.push(feature(n, "b", &copy));
            }
            let filt = |f: &EnrolledFeature| f.vehicle_id == "b";
            let a = search(&d(&probe), &gallery, k, filt).unwrap();
            let b = search_fast(&d(&probe), &gallery, k, filt).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(&x.claim_id, &y.claim_id);
                prop_assert_eq!(x.rank, y.rank);
                prop_assert!((x.similarity - y.similarity).abs() <= 1e-6);
            }
        }

        #[test]
        fn cosine_is_symmetric(a in arb_vec(9), b in arb_vec(9)) {
            prop_assert_eq!(cosine_similarity(&a, &b).unwrap(), cosine_similarity(&b, &a).unwrap());
        }

        #[test]
        fn power_of_two_scaling_keeps_order(rows in proptest::collection::vec(arb_vec(5), 1..40), probe in arb_vec(5), e in -4i32..4) {
            let s = 2f32.powi(e);
            let gallery: Vec<_> = rows.iter().enumerate().map(|(i, v)| feature(i, "v", v)).collect();
            let scaled: Vec<_> = rows.iter().enumerate().map(|(i, v)| {
                feature(i, "v", &v.iter().map(|x| x * s).collect::<Vec<_>>())
            }).collect();
            let sp: Vec<f32> = probe.iter().map(|x| x * s).collect();
            let a: Vec<_> = search(&d(&probe), &gallery, 100, all).unwrap().into_iter().map(|m| m.claim_id).collect();
            let b: Vec<_> = search(&d(&sp), &scaled, 100, all).unwrap().into_iter().map(|m| m.claim_id).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn flagging_is_monotone_in_threshold(v in arb_vec(2), t1 in -1.0f64..=1.0, t2 in -1.0f64..=1.0) {
            let s = store_with(&[("A", "V1", [1.0, 0.3]), ("B", "V2", [-0.2, 1.0])]);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let probe = claim("N", "V3");
            let at = |t| fraud_check(&probe, &[d(&v)], s.state(), &FraudPolicy { threshold: t, ..FraudPolicy::default() }).unwrap().flagged;
            prop_assert!(!at(hi) || at(lo));
        }
    }
}
