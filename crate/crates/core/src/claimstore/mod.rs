//! Claim-history store: claim records, their enrolled descriptors and the
//! status lifecycle.
//!
//! Mutations go through a single `&mut ClaimStore` writer and are appended to
//! `log.bin` (fsynced) before they become visible. Readers take an immutable
//! [`StoreSnapshot`] that can be shared across threads and is unaffected by
//! later writes.
//!
//! Layout of a store directory:
//!
//! - `log.bin`: every event since creation, the source of truth.
//! - `snapshot.bin` + `features.f32`: a compaction of a log prefix written by
//!   [`ClaimStore::checkpoint`]. Opening loads it and replays the log tail.

mod persist;
mod types;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use persist::{
    block_header, layout_from_header, read_features_file, write_features_file, BlockHeader,
    FEATURES_FILE, LOG_FILE, SNAPSHOT_FILE,
};
pub use types::*;

use crate::features::{FeatureError, FusedDescriptor, FusionConfig};
use persist::{FeatureMeta, LogEntry, LogEvent, LogWriter, SnapshotBody};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("claim {0:?} already exists")]
    DuplicateClaim(String),
    #[error("claim {0:?} not found")]
    NotFound(String),
    #[error("descriptor layout mismatch: {message}")]
    LayoutMismatch { message: String },
    #[error("claim evidence needs at least one {kind:?} image")]
    MissingEvidence { kind: ImageKind },
    #[error("invalid normalized box (cx={cx}, cy={cy}, w={w}, h={h})")]
    InvalidBBox { cx: f64, cy: f64, w: f64, h: f64 },
    #[error("{field}: {message}")]
    Validation { field: String, message: String },
    #[error("claim {claim_id:?} cannot move from {from} to {to}")]
    IllegalTransition {
        claim_id: String,
        from: ClaimStatus,
        to: ClaimStatus,
    },
    #[error("{}: corrupt store file: {message}", path.display())]
    Corrupt { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    /// Every timestamp reads this value; for reproducible runs.
    Fixed(TimestampMs),
}

impl Clock {
    pub fn now(&self) -> TimestampMs {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as TimestampMs)
                .unwrap_or(0),
            Clock::Fixed(t) => *t,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub clock: Clock,
    /// fsync the log after every append.
    pub sync: bool,
    /// Write a snapshot after this many events since the last one.
    pub snapshot_every: Option<u64>,
}

impl Default for StoreOptions {
    fn default() -> Self {
        Self {
            clock: Clock::System,
            sync: true,
            snapshot_every: Some(1024),
        }
    }
}

/// Conjunction of optional predicates over enrolled features.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GalleryFilter {
    #[serde(default)]
    pub exclude_claim: Option<String>,
    #[serde(default)]
    pub only_vehicle: Option<String>,
    #[serde(default)]
    pub exclude_vehicle: Option<String>,
    #[serde(default)]
    pub status_in: Option<Vec<ClaimStatus>>,
}

impl GalleryFilter {
    pub fn excluding_claim(claim_id: impl Into<String>) -> Self {
        Self {
            exclude_claim: Some(claim_id.into()),
            ..Self::default()
        }
    }

    pub fn accepts(&self, feature: &EnrolledFeature, status: ClaimStatus) -> bool {
        self.exclude_claim.as_deref() != Some(feature.claim_id.as_str())
            && self
                .only_vehicle
                .as_deref()
                .is_none_or(|v| v == feature.vehicle_id)
            && self.exclude_vehicle.as_deref() != Some(feature.vehicle_id.as_str())
            && self
                .status_in
                .as_ref()
                .is_none_or(|set| set.contains(&status))
    }
}

/// Immutable state of a store at some point in its history.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreState {
    layout: FusionConfig,
    claims: BTreeMap<String, ClaimRecord>,
    features: Vec<EnrolledFeature>,
    audit: Vec<AuditEntry>,
    next_seq: u64,
}

pub type StoreSnapshot = Arc<StoreState>;

impl StoreState {
    fn new(layout: FusionConfig) -> Self {
        Self {
            layout,
            claims: BTreeMap::new(),
            features: Vec::new(),
            audit: Vec::new(),
            next_seq: 1,
        }
    }

    pub fn layout(&self) -> &FusionConfig {
        &self.layout
    }

    pub fn get_claim(&self, claim_id: &str) -> Option<&ClaimRecord> {
        self.claims.get(claim_id)
    }

    pub fn claims(&self) -> impl Iterator<Item = &ClaimRecord> {
        self.claims.values()
    }

    pub fn claim_count(&self) -> usize {
        self.claims.len()
    }

    /// All enrolled features in enrollment order.
    pub fn features(&self) -> &[EnrolledFeature] {
        &self.features
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn status_of(&self, claim_id: &str) -> Option<ClaimStatus> {
        self.claims.get(claim_id).map(|c| c.status)
    }

    /// Features accepted by `filter`, ascending by `enrollment_seq`.
    pub fn list_gallery(&self, filter: &GalleryFilter) -> Vec<&EnrolledFeature> {
        self.features
            .iter()
            .filter(|f| self.accepts(filter, f))
            .collect()
    }

    pub fn accepts(&self, filter: &GalleryFilter, feature: &EnrolledFeature) -> bool {
        let status = self
            .status_of(&feature.claim_id)
            .expect("every feature belongs to a stored claim");
        filter.accepts(feature, status)
    }

    pub fn features_of<'a>(
        &'a self,
        claim_id: &'a str,
    ) -> impl Iterator<Item = &'a EnrolledFeature> + 'a {
        self.features.iter().filter(move |f| f.claim_id == claim_id)
    }

    fn apply(&mut self, entry: LogEntry) -> Result<(), String> {
        match entry.event {
            LogEvent::Init { layout } => {
                if self.claims.is_empty() && self.features.is_empty() {
                    self.layout = layout;
                    Ok(())
                } else {
                    Err("init event after data".into())
                }
            }
            LogEvent::Enroll {
                record,
                features,
                at,
            } => {
                if self.claims.contains_key(&record.claim_id) {
                    return Err(format!("duplicate claim {}", record.claim_id));
                }
                let dim = self.layout.total_dim();
                if entry.values.len() != features.len() * dim {
                    return Err(format!(
                        "enroll of {} carries wrong vector count",
                        record.claim_id
                    ));
                }
                for (meta, row) in features
                    .into_iter()
                    .zip(entry.values.chunks_exact(dim.max(1)))
                {
                    if meta.enrollment_seq < self.next_seq {
                        return Err(format!(
                            "non-monotone enrollment_seq {}",
                            meta.enrollment_seq
                        ));
                    }
                    self.next_seq = meta.enrollment_seq + 1;
                    let descriptor = FusedDescriptor::from_raw(self.layout, row.to_vec())
                        .map_err(|e| e.to_string())?;
                    self.features.push(EnrolledFeature {
                        claim_id: meta.claim_id,
                        vehicle_id: meta.vehicle_id,
                        image_id: meta.image_id,
                        descriptor,
                        enrolled_at: meta.enrolled_at,
                        enrollment_seq: meta.enrollment_seq,
                    });
                }
                self.audit.push(AuditEntry {
                    at,
                    claim_id: record.claim_id.clone(),
                    from: None,
                    to: record.status,
                    reviewer_id: None,
                });
                self.claims.insert(record.claim_id.clone(), record);
                Ok(())
            }
            LogEvent::Status {
                claim_id,
                from,
                to,
                adjudication,
                at,
            } => {
                let claim = self
                    .claims
                    .get_mut(&claim_id)
                    .ok_or_else(|| format!("status change for unknown claim {claim_id}"))?;
                if claim.status != from || !from.can_transition_to(to) {
                    return Err(format!("illegal transition {from} -> {to} for {claim_id}"));
                }
                claim.status = to;
                let reviewer_id = adjudication.as_ref().map(|a| a.reviewer_id.clone());
                if adjudication.is_some() {
                    claim.adjudication = adjudication;
                }
                self.audit.push(AuditEntry {
                    at,
                    claim_id,
                    from: Some(from),
                    to,
                    reviewer_id,
                });
                Ok(())
            }
        }
    }

    fn to_snapshot_body(&self) -> SnapshotBody {
        SnapshotBody {
            layout: self.layout,
            claims: self.claims.values().cloned().collect(),
            features: self
                .features
                .iter()
                .map(|f| FeatureMeta {
                    claim_id: f.claim_id.clone(),
                    vehicle_id: f.vehicle_id.clone(),
                    image_id: f.image_id.clone(),
                    enrolled_at: f.enrolled_at,
                    enrollment_seq: f.enrollment_seq,
                })
                .collect(),
            audit: self.audit.clone(),
            next_seq: self.next_seq,
        }
    }

    fn from_snapshot(body: SnapshotBody, rows: Vec<f32>) -> Result<Self, String> {
        let dim = body.layout.total_dim();
        let mut features = Vec::with_capacity(body.features.len());
        for (meta, row) in body.features.into_iter().zip(rows.chunks_exact(dim.max(1))) {
            features.push(EnrolledFeature {
                claim_id: meta.claim_id,
                vehicle_id: meta.vehicle_id,
                image_id: meta.image_id,
                descriptor: FusedDescriptor::from_raw(body.layout, row.to_vec())
                    .map_err(|e| e.to_string())?,
                enrolled_at: meta.enrolled_at,
                enrollment_seq: meta.enrollment_seq,
            });
        }
        Ok(Self {
            layout: body.layout,
            claims: body
                .claims
                .into_iter()
                .map(|c| (c.claim_id.clone(), c))
                .collect(),
            features,
            audit: body.audit,
            next_seq: body.next_seq,
        })
    }
}

struct DiskState {
    dir: PathBuf,
    writer: LogWriter,
    events: u64,
    since_snapshot: u64,
}

pub struct ClaimStore {
    state: StoreSnapshot,
    disk: Option<DiskState>,
    options: StoreOptions,
}

impl std::fmt::Debug for ClaimStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClaimStore")
            .field("dir", &self.disk.as_ref().map(|d| &d.dir))
            .field("claims", &self.state.claims.len())
            .field("features", &self.state.features.len())
            .finish()
    }
}

impl ClaimStore {
    pub fn in_memory(layout: FusionConfig, options: StoreOptions) -> Result<Self, StoreError> {
        layout.validate()?;
        Ok(Self {
            state: Arc::new(StoreState::new(layout)),
            disk: None,
            options,
        })
    }

    /// Opens the store in `dir`, creating it with `layout` if it does not
    /// exist yet. An existing store must have the same layout.
    pub fn open_or_create(
        dir: &Path,
        layout: FusionConfig,
        options: StoreOptions,
    ) -> Result<Self, StoreError> {
        layout.validate()?;
        if dir.join(LOG_FILE).exists() {
            let store = Self::open(dir, options)?;
            if store.state.layout != layout {
                return Err(StoreError::LayoutMismatch {
                    message: format!(
                        "store at {} has layout {:?}, requested {:?}",
                        dir.display(),
                        store.state.layout,
                        layout
                    ),
                });
            }
            return Ok(store);
        }
        std::fs::create_dir_all(dir).map_err(|source| StoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let log_path = dir.join(LOG_FILE);
        let mut writer = LogWriter::create(&log_path, options.sync)?;
        writer.append(&persist::encode_entry(&LogEvent::Init { layout }, &[]))?;
        Ok(Self {
            state: Arc::new(StoreState::new(layout)),
            disk: Some(DiskState {
                dir: dir.to_path_buf(),
                writer,
                events: 1,
                since_snapshot: 1,
            }),
            options,
        })
    }

    /// Opens an existing store: snapshot (if valid) plus log tail.
    pub fn open(dir: &Path, options: StoreOptions) -> Result<Self, StoreError> {
        let log_path = dir.join(LOG_FILE);
        let from_snapshot = match persist::read_snapshot(dir) {
            Ok(Some(snap)) => match StoreState::from_snapshot(snap.body, snap.rows) {
                Ok(state) => Some((state, snap.events, snap.log_offset)),
                Err(e) => {
                    log::warn!("{}: unusable snapshot ({e}), replaying log", dir.display());
                    None
                }
            },
            Ok(None) => None,
            Err(e) => {
                log::warn!("{}: unusable snapshot ({e}), replaying log", dir.display());
                None
            }
        };

        let (state, events, since_snapshot, valid_len) = match from_snapshot {
            Some((mut state, covered, offset)) => {
                let scan = persist::scan_log(&log_path, offset)?;
                warn_torn(&log_path, &scan);
                let tail = scan.entries.len() as u64;
                for entry in scan.entries {
                    state.apply(entry).map_err(|m| corrupt(&log_path, m))?;
                }
                (state, covered + tail, tail, scan.valid_len)
            }
            None => {
                let (state, scan_len, events) = replay(&log_path)?;
                (state, events, events, scan_len)
            }
        };
        let writer = LogWriter::open(&log_path, valid_len, options.sync)?;
        Ok(Self {
            state: Arc::new(state),
            disk: Some(DiskState {
                dir: dir.to_path_buf(),
                writer,
                events,
                since_snapshot,
            }),
            options,
        })
    }

    /// Reconstructs state purely from `log.bin`, ignoring any snapshot.
    pub fn rebuild_from_log(dir: &Path) -> Result<StoreState, StoreError> {
        replay(&dir.join(LOG_FILE)).map(|(s, _, _)| s)
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        Arc::clone(&self.state)
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    pub fn layout(&self) -> &FusionConfig {
        &self.state.layout
    }

    pub fn now(&self) -> TimestampMs {
        self.options.clock.now()
    }

    pub fn dir(&self) -> Option<&Path> {
        self.disk.as_ref().map(|d| d.dir.as_path())
    }

    pub fn enroll_claim(
        &mut self,
        record: ClaimRecord,
        descriptors: Vec<ImageDescriptor>,
    ) -> Result<String, StoreError> {
        self.enroll_claim_with_status(record, descriptors, ClaimStatus::Pending)
    }

    /// Enrolls a claim in one log event with an initial status of `pending`
    /// or `flagged`.
    pub fn enroll_claim_with_status(
        &mut self,
        mut record: ClaimRecord,
        descriptors: Vec<ImageDescriptor>,
        initial: ClaimStatus,
    ) -> Result<String, StoreError> {
        if !matches!(initial, ClaimStatus::Pending | ClaimStatus::Flagged) {
            return Err(StoreError::Validation {
                field: "status".into(),
                message: format!("new claims start pending or flagged, not {initial}"),
            });
        }
        record.status = initial;
        record.adjudication = None;
        record.validate()?;
        if self.state.claims.contains_key(&record.claim_id) {
            return Err(StoreError::DuplicateClaim(record.claim_id));
        }
        for (i, d) in descriptors.iter().enumerate() {
            if d.descriptor.layout() != &self.state.layout {
                return Err(StoreError::LayoutMismatch {
                    message: format!(
                        "descriptor {i} ({}) has layout {:?}, store expects {:?}",
                        d.image_id,
                        d.descriptor.layout(),
                        self.state.layout
                    ),
                });
            }
            match record.evidence_by_id(&d.image_id) {
                Some(e) if e.kind == ImageKind::CloseUp => {}
                _ => {
                    return Err(StoreError::Validation {
                        field: format!("descriptors[{i}].image_id"),
                        message: format!("{:?} is not a close-up of this claim", d.image_id),
                    })
                }
            }
        }

        let at = self.now();
        let mut seq = self.state.next_seq;
        let features: Vec<FeatureMeta> = descriptors
            .iter()
            .map(|d| {
                let meta = FeatureMeta {
                    claim_id: record.claim_id.clone(),
                    vehicle_id: record.vehicle_id.clone(),
                    image_id: d.image_id.clone(),
                    enrolled_at: at,
                    enrollment_seq: seq,
                };
                seq += 1;
                meta
            })
            .collect();
        let values: Vec<f32> = descriptors
            .iter()
            .flat_map(|d| d.descriptor.values().iter().copied())
            .collect();
        let claim_id = record.claim_id.clone();
        let event = LogEvent::Enroll {
            record,
            features,
            at,
        };
        self.commit(LogEntry { event, values })?;
        Ok(claim_id)
    }

    pub fn get_claim(&self, claim_id: &str) -> Result<ClaimRecord, StoreError> {
        self.state
            .get_claim(claim_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(claim_id.to_string()))
    }

    pub fn list_gallery(&self, filter: &GalleryFilter) -> Vec<EnrolledFeature> {
        self.state
            .list_gallery(filter)
            .into_iter()
            .cloned()
            .collect()
    }

    pub fn set_status(
        &mut self,
        claim_id: &str,
        status: ClaimStatus,
        adjudication: Option<Adjudication>,
    ) -> Result<ClaimRecord, StoreError> {
        let from = self
            .state
            .status_of(claim_id)
            .ok_or_else(|| StoreError::NotFound(claim_id.to_string()))?;
        if !from.can_transition_to(status) {
            return Err(StoreError::IllegalTransition {
                claim_id: claim_id.to_string(),
                from,
                to: status,
            });
        }
        let event = LogEvent::Status {
            claim_id: claim_id.to_string(),
            from,
            to: status,
            adjudication,
            at: self.now(),
        };
        self.commit(LogEntry {
            event,
            values: Vec::new(),
        })?;
        self.get_claim(claim_id)
    }

    /// Writes `snapshot.bin` and `features.f32` for the current state.
    pub fn checkpoint(&mut self) -> Result<(), StoreError> {
        let Some(disk) = self.disk.as_mut() else {
            return Ok(());
        };
        let body = self.state.to_snapshot_body();
        persist::write_snapshot(
            &disk.dir,
            disk.events,
            disk.writer.len(),
            &body,
            self.state.features.iter().map(|f| f.descriptor.values()),
        )?;
        disk.since_snapshot = 0;
        Ok(())
    }

    fn commit(&mut self, entry: LogEntry) -> Result<(), StoreError> {
        if let Some(disk) = self.disk.as_mut() {
            let rows: Vec<&[f32]> = vec![entry.values.as_slice()];
            disk.writer
                .append(&persist::encode_entry(&entry.event, &rows))?;
            disk.events += 1;
            disk.since_snapshot += 1;
        }
        Arc::make_mut(&mut self.state)
            .apply(entry)
            .expect("validated events always apply");
        let due = match (&self.disk, self.options.snapshot_every) {
            (Some(d), Some(every)) => d.since_snapshot >= every,
            _ => false,
        };
        if due {
            self.checkpoint()?;
        }
        Ok(())
    }
}

fn corrupt(path: &Path, message: String) -> StoreError {
    StoreError::Corrupt {
        path: path.to_path_buf(),
        message,
    }
}

fn warn_torn(log_path: &Path, scan: &persist::LogScan) {
    if scan.torn_tail {
        log::warn!(
            "{}: dropping incomplete entry after byte {}",
            log_path.display(),
            scan.valid_len
        );
    }
}

fn replay(log_path: &Path) -> Result<(StoreState, u64, u64), StoreError> {
    let scan = persist::scan_log(log_path, 0)?;
    warn_torn(log_path, &scan);
    let mut entries = scan.entries.into_iter();
    let layout = match entries.next() {
        Some(LogEntry {
            event: LogEvent::Init { layout },
            ..
        }) => layout,
        _ => {
            return Err(corrupt(
                log_path,
                "log does not start with an init event".into(),
            ))
        }
    };
    let mut state = StoreState::new(layout);
    let mut events = 1;
    for entry in entries {
        state.apply(entry).map_err(|m| corrupt(log_path, m))?;
        events += 1;
    }
    Ok((state, scan.valid_len, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::BlockWeights;
    use proptest::prelude::*;

    fn layout() -> FusionConfig {
        FusionConfig {
            local_dim: 2,
            global_dim: 2,
            hist_bins: 1,
            block_weights: BlockWeights::default(),
        }
    }

    fn desc(image_id: &str, seed: f32) -> ImageDescriptor {
        ImageDescriptor {
            image_id: image_id.into(),
            descriptor: FusedDescriptor::from_raw(
                layout(),
                vec![seed, 1.0, 0.5, -seed, 0.0, 1.0, 0.0],
            )
            .unwrap(),
        }
    }

    fn record(claim: &str, vehicle: &str) -> ClaimRecord {
        let b = NormalizedBBox::new(0.5, 0.5, 0.3, 0.3).unwrap();
        ClaimRecord::new(
            claim,
            vehicle,
            1_700_000_000_000,
            vec![
                ImageEvidence {
                    image_id: format!("{claim}-body"),
                    kind: ImageKind::FullBody,
                    content_ref: format!("{claim}/body.png"),
                    regions: vec![],
                },
                ImageEvidence {
                    image_id: format!("{claim}-close"),
                    kind: ImageKind::CloseUp,
                    content_ref: format!("{claim}/close.png"),
                    regions: vec![DamageRegion::annotation(b, DamageClass::Scratch)],
                },
            ],
        )
    }

    fn options() -> StoreOptions {
        StoreOptions {
            clock: Clock::Fixed(42),
            sync: false,
            snapshot_every: None,
        }
    }

    fn mem() -> ClaimStore {
        ClaimStore::in_memory(layout(), options()).unwrap()
    }

    fn enroll(store: &mut ClaimStore, claim: &str, vehicle: &str) {
        let id = format!("{claim}-close");
        store
            .enroll_claim(record(claim, vehicle), vec![desc(&id, claim.len() as f32)])
            .unwrap();
    }

    #[test]
    fn enroll_and_get() {
        let mut s = mem();
        let rec = record("C1", "V1");
        let id = s
            .enroll_claim(rec.clone(), vec![desc("C1-close", 1.0)])
            .unwrap();
        assert_eq!(id, "C1");
        assert_eq!(s.get_claim("C1").unwrap(), rec);
        assert_eq!(s.list_gallery(&GalleryFilter::default()).len(), 1);
        assert!(matches!(s.get_claim("nope"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn duplicate_claim_rejected() {
        let mut s = mem();
        enroll(&mut s, "C1", "V1");
        let err = s
            .enroll_claim(record("C1", "V1"), vec![desc("C1-close", 1.0)])
            .unwrap_err();
        assert!(matches!(err, StoreError::DuplicateClaim(_)));
        assert_eq!(s.state().features().len(), 1);
    }

    #[test]
    fn layout_mismatch_rejected() {
        let mut s = mem();
        let other = FusionConfig {
            hist_bins: 0,
            ..layout()
        };
        let d = ImageDescriptor {
            image_id: "C1-close".into(),
            descriptor: FusedDescriptor::from_raw(other, vec![1.0, 0.0, 1.0, 0.0]).unwrap(),
        };
        assert!(matches!(
            s.enroll_claim(record("C1", "V1"), vec![d]),
            Err(StoreError::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn missing_evidence_kind_rejected() {
        let mut s = mem();
        let mut rec = record("C1", "V1");
        rec.evidence.retain(|e| e.kind == ImageKind::CloseUp);
        assert!(matches!(
            s.enroll_claim(rec, vec![]),
            Err(StoreError::MissingEvidence {
                kind: ImageKind::FullBody
            })
        ));
    }

    #[test]
    fn descriptor_must_reference_close_up() {
        let mut s = mem();
        let err = s
            .enroll_claim(record("C1", "V1"), vec![desc("C1-body", 1.0)])
            .unwrap_err();
        assert!(matches!(err, StoreError::Validation { .. }));
    }

    #[test]
    fn gallery_ordered_and_filtered() {
        let mut s = mem();
        for i in 0..10 {
            enroll(&mut s, &format!("C{i}"), &format!("V{}", i % 3));
        }
        let all = s.list_gallery(&GalleryFilter::default());
        assert_eq!(all.len(), 10);
        assert!(all
            .windows(2)
            .all(|w| w[0].enrollment_seq < w[1].enrollment_seq));
        let ex = s.list_gallery(&GalleryFilter::excluding_claim("C1"));
        assert_eq!(ex.len(), 9);
        assert!(ex.iter().all(|f| f.claim_id != "C1"));
        let only = s.list_gallery(&GalleryFilter {
            only_vehicle: Some("V0".into()),
            ..Default::default()
        });
        assert_eq!(only.len(), 4);
    }

    #[test]
    fn status_lifecycle() {
        let mut s = mem();
        enroll(&mut s, "C1", "V1");
        assert_eq!(
            s.set_status("C1", ClaimStatus::Flagged, None)
                .unwrap()
                .status,
            ClaimStatus::Flagged
        );
        let adj = Adjudication {
            reviewer_id: "r1".into(),
            decision: Decision::Fraud,
            note: "same scratch as C0".into(),
            decided_at: 7,
        };
        let rec = s
            .set_status("C1", ClaimStatus::FraudConfirmed, Some(adj.clone()))
            .unwrap();
        assert_eq!(rec.adjudication, Some(adj));
        assert_eq!(s.state().audit().len(), 3);

        enroll(&mut s, "C2", "V1");
        s.set_status("C2", ClaimStatus::Settled, None).unwrap();
        match s.set_status("C2", ClaimStatus::Pending, None) {
            Err(StoreError::IllegalTransition { from, to, .. }) => {
                assert_eq!((from, to), (ClaimStatus::Settled, ClaimStatus::Pending));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            s.set_status("nope", ClaimStatus::Flagged, None),
            Err(StoreError::NotFound(_))
        ));
    }

    #[test]
    fn reload_from_log_and_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ClaimStore::open_or_create(dir.path(), layout(), options()).unwrap();
        enroll(&mut s, "C1", "V1");
        enroll(&mut s, "C2", "V2");
        s.set_status("C1", ClaimStatus::Flagged, None).unwrap();
        let before = s.snapshot();
        drop(s);

        let reopened = ClaimStore::open(dir.path(), options()).unwrap();
        assert_eq!(*reopened.snapshot(), *before);
        assert_eq!(
            reopened.get_claim("C2").unwrap(),
            before.get_claim("C2").unwrap().clone()
        );

        let mut s = reopened;
        s.checkpoint().unwrap();
        enroll(&mut s, "C3", "V1");
        let before = s.snapshot();
        drop(s);
        let reopened = ClaimStore::open(dir.path(), options()).unwrap();
        assert_eq!(*reopened.snapshot(), *before);
        assert_eq!(ClaimStore::rebuild_from_log(dir.path()).unwrap(), *before);
    }

    #[test]
    fn stale_features_file_falls_back_to_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ClaimStore::open_or_create(dir.path(), layout(), options()).unwrap();
        enroll(&mut s, "C1", "V1");
        s.checkpoint().unwrap();
        let before = s.snapshot();
        drop(s);
        std::fs::write(dir.path().join(FEATURES_FILE), b"CGF1junk").unwrap();
        let reopened = ClaimStore::open(dir.path(), options()).unwrap();
        assert_eq!(*reopened.snapshot(), *before);
    }

    #[test]
    fn reopening_with_other_layout_fails() {
        let dir = tempfile::tempdir().unwrap();
        drop(ClaimStore::open_or_create(dir.path(), layout(), options()).unwrap());
        let other = FusionConfig {
            hist_bins: 4,
            ..layout()
        };
        assert!(matches!(
            ClaimStore::open_or_create(dir.path(), other, options()),
            Err(StoreError::LayoutMismatch { .. })
        ));
    }

    #[test]
    fn snapshots_are_isolated_from_later_writes() {
        let mut s = mem();
        enroll(&mut s, "C1", "V1");
        let snap = s.snapshot();
        enroll(&mut s, "C2", "V1");
        assert_eq!(snap.features().len(), 1);
        assert_eq!(s.state().features().len(), 2);
    }

    fn arb_filter() -> impl Strategy<Value = GalleryFilter> {
        let id =
            |p: &'static str| proptest::option::of((0u8..6).prop_map(move |i| format!("{p}{i}")));
        let statuses = proptest::option::of(proptest::sample::subsequence(
            vec![
                ClaimStatus::Pending,
                ClaimStatus::Flagged,
                ClaimStatus::Settled,
            ],
            0..=3,
        ));
        (id("C"), id("V"), id("V"), statuses).prop_map(|(ec, ov, ev, st)| GalleryFilter {
            exclude_claim: ec,
            only_vehicle: ov,
            exclude_vehicle: ev,
            status_in: st,
        })
    }

    proptest! {
        #[test]
        fn filter_results_satisfy_predicate(
            vehicles in proptest::collection::vec(0u8..4, 1..12),
            flag_mask in any::<u16>(),
            filter in arb_filter(),
        ) {
            let mut s = mem();
            for (i, v) in vehicles.iter().enumerate() {
                enroll(&mut s, &format!("C{i}"), &format!("V{v}"));
                if flag_mask & (1 << i) != 0 {
                    s.set_status(&format!("C{i}"), ClaimStatus::Flagged, None).unwrap();
                }
            }
            let got = s.list_gallery(&filter);
            let state = s.state();
            for f in &got {
                let st = state.status_of(&f.claim_id).unwrap();
                prop_assert!(filter.exclude_claim.as_deref() != Some(f.claim_id.as_str()));
                prop_assert!(filter.only_vehicle.as_ref().is_none_or(|v| *v == f.vehicle_id));
                prop_assert!(filter.exclude_vehicle.as_deref() != Some(f.vehicle_id.as_str()));
                prop_assert!(filter.status_in.as_ref().is_none_or(|set| set.contains(&st)));
            }
            let expected = state.features().iter().filter(|f| filter.accepts(f, state.status_of(&f.claim_id).unwrap())).count();
            prop_assert_eq!(got.len(), expected);
            prop_assert!(got.windows(2).all(|w| w[0].enrollment_seq < w[1].enrollment_seq));
        }
    }
}
