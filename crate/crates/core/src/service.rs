//! Claim intake, fraud checks and the human review workflow, independent of
//! any transport. The HTTP layer in the CLI crate maps these calls 1:1 onto
//! routes and [`ServiceError::status`] onto response codes.
//!
//! Writes (submission, adjudication) are serialized through one writer lock
//! around the [`ClaimStore`]; after each commit the new immutable snapshot is
//! published, and all reads run against the latest published snapshot.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, PoisonError, RwLock};

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::claimstore::{
    Adjudication, ClaimRecord, ClaimStatus, ClaimStore, DamageClass, DamageRegion, Decision,
    ImageEvidence, ImageKind, NormalizedBBox, StoreError, StoreOptions, StoreSnapshot, TimestampMs,
};
use crate::config::{AppConfig, ConfigError};
use crate::features::{EmbeddingProvider, FusedDescriptor};
use crate::imaging::{decode_image, ImageBuffer};
use crate::matcher::{fraud_check, FraudAssessment, FraudMode, FraudPolicy};
use crate::pipeline::{Extractor, PipelineError};

pub const DEFAULT_PAGE_SIZE: usize = 20;
pub const MAX_PAGE_SIZE: usize = 500;
/// Directory under the store root where inline uploads are kept.
pub const EVIDENCE_DIR: &str = "evidence";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Validation,
    NotFound,
    Conflict,
    PayloadTooLarge,
    Internal,
}

impl ErrorKind {
    pub fn status(self) -> u16 {
        match self {
            ErrorKind::Validation => 400,
            ErrorKind::NotFound => 404,
            ErrorKind::Conflict => 409,
            ErrorKind::PayloadTooLarge => 413,
            ErrorKind::Internal => 500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetails {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

/// Wire form of an error: `{code, message, details}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub details: ErrorDetails,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ServiceError {
    pub kind: ErrorKind,
    pub code: &'static str,
    pub message: String,
    pub details: ErrorDetails,
}

impl ServiceError {
    fn new(kind: ErrorKind, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            code,
            message: message.into(),
            details: ErrorDetails::default(),
        }
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        let mut e = Self::new(ErrorKind::Validation, "validation_failed", message);
        e.details.field = Some(field.into());
        e
    }

    pub fn not_found(claim_id: &str) -> Self {
        Self::new(
            ErrorKind::NotFound,
            "not_found",
            format!("claim {claim_id:?} not found"),
        )
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Conflict, "conflict", message)
    }

    pub fn internal(stage: &str, message: impl Into<String>) -> Self {
        let mut e = Self::new(ErrorKind::Internal, "pipeline_failed", message);
        e.details.stage = Some(stage.to_string());
        e
    }

    fn with_stage(mut self, stage: &str) -> Self {
        self.details.stage = Some(stage.to_string());
        self
    }

    pub fn status(&self) -> u16 {
        self.kind.status()
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody {
            code: self.code.to_string(),
            message: self.message.clone(),
            details: self.details.clone(),
        }
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(id) => Self::not_found(&id),
            StoreError::DuplicateClaim(_) | StoreError::IllegalTransition { .. } => {
                Self::conflict(e.to_string())
            }
            StoreError::Validation { ref field, .. } => {
                Self::validation(field.clone(), e.to_string())
            }
            StoreError::MissingEvidence { .. } => Self::validation("evidence", e.to_string()),
            StoreError::InvalidBBox { .. } => Self::validation("regions", e.to_string()),
            StoreError::LayoutMismatch { .. } | StoreError::Feature(_) => {
                Self::internal("fuse", e.to_string())
            }
            StoreError::Corrupt { .. } | StoreError::Io { .. } => {
                Self::internal("enroll", e.to_string())
            }
        }
    }
}

impl From<PipelineError> for ServiceError {
    fn from(e: PipelineError) -> Self {
        Self::internal(e.stage, e.message)
    }
}

/// A damage box as submitted. A `confidence` marks it as detector output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionInput {
    pub bbox: NormalizedBBox,
    pub class: DamageClass,
    #[serde(default)]
    pub confidence: Option<f64>,
}

impl From<RegionInput> for DamageRegion {
    fn from(r: RegionInput) -> Self {
        match r.confidence {
            Some(c) => DamageRegion::detection(r.bbox, r.class, c),
            None => DamageRegion::annotation(r.bbox, r.class),
        }
    }
}

/// One evidence image: exactly one of `image_base64` and `content_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceInput {
    #[serde(default)]
    pub image_id: Option<String>,
    pub kind: ImageKind,
    #[serde(default)]
    pub image_base64: Option<String>,
    #[serde(default)]
    pub content_ref: Option<String>,
    #[serde(default)]
    pub regions: Vec<RegionInput>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmissionRequest {
    /// Generated as `CLM-nnnnnn` when absent.
    #[serde(default)]
    pub claim_id: Option<String>,
    pub vehicle_id: String,
    pub evidence: Vec<EvidenceInput>,
    #[serde(default = "yes")]
    pub auto_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionResponse {
    pub claim_id: String,
    pub status: ClaimStatus,
    /// Present when the submission asked for `auto_check`.
    pub assessment: Option<FraudAssessment>,
}

/// Per-call overrides of the configured fraud policy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckRequest {
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub mode: Option<FraudMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicateRequest {
    pub decision: Decision,
    pub reviewer_id: String,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimSummary {
    pub claim_id: String,
    pub vehicle_id: String,
    pub submitted_at: TimestampMs,
    pub status: ClaimStatus,
}

impl From<&ClaimRecord> for ClaimSummary {
    fn from(r: &ClaimRecord) -> Self {
        Self {
            claim_id: r.claim_id.clone(),
            vehicle_id: r.vehicle_id.clone(),
            submitted_at: r.submitted_at,
            status: r.status,
        }
    }
}

/// Evidence of one gallery claim that appears among the matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedClaim {
    pub claim: ClaimSummary,
    pub evidence: Vec<ImageEvidence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub claim: ClaimSummary,
    pub assessment: FraudAssessment,
    pub probe_evidence: Vec<ImageEvidence>,
    /// Matched claims in order of first appearance in `assessment.matches`.
    pub matched: Vec<MatchedClaim>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueue {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<ReviewItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub claims: usize,
    pub features: usize,
}

struct DecodedEvidence {
    evidence: ImageEvidence,
    pixels: ImageBuffer,
    /// Upload bytes and file extension, for inline images only.
    upload: Option<(Vec<u8>, &'static str)>,
}

fn id_ok(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'))
        && id != "."
        && id != ".."
}

fn locked<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

pub struct Service {
    writer: Mutex<ClaimStore>,
    published: RwLock<StoreSnapshot>,
    provider: Box<dyn EmbeddingProvider>,
    config: AppConfig,
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Service {
    /// Wraps an opened store. The store layout must equal the configured
    /// fusion layout and the provider must produce matching block sizes.
    pub fn new(
        store: ClaimStore,
        provider: Box<dyn EmbeddingProvider>,
        config: AppConfig,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        if store.layout() != &config.fusion {
            return Err(ConfigError::Invalid(format!(
                "store layout {:?} differs from configured fusion {:?}",
                store.layout(),
                config.fusion
            )));
        }
        Extractor::new(provider.as_ref(), config.fusion, config.hist_source).check_provider()?;
        let published = RwLock::new(store.snapshot());
        Ok(Self {
            writer: Mutex::new(store),
            published,
            provider,
            config,
        })
    }

    /// Opens (or creates) the store at `config.store_dir` and builds the
    /// configured provider.
    pub fn open(config: AppConfig) -> Result<Self, ServiceStartError> {
        let store =
            ClaimStore::open_or_create(&config.store_dir, config.fusion, StoreOptions::default())?;
        let provider = config.provider.build()?;
        Ok(Self::new(store, provider, config)?)
    }

    pub fn config(&self) -> &AppConfig {
        &self.config
    }

    /// Latest published state.
    pub fn snapshot(&self) -> StoreSnapshot {
        self.published
            .read()
            .unwrap_or_else(PoisonError::into_inner)
            .clone()
    }

    fn publish(&self, store: &ClaimStore) {
        *self
            .published
            .write()
            .unwrap_or_else(PoisonError::into_inner) = store.snapshot();
    }

    fn extractor(&self) -> Extractor<'_> {
        Extractor::new(
            self.provider.as_ref(),
            self.config.fusion,
            self.config.hist_source,
        )
    }

    pub fn health(&self) -> Health {
        let s = self.snapshot();
        Health {
            status: "ok".into(),
            claims: s.claim_count(),
            features: s.features().len(),
        }
    }

    pub fn get_claim(&self, claim_id: &str) -> Result<ClaimRecord, ServiceError> {
        self.snapshot()
            .get_claim(claim_id)
            .cloned()
            .ok_or_else(|| ServiceError::not_found(claim_id))
    }

    fn too_large(&self, field: String, size: usize) -> ServiceError {
        let mut e = ServiceError::new(
            ErrorKind::PayloadTooLarge,
            "payload_too_large",
            format!(
                "image is {size} bytes, limit is {}",
                self.config.max_image_bytes
            ),
        );
        e.details.field = Some(field);
        e
    }

    fn load_bytes(&self, i: usize, input: &EvidenceInput) -> Result<(Vec<u8>, bool), ServiceError> {
        let cap = self.config.max_image_bytes;
        match (&input.image_base64, &input.content_ref) {
            (Some(b64), None) => {
                let field = format!("evidence[{i}].image_base64");
                // Reject before decoding when the encoded length alone is over.
                if b64.len() / 4 * 3 > cap + 3 {
                    return Err(self.too_large(field, b64.len() / 4 * 3));
                }
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64.trim())
                    .map_err(|e| {
                        ServiceError::validation(field.clone(), format!("invalid base64: {e}"))
                    })?;
                if bytes.len() > cap {
                    return Err(self.too_large(field, bytes.len()));
                }
                Ok((bytes, true))
            }
            (None, Some(r)) => {
                let field = format!("evidence[{i}].content_ref");
                let path = self.config.resolve_content(r);
                let unreadable = |e: std::io::Error| {
                    ServiceError::validation(field.clone(), format!("{}: {e}", path.display()))
                };
                let size = fs::metadata(&path).map_err(unreadable)?.len() as usize;
                if size > cap {
                    return Err(self.too_large(field, size));
                }
                Ok((fs::read(&path).map_err(unreadable)?, false))
            }
            _ => Err(ServiceError::validation(
                format!("evidence[{i}]"),
                "exactly one of image_base64 and content_ref is required",
            )),
        }
    }

    fn decode_evidence(
        &self,
        inputs: Vec<EvidenceInput>,
    ) -> Result<Vec<DecodedEvidence>, ServiceError> {
        if inputs.is_empty() {
            return Err(ServiceError::validation(
                "evidence",
                "evidence must not be empty",
            ));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(inputs.len());
        for (i, input) in inputs.into_iter().enumerate() {
            let image_id = input.image_id.clone().unwrap_or_else(|| format!("img{i}"));
            if !id_ok(&image_id) {
                return Err(ServiceError::validation(
                    format!("evidence[{i}].image_id"),
                    "image_id must be 1-128 characters of [A-Za-z0-9._-]",
                ));
            }
            if !seen.insert(image_id.clone()) {
                return Err(ServiceError::validation(
                    format!("evidence[{i}].image_id"),
                    format!("duplicate image_id {image_id:?}"),
                ));
            }
            let (bytes, inline) = self.load_bytes(i, &input)?;
            let pixels = decode_image(&bytes).map_err(|e| {
                ServiceError::validation(format!("evidence[{i}]"), e.to_string())
                    .with_stage("decode")
            })?;
            let ext = if bytes.starts_with(b"\x89PNG") {
                "png"
            } else {
                "jpg"
            };
            let evidence = ImageEvidence {
                content_ref: input.content_ref.clone().unwrap_or_default(),
                image_id,
                kind: input.kind,
                regions: input.regions.into_iter().map(DamageRegion::from).collect(),
            };
            out.push(DecodedEvidence {
                evidence,
                pixels,
                upload: inline.then_some((bytes, ext)),
            });
        }
        Ok(out)
    }

    fn next_claim_id(store: &ClaimStore) -> String {
        let state = store.state();
        (state.claim_count() + 1..)
            .map(|n| format!("CLM-{n:06}"))
            .find(|id| state.get_claim(id).is_none())
            .expect("unbounded range")
    }

    /// Writes inline uploads under the store directory and returns their
    /// relative content refs, or `inline:<id>` refs for in-memory stores.
    fn persist_uploads(
        dir: Option<&Path>,
        claim_id: &str,
        items: &mut [DecodedEvidence],
    ) -> Result<Option<PathBuf>, ServiceError> {
        let claim_dir = dir.map(|d| d.join(EVIDENCE_DIR).join(claim_id));
        for (i, item) in items.iter_mut().enumerate() {
            let Some((bytes, ext)) = &item.upload else {
                continue;
            };
            match &claim_dir {
                None => item.evidence.content_ref = format!("inline:{}", item.evidence.image_id),
                Some(cd) => {
                    let name = format!("{i}-{}.{ext}", item.evidence.image_id);
                    let write =
                        fs::create_dir_all(cd).and_then(|_| fs::write(cd.join(&name), bytes));
                    if let Err(e) = write {
                        let _ = fs::remove_dir_all(cd);
                        return Err(ServiceError::internal(
                            "store_evidence",
                            format!("{}: {e}", cd.display()),
                        ));
                    }
                    item.evidence.content_ref = format!("{EVIDENCE_DIR}/{claim_id}/{name}");
                }
            }
        }
        Ok(claim_dir.filter(|d| d.exists()))
    }

    /// decode → crop → embed → histogram → fuse → fraud check → enroll.
    /// Nothing is enrolled unless every step succeeds.
    pub fn handle_submit(
        &self,
        req: SubmissionRequest,
    ) -> Result<SubmissionResponse, ServiceError> {
        if req.vehicle_id.trim().is_empty() {
            return Err(ServiceError::validation(
                "vehicle_id",
                "vehicle_id must not be empty",
            ));
        }
        if let Some(id) = &req.claim_id {
            if !id_ok(id) {
                return Err(ServiceError::validation(
                    "claim_id",
                    "claim_id must be 1-128 characters of [A-Za-z0-9._-]",
                ));
            }
        }
        let mut items = self.decode_evidence(req.evidence)?;

        // Descriptors do not depend on the claim id, so extraction runs
        // before the writer lock is taken.
        let provisional = ClaimRecord::new(
            req.claim_id.clone().unwrap_or_else(|| "provisional".into()),
            req.vehicle_id.clone(),
            0,
            items.iter().map(|d| d.evidence.clone()).collect(),
        );
        provisional.validate()?;
        let pixels: HashMap<String, ImageBuffer> = items
            .iter()
            .map(|d| (d.evidence.image_id.clone(), d.pixels.clone()))
            .collect();
        let descriptors = self.extractor().describe_claim(&provisional, &pixels)?;
        let probes: Vec<FusedDescriptor> =
            descriptors.iter().map(|d| d.descriptor.clone()).collect();

        let mut store = locked(&self.writer);
        let claim_id = match req.claim_id {
            Some(id) if store.state().get_claim(&id).is_some() => {
                return Err(ServiceError::conflict(format!(
                    "claim {id:?} already exists"
                )))
            }
            Some(id) => id,
            None => Self::next_claim_id(&store),
        };
        let assessment = if req.auto_check {
            let probe_claim = ClaimRecord {
                claim_id: claim_id.clone(),
                ..provisional.clone()
            };
            Some(
                fraud_check(&probe_claim, &probes, store.state(), &self.config.policy)
                    .map_err(|e| ServiceError::internal("fraud_check", e.to_string()))?,
            )
        } else {
            None
        };
        let status = match &assessment {
            Some(a) if a.flagged => ClaimStatus::Flagged,
            _ => ClaimStatus::Pending,
        };
        let blob_dir = Self::persist_uploads(store.dir(), &claim_id, &mut items)?;
        let record = ClaimRecord::new(
            claim_id.clone(),
            req.vehicle_id,
            store.now(),
            items.into_iter().map(|d| d.evidence).collect(),
        );
        if let Err(e) = store.enroll_claim_with_status(record, descriptors, status) {
            if let Some(d) = blob_dir {
                let _ = fs::remove_dir_all(d);
            }
            return Err(e.into());
        }
        self.publish(&store);
        drop(store);
        log::info!("enrolled claim {claim_id} as {status}");
        Ok(SubmissionResponse {
            claim_id,
            status,
            assessment,
        })
    }

    fn policy_with(&self, o: &CheckRequest) -> Result<FraudPolicy, ServiceError> {
        let policy = FraudPolicy {
            mode: o.mode.unwrap_or(self.config.policy.mode),
            threshold: o.threshold.unwrap_or(self.config.policy.threshold),
            top_k: o.top_k.unwrap_or(self.config.policy.top_k),
        };
        policy
            .validate()
            .map_err(|e| ServiceError::validation("policy", e.to_string()))?;
        Ok(policy)
    }

    fn assess(
        snapshot: &StoreSnapshot,
        claim: &ClaimRecord,
        policy: &FraudPolicy,
    ) -> Result<FraudAssessment, ServiceError> {
        let probes: Vec<FusedDescriptor> = snapshot
            .features_of(&claim.claim_id)
            .map(|f| f.descriptor.clone())
            .collect();
        fraud_check(claim, &probes, snapshot, policy)
            .map_err(|e| ServiceError::internal("fraud_check", e.to_string()))
    }

    /// Read-only re-check of an enrolled claim against the current history.
    pub fn handle_check(
        &self,
        claim_id: &str,
        overrides: &CheckRequest,
    ) -> Result<FraudAssessment, ServiceError> {
        let policy = self.policy_with(overrides)?;
        let snapshot = self.snapshot();
        let claim = snapshot
            .get_claim(claim_id)
            .ok_or_else(|| ServiceError::not_found(claim_id))?;
        Self::assess(&snapshot, claim, &policy)
    }

    /// Flagged claims by best-match similarity, highest first; ties by
    /// claim id. `page` is 0-based.
    pub fn handle_review_queue(
        &self,
        page: usize,
        page_size: usize,
    ) -> Result<ReviewQueue, ServiceError> {
        if page_size == 0 || page_size > MAX_PAGE_SIZE {
            return Err(ServiceError::validation(
                "page_size",
                format!("page_size must be in 1..={MAX_PAGE_SIZE}"),
            ));
        }
        let snapshot = self.snapshot();
        let mut scored = snapshot
            .claims()
            .filter(|c| c.status == ClaimStatus::Flagged)
            .map(|c| Ok((c, Self::assess(&snapshot, c, &self.config.policy)?)))
            .collect::<Result<Vec<_>, ServiceError>>()?;
        let best =
            |a: &FraudAssessment| a.best.as_ref().map_or(f64::NEG_INFINITY, |m| m.similarity);
        scored.sort_by(|(ca, a), (cb, b)| {
            best(b)
                .total_cmp(&best(a))
                .then_with(|| ca.claim_id.cmp(&cb.claim_id))
        });
        let total = scored.len();
        let items = scored
            .into_iter()
            .skip(page.saturating_mul(page_size))
            .take(page_size)
            .map(|(claim, assessment)| {
                let mut seen = HashSet::new();
                let matched = assessment
                    .matches
                    .iter()
                    .filter(|m| seen.insert(m.claim_id.clone()))
                    .filter_map(|m| snapshot.get_claim(&m.claim_id))
                    .map(|c| MatchedClaim {
                        claim: c.into(),
                        evidence: c.evidence.clone(),
                    })
                    .collect();
                ReviewItem {
                    claim: claim.into(),
                    probe_evidence: claim.evidence.clone(),
                    assessment,
                    matched,
                }
            })
            .collect();
        Ok(ReviewQueue {
            page,
            page_size,
            total,
            items,
        })
    }

    /// Records a reviewer decision on a flagged claim.
    pub fn handle_adjudicate(
        &self,
        claim_id: &str,
        req: AdjudicateRequest,
    ) -> Result<ClaimRecord, ServiceError> {
        if req.reviewer_id.trim().is_empty() {
            return Err(ServiceError::validation(
                "reviewer_id",
                "reviewer_id must not be empty",
            ));
        }
        let mut store = locked(&self.writer);
        let status = store
            .state()
            .status_of(claim_id)
            .ok_or_else(|| ServiceError::not_found(claim_id))?;
        if status != ClaimStatus::Flagged {
            return Err(ServiceError::conflict(format!(
                "claim {claim_id:?} is {status}; only flagged claims can be adjudicated"
            )));
        }
        let next = match req.decision {
            Decision::Fraud => ClaimStatus::FraudConfirmed,
            Decision::Legitimate => ClaimStatus::Cleared,
        };
        let adjudication = Adjudication {
            reviewer_id: req.reviewer_id,
            decision: req.decision,
            note: req.note,
            decided_at: store.now(),
        };
        let record = store.set_status(claim_id, next, Some(adjudication))?;
        self.publish(&store);
        log::info!("claim {claim_id} adjudicated {next}");
        Ok(record)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceStartError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
