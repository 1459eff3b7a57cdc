//! Visual-evidence fraud screening for photo-based car insurance claims.
//!
//! A claim carries a full-body shot of the vehicle and one or more close-ups
//! of the damage. Each close-up damage region is turned into a fused
//! descriptor (local damage embedding, global body embedding and a color
//! histogram), enrolled into an append-only claim history, and every new
//! claim is screened by an exact 1-to-N cosine search over that history.
//!
//! The crate also carries the evaluation machinery used to tune the system:
//! detection precision/recall, CMC retrieval curves, split protocols,
//! feature ablations and a deterministic synthetic fixture generator.

pub mod claimstore;
pub mod config;
pub mod evaluation;
pub mod features;
pub mod imaging;
pub mod matcher;
pub mod pipeline;
pub mod service;

pub use claimstore::{
    Adjudication, ClaimRecord, ClaimStatus, ClaimStore, DamageClass, DamageRegion, Decision,
    EnrolledFeature, GalleryFilter, ImageDescriptor, ImageEvidence, ImageKind, NormalizedBBox,
    RegionSource, StoreError, TimestampMs,
};
pub use config::AppConfig;
pub use features::{
    fuse, l2_normalize, BlockWeights, EmbedKind, EmbeddingProvider, EmbeddingVector,
    FusedDescriptor, FusionConfig,
};
pub use imaging::{
    color_histogram, crop_roi, decode_image, toy_embed, HistogramFeature, ImageBuffer,
};
pub use matcher::{
    cosine_similarity, fraud_check, search, search_fast, FraudAssessment, FraudMode, FraudPolicy,
    MatchResult,
};
pub use pipeline::{Extractor, HistSource, PipelineError};
pub use service::{Service, ServiceError};
