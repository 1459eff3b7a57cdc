use std::fmt;

use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::features::FusedDescriptor;

/// Milliseconds since the Unix epoch, UTC.
pub type TimestampMs = i64;

/// Box center and size, normalized to the image dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBBox")]
pub struct NormalizedBBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

#[derive(Deserialize)]
struct RawBBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBBox> for NormalizedBBox {
    type Error = StoreError;

    fn try_from(raw: RawBBox) -> Result<Self, Self::Error> {
        NormalizedBBox::new(raw.cx, raw.cy, raw.w, raw.h)
    }
}

impl NormalizedBBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, StoreError> {
        let center_ok = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        let size_ok = |v: f64| v.is_finite() && v > 0.0 && v <= 1.0;
        if !(center_ok(cx) && center_ok(cy) && size_ok(w) && size_ok(h)) {
            return Err(StoreError::InvalidBBox { cx, cy, w, h });
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Builds a box from pixel corners `(x0, y0)`-`(x1, y1)` in a
    /// `width x height` frame.
    pub fn from_pixel_corners(
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, StoreError> {
        let (w, h) = (width as f64, height as f64);
        Self::new(
            (x0 + x1) / 2.0 / w,
            (y0 + y1) / 2.0 / h,
            (x1 - x0) / w,
            (y1 - y0) / h,
        )
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Normalized `(left, top, right, bottom)`; may extend past the frame.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    /// Pixel corners, unclipped.
    pub fn to_pixel_corners(&self, width: u32, height: u32) -> (f64, f64, f64, f64) {
        let (l, t, r, b) = self.corners();
        let (w, h) = (width as f64, height as f64);
        (l * w, t * h, r * w, b * h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DamageClass {
    Scratch,
    Dent,
    Crack,
}

impl DamageClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            DamageClass::Scratch => "scratch",
            DamageClass::Dent => "dent",
            DamageClass::Crack => "crack",
        }
    }
}

impl fmt::Display for DamageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DamageClass {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scratch" => Ok(DamageClass::Scratch),
            "dent" => Ok(DamageClass::Dent),
            "crack" => Ok(DamageClass::Crack),
            other => Err(StoreError::Validation {
                field: "class".into(),
                message: format!("unknown damage class {other:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSource {
    Annotation,
    Detector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DamageRegion {
    pub bbox: NormalizedBBox,
    pub class: DamageClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub source: RegionSource,
}

impl DamageRegion {
    pub fn annotation(bbox: NormalizedBBox, class: DamageClass) -> Self {
        Self {
            bbox,
            class,
            confidence: None,
            source: RegionSource::Annotation,
        }
    }

    pub fn detection(bbox: NormalizedBBox, class: DamageClass, confidence: f64) -> Self {
        Self {
            bbox,
            class,
            confidence: Some(confidence),
            source: RegionSource::Detector,
        }
    }

    /// Confidence is present exactly for detector output and lies in `[0, 1]`.
    pub fn validate(&self) -> Result<(), StoreError> {
        match (self.source, self.confidence) {
            (RegionSource::Annotation, None) => Ok(()),
            (RegionSource::Detector, Some(c)) if (0.0..=1.0).contains(&c) => Ok(()),
            (RegionSource::Detector, Some(c)) => Err(StoreError::Validation {
                field: "confidence".into(),
                message: format!("confidence {c} outside [0, 1]"),
            }),
            (RegionSource::Annotation, Some(_)) => Err(StoreError::Validation {
                field: "confidence".into(),
                message: "annotations carry no confidence".into(),
            }),
            (RegionSource::Detector, None) => Err(StoreError::Validation {
                field: "confidence".into(),
                message: "detector regions require a confidence".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    FullBody,
    CloseUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEvidence {
    pub image_id: String,
    pub kind: ImageKind,
    pub content_ref: String,
    #[serde(default)]
    pub regions: Vec<DamageRegion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimStatus {
    Pending,
    Settled,
    Flagged,
    FraudConfirmed,
    Cleared,
}

impl ClaimStatus {
    pub fn can_transition_to(self, next: ClaimStatus) -> bool {
        use ClaimStatus::*;
        matches!(
            (self, next),
            (Pending, Settled)
                | (Pending, Flagged)
                | (Flagged, FraudConfirmed)
                | (Flagged, Cleared)
                | (Cleared, Settled)
        )
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ClaimStatus::Pending => "pending",
            ClaimStatus::Settled => "settled",
            ClaimStatus::Flagged => "flagged",
            ClaimStatus::FraudConfirmed => "fraud_confirmed",
            ClaimStatus::Cleared => "cleared",
        }
    }
}

impl fmt::Display for ClaimStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Fraud,
    Legitimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adjudication {
    pub reviewer_id: String,
    pub decision: Decision,
    pub note: String,
    pub decided_at: TimestampMs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub claim_id: String,
    pub vehicle_id: String,
    pub submitted_at: TimestampMs,
    pub status: ClaimStatus,
    pub evidence: Vec<ImageEvidence>,
    #[serde(default)]
    pub adjudication: Option<Adjudication>,
}

impl ClaimRecord {
    pub fn new(
        claim_id: impl Into<String>,
        vehicle_id: impl Into<String>,
        submitted_at: TimestampMs,
        evidence: Vec<ImageEvidence>,
    ) -> Self {
        Self {
            claim_id: claim_id.into(),
            vehicle_id: vehicle_id.into(),
            submitted_at,
            status: ClaimStatus::Pending,
            evidence,
            adjudication: None,
        }
    }

    pub fn evidence_by_id(&self, image_id: &str) -> Option<&ImageEvidence> {
        self.evidence.iter().find(|e| e.image_id == image_id)
    }

    /// Checks the evidence-set invariants required for enrollment.
    pub fn validate(&self) -> Result<(), StoreError> {
        let invalid = |field: &str, message: String| StoreError::Validation {
            field: field.into(),
            message,
        };
        if self.claim_id.is_empty() {
            return Err(invalid("claim_id", "claim_id must not be empty".into()));
        }
        if self.vehicle_id.is_empty() {
            return Err(invalid("vehicle_id", "vehicle_id must not be empty".into()));
        }
        for kind in [ImageKind::FullBody, ImageKind::CloseUp] {
            if !self.evidence.iter().any(|e| e.kind == kind) {
                return Err(StoreError::MissingEvidence { kind });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (i, e) in self.evidence.iter().enumerate() {
            if e.image_id.is_empty() {
                return Err(invalid(
                    &format!("evidence[{i}].image_id"),
                    "empty image_id".into(),
                ));
            }
            if !seen.insert(e.image_id.as_str()) {
                return Err(invalid(
                    &format!("evidence[{i}].image_id"),
                    format!("duplicate image_id {:?} within claim", e.image_id),
                ));
            }
            if e.kind == ImageKind::CloseUp && e.regions.is_empty() {
                return Err(invalid(
                    &format!("evidence[{i}].regions"),
                    format!("close-up {:?} carries no damage region", e.image_id),
                ));
            }
            for region in &e.regions {
                region.validate().map_err(|err| match err {
                    StoreError::Validation { field, message } => StoreError::Validation {
                        field: format!("evidence[{i}].regions.{field}"),
                        message,
                    },
                    other => other,
                })?;
            }
        }
        Ok(())
    }
}

/// A descriptor to enroll, tied to the close-up its local block came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDescriptor {
    pub image_id: String,
    pub descriptor: FusedDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrolledFeature {
    pub claim_id: String,
    pub vehicle_id: String,
    pub image_id: String,
    pub descriptor: FusedDescriptor,
    pub enrolled_at: TimestampMs,
    pub enrollment_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: TimestampMs,
    pub claim_id: String,
    pub from: Option<ClaimStatus>,
    pub to: ClaimStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer_id: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_bounds() {
        assert!(NormalizedBBox::new(0.5, 0.5, 1.0, 1.0).is_ok());
        assert!(NormalizedBBox::new(0.0, 1.0, 0.1, 0.1).is_ok());
        assert!(NormalizedBBox::new(1.1, 0.5, 0.1, 0.1).is_err());
        assert!(NormalizedBBox::new(0.5, 0.5, 0.0, 0.1).is_err());
        assert!(NormalizedBBox::new(0.5, 0.5, 1.5, 0.1).is_err());
        assert!(NormalizedBBox::new(f64::NAN, 0.5, 0.5, 0.1).is_err());
    }

    #[test]
    fn bbox_pixel_corner_round_trip() {
        let b = NormalizedBBox::from_pixel_corners(10.0, 20.0, 30.0, 60.0, 100, 80).unwrap();
        let (x0, y0, x1, y1) = b.to_pixel_corners(100, 80);
        for (got, want) in [(x0, 10.0), (y0, 20.0), (x1, 30.0), (y1, 60.0)] {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn bbox_json_rejects_out_of_range() {
        let bad = r#"{"cx":0.5,"cy":0.5,"w":2.0,"h":0.1}"#;
        assert!(serde_json::from_str::<NormalizedBBox>(bad).is_err());
        let good = r#"{"cx":0.5,"cy":0.5,"w":0.2,"h":0.1}"#;
        assert!(serde_json::from_str::<NormalizedBBox>(good).is_ok());
    }

    #[test]
    fn lifecycle_edges() {
        use ClaimStatus::*;
        let all = [Pending, Settled, Flagged, FraudConfirmed, Cleared];
        let allowed: Vec<_> = all
            .iter()
            .flat_map(|&a| all.iter().map(move |&b| (a, b)))
            .filter(|(a, b)| a.can_transition_to(*b))
            .collect();
        assert_eq!(
            allowed,
            vec![
                (Pending, Settled),
                (Pending, Flagged),
                (Flagged, FraudConfirmed),
                (Flagged, Cleared),
                (Cleared, Settled),
            ]
        );
    }

    #[test]
    fn region_confidence_iff_detector() {
        let b = NormalizedBBox::new(0.5, 0.5, 0.2, 0.2).unwrap();
        assert!(DamageRegion::annotation(b, DamageClass::Dent)
            .validate()
            .is_ok());
        assert!(DamageRegion::detection(b, DamageClass::Dent, 0.4)
            .validate()
            .is_ok());
        let mut r = DamageRegion::annotation(b, DamageClass::Dent);
        r.confidence = Some(0.3);
        assert!(r.validate().is_err());
        r.source = RegionSource::Detector;
        r.confidence = None;
        assert!(r.validate().is_err());
    }

    #[test]
    fn record_json_field_names() {
        let b = NormalizedBBox::new(0.5, 0.5, 0.2, 0.2).unwrap();
        let rec = ClaimRecord::new(
            "C1",
            "V1",
            1_000,
            vec![ImageEvidence {
                image_id: "i1".into(),
                kind: ImageKind::CloseUp,
                content_ref: "a.png".into(),
                regions: vec![DamageRegion::annotation(b, DamageClass::Scratch)],
            }],
        );
        let v = serde_json::to_value(&rec).unwrap();
        for key in [
            "claim_id",
            "vehicle_id",
            "submitted_at",
            "status",
            "evidence",
            "adjudication",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["status"], "pending");
        assert_eq!(v["evidence"][0]["kind"], "close_up");
        assert_eq!(v["evidence"][0]["regions"][0]["class"], "scratch");
        assert_eq!(v["evidence"][0]["regions"][0]["source"], "annotation");
    }
}
