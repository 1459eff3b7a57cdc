//! Dataset manifest: vehicles, their images and ground-truth regions, plus
//! resubmitted (duplicate) and never-seen (novel) claims.
//!
//! ```json
//! {
//!   "vehicles": [{"vehicle_id": "V000", "images": [
//!       {"image_id": "V000_s0_body", "kind": "full_body", "path": "images/V000_s0_body.png", "session": 0, "regions": []},
//!       {"image_id": "V000_s0_close", "kind": "close_up", "path": "...", "session": 0,
//!        "regions": [{"bbox": {"cx": 0.5, "cy": 0.5, "w": 0.3, "h": 0.3}, "class": "dent", "source": "annotation"}]}]}],
//!   "duplicate_pairs": [{"pair_id": "D000", "source_vehicle_id": "V000", "source_session": 0,
//!                        "claimed_vehicle_id": "V000", "images": [...]}],
//!   "novel": [{"submission_id": "N000", "vehicle_id": "N000", "images": [...]}]
//! }
//! ```
//!
//! Image paths are relative to the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fixture::FixtureSpec;
use super::retrieval::RetrievalItem;
use super::split::DatasetImage;
use super::EvalError;
use crate::claimstore::{ClaimRecord, DamageRegion, ImageEvidence, ImageKind, TimestampMs};
use crate::imaging::{decode_image, ImageBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub image_id: String,
    pub kind: ImageKind,
    pub path: String,
    #[serde(default)]
    pub session: u32,
    #[serde(default)]
    pub regions: Vec<DamageRegion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleEntry {
    pub vehicle_id: String,
    pub images: Vec<ManifestImage>,
}

/// A perturbed copy of one enrolled session, resubmitted as a new claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicatePair {
    pub pair_id: String,
    pub source_vehicle_id: String,
    pub source_session: u32,
    /// Vehicle named on the resubmitted claim; differs from the source for
    /// cross-vehicle reclaims.
    pub claimed_vehicle_id: String,
    pub images: Vec<ManifestImage>,
}

/// A claim for a vehicle and damage never seen before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NovelSubmission {
    pub submission_id: String,
    pub vehicle_id: String,
    pub images: Vec<ManifestImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<FixtureSpec>,
    pub vehicles: Vec<VehicleEntry>,
    #[serde(default)]
    pub duplicate_pairs: Vec<DuplicatePair>,
    #[serde(default)]
    pub novel: Vec<NovelSubmission>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: Manifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(manifest_path).map_err(|e| EvalError::Io {
            path: manifest_path.to_path_buf(),
            source: e,
        })?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| EvalError::Parse {
            origin: manifest_path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let ds = Self { manifest, root };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let mut seen = HashMap::new();
        for img in self.all_images() {
            if seen.insert(img.image_id.as_str(), ()).is_some() {
                return Err(EvalError::Invalid(format!(
                    "duplicate image_id {:?} in manifest",
                    img.image_id
                )));
            }
            for r in &img.regions {
                r.validate()
                    .map_err(|e| EvalError::Invalid(format!("{}: {e}", img.image_id)))?;
            }
        }
        Ok(())
    }

    pub fn all_images(&self) -> impl Iterator<Item = &ManifestImage> {
        let m = &self.manifest;
        m.vehicles
            .iter()
            .flat_map(|v| &v.images)
            .chain(m.duplicate_pairs.iter().flat_map(|d| &d.images))
            .chain(m.novel.iter().flat_map(|n| &n.images))
    }

    pub fn image_path(&self, img: &ManifestImage) -> PathBuf {
        self.root.join(&img.path)
    }

    pub fn load_image(&self, img: &ManifestImage) -> Result<ImageBuffer, EvalError> {
        let path = self.image_path(img);
        let bytes = fs::read(&path).map_err(|e| EvalError::Io {
            path: path.clone(),
            source: e,
        })?;
        decode_image(&bytes).map_err(|e| EvalError::Descriptor {
            image_id: img.image_id.clone(),
            message: format!("{}: {e}", path.display()),
        })
    }

    /// Decodes every listed image in parallel.
    pub fn load_images<'a>(
        &self,
        images: impl IntoIterator<Item = &'a ManifestImage>,
    ) -> Result<HashMap<String, ImageBuffer>, EvalError> {
        let list: Vec<&ManifestImage> = images.into_iter().collect();
        list.par_iter()
            .map(|img| Ok((img.image_id.clone(), self.load_image(img)?)))
            .collect()
    }

    /// Close-ups of the enrolled vehicles (duplicates and novel excluded).
    pub fn closeups(&self) -> Vec<RetrievalItem> {
        self.manifest
            .vehicles
            .iter()
            .flat_map(|v| {
                v.images
                    .iter()
                    .filter(|i| i.kind == ImageKind::CloseUp)
                    .map(|i| RetrievalItem {
                        image_id: i.image_id.clone(),
                        vehicle_id: v.vehicle_id.clone(),
                    })
            })
            .collect()
    }

    /// Every enrolled-vehicle image with its vehicle, for split protocols.
    pub fn split_images(&self) -> Vec<DatasetImage> {
        self.manifest
            .vehicles
            .iter()
            .flat_map(|v| {
                v.images.iter().map(|i| DatasetImage {
                    image_id: i.image_id.clone(),
                    vehicle_id: v.vehicle_id.clone(),
                })
            })
            .collect()
    }

    pub fn find_image(&self, image_id: &str) -> Option<(&str, &ManifestImage)> {
        self.manifest.vehicles.iter().find_map(|v| {
            v.images
                .iter()
                .find(|i| i.image_id == image_id)
                .map(|i| (v.vehicle_id.as_str(), i))
        })
    }

    /// Full-body image of the same vehicle and session as `image_id`.
    pub fn session_body(&self, image_id: &str) -> Option<&ManifestImage> {
        let (vehicle, img) = self.find_image(image_id)?;
        let entry = self
            .manifest
            .vehicles
            .iter()
            .find(|v| v.vehicle_id == vehicle)?;
        entry
            .images
            .iter()
            .find(|i| i.kind == ImageKind::FullBody && i.session == img.session)
    }

    /// Each vehicle session as one claim, in manifest order.
    pub fn session_claims(&self) -> Vec<(String, Vec<&ManifestImage>)> {
        let mut out = Vec::new();
        for v in &self.manifest.vehicles {
            let mut sessions: BTreeMap<u32, Vec<&ManifestImage>> = BTreeMap::new();
            for img in &v.images {
                sessions.entry(img.session).or_default().push(img);
            }
            out.extend(
                sessions
                    .into_values()
                    .map(|imgs| (v.vehicle_id.clone(), imgs)),
            );
        }
        out
    }

    pub fn evidence(&self, img: &ManifestImage) -> ImageEvidence {
        ImageEvidence {
            image_id: img.image_id.clone(),
            kind: img.kind,
            content_ref: self.image_path(img).display().to_string(),
            regions: img.regions.clone(),
        }
    }

    pub fn claim_record<'a>(
        &self,
        claim_id: &str,
        vehicle_id: &str,
        images: impl IntoIterator<Item = &'a ManifestImage>,
        submitted_at: TimestampMs,
    ) -> ClaimRecord {
        ClaimRecord::new(
            claim_id,
            vehicle_id,
            submitted_at,
            images.into_iter().map(|i| self.evidence(i)).collect(),
        )
    }
}
