//! Evidence to descriptors: crop each damage ROI, embed it, embed the body
//! shot, take a color histogram and fuse.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::claimstore::{ClaimRecord, ImageDescriptor, ImageKind, NormalizedBBox};
use crate::features::{
    fuse, EmbedKind, EmbeddingProvider, FeatureError, FusedDescriptor, FusionConfig,
};
use crate::imaging::{color_histogram, crop_roi, ImageBuffer};

/// Which pixels feed the histogram block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistSource {
    /// The full-body shot that accompanies the close-up.
    #[default]
    Body,
    /// The cropped damage region.
    Roi,
}

/// Failure inside the extraction pipeline, tagged with the stage that failed.
#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

impl PipelineError {
    fn at(stage: &'static str) -> impl FnOnce(String) -> Self {
        move |message| Self { stage, message }
    }
}

fn stage<T, E: std::fmt::Display>(name: &'static str, r: Result<T, E>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::at(name)(e.to_string()))
}

/// Key under which table-backed providers look up a region embedding.
pub fn region_key(image_id: &str, region_index: usize) -> String {
    format!("{image_id}#{region_index}")
}

pub struct Extractor<'a> {
    pub provider: &'a dyn EmbeddingProvider,
    pub fusion: FusionConfig,
    pub hist_source: HistSource,
}

impl<'a> Extractor<'a> {
    pub fn new(
        provider: &'a dyn EmbeddingProvider,
        fusion: FusionConfig,
        hist_source: HistSource,
    ) -> Self {
        Self {
            provider,
            fusion,
            hist_source,
        }
    }

    pub fn check_provider(&self) -> Result<(), FeatureError> {
        for (kind, block, want) in [
            (EmbedKind::LocalRoi, "local", self.fusion.local_dim),
            (EmbedKind::GlobalBody, "global", self.fusion.global_dim),
        ] {
            let got = self.provider.dim(kind);
            if got != want {
                return Err(FeatureError::DimMismatch {
                    block,
                    expected: want,
                    actual: got,
                });
            }
        }
        Ok(())
    }

    /// Descriptor for one damage region of a close-up.
    pub fn describe_region(
        &self,
        body_id: &str,
        body: &ImageBuffer,
        close_id: &str,
        close: &ImageBuffer,
        region_index: usize,
        roi: &NormalizedBBox,
    ) -> Result<FusedDescriptor, PipelineError> {
        let crop = stage("crop", crop_roi(close, roi))?;
        let local = stage(
            "embed",
            self.provider.embed(
                &region_key(close_id, region_index),
                &crop,
                EmbedKind::LocalRoi,
            ),
        )?;
        let global = stage(
            "embed",
            self.provider.embed(body_id, body, EmbedKind::GlobalBody),
        )?;
        let hist = match self.fusion.hist_bins {
            0 => None,
            bins => {
                let src = match self.hist_source {
                    HistSource::Body => body,
                    HistSource::Roi => &crop,
                };
                Some(stage("histogram", color_histogram(src, bins))?)
            }
        };
        stage("fuse", fuse(&local, &global, hist.as_ref(), &self.fusion))
    }

    /// One descriptor per close-up region, paired with the claim's first
    /// full-body shot. `images` maps image_id to decoded pixels.
    pub fn describe_claim(
        &self,
        record: &ClaimRecord,
        images: &HashMap<String, ImageBuffer>,
    ) -> Result<Vec<ImageDescriptor>, PipelineError> {
        let missing = |id: &str| PipelineError::at("decode")(format!("no pixels for image {id:?}"));
        let body_ev = record
            .evidence
            .iter()
            .find(|e| e.kind == ImageKind::FullBody)
            .ok_or_else(|| PipelineError::at("validate")("claim has no full_body image".into()))?;
        let body = images
            .get(&body_ev.image_id)
            .ok_or_else(|| missing(&body_ev.image_id))?;
        let mut out = Vec::new();
        for ev in record
            .evidence
            .iter()
            .filter(|e| e.kind == ImageKind::CloseUp)
        {
            let close = images
                .get(&ev.image_id)
                .ok_or_else(|| missing(&ev.image_id))?;
            for (i, region) in ev.regions.iter().enumerate() {
                out.push(ImageDescriptor {
                    image_id: ev.image_id.clone(),
                    descriptor: self.describe_region(
                        &body_ev.image_id,
                        body,
                        &ev.image_id,
                        close,
                        i,
                        &region.bbox,
                    )?,
                });
            }
        }
        Ok(out)
    }
}
