//! Feature-block and ROI-source ablations over the probe/gallery protocol.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::detection::Detection;
use super::retrieval::{cmc, make_probe_gallery, CmcCurve, ProbeGallery, RetrievalItem};
use super::EvalError;
use crate::claimstore::NormalizedBBox;
use crate::features::{BlockWeights, EmbeddingProvider, FusedDescriptor, FusionConfig};
use crate::imaging::ImageBuffer;
use crate::pipeline::{Extractor, HistSource};

pub const ABLATION_MAX_RANK: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiSource {
    /// Ground-truth boxes from the manifest.
    Annotation,
    /// Highest-confidence detector box per close-up.
    Detector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: String,
    pub fusion: FusionConfig,
    pub roi_source: RoiSource,
    #[serde(default)]
    pub hist_source: HistSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub roi_source: RoiSource,
    pub hist_bins: usize,
    pub weights: BlockWeights,
    pub probes: usize,
    pub rank1: f64,
    pub rank10: f64,
}

fn config(
    name: &str,
    local: f64,
    global: f64,
    hist_bins: usize,
    roi_source: RoiSource,
) -> AblationConfig {
    AblationConfig {
        name: name.into(),
        fusion: FusionConfig {
            hist_bins,
            block_weights: BlockWeights {
                local,
                global,
                hist: if hist_bins == 0 { 0.0 } else { 1.0 },
            },
            ..FusionConfig::default()
        },
        roi_source,
        hist_source: HistSource::Body,
    }
}

/// Global only, global + local, fused with 8/16/32 histogram bins, and
/// global + local on detector boxes.
pub fn default_configs() -> Vec<AblationConfig> {
    use RoiSource::*;
    vec![
        config("global_only", 0.0, 1.0, 0, Annotation),
        config("global_local", 1.0, 1.0, 0, Annotation),
        config("fused_hist8", 1.0, 1.0, 8, Annotation),
        config("fused_hist16", 1.0, 1.0, 16, Annotation),
        config("fused_hist32", 1.0, 1.0, 32, Annotation),
        config("global_local_detector", 1.0, 1.0, 0, Detector),
    ]
}

#[derive(Deserialize)]
struct ConfigFile {
    config: Vec<AblationConfig>,
}

/// Parses a TOML list of `[[config]]` tables.
pub fn parse_configs(text: &str) -> Result<Vec<AblationConfig>, EvalError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| EvalError::Parse {
        origin: "ablation config".into(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(file.config)
}

/// Everything a retrieval run needs that does not depend on the config:
/// the probe/gallery split, detector boxes and decoded pixels.
struct Prepared<'d> {
    split: ProbeGallery,
    detector_boxes: HashMap<&'d str, NormalizedBBox>,
    images: HashMap<String, ImageBuffer>,
}

fn prepare<'d>(
    ds: &'d Dataset,
    needs_detector: bool,
    detections: Option<&'d [Detection]>,
    seed: u64,
) -> Result<Prepared<'d>, EvalError> {
    let closeups = ds.closeups();
    let split = make_probe_gallery(&closeups, seed)?;
    let detector_boxes: HashMap<&str, NormalizedBBox> = match (needs_detector, detections) {
        (false, _) => HashMap::new(),
        (true, None) => return Err(EvalError::MissingDetections),
        (true, Some(dets)) => {
            let mut best: HashMap<&str, &Detection> = HashMap::new();
            for d in dets {
                let slot = best.entry(&d.image_id).or_insert(d);
                if d.confidence > slot.confidence {
                    *slot = d;
                }
            }
            best.into_iter().map(|(k, d)| (k, d.bbox)).collect()
        }
    };
    let mut wanted = Vec::new();
    for item in &closeups {
        let (_, close) = ds.find_image(&item.image_id).expect("listed close-up");
        let body = ds.session_body(&item.image_id).ok_or_else(|| {
            EvalError::Invalid(format!(
                "no full_body image in the session of {}",
                item.image_id
            ))
        })?;
        wanted.push(close);
        wanted.push(body);
    }
    let images = ds.load_images(wanted)?;
    Ok(Prepared {
        split,
        detector_boxes,
        images,
    })
}

fn run_config(
    ds: &Dataset,
    prepared: &Prepared<'_>,
    cfg: &AblationConfig,
    provider: &dyn EmbeddingProvider,
    max_rank: usize,
) -> Result<CmcCurve, EvalError> {
    let extractor = Extractor::new(provider, cfg.fusion, cfg.hist_source);
    extractor
        .check_provider()
        .map_err(|e| EvalError::Invalid(format!("{}: {e}", cfg.name)))?;
    let images = &prepared.images;
    let describe = |item: &RetrievalItem| -> Result<FusedDescriptor, String> {
        let (_, close) = ds
            .find_image(&item.image_id)
            .ok_or("not an enrolled close-up")?;
        let body = ds.session_body(&item.image_id).ok_or("no session body")?;
        let roi = match cfg.roi_source {
            RoiSource::Annotation => close.regions.first().map(|r| r.bbox),
            RoiSource::Detector => prepared.detector_boxes.get(item.image_id.as_str()).copied(),
        }
        .ok_or_else(|| format!("no {:?} box", cfg.roi_source))?;
        extractor
            .describe_region(
                &body.image_id,
                &images[&body.image_id],
                &close.image_id,
                &images[&close.image_id],
                0,
                &roi,
            )
            .map_err(|e| e.to_string())
    };
    cmc(
        &prepared.split.probes,
        &prepared.split.gallery,
        max_rank,
        describe,
    )
}

/// Full CMC curve for one config: one seeded close-up per vehicle as probe,
/// the remaining close-ups as gallery.
pub fn cmc_run(
    ds: &Dataset,
    cfg: &AblationConfig,
    detections: Option<&[Detection]>,
    seed: u64,
    provider: &dyn EmbeddingProvider,
    max_rank: usize,
) -> Result<CmcCurve, EvalError> {
    let prepared = prepare(ds, cfg.roi_source == RoiSource::Detector, detections, seed)?;
    run_config(ds, &prepared, cfg, provider, max_rank)
}

/// Runs each config over one seeded probe/gallery split of the dataset's
/// close-ups and reports rank-1 and rank-10.
pub fn ablation_run(
    ds: &Dataset,
    configs: &[AblationConfig],
    detections: Option<&[Detection]>,
    seed: u64,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<AblationRow>, EvalError> {
    let needs_detector = configs.iter().any(|c| c.roi_source == RoiSource::Detector);
    let prepared = prepare(ds, needs_detector, detections, seed)?;
    configs
        .iter()
        .map(|cfg| {
            let curve = run_config(ds, &prepared, cfg, provider, ABLATION_MAX_RANK)?;
            Ok(AblationRow {
                name: cfg.name.clone(),
                roi_source: cfg.roi_source,
                hist_bins: cfg.fusion.hist_bins,
                weights: cfg.fusion.block_weights,
                probes: curve.probe_count,
                rank1: curve.rank(1),
                rank10: curve.rank(10),
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("name,roi_source,hist_bins,w_local,w_global,w_hist,probes,rank1,rank10\n");
    for r in rows {
        let roi = match r.roi_source {
            RoiSource::Annotation => "annotation",
            RoiSource::Detector => "detector",
        };
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{},{:.6},{:.6}",
            r.name,
            roi,
            r.hist_bins,
            r.weights.local,
            r.weights.global,
            r.weights.hist,
            r.probes,
            r.rank1,
            r.rank10
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::fixture::{generate_fixture, FixtureSpec};
    use crate::evaluation::io::load_detections;
    use crate::features::ToyProvider;

    #[test]
    fn config_file_round_trip() {
        let text = r#"
[[config]]
name = "g"
roi_source = "annotation"
[config.fusion]
local_dim = 64
global_dim = 64
hist_bins = 0
block_weights = { local = 0.0, global = 1.0, hist = 0.0 }
"#;
        let c = parse_configs(text).unwrap();
        assert_eq!(c[0], default_configs()[0].clone_with_name("g"));
        assert!(parse_configs("config = 3").is_err());
    }

    impl AblationConfig {
        fn clone_with_name(&self, name: &str) -> Self {
            Self {
                name: name.into(),
                ..self.clone()
            }
        }
    }

    #[test]
    fn detector_configs_need_detections() {
        let d = tempfile::tempdir().unwrap();
        let spec = FixtureSpec {
            vehicles: 4,
            duplicate_pairs: 0,
            novel_vehicles: 0,
            ..FixtureSpec::default()
        };
        generate_fixture(&spec, d.path()).unwrap();
        let ds = Dataset::load(&d.path().join("manifest.json")).unwrap();
        let toy = ToyProvider::default();
        assert!(matches!(
            ablation_run(&ds, &default_configs(), None, 1, &toy),
            Err(EvalError::MissingDetections)
        ));
        let dets = load_detections(&d.path().join("detections.txt")).unwrap();
        let rows = ablation_run(&ds, &default_configs(), Some(&dets), 1, &toy).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.probes == 4 && r.rank1 <= r.rank10));
        let csv = ablation_csv(&rows);
        assert_eq!(csv.lines().count(), 7);
        assert_eq!(
            csv,
            ablation_csv(&ablation_run(&ds, &default_configs(), Some(&dets), 1, &toy).unwrap())
        );
    }
}
