//! Detection metrics, split protocols, retrieval (CMC) evaluation,
//! ablations and the synthetic fixture generator.

pub mod ablation;
pub mod dataset;
pub mod detection;
pub mod fixture;
pub mod io;
pub mod retrieval;
pub mod split;

use std::path::PathBuf;

use thiserror::Error;

pub use ablation::{
    ablation_csv, ablation_run, cmc_run, default_configs, AblationConfig, AblationRow, RoiSource,
};
pub use dataset::{Dataset, Manifest, ManifestImage};
pub use detection::{
    iou, match_detections, pr_curve, precision_recall_at, Annotation, Detection, MatchOutcome,
    PrCurve, PrPoint,
};
pub use fixture::{generate_fixture, self_check, FixtureSpec, Perturbation, SelfCheck};
pub use retrieval::{cmc, make_probe_gallery, CmcCurve, ProbeGallery, RetrievalItem};
pub use split::{make_split, DatasetImage, SplitMode, SplitSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("items from different images in one match: {first:?} and {other:?}")]
    MixedImages { first: String, other: String },
    #[error("vehicles with fewer than 2 close-ups: {}", .0.join(", "))]
    TooFewCloseUps(Vec<String>),
    #[error("detector ROI requested but no detector output was supplied")]
    MissingDetections,
    #[error("descriptor for {image_id}: {message}")]
    Descriptor { image_id: String, message: String },
    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}
