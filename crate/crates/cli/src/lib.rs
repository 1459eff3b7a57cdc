//! Operator CLI: fixture generation, enrollment, checks, evaluation runs and
//! the HTTP server. Machine-readable output goes to stdout (JSON or CSV),
//! human summaries and diagnostics to stderr.
//!
//! Exit codes: 0 success, 1 domain error, 2 usage error.

pub mod http;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use claimguard_core::claimstore::{
    ClaimRecord, ClaimStore, Clock, DamageClass, DamageRegion, ImageEvidence, ImageKind,
    NormalizedBBox, StoreOptions,
};
use claimguard_core::config::AppConfig;
use claimguard_core::evaluation::ablation::{parse_configs, AblationConfig};
use claimguard_core::evaluation::io::{
    cmc_csv, load_annotations, load_detections, pr_curve_csv, pr_table_csv,
};
use claimguard_core::evaluation::{
    ablation_csv, ablation_run, cmc_run, default_configs, generate_fixture, pr_curve, Dataset,
    FixtureSpec, ManifestImage, Perturbation, RoiSource,
};
use claimguard_core::features::FusedDescriptor;
use claimguard_core::imaging::decode_image;
use claimguard_core::matcher::{fraud_check, FraudMode, FraudPolicy};
use claimguard_core::pipeline::Extractor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "claimguard",
    version,
    about = "Visual fraud screening for photo-based insurance claims"
)]
pub struct Cli {
    /// TOML config shared with the server; CLAIMGUARD_* variables override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: images, manifest, annotations, detections.
    GenFixtures(GenFixturesArgs),
    /// Enroll every vehicle session of a manifest into a claim store.
    Enroll(EnrollArgs),
    /// Screen images against a store; prints the assessment as JSON.
    Check(CheckArgs),
    /// Detection precision/recall table from annotation and detector files.
    EvalDet(EvalDetArgs),
    /// CMC curve over a manifest's close-ups.
    EvalCmc(EvalCmcArgs),
    /// Rank-1/rank-10 for a list of feature configurations.
    Ablate(AblateArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenFixturesArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Number of enrolled vehicles.
    #[arg(long, default_value_t = 50)]
    pub vehicles: usize,
    /// Capture sessions per vehicle, each a full-body plus a close-up.
    #[arg(long, default_value_t = 2)]
    pub images_per_vehicle: usize,
    /// Perturbed re-submissions of enrolled sessions.
    #[arg(long, default_value_t = 25)]
    pub duplicate_pairs: usize,
    /// Submissions from vehicles never enrolled.
    #[arg(long, default_value_t = 50)]
    pub novel: usize,
    /// Brightness shift applied to duplicate copies.
    #[arg(long, default_value_t = 10, allow_negative_numbers = true)]
    pub brightness_delta: i32,
    /// Maximum fraction cropped from each edge of duplicate copies.
    #[arg(long, default_value_t = 0.02)]
    pub crop_jitter: f64,
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Store directory; defaults to `store_dir` from the config.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Fixed submission timestamp (ms since epoch) for reproducible stores.
    #[arg(long)]
    pub at: Option<i64>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Store directory; defaults to `store_dir` from the config.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Check a duplicate-pair or novel submission from this manifest...
    #[arg(long, requires = "submission", conflicts_with_all = ["body", "close"])]
    pub manifest: Option<PathBuf>,
    /// ...identified by its pair_id or submission_id.
    #[arg(long, requires = "manifest")]
    pub submission: Option<String>,
    /// ...or check explicit files: one full-body image,
    #[arg(long, requires = "close")]
    pub body: Option<PathBuf>,
    /// one or more close-ups,
    #[arg(long, num_args = 1.., requires = "body")]
    pub close: Vec<PathBuf>,
    /// and one damage box `cx,cy,w,h` per close-up, in order.
    #[arg(long, num_args = 1.., value_parser = parse_bbox)]
    pub region: Vec<NormalizedBBox>,
    /// Vehicle named on the claim (matters for same_vehicle mode).
    #[arg(long, default_value = "unknown")]
    pub vehicle: String,
    /// Flag when the best similarity reaches this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Number of matches to report.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Search the whole history or only the claimed vehicle's.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    CrossVehicle,
    SameVehicle,
}

impl From<ModeArg> for FraudMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::CrossVehicle => FraudMode::CrossVehicle,
            ModeArg::SameVehicle => FraudMode::SameVehicle,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalDetArgs {
    /// Ground truth: `image_id class cx cy w h` per line.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Detector output: `image_id class confidence cx cy w h` per line.
    #[arg(long)]
    pub detections: PathBuf,
    /// IoU needed for a detection to match a ground-truth box.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Strictly increasing confidence thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5")]
    pub thresholds: Vec<f64>,
    /// Also write `recall,precision` plot data here.
    #[arg(long)]
    pub curve_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalCmcArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Last rank reported.
    #[arg(long, default_value_t = 10)]
    pub max_rank: usize,
    /// Damage box source for the local block.
    #[arg(long, value_enum, default_value = "annotation")]
    pub roi: RoiArg,
    /// Detector output used with `--roi detector`; defaults to
    /// `detections.txt` next to the manifest.
    #[arg(long)]
    pub detections: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoiArg {
    Annotation,
    Detector,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// TOML file of `[[config]]` tables; the built-in list when omitted.
    #[arg(long)]
    pub configs: Option<PathBuf>,
    /// Detector output for detector-ROI configs; defaults to
    /// `detections.txt` next to the manifest.
    #[arg(long)]
    pub detections: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Overrides `bind` from the config.
    #[arg(long)]
    pub bind: Option<String>,
    /// Overrides `store_dir` from the config.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

fn parse_bbox(s: &str) -> Result<NormalizedBBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != 4 {
        return Err(format!("expected cx,cy,w,h, got {} values", v.len()));
    }
    NormalizedBBox::new(v[0], v[1], v[2], v[3]).map_err(|e| e.to_string())
}

/// Parses `args` and runs the command, writing to the given streams.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = write!(out, "{}", e.render());
                return EXIT_OK;
            }
            let _ = writeln!(err, "{}", e.render());
            let _ = write!(err, "{}", usage_help(&argv));
            return EXIT_USAGE;
        }
    };
    match execute(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {}", error_chain(&e));
            EXIT_DOMAIN
        }
    }
}

/// Help for the subcommand named in `argv`, or the top-level help.
fn usage_help(argv: &[OsString]) -> String {
    let mut cmd = Cli::command();
    let name = argv
        .iter()
        .skip(1)
        .filter_map(|a| a.to_str())
        .find(|a| cmd.find_subcommand(a).is_some())
        .map(str::to_owned);
    match name.and_then(|n| cmd.find_subcommand_mut(&n).map(|c| c.render_help())) {
        Some(help) => help.to_string(),
        None => cmd.render_help().to_string(),
    }
}

/// `outer: inner: ...`, skipping causes the outer message already quotes.
fn error_chain(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    AppConfig::load(path).map_err(|e| anyhow!("config: {e}"))
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::GenFixtures(a) => gen_fixtures(a, cli.seed, out, err),
        Command::Enroll(a) => enroll(a, &config, out, err),
        Command::Check(a) => check(a, &config, out, err),
        Command::EvalDet(a) => eval_det(a, out, err),
        Command::EvalCmc(a) => eval_cmc(a, &config, cli.seed, out, err),
        Command::Ablate(a) => ablate(a, &config, cli.seed, out, err),
        Command::Serve(a) => serve(a, config, err),
    }
}

fn gen_fixtures(
    a: GenFixturesArgs,
    seed: u64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let spec = FixtureSpec {
        vehicles: a.vehicles,
        images_per_vehicle: a.images_per_vehicle,
        duplicate_pairs: a.duplicate_pairs,
        novel_vehicles: a.novel,
        perturbation: Perturbation {
            brightness_delta: a.brightness_delta,
            crop_jitter_frac: a.crop_jitter,
        },
        seed,
    };
    let manifest = generate_fixture(&spec, &a.out)?;
    let images = manifest
        .vehicles
        .iter()
        .map(|v| v.images.len())
        .sum::<usize>()
        + manifest
            .duplicate_pairs
            .iter()
            .map(|p| p.images.len())
            .sum::<usize>()
        + manifest.novel.iter().map(|n| n.images.len()).sum::<usize>();
    writeln!(
        out,
        "{}",
        serde_json::json!({
            "manifest": a.out.join("manifest.json"),
            "vehicles": manifest.vehicles.len(),
            "duplicate_pairs": manifest.duplicate_pairs.len(),
            "novel": manifest.novel.len(),
            "images": images,
        })
    )?;
    writeln!(err, "wrote {images} images to {}", a.out.display())?;
    Ok(())
}

fn store_options(at: Option<i64>) -> StoreOptions {
    StoreOptions {
        clock: at.map_or(Clock::System, Clock::Fixed),
        ..StoreOptions::default()
    }
}

fn enroll(
    a: EnrollArgs,
    config: &AppConfig,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let ds = Dataset::load(&a.manifest)?;
    let store_dir = a.store.unwrap_or_else(|| config.store_dir.clone());
    let mut store = ClaimStore::open_or_create(&store_dir, config.fusion, store_options(a.at))?;
    let provider = config.provider.build()?;
    let extractor = Extractor::new(provider.as_ref(), config.fusion, config.hist_source);
    extractor.check_provider()?;
    let (mut enrolled, mut skipped) = (0usize, 0usize);
    for (vehicle, images) in ds.session_claims() {
        let session = images.first().map_or(0, |i| i.session);
        let claim_id = format!("{vehicle}-s{session}");
        if store.state().get_claim(&claim_id).is_some() {
            skipped += 1;
            continue;
        }
        let record = ds.claim_record(&claim_id, &vehicle, images.iter().copied(), store.now());
        let pixels = ds.load_images(images.iter().copied())?;
        let descriptors = extractor
            .describe_claim(&record, &pixels)
            .with_context(|| format!("claim {claim_id}"))?;
        store.enroll_claim(record, descriptors)?;
        enrolled += 1;
    }
    store.checkpoint()?;
    let state = store.state();
    writeln!(
        out,
        "{}",
        serde_json::json!({
            "store": store_dir,
            "enrolled": enrolled,
            "skipped": skipped,
            "claims": state.claim_count(),
            "features": state.features().len(),
        })
    )?;
    writeln!(
        err,
        "enrolled {enrolled} claims ({skipped} already present) into {}",
        store_dir.display()
    )?;
    Ok(())
}

fn probe_from_manifest(ds: &Dataset, id: &str) -> Result<(String, Vec<ManifestImage>)> {
    let m = &ds.manifest;
    if let Some(p) = m.duplicate_pairs.iter().find(|p| p.pair_id == id) {
        return Ok((p.claimed_vehicle_id.clone(), p.images.clone()));
    }
    if let Some(n) = m.novel.iter().find(|n| n.submission_id == id) {
        return Ok((n.vehicle_id.clone(), n.images.clone()));
    }
    bail!("no duplicate pair or novel submission {id:?} in the manifest")
}

fn check(a: CheckArgs, config: &AppConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let store_dir = a.store.clone().unwrap_or_else(|| config.store_dir.clone());
    if !store_dir
        .join(claimguard_core::claimstore::LOG_FILE)
        .exists()
    {
        bail!("{}: no claim store here", store_dir.display());
    }
    let store = ClaimStore::open(&store_dir, StoreOptions::default())?;
    let provider = config.provider.build()?;
    let extractor = Extractor::new(provider.as_ref(), *store.layout(), config.hist_source);
    extractor.check_provider()?;

    let probe_id = "probe";
    let (record, pixels) = match (&a.manifest, &a.submission) {
        (Some(manifest), Some(id)) => {
            let ds = Dataset::load(manifest)?;
            let (vehicle, images) = probe_from_manifest(&ds, id)?;
            (
                ds.claim_record(probe_id, &vehicle, images.iter(), 0),
                ds.load_images(images.iter())?,
            )
        }
        _ => {
            let body = a
                .body
                .as_ref()
                .ok_or_else(|| anyhow!("give --manifest/--submission or --body/--close"))?;
            if a.region.len() != a.close.len() {
                bail!(
                    "{} close-ups but {} --region boxes",
                    a.close.len(),
                    a.region.len()
                );
            }
            let read = |p: &Path| -> Result<_> {
                let bytes = fs::read(p).with_context(|| p.display().to_string())?;
                decode_image(&bytes).with_context(|| p.display().to_string())
            };
            let mut evidence = vec![ImageEvidence {
                image_id: "body".into(),
                kind: ImageKind::FullBody,
                content_ref: body.display().to_string(),
                regions: vec![],
            }];
            let mut pixels = std::collections::HashMap::from([("body".to_string(), read(body)?)]);
            for (i, (path, bbox)) in a.close.iter().zip(&a.region).enumerate() {
                let id = format!("close{i}");
                pixels.insert(id.clone(), read(path)?);
                evidence.push(ImageEvidence {
                    image_id: id,
                    kind: ImageKind::CloseUp,
                    content_ref: path.display().to_string(),
                    regions: vec![DamageRegion::annotation(*bbox, DamageClass::Dent)],
                });
            }
            (
                ClaimRecord::new(probe_id, a.vehicle.clone(), 0, evidence),
                pixels,
            )
        }
    };
    record.validate()?;
    let descriptors: Vec<FusedDescriptor> = extractor
        .describe_claim(&record, &pixels)?
        .into_iter()
        .map(|d| d.descriptor)
        .collect();
    let policy = FraudPolicy {
        mode: a.mode.map_or(config.policy.mode, Into::into),
        threshold: a.threshold.unwrap_or(config.policy.threshold),
        top_k: a.top_k.unwrap_or(config.policy.top_k),
    };
    let assessment = fraud_check(&record, &descriptors, store.state(), &policy)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&assessment)?)?;
    match &assessment.best {
        Some(b) => writeln!(
            err,
            "{}: best match {} ({}) similarity {:.6}",
            if assessment.flagged {
                "FLAGGED"
            } else {
                "not flagged"
            },
            b.claim_id,
            b.image_id,
            b.similarity
        )?,
        None => writeln!(err, "not flagged: empty gallery")?,
    }
    Ok(())
}

fn eval_det(a: EvalDetArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if !(0.0..=1.0).contains(&a.iou) || a.iou <= 0.0 {
        bail!("--iou must lie in (0, 1], got {}", a.iou);
    }
    let gts = load_annotations(&a.annotations)?;
    let preds = load_detections(&a.detections)?;
    let curve = pr_curve(&preds, &gts, a.iou, &a.thresholds)?;
    out.write_all(pr_table_csv(&curve).as_bytes())?;
    if let Some(path) = &a.curve_out {
        fs::write(path, pr_curve_csv(&curve)).with_context(|| path.display().to_string())?;
    }
    for p in &curve.points {
        writeln!(
            err,
            "conf >= {:.3}: precision {:.4} recall {:.4} (tp {} fp {} fn {})",
            p.confidence_threshold, p.precision, p.recall, p.tp, p.fp, p.fn_
        )?;
    }
    Ok(())
}

fn detections_for(
    manifest: &Path,
    explicit: Option<&Path>,
) -> Result<Option<Vec<claimguard_core::evaluation::Detection>>> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => manifest
            .parent()
            .unwrap_or(Path::new("."))
            .join("detections.txt"),
    };
    if explicit.is_none() && !path.exists() {
        return Ok(None);
    }
    Ok(Some(load_detections(&path)?))
}

fn eval_cmc(
    a: EvalCmcArgs,
    config: &AppConfig,
    seed: u64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let ds = Dataset::load(&a.manifest)?;
    let roi_source = match a.roi {
        RoiArg::Annotation => RoiSource::Annotation,
        RoiArg::Detector => RoiSource::Detector,
    };
    let dets = match roi_source {
        RoiSource::Detector => detections_for(&a.manifest, a.detections.as_deref())?,
        RoiSource::Annotation => None,
    };
    let cfg = AblationConfig {
        name: "config".into(),
        fusion: config.fusion,
        roi_source,
        hist_source: config.hist_source,
    };
    let provider = config.provider.build()?;
    let curve = cmc_run(
        &ds,
        &cfg,
        dets.as_deref(),
        seed,
        provider.as_ref(),
        a.max_rank,
    )?;
    out.write_all(cmc_csv(&curve).as_bytes())?;
    writeln!(
        err,
        "{} probes: rank-1 {:.4}, rank-{} {:.4}",
        curve.probe_count,
        curve.rank(1),
        a.max_rank,
        curve.rank(a.max_rank)
    )?;
    Ok(())
}

fn ablate(
    a: AblateArgs,
    config: &AppConfig,
    seed: u64,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let ds = Dataset::load(&a.manifest)?;
    let configs = match &a.configs {
        Some(p) => parse_configs(&fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => default_configs(),
    };
    let needs_detector = configs.iter().any(|c| c.roi_source == RoiSource::Detector);
    let dets = if needs_detector {
        detections_for(&a.manifest, a.detections.as_deref())?
    } else {
        None
    };
    let provider = config.provider.build()?;
    let rows = ablation_run(&ds, &configs, dets.as_deref(), seed, provider.as_ref())?;
    out.write_all(ablation_csv(&rows).as_bytes())?;
    for r in &rows {
        writeln!(
            err,
            "{:<24} rank-1 {:.4} rank-10 {:.4}",
            r.name, r.rank1, r.rank10
        )?;
    }
    Ok(())
}

fn serve(a: ServeArgs, mut config: AppConfig, err: &mut dyn Write) -> Result<()> {
    if let Some(b) = a.bind {
        config.bind = b;
    }
    if let Some(s) = a.store {
        config.store_dir = s;
    }
    let bind = config.bind.clone();
    let service = claimguard_core::service::Service::open(config)?;
    writeln!(err, "listening on {bind}")?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(http::serve(std::sync::Arc::new(service), &bind))
}
