//! Deterministic synthetic claim dataset.
//!
//! Each vehicle gets a look (body color from a small shared palette, a
//! plate-like glyph and a per-vehicle damage texture) and
//! `images_per_vehicle` capture sessions. A session is a full-body shot plus a
//! close-up of the damage; sessions differ in framing, brightness and where
//! the damage sits in the close-up. Because the palette is shared, body shots
//! say little about identity, and the damage texture inside the annotated box
//! carries the discriminative signal.
//!
//! Duplicate pairs are perturbed copies of one enrolled session (brightness
//! shift, small crop-and-resize) standing in for fraudulent resubmissions.
//! Novel submissions are fresh vehicles with fresh damage.
//!
//! Output layout: `manifest.json`, `annotations.txt`, `detections.txt` (a
//! jittered detector, true boxes at IoU >= 0.7 plus low-confidence false
//! positives) and `images/*.png`. Identical specs give byte-identical trees.

use std::fs;
use std::path::Path;

use image::imageops::{self, FilterType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{
    Dataset, DuplicatePair, Manifest, ManifestImage, NovelSubmission, VehicleEntry,
};
use super::detection::{iou, Annotation, Detection};
use super::io::{format_annotation, format_detection};
use super::EvalError;
use crate::claimstore::{DamageClass, DamageRegion, ImageKind, NormalizedBBox};
use crate::imaging::{encode_png, ImageBuffer};
use crate::matcher::cosine_similarity;
use crate::pipeline::Extractor;

pub const BODY_SIZE: (u32, u32) = (64, 48);
pub const CLOSE_SIZE: (u32, u32) = (96, 96);
const PATTERN_CELLS: u32 = 4;
/// Minimum IoU between a simulated detection and its ground-truth box.
pub const DETECTOR_MIN_IOU: f64 = 0.7;

// Body-shot channel values sit 2..8 above a multiple of 32. Session
// brightness adds 0..=12 and the default perturbation another +10, which
// keeps every pixel inside its 8-bin histogram bucket.
const PALETTE: [[u8; 3]; 4] = [[162, 34, 40], [40, 72, 136], [200, 200, 200], [70, 104, 66]];
const BACKGROUND: [u8; 3] = [130, 130, 130];
const WINDOW: [u8; 3] = [66, 98, 130];
const DARK: [u8; 3] = [34, 34, 34];
const LIGHT: [u8; 3] = [226, 226, 226];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    pub brightness_delta: i32,
    /// Maximum fraction trimmed from each edge before resizing back.
    pub crop_jitter_frac: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            brightness_delta: 10,
            crop_jitter_frac: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub vehicles: usize,
    /// Capture sessions per vehicle; each yields a full-body and a close-up.
    pub images_per_vehicle: usize,
    pub duplicate_pairs: usize,
    pub novel_vehicles: usize,
    pub perturbation: Perturbation,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            vehicles: 50,
            images_per_vehicle: 2,
            duplicate_pairs: 25,
            novel_vehicles: 50,
            perturbation: Perturbation::default(),
            seed: 7,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::Invalid(m.to_string()));
        if self.vehicles < 2 {
            return bad("fixture needs at least 2 vehicles");
        }
        if self.images_per_vehicle == 0 {
            return bad("images_per_vehicle must be at least 1");
        }
        if self.vehicles > 1000 || self.novel_vehicles > 1000 || self.duplicate_pairs > 1000 {
            return bad("fixture counts are capped at 1000");
        }
        let p = &self.perturbation;
        if !(0.0..0.25).contains(&p.crop_jitter_frac) || p.brightness_delta.abs() > 64 {
            return bad(
                "perturbation out of range (crop_jitter_frac < 0.25, |brightness_delta| <= 64)",
            );
        }
        Ok(())
    }
}

/// Per-vehicle appearance.
#[derive(Debug, Clone, Copy)]
struct Look {
    color: [u8; 3],
    glyph: u8,
    pattern: u64,
    class: DamageClass,
}

impl Look {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            color: PALETTE[rng.random_range(0..PALETTE.len())],
            glyph: rng.random(),
            pattern: rng.random::<u64>() & ((1 << (PATTERN_CELLS * PATTERN_CELLS)) - 1),
            class: [DamageClass::Scratch, DamageClass::Dent, DamageClass::Crack]
                [rng.random_range(0..3)],
        }
    }

    fn damage_colors(&self) -> ([u8; 3], [u8; 3]) {
        match self.class {
            DamageClass::Scratch => (DARK, LIGHT),
            DamageClass::Dent => ([66, 34, 34], [226, 194, 162]),
            DamageClass::Crack => ([34, 34, 66], [194, 226, 226]),
        }
    }
}

/// Per-session capture conditions.
#[derive(Debug, Clone, Copy)]
struct Capture {
    dx: i32,
    dy: i32,
    brightness: i32,
    damage: (u32, u32, u32, u32),
}

impl Capture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let (cw, ch) = CLOSE_SIZE;
        let w = rng.random_range(30..=46);
        let h = rng.random_range(30..=46);
        let x = rng.random_range(6..=cw - 6 - w);
        let y = rng.random_range(6..=ch - 6 - h);
        Self {
            dx: rng.random_range(-3..=3),
            dy: rng.random_range(-2..=2),
            brightness: rng.random_range(0..=12),
            damage: (x, y, w, h),
        }
    }
}

fn shift(c: [u8; 3], delta: i32) -> [u8; 3] {
    c.map(|v| (v as i32 + delta).clamp(0, 255) as u8)
}

fn inside(x: i32, y: i32, x0: i32, y0: i32, w: i32, h: i32) -> bool {
    x >= x0 && x < x0 + w && y >= y0 && y < y0 + h
}

fn render_body(look: &Look, cap: &Capture) -> ImageBuffer {
    let (w, h) = BODY_SIZE;
    ImageBuffer::from_fn(w, h, |x, y| {
        let (x, y) = (x as i32 - cap.dx, y as i32 - cap.dy);
        let c = if inside(x, y, 28, 28, 8, 4) {
            let bit = ((y - 28) / 2) * 4 + (x - 28) / 2;
            if look.glyph >> bit & 1 == 1 {
                LIGHT
            } else {
                DARK
            }
        } else if inside(x, y, 18, 18, 28, 6) {
            WINDOW
        } else if inside(x, y, 14, 34, 6, 6) || inside(x, y, 44, 34, 6, 6) {
            DARK
        } else if inside(x, y, 10, 16, 44, 20) {
            look.color
        } else {
            BACKGROUND
        };
        shift(c, cap.brightness)
    })
    .expect("fixed-size body image")
}

fn render_close(look: &Look, cap: &Capture) -> (ImageBuffer, NormalizedBBox) {
    let (w, h) = CLOSE_SIZE;
    let (x0, y0, dw, dh) = cap.damage;
    let (dark, light) = look.damage_colors();
    let img = ImageBuffer::from_fn(w, h, |x, y| {
        let c = if inside(
            x as i32, y as i32, x0 as i32, y0 as i32, dw as i32, dh as i32,
        ) {
            let i = (x - x0) * PATTERN_CELLS / dw;
            let j = (y - y0) * PATTERN_CELLS / dh;
            if look.pattern >> (j * PATTERN_CELLS + i) & 1 == 1 {
                light
            } else {
                dark
            }
        } else {
            // panel with a faint vertical shading
            shift(look.color, (y as i32 * 8) / h as i32 - 4)
        };
        shift(c, cap.brightness)
    })
    .expect("fixed-size close-up image");
    let bbox = NormalizedBBox::from_pixel_corners(
        x0 as f64,
        y0 as f64,
        (x0 + dw) as f64,
        (y0 + dh) as f64,
        w,
        h,
    )
    .expect("damage box lies inside the frame");
    (img, bbox)
}

/// Crop rectangle `(left, top, right, bottom)` in pixels for the
/// crop-and-resize perturbation.
fn jitter_crop(rng: &mut ChaCha8Rng, w: u32, h: u32, frac: f64) -> (u32, u32, u32, u32) {
    let mut m = |extent: u32| (rng.random::<f64>() * frac * extent as f64).round() as u32;
    let (l, t, r, b) = (m(w), m(h), m(w), m(h));
    (l, t, w - r, h - b)
}

fn perturb(
    img: &ImageBuffer,
    bbox: Option<&NormalizedBBox>,
    crop: (u32, u32, u32, u32),
    brightness: i32,
) -> (ImageBuffer, Option<NormalizedBBox>) {
    let (w, h) = (img.width(), img.height());
    let (l, t, r, b) = crop;
    let bright =
        ImageBuffer::from_fn(w, h, |x, y| shift(img.pixel(x, y), brightness)).expect("same size");
    let rgb = bright.into_rgb_image();
    let cropped = imageops::crop_imm(&rgb, l, t, r - l, b - t).to_image();
    let out = ImageBuffer::from_rgb_image(imageops::resize(&cropped, w, h, FilterType::Triangle));
    let moved = bbox.map(|bb| {
        let (x0, y0, x1, y1) = bb.to_pixel_corners(w, h);
        let sx = w as f64 / (r - l) as f64;
        let sy = h as f64 / (b - t) as f64;
        let fx = |x: f64| ((x - l as f64) * sx).clamp(0.0, w as f64);
        let fy = |y: f64| ((y - t as f64) * sy).clamp(0.0, h as f64);
        NormalizedBBox::from_pixel_corners(fx(x0), fy(y0), fx(x1), fy(y1), w, h)
            .expect("box survives a small crop")
    });
    (out, moved)
}

fn jitter_box(rng: &mut ChaCha8Rng, gt: &NormalizedBBox) -> NormalizedBBox {
    loop {
        let cx = gt.cx() + rng.random_range(-0.06..0.06) * gt.w();
        let cy = gt.cy() + rng.random_range(-0.06..0.06) * gt.h();
        let w = gt.w() * rng.random_range(0.9..1.1);
        let h = gt.h() * rng.random_range(0.9..1.1);
        let l = (cx - w / 2.0).max(0.0);
        let t = (cy - h / 2.0).max(0.0);
        let r = (cx + w / 2.0).min(1.0);
        let b = (cy + h / 2.0).min(1.0);
        if let Ok(bb) = NormalizedBBox::new((l + r) / 2.0, (t + b) / 2.0, r - l, b - t) {
            if iou(&bb, gt) >= DETECTOR_MIN_IOU {
                return bb;
            }
        }
    }
}

fn random_box(rng: &mut ChaCha8Rng) -> NormalizedBBox {
    let w = rng.random_range(0.1..0.3);
    let h = rng.random_range(0.1..0.3);
    let cx = rng.random_range(w / 2.0..1.0 - w / 2.0);
    let cy = rng.random_range(h / 2.0..1.0 - h / 2.0);
    NormalizedBBox::new(cx, cy, w, h).expect("box inside frame")
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_DUPLICATE: u64 = 1 << 32;
const STREAM_NOVEL: u64 = 2 << 32;
const STREAM_DETECTOR: u64 = 3 << 32;
const STREAM_ASSIGN: u64 = 4 << 32;

struct Writer<'a> {
    dir: &'a Path,
}

impl Writer<'_> {
    fn image(
        &self,
        image_id: &str,
        kind: ImageKind,
        session: u32,
        img: &ImageBuffer,
        regions: Vec<DamageRegion>,
    ) -> Result<ManifestImage, EvalError> {
        let rel = format!("images/{image_id}.png");
        let path = self.dir.join(&rel);
        fs::write(&path, encode_png(img)).map_err(|e| EvalError::Io { path, source: e })?;
        Ok(ManifestImage {
            image_id: image_id.to_string(),
            kind,
            path: rel,
            session,
            regions,
        })
    }

    fn text(&self, name: &str, body: String) -> Result<(), EvalError> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|e| EvalError::Io { path, source: e })
    }
}

/// Writes the dataset under `out_dir` and returns its manifest.
pub fn generate_fixture(spec: &FixtureSpec, out_dir: &Path) -> Result<Manifest, EvalError> {
    spec.validate()?;
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| EvalError::Io {
        path: images_dir.clone(),
        source: e,
    })?;
    let out = Writer { dir: out_dir };
    let seed = spec.seed;

    let mut looks = Vec::with_capacity(spec.vehicles);
    let mut captures = Vec::with_capacity(spec.vehicles);
    let mut vehicles = Vec::with_capacity(spec.vehicles);
    for v in 0..spec.vehicles {
        let mut rng = rng_for(seed, v as u64);
        let look = Look::random(&mut rng);
        let vehicle_id = format!("V{v:03}");
        let mut images = Vec::new();
        let mut caps = Vec::new();
        for s in 0..spec.images_per_vehicle {
            let cap = Capture::random(&mut rng);
            let body = render_body(&look, &cap);
            let (close, bbox) = render_close(&look, &cap);
            let stem = format!("{vehicle_id}_s{s}");
            images.push(out.image(
                &format!("{stem}_body"),
                ImageKind::FullBody,
                s as u32,
                &body,
                vec![],
            )?);
            images.push(out.image(
                &format!("{stem}_close"),
                ImageKind::CloseUp,
                s as u32,
                &close,
                vec![DamageRegion::annotation(bbox, look.class)],
            )?);
            caps.push(cap);
        }
        looks.push(look);
        captures.push(caps);
        vehicles.push(VehicleEntry { vehicle_id, images });
    }

    // Sources for duplicates: a seeded permutation of (vehicle, session).
    let mut sources: Vec<(usize, usize)> = (0..spec.vehicles)
        .flat_map(|v| (0..spec.images_per_vehicle).map(move |s| (v, s)))
        .collect();
    {
        use rand::seq::SliceRandom;
        sources.shuffle(&mut rng_for(seed, STREAM_ASSIGN));
    }
    let p = spec.perturbation;
    let mut duplicate_pairs = Vec::with_capacity(spec.duplicate_pairs);
    for i in 0..spec.duplicate_pairs {
        let (v, s) = sources[i % sources.len()];
        let mut rng = rng_for(seed, STREAM_DUPLICATE + i as u64);
        let look = &looks[v];
        let cap = &captures[v][s];
        let pair_id = format!("D{i:03}");
        let body = render_body(look, cap);
        let (close, bbox) = render_close(look, cap);
        let (bw, bh) = BODY_SIZE;
        let (cw, ch) = CLOSE_SIZE;
        let (body2, _) = perturb(
            &body,
            None,
            jitter_crop(&mut rng, bw, bh, p.crop_jitter_frac),
            p.brightness_delta,
        );
        let (close2, bbox2) = perturb(
            &close,
            Some(&bbox),
            jitter_crop(&mut rng, cw, ch, p.crop_jitter_frac),
            p.brightness_delta,
        );
        let source_vehicle_id = vehicles[v].vehicle_id.clone();
        // alternate same-vehicle and cross-vehicle reclaims
        let claimed_vehicle_id = if i % 2 == 0 {
            source_vehicle_id.clone()
        } else {
            format!("X{i:03}")
        };
        let images = vec![
            out.image(
                &format!("{pair_id}_body"),
                ImageKind::FullBody,
                0,
                &body2,
                vec![],
            )?,
            out.image(
                &format!("{pair_id}_close"),
                ImageKind::CloseUp,
                0,
                &close2,
                vec![DamageRegion::annotation(
                    bbox2.expect("box given"),
                    look.class,
                )],
            )?,
        ];
        duplicate_pairs.push(DuplicatePair {
            pair_id,
            source_vehicle_id,
            source_session: s as u32,
            claimed_vehicle_id,
            images,
        });
    }

    let mut novel = Vec::with_capacity(spec.novel_vehicles);
    for i in 0..spec.novel_vehicles {
        let mut rng = rng_for(seed, STREAM_NOVEL + i as u64);
        let look = Look::random(&mut rng);
        let cap = Capture::random(&mut rng);
        let id = format!("N{i:03}");
        let (close, bbox) = render_close(&look, &cap);
        let images = vec![
            out.image(
                &format!("{id}_body"),
                ImageKind::FullBody,
                0,
                &render_body(&look, &cap),
                vec![],
            )?,
            out.image(
                &format!("{id}_close"),
                ImageKind::CloseUp,
                0,
                &close,
                vec![DamageRegion::annotation(bbox, look.class)],
            )?,
        ];
        novel.push(NovelSubmission {
            submission_id: id.clone(),
            vehicle_id: id,
            images,
        });
    }

    let manifest = Manifest {
        spec: Some(*spec),
        vehicles,
        duplicate_pairs,
        novel,
    };
    let ds = Dataset {
        manifest,
        root: out_dir.to_path_buf(),
    };

    let mut annotations = String::new();
    let mut detections = String::new();
    let mut rng = rng_for(seed, STREAM_DETECTOR);
    for img in ds.all_images().filter(|i| i.kind == ImageKind::CloseUp) {
        for r in &img.regions {
            let a = Annotation {
                image_id: img.image_id.clone(),
                bbox: r.bbox,
                class: r.class,
            };
            annotations.push_str(&format_annotation(&a));
            annotations.push('\n');
            let hit = Detection {
                image_id: img.image_id.clone(),
                bbox: jitter_box(&mut rng, &r.bbox),
                class: r.class,
                confidence: rng.random_range(0.55..0.99),
            };
            detections.push_str(&format_detection(&hit));
            detections.push('\n');
        }
        if rng.random_bool(0.3) {
            let fp = Detection {
                image_id: img.image_id.clone(),
                bbox: random_box(&mut rng),
                class: [DamageClass::Scratch, DamageClass::Dent, DamageClass::Crack]
                    [rng.random_range(0..3)],
                confidence: rng.random_range(0.05..0.45),
            };
            detections.push_str(&format_detection(&fp));
            detections.push('\n');
        }
    }
    out.text("annotations.txt", annotations)?;
    out.text("detections.txt", detections)?;
    let mut json = serde_json::to_string_pretty(&ds.manifest).expect("manifest serializes");
    json.push('\n');
    out.text("manifest.json", json)?;
    Ok(ds.manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    /// Similarity of each duplicate to the session it copies.
    pub pair_similarities: Vec<f64>,
    /// 95th percentile (nearest rank) of cross-vehicle close-up similarities.
    pub nonpair_p95: f64,
    pub nonpair_max: f64,
    pub passed: bool,
}

fn session_pair(
    images: &[ManifestImage],
    session: u32,
) -> Option<(&ManifestImage, &ManifestImage)> {
    let find = |k| images.iter().find(|i| i.kind == k && i.session == session);
    find(ImageKind::FullBody).zip(find(ImageKind::CloseUp))
}

/// Checks that every duplicate is closer to its source than the 95th
/// percentile of similarities between different vehicles' close-ups.
pub fn self_check(ds: &Dataset, extractor: &Extractor<'_>) -> Result<SelfCheck, EvalError> {
    let describe = |body: &ManifestImage, close: &ManifestImage| -> Result<Vec<f32>, EvalError> {
        let imgs = ds.load_images([body, close])?;
        let region = close
            .regions
            .first()
            .ok_or_else(|| EvalError::Invalid(format!("{} has no region", close.image_id)))?;
        extractor
            .describe_region(
                &body.image_id,
                &imgs[&body.image_id],
                &close.image_id,
                &imgs[&close.image_id],
                0,
                &region.bbox,
            )
            .map(|d| d.values().to_vec())
            .map_err(|e| EvalError::Descriptor {
                image_id: close.image_id.clone(),
                message: e.to_string(),
            })
    };
    let mut sessions: Vec<(usize, Vec<f32>)> = Vec::new();
    let mut by_source = std::collections::HashMap::new();
    for (v, entry) in ds.manifest.vehicles.iter().enumerate() {
        let n_sessions = entry
            .images
            .iter()
            .map(|i| i.session + 1)
            .max()
            .unwrap_or(0);
        for s in 0..n_sessions {
            if let Some((body, close)) = session_pair(&entry.images, s) {
                let d = describe(body, close)?;
                by_source.insert((entry.vehicle_id.clone(), s), d.clone());
                sessions.push((v, d));
            }
        }
    }
    let mut pair_similarities = Vec::new();
    for pair in &ds.manifest.duplicate_pairs {
        let (body, close) = session_pair(&pair.images, 0)
            .ok_or_else(|| EvalError::Invalid(format!("{} lacks images", pair.pair_id)))?;
        let d = describe(body, close)?;
        let src = by_source
            .get(&(pair.source_vehicle_id.clone(), pair.source_session))
            .ok_or_else(|| EvalError::Invalid(format!("{}: unknown source", pair.pair_id)))?;
        pair_similarities.push(cosine_similarity(&d, src).expect("same layout"));
    }
    let mut nonpair = Vec::new();
    for (i, (va, a)) in sessions.iter().enumerate() {
        for (vb, b) in &sessions[i + 1..] {
            if va != vb {
                nonpair.push(cosine_similarity(a, b).expect("same layout"));
            }
        }
    }
    nonpair.sort_by(f64::total_cmp);
    let (nonpair_p95, nonpair_max) = if nonpair.is_empty() {
        (f64::NEG_INFINITY, f64::NEG_INFINITY)
    } else {
        let rank = ((0.95 * nonpair.len() as f64).ceil() as usize).max(1);
        (nonpair[rank - 1], nonpair[nonpair.len() - 1])
    };
    let passed = pair_similarities.iter().all(|&s| s > nonpair_p95);
    Ok(SelfCheck {
        pair_similarities,
        nonpair_p95,
        nonpair_max,
        passed,
    })
}
