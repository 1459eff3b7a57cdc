//! Text formats: annotation and detector files in, CSV reports out.
//!
//! Annotation line: `image_id class cx cy w h`.
//! Detection line:  `image_id class confidence cx cy w h`.
//! Blank lines and lines starting with `#` are ignored. Reports use fixed
//! six-decimal formatting so they are byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::detection::{Annotation, Detection, PrCurve};
use super::retrieval::CmcCurve;
use super::EvalError;
use crate::claimstore::{DamageClass, NormalizedBBox};

fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(n, l)| (n, l.split_whitespace().collect()))
}

fn parse_err(source: &str, line: usize, message: impl Into<String>) -> EvalError {
    EvalError::Parse {
        origin: source.to_string(),
        line,
        message: message.into(),
    }
}

fn num(source: &str, line: usize, field: &str, raw: &str) -> Result<f64, EvalError> {
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            parse_err(
                source,
                line,
                format!("{field}: not a finite number: {raw:?}"),
            )
        })
}

fn bbox(source: &str, line: usize, f: &[&str]) -> Result<NormalizedBBox, EvalError> {
    let v: Vec<f64> = ["cx", "cy", "w", "h"]
        .iter()
        .zip(f)
        .map(|(name, raw)| num(source, line, name, raw))
        .collect::<Result<_, _>>()?;
    NormalizedBBox::new(v[0], v[1], v[2], v[3]).map_err(|e| parse_err(source, line, e.to_string()))
}

fn class(source: &str, line: usize, raw: &str) -> Result<DamageClass, EvalError> {
    raw.parse()
        .map_err(|e: crate::StoreError| parse_err(source, line, e.to_string()))
}

pub fn parse_annotations(text: &str, source: &str) -> Result<Vec<Annotation>, EvalError> {
    records(text)
        .map(|(n, f)| {
            if f.len() != 6 {
                return Err(parse_err(
                    source,
                    n,
                    format!("expected 6 fields, got {}", f.len()),
                ));
            }
            Ok(Annotation {
                image_id: f[0].to_string(),
                class: class(source, n, f[1])?,
                bbox: bbox(source, n, &f[2..6])?,
            })
        })
        .collect()
}

pub fn parse_detections(text: &str, source: &str) -> Result<Vec<Detection>, EvalError> {
    records(text)
        .map(|(n, f)| {
            if f.len() != 7 {
                return Err(parse_err(
                    source,
                    n,
                    format!("expected 7 fields, got {}", f.len()),
                ));
            }
            let confidence = num(source, n, "confidence", f[2])?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(parse_err(
                    source,
                    n,
                    format!("confidence {confidence} outside [0, 1]"),
                ));
            }
            Ok(Detection {
                image_id: f[0].to_string(),
                class: class(source, n, f[1])?,
                confidence,
                bbox: bbox(source, n, &f[3..7])?,
            })
        })
        .collect()
}

fn read(path: &Path) -> Result<String, EvalError> {
    fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>, EvalError> {
    parse_annotations(&read(path)?, &path.display().to_string())
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>, EvalError> {
    parse_detections(&read(path)?, &path.display().to_string())
}

pub fn format_annotation(a: &Annotation) -> String {
    let b = &a.bbox;
    format!(
        "{} {} {:.6} {:.6} {:.6} {:.6}",
        a.image_id,
        a.class,
        b.cx(),
        b.cy(),
        b.w(),
        b.h()
    )
}

pub fn format_detection(d: &Detection) -> String {
    let b = &d.bbox;
    format!(
        "{} {} {:.6} {:.6} {:.6} {:.6} {:.6}",
        d.image_id,
        d.class,
        d.confidence,
        b.cx(),
        b.cy(),
        b.w(),
        b.h()
    )
}

/// One row per threshold: counts and both ratios.
pub fn pr_table_csv(curve: &PrCurve) -> String {
    let mut out = String::from("confidence_threshold,iou_threshold,tp,fp,fn,precision,recall\n");
    for p in &curve.points {
        writeln!(
            out,
            "{:.6},{:.6},{},{},{},{:.6},{:.6}",
            p.confidence_threshold, curve.iou_threshold, p.tp, p.fp, p.fn_, p.precision, p.recall
        )
        .unwrap();
    }
    out
}

/// Two-column plot data.
pub fn pr_curve_csv(curve: &PrCurve) -> String {
    let mut out = String::from("recall,precision\n");
    for p in &curve.points {
        writeln!(out, "{:.6},{:.6}", p.recall, p.precision).unwrap();
    }
    out
}

pub fn cmc_csv(curve: &CmcCurve) -> String {
    let mut out = String::from("rank,rate\n");
    for (i, r) in curve.rates.iter().enumerate() {
        writeln!(out, "{},{:.6}", i + 1, r).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::detection::PrPoint;

    #[test]
    fn parse_round_trip() {
        let text = "# comment\n\nimg1 dent 0.5 0.5 0.2 0.3\nimg2 crack 0.1 0.2 0.1 0.1\n";
        let a = parse_annotations(text, "t").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[1].class, DamageClass::Crack);
        let again = parse_annotations(
            &a.iter()
                .map(format_annotation)
                .collect::<Vec<_>>()
                .join("\n"),
            "t",
        )
        .unwrap();
        assert_eq!(a, again);

        let d = parse_detections("img1 scratch 0.75 0.5 0.5 0.2 0.3", "t").unwrap();
        assert_eq!(d[0].confidence, 0.75);
        assert_eq!(
            format_detection(&d[0]),
            "img1 scratch 0.750000 0.500000 0.500000 0.200000 0.300000"
        );
    }

    #[test]
    fn parse_errors_name_line() {
        match parse_annotations("a dent 0.5 0.5 0.2 0.2\nb dent 0.5 0.5 0 0.2", "ann.txt") {
            Err(EvalError::Parse { origin, line, .. }) => {
                assert_eq!((origin.as_str(), line), ("ann.txt", 2))
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_detections("a dent 1.5 0.5 0.5 0.2 0.2", "d").is_err());
        assert!(parse_detections("a bogus 0.5 0.5 0.5 0.2 0.2", "d").is_err());
        assert!(parse_detections("a dent 0.5 0.5 0.5 0.2", "d").is_err());
    }

    #[test]
    fn csv_layout() {
        let curve = PrCurve {
            iou_threshold: 0.5,
            points: vec![PrPoint::from_counts(0.1, 2, 1, 1)],
        };
        assert_eq!(
            pr_table_csv(&curve),
            "confidence_threshold,iou_threshold,tp,fp,fn,precision,recall\n0.100000,0.500000,2,1,1,0.666667,0.666667\n"
        );
        assert_eq!(
            pr_curve_csv(&curve),
            "recall,precision\n0.666667,0.666667\n"
        );
        let c = CmcCurve {
            rates: vec![0.5, 1.0],
            probe_count: 2,
        };
        assert_eq!(cmc_csv(&c), "rank,rate\n1,0.500000\n2,1.000000\n");
    }
}
