//! MOT16-format comma-separated rows:
//! `frame,id,bb_left,bb_top,bb_width,bb_height,conf,class,visibility`.
//!
//! Files written here are canonical: rows ordered frame-major then id-major,
//! reals formatted at 6 significant digits. Writing then reading a canonical
//! file is byte-identical.

use super::IoFormatError;
use crate::geometry::{BoundingBox, Frame};
use crate::metrics::LabeledBox;
use crate::tracker::{FrameDetections, KeepSampler};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mot16Row {
    pub frame: Frame,
    /// Track id; -1 marks raw detections.
    pub id: i64,
    pub bb_left: f64,
    pub bb_top: f64,
    pub bb_width: f64,
    pub bb_height: f64,
    pub conf: f64,
    pub class: i64,
    pub visibility: f64,
}

impl Mot16Row {
    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::new(self.bb_left, self.bb_top, self.bb_width, self.bb_height)
            .expect("rows are validated on construction")
    }

    pub fn from_labeled(b: &LabeledBox, conf: f64) -> Self {
        Self {
            frame: b.frame,
            id: b.track_id as i64,
            bb_left: b.bbox.x,
            bb_top: b.bbox.y,
            bb_width: b.bbox.width,
            bb_height: b.bbox.height,
            conf,
            class: 1,
            visibility: b.visibility,
        }
    }
}

/// Format a real at 6 significant digits, `%g`-style: fixed notation unless
/// the rounded exponent leaves [-4, 5], trailing zeros trimmed.
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let neg = x < 0.0;
    let sci = format!("{:.5e}", x.abs());
    let (mant, exp) = sci.split_once('e').expect("exponential format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: Vec<u8> = mant.bytes().filter(|b| b.is_ascii_digit()).collect();
    debug_assert_eq!(digits.len(), 6);
    let digits = String::from_utf8(digits).expect("ascii digits");

    let body = if !(-4..6).contains(&exp) {
        let frac = digits[1..].trim_end_matches('0');
        let mantissa = if frac.is_empty() {
            digits[..1].to_string()
        } else {
            format!("{}.{}", &digits[..1], frac)
        };
        format!("{}e{}{:02}", mantissa, if exp >= 0 { '+' } else { '-' }, exp.abs())
    } else if exp >= 0 {
        let split = (exp + 1) as usize;
        let frac = digits[split..].trim_end_matches('0');
        if frac.is_empty() {
            digits[..split].to_string()
        } else {
            format!("{}.{}", &digits[..split], frac)
        }
    } else {
        let zeros = "0".repeat((-exp - 1) as usize);
        let frac_all = format!("{zeros}{digits}");
        format!("0.{}", frac_all.trim_end_matches('0'))
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

pub fn parse_mot16(text: &str, path_label: &str) -> Result<Vec<Mot16Row>, IoFormatError> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parse_err = |msg: &str| IoFormatError::Parse {
            path: path_label.to_string(),
            line: line_no,
            msg: msg.to_string(),
        };
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 9 {
            return Err(parse_err(&format!("expected 9 fields, got {}", fields.len())));
        }
        let int = |s: &str, what: &str| {
            s.parse::<i64>().map_err(|_| parse_err(&format!("invalid {what} '{s}'")))
        };
        let real = |s: &str, what: &str| -> Result<f64, IoFormatError> {
            let v = s.parse::<f64>().map_err(|_| parse_err(&format!("invalid {what} '{s}'")))?;
            if !v.is_finite() {
                return Err(parse_err(&format!("non-finite {what}")));
            }
            Ok(v)
        };

        let frame = int(fields[0], "frame")?;
        if frame < 1 {
            return Err(parse_err("frame index must be >= 1"));
        }
        let id = int(fields[1], "id")?;
        let bb_left = real(fields[2], "bb_left")?;
        let bb_top = real(fields[3], "bb_top")?;
        let bb_width = real(fields[4], "bb_width")?;
        let bb_height = real(fields[5], "bb_height")?;
        if bb_width <= 0.0 || bb_height <= 0.0 {
            return Err(IoFormatError::NegativeDimensions { path: path_label.to_string(), line: line_no });
        }
        let conf = real(fields[6], "conf")?;
        let class = int(fields[7], "class")?;
        let visibility = real(fields[8], "visibility")?;
        if !(0.0..=1.0).contains(&visibility) {
            return Err(parse_err("visibility must lie in [0, 1]"));
        }
        rows.push(Mot16Row {
            frame: frame as Frame,
            id,
            bb_left,
            bb_top,
            bb_width,
            bb_height,
            conf,
            class,
            visibility,
        });
    }
    Ok(rows)
}

pub fn read_mot16(path: &Path) -> Result<Vec<Mot16Row>, IoFormatError> {
    let text = std::fs::read_to_string(path)?;
    parse_mot16(&text, &path.display().to_string())
}

/// Canonical serialization: frame-major, id-major (stable for ties).
pub fn format_mot16(rows: &[Mot16Row]) -> String {
    let mut sorted: Vec<&Mot16Row> = rows.iter().collect();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut out = String::new();
    for r in sorted {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.frame,
            r.id,
            fmt_g6(r.bb_left),
            fmt_g6(r.bb_top),
            fmt_g6(r.bb_width),
            fmt_g6(r.bb_height),
            fmt_g6(r.conf),
            r.class,
            fmt_g6(r.visibility),
        ));
    }
    out
}

pub fn write_mot16(path: &Path, rows: &[Mot16Row]) -> Result<(), IoFormatError> {
    std::fs::write(path, format_mot16(rows))?;
    Ok(())
}

/// Rows with identities, as used by evaluation (ids must be >= 1).
pub fn labeled_from_rows(rows: &[Mot16Row]) -> Result<Vec<LabeledBox>, IoFormatError> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            if r.id < 1 {
                return Err(IoFormatError::InvalidTrackId(i + 1));
            }
            LabeledBox::new(r.frame, r.id as u32, r.bbox(), r.visibility)
                .map_err(|e| IoFormatError::Parse { path: String::new(), line: i + 1, msg: e.to_string() })
        })
        .collect()
}

/// Identity-free per-frame detection lists covering `1..=n_frames`
/// (defaults to the maximum frame present).
pub fn detections_from_rows(rows: &[Mot16Row], n_frames: Option<usize>) -> Vec<FrameDetections> {
    let max_frame = n_frames.unwrap_or_else(|| rows.iter().map(|r| r.frame).max().unwrap_or(0));
    let mut seq: Vec<FrameDetections> =
        (1..=max_frame).map(|frame| FrameDetections { frame, boxes: Vec::new() }).collect();
    for r in rows {
        if r.frame >= 1 && r.frame <= max_frame {
            seq[r.frame - 1].boxes.push(r.bbox());
        }
    }
    seq
}

/// Row-level detection-rate degradation. Surviving rows are untouched, so a
/// rate of 1 reproduces the input file exactly. Rows are put in canonical
/// order first so the draw sequence matches the frame-level degrade.
pub fn degrade_rows(rows: &[Mot16Row], rate: f64, seed: u64) -> Vec<Mot16Row> {
    let mut sorted: Vec<Mot16Row> = rows.to_vec();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut sampler = KeepSampler::new(rate, seed);
    sorted.into_iter().filter(|_| sampler.keep()).collect()
}
