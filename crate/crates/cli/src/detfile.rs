//! Detection files: CSV rows `image_id,class,conf,x1,y1,x2,y2` in pixels.
//!
//! An optional header line equal to [`HEADER`] is skipped, as are blank
//! lines. Numbers are written in shortest round-trip form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};
use ssod_core::fusion::{Detection, FusedDetection};
use ssod_core::geometry::BBox;
use ssod_core::metrics::ImageDetections;

pub const HEADER: &str = "image_id,class,conf,x1,y1,x2,y2";

/// Detections per image id, in file order.
pub type DetectionTable = BTreeMap<String, Vec<Detection<f64>>>;

pub fn parse(text: &str, file: &Path) -> anyhow::Result<DetectionTable> {
    let mut out = DetectionTable::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line == HEADER) {
            continue;
        }
        let at = || format!("{}:{}", file.display(), i + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(anyhow!("{}: expected 7 comma-separated fields, found {}", at(), fields.len()));
        }
        if fields[0].is_empty() {
            return Err(anyhow!("{}: empty image id", at()));
        }
        let class: usize = fields[1]
            .parse()
            .map_err(|_| anyhow!("{}: class `{}` is not a non-negative integer", at(), fields[1]))?;
        let mut nums = [0.0f64; 5];
        for (k, name) in ["conf", "x1", "y1", "x2", "y2"].iter().enumerate() {
            let v: f64 = fields[k + 2]
                .parse()
                .map_err(|_| anyhow!("{}: {name} `{}` is not a number", at(), fields[k + 2]))?;
            if !v.is_finite() {
                return Err(anyhow!("{}: {name} must be finite", at()));
            }
            nums[k] = v;
        }
        let [conf, x1, y1, x2, y2] = nums;
        if !(0.0..=1.0).contains(&conf) {
            return Err(anyhow!("{}: conf {conf} outside [0, 1]", at()));
        }
        if x2 < x1 || y2 < y1 {
            return Err(anyhow!("{}: box corners must satisfy x1 <= x2 and y1 <= y2", at()));
        }
        out.entry(fields[0].to_string())
            .or_default()
            .push(Detection::new(BBox::new(x1, y1, x2, y2), class, conf));
    }
    Ok(out)
}

pub fn read(path: &Path) -> anyhow::Result<DetectionTable> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse(&text, path)
}

fn row(s: &mut String, id: &str, d: &Detection<f64>) {
    let b = &d.bbox;
    let _ = writeln!(s, "{id},{},{},{},{},{},{}", d.class_id, d.confidence, b.x1, b.y1, b.x2, b.y2);
}

pub fn write_fused(table: &BTreeMap<String, Vec<FusedDetection<f64>>>) -> String {
    let mut s = format!("{HEADER}\n");
    for (id, dets) in table {
        for d in dets {
            row(&mut s, id, &d.detection());
        }
    }
    s
}

pub fn write_predictions(preds: &[ImageDetections<f64>]) -> String {
    let mut s = format!("{HEADER}\n");
    for p in preds {
        for d in &p.detections {
            row(&mut s, &p.image_id, d);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_line_numbers() {
        let f = Path::new("d.csv");
        let t = parse(&format!("{HEADER}\na,0,0.9,0,0,10,10\n\nb,1,0.5,1,2,3,4\n"), f).unwrap();
        assert_eq!(t["a"].len(), 1);
        assert_eq!(t["b"][0].class_id, 1);
        let e = parse("a,0,0.9,0,0,10,10\na,x,0.9,0,0,1,1\n", f).unwrap_err().to_string();
        assert!(e.starts_with("d.csv:2:"), "{e}");
        let e = parse("a,0,0.9,0,0,10\n", f).unwrap_err().to_string();
        assert!(e.contains("d.csv:1:") && e.contains("7"), "{e}");
        assert!(parse("a,0,1.5,0,0,1,1\n", f).is_err());
        assert!(parse("a,0,0.5,5,0,1,1\n", f).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let d = Detection::new(BBox::new(0.1, 1.0 / 3.0, 10.8, 10.0), 2, 0.75);
        let text = write_predictions(&[ImageDetections {
            image_id: "x".into(),
            detections: vec![d],
        }]);
        assert_eq!(parse(&text, Path::new("p")).unwrap()["x"], vec![d]);
    }
}
