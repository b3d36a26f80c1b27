//! Datasets and YOLO-format ingestion.
//!
//! Label files hold one `class cx cy w h` line per box, normalised to
//! `[0, 1]`. Images without a label file are ingested as unlabelled.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::augment::{LabeledBox, Sample};
use crate::geometry::BBox;
use crate::image::Image;
use crate::metrics::{GroundTruthBox, ImageGroundTruth};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("{file}:{line}: malformed label line: {reason}")]
    Malformed { file: PathBuf, line: usize, reason: String },
    #[error("{file}:{line}: class id {class} out of range (dataset has {n_classes} classes)")]
    ClassOutOfRange {
        file: PathBuf,
        line: usize,
        class: usize,
        n_classes: usize,
    },
    #[error("{file}:{line}: coordinate {value} outside [0, 1]")]
    CoordinateOutOfRange { file: PathBuf, line: usize, value: f64 },
    #[error("class names file {0} lists no classes")]
    NoClasses(PathBuf),
    #[error("duplicate image id `{0}`")]
    DuplicateId(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn with_domain(mut self, domain: &str) -> Self {
        for s in &mut self.samples {
            s.domain = domain.to_string();
        }
        self
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn subset_by_ids(&self, ids: &[String]) -> Result<Dataset, String> {
        let mut out = Vec::with_capacity(ids.len());
        for id in ids {
            let s = self
                .samples
                .iter()
                .find(|s| &s.id == id)
                .ok_or_else(|| format!("image id `{id}` not in dataset"))?;
            out.push(s.clone());
        }
        Ok(Dataset {
            samples: out,
            class_names: self.class_names.clone(),
        })
    }

    pub fn labeled_only(&self) -> Dataset {
        Dataset {
            samples: self.samples.iter().filter(|s| s.labeled).cloned().collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn ground_truth(&self) -> Vec<ImageGroundTruth<f64>> {
        self.samples
            .iter()
            .map(|s| ImageGroundTruth {
                image_id: s.id.clone(),
                boxes: s
                    .boxes
                    .iter()
                    .map(|b| GroundTruthBox {
                        bbox: b.bbox,
                        class_id: b.class_id,
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn check_unique_ids(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(DatasetError::DuplicateId(s.id.clone()));
            }
        }
        Ok(())
    }
}

pub fn read_image(path: &Path) -> Result<Image, DatasetError> {
    let img = image::open(path).map_err(|e| DatasetError::UnreadableImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb32f();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(f64::from).collect();
    Ok(Image::from_data(w as usize, h as usize, 3, data).expect("rgb buffer matches dimensions"))
}

/// 8-bit RGB PNG; channel values are clamped to `[0, 1]`.
pub fn write_png(path: &Path, img: &Image) -> Result<(), DatasetError> {
    let mut buf = Vec::with_capacity(img.width * img.height * 3);
    for p in 0..img.width * img.height {
        for c in 0..3 {
            let v = img.data[p * img.channels + c.min(img.channels - 1)];
            buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    image::save_buffer(path, &buf, img.width as u32, img.height as u32, image::ColorType::Rgb8).map_err(|e| {
        DatasetError::UnreadableImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg" | "bmp")
    )
}

pub fn read_class_names(path: &Path) -> Result<Vec<String>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(DatasetError::NoClasses(path.to_path_buf()));
    }
    Ok(names)
}

/// Parses one YOLO label file for an image of the given size.
pub fn parse_label_file(
    text: &str,
    file: &Path,
    img_w: usize,
    img_h: usize,
    n_classes: usize,
) -> Result<Vec<LabeledBox>, DatasetError> {
    let mut boxes = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(DatasetError::Malformed {
                file: file.to_path_buf(),
                line,
                reason: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let class: usize = fields[0].parse().map_err(|_| DatasetError::Malformed {
            file: file.to_path_buf(),
            line,
            reason: format!("class id `{}` is not a non-negative integer", fields[0]),
        })?;
        if class >= n_classes {
            return Err(DatasetError::ClassOutOfRange {
                file: file.to_path_buf(),
                line,
                class,
                n_classes,
            });
        }
        let mut v = [0.0f64; 4];
        for (k, f) in fields[1..].iter().enumerate() {
            let x: f64 = f.parse().map_err(|_| DatasetError::Malformed {
                file: file.to_path_buf(),
                line,
                reason: format!("`{f}` is not a number"),
            })?;
            if !(0.0..=1.0).contains(&x) {
                return Err(DatasetError::CoordinateOutOfRange {
                    file: file.to_path_buf(),
                    line,
                    value: x,
                });
            }
            v[k] = x;
        }
        let b = BBox::from_center_normalized(v[0], v[1], v[2], v[3], img_w as f64, img_h as f64);
        let (w, h) = (img_w as f64, img_h as f64);
        let b = BBox::new(b.x1.max(0.0), b.y1.max(0.0), b.x2.min(w), b.y2.min(h));
        boxes.push(LabeledBox::new(b, class, 1.0));
    }
    Ok(boxes)
}

pub fn load_yolo_dataset(image_dir: &Path, label_dir: &Path, class_names_file: &Path) -> Result<Dataset, DatasetError> {
    let class_names = read_class_names(class_names_file)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(image_dir)
        .map_err(io_err(image_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    paths.sort();
    let domain = image_dir
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .unwrap_or("default")
        .to_string();
    let mut samples = Vec::with_capacity(paths.len());
    for p in paths {
        let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let image = read_image(&p)?;
        let label_path = label_dir.join(format!("{id}.txt"));
        let (boxes, labeled) = if label_path.is_file() {
            let text = fs::read_to_string(&label_path).map_err(io_err(&label_path))?;
            let b = parse_label_file(&text, &label_path, image.width, image.height, class_names.len())?;
            (b, true)
        } else {
            (Vec::new(), false)
        };
        samples.push(Sample {
            id,
            image,
            boxes,
            domain: domain.clone(),
            labeled,
        });
    }
    let ds = Dataset { samples, class_names };
    ds.check_unique_ids()?;
    Ok(ds)
}

/// Writes `images/`, `labels/` and `classes.txt` under `root`. Unlabelled
/// samples get no label file.
pub fn write_yolo_dataset(ds: &Dataset, root: &Path) -> Result<(), DatasetError> {
    let images = root.join("images");
    let labels = root.join("labels");
    fs::create_dir_all(&images).map_err(io_err(&images))?;
    fs::create_dir_all(&labels).map_err(io_err(&labels))?;
    let classes = root.join("classes.txt");
    fs::write(&classes, ds.class_names.join("\n") + "\n").map_err(io_err(&classes))?;
    for s in &ds.samples {
        write_png(&images.join(format!("{}.png", s.id)), &s.image)?;
        if s.labeled {
            let (w, h) = (s.width() as f64, s.height() as f64);
            let mut text = String::new();
            for b in &s.boxes {
                let (cx, cy, bw, bh) = b.bbox.to_center_normalized(w, h);
                text.push_str(&format!("{} {} {} {} {}\n", b.class_id, cx, cy, bw, bh));
            }
            let lp = labels.join(format!("{}.txt", s.id));
            fs::write(&lp, text).map_err(io_err(&lp))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_line_conversion() {
        let b = parse_label_file("0 0.5 0.5 0.5 0.5\n", Path::new("a.txt"), 100, 100, 1).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].bbox, BBox::new(25., 25., 75., 75.));
        assert_eq!(b[0].class_id, 0);
        assert_eq!(b[0].weight, 1.0);
    }

    #[test]
    fn empty_label_file_has_no_boxes() {
        assert!(parse_label_file("", Path::new("a.txt"), 10, 10, 1).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_coordinate_rejected() {
        let err = parse_label_file("0 1.5 0.5 0.1 0.1", Path::new("a.txt"), 10, 10, 1).unwrap_err();
        assert!(matches!(err, DatasetError::CoordinateOutOfRange { line: 1, value, .. } if value == 1.5));
    }

    #[test]
    fn bad_class_and_field_count_report_line() {
        let err = parse_label_file("0 0.5 0.5 0.1 0.1\n3 0.5 0.5 0.1 0.1", Path::new("a.txt"), 10, 10, 2).unwrap_err();
        assert!(matches!(err, DatasetError::ClassOutOfRange { line: 2, class: 3, .. }));
        let err = parse_label_file("\n0 0.5 0.5", Path::new("a.txt"), 10, 10, 2).unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { line: 2, .. }));
        assert!(err.to_string().starts_with("a.txt:2:"));
    }
}
