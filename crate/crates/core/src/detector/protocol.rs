//! Line-delimited JSON protocol for out-of-process detectors.
//!
//! One request per line on the worker's stdin, one response per line on its
//! stdout:
//!
//! ```text
//! {"op":"predict","images":[<image>, ...]}
//! {"op":"train_step","batch":[{"image":<image>,"boxes":[{"x1":..,"y1":..,"x2":..,"y2":..,"class":..,"weight":..}]}]}
//! {"op":"get_params"}
//! {"op":"set_params","blob":"<base64 little-endian f64>"}
//!
//! {"ok":true,"result":...}
//! {"ok":false,"error":"..."}
//! ```
//!
//! An `<image>` is either a nested `[row][col][channel]` array or a path to
//! an image file. Coordinates are pixels at the letterboxed resolution.

use std::io::{BufRead, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Detector, DetectorError, ParamVector};
use crate::augment::{LabeledBox, Sample};
use crate::fusion::Detection;
use crate::geometry::BBox;
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireImage {
    Tensor(Vec<Vec<Vec<f64>>>),
    Path(String),
}

impl WireImage {
    pub fn from_image(img: &Image) -> Self {
        WireImage::Tensor(img.to_nested())
    }

    pub fn to_image(&self) -> Result<Image, String> {
        match self {
            WireImage::Tensor(rows) => Image::from_nested(rows).ok_or_else(|| "ragged or empty image tensor".to_string()),
            WireImage::Path(p) => crate::pipeline::dataset::read_image(Path::new(p)).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub class: usize,
    pub conf: f64,
}

impl From<&Detection<f64>> for WireDetection {
    fn from(d: &Detection<f64>) -> Self {
        Self {
            x1: d.bbox.x1,
            y1: d.bbox.y1,
            x2: d.bbox.x2,
            y2: d.bbox.y2,
            class: d.class_id,
            conf: d.confidence,
        }
    }
}

impl From<WireDetection> for Detection<f64> {
    fn from(w: WireDetection) -> Self {
        Detection::new(BBox::new(w.x1, w.y1, w.x2, w.y2), w.class, w.conf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSample {
    pub image: WireImage,
    pub boxes: Vec<WireBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Predict { images: Vec<WireImage> },
    TrainStep { batch: Vec<WireSample> },
    GetParams,
    SetParams { blob: String },
}

impl Request {
    pub fn name(&self) -> &'static str {
        match self {
            Request::Predict { .. } => "predict",
            Request::TrainStep { .. } => "train_step",
            Request::GetParams => "get_params",
            Request::SetParams { .. } => "set_params",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn success(result: Value) -> Self {
        Self {
            ok: true,
            result: Some(result),
            error: None,
        }
    }

    pub fn failure(error: impl Into<String>) -> Self {
        Self {
            ok: false,
            result: None,
            error: Some(error.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsBlob {
    pub blob: String,
}

pub fn encode_params(p: &ParamVector<f64>) -> String {
    STANDARD.encode(p.to_bytes())
}

pub fn decode_params(blob: &str) -> Result<ParamVector<f64>, String> {
    let bytes = STANDARD.decode(blob.trim()).map_err(|e| format!("bad base64: {e}"))?;
    ParamVector::from_bytes(&bytes).ok_or_else(|| format!("blob of {} bytes is not a whole number of f64", bytes.len()))
}

pub fn sample_to_wire(s: &Sample) -> WireSample {
    WireSample {
        image: WireImage::from_image(&s.image),
        boxes: s
            .boxes
            .iter()
            .map(|b| WireBox {
                x1: b.bbox.x1,
                y1: b.bbox.y1,
                x2: b.bbox.x2,
                y2: b.bbox.y2,
                class: b.class_id,
                weight: b.weight,
            })
            .collect(),
    }
}

pub fn sample_from_wire(w: &WireSample, index: usize) -> Result<Sample, String> {
    Ok(Sample {
        id: format!("wire-{index}"),
        image: w.image.to_image()?,
        boxes: w
            .boxes
            .iter()
            .map(|b| LabeledBox::new(BBox::new(b.x1, b.y1, b.x2, b.y2), b.class, b.weight))
            .collect(),
        domain: String::new(),
        labeled: true,
    })
}

fn handle(detector: &mut dyn Detector, req: Request) -> Result<Value, String> {
    match req {
        Request::Predict { images } => {
            let imgs = images.iter().map(WireImage::to_image).collect::<Result<Vec<_>, _>>()?;
            let preds = detector.predict(&imgs).map_err(|e| e.to_string())?;
            let wire: Vec<Vec<WireDetection>> = preds
                .iter()
                .map(|ds| ds.iter().map(WireDetection::from).collect())
                .collect();
            serde_json::to_value(wire).map_err(|e| e.to_string())
        }
        Request::TrainStep { batch } => {
            let samples = batch
                .iter()
                .enumerate()
                .map(|(i, w)| sample_from_wire(w, i))
                .collect::<Result<Vec<_>, _>>()?;
            let loss = detector.train_step(&samples).map_err(|e| e.to_string())?;
            Ok(Value::from(loss))
        }
        Request::GetParams => {
            let p = detector.get_params().map_err(|e| e.to_string())?;
            serde_json::to_value(ParamsBlob { blob: encode_params(&p) }).map_err(|e| e.to_string())
        }
        Request::SetParams { blob } => {
            let p = decode_params(&blob)?;
            detector.set_params(&p).map_err(|e| e.to_string())?;
            Ok(Value::Null)
        }
    }
}

/// Serves `detector` over the line protocol until `input` reaches EOF.
pub fn serve<R: BufRead, W: Write>(detector: &mut dyn Detector, input: R, mut output: W) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => match handle(detector, req) {
                Ok(v) => Response::success(v),
                Err(e) => Response::failure(e),
            },
            Err(e) => Response::failure(format!("malformed request: {e}")),
        };
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

pub(crate) fn protocol_error(line: usize, reason: impl Into<String>, payload: &str) -> DetectorError {
    DetectorError::Protocol {
        line,
        reason: reason.into(),
        payload: payload.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{ToyConfig, ToyDetector};

    #[test]
    fn request_wire_format() {
        let r = Request::GetParams;
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"op":"get_params"}"#);
        let r: Request = serde_json::from_str(r#"{"op":"set_params","blob":"AAAAAAAA8D8="}"#).unwrap();
        assert_eq!(r, Request::SetParams { blob: "AAAAAAAA8D8=".into() });
        assert_eq!(decode_params("AAAAAAAA8D8=").unwrap().values, vec![1.0]);
        let r: Request = serde_json::from_str(r#"{"op":"predict","images":["a.png",[[[0.5]]]]}"#).unwrap();
        assert_eq!(
            r,
            Request::Predict {
                images: vec![WireImage::Path("a.png".into()), WireImage::Tensor(vec![vec![vec![0.5]]])]
            }
        );
    }

    #[test]
    fn serve_answers_each_line() {
        let cfg = ToyConfig {
            image_size: 8,
            anchors: [4, 8],
            n_classes: 1,
            ..ToyConfig::default()
        };
        let mut det = ToyDetector::new(cfg).unwrap();
        let input = b"{\"op\":\"get_params\"}\nnot json\n{\"op\":\"predict\",\"images\":[[[[0.5]]]]}\n";
        let mut out = Vec::new();
        serve(&mut det, &input[..], &mut out).unwrap();
        let lines: Vec<Response> = String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].ok);
        let blob: ParamsBlob = serde_json::from_value(lines[0].result.clone().unwrap()).unwrap();
        assert_eq!(decode_params(&blob.blob).unwrap().len(), det.get_params().unwrap().len());
        assert!(!lines[1].ok);
        // 1x1x1 image does not match the 8x8x3 world
        assert!(!lines[2].ok);
    }
}
