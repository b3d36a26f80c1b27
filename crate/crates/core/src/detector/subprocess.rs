//! [`Detector`] backed by a child process speaking the line protocol.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde_json::Value;

use super::protocol::{
    decode_params, encode_params, protocol_error, sample_to_wire, ParamsBlob, Request, Response, WireDetection,
    WireImage,
};
use super::{Detector, DetectorError, ParamVector};
use crate::augment::Sample;
use crate::fusion::Detection;
use crate::image::Image;

const PAYLOAD_PREVIEW: usize = 200;

fn preview(s: &str) -> String {
    if s.len() <= PAYLOAD_PREVIEW {
        s.to_string()
    } else {
        let mut end = PAYLOAD_PREVIEW;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &s[..end])
    }
}

struct Worker {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    /// Number of response lines read so far.
    line_no: usize,
    dead: bool,
}

impl Worker {
    fn exit_status(&mut self) -> String {
        // give a dying process a moment to be reaped
        for _ in 0..50 {
            match self.child.try_wait() {
                Ok(Some(s)) => return s.to_string(),
                Ok(None) => thread::sleep(Duration::from_millis(10)),
                Err(e) => return format!("unknown ({e})"),
            }
        }
        "still running".to_string()
    }
}

pub struct SubprocessDetector {
    worker: Mutex<Worker>,
    timeout: Duration,
    command: Vec<String>,
}

impl std::fmt::Debug for SubprocessDetector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubprocessDetector")
            .field("command", &self.command)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl SubprocessDetector {
    /// Spawns `command[0]` with the remaining elements as arguments.
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self, DetectorError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| DetectorError::InvalidInput("empty detector command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| DetectorError::Io(format!("failed to start `{program}`: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self {
            worker: Mutex::new(Worker {
                child,
                stdin,
                lines: rx,
                line_no: 0,
                dead: false,
            }),
            timeout,
            command: command.to_vec(),
        })
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    fn call(&self, req: &Request) -> Result<Value, DetectorError> {
        let payload = serde_json::to_string(req).map_err(|e| DetectorError::InvalidInput(e.to_string()))?;
        let mut w = self.worker.lock().unwrap_or_else(|p| p.into_inner());
        if w.dead {
            return Err(DetectorError::ProcessExited {
                status: "previously failed".into(),
                payload: preview(&payload),
            });
        }
        let written = match w.stdin.as_mut() {
            Some(stdin) => stdin
                .write_all(payload.as_bytes())
                .and_then(|_| stdin.write_all(b"\n"))
                .and_then(|_| stdin.flush()),
            None => Err(std::io::Error::from(std::io::ErrorKind::BrokenPipe)),
        };
        if written.is_err() {
            w.dead = true;
            return Err(DetectorError::ProcessExited {
                status: w.exit_status(),
                payload: preview(&payload),
            });
        }
        let line = match w.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                w.dead = true;
                return Err(DetectorError::Io(e.to_string()));
            }
            Err(RecvTimeoutError::Timeout) => {
                w.dead = true;
                let _ = w.child.kill();
                return Err(DetectorError::Timeout {
                    op: req.name().into(),
                    millis: self.timeout.as_millis(),
                });
            }
            Err(RecvTimeoutError::Disconnected) => {
                w.dead = true;
                return Err(DetectorError::ProcessExited {
                    status: w.exit_status(),
                    payload: preview(&payload),
                });
            }
        };
        w.line_no += 1;
        let line_no = w.line_no;
        let resp: Response = serde_json::from_str(&line)
            .map_err(|e| protocol_error(line_no, format!("not a response object: {e}"), &line))?;
        if !resp.ok {
            return Err(DetectorError::Backend(
                resp.error.unwrap_or_else(|| "unspecified backend error".into()),
            ));
        }
        Ok(resp.result.unwrap_or(Value::Null))
    }

    fn decode<T: serde::de::DeserializeOwned>(&self, v: Value) -> Result<T, DetectorError> {
        let raw = v.to_string();
        serde_json::from_value(v).map_err(|e| {
            let line = self.worker.lock().map(|w| w.line_no).unwrap_or(0);
            protocol_error(line, format!("unexpected result shape: {e}"), &preview(&raw))
        })
    }
}

impl Detector for SubprocessDetector {
    fn predict(&self, images: &[Image]) -> Result<Vec<Vec<Detection<f64>>>, DetectorError> {
        let req = Request::Predict {
            images: images.iter().map(WireImage::from_image).collect(),
        };
        let v = self.call(&req)?;
        let wire: Vec<Vec<WireDetection>> = self.decode(v)?;
        if wire.len() != images.len() {
            let line = self.worker.lock().map(|w| w.line_no).unwrap_or(0);
            return Err(protocol_error(
                line,
                format!("{} prediction lists for {} images", wire.len(), images.len()),
                "",
            ));
        }
        Ok(wire
            .into_iter()
            .map(|ds| ds.into_iter().map(Detection::from).collect())
            .collect())
    }

    fn train_step(&mut self, batch: &[Sample]) -> Result<f64, DetectorError> {
        let req = Request::TrainStep {
            batch: batch.iter().map(sample_to_wire).collect(),
        };
        let v = self.call(&req)?;
        self.decode(v)
    }

    fn get_params(&self) -> Result<ParamVector<f64>, DetectorError> {
        let v = self.call(&Request::GetParams)?;
        let blob: ParamsBlob = self.decode(v)?;
        decode_params(&blob.blob).map_err(|e| {
            let line = self.worker.lock().map(|w| w.line_no).unwrap_or(0);
            protocol_error(line, e, &preview(&blob.blob))
        })
    }

    fn set_params(&mut self, params: &ParamVector<f64>) -> Result<(), DetectorError> {
        self.call(&Request::SetParams {
            blob: encode_params(params),
        })
        .map(|_| ())
    }
}

impl Drop for SubprocessDetector {
    fn drop(&mut self) {
        let w = self.worker.get_mut().unwrap_or_else(|p| p.into_inner());
        drop(w.stdin.take());
        for _ in 0..20 {
            if let Ok(Some(_)) = w.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = w.child.kill();
        let _ = w.child.wait();
    }
}
