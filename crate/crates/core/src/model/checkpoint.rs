//! Plain-text checkpoint container.
//!
//! ```text
//! stance-checkpoint 1
//! config model.k=2
//! ...
//! tensor alpha 3
//! 0.3 0.3 0.3
//! ```
//!
//! Floats use the shortest representation that parses back to the same bits.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::params::ModelParams;
use super::train::TrainConfig;
use crate::error::{Error, Result};

const MAGIC: &str = "stance-checkpoint 1";

/// Trained parameters together with the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("write to memory");
        String::from_utf8(out).expect("utf-8")
    }

    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{MAGIC}")?;
        for (k, v) in self.config.to_pairs() {
            writeln!(out, "config {k}={v}")?;
        }
        for (name, dims, values) in self.params.tensors() {
            let dims: Vec<String> = dims.iter().map(usize::to_string).collect();
            writeln!(out, "tensor {name} {}", dims.join(" "))?;
            let values: Vec<String> = values.iter().map(f64::to_string).collect();
            writeln!(out, "{}", values.join(" "))?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn read_from(reader: impl BufRead) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let lines: Vec<String> = reader
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| bad(e.to_string()))?;
        let mut lines = lines.iter().enumerate().map(|(i, l)| (i + 1, l.as_str()));
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(bad("missing or unsupported header".into())),
        }
        let mut pairs = BTreeMap::new();
        let mut tensors: Vec<(usize, &str, &str)> = Vec::new();
        let mut pending: Option<(usize, &str)> = None;
        for (no, line) in lines {
            if let Some((at, header)) = pending.take() {
                tensors.push((at, header, line));
                continue;
            }
            if let Some(kv) = line.strip_prefix("config ") {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| bad(format!("line {no}: expected key=value")))?;
                pairs.insert(k.to_string(), v.to_string());
            } else if let Some(header) = line.strip_prefix("tensor ") {
                pending = Some((no, header));
            } else if !line.trim().is_empty() {
                return Err(bad(format!("line {no}: unexpected content")));
            }
        }
        if pending.is_some() {
            return Err(bad("tensor header without values".into()));
        }

        let config = TrainConfig::from_pairs(&pairs)?;
        let mut params = ModelParams::zeros(&config.model);
        let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|(n, d, _)| (n, d)).collect();
        if expected.len() != tensors.len() {
            return Err(bad(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((dst, (name, dims)), (no, header, values)) in params.tensors_mut().into_iter().zip(expected).zip(tensors) {
            let mut parts = header.split_whitespace();
            if parts.next() != Some(name.as_str()) {
                return Err(bad(format!("line {no}: expected tensor `{name}`")));
            }
            let got: Vec<usize> = parts
                .map(|d| d.parse().map_err(|_| bad(format!("line {no}: bad dimension"))))
                .collect::<Result<_>>()?;
            if got != dims {
                return Err(bad(format!(
                    "line {no}: tensor `{name}` has shape {got:?}, expected {dims:?}"
                )));
            }
            let vals: Vec<f64> = values
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| bad(format!("line {}: bad number `{v}`", no + 1))))
                .collect::<Result<_>>()?;
            if vals.len() != dst.len() {
                return Err(bad(format!("line {}: expected {} values", no + 1, dst.len())));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
            dst.copy_from_slice(&vals);
        }
        Ok(Checkpoint { config, params })
    }
}
