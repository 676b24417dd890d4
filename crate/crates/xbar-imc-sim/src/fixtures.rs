//! Network fixtures (JSON manifest plus shape-prefixed little-endian int32
//! blobs) and labeled image sets (CSV: `label,p0,...`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use xbar_core::inference::{Activation, DenseLayer, InputEncoding, Precision, QuantNetwork, Sample};

use crate::error::{Result, SimError};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[allow(dead_code)]
    name: String,
    input: InputEncoding,
    layers: Vec<LayerEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    #[serde(rename = "type")]
    ty: String,
    precision: Precision,
    activation: Activation,
    weights: PathBuf,
    bias: PathBuf,
}

/// A blob's shape and values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Blob {
    pub shape: Vec<usize>,
    pub data: Vec<i32>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| SimError::io(path, e))
}

fn u32_at(b: &[u8], k: usize) -> Option<u32> {
    b.get(4 * k..4 * k + 4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
}

pub fn parse_blob(bytes: &[u8], path: &Path) -> Result<Blob> {
    let bad = |r: &str| SimError::format(path, r.to_string());
    let ndim = u32_at(bytes, 0).ok_or_else(|| bad("truncated header"))? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(bad("rank must be between 1 and 8"));
    }
    let shape = (1..=ndim)
        .map(|k| u32_at(bytes, k).map(|d| d as usize))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| bad("truncated shape"))?;
    let n: usize = shape.iter().product();
    let body = &bytes[4 * (ndim + 1)..];
    if body.len() != 4 * n {
        return Err(bad(&format!("expected {n} int32 values, found {} bytes", body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Blob { shape, data })
}

pub fn encode_blob(blob: &Blob) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * (1 + blob.shape.len() + blob.data.len()));
    out.extend((blob.shape.len() as u32).to_le_bytes());
    for &d in &blob.shape {
        out.extend((d as u32).to_le_bytes());
    }
    for &v in &blob.data {
        out.extend(v.to_le_bytes());
    }
    out
}

pub fn load_network(manifest: &Path) -> Result<QuantNetwork> {
    let text = fs::read_to_string(manifest).map_err(|e| SimError::io(manifest, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| SimError::format(manifest, e.to_string()))?;
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let mut layers = Vec::with_capacity(m.layers.len());
    for (k, l) in m.layers.iter().enumerate() {
        if l.ty != "dense" {
            return Err(SimError::config(format!(
                "{}: layer {k} has unsupported type `{}` (only `dense` is supported)",
                manifest.display(),
                l.ty
            )));
        }
        let wp = dir.join(&l.weights);
        let bp = dir.join(&l.bias);
        let w = parse_blob(&read(&wp)?, &wp)?;
        let b = parse_blob(&read(&bp)?, &bp)?;
        if w.shape.len() != 2 {
            return Err(SimError::format(&wp, "weights must be a 2-d inputs x outputs blob"));
        }
        if b.shape != [w.shape[1]] {
            return Err(SimError::format(&bp, format!("bias shape {:?} does not match {} outputs", b.shape, w.shape[1])));
        }
        let weights = w
            .data
            .iter()
            .map(|&v| i8::try_from(v).map_err(|_| SimError::format(&wp, format!("weight {v} out of range"))))
            .collect::<Result<Vec<i8>>>()?;
        layers.push(DenseLayer {
            inputs: w.shape[0],
            outputs: w.shape[1],
            precision: l.precision,
            weights,
            bias: b.data.iter().map(|&v| v as i64).collect(),
            activation: l.activation,
        });
    }
    let net = QuantNetwork { input: m.input, layers };
    net.validate()?;
    Ok(net)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.get(0) != Some("label") {
        return Err(SimError::format(path, "first column must be `label`"));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |what: &str| SimError::format(path, format!("record {}: invalid {what}", line + 1));
        let label = rec[0].trim().parse::<usize>().map_err(|_| bad("label"))?;
        let pixels = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<u8>().map_err(|_| bad("pixel")))
            .collect::<Result<Vec<u8>>>()?;
        out.push(Sample { pixels, label });
    }
    if out.is_empty() {
        return Err(SimError::format(path, "no samples"));
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> SimError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => SimError::io(path, io),
            _ => unreachable!(),
        }
    } else {
        SimError::format(path, e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_round_trip() {
        let b = Blob {
            shape: vec![2, 3],
            data: vec![1, -2, 3, -4, 5, -6],
        };
        let bytes = encode_blob(&b);
        assert_eq!(parse_blob(&bytes, Path::new("x")).unwrap(), b);
        assert!(parse_blob(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(parse_blob(&[], Path::new("x")).is_err());
    }
}
