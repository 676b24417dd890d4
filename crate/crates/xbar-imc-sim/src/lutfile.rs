//! On-disk bitcell tables.
//!
//! Layout: the magic `XBARLUT\0`, a little-endian u32 format version, a u64
//! header length, the JSON header, then every table's left and right current
//! arrays as little-endian f64 in header order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xbar_core::bitcell::CellDevices;
use xbar_core::crossbar::SinkModel;
use xbar_core::lut::{solve_lut_point, BitcellLut, GridSpec, LutSet};
use xbar_core::{BitcellKind, CellState, DeviceParams, TerminalVoltages, Volts};

use crate::config::{hex, ExperimentConfig};
use crate::error::{Result, SimError};

const MAGIC: &[u8; 8] = b"XBARLUT\0";
const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableHeader {
    pub state: CellState,
    pub base: TerminalVoltages,
    pub grid: GridSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutHeader {
    pub kind: BitcellKind,
    /// Hash of everything the tables depend on.
    pub fingerprint: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub tables: Vec<TableHeader>,
}

/// What a set of tables is built from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LutRecipe {
    pub kind: BitcellKind,
    pub device: DeviceParams,
    pub grid: GridSpec,
    pub v_wl: Volts,
}

impl LutRecipe {
    pub fn from_config(cfg: &ExperimentConfig, kind: BitcellKind) -> Result<Self> {
        let array = cfg.crossbar_for(kind);
        let sink = match array.sink {
            SinkModel::VirtualGround => None,
            SinkModel::Resistive { .. } => Some(cfg.lut.v_sink_max),
        };
        let grid = GridSpec::for_kind(kind, array.v_read.0 + cfg.lut.headroom, cfg.lut_step(kind), sink)?;
        Ok(Self {
            kind,
            device: cfg.device.clone(),
            grid,
            v_wl: cfg.device.v_dd,
        })
    }

    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("recipe serializes");
        hex(&Sha256::digest(bytes))
    }

    /// Tabulate every grid point, spread over the current rayon pool.
    pub fn build(&self) -> Result<LutSet> {
        let dev = CellDevices::nominal(&self.device);
        let set = LutSet::build_with(self.kind, self.v_wl, &self.grid, |state, base, grid| {
            let points: Vec<_> = (0..grid.point_count())
                .into_par_iter()
                .map(|flat| solve_lut_point(self.kind, state, &base, &grid, &dev, flat))
                .collect::<std::result::Result<_, _>>()?;
            let (left, right) = points.iter().map(|r| (r.i_left.0, r.i_right.0)).unzip();
            BitcellLut::from_tables(self.kind, state, base, grid, left, right)
        })?;
        Ok(set)
    }
}

pub fn lut_path(cfg: &ExperimentConfig, kind: BitcellKind) -> PathBuf {
    cfg.lut.dir.join(format!("{}.lut", kind.name()))
}

pub fn encode(set: &LutSet, header: &LutHeader) -> Vec<u8> {
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for l in &set.luts {
        for v in l.left.iter().chain(&l.right) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(LutHeader, LutSet)> {
    let bad = |r: &str| SimError::format(path, r);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a bitcell table file"));
    }
    let format = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if format != FORMAT {
        return Err(bad(&format!("table format {format}, expected {FORMAT}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: LutHeader =
        serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
    let mut data = body[hlen..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let need: usize = header.tables.iter().map(|t| 2 * t.grid.point_count()).sum();
    if body.len() - hlen != 8 * need {
        return Err(bad(&format!("payload holds {} bytes, header implies {}", body.len() - hlen, 8 * need)));
    }
    let mut luts = Vec::with_capacity(header.tables.len());
    for t in &header.tables {
        let n = t.grid.point_count();
        let left: Vec<f64> = data.by_ref().take(n).collect();
        let right: Vec<f64> = data.by_ref().take(n).collect();
        let lut = BitcellLut::from_tables(header.kind, t.state, t.base, t.grid.clone(), left, right)
            .map_err(|e| bad(&e.to_string()))?;
        luts.push(lut);
    }
    let set = LutSet::new(header.kind, luts).map_err(|e| bad(&e.to_string()))?;
    Ok((header, set))
}

/// Build one kind's tables and write them. An existing file is kept unless
/// `force` is set.
pub fn generate(cfg: &ExperimentConfig, kind: BitcellKind, force: bool) -> Result<(PathBuf, LutHeader)> {
    let path = lut_path(cfg, kind);
    if path.exists() && !force {
        return Err(SimError::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::AlreadyExists, "table exists; pass --force to overwrite"),
        ));
    }
    let recipe = LutRecipe::from_config(cfg, kind)?;
    let set = recipe.build()?;
    let header = LutHeader {
        kind,
        fingerprint: recipe.fingerprint(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        version: crate::VERSION.to_string(),
        tables: set
            .luts
            .iter()
            .map(|l| TableHeader {
                state: l.state,
                base: l.base,
                grid: l.grid.clone(),
            })
            .collect(),
    };
    fs::create_dir_all(&cfg.lut.dir).map_err(|e| SimError::io(&cfg.lut.dir, e))?;
    let tmp = path.with_extension("lut.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| SimError::io(&tmp, e))?;
    f.write_all(&encode(&set, &header)).map_err(|e| SimError::io(&tmp, e))?;
    f.sync_all().map_err(|e| SimError::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| SimError::io(&path, e))?;
    Ok((path, header))
}

/// Load one kind's tables, checking they match the current configuration.
pub fn load(cfg: &ExperimentConfig, kind: BitcellKind) -> Result<Arc<LutSet>> {
    let path = lut_path(cfg, kind);
    let bytes = fs::read(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SimError::io(&path, std::io::Error::new(e.kind(), "no table; run gen-lut first"))
        } else {
            SimError::io(&path, e)
        }
    })?;
    let (header, set) = decode(&bytes, &path)?;
    let want = LutRecipe::from_config(cfg, kind)?.fingerprint();
    if header.kind != kind || header.fingerprint != want {
        return Err(SimError::config(format!(
            "{} was built for different device or grid settings; rerun gen-lut --force",
            path.display()
        )));
    }
    Ok(Arc::new(set))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: BitcellKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.lut.step.insert(kind, 0.05);
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for kind in [BitcellKind::OneT1Mtj, BitcellKind::StrideII] {
            let cfg = small(kind);
            let recipe = LutRecipe::from_config(&cfg, kind).unwrap();
            let set = recipe.build().unwrap();
            let seq = LutSet::build(kind, recipe.v_wl, &recipe.grid, &cfg.device).unwrap();
            assert_eq!(set, seq, "parallel build differs for {kind}");
            let header = LutHeader {
                kind,
                fingerprint: recipe.fingerprint(),
                config_hash: cfg.hash(),
                seed: 1,
                version: "t".into(),
                tables: set
                    .luts
                    .iter()
                    .map(|l| TableHeader {
                        state: l.state,
                        base: l.base,
                        grid: l.grid.clone(),
                    })
                    .collect(),
            };
            let bytes = encode(&set, &header);
            let (h, back) = decode(&bytes, Path::new("x")).unwrap();
            assert_eq!(h, header);
            assert_eq!(back, set);
            assert_eq!(decode(&bytes[..bytes.len() - 8], Path::new("x")).unwrap_err().exit_code(), 4);
        }
    }

    #[test]
    fn fingerprint_tracks_inputs() {
        let kind = BitcellKind::StrideI;
        let a = LutRecipe::from_config(&small(kind), kind).unwrap().fingerprint();
        let mut c = small(kind);
        c.seed = 99;
        assert_eq!(a, LutRecipe::from_config(&c, kind).unwrap().fingerprint());
        c.device.tmr = 2.0;
        assert_ne!(a, LutRecipe::from_config(&c, kind).unwrap().fingerprint());
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert_eq!(decode(b"nope", Path::new("x")).unwrap_err().exit_code(), 4);
    }
}
