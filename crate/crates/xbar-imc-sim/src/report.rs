//! Result files: RFC 4180 CSV and JSON with a fixed key order. Every file
//! carries the tool version, configuration hash and seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Result, SimError};

/// Provenance stamped on every output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Stamp {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Serialize)]
struct JsonReport<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    results: &'a T,
}

/// Pretty JSON; struct fields keep declaration order and maps are sorted.
pub fn json_bytes<T: Serialize>(stamp: &Stamp, results: &T) -> Vec<u8> {
    let r = JsonReport {
        tool: env!("CARGO_PKG_NAME"),
        version: crate::VERSION,
        command: &stamp.command,
        config_hash: &stamp.config_hash,
        seed: stamp.seed,
        results,
    };
    let mut out = serde_json::to_vec_pretty(&r).expect("report serializes");
    out.push(b'\n');
    out
}

/// CSV rows with provenance columns appended to each.
pub fn csv_bytes(stamp: &Stamp, header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let seed = stamp.seed.to_string();
    let mut h: Vec<&str> = header.to_vec();
    h.extend(["config_hash", "seed", "version"]);
    w.write_record(&h).expect("in-memory write");
    for r in rows {
        debug_assert_eq!(r.len(), header.len());
        let tail = [stamp.config_hash.as_str(), seed.as_str(), crate::VERSION];
        w.write_record(r.iter().map(String::as_str).chain(tail)).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Shortest representation that parses back to the same float.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub struct Writer {
    dir: PathBuf,
    pub written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn put(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| SimError::io(&path, e))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, stamp: &Stamp, results: &T) -> Result<PathBuf> {
        self.put(name, &json_bytes(stamp, results))
    }

    pub fn csv(&mut self, name: &str, stamp: &Stamp, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        self.put(name, &csv_bytes(stamp, header, rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn stamp() -> Stamp {
        Stamp {
            command: "sm".into(),
            config_hash: "ab".into(),
            seed: 3,
        }
    }

    #[test]
    fn csv_quotes_and_stamps() {
        let rows = vec![vec!["a,b".to_string(), "1".to_string()], vec!["say \"hi\"".into(), "2".into()]];
        let text = String::from_utf8(csv_bytes(&stamp(), &["name", "n"], &rows)).unwrap();
        let v = crate::VERSION;
        assert_eq!(
            text,
            format!("name,n,config_hash,seed,version\r\n\"a,b\",1,ab,3,{v}\r\n\"say \"\"hi\"\"\",2,ab,3,{v}\r\n")
        );
    }

    #[test]
    fn json_key_order_is_fixed() {
        let mut m = BTreeMap::new();
        m.insert("z", 1);
        m.insert("a", 2);
        let text = String::from_utf8(json_bytes(&stamp(), &m)).unwrap();
        let keys = ["\"tool\"", "\"version\"", "\"command\"", "\"config_hash\"", "\"seed\"", "\"results\"", "\"a\"", "\"z\""];
        let pos: Vec<usize> = keys.iter().map(|k| text.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{text}");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1e-6, -3.25e-5, 123456.789] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
