//! Flat `key = value` run configuration with `#` comments and dotted
//! section prefixes (`preset.kind`, `sim.n`, ...). Parsing is strict:
//! malformed lines fail immediately and keys never read by the consumer
//! are reported so typos cannot pass silently.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};

pub struct Config {
    map: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
}

impl Config {
    pub fn parse_str(text: &str) -> Result<Config> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::usage(format!("config line {}: expected key = value, got {raw:?}", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::usage(format!("config line {}: empty key", lineno + 1)));
            }
            if map.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::usage(format!("config line {}: duplicate key {key}", lineno + 1)));
            }
        }
        Ok(Config { map, used: RefCell::new(BTreeSet::new()) })
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::usage(format!("cannot read config {}: {e}", path.display())))?;
        Config::parse_str(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::usage(format!("missing config key {key}")))
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::usage(format!("config key {key}: {v:?} is not a number"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::usage(format!("config key {key}: {v:?} is not an integer"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::usage(format!("config key {key}: {v:?} is not an integer"))),
        }
    }

    /// Comma-separated list of numbers.
    pub fn get_f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        Error::usage(format!("config key {key}: {s:?} is not a number"))
                    })
                })
                .collect(),
        }
    }

    /// Keys present in the file but never requested by the consumer.
    pub fn unknown_keys(&self) -> Vec<String> {
        let used = self.used.borrow();
        self.map.keys().filter(|k| !used.contains(*k)).cloned().collect()
    }

    /// Stable content hash of the raw key-value pairs (FNV-1a).
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (k, v) in &self.map {
            eat(k.as_bytes());
            eat(b"=");
            eat(v.as_bytes());
            eat(b"\n");
        }
        h
    }
}
