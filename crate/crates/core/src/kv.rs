//! Plain-text `key = value` files used for chain configs, fidelity files,
//! calibration files and bit-sample metadata.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.clone(),
                line: idx + 1,
                msg: format!("expected key=value, got {raw:?}"),
            })?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), (idx + 1, value.trim().to_string())).is_some() {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: idx + 1,
                    msg: format!("duplicate key {key}"),
                });
            }
        }
        Ok(Self { path, entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|e| Error::Parse {
                path: self.path.clone(),
                line: *line,
                msg: format!("{key}: {e}"),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::Parse {
            path: self.path.clone(),
            line: 0,
            msg: format!("missing key {key}"),
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Ordered writer; keeps insertion order so files diff cleanly.
#[derive(Debug, Default)]
pub struct KeyValueWriter {
    out: String,
}

impl KeyValueWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.out, "# {text}");
        self
    }

    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.out, "{key}={value}");
        self
    }

    pub fn finish(&self) -> String {
        self.out.clone()
    }
}
