//! Flat `key = value` configuration files.
//!
//! Keys are the long flag names without dashes. Blank lines and lines
//! starting with `#` are ignored.

use std::collections::BTreeMap;
use std::path::Path;

use sbl_core::{Result, SblError};

pub const KEYS: &[&str] = &[
    "m",
    "l",
    "k",
    "snr",
    "iters",
    "trials",
    "seed",
    "epsilon",
    "eta",
    "damping",
    "out",
    "no-timing",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SblError::Parse {
                line: line_no,
                message: format!("expected key = value, got {line:?}"),
            })?;
            let key = key.trim().trim_start_matches("--").to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(SblError::Parse {
                    line: line_no,
                    message: format!("unknown key {key:?}"),
                });
            }
            if entries
                .insert(key.clone(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(SblError::Parse {
                    line: line_no,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, value)) => value
                .parse()
                .map(Some)
                .map_err(|e: T::Err| SblError::Parse {
                    line: *line,
                    message: format!("bad value for {key}: {e}"),
                }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_skips_comments() {
        let cfg = ConfigFile::parse("# default setup\nm = 100\n\n--l=200\nsnr = 14.5\n").unwrap();
        assert_eq!(cfg.get::<usize>("m").unwrap(), Some(100));
        assert_eq!(cfg.get::<usize>("l").unwrap(), Some(200));
        assert_eq!(cfg.get::<f64>("snr").unwrap(), Some(14.5));
        assert_eq!(cfg.get::<u64>("seed").unwrap(), None);
    }

    #[test]
    fn reports_line_numbers() {
        let err = ConfigFile::parse("m = 1\nbogus = 2\n").unwrap_err();
        assert!(matches!(err, SblError::Parse { line: 2, .. }));
        let err = ConfigFile::parse("m = 1\nl = x\n")
            .unwrap()
            .get::<usize>("l")
            .unwrap_err();
        assert!(matches!(err, SblError::Parse { line: 2, .. }));
        assert!(ConfigFile::parse("m 3\n").is_err());
        assert!(ConfigFile::parse("m = 3\nm = 4\n").is_err());
    }
}
