use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Plain-text list of split files, one `name = path` pair per line.
///
/// ```text
/// # written by `embdistill synth`
/// train = train.embd
/// val = val.embd
/// ```
///
/// Relative paths resolve against the manifest's own directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub splits: BTreeMap<String, PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut splits = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("manifest line {}: expected `name = path`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(Error::Config(format!(
                    "manifest line {}: empty name or path",
                    lineno + 1
                )));
            }
            let path = Path::new(value);
            let path = if path.is_absolute() {
                path.to_path_buf()
            } else {
                base.join(path)
            };
            if splits.insert(key.to_string(), path).is_some() {
                return Err(Error::Config(format!(
                    "manifest line {}: split {key:?} listed twice",
                    lineno + 1
                )));
            }
        }
        Ok(Self { splits })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Renders paths relative to `base` when they live under it.
    pub fn render(&self, base: &Path) -> String {
        let mut out = String::new();
        for (k, p) in &self.splits {
            let shown = p.strip_prefix(base).unwrap_or(p);
            let _ = writeln!(out, "{k} = {}", shown.display());
        }
        out
    }

    pub fn get(&self, split: &str) -> Result<&Path> {
        self.splits
            .get(split)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Config(format!("manifest has no {split:?} split")))
    }
}
