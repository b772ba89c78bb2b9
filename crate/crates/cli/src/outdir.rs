use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::Refusal;

pub const LOCK_FILE: &str = ".embdistill.lock";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    lock: PathBuf,
}

impl OutputDir {
    /// Creates `root` if needed and takes its lock. A directory that already
    /// holds anything is refused unless `force` is set.
    pub fn claim(root: &Path, force: bool) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let lock = root.join(LOCK_FILE);
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(Refusal(format!(
                    "{} is locked by another run (remove {} if that run is gone)",
                    root.display(),
                    lock.display()
                )))
            }
            Err(e) => return Err(e).with_context(|| format!("creating {}", lock.display())),
        };
        let dir = Self { root: root.to_path_buf(), lock };
        let occupied = fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .any(|e| e.file_name() != LOCK_FILE);
        if occupied && !force {
            bail!(Refusal(format!(
                "{} already has results; pass --force to overwrite",
                root.display()
            )));
        }
        writeln!(file, "{}", std::process::id())?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.root.join(name)
    }

    /// Subdirectory, created on demand.
    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        fs::create_dir_all(&p)?;
        Ok(p)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// Checks that `path` may be written: either absent or `force` given.
pub fn check_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!(Refusal(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}
