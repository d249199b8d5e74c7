use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const LOCK_FILE: &str = ".copdnet.lock";

/// Exclusive claim on a cache directory, released on drop.
#[derive(Debug)]
pub struct CacheLock {
    path: PathBuf,
}

impl CacheLock {
    pub fn acquire(cache_dir: &Path) -> Result<CacheLock> {
        fs::create_dir_all(cache_dir).map_err(|e| CliError::io(cache_dir, e))?;
        let path = cache_dir.join(LOCK_FILE);
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::AlreadyExists => return Err(CliError::Locked(path)),
            Err(e) => return Err(CliError::io(&path, e)),
        };
        // The pid is informational only; a stale lock has to be removed by hand.
        let _ = writeln!(file, "{}", std::process::id());
        Ok(CacheLock { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
