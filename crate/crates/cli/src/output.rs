use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use tempfile::NamedTempFile;

/// Writes `path` through a temporary file in the same directory, renamed
/// into place once complete.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = NamedTempFile::new_in(&dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    {
        let mut w = io::BufWriter::new(tmp.as_file_mut());
        f(&mut w).with_context(|| format!("writing {}", path.display()))?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub struct Reports {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Reports {
    pub fn new(dir: &Path) -> Self {
        Reports { dir: dir.to_path_buf(), written: Vec::new() }
    }

    pub fn sub(&self, name: &str) -> Self {
        Reports::new(&self.dir.join(name))
    }

    pub fn write(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, f)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, |w| w.write_all(text.as_bytes()))
    }

    pub fn absorb(&mut self, other: Reports) {
        self.written.extend(other.written);
    }

    pub fn files(&self) -> Vec<String> {
        self.written.iter().map(|p| p.display().to_string()).collect()
    }
}
