//! Output files are written to a temporary location and renamed into place
//! only once complete, so a failed command never leaves partial files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use tempfile::{NamedTempFile, TempDir};

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Write one file atomically.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = parent_dir(path);
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut tmp = NamedTempFile::new_in(&dir).with_context(|| format!("cannot write in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// A set of files destined for one directory. Files are built in a hidden
/// scratch directory and moved into place by [`commit`](Self::commit).
pub struct StagedDir {
    target: PathBuf,
    scratch: TempDir,
    names: Vec<String>,
}

impl StagedDir {
    pub fn new(target: &Path) -> Result<Self> {
        fs::create_dir_all(target).with_context(|| format!("cannot create {}", target.display()))?;
        let scratch = tempfile::Builder::new()
            .prefix(".staging")
            .tempdir_in(target)
            .with_context(|| format!("cannot write in {}", target.display()))?;
        Ok(Self { target: target.to_path_buf(), scratch, names: Vec::new() })
    }

    pub fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        if self.names.iter().any(|n| n == name) {
            anyhow::bail!("output file name '{name}' produced twice");
        }
        let path = self.scratch.path().join(name);
        let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        self.names.push(name.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn write(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let mut w = self.create(name)?;
        write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Move every staged file into the target directory.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::with_capacity(self.names.len());
        for name in &self.names {
            let to = self.target.join(name);
            fs::rename(self.scratch.path().join(name), &to)
                .with_context(|| format!("cannot write {}", to.display()))?;
            out.push(to);
        }
        Ok(out)
    }
}

/// A file-name-safe rendering of a patient id.
pub fn file_stem(id: &str) -> String {
    let s: String =
        id.chars().map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' }).collect();
    if s.is_empty() || s.starts_with('.') {
        format!("_{s}")
    } else {
        s
    }
}
