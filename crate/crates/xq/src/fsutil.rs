//! Atomic output: data goes to a temporary file in the destination directory
//! and is renamed into place only once fully written.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

fn parent_dir(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Stages `bytes` next to `path` without touching `path` itself.
pub fn stage(path: &Path, bytes: &[u8]) -> io::Result<Staged> {
    let mut file = NamedTempFile::new_in(parent_dir(path))?;
    file.write_all(bytes)?;
    file.as_file().sync_all()?;
    Ok(Staged { file, path: path.to_path_buf() })
}

/// A fully written temporary file waiting to be renamed.
pub struct Staged {
    file: NamedTempFile,
    path: PathBuf,
}

impl Staged {
    pub fn commit(self) -> io::Result<()> {
        self.file.persist(&self.path).map(drop).map_err(|e| e.error)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    stage(path, bytes)?.commit()
}

/// Writes several files, renaming none of them until all are staged.
pub fn write_all_atomic(files: &[(PathBuf, Vec<u8>)]) -> io::Result<()> {
    let staged = files.iter().map(|(path, bytes)| stage(path, bytes)).collect::<io::Result<Vec<_>>>()?;
    staged.into_iter().try_for_each(Staged::commit)
}
