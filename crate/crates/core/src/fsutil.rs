use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

pub fn read_to_string(path: &Path) -> Result<String> {
    String::from_utf8(read(path)?).map_err(|_| Error::Data(format!("{} is not UTF-8", path.display())))
}

pub fn create_dir_all(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// A scratch directory next to an output directory. Everything is written
/// into [`path`](Self::path) first; [`commit`](Self::commit) then moves each
/// top-level entry into the output, replacing same-named entries. Dropping an
/// uncommitted stage deletes it, so a failed command leaves no outputs.
pub struct StagedDir {
    tmp: PathBuf,
    out: PathBuf,
    committed: bool,
}

impl StagedDir {
    pub fn new(out: &Path) -> Result<Self> {
        let tmp = temp_sibling(out);
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        create_dir_all(&tmp)?;
        Ok(StagedDir { tmp, out: out.to_path_buf(), committed: false })
    }

    pub fn path(&self) -> &Path {
        &self.tmp
    }

    pub fn commit(mut self) -> Result<()> {
        create_dir_all(&self.out)?;
        let entries = fs::read_dir(&self.tmp).map_err(|e| Error::io(&self.tmp, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.tmp, e))?;
            let target = self.out.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
            }
            fs::rename(entry.path(), &target).map_err(|e| Error::io(&target, e))?;
        }
        self.committed = true;
        fs::remove_dir(&self.tmp).map_err(|e| Error::io(&self.tmp, e))
    }
}

impl Drop for StagedDir {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}
