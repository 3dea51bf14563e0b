//! Atomic output: files are written to a temporary location next to their
//! destination and renamed into place only once every file is complete.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(format!("cannot write {}: {e}", path.display()))
}

/// Write one file via a temporary sibling and a rename.
pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let tmp = temp_sibling(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(path, e));
    }
    Ok(())
}

/// A set of files destined for one output directory. Nothing appears in the
/// destination until [`Staging::commit`]; dropping an uncommitted staging
/// removes everything it wrote.
pub struct Staging {
    dest: PathBuf,
    tmp: PathBuf,
    files: Vec<String>,
    committed: bool,
}

impl Staging {
    pub fn new(dest: &Path) -> CliResult<Self> {
        if dest.exists() && !dest.is_dir() {
            return Err(CliError::usage(format!("{} exists and is not a directory", dest.display())));
        }
        let tmp = temp_sibling(dest);
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
        Ok(Self { dest: dest.to_path_buf(), tmp, files: Vec::new(), committed: false })
    }

    pub fn dest(&self) -> &Path {
        &self.dest
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.tmp.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    /// Move every staged file into the destination directory. If a rename
    /// fails, files already moved are removed again.
    pub fn commit(mut self) -> CliResult<()> {
        fs::create_dir_all(&self.dest).map_err(|e| io_err(&self.dest, e))?;
        let mut moved = Vec::new();
        for name in &self.files {
            let target = self.dest.join(name);
            if let Err(e) = fs::rename(self.tmp.join(name), &target) {
                for m in &moved {
                    let _ = fs::remove_file(m);
                }
                return Err(io_err(&target, e));
            }
            moved.push(target);
        }
        self.committed = true;
        let _ = fs::remove_dir_all(&self.tmp);
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.tmp);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_staging_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("out");
        {
            let mut s = Staging::new(&dest).unwrap();
            s.write("a.csv", b"x").unwrap();
        }
        assert!(!dest.exists());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn commit_moves_files() {
        let dir = tempfile::tempdir().unwrap();
        let dest = dir.path().join("out");
        let mut s = Staging::new(&dest).unwrap();
        s.write("a.csv", b"x").unwrap();
        s.write("b.csv", b"y").unwrap();
        s.commit().unwrap();
        assert_eq!(fs::read(dest.join("b.csv")).unwrap(), b"y");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn atomic_file_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/m.json");
        write_file_atomic(&p, b"1").unwrap();
        write_file_atomic(&p, b"2").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"2");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
