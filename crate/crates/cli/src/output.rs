//! All-or-nothing output directories.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Files are written into a hidden staging directory and moved into place by
/// [`Staging::commit`]. Dropping an uncommitted stage removes everything it
/// created, including the target directory if it did not exist before.
pub struct Staging {
    target: PathBuf,
    stage: PathBuf,
    created_target: bool,
    names: Vec<String>,
    done: bool,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        let created_target = !target.exists();
        fs::create_dir_all(target).with_context(|| format!("cannot create output directory {}", target.display()))?;
        let stage = target.join(format!(".ejko-staging-{}", std::process::id()));
        let s = Self { target: target.to_path_buf(), stage, created_target, names: Vec::new(), done: false };
        fs::create_dir(&s.stage).with_context(|| format!("cannot write to {}", target.display()))?;
        Ok(s)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.stage.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.names.push(name.to_owned());
        Ok(())
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::with_capacity(self.names.len());
        for name in &self.names {
            let dest = self.target.join(name);
            fs::rename(self.stage.join(name), &dest).with_context(|| format!("cannot move {} into place", dest.display()))?;
            out.push(dest);
        }
        fs::remove_dir(&self.stage).ok();
        self.done = true;
        Ok(out)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        fs::remove_dir_all(&self.stage).ok();
        if self.created_target {
            fs::remove_dir(&self.target).ok();
        }
    }
}

/// Writes a single file through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, contents).with_context(|| format!("cannot write {}", path.display()))?;
    if let Err(e) = fs::rename(&tmp, path) {
        fs::remove_file(&tmp).ok();
        return Err(e).with_context(|| format!("cannot write {}", path.display()));
    }
    Ok(())
}
