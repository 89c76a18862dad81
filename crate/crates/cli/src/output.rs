use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

pub const FAILED_SENTINEL: &str = "FAILED";

/// The output directory of one command. Files are written to a temporary
/// name and renamed into place, so a reader never sees a truncated CSV.
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path, force: bool) -> Result<Self> {
        if root.exists() {
            let occupied = fs::read_dir(root)
                .with_context(|| format!("reading {}", root.display()))?
                .next()
                .is_some();
            if occupied && !force {
                bail!(
                    "output directory {} is not empty; pass --force to overwrite",
                    root.display()
                );
            }
            let sentinel = root.join(FAILED_SENTINEL);
            if sentinel.exists() {
                fs::remove_file(&sentinel)
                    .with_context(|| format!("removing {}", sentinel.display()))?;
            }
        } else {
            fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_with(
        &self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> fedstale::Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.path(name);
        let tmp = self.path(&format!(".{name}.partial"));
        let mut f =
            fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)
            .with_context(|| format!("writing {}", tmp.display()))?;
        f.sync_all().ok();
        fs::rename(&tmp, &target).with_context(|| format!("renaming to {}", target.display()))?;
        Ok(())
    }

    pub fn mark_failed(&self, message: &str) {
        let _ = fs::write(self.path(FAILED_SENTINEL), format!("{message}\n"));
    }
}
