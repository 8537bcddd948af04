//! Output-directory discipline: refuse to clobber non-empty directories
//! without `--force`, and remove partial outputs when a command fails.

use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("output directory {0} is not empty; pass --force to write into it")]
    NotEmpty(PathBuf),
    #[error("output path {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Tracks every file a command creates so a failing run can clean up after
/// itself. Call [`OutputDir::commit`] once the command has fully succeeded;
/// dropping an uncommitted tracker deletes the tracked files.
pub struct OutputDir {
    root: PathBuf,
    created: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn prepare(root: impl Into<PathBuf>, force: bool) -> Result<OutputDir, OutputError> {
        let root = root.into();
        if root.exists() {
            let non_empty = std::fs::read_dir(&root)
                .map_err(|source| OutputError::Io {
                    path: root.display().to_string(),
                    source,
                })?
                .next()
                .is_some();
            if non_empty && !force {
                return Err(OutputError::NotEmpty(root));
            }
        } else {
            std::fs::create_dir_all(&root).map_err(|source| OutputError::Io {
                path: root.display().to_string(),
                source,
            })?;
        }
        Ok(OutputDir {
            root,
            created: Vec::new(),
            committed: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Registers (and returns) a path under the output root that this run
    /// is about to write.
    pub fn file(&mut self, name: impl AsRef<Path>) -> PathBuf {
        let path = self.root.join(name.as_ref());
        self.created.push(path.clone());
        path
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for path in &self.created {
            let _ = std::fs::remove_file(path);
        }
    }
}
