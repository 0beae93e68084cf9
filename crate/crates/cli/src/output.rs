//! All-or-nothing file output: write to hidden temporaries, rename at commit.

use std::fs;
use std::path::{Path, PathBuf};

use cardiacnet::volgrid::{encode_cvol, Volume, Voxel};

/// Files staged so far; dropped uncommitted, every temporary and every
/// already-renamed file is removed.
#[derive(Default)]
pub struct Staged {
    pending: Vec<(PathBuf, PathBuf)>,
    committed: Vec<PathBuf>,
    done: bool,
}

fn temp_path(target: &Path) -> PathBuf {
    let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    target.with_file_name(format!(".{name}.partial-{}", std::process::id()))
}

impl Staged {
    pub fn bytes(&mut self, target: &Path, bytes: &[u8]) -> std::io::Result<()> {
        let tmp = temp_path(target);
        let result = fs::write(&tmp, bytes);
        // Track before checking, so a half-written temporary is cleaned too.
        self.pending.push((tmp, target.to_path_buf()));
        result
    }

    pub fn volume<V: Voxel>(&mut self, target: &Path, volume: &Volume<V>) -> std::io::Result<()> {
        self.bytes(target, &encode_cvol(volume))
    }

    /// Renames every temporary into place. On failure, drop undoes it all.
    pub fn commit(mut self) -> std::io::Result<()> {
        while let Some((tmp, target)) = self.pending.first().cloned() {
            fs::rename(&tmp, &target)?;
            self.pending.remove(0);
            self.committed.push(target);
        }
        self.done = true;
        Ok(())
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for (tmp, _) in &self.pending {
            let _ = fs::remove_file(tmp);
        }
        for path in &self.committed {
            let _ = fs::remove_file(path);
        }
    }
}
