pub mod eval;
pub mod export;
pub mod gen;
pub mod sweep;
pub mod train;

use anyhow::{Context, Result};
use std::path::Path;

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
