//! Output files. Every file is written to a temporary sibling and renamed
//! into place, so readers never see a partial file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::metrics::{metrics_csv, node_metrics_csv, MetricsRow, NodeRow};
use crate::error::{Error, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
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

/// Paths written for one run or suite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrittenFiles {
    pub metrics: PathBuf,
    pub nodes: Option<PathBuf>,
    pub manifest: PathBuf,
}

/// Writes `<stem>.csv`, `<stem>.nodes.csv` (when there are node rows) and
/// `<stem>.manifest.json` into `dir`.
pub fn write_outputs(
    dir: &Path,
    stem: &str,
    rows: &[MetricsRow],
    node_rows: &[NodeRow],
    manifest: &serde_json::Value,
) -> Result<WrittenFiles> {
    let metrics = dir.join(format!("{stem}.csv"));
    let manifest_path = dir.join(format!("{stem}.manifest.json"));
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::format("manifest", e.to_string()))?;
    text.push('\n');
    let nodes = if node_rows.is_empty() {
        None
    } else {
        let p = dir.join(format!("{stem}.nodes.csv"));
        write_atomic(&p, node_metrics_csv(node_rows).as_bytes())?;
        Some(p)
    };
    write_atomic(&manifest_path, text.as_bytes())?;
    write_atomic(&metrics, metrics_csv(rows).as_bytes())?;
    Ok(WrittenFiles {
        metrics,
        nodes,
        manifest: manifest_path,
    })
}
