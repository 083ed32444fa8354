use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ProjectState, StoreError};

/// Checkpoint of the folded state, written as `snapshot-<seq>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub state_hash: String,
    pub state: ProjectState,
}

impl Snapshot {
    pub fn of(state: &ProjectState) -> Self {
        Self {
            seq: state.last_seq,
            state_hash: state.hash(),
            state: state.clone(),
        }
    }
}

pub fn snapshot_file_name(seq: u64) -> String {
    format!("snapshot-{seq}.json")
}

/// Writes the snapshot atomically (temp file + rename) and returns its path.
pub fn write_snapshot(dir: &Path, state: &ProjectState) -> Result<PathBuf, StoreError> {
    std::fs::create_dir_all(dir)?;
    let snap = Snapshot::of(state);
    let path = dir.join(snapshot_file_name(snap.seq));
    let tmp = dir.join(format!(".{}.tmp", snapshot_file_name(snap.seq)));
    let json = serde_json::to_vec_pretty(&snap).map_err(|e| StoreError::Serialization(e.to_string()))?;
    std::fs::write(&tmp, json)?;
    std::fs::File::open(&tmp)?.sync_all()?;
    std::fs::rename(&tmp, &path)?;
    Ok(path)
}

/// Reads a snapshot and checks its stored hash against the decoded state.
pub fn load_snapshot(path: &Path) -> Result<Snapshot, StoreError> {
    let bytes = std::fs::read(path)?;
    let snap: Snapshot =
        serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptSnapshot(format!("{}: {e}", path.display())))?;
    if snap.state.hash() != snap.state_hash || snap.state.last_seq != snap.seq {
        return Err(StoreError::CorruptSnapshot(format!("{}: hash or seq mismatch", path.display())));
    }
    Ok(snap)
}

/// Newest loadable snapshot in `dir`; damaged ones are skipped.
pub fn latest_snapshot(dir: &Path) -> Result<Option<Snapshot>, StoreError> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Ok(None);
    };
    let mut found: Vec<(u64, PathBuf)> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let seq = name.strip_prefix("snapshot-")?.strip_suffix(".json")?.parse().ok()?;
            Some((seq, e.path()))
        })
        .collect();
    found.sort_by_key(|(seq, _)| std::cmp::Reverse(*seq));
    Ok(found.into_iter().find_map(|(_, p)| load_snapshot(&p).ok()))
}
