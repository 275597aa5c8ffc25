//! Where each artifact lives under the output directory, and the map index.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tom_core::experiments::check_disjoint;
use tom_core::{Error, GridMap, MapGenParams};

pub const INDEX_FILE: &str = "index.json";
pub const REPORT_FILE: &str = "report.txt";

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: PathBuf) -> Self {
        Layout { root }
    }

    pub fn maps(&self) -> PathBuf {
        self.root.join("maps")
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join(REPORT_FILE)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub id: String,
    pub seed: u64,
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapIndex {
    pub version: u32,
    pub seed: u64,
    pub generator: MapGenParams,
    pub train: Vec<MapEntry>,
    pub test: Vec<MapEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<id>.map` for every map and returns its index entry.
pub fn write_map(dir: &Path, map: &GridMap) -> Result<MapEntry> {
    let text = map.to_text();
    let file = format!("{}.map", map.id());
    fs::write(dir.join(&file), &text).with_context(|| format!("writing {file}"))?;
    Ok(MapEntry {
        id: map.id().to_string(),
        seed: map.seed(),
        file,
        sha256: sha256_hex(text.as_bytes()),
    })
}

pub fn write_index(dir: &Path, index: &MapIndex) -> Result<()> {
    let mut text = serde_json::to_string_pretty(index)?;
    text.push('\n');
    fs::write(dir.join(INDEX_FILE), text)?;
    Ok(())
}

fn read_entries(dir: &Path, entries: &[MapEntry]) -> Result<Vec<GridMap>> {
    entries
        .iter()
        .map(|e| {
            let bytes = fs::read(dir.join(&e.file)).map_err(Error::from)
                .with_context(|| format!("reading map {}", e.file))?;
            if sha256_hex(&bytes) != e.sha256 {
                return Err(Error::Checksum(format!("map file {}", e.file)).into());
            }
            let map = GridMap::from_text(&String::from_utf8_lossy(&bytes))?;
            if map.id() != e.id {
                return Err(Error::Integrity(format!("{} holds map `{}`, index says `{}`", e.file, map.id(), e.id)).into());
            }
            Ok(map)
        })
        .collect()
}

/// Training and test maps listed in the index, verified against their hashes.
pub fn read_maps(dir: &Path) -> Result<(MapIndex, Vec<GridMap>, Vec<GridMap>)> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path)
        .map_err(Error::from)
        .with_context(|| format!("no map index at {}; run `tom gen-maps` first", path.display()))?;
    let index: MapIndex = serde_json::from_str(&text).map_err(Error::from)?;
    let train = read_entries(dir, &index.train)?;
    let test = read_entries(dir, &index.test)?;
    check_disjoint(&train, &test)?;
    Ok((index, train, test))
}
