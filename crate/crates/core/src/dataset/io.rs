//! On-disk dataset: `manifest.json`, a binary tensor blob and a CSV labels
//! table.
//!
//! `samples.bin` is `TOMSMPL1`, the sample count (u64 LE), the shape
//! `11, 11, 20` (3 × u32 LE) and then the row-major f32 LE values.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gridworld::CELLS;

use super::{Dataset, DatasetManifest, SampleInfo, INPUT_LEN, PLANES};

pub const DATASET_MAGIC: &[u8; 8] = b"TOMSMPL1";
pub const LABELS_MAGIC: &str = "# tom-labels v1";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_FILE: &str = "samples.bin";
pub const LABELS_FILE: &str = "labels.csv";

pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut m = serde_json::to_string_pretty(manifest)?;
    m.push('\n');
    fs::write(dir.join(MANIFEST_FILE), m)?;

    let mut w = BufWriter::new(File::create(dir.join(SAMPLES_FILE))?);
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    for d in [11u32, 11, PLANES as u32] {
        w.write_all(&d.to_le_bytes())?;
    }
    for v in &ds.inputs {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(dir.join(LABELS_FILE))?);
    writeln!(w, "{LABELS_MAGIC}")?;
    write!(
        w,
        "sample,map,episode,step,target_visible,target,action,next_state,object0,object1,object2,object3"
    )?;
    for i in 0..CELLS {
        write!(w, ",belief_{i}")?;
    }
    writeln!(w)?;
    for (i, info) in ds.info.iter().enumerate() {
        write!(
            w,
            "{i},{},{},{},{},{},{},{},{},{},{},{}",
            info.map,
            info.episode,
            info.step,
            u8::from(info.target_visible),
            info.target,
            info.next_action,
            info.next_state,
            info.objects[0],
            info.objects[1],
            info.objects[2],
            info.objects[3]
        )?;
        for b in ds.belief(i) {
            write!(w, ",{b}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(parts: &[&str], i: usize, line: usize) -> Result<T> {
    parts
        .get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("labels", format!("line {line}: bad column {i}")))
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Dataset)> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;

    let mut r = BufReader::new(File::open(dir.join(SAMPLES_FILE))?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::format("samples", "bad magic"));
    }
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let n = u64::from_le_bytes(buf8) as usize;
    let mut shape = [0u32; 3];
    for d in &mut shape {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b);
    }
    if shape != [11, 11, PLANES as u32] {
        return Err(Error::format("samples", format!("unexpected shape {shape:?}")));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * INPUT_LEN * 4 {
        return Err(Error::format(
            "samples",
            format!("expected {} bytes of data, found {}", n * INPUT_LEN * 4, bytes.len()),
        ));
    }
    let inputs: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let r = BufReader::new(File::open(dir.join(LABELS_FILE))?);
    let mut lines = r.lines();
    let first = lines.next().transpose()?.unwrap_or_default();
    if first != LABELS_MAGIC {
        return Err(Error::format("labels", "missing version line"));
    }
    lines.next().transpose()?;
    let mut info = Vec::with_capacity(n);
    let mut beliefs = Vec::with_capacity(n * CELLS);
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k + 3;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 12 + CELLS {
            return Err(Error::format("labels", format!("line {lineno}: {} columns", parts.len())));
        }
        if field::<usize>(&parts, 0, lineno)? != k {
            return Err(Error::format("labels", format!("line {lineno}: sample ids out of order")));
        }
        info.push(SampleInfo {
            map: parts[1].to_string(),
            episode: field(&parts, 2, lineno)?,
            step: field(&parts, 3, lineno)?,
            target_visible: field::<u8>(&parts, 4, lineno)? == 1,
            target: field(&parts, 5, lineno)?,
            next_action: field(&parts, 6, lineno)?,
            next_state: field(&parts, 7, lineno)?,
            objects: [
                field(&parts, 8, lineno)?,
                field(&parts, 9, lineno)?,
                field(&parts, 10, lineno)?,
                field(&parts, 11, lineno)?,
            ],
        });
        for i in 0..CELLS {
            beliefs.push(field::<f32>(&parts, 12 + i, lineno)?);
        }
    }
    if info.len() != n {
        return Err(Error::format(
            "labels",
            format!("{} label rows for {n} samples", info.len()),
        ));
    }
    Ok((
        manifest,
        Dataset {
            inputs,
            beliefs,
            info,
        },
    ))
}
