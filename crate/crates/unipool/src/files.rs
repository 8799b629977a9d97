//! NDJSON record files and scenario documents.

use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use unipool_core::sim::Scenario;
use unipool_core::RawRecord;

/// Opens `path`, or stdin for `-`.
pub fn open_input(path: &Path) -> anyhow::Result<Box<dyn Read>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(io::stdin()))
    } else {
        Ok(Box::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?))
    }
}

pub fn read_records(input: impl Read) -> anyhow::Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("record on line {}", i + 1))?);
    }
    Ok(out)
}

pub fn write_ndjson<T: serde::Serialize>(mut out: impl Write, rows: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_scenario(path: &Path, s: &Scenario) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(s)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Writes one `<name>.json` per scenario into `dir`.
pub fn write_corpus(dir: &Path, corpus: &[Scenario]) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    corpus
        .iter()
        .map(|s| {
            let path = dir.join(format!("{}.json", s.id()));
            write_scenario(&path, s).map(|_| path)
        })
        .collect()
}

/// Loads a corpus from a directory of scenario files, a single scenario
/// file, or a file holding a JSON array of scenarios. Sorted by id.
pub fn load_corpus(path: &Path) -> anyhow::Result<Vec<Scenario>> {
    let mut out = Vec::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        for f in files {
            out.extend(load_file(&f)?);
        }
    } else if path.exists() {
        out = load_file(path)?;
    } else {
        bail!("corpus {} does not exist", path.display());
    }
    if out.is_empty() {
        bail!("corpus {} holds no scenarios", path.display());
    }
    out.sort_by(|a, b| a.id().cmp(b.id()));
    Ok(out)
}

fn load_file(path: &Path) -> anyhow::Result<Vec<Scenario>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text)
    } else {
        serde_json::from_str(&text).map(|s| vec![s])
    };
    parsed.with_context(|| format!("parsing scenario file {}", path.display()))
}
