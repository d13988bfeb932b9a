//! Dataset export/import: one directory per task, one JSON file per example,
//! plus a line-delimited manifest. Re-import round-trips exactly (pixel
//! values serialize losslessly).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{LabeledExample, SplitSet};

/// One manifest line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub example_id: String,
    pub grade: usize,
    pub split: String,
    pub generator_seed: u64,
    pub recipe_hash: String,
}

/// Write a task's splits under `dir`: `manifest.jsonl` plus
/// `examples/<id>.json`.
pub fn export_dataset(
    dir: &Path,
    splits: &SplitSet,
    generator_seed: u64,
    recipe_hash: &str,
) -> Result<()> {
    let examples_dir = dir.join("examples");
    std::fs::create_dir_all(&examples_dir)?;
    let manifest = std::fs::File::create(dir.join("manifest.jsonl"))?;
    let mut mw = BufWriter::new(manifest);
    for (split_name, examples) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        for ex in examples {
            let line = DatasetManifest {
                example_id: ex.id.clone(),
                grade: ex.grade,
                split: split_name.to_string(),
                generator_seed,
                recipe_hash: recipe_hash.to_string(),
            };
            serde_json::to_writer(&mut mw, &line)?;
            mw.write_all(b"\n")?;
            let f = std::fs::File::create(examples_dir.join(format!("{}.json", ex.id)))?;
            serde_json::to_writer(BufWriter::new(f), ex)?;
        }
    }
    mw.flush()?;
    Ok(())
}

/// Read back a dataset written by [`export_dataset`].
pub fn import_dataset(dir: &Path) -> Result<(SplitSet, Vec<DatasetManifest>)> {
    let manifest_path = dir.join("manifest.jsonl");
    let file = std::fs::File::open(&manifest_path).map_err(|e| {
        Error::Validation(format!("cannot open {}: {e}", manifest_path.display()))
    })?;
    let mut splits = SplitSet { train: Vec::new(), validation: Vec::new(), test: Vec::new() };
    let mut manifests = Vec::new();
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: DatasetManifest = serde_json::from_str(&line)?;
        if seen.insert(entry.example_id.clone(), ()).is_some() {
            return Err(Error::Validation(format!(
                "duplicate example id '{}' in manifest",
                entry.example_id
            )));
        }
        let path = dir.join("examples").join(format!("{}.json", entry.example_id));
        let ex: LabeledExample = serde_json::from_reader(BufReader::new(
            std::fs::File::open(&path)
                .map_err(|e| Error::Validation(format!("cannot open {}: {e}", path.display())))?,
        ))?;
        match entry.split.as_str() {
            "train" => splits.train.push(ex),
            "validation" => splits.validation.push(ex),
            "test" => splits.test.push(ex),
            other => {
                return Err(Error::Validation(format!("unknown split '{other}' in manifest")))
            }
        }
        manifests.push(entry);
    }
    Ok((splits, manifests))
}
