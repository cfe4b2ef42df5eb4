//! Dataset materialization: line-delimited task files plus a manifest,
//! byte-identical across reruns with the same configuration.

use crate::alphabet::Alphabet;
use crate::taskgen::{
    build_alphabet_pool, build_ood_alphabets, class_tags, ood_suites, ood_task_for_index, task_for_index,
    AnalogyTask, DatasetConfig, TaskError, TaskRecord,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

/// Held-out alphabets per dataset, cycled over permutation levels.
pub const OOD_ALPHABET_COUNT: usize = 8;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset file {file}: {message}")]
    Malformed { file: String, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: DatasetConfig,
    /// File name → task count.
    pub files: BTreeMap<String, usize>,
    pub pool: Vec<Alphabet>,
    pub ood_alphabets: Vec<Alphabet>,
}

fn write_jsonl(
    path: &Path,
    split: &str,
    tasks: impl Iterator<Item = Result<AnalogyTask, TaskError>>,
) -> Result<usize, DatasetError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut n = 0usize;
    for task in tasks {
        let record = TaskRecord::from_task(&task?, split);
        serde_json::to_writer(&mut file, &record)
            .map_err(|e| DatasetError::Malformed { file: path.display().to_string(), message: e.to_string() })?;
        file.write_all(b"\n")?;
        n += 1;
    }
    file.flush()?;
    Ok(n)
}

/// Generates every split and out-of-distribution suite into `out_dir`.
/// Deterministic in the config seed; rerunning produces identical bytes.
pub fn generate(config: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest, DatasetError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let pool = build_alphabet_pool(config.alphabet_pool_size, config.seed);
    let ood_alphabets = build_ood_alphabets(OOD_ALPHABET_COUNT, config.seed, &pool);

    let mut files = BTreeMap::new();
    let splits: [(&str, u64, usize); 3] = [
        ("train", 0, config.train_size),
        ("val", config.train_size as u64, config.val_size),
        ("test_id", (config.train_size + config.val_size) as u64, config.test_id_size),
    ];
    for (name, base, size) in splits {
        let n = write_jsonl(
            &out_dir.join(format!("{name}.jsonl")),
            name,
            (0..size as u64).map(|i| task_for_index(config, &pool, base + i)),
        )?;
        files.insert(format!("{name}.jsonl"), n);
    }
    for (name, class, new_alphabet, stream) in ood_suites() {
        let alphabets: &[Alphabet] = if new_alphabet { &ood_alphabets } else { &pool };
        let tags = class_tags(class);
        let is_copy = name == "ood_copy_check";
        let n = write_jsonl(
            &out_dir.join(format!("{name}.jsonl")),
            name,
            (0..config.ood_suite_size as u64)
                .map(|i| ood_task_for_index(config, alphabets, tags, stream, i, is_copy)),
        )?;
        files.insert(format!("{name}.jsonl"), n);
    }

    let manifest = DatasetManifest { version: 1, config: config.clone(), files, pool, ood_alphabets };
    let mut f = std::fs::File::create(out_dir.join("manifest.json"))?;
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DatasetError::Malformed { file: "manifest.json".into(), message: e.to_string() })?;
    f.write_all(body.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let path = dir.join("manifest.json");
    let body = std::fs::read_to_string(&path)?;
    serde_json::from_str(&body)
        .map_err(|e| DatasetError::Malformed { file: path.display().to_string(), message: e.to_string() })
}

/// Reads one split or suite file (e.g. `train`, `ood_novel_new_alpha`).
pub fn load_split(dir: &Path, name: &str) -> Result<Vec<AnalogyTask>, DatasetError> {
    let path = dir.join(format!("{name}.jsonl"));
    let file = std::io::BufReader::new(std::fs::File::open(&path)?);
    let mut tasks = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            file: path.display().to_string(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        tasks.push(record.to_task()?);
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> DatasetConfig {
        let mut cfg = DatasetConfig::desk("tiny", 6, true, 1, 99);
        cfg.train_size = 40;
        cfg.val_size = 10;
        cfg.test_id_size = 10;
        cfg.ood_suite_size = 6;
        cfg
    }

    #[test]
    fn generation_is_byte_identical_across_reruns() {
        let cfg = tiny_config();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate(&cfg, d1.path()).unwrap();
        generate(&cfg, d2.path()).unwrap();
        for entry in std::fs::read_dir(d1.path()).unwrap() {
            let name = entry.unwrap().file_name();
            let a = std::fs::read(d1.path().join(&name)).unwrap();
            let b = std::fs::read(d2.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name:?}");
        }
    }

    #[test]
    fn manifest_counts_match_files_and_roundtrip() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.files["train.jsonl"], 40);
        assert_eq!(manifest.files["ood_copy_check.jsonl"], 6);
        let loaded = load_manifest(dir.path()).unwrap();
        assert_eq!(loaded.files, manifest.files);
        let train = load_split(dir.path(), "train").unwrap();
        assert_eq!(train.len(), 40);
        // half the in-distribution tasks are copy tasks under include_copy
        let n_copy = train.iter().filter(|t| t.is_copy).count();
        assert_eq!(n_copy, 20);
        for t in load_split(dir.path(), "ood_copy_check").unwrap() {
            assert!(t.is_copy);
            assert_eq!(t.examples[0].0, t.query);
        }
    }

    #[test]
    fn ood_new_alpha_suites_avoid_pool_alphabets() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate(&cfg, dir.path()).unwrap();
        let pool: Vec<String> = manifest.pool.iter().map(|a| a.order_string()).collect();
        for t in load_split(dir.path(), "ood_novel_new_alpha").unwrap() {
            assert!(!pool.contains(&t.alphabet.order_string()));
        }
    }
}
