//! JSONL ingestion helpers and deterministic fold splitting.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;

use super::TaskError;
use crate::seeds;

/// Parse one JSON document per line, reporting the 1-based line number on
/// failure. Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, TaskError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| TaskError::Io { path: path.display().to_string(), source })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: T = serde_json::from_str(line).map_err(|e| TaskError::Schema {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Serialize items one JSON document per line.
pub fn write_jsonl<T: serde::Serialize>(
    path: impl AsRef<Path>,
    items: &[T],
) -> Result<(), TaskError> {
    let path = path.as_ref();
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("items serialize"));
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|source| TaskError::Io { path: path.display().to_string(), source })
}

/// Index sets of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic unstratified k-fold split: instances are shuffled once by
/// the derived seed, chunked into `folds` test sets whose sizes differ by
/// at most one, and 10% of each remaining train set becomes dev.
pub fn k_fold_splits(n: usize, folds: usize, seed: u64) -> Vec<FoldSplit> {
    assert!(folds >= 1, "at least one fold");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed, "folds"));

    let base = n / folds;
    let extra = n % folds;
    let mut splits = Vec::with_capacity(folds);
    let mut start = 0;
    for fold in 0..folds {
        let size = base + usize::from(fold < extra);
        let test: Vec<usize> = order[start..start + size].to_vec();
        let rest: Vec<usize> = order[..start]
            .iter()
            .chain(&order[start + size..])
            .copied()
            .collect();
        let dev_len = rest.len() / 10;
        let dev = rest[..dev_len].to_vec();
        let train = rest[dev_len..].to_vec();
        splits.push(FoldSplit { train, dev, test });
        start += size;
    }
    splits
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_sizes_differ_by_at_most_one() {
        let splits = k_fold_splits(23, 5, 7);
        let sizes: Vec<usize> = splits.iter().map(|s| s.test.len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn folds_partition_the_instances() {
        let splits = k_fold_splits(17, 5, 7);
        let mut seen: Vec<usize> = splits.iter().flat_map(|s| s.test.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..17).collect::<Vec<_>>());
        for s in &splits {
            let mut all: Vec<usize> =
                s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..17).collect::<Vec<_>>());
        }
    }

    #[test]
    fn splits_are_seed_deterministic() {
        assert_eq!(k_fold_splits(20, 5, 7), k_fold_splits(20, 5, 7));
        assert_ne!(k_fold_splits(20, 5, 7), k_fold_splits(20, 5, 8));
    }

    #[test]
    fn jsonl_errors_cite_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"x\": 1}\nnot json\n").unwrap();
        let err = read_jsonl::<serde_json::Value>(&path).unwrap_err();
        match err {
            TaskError::Schema { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn jsonl_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let items = vec![serde_json::json!({"a": 1}), serde_json::json!({"b": [1, 2]})];
        write_jsonl(&path, &items).unwrap();
        let back: Vec<serde_json::Value> = read_jsonl(&path).unwrap();
        assert_eq!(items, back);
    }
}
