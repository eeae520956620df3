//! Labelled screening records and seeded stratified splits.
//!
//! Records arrive as JSON Lines (`id`, `title`, `abstract`, `label`, optional
//! `criteria`). Gold labels are normalized on ingest and must fall inside the
//! decision vocabulary of the contract the dataset is used with. Splits are a
//! pure function of (record order, sizes, seed): shuffling uses
//! Xoshiro256++ seeded directly with the split seed, and per-split class
//! allocation uses largest-remainder rounding against the global class
//! proportions.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::digest;

/// Errors raised while reading a record file.
#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read record file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("row {row}: unknown label '{value}' after normalization")]
    UnknownLabel { row: usize, value: String },
    #[error("row {row}: duplicate record id '{id}'")]
    DuplicateId { row: usize, id: String },
}

/// Errors raised while splitting a dataset.
#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("requested {requested} records but only {available} are available")]
    SizesExceedPopulation { requested: usize, available: usize },
    #[error("class '{class}' has too few records to satisfy the stratified allocation")]
    ClassTooSmall { class: String },
}

/// One labelled screening example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    #[serde(rename = "id")]
    pub record_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    /// Per-record criteria; empty means "use the contract's criteria".
    #[serde(default)]
    pub criteria: String,
    #[serde(rename = "label")]
    pub gold_label: String,
}

impl Record {
    /// The criteria text in effect for this record. The per-record value wins
    /// when present; otherwise the contract-level block is substituted.
    pub fn criteria_or<'a>(&'a self, fallback: &'a str) -> &'a str {
        if self.criteria.trim().is_empty() {
            fallback
        } else {
            &self.criteria
        }
    }
}

/// Requested split sizes, in records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Disjoint, fingerprinted train/validation/test splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplits {
    pub train: Vec<Record>,
    pub val: Vec<Record>,
    pub test: Vec<Record>,
    pub seed: i64,
    pub split_fingerprint: String,
}

/// Persisted description of a split: ids only, plus seed and fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: i64,
    pub split_fingerprint: String,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplits {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            split_fingerprint: self.split_fingerprint.clone(),
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }

    /// Select a split by name.
    pub fn by_name(&self, name: &str) -> Option<&[Record]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Normalize a label value: trim, lowercase, and fold the participle forms
/// `included`/`excluded` onto the bare decision tokens. Anything else passes
/// through trimmed and lowercased; absent values map to the empty string.
pub fn normalize_label(value: &str) -> String {
    let text = value.trim().to_lowercase();
    match text.as_str() {
        "include" | "included" => "include".to_string(),
        "exclude" | "excluded" => "exclude".to_string(),
        _ => text,
    }
}

/// Load records from a JSON Lines file, normalizing gold labels and
/// validating them against `allowed_labels` (the contract's decision tokens).
pub fn load_records(path: &Path, allowed_labels: &[String]) -> Result<Vec<Record>, IngestError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (index, line) in reader.lines().enumerate() {
        let row = index + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: Record =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedRow {
                row,
                message: e.to_string(),
            })?;
        record.gold_label = normalize_label(&record.gold_label);
        if !allowed_labels.contains(&record.gold_label) {
            return Err(IngestError::UnknownLabel {
                row,
                value: record.gold_label,
            });
        }
        if !seen.insert(record.record_id.clone()) {
            return Err(IngestError::DuplicateId {
                row,
                id: record.record_id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Write records as JSON Lines.
pub fn write_records(path: &Path, records: &[Record]) -> std::io::Result<()> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

/// Content digest of a record list, for provenance.
pub fn dataset_fingerprint(records: &[Record]) -> String {
    digest::canonical_digest(&records)
}

/// Seeded stratified split.
///
/// Deterministic for fixed (record order, sizes, seed); draws without
/// replacement; per-class counts in every split stay within one record of the
/// proportional allocation.
pub fn stratified_split(
    records: &[Record],
    sizes: SplitSizes,
    seed: i64,
) -> Result<DatasetSplits, SplitError> {
    if sizes.total() > records.len() {
        return Err(SplitError::SizesExceedPopulation {
            requested: sizes.total(),
            available: records.len(),
        });
    }

    // Group by class in first-appearance order of sorted class names, then
    // shuffle each class pool once.
    let mut pools: BTreeMap<String, Vec<&Record>> = BTreeMap::new();
    for record in records {
        pools.entry(record.gold_label.clone()).or_default().push(record);
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed as u64);
    for pool in pools.values_mut() {
        pool.shuffle(&mut rng);
    }

    let total = records.len();
    let mut cursors: BTreeMap<&str, usize> = pools.keys().map(|k| (k.as_str(), 0)).collect();
    let mut take_split = |size: usize| -> Result<Vec<Record>, SplitError> {
        let mut chosen = Vec::with_capacity(size);
        for (class, want) in allocate_largest_remainder(&pools, &cursors, total, size)? {
            let pool = &pools[class];
            let cursor = cursors.get_mut(class).expect("cursor per class");
            chosen.extend(pool[*cursor..*cursor + want].iter().map(|r| (*r).clone()));
            *cursor += want;
        }
        Ok(chosen)
    };

    let train = take_split(sizes.train)?;
    let val = take_split(sizes.val)?;
    let test = take_split(sizes.test)?;

    let split_fingerprint = digest::canonical_digest(&serde_json::json!({
        "seed": seed,
        "train": ids(&train),
        "val": ids(&val),
        "test": ids(&test),
    }));
    Ok(DatasetSplits {
        train,
        val,
        test,
        seed,
        split_fingerprint,
    })
}

/// Per-class seat counts for one split of `size` records, by largest-remainder
/// rounding of the global class proportions, capped by what each class pool
/// still holds. Seats a class cannot absorb flow to the class with the next
/// largest quota deficit; ties break on class-name order. Errors when the
/// capacity cap would push any class more than one record away from its
/// rounded quota.
fn allocate_largest_remainder<'a>(
    pools: &'a BTreeMap<String, Vec<&Record>>,
    cursors: &BTreeMap<&str, usize>,
    total: usize,
    size: usize,
) -> Result<Vec<(&'a str, usize)>, SplitError> {
    let mut alloc: Vec<(&str, usize)> = pools.keys().map(|k| (k.as_str(), 0)).collect();
    if size == 0 || total == 0 {
        return Ok(alloc);
    }
    let quota: Vec<f64> = pools
        .values()
        .map(|pool| pool.len() as f64 / total as f64 * size as f64)
        .collect();
    let remaining: Vec<usize> = pools
        .iter()
        .map(|(class, pool)| pool.len() - cursors[class.as_str()])
        .collect();

    let mut assigned = 0usize;
    for i in 0..alloc.len() {
        alloc[i].1 = (quota[i].floor() as usize).min(remaining[i]);
        assigned += alloc[i].1;
    }
    // Water-filling: each leftover seat goes to the eligible class with the
    // largest quota deficit. With no capacity caps in play this is exactly
    // largest-remainder rounding.
    for _ in assigned..size {
        let winner = (0..alloc.len())
            .filter(|&i| alloc[i].1 < remaining[i])
            .max_by(|&a, &b| {
                let deficit_a = quota[a] - alloc[a].1 as f64;
                let deficit_b = quota[b] - alloc[b].1 as f64;
                deficit_a
                    .partial_cmp(&deficit_b)
                    .expect("finite deficits")
                    .then(alloc[b].0.cmp(alloc[a].0))
            })
            .expect("population bound guarantees spare capacity");
        alloc[winner].1 += 1;
    }
    for i in 0..alloc.len() {
        if (alloc[i].1 as i64 - quota[i].round() as i64).abs() > 1 {
            return Err(SplitError::ClassTooSmall {
                class: alloc[i].0.to_string(),
            });
        }
    }
    Ok(alloc)
}

fn ids(records: &[Record]) -> Vec<String> {
    records.iter().map(|r| r.record_id.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn rec(id: &str, label: &str) -> Record {
        Record {
            record_id: id.to_string(),
            title: format!("title {id}"),
            abstract_text: format!("abstract {id}"),
            criteria: String::new(),
            gold_label: label.to_string(),
        }
    }

    fn ten_records() -> Vec<Record> {
        (0..6)
            .map(|i| rec(&format!("inc{i}"), "include"))
            .chain((0..4).map(|i| rec(&format!("exc{i}"), "exclude")))
            .collect()
    }

    fn allowed() -> Vec<String> {
        vec!["include".to_string(), "exclude".to_string()]
    }

    #[test]
    fn normalize_label_maps_participles_and_passes_through() {
        assert_eq!(normalize_label("Included "), "include");
        assert_eq!(normalize_label(""), "");
        assert_eq!(normalize_label("  EXCLUDED"), "exclude");
        assert_eq!(normalize_label("maybe"), "maybe");
        assert_eq!(normalize_label("include"), "include");
        assert_eq!(normalize_label(" Exclude"), "exclude");
    }

    #[test]
    fn load_records_reads_file_in_order() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for i in 0..12 {
            let label = if i % 2 == 0 { "Included" } else { "excluded" };
            writeln!(
                f,
                r#"{{"id":"r{i}","title":"t{i}","abstract":"a{i}","label":"{label}"}}"#
            )
            .unwrap();
        }
        let records = load_records(f.path(), &allowed()).unwrap();
        assert_eq!(records.len(), 12);
        assert_eq!(records[0].record_id, "r0");
        assert_eq!(records[0].gold_label, "include");
        assert_eq!(records[1].gold_label, "exclude");
        assert_eq!(records[0].criteria, "");
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(load_records(f.path(), &allowed()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"r1","title":"t","abstract":"a","label":"include"}}"#).unwrap();
        writeln!(f, r#"{{"id":"r1","title":"t","abstract":"a","label":"exclude"}}"#).unwrap();
        let err = load_records(f.path(), &allowed()).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateId { row: 2, .. }));
    }

    #[test]
    fn malformed_row_names_row_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"r1","title":"t","abstract":"a","label":"include"}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        let err = load_records(f.path(), &allowed()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedRow { row: 2, .. }));
    }

    #[test]
    fn unknown_label_names_value() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"r1","title":"t","abstract":"a","label":"Maybe"}}"#).unwrap();
        let err = load_records(f.path(), &allowed()).unwrap_err();
        match err {
            IngestError::UnknownLabel { row, value } => {
                assert_eq!(row, 1);
                assert_eq!(value, "maybe");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    // Brute-force stratification oracle: count class membership per split and
    // check |observed - expected| <= 1 for the proportional expectation.
    #[test]
    fn split_is_stratified_within_one_record() {
        let records = ten_records();
        let sizes = SplitSizes { train: 4, val: 2, test: 4 };
        let splits = stratified_split(&records, sizes, 42).unwrap();

        let count = |part: &[Record], label: &str| {
            part.iter().filter(|r| r.gold_label == label).count() as f64
        };
        for (part, size) in [(&splits.train, 4.0), (&splits.val, 2.0), (&splits.test, 4.0)] {
            for (label, global) in [("include", 0.6), ("exclude", 0.4)] {
                let observed = count(part, label);
                let expected = global * size;
                assert!(
                    (observed - expected).abs() <= 1.0,
                    "{label}: observed {observed}, expected {expected}"
                );
            }
        }
        assert!((count(&splits.train, "include") - 2.0).abs() <= 1.0);
        assert!((count(&splits.test, "include") - 2.0).abs() <= 1.0);

        // Disjointness and containment.
        let mut all = ids(&splits.train);
        all.extend(ids(&splits.val));
        all.extend(ids(&splits.test));
        let unique: std::collections::BTreeSet<&String> = all.iter().collect();
        assert_eq!(unique.len(), all.len());
        let input: std::collections::BTreeSet<String> =
            records.iter().map(|r| r.record_id.clone()).collect();
        assert!(all.iter().all(|id| input.contains(id)));
    }

    #[test]
    fn zero_sizes_give_empty_splits() {
        let splits =
            stratified_split(&ten_records(), SplitSizes { train: 0, val: 0, test: 0 }, 7).unwrap();
        assert!(splits.train.is_empty() && splits.val.is_empty() && splits.test.is_empty());
    }

    #[test]
    fn identical_inputs_give_identical_fingerprints() {
        let records = ten_records();
        let sizes = SplitSizes { train: 4, val: 2, test: 4 };
        let a = stratified_split(&records, sizes, 42).unwrap();
        let b = stratified_split(&records, sizes, 42).unwrap();
        assert_eq!(a.split_fingerprint, b.split_fingerprint);
        assert_eq!(a, b);
        let c = stratified_split(&records, sizes, 43).unwrap();
        assert_ne!(a.split_fingerprint, c.split_fingerprint);
    }

    #[test]
    fn oversized_request_rejected() {
        let err = stratified_split(
            &ten_records(),
            SplitSizes { train: 8, val: 2, test: 4 },
            1,
        )
        .unwrap_err();
        assert!(matches!(err, SplitError::SizesExceedPopulation { requested: 14, available: 10 }));
    }

    #[test]
    fn split_manifest_round_trips() {
        let splits =
            stratified_split(&ten_records(), SplitSizes { train: 4, val: 2, test: 4 }, 10).unwrap();
        let manifest = splits.manifest();
        let text = serde_json::to_string(&manifest).unwrap();
        let back: SplitManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(back.train.len(), 4);
    }

    #[test]
    fn criteria_fallback_prefers_record_value() {
        let mut r = rec("r1", "include");
        assert_eq!(r.criteria_or("contract criteria"), "contract criteria");
        r.criteria = "record criteria".to_string();
        assert_eq!(r.criteria_or("contract criteria"), "record criteria");
    }

    proptest::proptest! {
        #[test]
        fn split_invariants_hold_for_arbitrary_populations(
            includes in 0usize..25,
            excludes in 0usize..25,
            train in 0usize..12,
            val in 0usize..12,
            test in 0usize..12,
            seed in proptest::prelude::any::<i64>(),
        ) {
            use proptest::prelude::*;
            let records: Vec<Record> = (0..includes)
                .map(|i| rec(&format!("inc{i}"), "include"))
                .chain((0..excludes).map(|i| rec(&format!("exc{i}"), "exclude")))
                .collect();
            let sizes = SplitSizes { train, val, test };
            prop_assume!(sizes.total() <= records.len());

            match stratified_split(&records, sizes, seed) {
                Ok(splits) => {
                    prop_assert_eq!(splits.train.len(), train);
                    prop_assert_eq!(splits.val.len(), val);
                    prop_assert_eq!(splits.test.len(), test);

                    // Disjointness and containment.
                    let mut all = ids(&splits.train);
                    all.extend(ids(&splits.val));
                    all.extend(ids(&splits.test));
                    let unique: std::collections::BTreeSet<&String> = all.iter().collect();
                    prop_assert_eq!(unique.len(), all.len());
                    let input: std::collections::BTreeSet<String> =
                        records.iter().map(|r| r.record_id.clone()).collect();
                    prop_assert!(all.iter().all(|id| input.contains(id)));

                    // Stratification within one record of the proportional quota.
                    let total = records.len() as f64;
                    for (part, size) in
                        [(&splits.train, train), (&splits.val, val), (&splits.test, test)]
                    {
                        for (label, count) in [("include", includes), ("exclude", excludes)] {
                            let observed =
                                part.iter().filter(|r| r.gold_label == label).count() as f64;
                            let quota = count as f64 / total * size as f64;
                            prop_assert!(
                                (observed - quota.round()).abs() <= 1.0,
                                "{label}: observed {observed}, quota {quota}"
                            );
                        }
                    }

                    // Pure function of (records, sizes, seed).
                    let again = stratified_split(&records, sizes, seed).unwrap();
                    prop_assert_eq!(splits, again);
                }
                // The capacity guard may fire on extreme imbalances; any
                // other error would violate the checked preconditions.
                Err(SplitError::ClassTooSmall { .. }) => {}
                Err(other) => prop_assert!(false, "unexpected error {other:?}"),
            }
        }

        #[test]
        fn normalize_label_is_idempotent(value in "\\PC{0,24}") {
            let once = normalize_label(&value);
            proptest::prop_assert_eq!(normalize_label(&once), once.clone());
        }
    }
}
