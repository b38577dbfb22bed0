//! Cross-lingual preference dataset construction, splitting, batching,
//! and persistence.
//!
//! Every quadruple expands into two preference pairs with opposite roles:
//! the prompt's own-language response is chosen, the translation rejected.
//! Batching keeps both directions of a quadruple in the same batch — the
//! per-item loss couples them, so they cannot be shuffled independently.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthlang::{translate, LanguageTag, Vocabulary};
use crate::util::sha256_hex;

/// One aligned quadruple: a source-language prompt/response pair plus its
/// exact translation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossLingualExample {
    pub id: u64,
    pub x_en: Vec<u32>,
    pub y_en: Vec<u32>,
    pub x_tgt: Vec<u32>,
    pub y_tgt: Vec<u32>,
}

/// A (prompt, chosen, rejected) triple tagged with the prompt's language.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pub prompt: Vec<u32>,
    pub chosen: Vec<u32>,
    pub rejected: Vec<u32>,
    pub prompt_lang: LanguageTag,
    pub source_id: u64,
}

/// Both direction pairs of one quadruple; the unit a batch is made of.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedDirections {
    pub source_id: u64,
    pub en: PreferencePair,
    pub tgt: PreferencePair,
}

/// A training batch of paired records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<PairedDirections>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// All pairs of the batch, both directions, in item order.
    pub fn pairs(&self) -> impl Iterator<Item = &PreferencePair> {
        self.items.iter().flat_map(|it| [&it.en, &it.tgt])
    }
}

/// Train/validation partition of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplits {
    pub train: Vec<CrossLingualExample>,
    pub validation: Vec<CrossLingualExample>,
    pub split_seed: u64,
}

impl DatasetSplits {
    /// All examples, train followed by validation.
    pub fn all(&self) -> impl Iterator<Item = &CrossLingualExample> {
        self.train.iter().chain(self.validation.iter())
    }

    pub fn total_len(&self) -> usize {
        self.train.len() + self.validation.len()
    }
}

/// Expands a quadruple into its two direction pairs, after verifying the
/// translation alignment it claims.
pub fn make_preference_pairs(
    ex: &CrossLingualExample,
    vocab: &Vocabulary,
) -> Result<(PreferencePair, PreferencePair)> {
    let x_check = translate(&ex.x_en, LanguageTag::LangA, vocab)
        .map_err(|e| Error::Integrity(format!("example {}: bad x_en: {e}", ex.id)))?;
    let y_check = translate(&ex.y_en, LanguageTag::LangA, vocab)
        .map_err(|e| Error::Integrity(format!("example {}: bad y_en: {e}", ex.id)))?;
    if x_check != ex.x_tgt || y_check != ex.y_tgt {
        return Err(Error::Integrity(format!(
            "example {}: target side is not the translation of the source side",
            ex.id
        )));
    }
    let en = PreferencePair {
        prompt: ex.x_en.clone(),
        chosen: ex.y_en.clone(),
        rejected: ex.y_tgt.clone(),
        prompt_lang: LanguageTag::LangA,
        source_id: ex.id,
    };
    let tgt = PreferencePair {
        prompt: ex.x_tgt.clone(),
        chosen: ex.y_tgt.clone(),
        rejected: ex.y_en.clone(),
        prompt_lang: LanguageTag::LangB,
        source_id: ex.id,
    };
    Ok((en, tgt))
}

/// Splits a corpus into train/validation with a seeded shuffle. The
/// validation size is `n * val_fraction` rounded to nearest, forced to at
/// least one example whenever a positive fraction was requested.
pub fn build_splits(
    examples: Vec<CrossLingualExample>,
    val_fraction: f64,
    seed: u64,
) -> Result<DatasetSplits> {
    if examples.is_empty() {
        return Err(Error::Config("cannot split an empty corpus".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!(
            "val_fraction must lie in [0, 1), got {val_fraction}"
        )));
    }
    let n = examples.len();
    let mut shuffled = examples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let mut val_n = (n as f64 * val_fraction).round() as usize;
    if val_fraction > 0.0 {
        val_n = val_n.max(1);
    }
    let train = shuffled.split_off(val_n.min(n));
    Ok(DatasetSplits {
        train,
        validation: shuffled,
        split_seed: seed,
    })
}

/// Chunks a split into batches of at most `batch_size` quadruples, each
/// expanded to both direction pairs. Order is shuffled by `seed`; the final
/// partial batch is kept.
pub fn make_batches(
    split: &[CrossLingualExample],
    batch_size: usize,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<Vec<Batch>> {
    if batch_size < 1 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..split.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let mut items = Vec::with_capacity(chunk.len());
        for &idx in chunk {
            let ex = &split[idx];
            let (en, tgt) = make_preference_pairs(ex, vocab)?;
            items.push(PairedDirections {
                source_id: ex.id,
                en,
                tgt,
            });
        }
        batches.push(Batch { items });
    }
    Ok(batches)
}

/// Checks that every source id contributes exactly one item (both
/// directions) to exactly one batch of the epoch.
pub fn check_pairing(batches: &[Batch], split: &[CrossLingualExample]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (bi, batch) in batches.iter().enumerate() {
        for item in &batch.items {
            if item.en.source_id != item.source_id || item.tgt.source_id != item.source_id {
                return Err(Error::Pairing(format!(
                    "batch {bi}: item directions disagree on source id"
                )));
            }
            if item.en.prompt_lang != LanguageTag::LangA
                || item.tgt.prompt_lang != LanguageTag::LangB
            {
                return Err(Error::Pairing(format!(
                    "batch {bi}: item {} has mislabeled directions",
                    item.source_id
                )));
            }
            if !seen.insert(item.source_id) {
                return Err(Error::Pairing(format!(
                    "source id {} appears in more than one batch",
                    item.source_id
                )));
            }
        }
    }
    for ex in split {
        if !seen.contains(&ex.id) {
            return Err(Error::Pairing(format!(
                "source id {} missing from the epoch",
                ex.id
            )));
        }
    }
    Ok(())
}

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    schema_version: u32,
    vocab: Vocabulary,
    count: usize,
    checksum: String,
    train_count: usize,
    val_count: usize,
    split_seed: u64,
}

/// Writes splits as JSON Lines: a header object, then one record per line,
/// train records first. The header checksum is the SHA-256 of the record
/// lines (including newlines), so truncation and corruption are detectable.
pub fn save_dataset(path: &Path, splits: &DatasetSplits, vocab: &Vocabulary) -> Result<()> {
    let mut body = String::new();
    for ex in splits.all() {
        body.push_str(&serde_json::to_string(ex)?);
        body.push('\n');
    }
    let header = DatasetHeader {
        schema_version: DATASET_SCHEMA_VERSION,
        vocab: vocab.clone(),
        count: splits.total_len(),
        checksum: sha256_hex(body.as_bytes()),
        train_count: splits.train.len(),
        val_count: splits.validation.len(),
        split_seed: splits.split_seed,
    };
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{}", serde_json::to_string(&header)?)?;
    file.write_all(body.as_bytes())?;
    Ok(())
}

/// Reads a dataset file back, verifying schema version, record count, and
/// checksum before returning anything.
pub fn load_dataset(path: &Path) -> Result<(DatasetSplits, Vocabulary)> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Integrity("dataset file is empty".into()))??;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Integrity(format!("malformed header: {e}")))?;
    if header.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: header.schema_version,
            expected: DATASET_SCHEMA_VERSION,
        });
    }
    if header.train_count + header.val_count != header.count {
        return Err(Error::Integrity(
            "header counts are inconsistent".into(),
        ));
    }
    let mut body = String::new();
    let mut records = Vec::with_capacity(header.count);
    for line in lines {
        let line = line?;
        body.push_str(&line);
        body.push('\n');
        records.push(
            serde_json::from_str::<CrossLingualExample>(&line)
                .map_err(|e| Error::Integrity(format!("malformed record: {e}")))?,
        );
    }
    if records.len() != header.count {
        return Err(Error::Integrity(format!(
            "truncated dataset: expected {} records, found {}",
            header.count,
            records.len()
        )));
    }
    let checksum = sha256_hex(body.as_bytes());
    if checksum != header.checksum {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let validation = records.split_off(header.train_count);
    Ok((
        DatasetSplits {
            train: records,
            validation,
            split_seed: header.split_seed,
        },
        header.vocab,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlang::{build_vocabulary, detect_language, gen_corpus, TaskMix};

    fn setup(n: usize) -> (Vocabulary, Vec<CrossLingualExample>) {
        let vocab = build_vocabulary(16, 0.5).unwrap();
        let corpus = gen_corpus(n, 5, &TaskMix::default(), (2, 4), &vocab).unwrap();
        (vocab, corpus)
    }

    #[test]
    fn pairs_have_opposite_roles() {
        let (vocab, corpus) = setup(8);
        let ex = &corpus[7];
        let (en, tgt) = make_preference_pairs(ex, &vocab).unwrap();
        assert_eq!(en.source_id, 7);
        assert_eq!(tgt.source_id, 7);
        assert_eq!(en.chosen, tgt.rejected);
        assert_eq!(en.rejected, tgt.chosen);
        assert_eq!(
            detect_language(&tgt.chosen, &vocab).unwrap(),
            (LanguageTag::LangB, 1.0)
        );
    }

    #[test]
    fn pairs_reject_misaligned_quadruple() {
        let (vocab, corpus) = setup(1);
        let mut ex = corpus[0].clone();
        ex.y_tgt[0] = ex.y_tgt[0].wrapping_add(1);
        let err = make_preference_pairs(&ex, &vocab).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "got {err:?}");
    }

    #[test]
    fn splits_have_requested_sizes() {
        let (_, corpus) = setup(100);
        let s = build_splits(corpus, 0.1, 3).unwrap();
        assert_eq!(s.validation.len(), 10);
        assert_eq!(s.train.len(), 90);
    }

    #[test]
    fn zero_fraction_gives_empty_validation() {
        let (_, corpus) = setup(10);
        let s = build_splits(corpus, 0.0, 3).unwrap();
        assert!(s.validation.is_empty());
        assert_eq!(s.train.len(), 10);
    }

    #[test]
    fn small_positive_fraction_still_yields_validation() {
        let (_, corpus) = setup(3);
        let s = build_splits(corpus, 0.05, 3).unwrap();
        assert_eq!(s.validation.len(), 1);
    }

    #[test]
    fn splits_are_deterministic_and_partition_input() {
        let (_, corpus) = setup(20);
        let a = build_splits(corpus.clone(), 0.25, 9).unwrap();
        let b = build_splits(corpus.clone(), 0.25, 9).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<u64> = a.all().map(|e| e.id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..20).collect::<Vec<u64>>());
    }

    #[test]
    fn splitting_empty_corpus_fails() {
        assert!(build_splits(Vec::new(), 0.1, 0).is_err());
    }

    #[test]
    fn batches_cover_epoch_with_partial_tail() {
        let (vocab, corpus) = setup(10);
        let batches = make_batches(&corpus, 4, 1, &vocab).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Batch::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        check_pairing(&batches, &corpus).unwrap();
    }

    #[test]
    fn every_batch_item_carries_both_directions() {
        let (vocab, corpus) = setup(9);
        for batch in make_batches(&corpus, 8, 2, &vocab).unwrap() {
            for item in &batch.items {
                assert_eq!(item.en.prompt_lang, LanguageTag::LangA);
                assert_eq!(item.tgt.prompt_lang, LanguageTag::LangB);
                assert_eq!(item.en.source_id, item.tgt.source_id);
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let (vocab, corpus) = setup(12);
        let splits = build_splits(corpus, 0.25, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save_dataset(&path, &splits, &vocab).unwrap();
        let (loaded, loaded_vocab) = load_dataset(&path).unwrap();
        assert_eq!(loaded, splits);
        assert_eq!(loaded_vocab, vocab);
    }

    #[test]
    fn load_rejects_unknown_schema_version() {
        let (vocab, corpus) = setup(2);
        let splits = build_splits(corpus, 0.0, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save_dataset(&path, &splits, &vocab).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":9", 1);
        std::fs::write(&path, bumped).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::SchemaVersion { found: 9, expected: 1 })
        ));
    }

    #[test]
    fn load_rejects_truncated_file() {
        let (vocab, corpus) = setup(5);
        let splits = build_splits(corpus, 0.0, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save_dataset(&path, &splits, &vocab).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: Vec<&str> = text.lines().take(4).collect();
        std::fs::write(&path, truncated.join("\n") + "\n").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "got {err:?}");
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn splits_partition_the_corpus(n in 1usize..60, frac in 0.0f64..0.9, seed in 0u64..1000) {
                let (_, corpus) = setup(n);
                let splits = build_splits(corpus, frac, seed).unwrap();
                prop_assert_eq!(splits.total_len(), n);
                if frac > 0.0 {
                    prop_assert!(!splits.validation.is_empty());
                }
                let mut ids: Vec<u64> = splits.all().map(|e| e.id).collect();
                ids.sort_unstable();
                ids.dedup();
                prop_assert_eq!(ids.len(), n);
            }
        }
    }

    #[test]
    fn load_rejects_corrupted_record() {
        let (vocab, corpus) = setup(3);
        let splits = build_splits(corpus, 0.0, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save_dataset(&path, &splits, &vocab).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Flip a token id inside a record without changing line count.
        let corrupted = text.replacen("\"x_en\":[", "\"x_en\":[1,", 1);
        std::fs::write(&path, corrupted).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "got {err:?}");
    }
}
