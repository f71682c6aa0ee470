//! Dataset records, cleaning filters, vocabularies and id encoding.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, validation, Error, Result};
use crate::recipe::{Recipe, Slot};
use crate::stopwords::STOPWORDS;

/// One corpus record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Record", into = "Record")]
pub struct Example {
    pub id: String,
    pub title: String,
    pub description: Option<String>,
    pub recipe: Recipe,
    /// Per-annotator recipes; test sets only.
    pub annotations: Option<Vec<Recipe>>,
}

/// On-disk layout of one dataset line.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    title: String,
    #[serde(default)]
    description: Option<String>,
    trigger_channel: String,
    trigger_function: String,
    action_channel: String,
    action_function: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<Vec<Recipe>>,
}

impl TryFrom<Record> for Example {
    type Error = String;

    fn try_from(r: Record) -> Result<Self, Self::Error> {
        if r.title.trim().is_empty() {
            return Err("title is empty".into());
        }
        let recipe = Recipe::new(
            &r.trigger_channel,
            &r.trigger_function,
            &r.action_channel,
            &r.action_function,
        )
        .map_err(|e| format!("recipe: {e}"))?;
        Ok(Example {
            id: r.id,
            title: r.title,
            description: r.description,
            recipe,
            annotations: r.annotations,
        })
    }
}

impl From<Example> for Record {
    fn from(e: Example) -> Self {
        Record {
            id: e.id,
            title: e.title,
            description: e.description,
            trigger_channel: e.recipe.trigger_channel().to_string(),
            trigger_function: e.recipe.trigger_function().to_string(),
            action_channel: e.recipe.action_channel().to_string(),
            action_function: e.recipe.action_function().to_string(),
            annotations: e.annotations,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// First malformed line is an error.
    #[default]
    Strict,
    /// Malformed lines are skipped and recorded.
    Lenient,
}

#[derive(Clone, Debug, Default)]
pub struct LoadedDataset {
    pub examples: Vec<Example>,
    /// `(1-based line number, reason)` for each skipped line.
    pub skipped: Vec<(usize, String)>,
}

/// Reads a line-delimited JSON dataset. Blank lines are ignored.
pub fn load_dataset(path: &Path, mode: LoadMode) -> Result<LoadedDataset> {
    let file = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    let mut out = LoadedDataset::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(format!("reading {}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Example>(&line) {
            Ok(e) => out.examples.push(e),
            Err(e) if mode == LoadMode::Lenient => out.skipped.push((i + 1, e.to_string())),
            Err(e) => {
                return Err(Error::MalformedRecord {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<()> {
    let mut buf = Vec::new();
    for e in examples {
        serde_json::to_writer(&mut buf, e).expect("records serialize");
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(io_err(format!("writing {}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanFilters {
    /// Titles with fewer whitespace-separated words are dropped; 0 disables.
    pub min_title_words: usize,
    pub english_only: bool,
    /// Minimum number of annotators whose full recipe equals the gold recipe.
    pub min_agreement: Option<usize>,
}

impl Default for CleanFilters {
    fn default() -> Self {
        Self {
            min_title_words: 3,
            english_only: false,
            min_agreement: None,
        }
    }
}

/// Removal counts per filter. Each example is charged to the first filter it fails.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CleanReport {
    pub original: usize,
    pub kept: usize,
    pub short_title: usize,
    pub non_english: usize,
    pub missing_annotations: usize,
    pub low_agreement: usize,
}

impl CleanReport {
    pub fn removed(&self) -> usize {
        self.short_title + self.non_english + self.missing_annotations + self.low_agreement
    }

    pub fn percent_removed(&self) -> f64 {
        if self.original == 0 {
            0.0
        } else {
            100.0 * self.removed() as f64 / self.original as f64
        }
    }

    /// Table-2 style summary: original, removed, percent removed, final.
    pub fn to_json(&self) -> serde_json::Value {
        let pct = |n: usize| {
            if self.original == 0 {
                0.0
            } else {
                100.0 * n as f64 / self.original as f64
            }
        };
        serde_json::json!({
            "original": self.original,
            "removed": self.removed(),
            "percent_removed": self.percent_removed(),
            "final": self.kept,
            "by_filter": {
                "short_title": {"removed": self.short_title, "percent": pct(self.short_title)},
                "non_english": {"removed": self.non_english, "percent": pct(self.non_english)},
                "missing_annotations": {"removed": self.missing_annotations, "percent": pct(self.missing_annotations)},
                "low_agreement": {"removed": self.low_agreement, "percent": pct(self.low_agreement)},
            }
        })
    }
}

/// Approximate English check: at least 90% of non-space title characters are
/// ASCII and at least one word is a common English function word.
pub fn looks_english(title: &str) -> bool {
    let chars: Vec<char> = title.chars().filter(|c| !c.is_whitespace()).collect();
    if chars.is_empty() {
        return false;
    }
    let ascii = chars.iter().filter(|c| c.is_ascii()).count();
    if (ascii as f64) < 0.9 * chars.len() as f64 {
        return false;
    }
    title.split_whitespace().any(|w| {
        let w = w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase();
        STOPWORDS.contains(&w.as_str())
    })
}

/// Number of annotators whose complete recipe equals the gold one.
pub fn agreeing_annotators(e: &Example) -> Option<usize> {
    e.annotations
        .as_ref()
        .map(|a| a.iter().filter(|r| **r == e.recipe).count())
}

pub fn clean_examples(examples: Vec<Example>, filters: &CleanFilters) -> (Vec<Example>, CleanReport) {
    let mut report = CleanReport {
        original: examples.len(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(examples.len());
    for e in examples {
        if e.title.split_whitespace().count() < filters.min_title_words {
            report.short_title += 1;
        } else if filters.english_only && !looks_english(&e.title) {
            report.non_english += 1;
        } else if let Some(min) = filters.min_agreement {
            match agreeing_annotators(&e) {
                None => report.missing_annotations += 1,
                Some(n) if n < min => report.low_agreement += 1,
                Some(_) => kept.push(e),
            }
        } else {
            kept.push(e);
        }
    }
    report.kept = kept.len();
    (kept, report)
}

/// Lowercased title, optionally followed by ` [SEP] ` and the lowercased description.
pub fn build_source_text(e: &Example, use_description: bool) -> String {
    let title = e.title.to_lowercase();
    match (&e.description, use_description) {
        (Some(d), true) if !d.trim().is_empty() => format!("{title} {SEP_TOKEN} {}", d.to_lowercase()),
        _ => title,
    }
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const SEP: usize = 4;
pub const SEP_TOKEN: &str = "[SEP]";
pub const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<s>", "</s>", SEP_TOKEN];

/// Token/id map; ids 0..5 are the reserved specials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Counts whitespace tokens of `texts`; keeps the `max_size` most frequent
    /// (ties by first occurrence). Ids follow that order after the specials.
    pub fn build<S: AsRef<str>>(texts: &[S], max_size: Option<usize>) -> Result<Self> {
        if max_size == Some(0) {
            return validation("vocabulary max_size must be at least 1");
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for text in texts {
            for tok in text.as_ref().split_whitespace() {
                if SPECIALS.contains(&tok) {
                    continue;
                }
                let entry = counts.entry(tok).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
        let mut ranked: Vec<(&str, usize, usize)> =
            counts.into_iter().map(|(t, (c, first))| (t, c, first)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        if let Some(cap) = max_size {
            ranked.truncate(cap);
        }
        Self::from_tokens(
            SPECIALS
                .iter()
                .copied()
                .chain(ranked.into_iter().map(|(t, _, _)| t))
                .map(str::to_string)
                .collect(),
        )
    }

    /// Vocabulary from an explicit id-ordered token list (specials first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return validation("vocabulary must start with the reserved specials");
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return validation(format!("duplicate vocabulary token `{t}`"));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Keeps the specials plus the first `cap` ordinary tokens.
    pub fn truncated(&self, cap: usize) -> Self {
        let keep = (SPECIALS.len() + cap).min(self.tokens.len());
        Self::from_tokens(self.tokens[..keep].to_vec()).expect("prefix of a valid vocabulary")
    }

    /// Hex SHA-256 over the id-ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// One token per line, in id order.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(io_err(format!("creating {}", path.display())))?;
        for t in &self.tokens {
            writeln!(f, "{t}").map_err(io_err(format!("writing {}", path.display())))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// Target-side vocabulary: every serialized recipe token, uncapped.
pub fn build_target_vocabulary(examples: &[Example]) -> Result<Vocabulary> {
    let texts: Vec<String> = examples.iter().map(|e| e.recipe.serialize().to_string()).collect();
    Vocabulary::build(&texts, None)
}

/// Whitespace tokens mapped through `vocab`, head kept, right-padded to `max_len`.
pub fn encode_source(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = text
        .split_whitespace()
        .take(max_len)
        .map(|t| vocab.id(t))
        .collect();
    ids.resize(max_len, PAD);
    ids
}

pub const TARGET_LEN: usize = 6;

/// `BOS t0 t1 t2 t3 EOS`.
pub fn encode_target(recipe: &Recipe, vocab: &Vocabulary) -> [usize; TARGET_LEN] {
    let mut out = [BOS, 0, 0, 0, 0, EOS];
    for slot in Slot::ALL {
        out[slot.index() + 1] = vocab.id(&recipe.slot_token(slot));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub source_ids: Vec<usize>,
    pub target_ids: [usize; TARGET_LEN],
    /// Gold recipe the target ids were encoded from.
    pub recipe: Recipe,
}

pub fn encode_pair(
    e: &Example,
    source_vocab: &Vocabulary,
    target_vocab: &Vocabulary,
    max_len: usize,
    use_description: bool,
) -> EncodedPair {
    EncodedPair {
        source_ids: encode_source(&build_source_text(e, use_description), source_vocab, max_len),
        target_ids: encode_target(&e.recipe, target_vocab),
        recipe: e.recipe.clone(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitSize {
    Count(usize),
    Fraction(f64),
}

/// Seeded random hold-out. Both parts keep the input's relative order.
pub fn split_validation<E: Clone>(examples: &[E], size: SplitSize, seed: u64) -> Result<(Vec<E>, Vec<E>)> {
    let n = examples.len();
    let count = match size {
        SplitSize::Count(c) => c,
        SplitSize::Fraction(f) if (0.0..1.0).contains(&f) => (f * n as f64).round() as usize,
        SplitSize::Fraction(f) => return validation(format!("validation fraction {f} outside [0, 1)")),
    };
    if count >= n {
        return validation(format!(
            "validation size {count} must be smaller than the {n} available examples"
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held = vec![false; n];
    for &i in &order[..count] {
        held[i] = true;
    }
    let (mut train, mut valid) = (Vec::with_capacity(n - count), Vec::with_capacity(count));
    for (e, h) in examples.iter().zip(held) {
        if h {
            valid.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    Ok((train, valid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ex(id: &str, title: &str) -> Example {
        Example {
            id: id.into(),
            title: title.into(),
            description: None,
            recipe: Recipe::new("a", "b", "c", "d").unwrap(),
            annotations: None,
        }
    }

    #[test]
    fn title_length_filter() {
        let (kept, report) = clean_examples(
            vec![ex("1", "post tweet"), ex("2", "post my tweet now")],
            &CleanFilters::default(),
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "2");
        assert_eq!(report.short_title, 1);
        assert_eq!(report.kept + report.removed(), report.original);
    }

    #[test]
    fn agreement_filter_counts_matching_annotators() {
        let gold = Recipe::new("a", "b", "c", "d").unwrap();
        let other = Recipe::new("a", "b", "c", "x").unwrap();
        let mut e = ex("1", "save my photos to dropbox");
        e.annotations = Some(vec![gold.clone(), other.clone(), gold.clone(), other, gold]);
        let filters = CleanFilters {
            min_agreement: Some(3),
            ..Default::default()
        };
        let (kept, _) = clean_examples(vec![e.clone()], &filters);
        assert_eq!(kept.len(), 1);
        let strict = CleanFilters {
            min_agreement: Some(4),
            ..Default::default()
        };
        let (kept, report) = clean_examples(vec![e, ex("2", "no annotations here")], &strict);
        assert!(kept.is_empty());
        assert_eq!(report.low_agreement, 1);
        assert_eq!(report.missing_annotations, 1);
    }

    #[test]
    fn english_heuristic() {
        assert!(looks_english("post new instagram photos to twitter"));
        assert!(!looks_english("neue fotos bei twitter posten"));
        assert!(!looks_english("ツイートを保存する to"));
    }

    #[test]
    fn source_text() {
        let mut e = ex("1", "Tweet NY Times");
        assert_eq!(build_source_text(&e, false), "tweet ny times");
        assert_eq!(build_source_text(&e, true), "tweet ny times");
        e.title = "t1".into();
        e.description = Some("d1".into());
        assert_eq!(build_source_text(&e, true), "t1 [SEP] d1");
        assert_eq!(build_source_text(&e, false), "t1");
    }

    #[test]
    fn vocabulary_examples() {
        let v = Vocabulary::build(&["a b", "a c"], None).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(&v.tokens()[5..], ["a", "b", "c"]);
        let v = Vocabulary::build(&["a b", "a c"], Some(1)).unwrap();
        assert_eq!(&v.tokens()[5..], ["a"]);
        let v = Vocabulary::build(&["b a", "a b"], Some(1)).unwrap();
        assert_eq!(&v.tokens()[5..], ["b"]);
        assert!(Vocabulary::build(&["a"], Some(0)).is_err());
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.id(SEP_TOKEN), SEP);
    }

    #[test]
    fn capped_vocabulary_is_prefix_of_uncapped() {
        let texts = ["x y z x", "z z w", "q x"];
        let full = Vocabulary::build(&texts, None).unwrap();
        for cap in 1..5 {
            assert_eq!(full.truncated(cap), Vocabulary::build(&texts, Some(cap)).unwrap());
        }
    }

    #[test]
    fn encoding_examples() {
        let v = Vocabulary::build(&["a b"], None).unwrap();
        assert_eq!(encode_source("", &v, 4), vec![PAD; 4]);
        assert_eq!(encode_source("zzz a", &v, 3), vec![UNK, v.id("a"), PAD]);
        let long: Vec<String> = (0..30).map(|i| if i % 2 == 0 { "a" } else { "b" }.to_string()).collect();
        let ids = encode_source(&long.join(" "), &v, 25);
        assert_eq!(ids.len(), 25);
        assert!(!ids.contains(&PAD));
        assert_eq!(ids[24], v.id("a"));
    }

    #[test]
    fn target_encoding() {
        let r = Recipe::new("a", "b", "c", "d").unwrap();
        let v = build_target_vocabulary(&[ex("1", "x y z")]).unwrap();
        let t = encode_target(&r, &v);
        assert_eq!(t[0], BOS);
        assert_eq!(t[5], EOS);
        assert_eq!(v.token(t[2]), Some("a.b"));
    }

    #[test]
    fn split_examples() {
        let items: Vec<usize> = (0..10).collect();
        let (t, v) = split_validation(&items, SplitSize::Count(3), 7).unwrap();
        assert_eq!((t.len(), v.len()), (7, 3));
        assert!(v.iter().all(|x| !t.contains(x)));
        assert_eq!(split_validation(&items, SplitSize::Count(3), 7).unwrap(), (t, v));
        assert!(split_validation(&items, SplitSize::Count(10), 7).is_err());
        let big: Vec<usize> = (0..17_264).collect();
        let (t, v) = split_validation(&big, SplitSize::Count(3_896), 1).unwrap();
        assert_eq!((t.len(), v.len()), (13_368, 3_896));
    }

    #[test]
    fn lenient_loading_skips_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let good = r#"{"id":"1","title":"post a tweet now","description":null,"trigger_channel":"a","trigger_function":"b","action_channel":"c","action_function":"d"}"#;
        let lines = [good, good, "{not json", good, good].join("\n");
        std::fs::write(&path, lines).unwrap();
        let loaded = load_dataset(&path, LoadMode::Lenient).unwrap();
        assert_eq!(loaded.examples.len(), 4);
        assert_eq!(loaded.skipped.len(), 1);
        assert_eq!(loaded.skipped[0].0, 3);
        match load_dataset(&path, LoadMode::Strict) {
            Err(Error::MalformedRecord { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed record, got {other:?}"),
        }
        std::fs::write(&path, "").unwrap();
        assert!(load_dataset(&path, LoadMode::Strict).unwrap().examples.is_empty());
        assert!(matches!(
            load_dataset(&dir.path().join("missing.jsonl"), LoadMode::Strict),
            Err(Error::Io { .. })
        ));
    }

    fn arb_example() -> impl Strategy<Value = Example> {
        (
            "[a-z]{1,5}( [a-zé]{1,5}){0,5}",
            prop::option::of(prop::collection::vec(0usize..3, 0..6)),
        )
            .prop_map(|(title, ann)| {
                let gold = Recipe::new("a", "b", "c", "d").unwrap();
                let alt = Recipe::new("a", "b", "x", "d").unwrap();
                Example {
                    id: "e".into(),
                    title,
                    description: None,
                    recipe: gold.clone(),
                    annotations: ann.map(|v| {
                        v.into_iter().map(|k| if k == 0 { alt.clone() } else { gold.clone() }).collect()
                    }),
                }
            })
    }

    proptest! {
        #[test]
        fn clean_report_accounts_for_everything(
            examples in prop::collection::vec(arb_example(), 0..40),
            min_words in 0usize..5,
            english in any::<bool>(),
            agreement in prop::option::of(0usize..4),
        ) {
            let filters = CleanFilters { min_title_words: min_words, english_only: english, min_agreement: agreement };
            let n = examples.len();
            let (kept, report) = clean_examples(examples, &filters);
            prop_assert_eq!(report.original, n);
            prop_assert_eq!(report.kept, kept.len());
            prop_assert_eq!(report.kept + report.removed(), n);
        }

        #[test]
        fn encoded_source_is_fixed_length_with_trailing_padding(
            text in "[a-d ]{0,40}", max_len in 1usize..12,
        ) {
            let v = Vocabulary::build(&["a b c"], None).unwrap();
            let ids = encode_source(&text, &v, max_len);
            prop_assert_eq!(ids.len(), max_len);
            if let Some(first_pad) = ids.iter().position(|&i| i == PAD) {
                prop_assert!(ids[first_pad..].iter().all(|&i| i == PAD));
            }
        }

        #[test]
        fn uncapped_vocabulary_covers_and_round_trips(texts in prop::collection::vec("[a-f]{1,3}( [a-f]{1,3}){0,4}", 0..10)) {
            let v = Vocabulary::build(&texts, None).unwrap();
            for t in texts.iter().flat_map(|t| t.split_whitespace()) {
                prop_assert!(v.contains(t));
                prop_assert_eq!(v.token(v.id(t)), Some(t));
            }
        }
    }
}
