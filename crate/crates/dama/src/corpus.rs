//! Preference-pair corpus plumbing: JSONL ingestion, rule-based sub-sentence
//! splitting, deterministic mock similarity scoring, and whitespace
//! tokenization against a shared vocabulary.
//!
//! File formats (one JSON object per line for `.jsonl`):
//!
//! ```text
//! corpus.jsonl        {"id", "prompt", "chosen", "rejected", "image_ref"?}
//! subsentences.jsonl  {"instance_id", "chosen_parts", "rejected_parts"}
//! scores.jsonl        {"instance_id", "chosen_scores", "rejected_scores"}
//! vocab.json          {"tokens": [...]}   (index in the list == token id)
//! ```
//!
//! Unknown JSON fields are ignored on read so auxiliary annotations (e.g. a
//! generator's bucket label) survive in the files without breaking loaders.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{DamaError, DamaResult};

/// Default half-width of the mock similarity score range.
pub const DEFAULT_MOCK_SCALE: f64 = 5.0;

/// Token id reserved for words that are not in the vocabulary.
pub const UNKNOWN_TOKEN_ID: usize = 0;

/// Spelling of the reserved unknown token when a vocabulary is built here.
pub const UNKNOWN_TOKEN: &str = "<unk>";

/// One preference pair: a prompt with a chosen and a rejected response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceInstance {
    pub id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    /// Optional pointer to an image; carried through untouched.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

/// Sub-sentence decomposition of one instance's responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubSentences {
    pub instance_id: String,
    pub chosen_parts: Vec<String>,
    pub rejected_parts: Vec<String>,
}

/// Per-sub-sentence similarity scores for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub instance_id: String,
    pub chosen_scores: Vec<f64>,
    pub rejected_scores: Vec<f64>,
}

/// Token string ↔ id table. Id 0 is reserved for unknown words.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit token list; index == id and the
    /// entry at index 0 is treated as the unknown sentinel.
    pub fn from_tokens(tokens: Vec<String>) -> DamaResult<Self> {
        if tokens.is_empty() {
            return Err(DamaError::InvalidConfig(
                "vocabulary must contain at least the unknown token at index 0".to_string(),
            ));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if ids.insert(token.clone(), id).is_some() {
                return Err(DamaError::InvalidConfig(format!(
                    "duplicate vocabulary token {token:?}"
                )));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    /// Id for a (already lowercased) token, falling back to the unknown id.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNKNOWN_TOKEN_ID)
    }

    /// Token string for an id, if the id is in range.
    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: &Path) -> DamaResult<()> {
        let file = VocabularyFile {
            tokens: self.tokens.clone(),
        };
        let body = serde_json::to_string_pretty(&file).map_err(|source| DamaError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        write_bytes(path, body.as_bytes())
    }

    pub fn load(path: &Path) -> DamaResult<Self> {
        let bytes = std::fs::read(path).map_err(|source| DamaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: VocabularyFile =
            serde_json::from_slice(&bytes).map_err(|source| DamaError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        Vocabulary::from_tokens(file.tokens)
    }
}

/// One instance reduced to policy inputs: a context id for the prompt plus
/// token id sequences for both responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedInstance {
    pub instance_id: String,
    pub context_id: usize,
    pub chosen_tokens: Vec<usize>,
    pub rejected_tokens: Vec<usize>,
}

/// 64-bit FNV-1a. Used wherever a hash must be stable across processes and
/// platforms (std's `DefaultHasher` is randomly seeded per process).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Deterministic context id for a prompt: stable hash modulo `context_count`.
pub fn stable_context_id(prompt: &str, context_count: usize) -> usize {
    debug_assert!(context_count >= 1);
    (fnv1a64(prompt.as_bytes()) % context_count as u64) as usize
}

fn write_bytes(path: &Path, bytes: &[u8]) -> DamaResult<()> {
    std::fs::write(path, bytes).map_err(|source| DamaError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn open_lines(path: &Path) -> DamaResult<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = std::fs::File::open(path).map_err(|source| DamaError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, line)| (i + 1, line)))
}

/// Parses a JSONL file into `(line_number, record)` pairs. Blank lines are
/// skipped; any other malformed line aborts with its 1-based line number.
pub(crate) fn load_jsonl<T: DeserializeOwned>(path: &Path) -> DamaResult<Vec<(usize, T)>> {
    let mut records = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|source| DamaError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DamaError::MalformedRecord {
            path: path.to_path_buf(),
            line: line_no,
            detail: e.to_string(),
        })?;
        records.push((line_no, record));
    }
    Ok(records)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> DamaResult<()> {
    let mut out = Vec::new();
    for record in records {
        let line = serde_json::to_string(record).map_err(|source| DamaError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

/// Loads and validates a preference corpus. Rejects records with empty ids,
/// empty responses, identical responses, or duplicate ids, naming the
/// offending line.
pub fn load_corpus(path: &Path) -> DamaResult<Vec<PreferenceInstance>> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut corpus = Vec::new();
    for (line, inst) in load_jsonl::<PreferenceInstance>(path)? {
        let invalid = |detail: String| DamaError::InvalidRecord {
            path: path.to_path_buf(),
            line,
            detail,
        };
        if inst.id.is_empty() {
            return Err(invalid("empty id".to_string()));
        }
        if inst.chosen.is_empty() {
            return Err(invalid(format!("instance {:?} has empty chosen", inst.id)));
        }
        if inst.rejected.is_empty() {
            return Err(invalid(format!("instance {:?} has empty rejected", inst.id)));
        }
        if inst.chosen == inst.rejected {
            return Err(invalid(format!(
                "instance {:?} has identical chosen and rejected",
                inst.id
            )));
        }
        if seen.insert(inst.id.clone(), line).is_some() {
            return Err(DamaError::DuplicateId {
                path: path.to_path_buf(),
                line,
                id: inst.id,
            });
        }
        corpus.push(inst);
    }
    Ok(corpus)
}

pub fn write_corpus(path: &Path, corpus: &[PreferenceInstance]) -> DamaResult<()> {
    write_jsonl(path, corpus)
}

pub fn load_subsentences(path: &Path) -> DamaResult<Vec<SubSentences>> {
    let mut out = Vec::new();
    for (line, record) in load_jsonl::<SubSentences>(path)? {
        if record.chosen_parts.is_empty() || record.rejected_parts.is_empty() {
            return Err(DamaError::InvalidRecord {
                path: path.to_path_buf(),
                line,
                detail: format!("instance {:?} has an empty part list", record.instance_id),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_subsentences(path: &Path, records: &[SubSentences]) -> DamaResult<()> {
    write_jsonl(path, records)
}

/// Loads similarity records, rejecting empty part lists and non-finite scores.
pub fn load_scores(path: &Path) -> DamaResult<Vec<SimilarityRecord>> {
    let mut out = Vec::new();
    for (line, record) in load_jsonl::<SimilarityRecord>(path)? {
        let invalid = |detail: String| DamaError::InvalidRecord {
            path: path.to_path_buf(),
            line,
            detail,
        };
        if record.chosen_scores.is_empty() || record.rejected_scores.is_empty() {
            return Err(invalid(format!(
                "instance {:?} has an empty score list",
                record.instance_id
            )));
        }
        if record
            .chosen_scores
            .iter()
            .chain(record.rejected_scores.iter())
            .any(|s| !s.is_finite())
        {
            return Err(invalid(format!(
                "instance {:?} has a non-finite score",
                record.instance_id
            )));
        }
        out.push(record);
    }
    Ok(out)
}

pub fn write_scores(path: &Path, records: &[SimilarityRecord]) -> DamaResult<()> {
    write_jsonl(path, records)
}

/// Splits one response text into sub-sentences.
///
/// Rule: first split after `.`, `!`, or `?` when followed by whitespace, then
/// split each piece on the `"; "` delimiter (which is dropped). Parts are
/// trimmed and never empty; a text with no delimiters is a single part.
pub fn split_text(text: &str) -> Vec<String> {
    let mut sentences: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_some_and(|n| n.is_whitespace()) {
            sentences.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }

    let mut parts: Vec<String> = Vec::new();
    for sentence in &sentences {
        for piece in sentence.split("; ") {
            let piece = piece.trim();
            if !piece.is_empty() {
                parts.push(piece.to_string());
            }
        }
    }
    if parts.is_empty() {
        // Whitespace-only input: keep it as a single part so every response
        // always has at least one sub-sentence.
        parts.push(text.to_string());
    }
    parts
}

/// Applies [`split_text`] to both responses of an instance.
pub fn split_sentences(instance: &PreferenceInstance) -> SubSentences {
    SubSentences {
        instance_id: instance.id.clone(),
        chosen_parts: split_text(&instance.chosen),
        rejected_parts: split_text(&instance.rejected),
    }
}

/// Stand-in for an external image-text similarity scorer: a pure function of
/// `(instance id, side, part index, part text, seed)` mapped into
/// `[-scale, +scale]`. Identical inputs give identical scores across runs,
/// platforms, and processes.
pub fn mock_similarity_scores(
    subs: &SubSentences,
    scale: f64,
    seed: u64,
) -> DamaResult<SimilarityRecord> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(DamaError::InvalidConfig(format!(
            "mock score scale must be positive and finite, got {scale}"
        )));
    }
    let score_part = |side: u8, index: usize, text: &str| -> f64 {
        let mut buf = Vec::with_capacity(subs.instance_id.len() + text.len() + 24);
        buf.extend_from_slice(&seed.to_le_bytes());
        buf.push(0x1f);
        buf.extend_from_slice(subs.instance_id.as_bytes());
        buf.push(0x1f);
        buf.push(side);
        buf.extend_from_slice(&(index as u64).to_le_bytes());
        buf.push(0x1f);
        buf.extend_from_slice(text.as_bytes());
        // Top 53 bits -> [0, 1), then stretch to [-scale, +scale).
        let unit = (fnv1a64(&buf) >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        scale * (2.0 * unit - 1.0)
    };
    Ok(SimilarityRecord {
        instance_id: subs.instance_id.clone(),
        chosen_scores: subs
            .chosen_parts
            .iter()
            .enumerate()
            .map(|(i, p)| score_part(b'c', i, p))
            .collect(),
        rejected_scores: subs
            .rejected_parts
            .iter()
            .enumerate()
            .map(|(i, p)| score_part(b'r', i, p))
            .collect(),
    })
}

/// Lowercased whitespace tokenization of both responses against a vocabulary.
///
/// When `vocab` is `None` the vocabulary is built from the corpus in
/// first-seen order with the unknown sentinel at id 0; when provided, words
/// missing from it map to [`UNKNOWN_TOKEN_ID`]. The prompt is not tokenized;
/// it is reduced to `context_id = stable_hash(prompt) % context_count`.
pub fn tokenize(
    corpus: &[PreferenceInstance],
    vocab: Option<Vocabulary>,
    context_count: usize,
) -> DamaResult<(Vec<TokenizedInstance>, Vocabulary)> {
    if context_count == 0 {
        return Err(DamaError::InvalidConfig(
            "context_count must be at least 1".to_string(),
        ));
    }
    if corpus.is_empty() && vocab.is_none() {
        return Err(DamaError::EmptyCorpus {
            context: "tokenize needs a corpus or an existing vocabulary",
        });
    }
    let vocab = match vocab {
        Some(v) => v,
        None => {
            let mut tokens = vec![UNKNOWN_TOKEN.to_string()];
            let mut ids: HashMap<String, usize> = HashMap::new();
            ids.insert(UNKNOWN_TOKEN.to_string(), UNKNOWN_TOKEN_ID);
            for inst in corpus {
                for text in [&inst.chosen, &inst.rejected] {
                    for word in text.split_whitespace() {
                        let word = word.to_lowercase();
                        if !ids.contains_key(&word) {
                            ids.insert(word.clone(), tokens.len());
                            tokens.push(word);
                        }
                    }
                }
            }
            Vocabulary { tokens, ids }
        }
    };
    let tokenized = corpus
        .iter()
        .map(|inst| TokenizedInstance {
            instance_id: inst.id.clone(),
            context_id: stable_context_id(&inst.prompt, context_count),
            chosen_tokens: inst
                .chosen
                .split_whitespace()
                .map(|w| vocab.id(&w.to_lowercase()))
                .collect(),
            rejected_tokens: inst
                .rejected
                .split_whitespace()
                .map(|w| vocab.id(&w.to_lowercase()))
                .collect(),
        })
        .collect();
    Ok((tokenized, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(id: &str, chosen: &str, rejected: &str) -> PreferenceInstance {
        PreferenceInstance {
            id: id.to_string(),
            prompt: format!("prompt for {id}"),
            chosen: chosen.to_string(),
            rejected: rejected.to_string(),
            image_ref: None,
        }
    }

    #[test]
    fn test_fnv1a64_known_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn test_split_two_sentences() {
        assert_eq!(
            split_text("A dog runs. It barks."),
            vec!["A dog runs.", "It barks."]
        );
    }

    #[test]
    fn test_split_no_delimiter_is_single_part() {
        assert_eq!(split_text("One clause"), vec!["One clause"]);
    }

    #[test]
    fn test_split_semicolon_and_punctuation() {
        assert_eq!(split_text("A; B. C?"), vec!["A", "B.", "C?"]);
    }

    #[test]
    fn test_split_never_produces_empty_parts() {
        for text in ["; ; ;", "...", "a! b? c.", "?!", " x "] {
            let parts = split_text(text);
            assert!(!parts.is_empty(), "no parts for {text:?}");
            assert!(
                parts.iter().all(|p| !p.is_empty()),
                "empty part for {text:?}: {parts:?}"
            );
        }
    }

    #[test]
    fn test_split_punctuation_without_space_does_not_split() {
        assert_eq!(split_text("e.g.foo bar"), vec!["e.g.foo bar"]);
        assert_eq!(split_text("Hi!?Bye"), vec!["Hi!?Bye"]);
    }

    #[test]
    fn test_split_sentences_uses_instance_id() {
        let inst = instance("x1", "A. B.", "C.");
        let subs = split_sentences(&inst);
        assert_eq!(subs.instance_id, "x1");
        assert_eq!(subs.chosen_parts.len(), 2);
        assert_eq!(subs.rejected_parts, vec!["C."]);
    }

    #[test]
    fn test_corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = vec![
            instance("a", "good text. more.", "bad text"),
            PreferenceInstance {
                id: "b".to_string(),
                prompt: "p".to_string(),
                chosen: "c with \"quotes\" and \n newline".to_string(),
                rejected: "r".to_string(),
                image_ref: Some("img/004.png".to_string()),
            },
        ];
        write_corpus(&path, &corpus).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded, corpus);
    }

    #[test]
    fn test_load_corpus_reports_line_and_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"prompt\":\"p\",\"chosen\":\"c\",\"rejected\":\"r\"}\n{\"id\":\"b\",\"prompt\":\"p\",\"chosen\":\"c\"}\n",
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2"), "missing line number: {msg}");
        assert!(msg.contains("rejected"), "missing field name: {msg}");
    }

    #[test]
    fn test_load_corpus_rejects_duplicate_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let a = serde_json::to_string(&instance("dup", "c", "r")).unwrap();
        let b = serde_json::to_string(&instance("dup", "c2", "r2")).unwrap();
        std::fs::write(&path, format!("{a}\n{b}\n")).unwrap();
        let err = load_corpus(&path).unwrap_err();
        match err {
            DamaError::DuplicateId { line, ref id, .. } => {
                assert_eq!(line, 2);
                assert_eq!(id, "dup");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn test_load_corpus_rejects_identical_responses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let rec = serde_json::to_string(&instance("same", "text", "text")).unwrap();
        std::fs::write(&path, format!("{rec}\n")).unwrap();
        let msg = load_corpus(&path).unwrap_err().to_string();
        assert!(msg.contains("identical"), "{msg}");
    }

    #[test]
    fn test_load_corpus_tolerates_auxiliary_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"prompt\":\"p\",\"chosen\":\"c\",\"rejected\":\"r\",\"bucket\":\"easy\"}\n",
        )
        .unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus[0].id, "a");
    }

    #[test]
    fn test_mock_scores_deterministic_and_in_range() {
        let subs = SubSentences {
            instance_id: "inst-7".to_string(),
            chosen_parts: vec!["a dog.".to_string(), "it runs.".to_string()],
            rejected_parts: vec!["a cat.".to_string()],
        };
        let a = mock_similarity_scores(&subs, 5.0, 42).unwrap();
        let b = mock_similarity_scores(&subs, 5.0, 42).unwrap();
        assert_eq!(a, b);
        for s in a.chosen_scores.iter().chain(a.rejected_scores.iter()) {
            assert!((-5.0..=5.0).contains(s), "score out of range: {s}");
        }
    }

    #[test]
    fn test_mock_scores_differ_across_seeds() {
        // Ten-part input: two seeds must disagree on at least one score.
        let subs = SubSentences {
            instance_id: "inst-9".to_string(),
            chosen_parts: (0..5).map(|i| format!("chosen part {i}.")).collect(),
            rejected_parts: (0..5).map(|i| format!("rejected part {i}.")).collect(),
        };
        let a = mock_similarity_scores(&subs, 5.0, 0).unwrap();
        let b = mock_similarity_scores(&subs, 5.0, 1).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn test_mock_scores_reject_bad_scale() {
        let subs = SubSentences {
            instance_id: "x".to_string(),
            chosen_parts: vec!["a".to_string()],
            rejected_parts: vec!["b".to_string()],
        };
        assert!(mock_similarity_scores(&subs, 0.0, 0).is_err());
        assert!(mock_similarity_scores(&subs, -1.0, 0).is_err());
        assert!(mock_similarity_scores(&subs, f64::NAN, 0).is_err());
    }

    #[test]
    fn test_tokenize_matches_fixed_vocab() {
        let vocab = Vocabulary::from_tokens(vec![
            UNKNOWN_TOKEN.to_string(),
            "a".to_string(),
            "b".to_string(),
        ])
        .unwrap();
        let corpus = vec![instance("t", "a b a", "b zzz")];
        let (tokenized, vocab) = tokenize(&corpus, Some(vocab), 4).unwrap();
        assert_eq!(tokenized[0].chosen_tokens, vec![1, 2, 1]);
        // Unknown word falls back to the reserved id 0.
        assert_eq!(tokenized[0].rejected_tokens, vec![2, UNKNOWN_TOKEN_ID]);
        assert!(tokenized[0].context_id < 4);
        assert_eq!(vocab.id("a"), 1);
    }

    #[test]
    fn test_tokenize_builds_vocab_in_first_seen_order() {
        let corpus = vec![
            instance("t1", "Red fox", "blue fox"),
            instance("t2", "RED sky", "green sky"),
        ];
        let (tokenized, vocab) = tokenize(&corpus, None, 2).unwrap();
        // <unk>, red, fox, blue, sky, green — lowercased, first seen first.
        assert_eq!(
            vocab.tokens(),
            &["<unk>", "red", "fox", "blue", "sky", "green"]
        );
        assert_eq!(tokenized[0].chosen_tokens, vec![1, 2]);
        assert_eq!(tokenized[1].chosen_tokens, vec![1, 4]);
        for t in &tokenized {
            for &id in t.chosen_tokens.iter().chain(t.rejected_tokens.iter()) {
                assert!(id < vocab.len());
            }
        }
    }

    #[test]
    fn test_tokenize_empty_corpus_without_vocab_fails() {
        assert!(tokenize(&[], None, 4).is_err());
    }

    #[test]
    fn test_tokenize_empty_corpus_with_vocab_is_fine() {
        let vocab =
            Vocabulary::from_tokens(vec![UNKNOWN_TOKEN.to_string(), "a".to_string()]).unwrap();
        let (tokenized, vocab) = tokenize(&[], Some(vocab), 4).unwrap();
        assert!(tokenized.is_empty());
        assert_eq!(vocab.len(), 2);
    }

    #[test]
    fn test_context_id_stable_and_bounded() {
        let a = stable_context_id("the same prompt", 8);
        let b = stable_context_id("the same prompt", 8);
        assert_eq!(a, b);
        assert!(a < 8);
    }

    #[test]
    fn test_vocab_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.json");
        let vocab = Vocabulary::from_tokens(vec![
            UNKNOWN_TOKEN.to_string(),
            "alpha".to_string(),
            "beta".to_string(),
        ])
        .unwrap();
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded, vocab);
    }

    #[test]
    fn test_vocab_rejects_duplicates() {
        let dup = Vocabulary::from_tokens(vec!["<unk>".to_string(), "<unk>".to_string()]);
        assert!(dup.is_err());
    }

    #[test]
    fn test_scores_round_trip_preserves_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        let records = vec![SimilarityRecord {
            instance_id: "p".to_string(),
            chosen_scores: vec![0.1 + 0.2, 1.0 / 3.0, -4.999999999999999],
            rejected_scores: vec![f64::MIN_POSITIVE, 2.2250738585072014e-308],
        }];
        write_scores(&path, &records).unwrap();
        let loaded = load_scores(&path).unwrap();
        assert_eq!(loaded, records, "scores must round-trip bit-exactly");
    }

    #[test]
    fn test_load_scores_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        // JSON has no NaN literal, so a null in the list is the realistic failure.
        std::fs::write(
            &path,
            "{\"instance_id\":\"x\",\"chosen_scores\":[1.0],\"rejected_scores\":[null]}\n",
        )
        .unwrap();
        assert!(load_scores(&path).is_err());
    }

    #[test]
    fn test_load_scores_rejects_empty_lists() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        std::fs::write(
            &path,
            "{\"instance_id\":\"x\",\"chosen_scores\":[],\"rejected_scores\":[1.0]}\n",
        )
        .unwrap();
        let msg = load_scores(&path).unwrap_err().to_string();
        assert!(msg.contains("empty score list"), "{msg}");
    }

    #[test]
    fn test_subsentences_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("subs.jsonl");
        let records = vec![SubSentences {
            instance_id: "s".to_string(),
            chosen_parts: vec!["A.".to_string(), "B.".to_string()],
            rejected_parts: vec!["C.".to_string()],
        }];
        write_subsentences(&path, &records).unwrap();
        assert_eq!(load_subsentences(&path).unwrap(), records);
    }
}
