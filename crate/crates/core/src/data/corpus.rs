use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::wordpiece::{content_len, frame, tokenize};
use super::{DataError, Result, Vocab};
use crate::ids::TokenId;

/// Two sentences with their framed token ids and an optional similarity score.
#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub text_a: String,
    pub text_b: String,
    pub score: Option<f64>,
    pub ids_a: Vec<TokenId>,
    pub ids_b: Vec<TokenId>,
}

impl SentencePair {
    /// Tokenizes both sides; errors when either has no content tokens.
    pub fn tokenized(text_a: &str, text_b: &str, score: Option<f64>, vocab: &Vocab, max_len: usize) -> Result<Self> {
        let ids_a = tokenize(text_a, vocab, max_len)?;
        let ids_b = tokenize(text_b, vocab, max_len)?;
        if content_len(&ids_a, vocab) == 0 || content_len(&ids_b, vocab) == 0 {
            return Err(DataError::EmptyTokenization(0));
        }
        Ok(Self {
            text_a: text_a.to_string(),
            text_b: text_b.to_string(),
            score,
            ids_a,
            ids_b,
        })
    }
}

/// Line accounting of a loader: `kept + skipped + filtered == total`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub total: usize,
    pub kept: usize,
    /// Malformed or untokenizable lines.
    pub skipped: usize,
    /// Well-formed lines dropped by the label filter.
    pub filtered: usize,
}

enum Line {
    Keep(SentencePair),
    Skip,
    Filter,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn collect(path: &Path, text: &str, mut parse: impl FnMut(&str) -> Line) -> Result<(Vec<SentencePair>, LoadSummary)> {
    let mut pairs = Vec::new();
    let mut summary = LoadSummary::default();
    for line in text.lines() {
        summary.total += 1;
        match parse(line) {
            Line::Keep(p) => {
                summary.kept += 1;
                pairs.push(p);
            }
            Line::Skip => summary.skipped += 1,
            Line::Filter => summary.filtered += 1,
        }
    }
    if summary.skipped > 0 {
        log::warn!("{}: skipped {} malformed lines of {}", path.display(), summary.skipped, summary.total);
    }
    if pairs.is_empty() {
        return Err(DataError::NoUsableRows {
            path: path.display().to_string(),
            total: summary.total,
        });
    }
    Ok((pairs, summary))
}

/// Pairs from JSON lines with `sentence1`, `sentence2` and optional `label`.
/// When a label is present only `"entailment"` rows are kept.
pub fn load_pairs_jsonl(path: &Path, vocab: &Vocab, max_len: usize) -> Result<(Vec<SentencePair>, LoadSummary)> {
    let text = read(path)?;
    collect(path, &text, |line| {
        let Ok(serde_json::Value::Object(obj)) = serde_json::from_str::<serde_json::Value>(line) else {
            return Line::Skip;
        };
        let (Some(a), Some(b)) = (
            obj.get("sentence1").and_then(|v| v.as_str()),
            obj.get("sentence2").and_then(|v| v.as_str()),
        ) else {
            return Line::Skip;
        };
        match obj.get("label") {
            None | Some(serde_json::Value::Null) => {}
            Some(serde_json::Value::String(l)) if l == "entailment" => {}
            Some(serde_json::Value::String(_)) => return Line::Filter,
            Some(_) => return Line::Skip,
        }
        match SentencePair::tokenized(a, b, None, vocab, max_len) {
            Ok(p) => Line::Keep(p),
            Err(_) => Line::Skip,
        }
    })
}

/// Scored pairs from tab-separated `score, sentence1, sentence2` rows.
/// Scores outside `[0, 5]` and unparsable rows (including headers) are skipped.
pub fn load_sts_tsv(path: &Path, vocab: &Vocab, max_len: usize) -> Result<(Vec<SentencePair>, LoadSummary)> {
    let text = read(path)?;
    collect(path, &text, |line| {
        let mut cols = line.split('\t');
        let (Some(score), Some(a), Some(b)) = (cols.next(), cols.next(), cols.next()) else {
            return Line::Skip;
        };
        let Ok(score) = score.trim().parse::<f64>() else {
            return Line::Skip;
        };
        if !(0.0..=5.0).contains(&score) {
            return Line::Skip;
        }
        match SentencePair::tokenized(a, b, Some(score), vocab, max_len) {
            Ok(p) => Line::Keep(p),
            Err(_) => Line::Skip,
        }
    })
}

const MIN_POOL: usize = 16;
const MIN_WORDS: usize = 6;
const MAX_WORDS: usize = 12;
const SHARED_FRACTION: f64 = 0.6;

/// Tokens eligible for synthetic sentences: whole words, not special or reserved.
fn eligible_tokens(vocab: &Vocab) -> Vec<TokenId> {
    (0..vocab.len() as TokenId)
        .filter(|&id| {
            let tok = vocab.token(id).unwrap_or("");
            !vocab.is_special(id) && !tok.starts_with("##") && !tok.starts_with('[') && !tok.is_empty()
        })
        .collect()
}

/// Disjoint token pools per topic, drawn from a seeded shuffle of the vocab.
pub fn topic_pools(vocab: &Vocab, seed: u64, n_topics: usize) -> Result<Vec<Vec<TokenId>>> {
    if n_topics < 2 {
        return Err(DataError::TooFewTopics(n_topics));
    }
    let mut tokens = eligible_tokens(vocab);
    if tokens.len() < n_topics * MIN_POOL {
        return Err(DataError::InsufficientVocab {
            needed: n_topics * MIN_POOL,
            available: tokens.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    tokens.shuffle(&mut rng);
    let per = tokens.len() / n_topics;
    Ok(tokens.chunks(per).take(n_topics).map(|c| c.to_vec()).collect())
}

/// Synthetic matched pairs; pair `i` belongs to topic `i % n_topics`.
///
/// Both sides draw from the topic's pool and the second side keeps roughly
/// 60% of the first side's tokens, so matched pairs overlap far more than
/// unrelated sentences of the same topic.
pub fn synth_pairs(n: usize, vocab: &Vocab, seed: u64, n_topics: usize) -> Result<Vec<SentencePair>> {
    let pools = topic_pools(vocab, seed, n_topics)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let text = |ids: &[TokenId]| ids.iter().map(|&id| vocab.token(id).unwrap_or("")).collect::<Vec<_>>().join(" ");
    let framed_len = MAX_WORDS + 2;
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let pool = &pools[i % n_topics];
        let len = rng.gen_range(MIN_WORDS..=MAX_WORDS);
        let a: Vec<TokenId> = (0..len).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
        let mut b: Vec<TokenId> = a
            .iter()
            .map(|&t| {
                if rng.gen_bool(SHARED_FRACTION) {
                    t
                } else {
                    pool[rng.gen_range(0..pool.len())]
                }
            })
            .collect();
        b.shuffle(&mut rng);
        pairs.push(SentencePair {
            text_a: text(&a),
            text_b: text(&b),
            score: None,
            ids_a: frame(a, vocab, framed_len),
            ids_b: frame(b, vocab, framed_len),
        });
    }
    Ok(pairs)
}
