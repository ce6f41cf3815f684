use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use super::{DataError, Result, Vocab};
use crate::ids::TokenId;

const MAX_WORD_CHARS: usize = 100;

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c as u32, 0x2000..=0x206F | 0x3000..=0x303F | 0xFF01..=0xFF0F)
        || matches!(c, '¡' | '¿' | '«' | '»' | '·')
}

/// Lowercase, strip accents, split on whitespace and punctuation.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let cleaned = text.to_lowercase();
    for c in cleaned.nfd() {
        if is_combining_mark(c) || (c.is_control() && !c.is_whitespace()) || c == '\u{FFFD}' {
            continue;
        }
        if c.is_whitespace() {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
        } else if is_punct(c) {
            if !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            words.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

/// Greedy longest-match split of one word; false when some span has no match.
fn split_word(word: &str, vocab: &Vocab, out: &mut Vec<TokenId>) -> bool {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() > MAX_WORD_CHARS {
        return false;
    }
    let start_len = out.len();
    let mut start = 0;
    let mut piece = String::new();
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while start < end {
            piece.clear();
            if start > 0 {
                piece.push_str("##");
            }
            piece.extend(&chars[start..end]);
            if let Some(id) = vocab.id(&piece) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        match found {
            Some(id) => {
                out.push(id);
                start = end;
            }
            None => {
                out.truncate(start_len);
                return false;
            }
        }
    }
    true
}

/// WordPiece ids without framing.
pub fn tokenize_words(text: &str, vocab: &Vocab) -> Vec<TokenId> {
    let mut out = Vec::new();
    for word in pre_tokenize(text) {
        if !split_word(&word, vocab, &mut out) {
            out.push(vocab.unk());
        }
    }
    out
}

/// Framed ids `[CLS] ... [SEP]`, truncated to `max_len` keeping `[SEP]` last.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Result<Vec<TokenId>> {
    let framing = vocab.cls().is_some() as usize + vocab.sep().is_some() as usize;
    if max_len < framing + 1 {
        return Err(DataError::MaxLenTooSmall {
            max_len,
            min: framing + 1,
        });
    }
    Ok(frame(tokenize_words(text, vocab), vocab, max_len))
}

/// Adds framing tokens and truncates content to fit `max_len`.
pub fn frame(mut content: Vec<TokenId>, vocab: &Vocab, max_len: usize) -> Vec<TokenId> {
    let framing = vocab.cls().is_some() as usize + vocab.sep().is_some() as usize;
    content.truncate(max_len.saturating_sub(framing));
    let mut ids = Vec::with_capacity(content.len() + framing);
    ids.extend(vocab.cls());
    ids.extend(content);
    ids.extend(vocab.sep());
    ids
}

/// Number of non-special ids.
pub fn content_len(ids: &[TokenId], vocab: &Vocab) -> usize {
    ids.iter()
        .filter(|&&id| id != vocab.pad() && Some(id) != vocab.cls() && Some(id) != vocab.sep())
        .count()
}
