//! Text normalization and tokenization shared by predicate matching and the
//! mock agent's token mining.

use icu_casemap::{CaseMapper, CaseMapperBorrowed};
use unicode_normalization::UnicodeNormalization;

const FOLDER: CaseMapperBorrowed<'static> = CaseMapper::new();

/// NFKC-normalizes `text` and applies Unicode simple case folding per scalar.
///
/// Matching is always done on the output of this function, for both the
/// haystack and the needle.
pub fn normalize(text: &str) -> String {
    text.nfkc().map(|c| FOLDER.simple_fold(c)).collect()
}

/// Scripts written without word separators. Runs of these are split into
/// character bigrams.
fn is_unsegmented(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF   // hiragana, katakana
        | 0x3400..=0x4DBF // CJK ext A
        | 0x4E00..=0x9FFF // CJK unified
        | 0xAC00..=0xD7AF // hangul syllables
        | 0xF900..=0xFAFF // CJK compatibility
        | 0x20000..=0x2FFFF)
}

/// Splits already-normalized text into match tokens.
///
/// Alphanumeric runs separated by anything else form words. Inside a run,
/// segments of unsegmented scripts (CJK, kana, hangul) become overlapping
/// character bigrams, or the lone character when the segment has length one.
/// Output preserves first-occurrence order and may contain repeats.
pub fn tokenize(normalized: &str) -> Vec<String> {
    let mut out = Vec::new();
    for run in normalized.split(|c: char| !c.is_alphanumeric()) {
        if run.is_empty() {
            continue;
        }
        let chars: Vec<char> = run.chars().collect();
        let mut start = 0;
        while start < chars.len() {
            let cjk = is_unsegmented(chars[start]);
            let mut end = start + 1;
            while end < chars.len() && is_unsegmented(chars[end]) == cjk {
                end += 1;
            }
            let segment = &chars[start..end];
            if cjk && segment.len() > 1 {
                for pair in segment.windows(2) {
                    out.push(pair.iter().collect());
                }
            } else {
                out.push(segment.iter().collect());
            }
            start = end;
        }
    }
    out
}
