use serde::Serialize;

use crate::error::{Error, Result};
use crate::tokens::{is_continuation, CONTINUATION};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub sentences: usize,
    pub words: usize,
    pub bpe_token_count: usize,
    pub continuation_count: usize,
    /// Words made of two or more subword pieces, over all words.
    pub complex_word_ratio: f64,
    /// Flesch reading ease with syllables approximated by vowel groups.
    pub fre_approx: f64,
}

/// Maximal runs of vowels (`aeiouy`, case-insensitive), at least 1.
pub fn syllables(word: &str) -> usize {
    let mut groups = 0;
    let mut in_vowel = false;
    for ch in word.chars() {
        let v = matches!(ch.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
        if v && !in_vowel {
            groups += 1;
        }
        in_vowel = v;
    }
    groups.max(1)
}

pub fn complexity_report(corpus: &[Vec<String>]) -> Result<ComplexityReport> {
    if corpus.is_empty() {
        return Err(Error::Empty { op: "complexity_report" });
    }
    let (mut words, mut complex, mut tokens, mut cont, mut syl) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for sentence in corpus {
        let mut pieces = 0;
        let mut word = String::new();
        for t in sentence {
            tokens += 1;
            pieces += 1;
            if is_continuation(t) {
                cont += 1;
                word.push_str(&t[..t.len() - CONTINUATION.len()]);
            } else {
                word.push_str(t);
                words += 1;
                complex += usize::from(pieces >= 2);
                syl += syllables(&word);
                pieces = 0;
                word.clear();
            }
        }
        if pieces > 0 {
            words += 1;
            complex += usize::from(pieces >= 2);
            syl += syllables(&word);
        }
    }
    if words == 0 {
        return Err(Error::data("complexity_report: corpus has no words"));
    }
    let n = corpus.len() as f64;
    let w = words as f64;
    Ok(ComplexityReport {
        sentences: corpus.len(),
        words,
        bpe_token_count: tokens,
        continuation_count: cont,
        complex_word_ratio: complex as f64 / w,
        fre_approx: 206.835 - 1.015 * (w / n) - 84.6 * (syl as f64 / w),
    })
}
