//! Byte-pair encoding without an end-of-word symbol.
//!
//! Words are split into characters and merged by an ordered merge table.
//! Every piece except the last of a word carries the `@@` marker, so
//! `"marshmallow"` may come out as `mar@@ shm@@ allow`.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tokens::CONTINUATION;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeMerges {
    merges: Vec<(String, String)>,
    rank: HashMap<(String, String), usize>,
}

/// A merged piece may never end in the marker, otherwise a word-final piece
/// would be indistinguishable from a continuation.
fn mergeable(left: &str, right: &str) -> bool {
    !format!("{left}{right}").ends_with(CONTINUATION)
}

impl BpeMerges {
    pub fn new(merges: Vec<(String, String)>) -> Result<Self> {
        let mut rank = HashMap::with_capacity(merges.len());
        for (i, (l, r)) in merges.iter().enumerate() {
            if l.is_empty() || r.is_empty() || l.contains(char::is_whitespace) || r.contains(char::is_whitespace) {
                return Err(Error::data(format!("malformed merge '{l} {r}'")));
            }
            if !mergeable(l, r) {
                return Err(Error::data(format!("merge '{l} {r}' would produce a piece ending in {CONTINUATION}")));
            }
            rank.entry((l.clone(), r.clone())).or_insert(i);
        }
        Ok(BpeMerges { merges, rank })
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Pieces of one word, without markers.
    pub fn segment(&self, word: &str) -> Vec<String> {
        let mut pieces: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = pieces
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.rank.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((r, _)) = best else { break };
            let (l, rt) = &self.merges[r];
            let mut out = Vec::with_capacity(pieces.len());
            let mut i = 0;
            while i < pieces.len() {
                if i + 1 < pieces.len() && &pieces[i] == l && &pieces[i + 1] == rt {
                    out.push(format!("{l}{rt}"));
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut pieces[i]));
                    i += 1;
                }
            }
            pieces = out;
        }
        pieces
    }

    /// One merge per line: `left right`.
    pub fn to_text(&self) -> String {
        self.merges.iter().map(|(l, r)| format!("{l} {r}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut merges = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) => merges.push((l.to_string(), r.to_string())),
                _ => return Err(Error::data(format!("merges line {}: expected 'left right', got '{line}'", n + 1))),
            }
        }
        Self::new(merges)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Greedy highest-frequency pair merging. Ties go to the lexicographically
/// smallest pair.
pub fn bpe_learn<'a>(corpus: impl IntoIterator<Item = &'a str>, n_merges: usize) -> Result<BpeMerges> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for line in corpus {
        for w in line.split_whitespace() {
            *counts.entry(w).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Empty { op: "bpe_learn" });
    }
    let mut words: Vec<(Vec<String>, usize)> =
        counts.into_iter().map(|(w, c)| (w.chars().map(String::from).collect(), c)).collect();
    words.sort();
    let mut merges = Vec::with_capacity(n_merges);
    while merges.len() < n_merges {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (pieces, c) in &words {
            for w in pieces.windows(2) {
                if mergeable(&w[0], &w[1]) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
                }
            }
        }
        let Some(((l, r), _)) = pairs.into_iter().max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
        else {
            break;
        };
        let (l, r) = (l.to_string(), r.to_string());
        for (pieces, _) in &mut words {
            let mut i = 0;
            while i + 1 < pieces.len() {
                if pieces[i] == l && pieces[i + 1] == r {
                    pieces[i] = format!("{l}{r}");
                    pieces.remove(i + 1);
                }
                i += 1;
            }
        }
        merges.push((l, r));
    }
    BpeMerges::new(merges)
}

/// Segments whitespace-separated `text`; non-final pieces get `@@`.
pub fn bpe_apply(text: &str, merges: &BpeMerges) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let pieces = merges.segment(word);
        let last = pieces.len() - 1;
        out.extend(pieces.into_iter().enumerate().map(|(i, p)| if i < last { p + CONTINUATION } else { p }));
    }
    out
}

/// Joins pieces at `@@` boundaries; words are separated by single spaces.
pub fn bpe_undo(tokens: &[impl AsRef<str>]) -> String {
    let mut out = String::new();
    let mut open = false;
    for t in tokens {
        let t = t.as_ref();
        if !open && !out.is_empty() {
            out.push(' ');
        }
        match t.strip_suffix(CONTINUATION) {
            Some(stem) => {
                out.push_str(stem);
                open = true;
            }
            None => {
                out.push_str(t);
                open = false;
            }
        }
    }
    out
}
