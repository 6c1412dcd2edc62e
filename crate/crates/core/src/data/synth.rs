//! Synthetic parallel corpora over an abstract content alphabet.
//!
//! A sentence is a sequence of `k` distinct content symbols. Satellite
//! languages `L1..Ln` render symbol `c` as the single token `L<i>_<c>`. The
//! pivot language `E` renders it either short (`E<c>`) or long, as the
//! two-piece word `E<c>a@@ E<c>b`. Pivot targets may also drop their
//! least salient symbols, where salience is the position of a symbol's
//! first occurrence (earlier = less salient).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tokens::CONTINUATION;

pub const PIVOT_NAME: &str = "E";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Lang {
    Pivot,
    /// 1-based satellite index.
    Satellite(usize),
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lang::Pivot => f.write_str(PIVOT_NAME),
            Lang::Satellite(i) => write!(f, "L{i}"),
        }
    }
}

impl FromStr for Lang {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == PIVOT_NAME {
            return Ok(Lang::Pivot);
        }
        match s.strip_prefix('L').and_then(|n| n.parse::<usize>().ok()) {
            Some(i) if i >= 1 => Ok(Lang::Satellite(i)),
            _ => Err(Error::Config(format!("unknown synthetic language '{s}' (expected E or L<n>)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub alphabet_size: usize,
    pub min_symbols: usize,
    pub max_symbols: usize,
    pub n_satellites: usize,
    /// Probability that a pivot-language symbol uses its one-token form.
    pub p_short: f64,
    /// Per-symbol drop probability for pivot targets.
    pub p_drop: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { alphabet_size: 40, min_symbols: 3, max_symbols: 8, n_satellites: 4, p_short: 0.5, p_drop: 0.1, seed: 0 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_symbols == 0 || self.min_symbols > self.max_symbols {
            return Err(Error::Config(format!("bad sentence length range [{}, {}]", self.min_symbols, self.max_symbols)));
        }
        if self.max_symbols > self.alphabet_size {
            return Err(Error::Config(format!(
                "sentences of {} distinct symbols need an alphabet of at least that size (got {})",
                self.max_symbols, self.alphabet_size
            )));
        }
        for (name, p) in [("p_short", self.p_short), ("p_drop", self.p_drop)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn languages(&self) -> Vec<Lang> {
        std::iter::once(Lang::Pivot).chain((1..=self.n_satellites).map(Lang::Satellite)).collect()
    }

    pub fn check_lang(&self, lang: Lang) -> Result<()> {
        match lang {
            Lang::Satellite(i) if i > self.n_satellites => {
                Err(Error::Config(format!("language {lang} not in a spec with {} satellites", self.n_satellites)))
            }
            _ => Ok(()),
        }
    }

    /// Every surface token of `lang`, in a fixed order.
    pub fn surface_vocabulary(&self, lang: Lang) -> Vec<String> {
        (0..self.alphabet_size)
            .flat_map(|c| match lang {
                Lang::Pivot => vec![short_form(c), long_head(c), long_tail(c)],
                Lang::Satellite(i) => vec![satellite_form(i, c)],
            })
            .collect()
    }
}

fn short_form(c: usize) -> String {
    format!("E{c}")
}

fn long_head(c: usize) -> String {
    format!("E{c}a{CONTINUATION}")
}

fn long_tail(c: usize) -> String {
    format!("E{c}b")
}

fn satellite_form(i: usize, c: usize) -> String {
    format!("L{i}_{c}")
}

/// Tokens of symbol `c` in `lang`; `short` only matters for the pivot.
pub fn render_symbol(lang: Lang, c: usize, short: bool) -> Vec<String> {
    match lang {
        Lang::Pivot if short => vec![short_form(c)],
        Lang::Pivot => vec![long_head(c), long_tail(c)],
        Lang::Satellite(i) => vec![satellite_form(i, c)],
    }
}

/// `short[i]` selects the form of `content[i]` (ignored for satellites).
pub fn render(content: &[usize], lang: Lang, short: &[bool]) -> Vec<String> {
    content.iter().enumerate().flat_map(|(i, &c)| render_symbol(lang, c, short.get(i).copied().unwrap_or(true))).collect()
}

/// Which language a token belongs to, and its content symbol.
pub fn token_symbol(token: &str) -> Option<(Lang, usize)> {
    if let Some(rest) = token.strip_prefix('E') {
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 || (digits > 1 && rest.starts_with('0')) {
            return None;
        }
        let c = rest[..digits].parse().ok()?;
        return match &rest[digits..] {
            "" | "b" => Some((Lang::Pivot, c)),
            s if s == format!("a{CONTINUATION}") => Some((Lang::Pivot, c)),
            _ => None,
        };
    }
    let rest = token.strip_prefix('L')?;
    let (i, c) = rest.split_once('_')?;
    let canonical = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'));
    if !canonical(i) || !canonical(c) {
        return None;
    }
    let i: usize = i.parse().ok()?;
    (i >= 1).then_some(())?;
    Some((Lang::Satellite(i), c.parse().ok()?))
}

/// A token outside the expected language.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("token '{token}' at position {position} is not in language {expected}")]
pub struct LanguageViolation {
    pub position: usize,
    pub token: String,
    pub expected: Lang,
}

/// Content symbols of a `lang` token sequence. Pieces of one word that
/// name the same symbol (a long form) count once.
pub fn decode_tokens(tokens: &[impl AsRef<str>], lang: Lang) -> std::result::Result<Vec<usize>, LanguageViolation> {
    let mut out = Vec::with_capacity(tokens.len());
    let mut in_word = false;
    let mut prev: Option<usize> = None;
    for (position, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        let c = match token_symbol(t) {
            Some((l, c)) if l == lang => c,
            _ => return Err(LanguageViolation { position, token: t.to_string(), expected: lang }),
        };
        if !(in_word && prev == Some(c)) {
            out.push(c);
        }
        prev = Some(c);
        in_word = t.ends_with(CONTINUATION);
    }
    Ok(out)
}

/// Content of a pivot-language token sequence.
pub fn content_decode(tokens: &[impl AsRef<str>]) -> std::result::Result<Vec<usize>, LanguageViolation> {
    decode_tokens(tokens, Lang::Pivot)
}

/// Language of the first content token, for sources that may start with tags.
pub fn detect_language(tokens: &[impl AsRef<str>]) -> Option<Lang> {
    tokens.iter().find_map(|t| token_symbol(t.as_ref()).map(|(l, _)| l))
}

/// Positions of `content` ordered from least to most salient.
pub fn drop_order(content: &[usize]) -> Vec<usize> {
    let first = |c: usize| content.iter().position(|&x| x == c).unwrap_or(usize::MAX);
    let mut order: Vec<usize> = (0..content.len()).collect();
    order.sort_by_key(|&p| (first(content[p]), p));
    order
}

/// `content` with its least salient symbols removed so that `keep` remain.
pub fn compress(content: &[usize], keep: usize) -> Vec<usize> {
    let n_drop = content.len().saturating_sub(keep);
    let mut dropped = vec![false; content.len()];
    for &p in drop_order(content).iter().take(n_drop) {
        dropped[p] = true;
    }
    content.iter().zip(dropped).filter(|(_, d)| !d).map(|(&c, _)| c).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthPair {
    pub content: Vec<usize>,
    /// Content actually expressed by the target (after drops).
    pub tgt_content: Vec<usize>,
    pub src: Vec<String>,
    pub tgt: Vec<String>,
}

/// `n` sentence pairs `src -> tgt`. The draw stream is `synth/<label>` under
/// `spec.seed`, so distinct labels give independent corpora.
pub fn synth_generate(spec: &SyntheticSpec, n: usize, src: Lang, tgt: Lang, label: &str) -> Result<Vec<SynthPair>> {
    spec.validate()?;
    spec.check_lang(src)?;
    spec.check_lang(tgt)?;
    let mut rng = Rng::stream(spec.seed, &format!("synth/{label}"));
    let mut alphabet: Vec<usize> = (0..spec.alphabet_size).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.range(spec.min_symbols, spec.max_symbols);
        for i in 0..k {
            let j = i + rng.below(spec.alphabet_size - i);
            alphabet.swap(i, j);
        }
        let content = alphabet[..k].to_vec();
        let src_forms: Vec<bool> = (0..k).map(|_| src != Lang::Pivot || rng.bernoulli(spec.p_short)).collect();
        let src_tokens = render(&content, src, &src_forms);
        let tgt_content = if tgt == Lang::Pivot {
            let d = (1..k).filter(|_| rng.bernoulli(spec.p_drop)).count();
            compress(&content, k - d)
        } else {
            content.clone()
        };
        let tgt_forms: Vec<bool> = (0..tgt_content.len()).map(|_| tgt != Lang::Pivot || rng.bernoulli(spec.p_short)).collect();
        let tgt_tokens = render(&tgt_content, tgt, &tgt_forms);
        out.push(SynthPair { content, tgt_content, src: src_tokens, tgt: tgt_tokens });
    }
    Ok(out)
}
