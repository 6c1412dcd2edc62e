//! Glue between corpora, vocabularies, models and constrained search.

use std::fmt;
use std::str::FromStr;

use crate::data::synth::{Lang, SyntheticSpec};
use crate::data::{
    add_language_tag, add_length_token, annotate_length, compute_target_length, Example, Vocabulary,
};
use crate::decode::{beam_search, greedy_decode, ComplexityBudget, Constraint, Hypothesis, LengthConstraint, LengthRequest, TokenClasses};
use crate::error::{Error, Result};
use crate::model::{LengthMode, TransformerModel};
use crate::scalar::Scalar;

/// A translation direction `src -> tgt`, written `L1-E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Direction {
    pub src: Lang,
    pub tgt: Lang,
}

impl Direction {
    pub fn new(src: Lang, tgt: Lang) -> Self {
        Direction { src, tgt }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src, self.tgt)
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['-', ':'])
            .ok_or_else(|| Error::Config(format!("direction '{s}' should look like L1-E")))?;
        Ok(Direction { src: a.parse()?, tgt: b.parse()? })
    }
}

/// Parses a comma-separated direction list such as `L1-E,E-L1`.
pub fn parse_directions(s: &str) -> Result<Vec<Direction>> {
    let dirs: Vec<Direction> = s.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.trim().parse()).collect::<Result<_>>()?;
    if dirs.is_empty() {
        return Err(Error::Config("empty language-pair list".into()));
    }
    Ok(dirs)
}

/// Languages touched by `directions`, in first-seen order.
pub fn languages_of(directions: &[Direction]) -> Vec<Lang> {
    let mut out = Vec::new();
    for d in directions {
        for l in [d.src, d.tgt] {
            if !out.contains(&l) {
                out.push(l);
            }
        }
    }
    out
}

/// Vocabulary covering every surface token of `langs`, with target tags when
/// `tagged` and `<len_1..l_max>` for source-token conditioning.
pub fn synthetic_vocabulary(spec: &SyntheticSpec, langs: &[Lang], tagged: bool, len_tokens: Option<usize>) -> Result<Vocabulary> {
    let mut sorted = langs.to_vec();
    sorted.sort();
    let names: Vec<String> = if tagged { sorted.iter().map(Lang::to_string).collect() } else { Vec::new() };
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let tokens: Vec<String> = sorted.iter().flat_map(|&l| spec.surface_vocabulary(l)).collect();
    Vocabulary::build(&names, len_tokens, tokens.iter().map(String::as_str))
}

/// Turns token pairs into annotated examples for `mode`. `tag` is the
/// target-language tag to prepend, if any. Over-long targets are dropped and
/// counted.
pub fn make_examples(
    pairs: &[(Vec<String>, Vec<String>)],
    tag: Option<&str>,
    vocab: &Vocabulary,
    mode: LengthMode,
    l_max: usize,
) -> Result<(Vec<Example>, usize)> {
    let mut out = Vec::with_capacity(pairs.len());
    let mut dropped = 0;
    for (src, tgt) in pairs {
        let ex = Example::new(vocab.encode(src), vocab.encode(tgt));
        if ex.tgt_ids.is_empty() {
            return Err(Error::data("empty target in training data"));
        }
        let Ok(mut ex) = annotate_length(ex, l_max) else {
            dropped += 1;
            continue;
        };
        if let Some(t) = tag {
            ex = add_language_tag(ex, vocab, t)?;
        }
        if mode == LengthMode::SourceToken {
            ex = add_length_token(ex, vocab)?;
        }
        out.push(ex);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} examples with target length > {l_max}");
    }
    Ok((out, dropped))
}

/// How each sentence's target length is chosen at decoding time.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslateOptions {
    pub length: LengthRequest,
    /// Target language; required when the vocabulary carries language tags.
    pub target_lang: Option<String>,
    /// Per-sentence continuation budgets (`None` entries are unlimited);
    /// a single entry applies to every sentence.
    pub budgets: Option<Vec<Option<usize>>>,
    pub gamma: f64,
    pub beam: usize,
    /// Per-sentence `J` overriding the ratio of a soft or hard request.
    pub explicit_lengths: Option<Vec<usize>>,
}

impl Default for TranslateOptions {
    fn default() -> Self {
        TranslateOptions {
            length: LengthRequest::None,
            target_lang: None,
            budgets: None,
            gamma: 0.0,
            beam: 1,
            explicit_lengths: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub tokens: Vec<String>,
    /// `J` used for this sentence, if any.
    pub target_len: Option<usize>,
    pub capped: bool,
    pub continuation_count: usize,
    pub log_prob: f64,
}

/// A trained model with its vocabulary.
#[derive(Debug, Clone)]
pub struct System<T> {
    pub model: TransformerModel<T>,
    pub vocab: Vocabulary,
}

impl<T: Scalar> System<T> {
    pub fn new(model: TransformerModel<T>, vocab: Vocabulary) -> Result<Self> {
        if model.config().vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "model expects {} vocabulary entries, vocabulary has {}",
                model.config().vocab_size,
                vocab.len()
            )));
        }
        Ok(System { model, vocab })
    }

    pub fn tagged(&self) -> bool {
        self.vocab.first_corpus_id() > 4 + self.vocab.max_len_token()
    }

    pub fn mode(&self) -> LengthMode {
        self.model.config().length_mode
    }

    /// Per-sentence target lengths for `request`; `references` feeds the oracle.
    pub fn target_lengths(
        &self,
        sources: &[Vec<String>],
        request: LengthRequest,
        references: Option<&[Vec<String>]>,
    ) -> Result<Vec<Option<usize>>> {
        match request {
            LengthRequest::None => Ok(vec![None; sources.len()]),
            LengthRequest::Soft(r) | LengthRequest::Hard(r) => Ok(sources
                .iter()
                .map(|s| Some(compute_target_length(Example::new(self.vocab.encode(s), vec![]).source_length(&self.vocab), r)))
                .collect()),
            LengthRequest::Oracle => {
                let refs = references.ok_or_else(|| Error::Config("oracle lengths need reference sentences".into()))?;
                if refs.len() != sources.len() {
                    return Err(Error::data(format!("{} sources vs {} references", sources.len(), refs.len())));
                }
                refs.iter()
                    .map(|r| if r.is_empty() { Err(Error::data("empty reference for oracle length")) } else { Ok(Some(r.len())) })
                    .collect()
            }
        }
    }

    /// Encoder input ids (without EOS) for one source sentence.
    pub fn source_ids(&self, tokens: &[String], target_lang: Option<&str>, target_len: Option<usize>) -> Result<Vec<usize>> {
        let mut ex = Example::new(self.vocab.encode(tokens), vec![]);
        if ex.src_ids.is_empty() {
            return Err(Error::data("empty source sentence"));
        }
        ex.target_length = target_len;
        if self.tagged() {
            let lang = target_lang.ok_or_else(|| Error::Config("this system is multilingual: a target language is required".into()))?;
            ex = add_language_tag(ex, &self.vocab, lang)?;
        }
        if self.mode() == LengthMode::SourceToken {
            ex = add_length_token(ex, &self.vocab).map_err(|e| Error::Constraint(e.to_string()))?;
        }
        if self.mode() != LengthMode::None && target_len.is_none() {
            return Err(Error::Constraint(format!("length mode {} needs a target length", self.mode())));
        }
        Ok(ex.src_ids)
    }

    pub fn translate(
        &self,
        sources: &[Vec<String>],
        references: Option<&[Vec<String>]>,
        opts: &TranslateOptions,
    ) -> Result<Vec<Translation>> {
        let lengths = match (&opts.explicit_lengths, opts.length) {
            (Some(js), LengthRequest::Soft(_) | LengthRequest::Hard(_)) => {
                if js.len() != sources.len() {
                    return Err(Error::Config(format!("{} target lengths for {} sentences", js.len(), sources.len())));
                }
                js.iter().map(|&j| Some(j)).collect()
            }
            _ => self.target_lengths(sources, opts.length, references)?,
        };
        let budgets: Vec<Option<usize>> = match &opts.budgets {
            None => vec![None; sources.len()],
            Some(b) if b.len() == 1 => vec![b[0]; sources.len()],
            Some(b) if b.len() == sources.len() => b.clone(),
            Some(b) => return Err(Error::Config(format!("{} budgets for {} sentences", b.len(), sources.len()))),
        };
        let with_complexity = opts.budgets.is_some() || opts.gamma > 0.0;
        let mut ids = Vec::with_capacity(sources.len());
        let mut constraints = Vec::with_capacity(sources.len());
        for (i, s) in sources.iter().enumerate() {
            ids.push(self.source_ids(s, opts.target_lang.as_deref(), lengths[i])?);
            let length = match (opts.length, lengths[i]) {
                (LengthRequest::Hard(_), Some(j)) => LengthConstraint::Hard(j),
                (_, Some(j)) => LengthConstraint::Soft(j),
                (_, None) => LengthConstraint::None,
            };
            let complexity = with_complexity.then_some(ComplexityBudget { budget: budgets[i], gamma: opts.gamma });
            constraints.push(Constraint { length, complexity });
        }
        let hyps = self.decode(&ids, &constraints, opts.beam)?;
        Ok(hyps
            .into_iter()
            .zip(lengths)
            .map(|(h, j)| Translation {
                tokens: self.vocab.decode(h.output()),
                target_len: j,
                capped: h.capped,
                continuation_count: h.continuation_count,
                log_prob: h.log_prob,
            })
            .collect())
    }

    /// Best hypothesis per source under its constraint.
    pub fn decode(&self, sources: &[Vec<usize>], constraints: &[Constraint], beam: usize) -> Result<Vec<Hypothesis>> {
        let classes = TokenClasses::from_vocab(&self.vocab);
        if beam <= 1 {
            greedy_decode(&self.model, &classes, sources, constraints)
        } else {
            beam_search(&self.model, &classes, sources, constraints, beam)?
                .into_iter()
                .map(|mut n| if n.is_empty() { Err(Error::Constraint("beam search returned no hypothesis".into())) } else { Ok(n.swap_remove(0)) })
                .collect()
        }
    }
}
