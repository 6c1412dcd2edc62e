use std::cmp::Ordering;

use super::dist::{constrain, LengthRule, StepRule, TokenClasses};
use super::{Constraint, LengthConstraint};
use crate::error::{Error, Result};
use crate::model::{DecoderState, Memory, TransformerModel};
use crate::scalar::Scalar;
use crate::tokens::EOS;

/// Sentences encoded together; bounds the size of each decoder call.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Hypothesis {
    /// Generated ids; ends with EOS iff `finished`.
    pub tokens: Vec<usize>,
    /// Sum of log masked probabilities.
    pub log_prob: f64,
    pub continuation_count: usize,
    pub finished: bool,
    /// EOS was forced by the maximum-length cap rather than chosen.
    pub capped: bool,
}

impl Hypothesis {
    /// Tokens without the trailing EOS.
    pub fn output(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) if self.finished => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    /// Ranking score: raw log probability, or per-token average when `normalize`.
    pub fn score(&self, normalize: bool) -> f64 {
        if normalize {
            self.log_prob / self.tokens.len().max(1) as f64
        } else {
            self.log_prob
        }
    }

    fn extend(&self, token: usize, p: f64, continuation: bool, capped: bool) -> Hypothesis {
        let mut tokens = self.tokens.clone();
        tokens.push(token);
        Hypothesis {
            tokens,
            log_prob: self.log_prob + p.ln(),
            continuation_count: self.continuation_count + usize::from(continuation),
            finished: token == EOS,
            capped: capped && token == EOS,
        }
    }
}

struct Job {
    rule: StepRule,
    target_len: Option<usize>,
}

fn jobs<T: Scalar>(model: &TransformerModel<T>, sources: &[Vec<usize>], constraints: &[Constraint]) -> Result<Vec<Job>> {
    if sources.len() != constraints.len() {
        return Err(Error::Constraint(format!("{} sources but {} constraints", sources.len(), constraints.len())));
    }
    let max_len = model.config().max_seq_len;
    constraints
        .iter()
        .map(|c| {
            c.validate(max_len)?;
            let length = match c.length {
                LengthConstraint::Hard(j) => LengthRule::Exact(j),
                _ => LengthRule::Free { cap: max_len },
            };
            let (budget, gamma) = c.complexity.map_or((None, 0.0), |b| (b.budget, b.gamma));
            Ok(Job { rule: StepRule { length, budget, gamma }, target_len: c.length.target() })
        })
        .collect()
}

fn encode_chunk<T: Scalar>(model: &TransformerModel<T>, sources: &[Vec<usize>]) -> Result<Memory<T>> {
    let inputs: Vec<Vec<usize>> = sources.iter().map(|s| s.iter().copied().chain([EOS]).collect()).collect();
    model.encode(&inputs)
}

fn forced_by_cap(rule: &StepRule, j: usize) -> bool {
    matches!(rule.length, LengthRule::Free { cap } if j > cap)
}

/// Argmax decoding; ties go to the lowest token id. `sources` exclude EOS.
pub fn greedy_decode<T: Scalar>(
    model: &TransformerModel<T>,
    classes: &TokenClasses,
    sources: &[Vec<usize>],
    constraints: &[Constraint],
) -> Result<Vec<Hypothesis>> {
    let jobs = jobs(model, sources, constraints)?;
    let mut out = Vec::with_capacity(sources.len());
    for (chunk, chunk_jobs) in sources.chunks(CHUNK).zip(jobs.chunks(CHUNK)) {
        let memory = encode_chunk(model, chunk)?;
        let mut hyps = vec![Hypothesis::default(); chunk.len()];
        loop {
            let active: Vec<usize> = (0..hyps.len()).filter(|&i| !hyps[i].finished).collect();
            if active.is_empty() {
                break;
            }
            let states: Vec<DecoderState> = active
                .iter()
                .map(|&i| DecoderState { memory_row: i, prefix: hyps[i].tokens.clone(), target_len: chunk_jobs[i].target_len })
                .collect();
            let logps = model.decode_step(&memory, &states)?;
            for (&i, row) in active.iter().zip(&logps) {
                let h = &hyps[i];
                let j = h.tokens.len() + 1;
                let rule = &chunk_jobs[i].rule;
                let dist = constrain(row.iter().map(|x| x.as_f64()), classes, j, h.continuation_count, rule)?;
                let (tok, p) = dist
                    .probs()
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (t, p)| if p > best.1 { (t, p) } else { best });
                hyps[i] = h.extend(tok, p, classes.continuation[tok], forced_by_cap(rule, j));
            }
        }
        out.extend(hyps);
    }
    Ok(out)
}

/// Beam search returning up to `beam_size` finished hypotheses per source,
/// best first. Hypotheses leave the beam when they emit EOS. Ranking uses
/// raw log probability under a hard length (all candidates share it) and
/// per-token average otherwise; ties go to the lowest token ids.
pub fn beam_search<T: Scalar>(
    model: &TransformerModel<T>,
    classes: &TokenClasses,
    sources: &[Vec<usize>],
    constraints: &[Constraint],
    beam_size: usize,
) -> Result<Vec<Vec<Hypothesis>>> {
    if beam_size == 0 {
        return Err(Error::Constraint("beam size must be at least 1".into()));
    }
    let jobs = jobs(model, sources, constraints)?;
    let per_chunk = (CHUNK / beam_size).max(1);
    let mut out = Vec::with_capacity(sources.len());
    for (chunk, chunk_jobs) in sources.chunks(per_chunk).zip(jobs.chunks(per_chunk)) {
        let memory = encode_chunk(model, chunk)?;
        let mut active: Vec<Vec<Hypothesis>> = vec![vec![Hypothesis::default()]; chunk.len()];
        let mut finished: Vec<Vec<Hypothesis>> = vec![Vec::new(); chunk.len()];
        loop {
            let mut states = Vec::new();
            for (s, hyps) in active.iter().enumerate() {
                for h in hyps {
                    states.push(DecoderState { memory_row: s, prefix: h.tokens.clone(), target_len: chunk_jobs[s].target_len });
                }
            }
            if states.is_empty() {
                break;
            }
            let logps = model.decode_step(&memory, &states)?;
            let mut rows = logps.iter();
            for s in 0..chunk.len() {
                let rule = &chunk_jobs[s].rule;
                let mut candidates: Vec<(f64, usize, usize, f64)> = Vec::new();
                for (parent, h) in active[s].iter().enumerate() {
                    let row = rows.next().expect("one row per active hypothesis");
                    let j = h.tokens.len() + 1;
                    let dist = constrain(row.iter().map(|x| x.as_f64()), classes, j, h.continuation_count, rule)?;
                    for (tok, &p) in dist.probs().iter().enumerate().filter(|(_, &p)| p > 0.0) {
                        candidates.push((h.log_prob + p.ln(), parent, tok, p));
                    }
                }
                if candidates.is_empty() && !active[s].is_empty() {
                    return Err(Error::Constraint("beam search: every hypothesis was pruned by the constraints".into()));
                }
                candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
                let mut next = Vec::with_capacity(beam_size);
                for &(_, parent, tok, p) in candidates.iter().take(beam_size) {
                    let h = &active[s][parent];
                    let j = h.tokens.len() + 1;
                    let child = h.extend(tok, p, classes.continuation[tok], forced_by_cap(rule, j));
                    if child.finished {
                        finished[s].push(child);
                    } else {
                        next.push(child);
                    }
                }
                active[s] = if finished[s].len() >= beam_size { Vec::new() } else { next };
            }
        }
        for (s, mut done) in finished.into_iter().enumerate() {
            let normalize = !matches!(chunk_jobs[s].rule.length, LengthRule::Exact(_));
            done.sort_by(|a, b| {
                b.score(normalize).partial_cmp(&a.score(normalize)).unwrap_or(Ordering::Equal).then_with(|| a.tokens.cmp(&b.tokens))
            });
            done.truncate(beam_size);
            out.push(done);
        }
    }
    Ok(out)
}
