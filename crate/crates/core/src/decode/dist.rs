//! Probability-space masks applied before every search decision.

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::tokens::EOS;

/// A normalized distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedDistribution(Vec<f64>);

impl MaskedDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    fn normalized(mut w: Vec<f64>) -> Option<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= total);
        Some(MaskedDistribution(w))
    }

    fn uniform(support: impl Fn(usize) -> bool, n: usize) -> Option<Self> {
        Self::normalized((0..n).map(|i| if support(i) { 1.0 } else { 0.0 }).collect())
    }

    fn one_hot(n: usize, at: usize) -> Self {
        let mut w = vec![0.0; n];
        w[at] = 1.0;
        MaskedDistribution(w)
    }
}

/// Which ids may be generated and which carry the continuation marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenClasses {
    pub allowed: Vec<bool>,
    pub continuation: Vec<bool>,
}

impl TokenClasses {
    pub fn from_vocab(vocab: &Vocabulary) -> Self {
        TokenClasses {
            allowed: vocab.output_mask(),
            continuation: (0..vocab.len()).map(|i| vocab.is_continuation(i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.allowed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.allowed.is_empty()
    }
}

/// Hard length rule at step `j` for target length `J`: before the `J`-th
/// token is emitted (`j <= J`) EOS gets probability 0 and the rest is
/// renormalized; at `j = J + 1` EOS gets probability 1.
///
/// If all mass sat on EOS while `j <= J`, falls back to uniform over the
/// non-EOS tokens.
pub fn eos_mask_renormalize(p: &[f64], j: usize, target_len: usize) -> MaskedDistribution {
    eos_mask_with_fallback(p, j, target_len, |i| i != EOS).expect("non-empty vocabulary has a non-EOS token")
}

fn eos_mask_with_fallback(
    p: &[f64],
    j: usize,
    target_len: usize,
    fallback: impl Fn(usize) -> bool,
) -> Option<MaskedDistribution> {
    if j > target_len {
        return Some(MaskedDistribution::one_hot(p.len(), EOS));
    }
    let mut w = p.to_vec();
    w[EOS] = 0.0;
    MaskedDistribution::normalized(w).or_else(|| {
        log::warn!("EOS held all probability mass at step {j} of {target_len}; falling back to uniform");
        MaskedDistribution::uniform(|i| i != EOS && fallback(i), p.len())
    })
}

/// Continuation-token budget: every continuation probability is scaled by
/// `exp(-gamma)`, and once `used >= budget` continuations get probability 0.
/// `budget = None` means unlimited.
///
/// If no mass survives, falls back to uniform over word-final non-EOS tokens.
pub fn complexity_mask(p: &[f64], continuation: &[bool], used: usize, budget: Option<usize>, gamma: f64) -> MaskedDistribution {
    complexity_with_fallback(p, continuation, used, budget, gamma, |_| true)
        .unwrap_or_else(|| MaskedDistribution::one_hot(p.len(), EOS))
}

fn complexity_with_fallback(
    p: &[f64],
    continuation: &[bool],
    used: usize,
    budget: Option<usize>,
    gamma: f64,
    allowed: impl Fn(usize) -> bool,
) -> Option<MaskedDistribution> {
    let exhausted = budget.is_some_and(|b| used >= b);
    let factor = (-gamma).exp();
    let w: Vec<f64> = p
        .iter()
        .zip(continuation)
        .map(|(&x, &c)| match (c, exhausted) {
            (true, true) => 0.0,
            (true, false) => x * factor,
            (false, _) => x,
        })
        .collect();
    MaskedDistribution::normalized(w).or_else(|| {
        log::warn!("all probability mass on continuation tokens; falling back to uniform over word-final tokens");
        MaskedDistribution::uniform(|i| !continuation[i] && i != EOS && allowed(i), p.len())
    })
}

/// The length side of a [`Constraint`](super::Constraint) at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LengthRule {
    /// EOS free until step `cap + 1`, where it is forced.
    Free { cap: usize },
    Exact(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct StepRule {
    pub length: LengthRule,
    pub budget: Option<usize>,
    pub gamma: f64,
}

/// Full mask pipeline for one hypothesis: generation mask, complexity, then
/// the length rule (last, so EOS mass is exactly 0 or 1 under a hard length).
pub(crate) fn constrain(
    logp: impl Iterator<Item = f64>,
    classes: &TokenClasses,
    j: usize,
    used: usize,
    rule: &StepRule,
) -> Result<MaskedDistribution> {
    let n = classes.len();
    let w: Vec<f64> = logp.zip(&classes.allowed).map(|(lp, &ok)| if ok { lp.exp() } else { 0.0 }).collect();
    let allowed = |i: usize| classes.allowed[i];
    let p = MaskedDistribution::normalized(w)
        .or_else(|| MaskedDistribution::uniform(allowed, n))
        .ok_or_else(|| Error::Constraint("the vocabulary has no generatable token".into()))?;
    let exhausted = rule.budget.is_some_and(|b| used >= b);
    let admissible = |i: usize| allowed(i) && !(exhausted && classes.continuation[i]);
    let p = if rule.budget.is_some() || rule.gamma > 0.0 {
        complexity_with_fallback(p.probs(), &classes.continuation, used, rule.budget, rule.gamma, allowed)
            .ok_or_else(|| collapse(rule, "no word-final token remains once the budget is spent"))?
    } else {
        p
    };
    match rule.length {
        LengthRule::Exact(big_j) => eos_mask_with_fallback(p.probs(), j, big_j, admissible)
            .ok_or_else(|| collapse(rule, "no admissible non-EOS token before the target length")),
        LengthRule::Free { cap } if j > cap => Ok(MaskedDistribution::one_hot(n, EOS)),
        LengthRule::Free { .. } => Ok(p),
    }
}

fn collapse(rule: &StepRule, why: &str) -> Error {
    let length = match rule.length {
        LengthRule::Exact(j) => format!("hard_length({j})"),
        LengthRule::Free { cap } => format!("free length (cap {cap})"),
    };
    let budget = rule.budget.map_or("unlimited".to_string(), |b| b.to_string());
    Error::Constraint(format!("search collapsed under {length} with complexity budget {budget}: {why}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eos_masking_examples() {
        // ids: 0 pad, 1 unk, 2 bos, 3 eos, 4 a, 5 b
        let p = [0.0, 0.0, 0.0, 0.5, 0.25, 0.25];
        assert_eq!(eos_mask_renormalize(&p, 1, 3).probs(), [0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
        assert_eq!(eos_mask_renormalize(&p, 4, 3).probs(), [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let q = [0.0, 0.0, 0.0, 0.0, 0.75, 0.25];
        assert_eq!(eos_mask_renormalize(&q, 2, 3).probs(), q);
        let all_eos = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let fb = eos_mask_renormalize(&all_eos, 1, 2);
        assert_eq!(fb.probs()[EOS], 0.0);
        assert!((fb.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complexity_examples() {
        let cont = [false, false, false, false, true, false];
        let p = [0.0, 0.0, 0.0, 0.2, 0.5, 0.3];
        assert_eq!(complexity_mask(&p, &cont, 0, None, 0.0).probs(), p);
        let m = complexity_mask(&p, &cont, 2, Some(2), 0.0);
        assert_eq!(m.probs()[4], 0.0);
        assert!((m.probs()[5] - 0.6).abs() < 1e-12);
        let soft = complexity_mask(&p, &cont, 0, None, 1.0);
        assert!(soft.probs()[4] < 0.5);
        let only_cont = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let fb = complexity_mask(&only_cont, &cont, 0, Some(0), 0.0);
        assert_eq!((fb.probs()[4], fb.probs()[EOS]), (0.0, 0.0));
        assert!((fb.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constrain_reports_collapse() {
        let classes = TokenClasses {
            allowed: vec![false, false, false, true, true],
            continuation: vec![false, false, false, false, true],
        };
        let rule = StepRule { length: LengthRule::Exact(2), budget: Some(0), gamma: 0.0 };
        let err = constrain([0.0f64; 5].into_iter().map(|x| x - 5f64.ln()), &classes, 1, 0, &rule).unwrap_err();
        assert!(matches!(err, Error::Constraint(_)));
    }
}
