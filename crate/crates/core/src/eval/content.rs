use serde::Serialize;

use crate::data::synth::{compress, decode_tokens, detect_language, Lang};
use crate::error::{Error, Result};

/// Content-preservation scores for pivot-language hypotheses.
///
/// `exact`, `recall`, `precision` and the prefix/suffix recalls are
/// per-sentence means over hypotheses that are entirely in the pivot
/// language; `language_validity` is the fraction of such hypotheses.
/// `exact_overall` counts invalid hypotheses as misses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContentMetrics {
    pub sentences: usize,
    pub valid: usize,
    pub exact: f64,
    pub exact_overall: f64,
    pub recall: f64,
    pub precision: f64,
    pub language_validity: f64,
    /// Recall of the first half of each reference.
    pub prefix_recall: f64,
    /// Recall of the last half of each reference.
    pub suffix_recall: f64,
}

/// Content symbols of a source sentence in any synthetic language; tags and
/// other non-content tokens are skipped.
pub fn source_content(tokens: &[impl AsRef<str>]) -> Result<Vec<usize>> {
    let content: Vec<&str> =
        tokens.iter().map(AsRef::as_ref).filter(|t| !(t.starts_with('<') && t.ends_with('>'))).collect();
    let lang = detect_language(&content).ok_or_else(|| Error::data("source has no synthetic-language tokens"))?;
    decode_tokens(&content, lang).map_err(|e| Error::data(e.to_string()))
}

/// Reference content for a length budget of `j` tokens: the source content
/// with its least salient symbols removed until at most `j` remain.
pub fn budget_reference(content: &[usize], budget: Option<usize>) -> Vec<usize> {
    match budget {
        Some(j) => compress(content, j.min(content.len())),
        None => content.to_vec(),
    }
}

/// Every content sequence a pivot rendering of exactly `j` tokens can carry
/// without dropping a more salient symbol before a less salient one: `m`
/// symbols with `ceil(j/2) <= m <= min(k, j)`, most symbols first. Without a
/// budget, or when `j` exceeds `2k`, only the full content is admissible.
pub fn admissible_references(content: &[usize], budget: Option<usize>) -> Vec<Vec<usize>> {
    let k = content.len();
    match budget {
        Some(j) if j <= 2 * k => (j.div_ceil(2)..=j.min(k)).rev().map(|m| compress(content, m)).collect(),
        _ => vec![content.to_vec()],
    }
}

fn recall_of(part: &[usize], hyp: &[usize]) -> Option<f64> {
    (!part.is_empty()).then(|| part.iter().filter(|c| hyp.contains(c)).count() as f64 / part.len() as f64)
}

fn multiset_overlap(a: &[usize], b: &[usize]) -> usize {
    let mut rest = b.to_vec();
    a.iter()
        .filter(|c| match rest.iter().position(|x| x == *c) {
            Some(i) => {
                rest.swap_remove(i);
                true
            }
            None => false,
        })
        .count()
}

/// Scores hypotheses against per-sentence reference sets: a hypothesis is
/// exact when its content equals any member, and the remaining scores use the
/// first member. A set with one element is the usual single reference.
pub fn content_metrics(hypotheses: &[Vec<String>], references: &[Vec<Vec<usize>>]) -> Result<ContentMetrics> {
    if hypotheses.len() != references.len() {
        return Err(Error::data(format!("{} hypotheses vs {} references", hypotheses.len(), references.len())));
    }
    if hypotheses.is_empty() {
        return Err(Error::Empty { op: "content_metrics" });
    }
    let (mut valid, mut exact, mut recall, mut precision) = (0usize, 0usize, 0.0, 0.0);
    let (mut pre, mut pre_n, mut suf, mut suf_n) = (0.0, 0usize, 0.0, 0usize);
    for (h, set) in hypotheses.iter().zip(references) {
        let r = set.first().ok_or_else(|| Error::data("empty reference set"))?;
        let Ok(hc) = decode_tokens(h, Lang::Pivot) else { continue };
        valid += 1;
        exact += usize::from(set.contains(&hc));
        let overlap = multiset_overlap(&hc, r) as f64;
        recall += if r.is_empty() { 1.0 } else { overlap / r.len() as f64 };
        precision += if hc.is_empty() { f64::from(u8::from(r.is_empty())) } else { overlap / hc.len() as f64 };
        let half = r.len() / 2;
        if let Some(x) = recall_of(&r[..half], &hc) {
            pre += x;
            pre_n += 1;
        }
        if let Some(x) = recall_of(&r[r.len() - half..], &hc) {
            suf += x;
            suf_n += 1;
        }
    }
    let n = hypotheses.len();
    let mean = |x: f64, d: usize| if d == 0 { 0.0 } else { x / d as f64 };
    Ok(ContentMetrics {
        sentences: n,
        valid,
        exact: mean(exact as f64, valid),
        exact_overall: exact as f64 / n as f64,
        recall: mean(recall, valid),
        precision: mean(precision, valid),
        language_validity: valid as f64 / n as f64,
        prefix_recall: mean(pre, pre_n),
        suffix_recall: mean(suf, suf_n),
    })
}

/// Mean `|len(hyp) - J|`.
pub fn avg_length_distance(hyp_lengths: &[usize], targets: &[usize]) -> Result<f64> {
    if hyp_lengths.len() != targets.len() {
        return Err(Error::data(format!("{} hypotheses vs {} targets", hyp_lengths.len(), targets.len())));
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let total: usize = hyp_lengths.iter().zip(targets).map(|(&h, &j)| h.abs_diff(j)).sum();
    Ok(total as f64 / targets.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::render;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn rerendering_is_exact() {
        let c = vec![4, 9, 1];
        let hyp = render(&c, Lang::Pivot, &[false, true, false]);
        let m = content_metrics(&[hyp], &[vec![c]]).unwrap();
        assert_eq!((m.exact, m.recall, m.precision, m.language_validity), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn half_dropped_and_wrong_language() {
        let m = content_metrics(&[s(&["E1", "E2"])], &[vec![vec![1, 2, 3, 4]]]).unwrap();
        assert_eq!((m.exact, m.recall, m.precision), (0.0, 0.5, 1.0));
        assert_eq!((m.prefix_recall, m.suffix_recall), (1.0, 0.0));
        let m = content_metrics(&[s(&["L1_1", "L1_2"]), s(&["E5"])], &[vec![vec![1, 2]], vec![vec![5]]]).unwrap();
        assert_eq!(m.language_validity, 0.5);
        assert_eq!(m.exact, 1.0);
        assert_eq!(m.exact_overall, 0.5);
    }

    #[test]
    fn budget_reference_keeps_latest_symbols() {
        assert_eq!(budget_reference(&[1, 2, 3, 4, 5], Some(3)), [3, 4, 5]);
        assert_eq!(budget_reference(&[1, 2], Some(3)), [1, 2]);
        assert_eq!(source_content(&s(&["<2E>", "L2_7", "L2_3"])).unwrap(), [7, 3]);
    }

    #[test]
    fn admissible_sets() {
        let c = [1, 2, 3, 4, 5];
        assert_eq!(admissible_references(&c, Some(4)), [vec![2, 3, 4, 5], vec![3, 4, 5], vec![4, 5]]);
        assert_eq!(admissible_references(&c, Some(7)), [vec![1, 2, 3, 4, 5], vec![2, 3, 4, 5]]);
        assert_eq!(admissible_references(&c, Some(11)), [c.to_vec()]);
        assert_eq!(admissible_references(&c, None), [c.to_vec()]);
        let m = content_metrics(&[s(&["E4a@@", "E4b", "E5"]), s(&["E1", "E5"])], &[admissible_references(&c, Some(3)), admissible_references(&c, Some(2))]).unwrap();
        assert_eq!(m.exact, 0.5);
    }

    #[test]
    fn length_distance() {
        assert_eq!(avg_length_distance(&[3, 4], &[3, 4]).unwrap(), 0.0);
        assert_eq!(avg_length_distance(&[8, 6], &[8, 8]).unwrap(), 1.0);
    }
}
