//! Evaluation metrics: word error rate, intent/slot scores, exact match.
//!
//! # Slot F1 with partial credit
//!
//! Slot filling is scored with partial credit derived from word- and
//! character-level edit distances. For a predicted slot `p` paired with a
//! reference slot `g` of the same type:
//!
//! ```text
//! credit(p, g) = ((1 - dw) + (1 - dc)) / 2
//! dw = word_edit_distance(p.value, g.value) / max(|p.value|, |g.value|)   (words)
//! dc = char_edit_distance(p.value, g.value) / max(len(p), len(g))         (chars, space-joined)
//! ```
//!
//! Within each utterance, same-typed prediction/reference slots are paired
//! greedily by highest credit, each slot used at most once. Summed credits
//! are the true positives; precision divides by the number of predicted
//! slots, recall by the number of reference slots, and scores are accumulated
//! over the corpus before the F1 is formed (micro-average). This fixes a
//! documented, test-locked definition; it does not claim byte-equivalence
//! with any external scorer.

use crate::labels::{serialize_to_string, tree_skeleton, Annotation, ParseTree, SemanticFrame};
use crate::{Error, Result};

/// Levenshtein distance over any comparable slice.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (n, m) = (a.len(), b.len());
    if n == 0 {
        return m;
    }
    if m == 0 {
        return n;
    }
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            cur[j] = (prev[j] + 1).min(cur[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// Word error rate as a percentage: `100 * edit_distance / len(ref)`.
pub fn wer(hyp: &[String], reference: &[String]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("wer reference".into()));
    }
    Ok(100.0 * edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

/// Corpus-level WER: total edits over total reference words.
pub fn corpus_wer(pairs: &[(Vec<String>, Vec<String>)]) -> Result<f64> {
    let mut edits = 0usize;
    let mut ref_words = 0usize;
    for (hyp, reference) in pairs {
        if reference.is_empty() {
            return Err(Error::EmptyInput("wer reference".into()));
        }
        edits += edit_distance(hyp, reference);
        ref_words += reference.len();
    }
    if ref_words == 0 {
        return Err(Error::EmptyInput("wer corpus".into()));
    }
    Ok(100.0 * edits as f64 / ref_words as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SluScores {
    /// Exact intent-match rate, percent.
    pub ic_accuracy: f64,
    /// Partial-credit slot F1, percent.
    pub slu_f1: f64,
}

fn slot_credit(p: &(String, Vec<String>), g: &(String, Vec<String>)) -> f64 {
    debug_assert_eq!(p.0, g.0);
    let dw = edit_distance(&p.1, &g.1) as f64 / p.1.len().max(g.1.len()).max(1) as f64;
    let ps = p.1.join(" ");
    let gs = g.1.join(" ");
    let pc: Vec<char> = ps.chars().collect();
    let gc: Vec<char> = gs.chars().collect();
    let dc = edit_distance(&pc, &gc) as f64 / pc.len().max(gc.len()).max(1) as f64;
    ((1.0 - dw) + (1.0 - dc)) / 2.0
}

/// Intent accuracy and partial-credit slot F1 over aligned frame lists.
pub fn slu_metrics(hyps: &[SemanticFrame], refs: &[SemanticFrame]) -> Result<SluScores> {
    if hyps.len() != refs.len() {
        return Err(Error::shape(
            "slu_metrics",
            format!("{} refs", refs.len()),
            format!("{} hyps", hyps.len()),
        ));
    }
    if refs.is_empty() {
        return Err(Error::EmptyInput("slu_metrics".into()));
    }

    let mut intent_hits = 0usize;
    let mut tp = 0.0f64;
    let mut n_pred = 0usize;
    let mut n_ref = 0usize;

    for (hyp, re) in hyps.iter().zip(refs) {
        if hyp.intent == re.intent {
            intent_hits += 1;
        }
        n_pred += hyp.slots.len();
        n_ref += re.slots.len();

        // Greedy same-type pairing by highest credit.
        let mut pred_used = vec![false; hyp.slots.len()];
        let mut ref_used = vec![false; re.slots.len()];
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for (pi, p) in hyp.slots.iter().enumerate() {
                if pred_used[pi] {
                    continue;
                }
                for (gi, g) in re.slots.iter().enumerate() {
                    if ref_used[gi] || p.0 != g.0 {
                        continue;
                    }
                    let c = slot_credit(p, g);
                    if best.map_or(true, |(b, _, _)| c > b) {
                        best = Some((c, pi, gi));
                    }
                }
            }
            match best {
                Some((c, pi, gi)) if c > 0.0 => {
                    pred_used[pi] = true;
                    ref_used[gi] = true;
                    tp += c;
                }
                _ => break,
            }
        }
    }

    let precision = if n_pred == 0 { 0.0 } else { tp / n_pred as f64 };
    let recall = if n_ref == 0 { 0.0 } else { tp / n_ref as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(SluScores {
        ic_accuracy: 100.0 * intent_hits as f64 / refs.len() as f64,
        slu_f1: 100.0 * f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmScores {
    /// Exact serialized-string match rate, percent.
    pub em: f64,
    /// Structural match rate ignoring word leaves, percent.
    pub em_tree: f64,
}

/// Exact-match and structure-match rates. A `None` hypothesis is a decode
/// or parse failure and counts as a mismatch on both metrics.
pub fn em_metrics(hyps: &[Option<ParseTree>], refs: &[ParseTree]) -> Result<EmScores> {
    if hyps.len() != refs.len() {
        return Err(Error::shape(
            "em_metrics",
            format!("{} refs", refs.len()),
            format!("{} hyps", hyps.len()),
        ));
    }
    if refs.is_empty() {
        return Err(Error::EmptyInput("em_metrics".into()));
    }
    let mut em = 0usize;
    let mut em_tree = 0usize;
    for (hyp, re) in hyps.iter().zip(refs) {
        let Some(hyp) = hyp else { continue };
        let hs = serialize_to_string(&Annotation::Tree(hyp.clone()))?;
        let rs = serialize_to_string(&Annotation::Tree(re.clone()))?;
        if hs == rs {
            em += 1;
        }
        if tree_skeleton(hyp) == tree_skeleton(re) {
            em_tree += 1;
        }
    }
    Ok(EmScores {
        em: 100.0 * em as f64 / refs.len() as f64,
        em_tree: 100.0 * em_tree as f64 / refs.len() as f64,
    })
}
