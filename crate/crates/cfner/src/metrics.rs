//! Span extraction and span-level micro/macro F1.

use std::collections::BTreeSet;

use crate::corpus::Tag;

/// An entity span: (type, start, end-exclusive).
pub type Span = (String, usize, usize);

/// Maximal `B-`-initiated runs of a valid BIO sequence.
pub fn extract_spans(tags: &[Tag]) -> BTreeSet<Span> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::Begin(t) => {
                if let Some((ty, start)) = open.take() {
                    spans.insert((ty, start, i));
                }
                open = Some((t.clone(), i));
            }
            Tag::Inside(t) => match &open {
                Some((ty, _)) if ty == t => {}
                _ => {
                    // dangling I- treated as span start, mirroring BIO repair
                    if let Some((ty, start)) = open.take() {
                        spans.insert((ty, start, i));
                    }
                    open = Some((t.clone(), i));
                }
            },
            Tag::Outside => {
                if let Some((ty, start)) = open.take() {
                    spans.insert((ty, start, i));
                }
            }
        }
    }
    if let Some((ty, start)) = open {
        spans.insert((ty, start, tags.len()));
    }
    spans
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 && (fp > 0 || fn_ > 0) {
        return 0.0;
    }
    if tp == 0 {
        return 0.0; // 0/0 convention
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

fn pooled_counts(
    pred: &[BTreeSet<Span>],
    gold: &[BTreeSet<Span>],
    type_filter: Option<&str>,
) -> (usize, usize, usize) {
    let keep = |s: &Span| type_filter.map(|t| s.0 == t).unwrap_or(true);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold.iter()) {
        for s in p.iter().filter(|s| keep(s)) {
            if g.contains(s) {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        for s in g.iter().filter(|s| keep(s)) {
            if !p.contains(s) {
                fn_ += 1;
            }
        }
    }
    (tp, fp, fn_)
}

/// F1 over pooled TP/FP/FN across all types and sentences.
pub fn micro_f1(pred: &[BTreeSet<Span>], gold: &[BTreeSet<Span>]) -> f64 {
    let (tp, fp, fn_) = pooled_counts(pred, gold, None);
    f1_from_counts(tp, fp, fn_)
}

/// Unweighted mean of per-type F1 over `types`; a type with no gold and
/// no predicted spans contributes 0.
pub fn macro_f1(pred: &[BTreeSet<Span>], gold: &[BTreeSet<Span>], types: &[String]) -> f64 {
    if types.is_empty() {
        return 0.0;
    }
    types
        .iter()
        .map(|t| {
            let (tp, fp, fn_) = pooled_counts(pred, gold, Some(t));
            f1_from_counts(tp, fp, fn_)
        })
        .sum::<f64>()
        / types.len() as f64
}

/// Per-type F1 table.
pub fn per_type_f1(
    pred: &[BTreeSet<Span>],
    gold: &[BTreeSet<Span>],
    types: &[String],
) -> Vec<(String, f64)> {
    types
        .iter()
        .map(|t| {
            let (tp, fp, fn_) = pooled_counts(pred, gold, Some(t));
            (t.clone(), f1_from_counts(tp, fp, fn_))
        })
        .collect()
}
