use std::collections::BTreeSet;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tag outside every entity.
pub const OUTSIDE_TAG: &str = "O";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Scheme {
    /// Micro-averaged over positions whose gold or predicted tag is not `O`.
    TokenMicro,
    /// Exact-match entity spans decoded from BIO tags.
    EntitySpan,
}

impl FromStr for F1Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token_micro" => Ok(F1Scheme::TokenMicro),
            "entity_span" => Ok(F1Scheme::EntitySpan),
            other => Err(Error::config(format!("unknown F1 scheme {other:?}"))),
        }
    }
}

/// A decoded entity: type and half-open token range.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Span {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// Decodes BIO tags into spans. An `I-X` that does not continue an `X`
/// span opens a new one, as if it were `B-X`.
pub fn bio_spans(tags: &[String]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, label) = match tag.split_once('-') {
            Some((p @ ("B" | "I"), l)) => (p, l),
            _ => ("O", ""),
        };
        let continues = prefix == "I" && open.as_ref().is_some_and(|s| s.label == label);
        if continues {
            open.as_mut().expect("checked").end = i + 1;
            continue;
        }
        spans.extend(open.take());
        match prefix {
            "B" => open = Some(Span { label: label.to_string(), start: i, end: i + 1 }),
            "I" => {
                log::debug!("stray {tag} at position {i} treated as a span start");
                open = Some(Span { label: label.to_string(), start: i, end: i + 1 });
            }
            _ => {}
        }
    }
    spans.extend(open);
    spans
}

/// Precision/recall F1 from counts; 1.0 when there is nothing to find and
/// nothing was predicted.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// F1 of predicted against gold tag sequences.
pub fn f1_score(predictions: &[Vec<String>], gold: &[Vec<String>], scheme: F1Scheme) -> Result<f64> {
    if predictions.len() != gold.len() {
        return Err(Error::input(format!("{} predicted sequences for {} gold sequences", predictions.len(), gold.len())));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (k, (p, g)) in predictions.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::input(format!("sequence {k}: {} predicted tags for {} gold tags", p.len(), g.len())));
        }
        match scheme {
            F1Scheme::TokenMicro => {
                for (pt, gt) in p.iter().zip(g) {
                    let (po, go) = (pt == OUTSIDE_TAG, gt == OUTSIDE_TAG);
                    if pt == gt {
                        tp += usize::from(!go);
                    } else {
                        fp += usize::from(!po);
                        fn_ += usize::from(!go);
                    }
                }
            }
            F1Scheme::EntitySpan => {
                let ps: BTreeSet<Span> = bio_spans(p).into_iter().collect();
                let gs: BTreeSet<Span> = bio_spans(g).into_iter().collect();
                let hit = ps.intersection(&gs).count();
                tp += hit;
                fp += ps.len() - hit;
                fn_ += gs.len() - hit;
            }
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn examples() {
        let g = vec![tags("B-ENT I-ENT O B-ENT O")];
        assert_eq!(f1_score(&g, &g, F1Scheme::EntitySpan).unwrap(), 1.0);
        assert_eq!(f1_score(&g, &g, F1Scheme::TokenMicro).unwrap(), 1.0);
        let none = vec![tags("O O O O O")];
        assert_eq!(f1_score(&none, &g, F1Scheme::EntitySpan).unwrap(), 0.0);
        assert_eq!(f1_score(&none, &g, F1Scheme::TokenMicro).unwrap(), 0.0);
        // One of two gold spans found, nothing spurious: P=1, R=1/2.
        let p = vec![tags("B-ENT I-ENT O O O")];
        assert!((f1_score(&p, &g, F1Scheme::EntitySpan).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(f1_score(&p, &[], F1Scheme::EntitySpan).is_err());
        assert!(f1_score(&[tags("O")], &[tags("O O")], F1Scheme::TokenMicro).is_err());
    }

    #[test]
    fn stray_inside_tag_is_repaired() {
        assert_eq!(bio_spans(&tags("O I-ENT I-ENT")), vec![Span { label: "ENT".into(), start: 1, end: 3 }]);
        let g = vec![tags("O B-ENT I-ENT")];
        assert_eq!(f1_score(&[tags("O I-ENT I-ENT")], &g, F1Scheme::EntitySpan).unwrap(), 1.0);
        assert_eq!(bio_spans(&tags("B-A I-B")).len(), 2);
    }

    #[test]
    fn partial_span_is_a_miss() {
        let g = vec![tags("B-ENT I-ENT I-ENT")];
        let p = vec![tags("B-ENT I-ENT O")];
        assert_eq!(f1_score(&p, &g, F1Scheme::EntitySpan).unwrap(), 0.0);
        assert!((f1_score(&p, &g, F1Scheme::TokenMicro).unwrap() - 0.8).abs() < 1e-15);
    }
}
