//! Answer and retrieval metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokens;
use crate::tree::{MemoryTree, NodeId};

fn counts(toks: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in toks {
        *m.entry(t.as_str()).or_default() += 1;
    }
    m
}

fn gold_tokens(gold: &str) -> Result<Vec<String>> {
    let g = tokens(gold);
    if g.is_empty() {
        return Err(Error::EmptyGold);
    }
    Ok(g)
}

/// Multiset token overlap F1 (lowercased, split on non-alphanumerics).
pub fn token_f1(prediction: &str, gold: &str) -> Result<f64> {
    let g = gold_tokens(gold)?;
    let p = tokens(prediction);
    let (pc, gc) = (counts(&p), counts(&g));
    let overlap: usize = pc.iter().map(|(t, n)| (*n).min(gc.get(t).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return Ok(0.0);
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Clipped unigram precision times the brevity penalty, one reference.
pub fn bleu1(prediction: &str, gold: &str) -> Result<f64> {
    let g = gold_tokens(gold)?;
    let p = tokens(prediction);
    if p.is_empty() {
        return Ok(0.0);
    }
    let (pc, gc) = (counts(&p), counts(&g));
    let clipped: usize = pc.iter().map(|(t, n)| (*n).min(gc.get(t).copied().unwrap_or(0))).sum();
    let precision = clipped as f64 / p.len() as f64;
    let (c, r) = (p.len() as f64, g.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(precision * bp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Set precision/recall/F1 over entity ids.
pub fn retrieval_prf<T: Ord>(predicted: &BTreeSet<T>, gold: &BTreeSet<T>) -> Result<Prf> {
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    let hit = predicted.intersection(gold).count() as f64;
    let precision = if predicted.is_empty() { 0.0 } else { hit / predicted.len() as f64 };
    let recall = hit / gold.len() as f64;
    let f1 = if hit == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(Prf { precision, recall, f1 })
}

/// One query of a leakage run: its scope and the entities it returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopedReturn {
    pub scope: NodeId,
    pub entities: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leakage {
    /// Share of queries returning at least one out-of-scope entity.
    pub query_wise: f64,
    /// Mean per-query share of out-of-scope entities (0 for empty returns).
    pub entity_wise: f64,
}

/// An entity is in scope when its owner node lies in `subtree(scope)`.
pub fn leakage(tree: &MemoryTree, run: &[ScopedReturn], owners: &BTreeMap<String, NodeId>) -> Result<Leakage> {
    if run.is_empty() {
        return Ok(Leakage { query_wise: 0.0, entity_wise: 0.0 });
    }
    let (mut leaky, mut frac_sum) = (0usize, 0.0);
    for r in run {
        let scope = tree.subtree(&r.scope)?;
        let mut out = 0usize;
        for e in &r.entities {
            let owner = owners.get(e).ok_or_else(|| Error::UnknownEntity(e.clone()))?;
            if !scope.contains(owner) {
                out += 1;
            }
        }
        if out > 0 {
            leaky += 1;
        }
        if !r.entities.is_empty() {
            frac_sum += out as f64 / r.entities.len() as f64;
        }
    }
    let n = run.len() as f64;
    Ok(Leakage { query_wise: leaky as f64 / n, entity_wise: frac_sum / n })
}

/// Mean with its standard error (sample deviation over √n).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanStderr {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        Self { mean, stderr, n }
    }
}

impl std::fmt::Display for MeanStderr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.stderr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("The cat sat", "the  CAT sat").unwrap(), 1.0);
        assert_eq!(token_f1("a b", "b c").unwrap(), 0.5);
        assert_eq!(token_f1("x y", "b c").unwrap(), 0.0);
        assert!(matches!(token_f1("a", " ,"), Err(Error::EmptyGold)));
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu1("a b c", "a b c").unwrap(), 1.0);
        assert!((bleu1("a a a", "a b").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(bleu1("", "a b").unwrap(), 0.0);
        // short candidate is penalized
        assert!((bleu1("a", "a b").unwrap() - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn prf_examples() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
        let p = retrieval_prf(&s(&["a", "b"]), &s(&["a", "b"])).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = retrieval_prf(&s(&["a", "b", "c"]), &s(&["a", "b"])).unwrap();
        assert!((p.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.recall, 1.0);
        assert!((p.f1 - 0.8).abs() < 1e-12);
        let p = retrieval_prf(&s(&["x"]), &s(&["a"])).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        assert!(matches!(retrieval_prf(&s(&["x"]), &s(&[])), Err(Error::EmptyGold)));
    }

    fn two_tenants() -> (MemoryTree, BTreeMap<String, NodeId>) {
        let mut t = MemoryTree::new();
        let r = t.create_node("g", "root", None).unwrap();
        let a = t.create_node("a", "tenant", Some(&r)).unwrap();
        let b = t.create_node("b", "tenant", Some(&r)).unwrap();
        let mut owners = BTreeMap::new();
        for i in 0..4 {
            owners.insert(format!("a{i}"), t.create_node(&format!("a{i}"), "project", Some(&a)).unwrap());
            owners.insert(format!("b{i}"), t.create_node(&format!("b{i}"), "project", Some(&b)).unwrap());
        }
        (t, owners)
    }

    #[test]
    fn leakage_examples() {
        let (t, owners) = two_tenants();
        let a = t.resolve("a").unwrap();
        let ents = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let clean = vec![ScopedReturn { scope: a.clone(), entities: ents(&["a0", "a1"]) }];
        assert_eq!(leakage(&t, &clean, &owners).unwrap(), Leakage { query_wise: 0.0, entity_wise: 0.0 });
        let run = vec![
            ScopedReturn { scope: a.clone(), entities: ents(&["a0", "a1", "a2", "b0"]) },
            ScopedReturn { scope: a.clone(), entities: ents(&["a3"]) },
        ];
        assert_eq!(leakage(&t, &run, &owners).unwrap(), Leakage { query_wise: 0.5, entity_wise: 0.125 });
        let run = vec![ScopedReturn { scope: a, entities: ents(&["zz"]) }];
        assert!(matches!(leakage(&t, &run, &owners), Err(Error::UnknownEntity(_))));
    }

    #[test]
    fn mean_stderr() {
        let m = MeanStderr::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(MeanStderr::of(&[2.0, 2.0]).stderr, 0.0);
    }

    proptest! {
        #[test]
        fn metrics_ignore_whitespace_and_order(words in proptest::collection::vec("[a-z]{1,5}", 1..8), pad in 1usize..4) {
            let gold = words.join(" ");
            let spaced = words.join(&" ".repeat(pad));
            let mut rev = words.clone();
            rev.reverse();
            prop_assert_eq!(token_f1(&spaced, &gold).unwrap(), 1.0);
            prop_assert_eq!(token_f1(&rev.join(" "), &gold).unwrap(), 1.0);
            let f = token_f1(&words[..words.len() / 2 + 1].join(" "), &gold).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            let b = bleu1(&spaced, &gold).unwrap();
            prop_assert!((b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn prf_is_symmetric_under_permutation(a in proptest::collection::btree_set(0u8..20, 0..10), g in proptest::collection::btree_set(0u8..20, 1..10)) {
            let p = retrieval_prf(&a, &g).unwrap();
            let swapped = retrieval_prf(&g, &a);
            if let Ok(s) = swapped {
                prop_assert!((p.f1 - s.f1).abs() < 1e-12);
                prop_assert!((p.precision - s.recall).abs() < 1e-12);
            }
            prop_assert!((0.0..=1.0).contains(&p.f1));
        }
    }
}
