//! Query-workload adaptation.
//!
//! A window of past queries is reduced to recurring query templates and
//! frequently constrained facet names. Both are counted exactly and only
//! entries reaching `min_support` survive. The resulting profile is fed to
//! the extraction prompts as emphasis; it never filters anything.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::memory::hex;
use crate::text::normalize_ws_lower;

/// One line of the query-log JSONL format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternSupport {
    pub template: String,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetSupport {
    pub name: String,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPatternProfile {
    pub id: String,
    pub patterns: Vec<PatternSupport>,
    pub facet_names: Vec<FacetSupport>,
    pub window_start: Option<DateTime<Utc>>,
    pub window_end: Option<DateTime<Utc>>,
    pub min_support: usize,
    #[serde(default)]
    pub approved: bool,
}

impl QueryPatternProfile {
    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty() && self.facet_names.is_empty()
    }
}

/// Which queries are mined: those inside `[start, end]`, then at most the
/// `max_queries` most recent of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningWindow {
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
    pub max_queries: usize,
}

impl MiningWindow {
    pub fn unbounded() -> Self {
        Self { start: None, end: None, max_queries: usize::MAX }
    }

    /// Last `days` days up to `now`, capped at `max_queries`.
    pub fn trailing(now: DateTime<Utc>, days: i64, max_queries: usize) -> Self {
        Self { start: Some(now - Duration::days(days)), end: Some(now), max_queries }
    }

    fn admits(&self, t: &DateTime<Utc>) -> bool {
        self.start.is_none_or(|s| *t >= s) && self.end.is_none_or(|e| *t <= e)
    }
}

impl Default for MiningWindow {
    fn default() -> Self {
        Self::trailing(Utc::now(), 30, 10_000)
    }
}

/// Replaces each parsed facet value in the (lowercased) query with a
/// `<key>` placeholder, then collapses whitespace.
pub fn template_query(query: &str, facets: &[(String, String)]) -> String {
    let mut text = query.to_lowercase();
    let mut facets: Vec<(String, String)> = facets
        .iter()
        .map(|(k, v)| (k.to_lowercase(), v.trim().to_lowercase()))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    // longest values first so a value never clobbers part of a longer one
    facets.sort_by_key(|(_, v)| std::cmp::Reverse(v.len()));
    for (key, value) in facets {
        let placeholder = format!("<{key}>");
        let mut out = String::with_capacity(text.len());
        let mut rest = text.as_str();
        while let Some(pos) = rest.find(&value) {
            let boundary = rest[..pos].chars().next_back().is_none_or(|c| !c.is_alphanumeric())
                && (pos > 0 || out.chars().next_back().is_none_or(|c| !c.is_alphanumeric()))
                && ends_word(&rest[pos + value.len()..]);
            out.push_str(&rest[..pos]);
            if boundary {
                out.push_str(&placeholder);
            } else {
                out.push_str(&value);
            }
            rest = &rest[pos + value.len()..];
        }
        out.push_str(rest);
        text = out;
    }
    normalize_ws_lower(&text)
}

// A match may end at a word boundary or carry a plural "s".
fn ends_word(after: &str) -> bool {
    let mut it = after.chars();
    match it.next() {
        None => true,
        Some('s') => it.next().is_none_or(|c| !c.is_alphanumeric()),
        Some(c) => !c.is_alphanumeric(),
    }
}

/// Mines a profile. `parse` decomposes one query into facet pairs (the
/// same parser the retrieval path uses).
pub fn mine_profile<F>(
    queries: &[QueryRecord],
    window: &MiningWindow,
    min_support: usize,
    mut parse: F,
) -> Result<QueryPatternProfile>
where
    F: FnMut(&str) -> Result<Vec<(String, String)>>,
{
    if min_support < 2 {
        return Err(Error::InvalidArgument("min_support must be at least 2".into()));
    }
    let mut selected: Vec<&QueryRecord> = queries.iter().filter(|q| window.admits(&q.timestamp)).collect();
    selected.sort_by(|a, b| b.timestamp.cmp(&a.timestamp).then_with(|| a.text.cmp(&b.text)));
    selected.truncate(window.max_queries);
    if selected.is_empty() {
        return Err(Error::WindowEmpty);
    }

    let mut pattern_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut facet_counts: BTreeMap<String, usize> = BTreeMap::new();
    for q in &selected {
        let facets = parse(&q.text)?;
        let names: BTreeSet<String> = facets.iter().map(|(k, _)| k.to_lowercase()).collect();
        for n in names {
            *facet_counts.entry(n).or_default() += 1;
        }
        *pattern_counts.entry(template_query(&q.text, &facets)).or_default() += 1;
    }

    let mut patterns: Vec<PatternSupport> = pattern_counts
        .into_iter()
        .filter(|(_, c)| *c >= min_support)
        .map(|(template, support)| PatternSupport { template, support })
        .collect();
    patterns.sort_by(|a, b| b.support.cmp(&a.support).then_with(|| a.template.cmp(&b.template)));
    let mut facet_names: Vec<FacetSupport> = facet_counts
        .into_iter()
        .filter(|(_, c)| *c >= min_support)
        .map(|(name, support)| FacetSupport { name, support })
        .collect();
    facet_names.sort_by(|a, b| b.support.cmp(&a.support).then_with(|| a.name.cmp(&b.name)));

    let mut profile = QueryPatternProfile {
        id: String::new(),
        patterns,
        facet_names,
        window_start: window.start,
        window_end: window.end,
        min_support,
        approved: false,
    };
    let digest = Sha256::digest(serde_json::to_vec(&profile)?);
    profile.id = format!("prof-{}", &hex(&digest)[..12]);
    Ok(profile)
}

/// Stored profiles plus the one currently feeding the indexer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRegistry {
    pub profiles: BTreeMap<String, QueryPatternProfile>,
    pub active: Option<String>,
}

impl ProfileRegistry {
    pub fn insert(&mut self, profile: QueryPatternProfile) -> String {
        let id = profile.id.clone();
        self.profiles.insert(id.clone(), profile);
        id
    }

    pub fn get(&self, id: &str) -> Result<&QueryPatternProfile> {
        self.profiles.get(id).ok_or_else(|| Error::UnknownProfile(id.to_string()))
    }

    pub fn approve(&mut self, id: &str) -> Result<()> {
        self.profiles.get_mut(id).ok_or_else(|| Error::UnknownProfile(id.to_string()))?.approved = true;
        Ok(())
    }

    /// Makes `id` the active profile. With review required, only approved
    /// profiles may be applied.
    pub fn apply(&mut self, id: &str, review_required: bool) -> Result<&QueryPatternProfile> {
        let p = self.get(id)?;
        if review_required && !p.approved {
            return Err(Error::NotApproved(id.to_string()));
        }
        self.active = Some(id.to_string());
        self.get(id)
    }

    pub fn active(&self) -> Option<&QueryPatternProfile> {
        self.active.as_deref().and_then(|id| self.profiles.get(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::parse_query_kv;

    fn at(day: u32) -> DateTime<Utc> {
        format!("2026-03-{day:02}T12:00:00Z").parse().unwrap()
    }

    fn q(text: &str, day: u32) -> QueryRecord {
        QueryRecord { text: text.into(), timestamp: at(day) }
    }

    fn rules(text: &str) -> Result<Vec<(String, String)>> {
        Ok(parse_query_kv(text))
    }

    #[test]
    fn recurring_template_is_counted() {
        let qs = vec![
            q("typical location for title=nurse roles?", 1),
            q("Typical location for title=welder  roles?", 2),
            q("typical location for title=pilot roles?", 3),
        ];
        let p = mine_profile(&qs, &MiningWindow::unbounded(), 3, rules).unwrap();
        assert_eq!(
            p.patterns,
            vec![PatternSupport { template: "typical location for title=<title> roles?".into(), support: 3 }]
        );
        assert_eq!(p.facet_names, vec![FacetSupport { name: "title".into(), support: 3 }]);
        assert!(!p.approved);
    }

    #[test]
    fn unique_templates_yield_empty_profile() {
        let qs = vec![q("alpha beta", 1), q("gamma delta", 2), q("epsilon", 3)];
        let p = mine_profile(&qs, &MiningWindow::unbounded(), 2, rules).unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn facet_support_counting() {
        // "location" constrained in 5 of 10 queries
        let mut qs = Vec::new();
        for i in 0..10u32 {
            let text =
                if i % 2 == 0 { format!("find jobs location=city{i}") } else { format!("anything about topic {i}") };
            qs.push(q(&text, i + 1));
        }
        let p = mine_profile(&qs, &MiningWindow::unbounded(), 3, rules).unwrap();
        assert_eq!(p.facet_names, vec![FacetSupport { name: "location".into(), support: 5 }]);
        assert_eq!(p.patterns[0].template, "find jobs location=<location>");
        assert_eq!(p.patterns[0].support, 5);
        for f in &p.facet_names {
            assert!(f.support >= p.min_support);
        }
    }

    #[test]
    fn window_filtering() {
        let qs = vec![q("a x=1", 1), q("a x=2", 2), q("a x=3", 20)];
        let w = MiningWindow { start: Some(at(1)), end: Some(at(10)), max_queries: 100 };
        let p = mine_profile(&qs, &w, 2, rules).unwrap();
        assert_eq!(p.patterns[0].support, 2);
        let w = MiningWindow { start: Some(at(25)), end: None, max_queries: 100 };
        assert!(matches!(mine_profile(&qs, &w, 2, rules), Err(Error::WindowEmpty)));
        let w = MiningWindow { start: None, end: None, max_queries: 1 };
        assert!(mine_profile(&qs, &w, 2, rules).unwrap().is_empty());
        assert!(matches!(mine_profile(&qs, &MiningWindow::unbounded(), 1, rules), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mining_is_deterministic() {
        let qs: Vec<_> = (0..20u32).map(|i| q(&format!("where title=t{} loc=l{}", i % 3, i % 2), i % 28 + 1)).collect();
        let a = mine_profile(&qs, &MiningWindow::unbounded(), 2, rules).unwrap();
        let mut rev = qs.clone();
        rev.reverse();
        let b = mine_profile(&rev, &MiningWindow::unbounded(), 2, rules).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn templating_respects_word_starts() {
        let t = template_query(
            "typical workplace for hiring software engineers in the San Francisco Bay Area?",
            &[("title".into(), "software engineer".into()), ("location".into(), "San Francisco Bay Area".into())],
        );
        assert_eq!(t, "typical workplace for hiring <title>s in the <location>?");
        assert_eq!(template_query("role=ro", &[("role".into(), "ro".into())]), "role=<role>");
    }

    #[test]
    fn review_gate() {
        let mut reg = ProfileRegistry::default();
        let p = mine_profile(&[q("k=v a", 1), q("k=w a", 2)], &MiningWindow::unbounded(), 2, rules).unwrap();
        let id = reg.insert(p);
        assert!(matches!(reg.apply(&id, true), Err(Error::NotApproved(_))));
        assert!(reg.active().is_none());
        reg.apply(&id, false).unwrap();
        reg.approve(&id).unwrap();
        reg.apply(&id, true).unwrap();
        assert_eq!(reg.active().unwrap().id, id);
        assert!(matches!(reg.approve("nope"), Err(Error::UnknownProfile(_))));
    }
}
