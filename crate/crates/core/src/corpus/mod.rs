//! Canonical in-memory corpus: occupation/skill entities with multilingual
//! labels, per-language knowledge bases, gold relevance sets, and raw
//! training pairs. All objects are immutable after load and safe to share
//! across threads.

mod io;

pub use io::{
    load_entities, load_gold_standard, load_kb, load_pairs, load_qrels, load_queries,
    write_entities, write_kb, write_pairs, write_qrels, write_queries,
};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::match_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    Occupation,
    Skill,
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityType::Occupation => f.write_str("occupation"),
            EntityType::Skill => f.write_str("skill"),
        }
    }
}

impl std::str::FromStr for EntityType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "occupation" => Ok(EntityType::Occupation),
            "skill" => Ok(EntityType::Skill),
            other => Err(format!("expected 'occupation' or 'skill', got '{other}'")),
        }
    }
}

/// Labels of one entity in one language.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub preferred: String,
    pub alternatives: Vec<String>,
    pub description: Option<String>,
}

/// An occupation or skill with its labels per language.
///
/// `esco_code`, when present, starts with the digit of its major group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntity {
    pub entity_id: String,
    pub entity_type: EntityType,
    pub esco_code: Option<String>,
    /// Language code -> labels. Sorted by language for deterministic output.
    pub labels: BTreeMap<String, LabelSet>,
}

impl CorpusEntity {
    pub fn label_set(&self, lang: &str) -> Option<&LabelSet> {
        self.labels.get(lang)
    }

    /// First digit of the ESCO code, i.e. the major group.
    pub fn major_group(&self) -> Option<u8> {
        let code = self.esco_code.as_deref()?;
        code.chars()
            .next()
            .and_then(|c| c.to_digit(10))
            .map(|d| d as u8)
    }
}

/// The fixed candidate list a ranking is drawn from. Entry order is the file
/// order and is stable across loads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    pub language: String,
    pub entries: Vec<(String, String)>,
}

impl KnowledgeBase {
    pub fn new(language: impl Into<String>, entries: Vec<(String, String)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (doc_id, _) in &entries {
            if doc_id.is_empty() {
                return Err(Error::Validation("knowledge base doc_id is empty".into()));
            }
            if !seen.insert(doc_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate knowledge base doc_id '{doc_id}'"
                )));
            }
        }
        Ok(Self {
            language: language.into(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Gold relevance sets (qrels) plus the query texts they refer to.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldStandard {
    /// query_id -> set of relevant doc_ids. Sets are non-empty.
    pub entries: BTreeMap<String, BTreeSet<String>>,
    /// query_id -> query text. May be empty when no queries file was loaded.
    pub query_text: BTreeMap<String, String>,
}

impl GoldStandard {
    pub fn new(
        entries: BTreeMap<String, BTreeSet<String>>,
        query_text: BTreeMap<String, String>,
    ) -> Result<Self> {
        for (qid, docs) in &entries {
            if qid.is_empty() {
                return Err(Error::Validation("qrels query id is empty".into()));
            }
            if docs.is_empty() {
                return Err(Error::Validation(format!(
                    "qrels query '{qid}' has no relevant documents"
                )));
            }
            if docs.iter().any(|d| d.is_empty()) {
                return Err(Error::Validation(format!(
                    "qrels query '{qid}' lists an empty doc id"
                )));
            }
        }
        Ok(Self {
            entries,
            query_text,
        })
    }
}

/// Raw (query title, related title) training pairs for one language.
/// Duplicates are kept on load; [`RawPairSet::stats`] reports them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPairSet {
    pub language: String,
    pub pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairSetStats {
    pub total: usize,
    pub duplicates: usize,
}

impl RawPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn stats(&self) -> PairSetStats {
        let distinct: HashSet<&(String, String)> = self.pairs.iter().collect();
        PairSetStats {
            total: self.pairs.len(),
            duplicates: self.pairs.len() - distinct.len(),
        }
    }
}

/// Concatenate per-language pair sets into one multilingual set, preserving
/// set order then row order. The result carries the language tag `multi`.
pub fn concat_pairsets(sets: &[RawPairSet]) -> Result<RawPairSet> {
    if sets.is_empty() {
        return Err(Error::EmptyInput("concat_pairsets"));
    }
    let pairs = sets.iter().flat_map(|s| s.pairs.iter().cloned()).collect();
    Ok(RawPairSet {
        language: "multi".into(),
        pairs,
    })
}

/// Lookup index from occupation titles to ESCO codes. Preferred labels take
/// precedence over alternatives; within one label class a title that matches
/// several occupations resolves to the lexicographically lowest code.
#[derive(Debug, Clone)]
pub struct MajorGroupIndex {
    preferred: HashMap<String, String>,
    alternative: HashMap<String, String>,
}

impl MajorGroupIndex {
    pub fn build(entities: &[CorpusEntity]) -> Self {
        let mut preferred: HashMap<String, String> = HashMap::new();
        let mut alternative: HashMap<String, String> = HashMap::new();
        let keep_lowest =
            |map: &mut HashMap<String, String>, key: String, code: &str| match map.get(&key) {
                Some(existing) if existing.as_str() <= code => {}
                _ => {
                    map.insert(key, code.to_string());
                }
            };
        for entity in entities {
            if entity.entity_type != EntityType::Occupation {
                continue;
            }
            let Some(code) = entity.esco_code.as_deref() else {
                continue;
            };
            for labels in entity.labels.values() {
                keep_lowest(&mut preferred, match_key(&labels.preferred), code);
                for alt in &labels.alternatives {
                    keep_lowest(&mut alternative, match_key(alt), code);
                }
            }
        }
        Self {
            preferred,
            alternative,
        }
    }

    /// Major group of a title, or `None` when no occupation label matches
    /// exactly (after trim + NFC + case-fold).
    pub fn lookup(&self, title: &str) -> Option<u8> {
        let key = match_key(title);
        let code = self
            .preferred
            .get(&key)
            .or_else(|| self.alternative.get(&key))?;
        code.chars()
            .next()
            .and_then(|c| c.to_digit(10))
            .map(|d| d as u8)
    }
}

/// Map a title to its ESCO major group (0-9) by exact label match.
/// Convenience wrapper over [`MajorGroupIndex`]; build the index once when
/// mapping many titles.
pub fn map_title_to_major_group(title: &str, entities: &[CorpusEntity]) -> Option<u8> {
    MajorGroupIndex::build(entities).lookup(title)
}

/// How much of a knowledge base maps onto ESCO major groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub total: usize,
    pub mapped: usize,
    /// 100 * (total - mapped) / total, rounded half-up to one decimal.
    pub unmapped_pct: f64,
}

/// Count how many knowledge-base titles map to an ESCO major group.
pub fn coverage_stats(kb: &KnowledgeBase, entities: &[CorpusEntity]) -> Result<CoverageStats> {
    if kb.is_empty() {
        return Err(Error::EmptyInput("coverage_stats: knowledge base"));
    }
    let index = MajorGroupIndex::build(entities);
    let total = kb.len();
    let mapped = kb
        .entries
        .iter()
        .filter(|(_, text)| index.lookup(text).is_some())
        .count();
    let unmapped_pct = (100.0 * (total - mapped) as f64 / total as f64 * 10.0).round() / 10.0;
    Ok(CoverageStats {
        total,
        mapped,
        unmapped_pct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entity(id: &str, code: Option<&str>, preferred: &str, alts: &[&str]) -> CorpusEntity {
        let mut labels = BTreeMap::new();
        labels.insert(
            "en".to_string(),
            LabelSet {
                preferred: preferred.to_string(),
                alternatives: alts.iter().map(|s| s.to_string()).collect(),
                description: None,
            },
        );
        CorpusEntity {
            entity_id: id.to_string(),
            entity_type: EntityType::Occupation,
            esco_code: code.map(|c| c.to_string()),
            labels,
        }
    }

    #[test]
    fn concat_preserves_order_and_length() {
        let a = RawPairSet {
            language: "en".into(),
            pairs: vec![("a".into(), "b".into()), ("c".into(), "d".into())],
        };
        let b = RawPairSet {
            language: "de".into(),
            pairs: vec![
                ("e".into(), "f".into()),
                ("g".into(), "h".into()),
                ("i".into(), "j".into()),
            ],
        };
        let out = concat_pairsets(&[a.clone(), b]).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out.language, "multi");
        assert_eq!(out.pairs[0], a.pairs[0]);
    }

    #[test]
    fn concat_empty_input_errors() {
        assert!(matches!(concat_pairsets(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn major_group_matches_alternative_label() {
        let entities = vec![entity(
            "occ1",
            Some("8160.3"),
            "cider production manager",
            &["cider maker"],
        )];
        assert_eq!(map_title_to_major_group("Cider Maker", &entities), Some(8));
    }

    #[test]
    fn major_group_no_match_is_none() {
        let entities = vec![entity(
            "occ1",
            Some("8160.3"),
            "cider production manager",
            &[],
        )];
        assert_eq!(
            map_title_to_major_group("zzz-unknown-title", &entities),
            None
        );
    }

    #[test]
    fn major_group_tie_breaks_on_lowest_code() {
        let a = entity("occ1", Some("3432.1"), "legal consultant", &[]);
        let b = entity("occ2", Some("2166.1"), "legal consultant", &[]);
        // Same result regardless of entity order.
        assert_eq!(
            map_title_to_major_group("legal consultant", &[a.clone(), b.clone()]),
            Some(2)
        );
        assert_eq!(
            map_title_to_major_group("legal consultant", &[b, a]),
            Some(2)
        );
    }

    #[test]
    fn major_group_prefers_preferred_over_alternative() {
        // Preferred match on code 3432.1 wins over alternative match on 1111.1.
        let a = entity("occ1", Some("1111.1"), "other title", &["court clerk"]);
        let b = entity("occ2", Some("3432.1"), "court clerk", &[]);
        assert_eq!(map_title_to_major_group("court clerk", &[a, b]), Some(3));
    }

    #[test]
    fn skills_never_map_to_major_groups() {
        let mut skill = entity("sk1", Some("1234.1"), "weld metal", &[]);
        skill.entity_type = EntityType::Skill;
        assert_eq!(map_title_to_major_group("weld metal", &[skill]), None);
    }

    #[test]
    fn coverage_full() {
        let entities = vec![entity("occ1", Some("2166.1"), "graphic designer", &[])];
        let kb = KnowledgeBase::new(
            "en",
            (0..10)
                .map(|i| (format!("d{i}"), "graphic designer".to_string()))
                .collect(),
        )
        .unwrap();
        let stats = coverage_stats(&kb, &entities).unwrap();
        assert_eq!(stats.total, 10);
        assert_eq!(stats.mapped, 10);
        assert_eq!(stats.unmapped_pct, 0.0);
    }

    #[test]
    fn coverage_empty_kb_errors() {
        let kb = KnowledgeBase {
            language: "en".into(),
            entries: vec![],
        };
        assert!(coverage_stats(&kb, &[]).is_err());
    }

    #[test]
    fn gold_standard_rejects_empty_relevant_set() {
        let mut entries = BTreeMap::new();
        entries.insert("q1".to_string(), BTreeSet::new());
        assert!(GoldStandard::new(entries, BTreeMap::new()).is_err());
    }

    #[test]
    fn kb_rejects_duplicate_doc_id() {
        let entries = vec![
            ("d1".to_string(), "a".to_string()),
            ("d1".to_string(), "b".to_string()),
        ];
        assert!(KnowledgeBase::new("en", entries).is_err());
    }

    #[test]
    fn pair_stats_count_duplicates() {
        let set = RawPairSet {
            language: "en".into(),
            pairs: vec![
                ("a".into(), "b".into()),
                ("a".into(), "b".into()),
                ("a".into(), "c".into()),
            ],
        };
        let stats = set.stats();
        assert_eq!(stats.total, 3);
        assert_eq!(stats.duplicates, 1);
    }
}
