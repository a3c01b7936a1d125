//! Training-set construction for both supervised paradigms: labeled
//! positive/negative pairs for the binary pair classifier, and anchor/positive
//! pairs (with negative pools) for contrastive training.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusEntity, EntityType, RawPairSet};
use crate::error::{Error, Result};
use crate::text::{match_key, normalize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrigin {
    Gold,
    SampledNegative,
}

/// One classification training row. `label == 1` iff the pair came from the
/// gold data; sampled negatives always carry `label == 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub query: String,
    pub document: String,
    pub label: u8,
    pub origin: PairOrigin,
}

impl LabeledPair {
    pub fn gold(query: impl Into<String>, document: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            document: document.into(),
            label: 1,
            origin: PairOrigin::Gold,
        }
    }

    pub fn negative(query: impl Into<String>, document: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            document: document.into(),
            label: 0,
            origin: PairOrigin::SampledNegative,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Where classification negatives are drawn from. Metadata recorded in the
/// stats sidecar; the sampling pool itself is always the distinct
/// related-side texts of the input pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Titles,
    Skills,
    Descriptions,
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolKind::Titles => f.write_str("titles"),
            PoolKind::Skills => f.write_str("skills"),
            PoolKind::Descriptions => f.write_str("descriptions"),
        }
    }
}

/// Negative-sampling configuration. The usual presets are 1:1, 1:2 and 1:5
/// (negatives per positive); arbitrary positive ratios are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub neg_ratio: f64,
    pub seed: u64,
    pub pool: PoolKind,
}

impl SamplerConfig {
    pub fn new(neg_ratio: f64, seed: u64, pool: PoolKind) -> Result<Self> {
        if !(neg_ratio.is_finite() && neg_ratio > 0.0) {
            return Err(Error::Validation(format!(
                "neg_ratio must be a positive number, got {neg_ratio}"
            )));
        }
        Ok(Self {
            neg_ratio,
            seed,
            pool,
        })
    }
}

/// Counters emitted alongside a generated classification set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStats {
    pub queries: usize,
    pub positives: usize,
    pub negatives: usize,
    pub pool_size: usize,
    pub duplicate_gold_rows: usize,
    /// Queries whose eligible pool was smaller than the requested negative
    /// count; all available negatives were taken instead.
    pub exhausted_pool_queries: usize,
}

/// Build a labeled classification set: every gold pair with label 1, plus
/// `ceil(neg_ratio * positives(q))` negatives per query sampled uniformly
/// without replacement from the distinct related-side texts, excluding the
/// query's own gold documents and the query text itself. Deterministic given
/// the seed; the output order is a seeded shuffle.
pub fn make_classification_set(
    pairs: &RawPairSet,
    cfg: &SamplerConfig,
) -> Result<(Vec<LabeledPair>, SampleStats)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("make_classification_set: pairs"));
    }
    SamplerConfig::new(cfg.neg_ratio, cfg.seed, cfg.pool)?;

    // Distinct related-side texts, sorted so sampling is order-independent.
    let mut pool: Vec<&String> = {
        let set: HashSet<&String> = pairs.pairs.iter().map(|(_, rel)| rel).collect();
        let mut v: Vec<&String> = set.into_iter().collect();
        v.sort_unstable();
        v
    };
    pool.dedup();

    // Group rows by query in first-seen order.
    let mut queries: Vec<&String> = Vec::new();
    let mut by_query: HashMap<&String, Vec<&String>> = HashMap::new();
    for (query, related) in &pairs.pairs {
        if !by_query.contains_key(query) {
            queries.push(query);
        }
        by_query.entry(query).or_default().push(related);
    }

    let mut stats = SampleStats {
        queries: queries.len(),
        pool_size: pool.len(),
        duplicate_gold_rows: pairs.stats().duplicates,
        ..SampleStats::default()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out: Vec<LabeledPair> = Vec::new();
    for query in &queries {
        let positives = &by_query[*query];
        for related in positives {
            out.push(LabeledPair::gold((*query).clone(), (*related).clone()));
        }
        stats.positives += positives.len();

        let gold_keys: HashSet<String> = positives.iter().map(|p| match_key(p)).collect();
        let query_key = match_key(query);
        let eligible: Vec<&String> = pool
            .iter()
            .filter(|text| {
                let key = match_key(text);
                !gold_keys.contains(&key) && key != query_key
            })
            .copied()
            .collect();

        let want = (cfg.neg_ratio * positives.len() as f64).ceil() as usize;
        let take = want.min(eligible.len());
        if take < want {
            stats.exhausted_pool_queries += 1;
        }
        let picks = rand::seq::index::sample(&mut rng, eligible.len(), take);
        for i in picks.iter() {
            out.push(LabeledPair::negative((*query).clone(), eligible[i].clone()));
        }
        stats.negatives += take;
    }

    out.shuffle(&mut rng);
    Ok((out, stats))
}

/// Why one training pair exists: which label fields it joins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairType {
    /// preferred title -> description (occupations)
    TitleDescription,
    /// preferred title -> alternative title (occupations)
    TitleAltTitle,
    /// job preferred -> skill preferred
    JobSkill,
    /// job preferred -> skill alternative
    JobAltSkill,
    /// job alternative -> skill preferred
    AltJobSkill,
}

impl fmt::Display for PairType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PairType::TitleDescription => "title_description",
            PairType::TitleAltTitle => "title_alt_title",
            PairType::JobSkill => "job_skill",
            PairType::JobAltSkill => "job_alt_skill",
            PairType::AltJobSkill => "alt_job_skill",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for PairType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "title_description" => Ok(PairType::TitleDescription),
            "title_alt_title" => Ok(PairType::TitleAltTitle),
            "job_skill" => Ok(PairType::JobSkill),
            "job_alt_skill" => Ok(PairType::JobAltSkill),
            "alt_job_skill" => Ok(PairType::AltJobSkill),
            other => Err(format!("unknown pair_type '{other}'")),
        }
    }
}

/// One contrastive training pair. Anchor and positive are never equal after
/// normalization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastivePair {
    pub anchor: String,
    pub positive: String,
    pub pair_type: PairType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    A,
    B,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::A => f.write_str("A"),
            Task::B => f.write_str("B"),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "A" | "a" => Ok(Task::A),
            "B" | "b" => Ok(Task::B),
            other => Err(format!("expected task 'A' or 'B', got '{other}'")),
        }
    }
}

/// Counters emitted alongside a generated contrastive set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveStats {
    pub pairs_by_type: BTreeMap<String, usize>,
    /// Entities that contributed no pairs (nothing to pair the preferred
    /// label with).
    pub entities_without_pairs: usize,
    /// Pairs dropped because anchor == positive after normalization.
    pub skipped_identical: usize,
    /// Task B links whose job or skill text matched no entity.
    pub unresolved_links: usize,
}

impl ContrastiveStats {
    fn count(&mut self, pair_type: PairType) {
        *self.pairs_by_type.entry(pair_type.to_string()).or_insert(0) += 1;
    }
}

/// Build contrastive pairs from the corpus.
///
/// Task A pairs every occupation's preferred title with its description and
/// each alternative title, per requested language. Task B additionally needs
/// gold job-skill `links`: for each link it emits (job preferred, skill
/// preferred), (job preferred, skill alternative)*, (job alternative, skill
/// preferred)*. Link sides are resolved against entities by entity id first,
/// then by preferred label (case-folded exact match).
pub fn make_contrastive_set(
    entities: &[CorpusEntity],
    task: Task,
    languages: &[String],
    links: Option<&RawPairSet>,
) -> Result<(Vec<ContrastivePair>, ContrastiveStats)> {
    match task {
        Task::A => make_task_a_pairs(entities, languages),
        Task::B => {
            let links = links.ok_or_else(|| {
                Error::Validation("task B contrastive pairs require job-skill links".into())
            })?;
            make_task_b_pairs(entities, languages, links)
        }
    }
}

fn push_pair(
    out: &mut Vec<ContrastivePair>,
    stats: &mut ContrastiveStats,
    anchor: &str,
    positive: &str,
    pair_type: PairType,
) -> bool {
    if match_key(anchor) == match_key(positive) {
        stats.skipped_identical += 1;
        return false;
    }
    out.push(ContrastivePair {
        anchor: normalize(anchor),
        positive: normalize(positive),
        pair_type,
    });
    stats.count(pair_type);
    true
}

fn make_task_a_pairs(
    entities: &[CorpusEntity],
    languages: &[String],
) -> Result<(Vec<ContrastivePair>, ContrastiveStats)> {
    let mut out = Vec::new();
    let mut stats = ContrastiveStats::default();
    for entity in entities {
        if entity.entity_type != EntityType::Occupation {
            continue;
        }
        let mut contributed = false;
        for lang in languages {
            let Some(labels) = entity.label_set(lang) else {
                continue;
            };
            if let Some(desc) = &labels.description {
                contributed |= push_pair(
                    &mut out,
                    &mut stats,
                    &labels.preferred,
                    desc,
                    PairType::TitleDescription,
                );
            }
            for alt in &labels.alternatives {
                contributed |= push_pair(
                    &mut out,
                    &mut stats,
                    &labels.preferred,
                    alt,
                    PairType::TitleAltTitle,
                );
            }
        }
        if !contributed {
            stats.entities_without_pairs += 1;
        }
    }
    Ok((out, stats))
}

fn make_task_b_pairs(
    entities: &[CorpusEntity],
    languages: &[String],
    links: &RawPairSet,
) -> Result<(Vec<ContrastivePair>, ContrastiveStats)> {
    // Resolution maps: entity id and case-folded preferred label -> index.
    let mut by_id: HashMap<&str, usize> = HashMap::new();
    let mut occupation_by_label: HashMap<String, usize> = HashMap::new();
    let mut skill_by_label: HashMap<String, usize> = HashMap::new();
    for (idx, entity) in entities.iter().enumerate() {
        by_id.insert(entity.entity_id.as_str(), idx);
        for lang in languages {
            if let Some(labels) = entity.label_set(lang) {
                let key = match_key(&labels.preferred);
                let map = match entity.entity_type {
                    EntityType::Occupation => &mut occupation_by_label,
                    EntityType::Skill => &mut skill_by_label,
                };
                map.entry(key).or_insert(idx);
            }
        }
    }
    let resolve = |text: &str, want: EntityType| -> Option<usize> {
        if let Some(&idx) = by_id.get(text) {
            if entities[idx].entity_type == want {
                return Some(idx);
            }
        }
        let map = match want {
            EntityType::Occupation => &occupation_by_label,
            EntityType::Skill => &skill_by_label,
        };
        map.get(&match_key(text)).copied()
    };

    let mut out = Vec::new();
    let mut stats = ContrastiveStats::default();
    for (job_text, skill_text) in &links.pairs {
        let (Some(job_idx), Some(skill_idx)) = (
            resolve(job_text, EntityType::Occupation),
            resolve(skill_text, EntityType::Skill),
        ) else {
            stats.unresolved_links += 1;
            continue;
        };
        let job = &entities[job_idx];
        let skill = &entities[skill_idx];
        for lang in languages {
            let (Some(job_labels), Some(skill_labels)) =
                (job.label_set(lang), skill.label_set(lang))
            else {
                continue;
            };
            push_pair(
                &mut out,
                &mut stats,
                &job_labels.preferred,
                &skill_labels.preferred,
                PairType::JobSkill,
            );
            for alt_skill in &skill_labels.alternatives {
                push_pair(
                    &mut out,
                    &mut stats,
                    &job_labels.preferred,
                    alt_skill,
                    PairType::JobAltSkill,
                );
            }
            for alt_job in &job_labels.alternatives {
                push_pair(
                    &mut out,
                    &mut stats,
                    alt_job,
                    &skill_labels.preferred,
                    PairType::AltJobSkill,
                );
            }
        }
    }
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Anchor,
    Positive,
}

/// Deduplicated, sorted list of all texts on one side of the pairs — the pool
/// contrastive negatives are drawn from.
pub fn negative_pool(pairs: &[ContrastivePair], for_side: Side) -> Result<Vec<String>> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("negative_pool: pairs"));
    }
    let mut texts: Vec<String> = pairs
        .iter()
        .map(|p| match for_side {
            Side::Anchor => p.anchor.clone(),
            Side::Positive => p.positive.clone(),
        })
        .collect();
    texts.sort_unstable();
    texts.dedup();
    Ok(texts)
}

/// Write labeled pairs as TSV: query, document, label.
pub fn write_labeled_pairs(path: impl AsRef<Path>, pairs: &[LabeledPair]) -> Result<()> {
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            pair.query, pair.document, pair.label
        ));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn load_labeled_pairs(path: impl AsRef<Path>) -> Result<Vec<LabeledPair>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 3 columns, got {}", cols.len()),
            });
        }
        let pair = match cols[2] {
            "1" => LabeledPair::gold(cols[0], cols[1]),
            "0" => LabeledPair::negative(cols[0], cols[1]),
            other => {
                return Err(Error::Parse {
                    file: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("column 'label': expected 0 or 1, got '{other}'"),
                })
            }
        };
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Write contrastive pairs as TSV: anchor, positive, pair_type.
pub fn write_contrastive_pairs(path: impl AsRef<Path>, pairs: &[ContrastivePair]) -> Result<()> {
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            pair.anchor, pair.positive, pair.pair_type
        ));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn load_contrastive_pairs(path: impl AsRef<Path>) -> Result<Vec<ContrastivePair>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected 3 columns, got {}", cols.len()),
            });
        }
        let pair_type: PairType = cols[2].parse().map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            msg: e,
        })?;
        pairs.push(ContrastivePair {
            anchor: cols[0].to_string(),
            positive: cols[1].to_string(),
            pair_type,
        });
    }
    Ok(pairs)
}
