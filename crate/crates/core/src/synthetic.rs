//! Deterministic synthetic corpus for desk-scale end-to-end runs: clusters of
//! paraphrased occupation titles whose cluster identity is carried by an
//! invented stem token, while shared filler words create cross-cluster
//! confusion that a bag-of-n-grams encoder must learn to ignore.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    write_entities, write_kb, write_pairs, write_qrels, write_queries, CorpusEntity, EntityType,
    GoldStandard, KnowledgeBase, LabelSet, RawPairSet,
};
use crate::error::Result;

/// Everything a Task A experiment needs: entities for contrastive pairs and
/// major-group mapping, a knowledge base, queries with gold sets, and raw
/// title pairs for classification training.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub entities: Vec<CorpusEntity>,
    pub kb: KnowledgeBase,
    pub queries: Vec<(String, String)>,
    pub qrels: GoldStandard,
    pub train_pairs: RawPairSet,
}

/// The query template shares the word "technician" with every cluster's
/// first knowledge-base paraphrase, so an untrained bag-of-n-grams encoder
/// confuses clusters; only the stem separates them.
const TEMPLATES: [&str; 5] = [
    "{stem} technician",
    "{stem} technician assistant",
    "senior {stem} process engineer",
    "{stem} systems operator",
    "head {stem} officer",
];

fn render(template: &str, stem: &str) -> String {
    template.replace("{stem}", stem)
}

/// Pronounceable, pairwise-distinct stems from a seeded syllable draw.
fn stems(rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "t", "z"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut stem = String::new();
        for _ in 0..3 {
            stem.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
            stem.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        }
        if seen.insert(stem.clone()) {
            out.push(stem);
        }
    }
    out
}

/// Build the synthetic Task A corpus: `clusters` occupations, each with five
/// paraphrased titles. The first paraphrase is the query (and the entity's
/// preferred label); the other four form the knowledge base and the entity's
/// alternative labels.
pub fn task_a_corpus(seed: u64, clusters: usize) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stems = stems(&mut rng, clusters);

    let mut entities = Vec::with_capacity(clusters);
    let mut kb_entries = Vec::new();
    let mut queries = Vec::with_capacity(clusters);
    let mut qrels_entries = BTreeMap::new();
    let mut query_text = BTreeMap::new();
    let mut train_rows = Vec::new();

    for (i, stem) in stems.iter().enumerate() {
        let titles: Vec<String> = TEMPLATES.iter().map(|t| render(t, stem)).collect();
        let preferred = titles[0].clone();
        let alternatives: Vec<String> = titles[1..].to_vec();

        let mut labels = BTreeMap::new();
        labels.insert(
            "en".to_string(),
            LabelSet {
                preferred: preferred.clone(),
                alternatives: alternatives.clone(),
                description: Some(format!(
                    "operates {stem} equipment and maintains {stem} workflows"
                )),
            },
        );
        entities.push(CorpusEntity {
            entity_id: format!("occ_{i}"),
            entity_type: EntityType::Occupation,
            // Spread clusters across the ten major groups.
            esco_code: Some(format!("{}{:03}.{}", i % 10, i, 1)),
            labels,
        });

        let qid = format!("q{i}");
        queries.push((qid.clone(), preferred.clone()));
        query_text.insert(qid.clone(), preferred.clone());
        let mut gold = BTreeSet::new();
        for (j, alt) in alternatives.iter().enumerate() {
            let doc_id = format!("d{i}_{j}");
            kb_entries.push((doc_id.clone(), alt.clone()));
            gold.insert(doc_id);
        }
        qrels_entries.insert(qid, gold);

        // All ordered within-cluster title pairs for classification training.
        for a in 0..titles.len() {
            for b in 0..titles.len() {
                if a != b {
                    train_rows.push((titles[a].clone(), titles[b].clone()));
                }
            }
        }
    }

    SyntheticCorpus {
        entities,
        kb: KnowledgeBase::new("en", kb_entries).expect("synthetic doc ids are unique"),
        queries,
        qrels: GoldStandard::new(qrels_entries, query_text).expect("synthetic gold is non-empty"),
        train_pairs: RawPairSet {
            language: "en".into(),
            pairs: train_rows,
        },
    }
}

/// Synthetic Task B corpus: jobs linked to skills. Each job's skills carry
/// the job's stem, so title-to-skill matching is learnable from character
/// n-grams; the `pairs` field holds the gold (job title, skill) links used
/// both as classification training data and as contrastive link input.
pub fn task_b_corpus(seed: u64, jobs: usize, skills_per_job: usize) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5bd1_e995);
    let stems = stems(&mut rng, jobs);

    let mut entities = Vec::new();
    let mut kb_entries = Vec::new();
    let mut queries = Vec::new();
    let mut qrels_entries = BTreeMap::new();
    let mut query_text = BTreeMap::new();
    let mut links = Vec::new();

    const SKILL_VERBS: [&str; 4] = ["analyse", "calibrate", "document", "inspect"];

    for (j, stem) in stems.iter().enumerate() {
        let job_title = format!("{stem} technician");
        let mut labels = BTreeMap::new();
        labels.insert(
            "en".to_string(),
            LabelSet {
                preferred: job_title.clone(),
                alternatives: vec![
                    format!("senior {stem} engineer"),
                    format!("{stem} operator"),
                ],
                description: None,
            },
        );
        entities.push(CorpusEntity {
            entity_id: format!("job_{j}"),
            entity_type: EntityType::Occupation,
            esco_code: Some(format!("{}{:03}.{}", j % 10, j, 2)),
            labels,
        });

        let qid = format!("q{j}");
        queries.push((qid.clone(), job_title.clone()));
        query_text.insert(qid.clone(), job_title.clone());
        let mut gold = BTreeSet::new();
        for k in 0..skills_per_job {
            let verb = SKILL_VERBS[k % SKILL_VERBS.len()];
            let skill_text = format!("{verb} {stem} output");
            let mut labels = BTreeMap::new();
            labels.insert(
                "en".to_string(),
                LabelSet {
                    preferred: skill_text.clone(),
                    alternatives: vec![format!("{verb} {stem} results")],
                    description: None,
                },
            );
            entities.push(CorpusEntity {
                entity_id: format!("skill_{j}_{k}"),
                entity_type: EntityType::Skill,
                esco_code: None,
                labels,
            });
            let doc_id = format!("s{j}_{k}");
            kb_entries.push((doc_id.clone(), skill_text.clone()));
            gold.insert(doc_id);
            links.push((job_title.clone(), skill_text));
        }
        qrels_entries.insert(qid, gold);
    }

    SyntheticCorpus {
        entities,
        kb: KnowledgeBase::new("en", kb_entries).expect("synthetic doc ids are unique"),
        queries,
        qrels: GoldStandard::new(qrels_entries, query_text).expect("synthetic gold is non-empty"),
        train_pairs: RawPairSet {
            language: "en".into(),
            pairs: links,
        },
    }
}

/// File names produced by [`write_corpus_files`].
pub const ENTITIES_FILE: &str = "entities.tsv";
pub const KB_FILE: &str = "kb.en.tsv";
pub const QUERIES_FILE: &str = "queries.en.tsv";
pub const QRELS_FILE: &str = "qrels.en.txt";
pub const PAIRS_FILE: &str = "pairs.tsv";

/// Write the corpus in the canonical on-disk formats under `dir`.
pub fn write_corpus_files(corpus: &SyntheticCorpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_entities(dir.join(ENTITIES_FILE), &corpus.entities)?;
    write_kb(dir.join(KB_FILE), &corpus.kb)?;
    write_queries(dir.join(QUERIES_FILE), &corpus.queries)?;
    write_qrels(dir.join(QRELS_FILE), &corpus.qrels.entries)?;
    write_pairs(
        dir.join(PAIRS_FILE),
        std::slice::from_ref(&corpus.train_pairs),
    )?;
    Ok(())
}
