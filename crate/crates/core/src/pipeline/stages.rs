//! The pipeline stages. Each stage reads upstream artifacts (verifying them
//! against the producing stage's manifest), writes its own artifacts under
//! `<output_dir>/<stage>/`, and finishes with a manifest of input/output
//! hashes. Reports land under `<output_dir>/reports/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::{Method, PipelineConfig, SamplerScope};
use super::manifest::Manifest;
use crate::corpus::{
    concat_pairsets, coverage_stats, load_entities, load_gold_standard, load_kb, load_pairs,
    load_queries, write_entities, write_kb, write_pairs, write_qrels, write_queries, CoverageStats,
    GoldStandard, KnowledgeBase, RawPairSet,
};
use crate::embedding::{
    encode_with_stats, export_embeddings, import_embeddings, EmbeddingMatrix, ToyEncoderParams,
};
use crate::error::{Error, Result};
use crate::eval::{
    crosslingual_report, evaluate_run, major_group_report, render_major_group_rows, round3,
    EvalReport,
};
use crate::pairs::{
    load_contrastive_pairs, load_labeled_pairs, make_classification_set, make_contrastive_set,
    write_contrastive_pairs, write_labeled_pairs, ContrastivePair, LabeledPair, Task,
};
use crate::rank::{rank_by_classifier, rank_by_matrices, read_run, write_run, RunFile};
use crate::train::{
    load_encoder_checkpoint, load_scorer_checkpoint, save_encoder_checkpoint,
    save_scorer_checkpoint, train_classifier, train_contrastive, PairScorerParams,
};

/// What a stage did: where its manifest lives and any warnings raised.
#[derive(Debug, Clone, Default)]
pub struct StageReport {
    pub warnings: Vec<String>,
    pub manifest_path: PathBuf,
}

/// Common bookkeeping for one stage run.
struct Stage {
    name: &'static str,
    dir: PathBuf,
    manifest: Manifest,
    warnings: Vec<String>,
    started: Instant,
}

impl Stage {
    fn new(cfg: &PipelineConfig, name: &'static str) -> Result<Self> {
        let dir = cfg.stage_dir(name);
        fs::create_dir_all(&dir)?;
        Ok(Self {
            name,
            dir,
            manifest: Manifest::new(name, cfg.seed, cfg.snapshot()),
            warnings: Vec::new(),
            started: Instant::now(),
        })
    }

    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    /// Record an external input file; errors if missing.
    fn consume(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::Validation(format!(
                "input file {} does not exist",
                path.display()
            )));
        }
        self.manifest.record_input(path)
    }

    /// Record an artifact produced by an upstream stage; errors if missing
    /// (naming the producer) and warns when it no longer matches the
    /// producer's manifest.
    fn consume_artifact(
        &mut self,
        path: &Path,
        producer: &'static str,
        producer_manifest: Option<&Manifest>,
    ) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                artifact: path.to_path_buf(),
                producer,
            });
        }
        self.manifest.record_input(path)?;
        if let Some(manifest) = producer_manifest {
            let key = path.display().to_string();
            if let Some(recorded) = manifest.outputs.get(&key) {
                if recorded != &self.manifest.inputs[&key] {
                    self.warnings.push(format!(
                        "stale artifact: {key} changed since `{producer}` produced it; rerun `{producer}`"
                    ));
                }
            }
        }
        Ok(())
    }

    fn produce(&mut self, path: &Path) -> Result<()> {
        self.manifest.record_output(path)
    }

    fn manifest_file(&self) -> PathBuf {
        if self.name == "eval" || self.name == "analyze" {
            self.dir.join(format!("{}.manifest.json", self.name))
        } else {
            self.dir.join("manifest.json")
        }
    }

    fn finish(mut self) -> Result<StageReport> {
        self.manifest.wall_time_ms = self.started.elapsed().as_millis() as u64;
        let manifest_path = self.manifest_file();
        self.manifest.save(&manifest_path)?;
        Ok(StageReport {
            warnings: self.warnings,
            manifest_path,
        })
    }
}

fn load_stage_manifest(cfg: &PipelineConfig, stage: &'static str) -> Option<Manifest> {
    let path = if stage == "eval" || stage == "analyze" {
        cfg.stage_dir(stage).join(format!("{stage}.manifest.json"))
    } else {
        cfg.stage_dir(stage).join("manifest.json")
    };
    Manifest::load(path).ok()
}

// Canonical artifact names.
const ENTITIES: &str = "entities.tsv";
const PAIRS: &str = "pairs.tsv";
const LABELED_PAIRS: &str = "labeled_pairs.tsv";
const CONTRASTIVE_PAIRS: &str = "contrastive_pairs.tsv";
const STATS: &str = "stats.json";

fn kb_file(lang: &str) -> String {
    format!("kb.{lang}.tsv")
}
fn queries_file(lang: &str) -> String {
    format!("queries.{lang}.tsv")
}
fn qrels_file(lang: &str) -> String {
    format!("qrels.{lang}.txt")
}
fn run_file(lang: &str) -> String {
    format!("run.{lang}.txt")
}

#[derive(Debug, Default, Serialize)]
struct IngestStats {
    entities: usize,
    occupations: usize,
    skills: usize,
    kb_sizes: BTreeMap<String, usize>,
    query_counts: BTreeMap<String, usize>,
    qrels_queries: BTreeMap<String, usize>,
    pair_rows: BTreeMap<String, usize>,
    pair_duplicates: BTreeMap<String, usize>,
}

/// Validate every configured input file and write canonical copies that the
/// rest of the pipeline consumes.
pub fn run_ingest(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut stage = Stage::new(cfg, "ingest")?;
    let mut stats = IngestStats::default();

    stage.consume(&cfg.entities)?;
    let entities = load_entities(&cfg.entities)?;
    stats.entities = entities.len();
    stats.occupations = entities
        .iter()
        .filter(|e| e.entity_type == crate::corpus::EntityType::Occupation)
        .count();
    stats.skills = entities.len() - stats.occupations;
    let out = stage.path(ENTITIES);
    write_entities(&out, &entities)?;
    stage.produce(&out)?;

    if let Some(pairs_path) = &cfg.pairs {
        stage.consume(pairs_path)?;
        let sets = load_pairs(pairs_path)?;
        for set in &sets {
            let s = set.stats();
            stats.pair_rows.insert(set.language.clone(), s.total);
            stats
                .pair_duplicates
                .insert(set.language.clone(), s.duplicates);
        }
        let out = stage.path(PAIRS);
        write_pairs(&out, &sets)?;
        stage.produce(&out)?;
    }

    for lang in &cfg.languages {
        stage.consume(&cfg.kb[lang])?;
        let kb = load_kb(&cfg.kb[lang], lang)?;
        stats.kb_sizes.insert(lang.clone(), kb.len());
        let out = stage.path(&kb_file(lang));
        write_kb(&out, &kb)?;
        stage.produce(&out)?;

        stage.consume(&cfg.queries[lang])?;
        let queries = load_queries(&cfg.queries[lang])?;
        stats.query_counts.insert(lang.clone(), queries.len());
        let out = stage.path(&queries_file(lang));
        write_queries(&out, &queries)?;
        stage.produce(&out)?;

        stage.consume(&cfg.qrels[lang])?;
        let qrels = crate::corpus::load_qrels(&cfg.qrels[lang])?;
        stats.qrels_queries.insert(lang.clone(), qrels.len());
        let out = stage.path(&qrels_file(lang));
        write_qrels(&out, &qrels)?;
        stage.produce(&out)?;
    }

    let stats_path = stage.path(STATS);
    fs::write(&stats_path, serde_json::to_string_pretty(&stats)? + "\n")?;
    stage.produce(&stats_path)?;
    stage.finish()
}

fn ingest_artifact(cfg: &PipelineConfig, file: &str) -> PathBuf {
    cfg.stage_dir("ingest").join(file)
}

fn canonical_pairs(cfg: &PipelineConfig, stage: &mut Stage) -> Result<Vec<RawPairSet>> {
    let ingest_manifest = load_stage_manifest(cfg, "ingest");
    let path = ingest_artifact(cfg, PAIRS);
    stage.consume_artifact(&path, "ingest", ingest_manifest.as_ref())?;
    load_pairs(&path)
}

#[derive(Debug, Serialize)]
struct PairsStats {
    #[serde(skip_serializing_if = "Option::is_none")]
    classification: Option<BTreeMap<String, crate::pairs::SampleStats>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    contrastive: Option<crate::pairs::ContrastiveStats>,
}

/// Generate the training set for the configured method.
pub fn run_pairs(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut stage = Stage::new(cfg, "pairs")?;
    match cfg.method {
        Method::Prompt => {
            return Err(Error::Validation(
                "method 'prompt' is zero-shot; no pairs stage applies".into(),
            ))
        }
        Method::Classify => {
            let sets = canonical_pairs(cfg, &mut stage)?;
            let for_lang = |lang: &str| -> Result<&RawPairSet> {
                sets.iter().find(|s| s.language == *lang).ok_or_else(|| {
                    Error::Validation(format!("pairs file has no rows for language '{lang}'"))
                })
            };
            let mut labeled: Vec<LabeledPair> = Vec::new();
            let mut per_language = BTreeMap::new();
            match cfg.sampler_scope {
                SamplerScope::PerLanguage => {
                    for lang in &cfg.languages {
                        let (mut out, stats) =
                            make_classification_set(for_lang(lang)?, &cfg.sampler)?;
                        labeled.append(&mut out);
                        per_language.insert(lang.clone(), stats);
                    }
                }
                SamplerScope::Global => {
                    let selected: Vec<RawPairSet> = cfg
                        .languages
                        .iter()
                        .map(|lang| for_lang(lang).cloned())
                        .collect::<Result<_>>()?;
                    let merged = concat_pairsets(&selected)?;
                    let (mut out, stats) = make_classification_set(&merged, &cfg.sampler)?;
                    labeled.append(&mut out);
                    per_language.insert("multi".to_string(), stats);
                }
            }
            let out = stage.path(LABELED_PAIRS);
            write_labeled_pairs(&out, &labeled)?;
            stage.produce(&out)?;
            let stats_path = stage.path(STATS);
            fs::write(
                &stats_path,
                serde_json::to_string_pretty(&PairsStats {
                    classification: Some(per_language),
                    contrastive: None,
                })? + "\n",
            )?;
            stage.produce(&stats_path)?;
        }
        Method::Contrastive => {
            let ingest_manifest = load_stage_manifest(cfg, "ingest");
            let entities_path = ingest_artifact(cfg, ENTITIES);
            stage.consume_artifact(&entities_path, "ingest", ingest_manifest.as_ref())?;
            let entities = load_entities(&entities_path)?;
            let links;
            let links_ref = match cfg.task {
                Task::A => None,
                Task::B => {
                    let sets = canonical_pairs(cfg, &mut stage)?;
                    links = concat_pairsets(&sets)?;
                    Some(&links)
                }
            };
            let (pairs, stats) =
                make_contrastive_set(&entities, cfg.task, &cfg.languages, links_ref)?;
            if pairs.is_empty() {
                return Err(Error::Validation(
                    "contrastive pair generation produced no pairs; check labels and links".into(),
                ));
            }
            let out = stage.path(CONTRASTIVE_PAIRS);
            write_contrastive_pairs(&out, &pairs)?;
            stage.produce(&out)?;
            let stats_path = stage.path(STATS);
            fs::write(
                &stats_path,
                serde_json::to_string_pretty(&PairsStats {
                    classification: None,
                    contrastive: Some(stats),
                })? + "\n",
            )?;
            stage.produce(&stats_path)?;
        }
    }
    stage.finish()
}

/// Deterministic 90/10 train/held-out split for contrastive training.
fn split_heldout(
    pairs: Vec<ContrastivePair>,
    seed: u64,
) -> (Vec<ContrastivePair>, Vec<ContrastivePair>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut indices: Vec<usize> = (0..pairs.len()).collect();
    indices.shuffle(&mut rng);
    let heldout_len = pairs.len() / 10;
    let (held_idx, train_idx) = indices.split_at(heldout_len);
    let held: Vec<ContrastivePair> = held_idx.iter().map(|&i| pairs[i].clone()).collect();
    let train: Vec<ContrastivePair> = train_idx.iter().map(|&i| pairs[i].clone()).collect();
    (train, held)
}

/// Train the configured model and write its checkpoint plus the step log.
pub fn run_train(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut stage = Stage::new(cfg, "train")?;
    let pairs_manifest = load_stage_manifest(cfg, "pairs");
    let encoder = ToyEncoderParams::init(
        cfg.encoder.hash_dim,
        cfg.encoder.embed_dim,
        cfg.encoder.seed,
    )?;
    match cfg.method {
        Method::Prompt => {
            return Err(Error::Validation(
                "method 'prompt' is zero-shot; no train stage applies".into(),
            ))
        }
        Method::Contrastive => {
            let pairs_path = cfg.stage_dir("pairs").join(CONTRASTIVE_PAIRS);
            stage.consume_artifact(&pairs_path, "pairs", pairs_manifest.as_ref())?;
            let pairs = load_contrastive_pairs(&pairs_path)?;
            let (train, heldout) = split_heldout(pairs, cfg.contrastive.seed);
            let heldout_opt = if heldout.len() >= 2 {
                Some(heldout.as_slice())
            } else {
                None
            };
            let outcome = train_contrastive(&train, &encoder, &cfg.contrastive, heldout_opt)?;
            save_encoder_checkpoint(&outcome.params, &stage.dir)?;
            let log_path = stage.path("log.jsonl");
            outcome.log.write_jsonl(&log_path)?;
            stage.produce(&stage.path("checkpoint.json"))?;
            stage.produce(&stage.path("encoder.f32"))?;
            stage.produce(&log_path)?;
        }
        Method::Classify => {
            let pairs_path = cfg.stage_dir("pairs").join(LABELED_PAIRS);
            stage.consume_artifact(&pairs_path, "pairs", pairs_manifest.as_ref())?;
            let data = load_labeled_pairs(&pairs_path)?;
            let scorer = PairScorerParams::init(encoder)?;
            let outcome = train_classifier(&data, &scorer, &cfg.classifier)?;
            save_scorer_checkpoint(&outcome.params, &stage.dir)?;
            let log_path = stage.path("log.jsonl");
            outcome.log.write_jsonl(&log_path)?;
            stage.produce(&stage.path("checkpoint.json"))?;
            stage.produce(&stage.path("encoder.f32"))?;
            stage.produce(&stage.path("head.f32"))?;
            stage.produce(&log_path)?;
        }
    }
    stage.finish()
}

fn embed_name(kind: &str, lang: &str, ext: &str) -> String {
    format!("{kind}.{lang}.{ext}")
}

fn export_stage_embeddings(
    stage: &mut Stage,
    kind: &str,
    lang: &str,
    matrix: &EmbeddingMatrix,
) -> Result<()> {
    let meta = stage.path(&embed_name(kind, lang, "json"));
    let blob = stage.path(&embed_name(kind, lang, "f32"));
    let ids = stage.path(&embed_name(kind, lang, "ids.txt"));
    export_embeddings(matrix, &meta, &blob, &ids)?;
    stage.produce(&meta)?;
    stage.produce(&blob)?;
    stage.produce(&ids)?;
    Ok(())
}

/// Embed queries (with the task prompt for the prompting method) and the
/// knowledge base, or import external embeddings where configured, writing
/// everything in the exchange format.
pub fn run_embed(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut stage = Stage::new(cfg, "embed")?;
    if cfg.method == Method::Classify {
        return Err(Error::Validation(
            "method 'classify' scores pairs directly; no embed stage applies".into(),
        ));
    }
    let ingest_manifest = load_stage_manifest(cfg, "ingest");

    let encoder = match cfg.method {
        Method::Prompt => ToyEncoderParams::init(
            cfg.encoder.hash_dim,
            cfg.encoder.embed_dim,
            cfg.encoder.seed,
        )?,
        Method::Contrastive => {
            let checkpoint = cfg.stage_dir("train").join("checkpoint.json");
            let train_manifest = load_stage_manifest(cfg, "train");
            stage.consume_artifact(&checkpoint, "train", train_manifest.as_ref())?;
            load_encoder_checkpoint(cfg.stage_dir("train"))?
        }
        Method::Classify => unreachable!(),
    };
    let prompt = match cfg.method {
        Method::Prompt => Some(cfg.prompt_for_task()),
        _ => None,
    };

    for lang in &cfg.languages {
        let external = cfg.external.get(lang);

        let queries_matrix = match external.and_then(|e| e.queries.as_ref()) {
            Some((meta, blob)) => {
                stage.consume(meta)?;
                stage.consume(blob)?;
                import_embeddings(meta, blob)?
            }
            None => {
                let queries_path = ingest_artifact(cfg, &queries_file(lang));
                stage.consume_artifact(&queries_path, "ingest", ingest_manifest.as_ref())?;
                let queries = load_queries(&queries_path)?;
                let texts: Vec<&str> = queries.iter().map(|(_, t)| t.as_str()).collect();
                let (matrix, enc_stats) =
                    encode_with_stats(&texts, &encoder, prompt.as_ref(), true)?;
                if enc_stats.empty_texts > 0 {
                    stage.warnings.push(format!(
                        "{lang}: {} empty query text(s) encoded as the prompt alone",
                        enc_stats.empty_texts
                    ));
                }
                matrix.with_ids(queries.into_iter().map(|(qid, _)| qid).collect())?
            }
        };
        export_stage_embeddings(&mut stage, "queries", lang, &queries_matrix)?;

        let kb_matrix = match external.and_then(|e| e.kb.as_ref()) {
            Some((meta, blob)) => {
                stage.consume(meta)?;
                stage.consume(blob)?;
                import_embeddings(meta, blob)?
            }
            None => {
                let kb_path = ingest_artifact(cfg, &kb_file(lang));
                stage.consume_artifact(&kb_path, "ingest", ingest_manifest.as_ref())?;
                let kb = load_kb(&kb_path, lang)?;
                let texts: Vec<&str> = kb.entries.iter().map(|(_, t)| t.as_str()).collect();
                let (matrix, enc_stats) = encode_with_stats(&texts, &encoder, None, true)?;
                if enc_stats.empty_texts > 0 {
                    stage.warnings.push(format!(
                        "{lang}: {} empty kb text(s) encoded from sentinels alone",
                        enc_stats.empty_texts
                    ));
                }
                matrix.with_ids(kb.entries.into_iter().map(|(id, _)| id).collect())?
            }
        };
        export_stage_embeddings(&mut stage, "kb", lang, &kb_matrix)?;
    }
    stage.finish()
}

/// Produce one full-knowledge-base run file per language.
pub fn run_rank(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut stage = Stage::new(cfg, "rank")?;
    let ingest_manifest = load_stage_manifest(cfg, "ingest");

    for lang in &cfg.languages {
        let run: RunFile = match cfg.method {
            Method::Prompt | Method::Contrastive => {
                let embed_manifest = load_stage_manifest(cfg, "embed");
                let embed_dir = cfg.stage_dir("embed");
                let q_meta = embed_dir.join(embed_name("queries", lang, "json"));
                let q_blob = embed_dir.join(embed_name("queries", lang, "f32"));
                let d_meta = embed_dir.join(embed_name("kb", lang, "json"));
                let d_blob = embed_dir.join(embed_name("kb", lang, "f32"));
                for path in [&q_meta, &q_blob, &d_meta, &d_blob] {
                    stage.consume_artifact(path, "embed", embed_manifest.as_ref())?;
                }
                let queries = import_embeddings(&q_meta, &q_blob)?;
                let docs = import_embeddings(&d_meta, &d_blob)?;
                rank_by_matrices(&queries, &docs, &cfg.rank_tag)?
            }
            Method::Classify => {
                let train_manifest = load_stage_manifest(cfg, "train");
                let checkpoint = cfg.stage_dir("train").join("checkpoint.json");
                stage.consume_artifact(&checkpoint, "train", train_manifest.as_ref())?;
                let scorer = load_scorer_checkpoint(cfg.stage_dir("train"))?;
                let queries_path = ingest_artifact(cfg, &queries_file(lang));
                let kb_path = ingest_artifact(cfg, &kb_file(lang));
                stage.consume_artifact(&queries_path, "ingest", ingest_manifest.as_ref())?;
                stage.consume_artifact(&kb_path, "ingest", ingest_manifest.as_ref())?;
                let queries = load_queries(&queries_path)?;
                let kb = load_kb(&kb_path, lang)?;
                rank_by_classifier(&queries, &kb, &scorer, &cfg.rank_tag)?
            }
        };
        let run = match cfg.top_k {
            Some(k) => {
                stage.warnings.push(format!(
                    "rank.top_k = {k}: truncated run; MAP may drop gold documents"
                ));
                run.truncate(k)
            }
            None => run,
        };
        let out = stage.path(&run_file(lang));
        write_run(&out, &run)?;
        stage.produce(&out)?;
    }
    stage.finish()
}

/// Load the canonical queries + qrels of one language as a gold standard.
fn load_language_gold(cfg: &PipelineConfig, lang: &str) -> Result<GoldStandard> {
    let qrels_path = ingest_artifact(cfg, &qrels_file(lang));
    let queries_path = ingest_artifact(cfg, &queries_file(lang));
    load_gold_standard(&qrels_path, Some(queries_path.as_path()))
}

/// Evaluate each language run against its qrels and write report.json,
/// report.txt and per_query.csv. Refuses runs whose recorded inputs no
/// longer match the current artifacts (silently mixed runs).
pub fn run_eval(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut stage = Stage::new(cfg, "eval")?;
    let rank_manifest = load_stage_manifest(cfg, "rank");
    let ingest_manifest = load_stage_manifest(cfg, "ingest");

    // Mixed-run guard: every artifact consumed along the run's production
    // chain (rank <- embed/train <- pairs) must still hash the way its
    // consumer recorded it, otherwise the run and the current canonical
    // corpus no longer belong together.
    let mut drift: Vec<String> = Vec::new();
    for upstream in ["rank", "embed", "train", "pairs"] {
        let Some(manifest) = load_stage_manifest(cfg, upstream) else {
            continue;
        };
        for (path, recorded) in &manifest.inputs {
            match super::manifest::sha256_file(path) {
                Ok(current) if &current == recorded => {}
                _ => drift.push(format!("{path} (consumed by `{upstream}`)")),
            }
        }
    }
    if !drift.is_empty() {
        return Err(Error::Validation(format!(
            "refusing to evaluate a mixed run: inputs changed since the run was produced: {}; \
             rerun `rank` and its upstream stages",
            drift.join(", ")
        )));
    }

    let mut report = EvalReport::default();
    let mut all_aps: Vec<f64> = Vec::new();
    let mut csv = String::from("language,query_id,average_precision\n");
    for lang in &cfg.languages {
        let run_path = cfg.stage_dir("rank").join(run_file(lang));
        stage.consume_artifact(&run_path, "rank", rank_manifest.as_ref())?;
        let run = read_run(&run_path)?;

        let qrels_path = ingest_artifact(cfg, &qrels_file(lang));
        stage.consume_artifact(&qrels_path, "ingest", ingest_manifest.as_ref())?;
        let queries_path = ingest_artifact(cfg, &queries_file(lang));
        stage.consume_artifact(&queries_path, "ingest", ingest_manifest.as_ref())?;
        let gold = load_language_gold(cfg, lang)?;

        let outcome = evaluate_run(&run, &gold)?;
        report.by_language.insert(lang.clone(), outcome.map);
        report
            .warnings
            .extend(outcome.warnings.into_iter().map(|w| format!("{lang}: {w}")));
        for (qid, ap) in outcome.ap_per_query {
            csv.push_str(&format!("{lang},{qid},{ap:.6}\n"));
            report.ap_per_query.insert(format!("{lang}:{qid}"), ap);
            all_aps.push(ap);
        }
    }
    report.map_overall = all_aps.iter().sum::<f64>() / all_aps.len() as f64;

    let json_path = stage.path("report.json");
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
    stage.produce(&json_path)?;
    let text_path = stage.path("report.txt");
    fs::write(&text_path, report.render_text())?;
    stage.produce(&text_path)?;
    let csv_path = stage.path("per_query.csv");
    fs::write(&csv_path, csv)?;
    stage.produce(&csv_path)?;
    stage.finish()
}

#[derive(Debug, Default, Serialize)]
struct AnalysisReport {
    coverage: BTreeMap<String, CoverageStats>,
    /// language -> (group key -> mean AP); keys "unmapped" and "0".."9".
    major_groups: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    by_language_pair: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    macro_avg_en_es_de: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

impl AnalysisReport {
    fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Major-group mapping coverage\n");
        out.push_str(&format!(
            "  {:<10} {:>8} {:>8} {:>14}\n",
            "language", "total", "mapped", "unmapped (%)"
        ));
        for (lang, stats) in &self.coverage {
            out.push_str(&format!(
                "  {:<10} {:>8} {:>8} {:>13.1}%\n",
                lang, stats.total, stats.mapped, stats.unmapped_pct
            ));
        }
        for (lang, groups) in &self.major_groups {
            out.push_str(&format!("\nMAP by ESCO major group ({lang})\n"));
            out.push_str(&render_major_group_rows(groups));
        }
        if !self.by_language_pair.is_empty() {
            out.push_str("\nMAP by language pair\n");
            for (pair, map) in &self.by_language_pair {
                out.push_str(&format!("  {pair:<8} {:.3}\n", round3(*map)));
            }
            if let Some(avg) = self.macro_avg_en_es_de {
                out.push_str(&format!("  Avg. (en,es,de): {:.3}\n", round3(avg)));
            }
        }
        if !self.warnings.is_empty() {
            out.push_str("\nWarnings\n");
            for warning in &self.warnings {
                out.push_str(&format!("  - {warning}\n"));
            }
        }
        out
    }
}

/// Coverage, major-group MAP breakdowns, and (when configured) the
/// cross-lingual table.
pub fn run_analyze(cfg: &PipelineConfig) -> Result<StageReport> {
    let mut stage = Stage::new(cfg, "analyze")?;
    let ingest_manifest = load_stage_manifest(cfg, "ingest");
    let rank_manifest = load_stage_manifest(cfg, "rank");

    let entities_path = ingest_artifact(cfg, ENTITIES);
    stage.consume_artifact(&entities_path, "ingest", ingest_manifest.as_ref())?;
    let entities = load_entities(&entities_path)?;

    let mut report = AnalysisReport::default();
    for lang in &cfg.languages {
        let kb_path = ingest_artifact(cfg, &kb_file(lang));
        stage.consume_artifact(&kb_path, "ingest", ingest_manifest.as_ref())?;
        let kb: KnowledgeBase = load_kb(&kb_path, lang)?;
        report
            .coverage
            .insert(lang.clone(), coverage_stats(&kb, &entities)?);

        let run_path = cfg.stage_dir("rank").join(run_file(lang));
        stage.consume_artifact(&run_path, "rank", rank_manifest.as_ref())?;
        let run = read_run(&run_path)?;
        let gold = load_language_gold(cfg, lang)?;
        let groups = major_group_report(&run, &gold, &entities)?;
        report.major_groups.insert(
            lang.clone(),
            groups
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        );
    }

    if let Some(settings) = &cfg.crosslingual {
        let mut runs = Vec::new();
        for pair in &settings.pairs {
            let key = pair.to_string();
            let run_path = &settings.runs[&key];
            let qrels_path = &settings.qrels[&key];
            stage.consume(run_path)?;
            stage.consume(qrels_path)?;
            let run = read_run(run_path)?;
            let gold = load_gold_standard(qrels_path, None)?;
            runs.push((pair.clone(), run, gold));
        }
        let cross = crosslingual_report(&runs)?;
        report.by_language_pair = cross.by_language_pair;
        report.macro_avg_en_es_de = cross.macro_avg_en_es_de;
        report.warnings.extend(cross.warnings);
    }

    let json_path = stage.path("analysis.json");
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
    stage.produce(&json_path)?;
    let text_path = stage.path("analysis.txt");
    fs::write(&text_path, report.render_text())?;
    stage.produce(&text_path)?;
    stage.finish()
}
