//! Pipeline configuration: a flat `key = value` text file with dotted
//! sections. Unknown keys are rejected and method-specific sections are
//! validated before any stage runs, so a bad config fails fast.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::embedding::{PromptTemplate, TASK_A_PROMPT, TASK_B_PROMPT};
use crate::error::{Error, Result};
use crate::eval::LangPair;
use crate::pairs::{PoolKind, SamplerConfig, Task};
use crate::train::{ClassifierConfig, ContrastiveConfig, StlrSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Classify,
    Contrastive,
    Prompt,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Classify => f.write_str("classify"),
            Method::Contrastive => f.write_str("contrastive"),
            Method::Prompt => f.write_str("prompt"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "classify" => Ok(Method::Classify),
            "contrastive" => Ok(Method::Contrastive),
            "prompt" => Ok(Method::Prompt),
            other => Err(format!(
                "expected method 'classify', 'contrastive' or 'prompt', got '{other}'"
            )),
        }
    }
}

/// Whether classification negatives are drawn per language or from the
/// concatenated multilingual pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerScope {
    PerLanguage,
    Global,
}

#[derive(Debug, Clone)]
pub struct EncoderSettings {
    pub hash_dim: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

/// External embedding files for one language (the exchange-format bridge to
/// pretrained backends).
#[derive(Debug, Clone, Default)]
pub struct ExternalEmbeddings {
    pub queries: Option<(PathBuf, PathBuf)>,
    pub kb: Option<(PathBuf, PathBuf)>,
}

#[derive(Debug, Clone)]
pub struct CrosslingualSettings {
    pub pairs: Vec<LangPair>,
    pub runs: BTreeMap<String, PathBuf>,
    pub qrels: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub task: Task,
    pub method: Method,
    pub languages: Vec<String>,
    pub seed: u64,
    pub entities: PathBuf,
    pub pairs: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub kb: BTreeMap<String, PathBuf>,
    pub queries: BTreeMap<String, PathBuf>,
    pub qrels: BTreeMap<String, PathBuf>,
    pub sampler: SamplerConfig,
    pub sampler_scope: SamplerScope,
    pub encoder: EncoderSettings,
    pub contrastive: ContrastiveConfig,
    pub classifier: ClassifierConfig,
    pub task_a_prompt: String,
    pub task_b_prompt: String,
    pub rank_tag: String,
    pub top_k: Option<usize>,
    pub external: BTreeMap<String, ExternalEmbeddings>,
    pub crosslingual: Option<CrosslingualSettings>,
    /// Grid axes: dotted config key -> candidate values, in file order.
    pub grid: BTreeMap<String, Vec<String>>,
    /// The flattened effective key-value view, snapshotted into manifests.
    raw: BTreeMap<String, String>,
}

/// Tracks which keys were consumed so leftovers can be reported as unknown.
struct KeyBag {
    file: PathBuf,
    map: BTreeMap<String, String>,
    lines: BTreeMap<String, usize>,
    consumed: BTreeSet<String>,
}

impl KeyBag {
    fn take(&mut self, key: &str) -> Option<String> {
        self.consumed.insert(key.to_string());
        self.map.get(key).cloned()
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key).ok_or_else(|| {
            Error::Validation(format!(
                "{}: missing required key '{key}'",
                self.file.display()
            ))
        })
    }

    /// All keys `prefix.<suffix>`, consumed, in file order of appearance.
    fn take_prefixed(&mut self, prefix: &str) -> Vec<(String, String)> {
        let dotted = format!("{prefix}.");
        let mut found: Vec<(String, String, usize)> = self
            .map
            .iter()
            .filter(|(k, _)| k.starts_with(&dotted) && !self.consumed.contains(*k))
            .map(|(k, v)| (k[dotted.len()..].to_string(), v.clone(), self.lines[k]))
            .collect();
        for (suffix, _, _) in &found {
            self.consumed.insert(format!("{prefix}.{suffix}"));
        }
        found.sort_by_key(|(_, _, line)| *line);
        found.into_iter().map(|(k, v, _)| (k, v)).collect()
    }

    fn reject_unknown(&self) -> Result<()> {
        for (key, line) in &self.lines {
            if !self.consumed.contains(key) {
                return Err(Error::Parse {
                    file: self.file.clone(),
                    line: *line,
                    msg: format!("unknown key '{key}'"),
                });
            }
        }
        Ok(())
    }
}

fn parse_kv_file(path: &Path, overrides: &[(String, String)]) -> Result<KeyBag> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    let mut lines = BTreeMap::new();
    for (i, raw_line) in content.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            file: path.to_path_buf(),
            line: line_no,
            msg: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: line_no,
                msg: "empty key".into(),
            });
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: line_no,
                msg: format!("duplicate key '{key}'"),
            });
        }
        lines.insert(key, line_no);
    }
    for (key, value) in overrides {
        map.insert(key.clone(), value.clone());
        lines.entry(key.clone()).or_insert(0);
    }
    Ok(KeyBag {
        file: path.to_path_buf(),
        map,
        lines,
        consumed: BTreeSet::new(),
    })
}

fn parse_as<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::Validation(format!("key '{key}': {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Validation(format!(
            "key '{key}': expected 'true' or 'false', got '{other}'"
        ))),
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    /// Load, letting CLI flags override file keys (e.g. `seed`, `method`).
    pub fn load_with_overrides(
        path: impl AsRef<Path>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let path = path.as_ref();
        let mut bag = parse_kv_file(path, overrides)?;

        let task: Task = parse_as("task", &bag.require("task")?)?;
        let method: Method = parse_as("method", &bag.require("method")?)?;
        let languages: Vec<String> = bag
            .require("languages")?
            .split(',')
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        if languages.is_empty() {
            return Err(Error::Validation(
                "key 'languages': at least one language".into(),
            ));
        }
        {
            let distinct: BTreeSet<&String> = languages.iter().collect();
            if distinct.len() != languages.len() {
                return Err(Error::Validation(
                    "key 'languages': duplicate language codes".into(),
                ));
            }
        }
        let seed: u64 = match bag.take("seed") {
            Some(v) => parse_as("seed", &v)?,
            None => 0,
        };

        let entities = PathBuf::from(bag.require("paths.entities")?);
        let pairs = bag.take("paths.pairs").map(PathBuf::from);
        let output_dir = PathBuf::from(bag.require("paths.output_dir")?);
        let per_lang = |bag: &mut KeyBag, family: &str| -> Result<BTreeMap<String, PathBuf>> {
            let mut out = BTreeMap::new();
            for (lang, value) in bag.take_prefixed(&format!("paths.{family}")) {
                out.insert(lang, PathBuf::from(value));
            }
            for lang in &languages {
                if !out.contains_key(lang) {
                    return Err(Error::Validation(format!(
                        "missing key 'paths.{family}.{lang}' for configured language '{lang}'"
                    )));
                }
            }
            Ok(out)
        };
        let kb = per_lang(&mut bag, "kb")?;
        let queries = per_lang(&mut bag, "queries")?;
        let qrels = per_lang(&mut bag, "qrels")?;

        // Sampler section (classification only).
        let sampler_keys = bag.take_prefixed("sampler");
        if method != Method::Classify && !sampler_keys.is_empty() {
            return Err(Error::Validation(format!(
                "sampler.* keys apply only to method 'classify' (method is '{method}')"
            )));
        }
        let mut neg_ratio = 1.0;
        let mut sampler_seed = seed;
        let mut pool = match task {
            Task::A => PoolKind::Titles,
            Task::B => PoolKind::Skills,
        };
        let mut sampler_scope = SamplerScope::PerLanguage;
        for (key, value) in sampler_keys {
            match key.as_str() {
                "neg_ratio" => neg_ratio = parse_as("sampler.neg_ratio", &value)?,
                "seed" => sampler_seed = parse_as("sampler.seed", &value)?,
                "pool" => {
                    pool = match value.as_str() {
                        "titles" => PoolKind::Titles,
                        "skills" => PoolKind::Skills,
                        "descriptions" => PoolKind::Descriptions,
                        other => {
                            return Err(Error::Validation(format!(
                                "key 'sampler.pool': unknown pool '{other}'"
                            )))
                        }
                    }
                }
                "scope" => sampler_scope = match value.as_str() {
                    "per_language" => SamplerScope::PerLanguage,
                    "global" => SamplerScope::Global,
                    other => return Err(Error::Validation(format!(
                        "key 'sampler.scope': expected 'per_language' or 'global', got '{other}'"
                    ))),
                },
                other => {
                    return Err(Error::Validation(format!("unknown key 'sampler.{other}'")));
                }
            }
        }
        let sampler = SamplerConfig::new(neg_ratio, sampler_seed, pool)?;

        // Encoder section.
        let mut encoder = EncoderSettings {
            hash_dim: 2048,
            embed_dim: 32,
            seed,
        };
        for (key, value) in bag.take_prefixed("encoder") {
            match key.as_str() {
                "hash_dim" => encoder.hash_dim = parse_as("encoder.hash_dim", &value)?,
                "embed_dim" => encoder.embed_dim = parse_as("encoder.embed_dim", &value)?,
                "seed" => encoder.seed = parse_as("encoder.seed", &value)?,
                other => {
                    return Err(Error::Validation(format!("unknown key 'encoder.{other}'")));
                }
            }
        }

        // Trainer section, method-specific.
        let trainer_keys = bag.take_prefixed("trainer");
        let mut contrastive = ContrastiveConfig {
            seed,
            ..Default::default()
        };
        let mut classifier = ClassifierConfig {
            seed,
            ..Default::default()
        };
        match method {
            Method::Prompt => {
                if !trainer_keys.is_empty() {
                    return Err(Error::Validation(
                        "trainer.* keys do not apply to method 'prompt' (zero-shot)".into(),
                    ));
                }
            }
            Method::Contrastive => {
                for (key, value) in trainer_keys {
                    match key.as_str() {
                        "k_negatives" => {
                            contrastive.k_negatives = parse_as("trainer.k_negatives", &value)?
                        }
                        "batch_size" => {
                            contrastive.batch_size = parse_as("trainer.batch_size", &value)?
                        }
                        "learning_rate" => {
                            contrastive.learning_rate = parse_as("trainer.learning_rate", &value)?
                        }
                        "epochs" => contrastive.epochs = parse_as("trainer.epochs", &value)?,
                        "seed" => contrastive.seed = parse_as("trainer.seed", &value)?,
                        "symmetric" => {
                            contrastive.symmetric = parse_bool("trainer.symmetric", &value)?
                        }
                        "temperature" => {
                            contrastive.temperature = parse_as("trainer.temperature", &value)?
                        }
                        other => {
                            return Err(Error::Validation(format!(
                                "key 'trainer.{other}' does not apply to method 'contrastive'"
                            )));
                        }
                    }
                }
                contrastive.validate()?;
            }
            Method::Classify => {
                let mut scheduler = StlrSchedule::default();
                for (key, value) in trainer_keys {
                    match key.as_str() {
                        "batch_size" => {
                            classifier.batch_size = parse_as("trainer.batch_size", &value)?
                        }
                        "learning_rate" => {
                            classifier.learning_rate = parse_as("trainer.learning_rate", &value)?
                        }
                        "epochs" => classifier.epochs = parse_as("trainer.epochs", &value)?,
                        "seed" => classifier.seed = parse_as("trainer.seed", &value)?,
                        "warmup_frac" => {
                            scheduler.warmup_frac = parse_as("trainer.warmup_frac", &value)?
                        }
                        "floor_ratio" => {
                            scheduler.floor_ratio = parse_as("trainer.floor_ratio", &value)?
                        }
                        other => {
                            return Err(Error::Validation(format!(
                                "key 'trainer.{other}' does not apply to method 'classify'"
                            )));
                        }
                    }
                }
                classifier.scheduler = scheduler;
                classifier.validate()?;
            }
        }
        if method == Method::Classify && pairs.is_none() {
            return Err(Error::Validation(
                "method 'classify' requires 'paths.pairs' (gold training pairs)".into(),
            ));
        }
        if method == Method::Contrastive && task == Task::B && pairs.is_none() {
            return Err(Error::Validation(
                "task B contrastive training requires 'paths.pairs' (job-skill links)".into(),
            ));
        }

        let task_a_prompt = bag
            .take("task_a_prompt")
            .unwrap_or_else(|| TASK_A_PROMPT.to_string());
        let task_b_prompt = bag
            .take("task_b_prompt")
            .unwrap_or_else(|| TASK_B_PROMPT.to_string());

        let rank_tag = bag
            .take("rank.tag")
            .unwrap_or_else(|| "jobmatch".to_string());
        let top_k = match bag.take("rank.top_k") {
            Some(v) => Some(parse_as::<usize>("rank.top_k", &v)?),
            None => None,
        };

        // External embedding files, one family per language.
        let mut external: BTreeMap<String, ExternalEmbeddings> = BTreeMap::new();
        let mut external_parts: BTreeMap<String, BTreeMap<String, PathBuf>> = BTreeMap::new();
        for (key, value) in bag.take_prefixed("external") {
            let (part, lang) = key.split_once('.').ok_or_else(|| {
                Error::Validation(format!(
                    "key 'external.{key}': expected external.<part>.<lang>"
                ))
            })?;
            if !matches!(
                part,
                "queries_meta" | "queries_blob" | "kb_meta" | "kb_blob"
            ) {
                return Err(Error::Validation(format!("unknown key 'external.{key}'")));
            }
            external_parts
                .entry(lang.to_string())
                .or_default()
                .insert(part.to_string(), PathBuf::from(value));
        }
        for (lang, parts) in external_parts {
            let mut ext = ExternalEmbeddings::default();
            match (parts.get("queries_meta"), parts.get("queries_blob")) {
                (Some(m), Some(b)) => ext.queries = Some((m.clone(), b.clone())),
                (None, None) => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "external query embeddings for '{lang}' need both meta and blob paths"
                    )))
                }
            }
            match (parts.get("kb_meta"), parts.get("kb_blob")) {
                (Some(m), Some(b)) => ext.kb = Some((m.clone(), b.clone())),
                (None, None) => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "external kb embeddings for '{lang}' need both meta and blob paths"
                    )))
                }
            }
            external.insert(lang, ext);
        }

        // Cross-lingual analysis inputs.
        let crosslingual = match bag.take("crosslingual.pairs") {
            None => {
                if !bag.take_prefixed("crosslingual").is_empty() {
                    return Err(Error::Validation(
                        "crosslingual.run/qrels keys require 'crosslingual.pairs'".into(),
                    ));
                }
                None
            }
            Some(pairs_value) => {
                let pairs: Vec<LangPair> = pairs_value
                    .split(',')
                    .map(|p| parse_as::<LangPair>("crosslingual.pairs", p.trim()))
                    .collect::<Result<_>>()?;
                let mut runs = BTreeMap::new();
                let mut qrels_paths = BTreeMap::new();
                for (key, value) in bag.take_prefixed("crosslingual") {
                    let (kind, pair) = key.split_once('.').ok_or_else(|| {
                        Error::Validation(format!(
                            "key 'crosslingual.{key}': expected crosslingual.run.<pair> or crosslingual.qrels.<pair>"
                        ))
                    })?;
                    match kind {
                        "run" => runs.insert(pair.to_string(), PathBuf::from(value)),
                        "qrels" => qrels_paths.insert(pair.to_string(), PathBuf::from(value)),
                        other => {
                            return Err(Error::Validation(format!(
                                "unknown key 'crosslingual.{other}.{pair}'"
                            )))
                        }
                    };
                }
                for pair in &pairs {
                    let key = pair.to_string();
                    if !runs.contains_key(&key) || !qrels_paths.contains_key(&key) {
                        return Err(Error::Validation(format!(
                            "crosslingual pair '{key}' needs both crosslingual.run.{key} and crosslingual.qrels.{key}"
                        )));
                    }
                }
                Some(CrosslingualSettings {
                    pairs,
                    runs,
                    qrels: qrels_paths,
                })
            }
        };

        // Grid axes: values comma-separated, applied as overrides per cell.
        let mut grid = BTreeMap::new();
        for (key, value) in bag.take_prefixed("grid") {
            let allowed = [
                "sampler.neg_ratio",
                "trainer.k_negatives",
                "trainer.batch_size",
                "trainer.learning_rate",
                "trainer.epochs",
                "encoder.hash_dim",
                "encoder.embed_dim",
            ];
            if !allowed.contains(&key.as_str()) {
                return Err(Error::Validation(format!(
                    "key 'grid.{key}': not a grid-searchable key (one of {allowed:?})"
                )));
            }
            let values: Vec<String> = value
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if values.is_empty() {
                return Err(Error::Validation(format!("key 'grid.{key}': no values")));
            }
            grid.insert(key, values);
        }

        bag.reject_unknown()?;

        let raw = bag.map;
        Ok(Self {
            task,
            method,
            languages,
            seed,
            entities,
            pairs,
            output_dir,
            kb,
            queries,
            qrels,
            sampler,
            sampler_scope,
            encoder,
            contrastive,
            classifier,
            task_a_prompt,
            task_b_prompt,
            rank_tag,
            top_k,
            external,
            crosslingual,
            grid,
            raw,
        })
    }

    /// The effective flat key-value view, for manifest snapshots.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.raw.clone()
    }

    pub fn prompt_for_task(&self) -> PromptTemplate {
        match self.task {
            Task::A => PromptTemplate::new(self.task_a_prompt.clone()),
            Task::B => PromptTemplate::new(self.task_b_prompt.clone()),
        }
    }

    /// Total trainable parameter count under this config (grid tie-break).
    pub fn param_count(&self) -> usize {
        let encoder = self.encoder.hash_dim * self.encoder.embed_dim;
        match self.method {
            Method::Classify => encoder + 2 * (4 * self.encoder.embed_dim) + 2,
            Method::Contrastive => encoder,
            Method::Prompt => encoder,
        }
    }

    /// Stage directory under the output dir.
    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        match stage {
            "eval" | "analyze" => self.output_dir.join("reports"),
            other => self.output_dir.join(other),
        }
    }
}
