//! Tab-separated loaders and writers for the canonical corpus files.
//!
//! Formats (UTF-8, no header rows, `\n` line endings):
//! - entities.tsv: entity_id, entity_type, esco_code (may be empty), lang,
//!   label_type in {preferred, alternative, description}, text
//! - kb.tsv:       doc_id, text
//! - pairs.tsv:    lang, query_text, related_text
//! - queries.tsv:  qid, query_text
//! - qrels.txt:    "qid 0 docid rel" space-separated (TREC)
//!
//! Loaders apply trim + NFC to text fields and preserve input order, so
//! writing a loaded file back out is byte-identical for canonically
//! formatted input.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use super::{CorpusEntity, EntityType, GoldStandard, KnowledgeBase, RawPairSet};
use crate::error::{Error, Result};
use crate::text::{match_key, normalize};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Read a file into lines, tolerating a trailing `\r` per line. Blank lines
/// are skipped (their numbers stay accurate in errors).
fn read_rows(path: &Path) -> Result<Vec<(usize, String)>> {
    let content = fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    Ok(content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l).to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn split_columns<'a>(
    path: &Path,
    line: usize,
    row: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>> {
    let cols: Vec<&str> = row.split('\t').collect();
    if cols.len() != expected {
        return Err(parse_err(
            path,
            line,
            format!(
                "expected {expected} tab-separated columns, got {}",
                cols.len()
            ),
        ));
    }
    Ok(cols)
}

/// Load an entities.tsv file, aggregating rows by entity id in first-seen
/// order. Rows of one entity must agree on entity_type and esco_code;
/// duplicate preferred/description rows for the same (id, lang) are errors,
/// and duplicate alternatives (after normalization) are dropped.
pub fn load_entities(path: impl AsRef<Path>) -> Result<Vec<CorpusEntity>> {
    let path = path.as_ref();
    let mut entities: Vec<CorpusEntity> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (line, row) in read_rows(path)? {
        let cols = split_columns(path, line, &row, 6)?;
        let entity_id = normalize(cols[0]);
        if entity_id.is_empty() {
            return Err(parse_err(
                path,
                line,
                "column 'entity_id': must be non-empty",
            ));
        }
        let entity_type: EntityType = cols[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, line, format!("column 'entity_type': {e}")))?;
        let esco_code = {
            let raw = cols[2].trim();
            if raw.is_empty() {
                None
            } else {
                if !raw.chars().next().is_some_and(|c| c.is_ascii_digit()) {
                    return Err(parse_err(
                        path,
                        line,
                        format!("column 'esco_code': '{raw}' must start with a digit 0-9"),
                    ));
                }
                Some(raw.to_string())
            }
        };
        let lang = normalize(cols[3]);
        if lang.is_empty() {
            return Err(parse_err(path, line, "column 'lang': must be non-empty"));
        }
        let label_type = cols[4].trim();
        let text = normalize(cols[5]);
        if text.is_empty() {
            return Err(parse_err(path, line, "column 'text': must be non-empty"));
        }

        let idx = *index.entry(entity_id.clone()).or_insert_with(|| {
            entities.push(CorpusEntity {
                entity_id: entity_id.clone(),
                entity_type,
                esco_code: esco_code.clone(),
                labels: BTreeMap::new(),
            });
            entities.len() - 1
        });
        let entity = &mut entities[idx];
        if entity.entity_type != entity_type {
            return Err(parse_err(
                path,
                line,
                format!("duplicate entity_id '{entity_id}' with conflicting entity_type"),
            ));
        }
        if entity.esco_code != esco_code {
            return Err(parse_err(
                path,
                line,
                format!("duplicate entity_id '{entity_id}' with conflicting esco_code"),
            ));
        }

        let labels = entity.labels.entry(lang).or_default();
        match label_type {
            "preferred" => {
                if !labels.preferred.is_empty() {
                    return Err(parse_err(
                        path,
                        line,
                        format!("duplicate preferred label for entity '{entity_id}'"),
                    ));
                }
                labels.preferred = text;
            }
            "alternative" => {
                let key = match_key(&text);
                let dup = labels.alternatives.iter().any(|a| match_key(a) == key);
                if !dup {
                    labels.alternatives.push(text);
                }
            }
            "description" => {
                if labels.description.is_some() {
                    return Err(parse_err(
                        path,
                        line,
                        format!("duplicate description for entity '{entity_id}'"),
                    ));
                }
                labels.description = Some(text);
            }
            other => {
                return Err(parse_err(
                    path,
                    line,
                    format!(
                        "column 'label_type': expected 'preferred', 'alternative' or \
                         'description', got '{other}'"
                    ),
                ));
            }
        }
    }

    for entity in &entities {
        for (lang, labels) in &entity.labels {
            if labels.preferred.is_empty() {
                return Err(Error::Validation(format!(
                    "entity '{}' declares language '{lang}' without a preferred label",
                    entity.entity_id
                )));
            }
        }
    }
    Ok(entities)
}

/// Write entities in the canonical row order: entity order as given, then
/// language (sorted), then preferred, alternatives, description.
pub fn write_entities(path: impl AsRef<Path>, entities: &[CorpusEntity]) -> Result<()> {
    let mut out = String::new();
    for entity in entities {
        let code = entity.esco_code.as_deref().unwrap_or("");
        for (lang, labels) in &entity.labels {
            let mut push = |label_type: &str, text: &str| {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    entity.entity_id, entity.entity_type, code, lang, label_type, text
                ));
            };
            push("preferred", &labels.preferred);
            for alt in &labels.alternatives {
                push("alternative", alt);
            }
            if let Some(desc) = &labels.description {
                push("description", desc);
            }
        }
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Load a kb.tsv file. The knowledge base is per-language; the language code
/// is supplied by the caller since the file does not carry one.
pub fn load_kb(path: impl AsRef<Path>, language: &str) -> Result<KnowledgeBase> {
    let path = path.as_ref();
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (line, row) in read_rows(path)? {
        let cols = split_columns(path, line, &row, 2)?;
        let doc_id = normalize(cols[0]);
        let text = normalize(cols[1]);
        if doc_id.is_empty() {
            return Err(parse_err(path, line, "column 'doc_id': must be non-empty"));
        }
        if text.is_empty() {
            return Err(parse_err(path, line, "column 'text': must be non-empty"));
        }
        if !seen.insert(doc_id.clone()) {
            return Err(parse_err(
                path,
                line,
                format!("duplicate doc_id '{doc_id}'"),
            ));
        }
        entries.push((doc_id, text));
    }
    KnowledgeBase::new(language, entries)
}

pub fn write_kb(path: impl AsRef<Path>, kb: &KnowledgeBase) -> Result<()> {
    let mut out = String::new();
    for (doc_id, text) in &kb.entries {
        out.push_str(&format!("{doc_id}\t{text}\n"));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Load a pairs.tsv file, grouping rows into one [`RawPairSet`] per language
/// in first-seen order. Row order within a language is file order.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<RawPairSet>> {
    let path = path.as_ref();
    let mut sets: Vec<RawPairSet> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (line, row) in read_rows(path)? {
        let cols = split_columns(path, line, &row, 3)?;
        let lang = normalize(cols[0]);
        let query = normalize(cols[1]);
        let related = normalize(cols[2]);
        if lang.is_empty() {
            return Err(parse_err(path, line, "column 'lang': must be non-empty"));
        }
        if query.is_empty() || related.is_empty() {
            return Err(parse_err(path, line, "pair has an empty side"));
        }
        let idx = *index.entry(lang.clone()).or_insert_with(|| {
            sets.push(RawPairSet {
                language: lang.clone(),
                pairs: Vec::new(),
            });
            sets.len() - 1
        });
        sets[idx].pairs.push((query, related));
    }
    Ok(sets)
}

pub fn write_pairs(path: impl AsRef<Path>, sets: &[RawPairSet]) -> Result<()> {
    let mut out = String::new();
    for set in sets {
        for (query, related) in &set.pairs {
            out.push_str(&format!("{}\t{query}\t{related}\n", set.language));
        }
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Load a TREC qrels file ("qid 0 docid rel"). Lines with rel 0 are judged
/// non-relevant and skipped; a query whose lines are all rel-0 is an error
/// because gold sets must be non-empty.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let path = path.as_ref();
    let mut entries: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut listed: BTreeSet<String> = BTreeSet::new();
    for (line, row) in read_rows(path)? {
        let cols: Vec<&str> = row.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(parse_err(
                path,
                line,
                format!("expected 4 space-separated fields, got {}", cols.len()),
            ));
        }
        let qid = cols[0].to_string();
        let docid = cols[2].to_string();
        let rel: i64 = cols[3].parse().map_err(|_| {
            parse_err(
                path,
                line,
                format!("column 'rel': '{}' is not an integer", cols[3]),
            )
        })?;
        if rel < 0 {
            return Err(parse_err(path, line, "column 'rel': must be >= 0"));
        }
        listed.insert(qid.clone());
        if rel >= 1 {
            entries.entry(qid).or_default().insert(docid);
        }
    }
    for qid in &listed {
        if !entries.contains_key(qid) {
            return Err(Error::Validation(format!(
                "{}: query '{qid}' has no relevant documents",
                path.display()
            )));
        }
    }
    Ok(entries)
}

pub fn write_qrels(
    path: impl AsRef<Path>,
    entries: &BTreeMap<String, BTreeSet<String>>,
) -> Result<()> {
    let mut out = String::new();
    for (qid, docs) in entries {
        for doc in docs {
            out.push_str(&format!("{qid} 0 {doc} 1\n"));
        }
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Load a queries.tsv file (qid, query_text).
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let mut queries = Vec::new();
    let mut seen = HashSet::new();
    for (line, row) in read_rows(path)? {
        let cols = split_columns(path, line, &row, 2)?;
        let qid = normalize(cols[0]);
        let text = normalize(cols[1]);
        if qid.is_empty() {
            return Err(parse_err(path, line, "column 'qid': must be non-empty"));
        }
        if text.is_empty() {
            return Err(parse_err(
                path,
                line,
                "column 'query_text': must be non-empty",
            ));
        }
        if !seen.insert(qid.clone()) {
            return Err(parse_err(path, line, format!("duplicate qid '{qid}'")));
        }
        queries.push((qid, text));
    }
    Ok(queries)
}

pub fn write_queries(path: impl AsRef<Path>, queries: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (qid, text) in queries {
        out.push_str(&format!("{qid}\t{text}\n"));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Assemble a [`GoldStandard`] from a qrels file and an optional queries file.
pub fn load_gold_standard(
    qrels_path: impl AsRef<Path>,
    queries_path: Option<&Path>,
) -> Result<GoldStandard> {
    let entries = load_qrels(qrels_path)?;
    let query_text = match queries_path {
        Some(p) => load_queries(p)?.into_iter().collect(),
        None => BTreeMap::new(),
    };
    GoldStandard::new(entries, query_text)
}
