//! Full candidate rankings per query and the TREC run-file format that
//! carries them. Every query is ranked against the whole knowledge base;
//! score ties break by ascending doc id so output is reproducible across
//! platforms and sort implementations.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::corpus::KnowledgeBase;
use crate::embedding::{encode, EmbeddingMatrix, PromptTemplate, ToyEncoderParams};
use crate::error::{Error, Result};
use crate::train::{score_pair, PairScorerParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RankEntry {
    pub doc_id: String,
    pub score: f64,
    /// 1-based, contiguous.
    pub rank: usize,
}

/// One query's ranking: scores non-increasing, ranks contiguous from 1,
/// doc ids unique.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankEntry>,
}

impl RankedList {
    /// Sort scored candidates (descending score, ties by ascending doc id)
    /// and assign ranks.
    pub fn from_scores(
        query_id: impl Into<String>,
        mut scored: Vec<(String, f64)>,
    ) -> Result<Self> {
        let query_id = query_id.into();
        let mut seen = HashSet::new();
        for (doc_id, score) in &scored {
            if !score.is_finite() {
                return Err(Error::NonFinite(format!(
                    "query '{query_id}': non-finite score for doc '{doc_id}'"
                )));
            }
            if !seen.insert(doc_id.clone()) {
                return Err(Error::Validation(format!(
                    "query '{query_id}': duplicate doc id '{doc_id}'"
                )));
            }
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite scores")
                .then_with(|| a.0.cmp(&b.0))
        });
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RankEntry {
                doc_id,
                score,
                rank: i + 1,
            })
            .collect();
        Ok(Self { query_id, entries })
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }
}

/// A set of rankings, one per query, in input-query order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFile {
    pub tag: String,
    pub lists: Vec<RankedList>,
}

impl RunFile {
    pub fn new(tag: impl Into<String>, lists: Vec<RankedList>) -> Result<Self> {
        let mut seen = HashSet::new();
        for list in &lists {
            if !seen.insert(list.query_id.clone()) {
                return Err(Error::Validation(format!(
                    "duplicate query id '{}' in run",
                    list.query_id
                )));
            }
        }
        Ok(Self {
            tag: tag.into(),
            lists,
        })
    }

    pub fn get(&self, query_id: &str) -> Option<&RankedList> {
        self.lists.iter().find(|l| l.query_id == query_id)
    }

    /// Keep only the top k entries per query. Intended for export-size
    /// control; MAP computed from a truncated run can drop gold documents.
    pub fn truncate(&self, k: usize) -> Self {
        let lists = self
            .lists
            .iter()
            .map(|l| RankedList {
                query_id: l.query_id.clone(),
                entries: l.entries.iter().take(k).cloned().collect(),
            })
            .collect();
        Self {
            tag: self.tag.clone(),
            lists,
        }
    }
}

/// Rank the knowledge base for each query by cosine similarity. Queries are
/// embedded with the prompt (when given), candidates always without.
pub fn rank_by_embedding(
    queries: &[(String, String)],
    kb: &KnowledgeBase,
    params: &ToyEncoderParams,
    prompt: Option<&PromptTemplate>,
    tag: &str,
) -> Result<RunFile> {
    if kb.is_empty() {
        return Err(Error::EmptyInput("rank_by_embedding: knowledge base"));
    }
    if queries.is_empty() {
        return Err(Error::EmptyInput("rank_by_embedding: queries"));
    }
    let query_texts: Vec<&str> = queries.iter().map(|(_, text)| text.as_str()).collect();
    let query_matrix = match encode(&query_texts, params, prompt, true) {
        Ok(matrix) => matrix,
        // Re-encode one by one to name the offending query.
        Err(_) => {
            for (qid, text) in queries {
                if let Err(e) = encode(&[text.as_str()], params, prompt, true) {
                    return Err(Error::Validation(format!("query '{qid}': {e}")));
                }
            }
            unreachable!("batch encoding failed but every query encodes")
        }
    };
    let query_ids: Vec<String> = queries.iter().map(|(qid, _)| qid.clone()).collect();
    let query_matrix = query_matrix.with_ids(query_ids)?;

    let doc_texts: Vec<&str> = kb.entries.iter().map(|(_, text)| text.as_str()).collect();
    let doc_matrix = encode(&doc_texts, params, None, true).map_err(|e| {
        Error::Validation(format!("while encoding the knowledge base ({tag}): {e}"))
    })?;
    let doc_ids: Vec<String> = kb.entries.iter().map(|(id, _)| id.clone()).collect();
    let doc_matrix = doc_matrix.with_ids(doc_ids)?;

    rank_by_matrices(&query_matrix, &doc_matrix, tag)
}

/// Rank pre-computed candidate embeddings against pre-computed query
/// embeddings (the path used with external embedding backends).
pub fn rank_by_matrices(
    queries: &EmbeddingMatrix,
    docs: &EmbeddingMatrix,
    tag: &str,
) -> Result<RunFile> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("rank_by_matrices: documents"));
    }
    let sims = crate::embedding::similarity_matrix(queries, docs)?;
    let mut lists = Vec::with_capacity(queries.len());
    for (i, qid) in queries.ids().iter().enumerate() {
        let scored: Vec<(String, f64)> = docs
            .ids()
            .iter()
            .enumerate()
            .map(|(j, doc_id)| (doc_id.clone(), sims[(i, j)]))
            .collect();
        lists.push(RankedList::from_scores(qid.clone(), scored)?);
    }
    RunFile::new(tag, lists)
}

/// Rank by the trained pair classifier's positive-class probability.
pub fn rank_by_classifier(
    queries: &[(String, String)],
    kb: &KnowledgeBase,
    params: &PairScorerParams,
    tag: &str,
) -> Result<RunFile> {
    if kb.is_empty() {
        return Err(Error::EmptyInput("rank_by_classifier: knowledge base"));
    }
    let mut lists = Vec::with_capacity(queries.len());
    for (qid, text) in queries {
        let mut scored = Vec::with_capacity(kb.len());
        for (doc_id, doc_text) in &kb.entries {
            let score = score_pair(text, doc_text, params)
                .map_err(|e| Error::Validation(format!("query '{qid}', doc '{doc_id}': {e}")))?;
            scored.push((doc_id.clone(), score));
        }
        lists.push(RankedList::from_scores(qid.clone(), scored)?);
    }
    RunFile::new(tag, lists)
}

/// Write the run in TREC format: `qid Q0 docid rank score tag`, scores with
/// six decimals.
pub fn write_run(path: impl AsRef<Path>, run: &RunFile) -> Result<()> {
    let mut out = String::new();
    for list in &run.lists {
        for entry in &list.entries {
            out.push_str(&format!(
                "{} Q0 {} {} {:.6} {}\n",
                list.query_id, entry.doc_id, entry.rank, entry.score, run.tag
            ));
        }
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Read a TREC run file, validating contiguous ranks, non-increasing scores,
/// unique docs per query, and a consistent tag.
pub fn read_run(path: impl AsRef<Path>) -> Result<RunFile> {
    let path = path.as_ref();
    let content = fs::read_to_string(path)
        .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;

    let mut tag: Option<String> = None;
    let mut order: Vec<String> = Vec::new();
    let mut lists: std::collections::HashMap<String, Vec<RankEntry>> =
        std::collections::HashMap::new();
    let mut seen_docs: std::collections::HashMap<String, HashSet<String>> =
        std::collections::HashMap::new();

    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            file: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", cols.len())));
        }
        if cols[1] != "Q0" {
            return Err(err(format!(
                "expected literal 'Q0' in field 2, got '{}'",
                cols[1]
            )));
        }
        let qid = cols[0].to_string();
        let doc_id = cols[2].to_string();
        let rank: usize = cols[3]
            .parse()
            .map_err(|_| err(format!("rank '{}' is not an integer", cols[3])))?;
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| err(format!("score '{}' is not a number", cols[4])))?;
        if !score.is_finite() {
            return Err(err(format!("score '{}' is not finite", cols[4])));
        }
        match &tag {
            None => tag = Some(cols[5].to_string()),
            Some(t) if t != cols[5] => {
                return Err(err(format!("mixed run tags '{t}' and '{}'", cols[5])));
            }
            _ => {}
        }

        if !lists.contains_key(&qid) {
            order.push(qid.clone());
        }
        let entries = lists.entry(qid.clone()).or_default();
        let expected_rank = entries.len() + 1;
        if rank != expected_rank {
            return Err(err(format!(
                "query '{qid}': rank {rank} is not contiguous (expected {expected_rank})"
            )));
        }
        if let Some(last) = entries.last() {
            if score > last.score {
                return Err(err(format!(
                    "query '{qid}': score {score} increases over previous {}",
                    last.score
                )));
            }
        }
        if !seen_docs
            .entry(qid.clone())
            .or_default()
            .insert(doc_id.clone())
        {
            return Err(err(format!("query '{qid}': duplicate doc id '{doc_id}'")));
        }
        entries.push(RankEntry {
            doc_id,
            score,
            rank,
        });
    }

    let tag =
        tag.ok_or_else(|| Error::Validation(format!("{}: empty run file", path.display())))?;
    let lists = order
        .into_iter()
        .map(|qid| {
            let entries = lists.remove(&qid).expect("collected above");
            RankedList {
                query_id: qid,
                entries,
            }
        })
        .collect();
    RunFile::new(tag, lists)
}
