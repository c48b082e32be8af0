//! The retrieval system under attack: embedding index, exact top-k queries,
//! Recall@K, and the clean-versus-attacked evaluation protocol.
//!
//! The clean condition indexes the test corpus plus the un-patched benign
//! images; the attacked condition replaces the benign images with one
//! keyword's trojan set. "Novel" R@K counts a query as a hit when any
//! benign/trojan image reaches the top k.

mod experiments;
mod report;

pub use experiments::{
    ablate_lambda, ablate_patch_ratio, dump_embeddings, dump_to_csv, parse_dump_csv,
    run_experiment_matrix, trojan_r10_for_set, EmbeddingDumpRow, LambdaAblationRow, MatrixModels,
    RatioAblationRow,
};
pub use report::{
    parse_report_csv, report_to_csv, EvalReport, EvalRow, EvalSetup,
};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attack::TrojanSet;
use crate::error::{Error, Result};
use crate::matcher::{embed_image, embed_text, Embedding, MatcherModel};
use crate::stats::spearman;
use crate::synthworld::{BenignSet, Caption, Corpus, Split};
use crate::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Corpus,
    Benign,
    Trojan,
}

#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub id: String,
    pub embedding: Embedding,
    pub origin: Origin,
}

#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    pub entries: Vec<IndexEntry>,
    pub model_tag: String,
}

pub fn corpus_image_id(id: u32) -> String {
    format!("img-{id:04}")
}

pub fn benign_image_id(i: usize) -> String {
    format!("benign-{i:02}")
}

pub fn trojan_image_id(i: usize) -> String {
    format!("trojan-{i:02}")
}

/// Embeds every image in the given order; ids must be unique.
pub fn build_index(
    model: &MatcherModel,
    images: &[(String, &Tensor, Origin)],
) -> Result<RetrievalIndex> {
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(images.len());
    for (id, image, origin) in images {
        if !seen.insert(id.clone()) {
            return Err(Error::Config(format!("duplicate index id {id:?}")));
        }
        entries.push(IndexEntry {
            id: id.clone(),
            embedding: embed_image(model, image)?,
            origin: *origin,
        });
    }
    Ok(RetrievalIndex {
        entries,
        model_tag: model.arch_tag().to_string(),
    })
}

/// Exhaustive scan: descending cosine, ties broken by ascending id.
pub fn query_topk(
    index: &RetrievalIndex,
    model: &MatcherModel,
    tokens: &[u32],
    k: usize,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if index.entries.is_empty() {
        return Err(Error::DegenerateInput("query against an empty index"));
    }
    let query = embed_text(model, tokens)?;
    let mut scored: Vec<(String, f64)> = index
        .entries
        .iter()
        .map(|e| (e.id.clone(), query.cosine(&e.embedding)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosines are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(k);
    Ok(scored)
}

/// Percentage of queries with at least one relevant id among their top k.
pub fn recall_at_k(
    rankings: &[Vec<(String, f64)>],
    relevant: &[BTreeSet<String>],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if rankings.is_empty() || rankings.len() != relevant.len() {
        return Err(Error::DegenerateInput("empty or mismatched query set"));
    }
    let hits = rankings
        .iter()
        .zip(relevant.iter())
        .filter(|(ranking, rel)| ranking.iter().take(k).any(|(id, _)| rel.contains(id)))
        .count();
    Ok(100.0 * hits as f64 / rankings.len() as f64)
}

/// Queries for one keyword: every caption of the split containing it, each
/// relevant to its source image.
#[derive(Debug, Clone)]
pub struct QuerySet {
    pub keyword: String,
    pub queries: Vec<(Caption, BTreeSet<String>)>,
}

pub fn build_query_set(corpus: &Corpus, split: Split, keyword: &str) -> Result<QuerySet> {
    let token = corpus
        .token(keyword)
        .ok_or_else(|| Error::Keyword(keyword.to_string()))?;
    let queries: Vec<(Caption, BTreeSet<String>)> = corpus
        .captions_in(split)
        .filter(|(_, c)| c.contains(token))
        .map(|(item, c)| {
            let mut rel = BTreeSet::new();
            rel.insert(corpus_image_id(item.id));
            (c.clone(), rel)
        })
        .collect();
    if queries.is_empty() {
        return Err(Error::Keyword(keyword.to_string()));
    }
    Ok(QuerySet {
        keyword: keyword.to_string(),
        queries,
    })
}

/// Index over the test split plus either the benign set (clean condition) or
/// one trojan set (attacked condition).
fn test_index(
    model: &MatcherModel,
    corpus: &Corpus,
    extra: &[(String, &Tensor, Origin)],
) -> Result<RetrievalIndex> {
    let mut images: Vec<(String, &Tensor, Origin)> = corpus
        .items_in(Split::Test)
        .map(|it| (corpus_image_id(it.id), &it.image, Origin::Corpus))
        .collect();
    images.extend_from_slice(extra);
    build_index(model, &images)
}

fn benign_entries(benign: &BenignSet) -> Vec<(String, &Tensor, Origin)> {
    benign
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| (benign_image_id(i), img, Origin::Benign))
        .collect()
}

fn trojan_entries(set: &TrojanSet) -> Vec<(String, &Tensor, Origin)> {
    set.images
        .iter()
        .enumerate()
        .map(|(i, img)| (trojan_image_id(i), img, Origin::Trojan))
        .collect()
}

/// Recall of a query set against an index, with per-query relevance either
/// the true sources or the whole novel (benign/trojan) id set.
fn recall_pair(
    index: &RetrievalIndex,
    model: &MatcherModel,
    queries: &QuerySet,
    novel_ids: &BTreeSet<String>,
    k: usize,
) -> Result<(f64, f64)> {
    let rankings: Vec<Vec<(String, f64)>> = queries
        .queries
        .iter()
        .map(|(caption, _)| query_topk(index, model, &caption.tokens, k))
        .collect::<Result<_>>()?;
    let relevant: Vec<BTreeSet<String>> =
        queries.queries.iter().map(|(_, rel)| rel.clone()).collect();
    let novel: Vec<BTreeSet<String>> = vec![novel_ids.clone(); rankings.len()];
    Ok((
        recall_at_k(&rankings, &relevant, k)?,
        recall_at_k(&rankings, &novel, k)?,
    ))
}

/// Full with/without-attack evaluation over one trojan set per keyword.
/// Rows are sorted by descending attacked novel-image R@k and a MEAN row is
/// appended by the report writer.
pub fn evaluate_attack(
    eval_model: &MatcherModel,
    corpus: &Corpus,
    benign: &BenignSet,
    trojan_sets: &[&TrojanSet],
    k: usize,
    setup: EvalSetup,
) -> Result<EvalReport> {
    if trojan_sets.is_empty() {
        return Err(Error::Config("evaluate_attack needs at least one trojan set".into()));
    }
    let clean_index = test_index(eval_model, corpus, &benign_entries(benign))?;
    let benign_ids: BTreeSet<String> = (0..benign.images.len()).map(benign_image_id).collect();

    let mut rows = Vec::with_capacity(trojan_sets.len());
    for set in trojan_sets {
        let queries = build_query_set(corpus, Split::Test, &set.keyword)?;
        let (relevant_clean, novel_clean) =
            recall_pair(&clean_index, eval_model, &queries, &benign_ids, k)?;
        let attacked_index = test_index(eval_model, corpus, &trojan_entries(set))?;
        let trojan_ids: BTreeSet<String> =
            (0..set.images.len()).map(trojan_image_id).collect();
        let (relevant_tth, novel_tth) =
            recall_pair(&attacked_index, eval_model, &queries, &trojan_ids, k)?;
        rows.push(EvalRow {
            keyword: set.keyword.clone(),
            relevant_r10_clean: relevant_clean,
            relevant_r10_tth: relevant_tth,
            trojan_r10_clean: novel_clean,
            trojan_r10_tth: novel_tth,
            mcs: set.context.mcs,
        });
    }
    rows.sort_by(|a, b| {
        b.trojan_r10_tth
            .partial_cmp(&a.trojan_r10_tth)
            .expect("finite recall")
            .then_with(|| a.keyword.cmp(&b.keyword))
    });
    let mcs: Vec<f64> = rows.iter().map(|r| r.mcs).collect();
    let tth: Vec<f64> = rows.iter().map(|r| r.trojan_r10_tth).collect();
    let mcs_spearman = spearman(&mcs, &tth);
    Ok(EvalReport::new(rows, setup, mcs_spearman))
}
