//! Transfer matrix, ablation sweeps and embedding dumps.

use std::collections::BTreeSet;

use super::report::{EvalReport, EvalSetup};
use super::{
    build_query_set, evaluate_attack, query_topk, recall_at_k, test_index, trojan_entries,
    trojan_image_id,
};
use crate::attack::{decode_beacon, generate_trojan_set, AttackConfig, TrojanSet};
use crate::error::{Error, Result};
use crate::matcher::{embed_image, embed_text, MatcherModel};
use crate::synthworld::{BenignSet, Corpus, Split};

fn model_tag(model: &MatcherModel, corpus_tag: &str) -> String {
    format!("{}/{}", model.arch_tag(), corpus_tag)
}

/// Attacked-condition novel R@k for a single trojan set.
pub fn trojan_r10_for_set(
    model: &MatcherModel,
    corpus: &Corpus,
    set: &TrojanSet,
    k: usize,
) -> Result<f64> {
    let queries = build_query_set(corpus, Split::Test, &set.keyword)?;
    let index = test_index(model, corpus, &trojan_entries(set))?;
    let trojan_ids: BTreeSet<String> = (0..set.images.len()).map(trojan_image_id).collect();
    let rankings: Vec<Vec<(String, f64)>> = queries
        .queries
        .iter()
        .map(|(caption, _)| query_topk(&index, model, &caption.tokens, k))
        .collect::<Result<_>>()?;
    let novel = vec![trojan_ids; rankings.len()];
    recall_at_k(&rankings, &novel, k)
}

/// Models available to the transfer matrix; missing slots skip their cells.
pub struct MatrixModels<'a> {
    pub linear_alpha: &'a MatcherModel,
    pub tanh_alpha: Option<&'a MatcherModel>,
    pub linear_beta: Option<&'a MatcherModel>,
    pub tanh_beta: Option<&'a MatcherModel>,
}

/// Runs white-box cells for every available (model, corpus) pair,
/// surrogate-dataset cells when the second corpus flavor is present, and
/// surrogate-model cells when both architectures are present on the first
/// flavor. Trojan sets are generated in memory per cell.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment_matrix(
    models: &MatrixModels,
    corpus_alpha: &Corpus,
    corpus_beta: Option<&Corpus>,
    benign: &BenignSet,
    keywords_alpha: &[String],
    keywords_beta: &[String],
    attack_cfg: &AttackConfig,
    k: usize,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    let alpha_tag = corpus_alpha.flavor.tag();

    let attack_all = |model: &MatcherModel,
                      context_corpus: &Corpus,
                      keywords: &[String]|
     -> Result<Vec<TrojanSet>> {
        keywords
            .iter()
            .map(|kw| generate_trojan_set(model, context_corpus, benign, kw, attack_cfg))
            .collect()
    };
    let white_box = |model: &MatcherModel, corpus: &Corpus, keywords: &[String]| -> Result<(Vec<TrojanSet>, EvalReport)> {
        let sets = attack_all(model, corpus, keywords)?;
        let refs: Vec<&TrojanSet> = sets.iter().collect();
        let tag = model_tag(model, corpus.flavor.tag());
        let report = evaluate_attack(
            model,
            corpus,
            benign,
            &refs,
            k,
            EvalSetup {
                attack_model: tag.clone(),
                attack_corpus: corpus.flavor.tag().into(),
                eval_model: tag,
                eval_corpus: corpus.flavor.tag().into(),
                mode: "white-box".into(),
            },
        )?;
        Ok((sets, report))
    };

    // White-box cells; keep the alpha sets for the surrogate-model cells.
    let (linear_alpha_sets, report) = white_box(models.linear_alpha, corpus_alpha, keywords_alpha)?;
    reports.push(report);
    let mut tanh_alpha_sets = None;
    if let Some(model) = models.tanh_alpha {
        let (sets, report) = white_box(model, corpus_alpha, keywords_alpha)?;
        reports.push(report);
        tanh_alpha_sets = Some(sets);
    }
    if let (Some(model), Some(corpus)) = (models.linear_beta, corpus_beta) {
        let (_, report) = white_box(model, corpus, keywords_beta)?;
        reports.push(report);
    }
    if let (Some(model), Some(corpus)) = (models.tanh_beta, corpus_beta) {
        let (_, report) = white_box(model, corpus, keywords_beta)?;
        reports.push(report);
    }

    // Surrogate-dataset: same network, keyword contexts from the other
    // flavor's train split, evaluated on the original flavor's test split.
    if let Some(beta) = corpus_beta {
        let sets = attack_all(models.linear_alpha, beta, keywords_alpha)?;
        let refs: Vec<&TrojanSet> = sets.iter().collect();
        let tag = model_tag(models.linear_alpha, alpha_tag);
        reports.push(evaluate_attack(
            models.linear_alpha,
            corpus_alpha,
            benign,
            &refs,
            k,
            EvalSetup {
                attack_model: tag.clone(),
                attack_corpus: beta.flavor.tag().into(),
                eval_model: tag,
                eval_corpus: alpha_tag.into(),
                mode: "surrogate-dataset".into(),
            },
        )?);
        if let Some(model) = models.linear_beta {
            let sets = attack_all(model, corpus_alpha, keywords_beta)?;
            let refs: Vec<&TrojanSet> = sets.iter().collect();
            let tag = model_tag(model, beta.flavor.tag());
            reports.push(evaluate_attack(
                model,
                beta,
                benign,
                &refs,
                k,
                EvalSetup {
                    attack_model: tag.clone(),
                    attack_corpus: alpha_tag.into(),
                    eval_model: tag,
                    eval_corpus: beta.flavor.tag().into(),
                    mode: "surrogate-dataset".into(),
                },
            )?);
        }
    }

    // Surrogate-model: patches from one architecture evaluated on the other.
    if let (Some(tanh_model), Some(tanh_sets)) = (models.tanh_alpha, tanh_alpha_sets.as_ref()) {
        let refs: Vec<&TrojanSet> = linear_alpha_sets.iter().collect();
        reports.push(evaluate_attack(
            tanh_model,
            corpus_alpha,
            benign,
            &refs,
            k,
            EvalSetup {
                attack_model: model_tag(models.linear_alpha, alpha_tag),
                attack_corpus: alpha_tag.into(),
                eval_model: model_tag(tanh_model, alpha_tag),
                eval_corpus: alpha_tag.into(),
                mode: "surrogate-model".into(),
            },
        )?);
        let refs: Vec<&TrojanSet> = tanh_sets.iter().collect();
        reports.push(evaluate_attack(
            models.linear_alpha,
            corpus_alpha,
            benign,
            &refs,
            k,
            EvalSetup {
                attack_model: model_tag(tanh_model, alpha_tag),
                attack_corpus: alpha_tag.into(),
                eval_model: model_tag(models.linear_alpha, alpha_tag),
                eval_corpus: alpha_tag.into(),
                mode: "surrogate-model".into(),
            },
        )?);
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaAblationRow {
    pub lambda: f64,
    pub keyword: String,
    pub trojan_r10: f64,
    pub cell_accuracy: f64,
    pub scannable: bool,
}

/// Attack/usability sweep over the anchor weight.
pub fn ablate_lambda(
    model: &MatcherModel,
    corpus: &Corpus,
    benign: &BenignSet,
    keywords: &[String],
    lambdas: &[f64],
    base: &AttackConfig,
    k: usize,
) -> Result<Vec<LambdaAblationRow>> {
    if lambdas.iter().any(|&l| l < 0.0) {
        return Err(Error::Config("lambda values must be >= 0".into()));
    }
    let mut rows = Vec::new();
    for &lambda in lambdas {
        for keyword in keywords {
            let cfg = AttackConfig {
                lambda,
                ..base.clone()
            };
            let set = generate_trojan_set(model, corpus, benign, keyword, &cfg)?;
            let readout = decode_beacon(&set.patch.delta, cfg.beacon_k, Some(&set.beacon))?;
            rows.push(LambdaAblationRow {
                lambda,
                keyword: keyword.clone(),
                trojan_r10: trojan_r10_for_set(model, corpus, &set, k)?,
                cell_accuracy: readout.cell_accuracy.expect("reference given"),
                scannable: readout.scannable,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioAblationRow {
    pub ratio: f64,
    pub mean_trojan_r10: f64,
}

/// Mean attacked novel R@k per patch-area ratio over a keyword subset.
pub fn ablate_patch_ratio(
    model: &MatcherModel,
    corpus: &Corpus,
    benign: &BenignSet,
    keywords: &[String],
    ratios: &[f64],
    base: &AttackConfig,
    k: usize,
) -> Result<Vec<RatioAblationRow>> {
    if keywords.is_empty() {
        return Err(Error::Config("ratio ablation needs at least one keyword".into()));
    }
    let mut rows = Vec::new();
    for &ratio in ratios {
        if !(0.0..1.0).contains(&ratio) || ratio == 0.0 {
            return Err(Error::Config(format!("patch ratio must be in (0, 1), got {ratio}")));
        }
        let mut total = 0.0;
        for keyword in keywords {
            let cfg = AttackConfig {
                patch_ratio: ratio,
                ..base.clone()
            };
            let set = generate_trojan_set(model, corpus, benign, keyword, &cfg)?;
            total += trojan_r10_for_set(model, corpus, &set, k)?;
        }
        rows.push(RatioAblationRow {
            ratio,
            mean_trojan_r10: total / keywords.len() as f64,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDumpRow {
    pub id: String,
    pub origin: String,
    pub values: Vec<f64>,
}

/// Embeddings of all test images, the keyword's test captions, and one
/// trojan set, for external projection/plotting.
pub fn dump_embeddings(
    model: &MatcherModel,
    corpus: &Corpus,
    set: &TrojanSet,
) -> Result<Vec<EmbeddingDumpRow>> {
    let token = corpus
        .token(&set.keyword)
        .ok_or_else(|| Error::Keyword(set.keyword.clone()))?;
    let mut rows = Vec::new();
    for item in corpus.items_in(Split::Test) {
        rows.push(EmbeddingDumpRow {
            id: super::corpus_image_id(item.id),
            origin: "image".into(),
            values: embed_image(model, &item.image)?.vec().data().to_vec(),
        });
    }
    let mut q = 0usize;
    for (_, caption) in corpus.captions_in(Split::Test) {
        if caption.contains(token) {
            rows.push(EmbeddingDumpRow {
                id: format!("query-{q:03}"),
                origin: "keyword-text".into(),
                values: embed_text(model, &caption.tokens)?.vec().data().to_vec(),
            });
            q += 1;
        }
    }
    for (i, image) in set.images.iter().enumerate() {
        rows.push(EmbeddingDumpRow {
            id: trojan_image_id(i),
            origin: "trojan".into(),
            values: embed_image(model, image)?.vec().data().to_vec(),
        });
    }
    Ok(rows)
}

/// 17-significant-digit decimal CSV, enough to round-trip `f64` exactly.
pub fn dump_to_csv(rows: &[EmbeddingDumpRow]) -> String {
    let mut out = String::from("id,origin,values...\n");
    for row in rows {
        out.push_str(&row.id);
        out.push(',');
        out.push_str(&row.origin);
        for v in &row.values {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

pub fn parse_dump_csv(text: &str) -> Result<Vec<EmbeddingDumpRow>> {
    let mut lines = text.lines();
    lines
        .next()
        .filter(|h| h.starts_with("id,origin"))
        .ok_or_else(|| Error::Format("embedding dump: missing header".into()))?;
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let id = fields
            .next()
            .ok_or_else(|| Error::Format("embedding dump: empty row".into()))?;
        let origin = fields
            .next()
            .ok_or_else(|| Error::Format("embedding dump: missing origin".into()))?;
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Format(format!("embedding dump: {e}")))
            })
            .collect::<Result<_>>()?;
        rows.push(EmbeddingDumpRow {
            id: id.to_string(),
            origin: origin.to_string(),
            values,
        });
    }
    Ok(rows)
}
