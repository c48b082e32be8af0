//! Contextualized keyword embeddings.
//!
//! A keyword is represented by the renormalized mean of the embeddings of
//! training captions that contain it; the mean cosine similarity (MCS) of
//! those captions to the mean measures how dispersed the keyword's contexts
//! are — dispersed keywords are the hard ones to attack.

use crate::error::{Error, Result};
use crate::matcher::{embed_text, Embedding, MatcherModel};
use crate::synthworld::{Caption, Corpus, Split};
use crate::{numerics, rng, Tensor};

#[derive(Debug, Clone)]
pub struct KeywordContext {
    pub keyword: String,
    pub token: u32,
    /// Sampled training captions containing the keyword, in corpus order.
    pub sentences: Vec<Caption>,
    pub embedding: Embedding,
    pub mcs: f64,
}

/// Samples up to `m` training captions containing `keyword`, mean-pools
/// their embeddings into a unit-norm keyword embedding and reports the MCS
/// over the sampled captions.
pub fn build_keyword_context(
    model: &MatcherModel,
    corpus: &Corpus,
    keyword: &str,
    m: usize,
    seed: u64,
) -> Result<KeywordContext> {
    if m == 0 {
        return Err(Error::Config("context sample size m must be >= 1".into()));
    }
    let token = corpus
        .token(keyword)
        .ok_or_else(|| Error::Keyword(keyword.to_string()))?;
    let candidates: Vec<&Caption> = corpus
        .captions_in(Split::Train)
        .filter(|(_, c)| c.contains(token))
        .map(|(_, c)| c)
        .collect();
    if candidates.is_empty() {
        return Err(Error::Keyword(keyword.to_string()));
    }

    let mut stream = rng::stream(seed, "sampling");
    let take = m.min(candidates.len());
    let mut picked = rand::seq::index::sample(&mut stream, candidates.len(), take).into_vec();
    picked.sort_unstable();
    let sentences: Vec<Caption> = picked.iter().map(|&i| candidates[i].clone()).collect();

    let embeddings: Vec<Embedding> = sentences
        .iter()
        .map(|c| embed_text(model, &c.tokens))
        .collect::<Result<_>>()?;
    let dim = embeddings[0].dim();
    let mut mean = vec![0.0f64; dim];
    for e in &embeddings {
        for (m, &v) in mean.iter_mut().zip(e.vec().data().iter()) {
            *m += v;
        }
    }
    let inv = 1.0 / embeddings.len() as f64;
    for v in &mut mean {
        *v *= inv;
    }
    let embedding = Embedding::from_unnormalized(&Tensor::from_vec(vec![dim], mean)?)?;

    let mut mcs = 0.0;
    for e in &embeddings {
        mcs += e.cosine(&embedding);
    }
    mcs /= embeddings.len() as f64;

    Ok(KeywordContext {
        keyword: keyword.to_string(),
        token,
        sentences,
        embedding,
        mcs,
    })
}

/// Brute-force MCS recomputation used as a test oracle and by the
/// acceptance suite: a plain loop over the sampled sentences.
pub fn recompute_mcs(model: &MatcherModel, ctx: &KeywordContext) -> Result<f64> {
    let mut total = 0.0;
    for caption in &ctx.sentences {
        let e = embed_text(model, &caption.tokens)?;
        total += numerics::cosine(e.vec(), ctx.embedding.vec())?;
    }
    Ok(total / ctx.sentences.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::{train_matcher, TrainConfig};
    use crate::synthworld::{generate_corpus, Flavor, WorldParams};

    fn setup() -> (MatcherModel, Corpus) {
        let world = WorldParams::new(32, Flavor::Alpha, 0.1);
        let corpus = generate_corpus(8, 20, 4, 6, &world).unwrap();
        let cfg = TrainConfig {
            embed_dim: 16,
            token_dim: 16,
            pool_factor: 4,
            epochs: 0,
            batch_size: 8,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, _) = train_matcher(&corpus, &cfg).unwrap();
        (model, corpus)
    }

    #[test]
    fn single_sentence_context_has_mcs_one() {
        let (model, corpus) = setup();
        // Find a word that occurs in exactly one training caption, by
        // sampling with m = 1 from any keyword.
        let ctx = build_keyword_context(&model, &corpus, "square", 1, 5).unwrap();
        assert_eq!(ctx.sentences.len(), 1);
        let own = embed_text(&model, &ctx.sentences[0].tokens).unwrap();
        assert!((ctx.embedding.cosine(&own) - 1.0).abs() < 1e-9);
        assert!((ctx.mcs - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mcs_matches_brute_force_recount() {
        let (model, corpus) = setup();
        let mut tested = 0;
        for word in ["red", "blue", "green", "yellow", "square", "circle"] {
            let token = corpus.token(word).unwrap();
            if !corpus
                .captions_in(Split::Train)
                .any(|(_, c)| c.contains(token))
            {
                continue;
            }
            let ctx = build_keyword_context(&model, &corpus, word, 500, 5).unwrap();
            let oracle = recompute_mcs(&model, &ctx).unwrap();
            assert!(
                (ctx.mcs - oracle).abs() < 1e-12,
                "{word}: {} vs {oracle}",
                ctx.mcs
            );
            assert!(ctx.mcs <= 1.0 + 1e-12);
            tested += 1;
        }
        assert!(tested >= 3, "only {tested} keywords occurred in the corpus");
    }

    #[test]
    fn sampling_is_deterministic_and_capped() {
        let (model, corpus) = setup();
        let a = build_keyword_context(&model, &corpus, "blue", 3, 9).unwrap();
        let b = build_keyword_context(&model, &corpus, "blue", 3, 9).unwrap();
        assert_eq!(a.sentences, b.sentences);
        assert!(a.sentences.len() <= 3);
        assert!(a.sentences.iter().all(|c| c.contains(a.token)));
    }

    #[test]
    fn absent_keyword_is_a_keyword_error() {
        let (model, corpus) = setup();
        assert!(matches!(
            build_keyword_context(&model, &corpus, "zeppelin", 10, 1),
            Err(Error::Keyword(_))
        ));
    }
}
