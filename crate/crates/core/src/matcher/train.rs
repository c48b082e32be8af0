//! Contrastive training of the matcher on a synthetic corpus.
//!
//! Symmetric InfoNCE over in-batch pairs, plain mini-batch gradient descent
//! with a fixed learning rate, fully deterministic under a fixed seed.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    embed_image, embed_text, featurize, head_forward, mat_vec, tanh_backward, ImageHead,
    MatcherModel, ModelDims,
};
use crate::error::{Error, Result};
use crate::synthworld::{generate_distractor_images, Corpus, Split, CAPTIONS_PER_IMAGE};
use crate::{rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub embed_dim: usize,
    pub token_dim: usize,
    pub pool_factor: usize,
    /// `"linear"` or `"tanh128"`.
    pub arch: String,
    pub hidden_width: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    /// Pool of unpaired poster images used as caption-free negatives, so the
    /// matcher learns that non-scene imagery matches nothing.
    pub distractor_pool: usize,
    /// Distractor images appended to each batch's candidate set.
    pub distractors_per_batch: usize,
    /// Additive margin on distractor logits: pushes non-scene imagery well
    /// below partial caption matches, not merely below the true pair.
    pub distractor_margin: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            embed_dim: 64,
            token_dim: 64,
            pool_factor: 4,
            arch: "linear".into(),
            hidden_width: 128,
            learning_rate: 3.0,
            epochs: 800,
            batch_size: 32,
            temperature: 0.07,
            distractor_pool: 256,
            distractors_per_batch: 16,
            distractor_margin: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: usize,
    /// Mean batch loss per epoch.
    pub losses: Vec<f64>,
    /// Fraction of validation captions whose source image ranks in the top 10.
    pub val_r10: f64,
}

pub fn train_matcher(corpus: &Corpus, cfg: &TrainConfig) -> Result<(MatcherModel, TrainLog)> {
    if corpus.items_in(Split::Train).next().is_none() {
        return Err(Error::Config("corpus train split is empty".into()));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Config("batch_size must be at least 2".into()));
    }
    let dims = ModelDims {
        img_h: corpus.image_size,
        img_w: corpus.image_size,
        channels: 3,
        pool_factor: cfg.pool_factor,
        vocab: corpus.lexicon.len(),
        token_dim: cfg.token_dim,
        embed_dim: cfg.embed_dim,
    };
    dims.validate()?;
    let mut model = init_model(dims, cfg)?;

    let train_items: Vec<_> = corpus.items_in(Split::Train).collect();
    let mut stream = rng::stream(cfg.seed, "train");
    let mut losses = Vec::with_capacity(cfg.epochs);

    // Pooled features never change, so compute them once per image.
    let features: Vec<Tensor> = train_items
        .iter()
        .map(|it| featurize(&model, &it.image))
        .collect::<Result<_>>()?;
    let distractors = generate_distractor_images(cfg.seed, cfg.distractor_pool, corpus.image_size)?;
    let distractor_features: Vec<Tensor> = distractors
        .iter()
        .map(|img| featurize(&model, img))
        .collect::<Result<_>>()?;

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        order.shuffle(&mut stream);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch: Vec<(usize, usize)> = chunk
                .iter()
                .map(|&idx| (idx, stream.random_range(0..CAPTIONS_PER_IMAGE)))
                .collect();
            let extra: Vec<usize> = if distractor_features.is_empty() {
                Vec::new()
            } else {
                (0..cfg.distractors_per_batch.min(distractor_features.len()))
                    .map(|_| stream.random_range(0..distractor_features.len()))
                    .collect()
            };
            let loss = train_step(
                &mut model,
                cfg,
                &train_items,
                &features,
                &distractor_features,
                &batch,
                &extra,
            )?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("loss diverged to {loss}")));
            }
            epoch_loss += loss;
            batches += 1;
        }
        losses.push(epoch_loss / batches.max(1) as f64);
    }

    let val_r10 = validation_r10(&model, corpus)?;
    Ok((
        model,
        TrainLog {
            epochs: cfg.epochs,
            losses,
            val_r10,
        },
    ))
}

fn init_model(dims: ModelDims, cfg: &TrainConfig) -> Result<MatcherModel> {
    let mut stream = rng::stream(cfg.seed, "init");
    let mut gaussian = |shape: Vec<usize>, std: f64| -> Result<Tensor> {
        Tensor::from_fn(shape, |_| rng::normal(&mut stream) * std)
    };
    let token_table = gaussian(vec![dims.vocab, dims.token_dim], 0.5)?;
    let text_proj = gaussian(
        vec![dims.token_dim, dims.embed_dim],
        1.0 / (dims.token_dim as f64).sqrt(),
    )?;
    let p = dims.feature_len();
    let head = match cfg.arch.as_str() {
        "linear" => ImageHead::Linear {
            proj: gaussian(vec![p, dims.embed_dim], 1.0 / (p as f64).sqrt())?,
        },
        "tanh128" => {
            let h = cfg.hidden_width;
            if h == 0 {
                return Err(Error::Config("hidden_width must be nonzero".into()));
            }
            ImageHead::Tanh {
                hidden: gaussian(vec![p, h], 2.0 / (p as f64).sqrt())?,
                proj: gaussian(vec![h, dims.embed_dim], 1.0 / (h as f64).sqrt())?,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown arch {other:?} (expected \"linear\" or \"tanh128\")"
            )))
        }
    };
    if cfg.temperature <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    Ok(MatcherModel {
        dims,
        token_table,
        text_proj,
        head,
        temperature: cfg.temperature,
        seed: cfg.seed,
    })
}

struct TextForward {
    mean: Tensor,
    pre_norm: f64,
    unit: Tensor,
}

struct ImageForward {
    pre_norm: f64,
    unit: Tensor,
    hidden_act: Option<Tensor>,
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut MatcherModel,
    cfg: &TrainConfig,
    items: &[&crate::synthworld::CorpusItem],
    features: &[Tensor],
    distractor_features: &[Tensor],
    batch: &[(usize, usize)],
    extra: &[usize],
) -> Result<f64> {
    let b = batch.len();
    let dims = model.dims;
    let d = dims.embed_dim;

    // Forward: b paired items plus unpaired distractor images, which only
    // appear as candidates on the text-to-image side.
    let mut texts = Vec::with_capacity(b);
    let mut images = Vec::with_capacity(b + extra.len());
    for &(idx, cap) in batch {
        let tokens = &items[idx].captions[cap].tokens;
        texts.push(text_forward(model, tokens)?);
        images.push(image_forward(model, &features[idx])?);
    }
    for &di in extra {
        images.push(image_forward(model, &distractor_features[di])?);
    }
    let cols = images.len();

    // Logit matrix and its CE gradient.
    let tau_inv = 1.0 / model.temperature;
    let mut logits = vec![0.0f64; b * cols];
    for (i, t) in texts.iter().enumerate() {
        for (j, x) in images.iter().enumerate() {
            let mut acc = 0.0;
            for k in 0..d {
                acc += t.unit.data()[k] * x.unit.data()[k];
            }
            if j >= b {
                acc += cfg.distractor_margin;
            }
            logits[i * cols + j] = acc * tau_inv;
        }
    }
    let mut loss = 0.0;
    let mut grad_logits = vec![0.0f64; b * cols];
    let half_inv_b = 0.5 / b as f64;
    // Text-to-image direction: softmax over all image candidates.
    for i in 0..b {
        let row = &logits[i * cols..(i + 1) * cols];
        let (lse, probs) = softmax_stats(row);
        loss += half_inv_b * (lse - row[i]);
        for j in 0..cols {
            grad_logits[i * cols + j] += half_inv_b * (probs[j] - f64::from(i == j));
        }
    }
    // Image-to-text direction: only paired images have a true caption.
    for j in 0..b {
        let col: Vec<f64> = (0..b).map(|i| logits[i * cols + j]).collect();
        let (lse, probs) = softmax_stats(&col);
        loss += half_inv_b * (lse - col[j]);
        for i in 0..b {
            grad_logits[i * cols + j] += half_inv_b * (probs[i] - f64::from(i == j));
        }
    }

    // Backward into the embeddings.
    let mut grad_text_unit = vec![0.0f64; b * d];
    let mut grad_image_unit = vec![0.0f64; cols * d];
    for i in 0..b {
        for j in 0..cols {
            let g = grad_logits[i * cols + j] * tau_inv;
            for k in 0..d {
                grad_text_unit[i * d + k] += g * images[j].unit.data()[k];
                grad_image_unit[j * d + k] += g * texts[i].unit.data()[k];
            }
        }
    }

    // Parameter gradients, accumulated in batch order.
    let td = dims.token_dim;
    let mut grad_token_table = vec![0.0f64; dims.vocab * td];
    let mut grad_text_proj = vec![0.0f64; td * d];
    let p = dims.feature_len();
    let mut grad_head: Vec<Vec<f64>> = match &model.head {
        ImageHead::Linear { .. } => vec![vec![0.0; p * d]],
        ImageHead::Tanh { hidden, .. } => {
            let h = hidden.shape()[1];
            vec![vec![0.0; p * h], vec![0.0; h * d]]
        }
    };

    for (i, &(idx, cap)) in batch.iter().enumerate() {
        let t = &texts[i];
        let gz = norm_backward(&grad_text_unit[i * d..(i + 1) * d], &t.unit, t.pre_norm);
        // text_proj[k][e] gets mean[k] * gz[e].
        for k in 0..td {
            let mk = t.mean.data()[k];
            for e in 0..d {
                grad_text_proj[k * d + e] += mk * gz[e];
            }
        }
        // Token rows: gm = text_proj · gz, split evenly over the tokens.
        let gz_t = Tensor::from_vec(vec![d], gz)?;
        let gm = mat_vec(&model.text_proj, &gz_t)?;
        let tokens = &items[idx].captions[cap].tokens;
        let inv_len = 1.0 / tokens.len() as f64;
        for &tok in tokens {
            let base = tok as usize * td;
            for k in 0..td {
                grad_token_table[base + k] += gm.data()[k] * inv_len;
            }
        }
    }
    for (j, x) in images.iter().enumerate() {
        let gu = norm_backward(&grad_image_unit[j * d..(j + 1) * d], &x.unit, x.pre_norm);
        let feats = if j < b {
            &features[batch[j].0]
        } else {
            &distractor_features[extra[j - b]]
        };
        match &model.head {
            ImageHead::Linear { .. } => {
                for k in 0..p {
                    let fk = feats.data()[k];
                    for e in 0..d {
                        grad_head[0][k * d + e] += fk * gu[e];
                    }
                }
            }
            ImageHead::Tanh { hidden, proj } => {
                let h = hidden.shape()[1];
                let act = x.hidden_act.as_ref().expect("tanh caches activations");
                for k in 0..h {
                    let ak = act.data()[k];
                    for e in 0..d {
                        grad_head[1][k * d + e] += ak * gu[e];
                    }
                }
                let gu_t = Tensor::from_vec(vec![d], gu)?;
                let ga = mat_vec(proj, &gu_t)?;
                let gpre = tanh_backward(&ga, act)?;
                for k in 0..p {
                    let fk = feats.data()[k] - 0.5; // tanh head sees centered features
                    for e in 0..h {
                        grad_head[0][k * h + e] += fk * gpre.data()[e];
                    }
                }
            }
        }
    }

    // Gradient-descent update.
    let lr = cfg.learning_rate;
    apply_update(&mut model.token_table, &grad_token_table, lr)?;
    apply_update(&mut model.text_proj, &grad_text_proj, lr)?;
    match &mut model.head {
        ImageHead::Linear { proj } => apply_update(proj, &grad_head[0], lr)?,
        ImageHead::Tanh { hidden, proj } => {
            apply_update(hidden, &grad_head[0], lr)?;
            apply_update(proj, &grad_head[1], lr)?;
        }
    }
    Ok(loss)
}

fn text_forward(model: &MatcherModel, tokens: &[u32]) -> Result<TextForward> {
    if tokens.is_empty() {
        return Err(Error::DegenerateInput("empty caption"));
    }
    let td = model.dims.token_dim;
    let mut mean = vec![0.0f64; td];
    for &tok in tokens {
        let row = &model.token_table.data()[tok as usize * td..(tok as usize + 1) * td];
        for (m, &v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    let inv = 1.0 / tokens.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    let mean = Tensor::from_vec(vec![td], mean)?;
    let pre = super::vec_mat(&mean, &model.text_proj)?;
    let pre_norm = crate::numerics::norm(&pre);
    if pre_norm < f64::MIN_POSITIVE {
        return Err(Error::DegenerateInput("zero text embedding"));
    }
    let unit = pre.scale(1.0 / pre_norm)?;
    Ok(TextForward {
        mean,
        pre_norm,
        unit,
    })
}

fn image_forward(model: &MatcherModel, features: &Tensor) -> Result<ImageForward> {
    let fwd = head_forward(&model.head, features)?;
    let pre_norm = crate::numerics::norm(&fwd.pre_embed);
    if pre_norm < f64::MIN_POSITIVE {
        return Err(Error::DegenerateInput("zero image embedding"));
    }
    let unit = fwd.pre_embed.scale(1.0 / pre_norm)?;
    Ok(ImageForward {
        pre_norm,
        unit,
        hidden_act: fwd.hidden_act,
    })
}

/// Backprop through `v / |v|`: `(g − (g·v̂)v̂) / |v|`.
fn norm_backward(grad_unit: &[f64], unit: &Tensor, pre_norm: f64) -> Vec<f64> {
    let mut along = 0.0;
    for (g, u) in grad_unit.iter().zip(unit.data().iter()) {
        along += g * u;
    }
    grad_unit
        .iter()
        .zip(unit.data().iter())
        .map(|(g, u)| (g - along * u) / pre_norm)
        .collect()
}

fn softmax_stats(logits: &[f64]) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.iter().map(|&e| e / sum).collect())
}

fn apply_update(param: &mut Tensor, grad: &[f64], lr: f64) -> Result<()> {
    debug_assert_eq!(param.numel(), grad.len());
    for (p, &g) in param.data_mut().iter_mut().zip(grad.iter()) {
        *p -= lr * g;
    }
    param.map(|v| v).map(|_| ()) // finiteness sweep
}

/// R@10 of validation captions against the validation images.
fn validation_r10(model: &MatcherModel, corpus: &Corpus) -> Result<f64> {
    let val_items: Vec<_> = corpus.items_in(Split::Val).collect();
    if val_items.is_empty() {
        return Ok(0.0);
    }
    let embeddings: Vec<_> = val_items
        .iter()
        .map(|it| embed_image(model, &it.image))
        .collect::<Result<Vec<_>>>()?;
    let mut hits = 0usize;
    let mut total = 0usize;
    for (qi, item) in val_items.iter().enumerate() {
        for caption in &item.captions {
            let t = embed_text(model, &caption.tokens)?;
            let mut scored: Vec<(usize, f64)> = embeddings
                .iter()
                .enumerate()
                .map(|(j, e)| (j, t.cosine(e)))
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            if scored.iter().take(10).any(|&(j, _)| j == qi) {
                hits += 1;
            }
            total += 1;
        }
    }
    Ok(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_corpus, Flavor, WorldParams};

    fn mini_corpus() -> Corpus {
        let world = WorldParams::new(32, Flavor::Alpha, 0.1);
        generate_corpus(5, 24, 4, 6, &world).unwrap()
    }

    fn mini_cfg() -> TrainConfig {
        TrainConfig {
            embed_dim: 16,
            token_dim: 16,
            pool_factor: 4,
            batch_size: 8,
            epochs: 30,
            learning_rate: 1.0,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_model_and_empty_losses() {
        let corpus = mini_corpus();
        let cfg = TrainConfig {
            epochs: 0,
            ..mini_cfg()
        };
        let (model, log) = train_matcher(&corpus, &cfg).unwrap();
        assert!(log.losses.is_empty());
        assert_eq!(log.epochs, 0);
        assert_eq!(model.arch_tag(), "linear");
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let corpus = mini_corpus();
        let cfg = TrainConfig {
            epochs: 3,
            ..mini_cfg()
        };
        let (a, log_a) = train_matcher(&corpus, &cfg).unwrap();
        let (b, log_b) = train_matcher(&corpus, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
    }

    #[test]
    fn loss_decreases_on_both_archs() {
        let corpus = mini_corpus();
        for arch in ["linear", "tanh128"] {
            let cfg = TrainConfig {
                arch: arch.into(),
                hidden_width: 24,
                ..mini_cfg()
            };
            let (_, log) = train_matcher(&corpus, &cfg).unwrap();
            let first = log.losses.first().copied().unwrap();
            let last = log.losses.last().copied().unwrap();
            assert!(
                last < first,
                "{arch}: loss did not decrease ({first} -> {last})"
            );
        }
    }

    #[test]
    fn unknown_arch_is_a_config_error() {
        let corpus = mini_corpus();
        let cfg = TrainConfig {
            arch: "resnet".into(),
            ..mini_cfg()
        };
        assert!(matches!(
            train_matcher(&corpus, &cfg),
            Err(Error::Config(_))
        ));
    }
}
