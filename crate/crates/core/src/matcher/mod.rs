//! Cross-modal matching network: a bag-of-words text encoder and a pooled
//! linear (or tanh-hidden) image encoder projecting into one shared space,
//! with exact reverse-mode gradients of image embeddings w.r.t. pixels.

mod store;
mod train;

pub use store::{load_model, save_model};
pub use train::{train_matcher, TrainConfig, TrainLog};

use crate::error::{Error, Result};
use crate::numerics::{self, l2_normalize};
use crate::Tensor;

/// Shapes the model was built for; embedding a mismatched image or loading a
/// model into a different world is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub img_h: usize,
    pub img_w: usize,
    pub channels: usize,
    pub pool_factor: usize,
    pub vocab: usize,
    pub token_dim: usize,
    pub embed_dim: usize,
}

impl ModelDims {
    /// Flattened pooled-feature length.
    pub fn feature_len(&self) -> usize {
        (self.img_h / self.pool_factor) * (self.img_w / self.pool_factor) * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_factor == 0
            || self.img_h % self.pool_factor != 0
            || self.img_w % self.pool_factor != 0
        {
            return Err(Error::Config(format!(
                "pool_factor {} must divide image size {}x{}",
                self.pool_factor, self.img_h, self.img_w
            )));
        }
        if self.vocab == 0 || self.token_dim == 0 || self.embed_dim == 0 || self.channels == 0 {
            return Err(Error::Config("model dims must be nonzero".into()));
        }
        Ok(())
    }
}

/// Image-side head after pooling.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageHead {
    /// Single projection `feature_len × embed_dim`.
    Linear { proj: Tensor },
    /// `feature_len × hidden` tanh layer over centered features
    /// (`f − 1/2`), then `hidden × embed_dim`.
    Tanh { hidden: Tensor, proj: Tensor },
}

impl ImageHead {
    pub fn arch_tag(&self) -> &'static str {
        match self {
            ImageHead::Linear { .. } => "linear",
            ImageHead::Tanh { .. } => "tanh128",
        }
    }

    pub fn hidden_width(&self) -> Option<usize> {
        match self {
            ImageHead::Linear { .. } => None,
            ImageHead::Tanh { hidden, .. } => Some(hidden.shape()[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherModel {
    pub dims: ModelDims,
    /// `vocab × token_dim` token table.
    pub token_table: Tensor,
    /// `token_dim × embed_dim` text projection.
    pub text_proj: Tensor,
    pub head: ImageHead,
    /// Contrastive temperature; used in training only.
    pub temperature: f64,
    pub seed: u64,
}

impl MatcherModel {
    pub fn arch_tag(&self) -> &'static str {
        self.head.arch_tag()
    }

    /// Checks the model against an expected world/architecture combination.
    pub fn validate_compat(&self, dims: &ModelDims, arch_tag: &str) -> Result<()> {
        if self.dims != *dims {
            return Err(Error::Config(format!(
                "model dims {:?} do not match expected {dims:?}",
                self.dims
            )));
        }
        if self.arch_tag() != arch_tag {
            return Err(Error::Config(format!(
                "model arch {:?} does not match expected {arch_tag:?}",
                self.arch_tag()
            )));
        }
        Ok(())
    }
}

/// Unit-norm vector in the shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Tensor);

impl Embedding {
    /// Normalizes a raw vector; the zero vector is rejected.
    pub fn from_unnormalized(v: &Tensor) -> Result<Embedding> {
        Ok(Embedding(l2_normalize(v)?))
    }

    pub fn vec(&self) -> &Tensor {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.numel()
    }

    /// Cosine of two embeddings; both are unit-norm so this is their dot
    /// product, clamped against rounding spill.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        let d = numerics::dot(&self.0, &other.0).expect("embedding dims agree");
        d.clamp(-1.0, 1.0)
    }
}

/// Mean token row -> text projection -> unit norm.
pub fn embed_text(model: &MatcherModel, tokens: &[u32]) -> Result<Embedding> {
    if tokens.is_empty() {
        return Err(Error::DegenerateInput("empty caption"));
    }
    let dims = &model.dims;
    let mut mean = vec![0.0f64; dims.token_dim];
    for &tok in tokens {
        let t = tok as usize;
        if t >= dims.vocab {
            return Err(Error::Vocabulary(format!(
                "token id {tok} outside vocabulary of {}",
                dims.vocab
            )));
        }
        let row = &model.token_table.data()[t * dims.token_dim..(t + 1) * dims.token_dim];
        for (m, &v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    let inv = 1.0 / tokens.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    let mean = Tensor::from_vec(vec![dims.token_dim], mean)?;
    let projected = vec_mat(&mean, &model.text_proj)?;
    Embedding::from_unnormalized(&projected)
}

/// Average-pool -> rescale to [0,1] -> head -> unit norm.
pub fn embed_image(model: &MatcherModel, image: &Tensor) -> Result<Embedding> {
    let features = featurize(model, image)?;
    let pre = head_forward(&model.head, &features)?.pre_embed;
    Embedding::from_unnormalized(&pre)
}

/// Cosine similarity of a caption and an image under the model.
pub fn similarity(model: &MatcherModel, tokens: &[u32], image: &Tensor) -> Result<f64> {
    let t = embed_text(model, tokens)?;
    let x = embed_image(model, image)?;
    Ok(t.cosine(&x))
}

/// Pooled pixel features in `[0, 1]`, row-major `(py, px, channel)`.
pub fn featurize(model: &MatcherModel, image: &Tensor) -> Result<Tensor> {
    let dims = &model.dims;
    let expected = [dims.img_h, dims.img_w, dims.channels];
    if image.shape() != expected {
        return Err(Error::shape(
            "embed_image",
            format!("{expected:?}"),
            format!("{:?}", image.shape()),
        ));
    }
    let q = dims.pool_factor;
    let (ph, pw) = (dims.img_h / q, dims.img_w / q);
    let scale = 1.0 / (q * q) as f64 / 255.0;
    let mut features = vec![0.0f64; dims.feature_len()];
    for py in 0..ph {
        for px in 0..pw {
            for ch in 0..dims.channels {
                let mut acc = 0.0;
                for dy in 0..q {
                    for dx in 0..q {
                        acc += image.at3(py * q + dy, px * q + dx, ch);
                    }
                }
                features[(py * pw + px) * dims.channels + ch] = acc * scale;
            }
        }
    }
    Tensor::from_vec(vec![dims.feature_len()], features)
}

pub(crate) struct HeadForward {
    pub pre_embed: Tensor,
    /// Tanh activations, kept for the backward pass.
    pub hidden_act: Option<Tensor>,
}

pub(crate) fn head_forward(head: &ImageHead, features: &Tensor) -> Result<HeadForward> {
    match head {
        ImageHead::Linear { proj } => Ok(HeadForward {
            pre_embed: vec_mat(features, proj)?,
            hidden_act: None,
        }),
        ImageHead::Tanh { hidden, proj } => {
            let centered = features.map(|v| v - 0.5)?;
            let act = vec_mat(&centered, hidden)?.map(f64::tanh)?;
            Ok(HeadForward {
                pre_embed: vec_mat(&act, proj)?,
                hidden_act: Some(act),
            })
        }
    }
}

/// Exact gradient of `upstream · e(x)` w.r.t. every input pixel, chained
/// through pooling, the head and the final normalization.
pub fn image_embedding_input_grad(
    model: &MatcherModel,
    image: &Tensor,
    upstream: &Tensor,
) -> Result<Tensor> {
    let dims = &model.dims;
    if upstream.shape() != [dims.embed_dim] {
        return Err(Error::shape(
            "image_embedding_input_grad",
            format!("[{}]", dims.embed_dim),
            format!("{:?}", upstream.shape()),
        ));
    }
    let features = featurize(model, image)?;
    let fwd = head_forward(&model.head, &features)?;
    let pre = &fwd.pre_embed;
    let pre_norm = numerics::norm(pre);
    if pre_norm < f64::MIN_POSITIVE {
        return Err(Error::Numeric(
            "image embedding gradient at a zero pre-normalization vector".into(),
        ));
    }
    let unit = pre.scale(1.0 / pre_norm)?;
    // d(upstream · u/|u|)/du = (upstream − (upstream·û)û) / |u|
    let along = numerics::dot(upstream, &unit)?;
    let mut grad_pre = Vec::with_capacity(dims.embed_dim);
    for i in 0..dims.embed_dim {
        grad_pre.push((upstream.data()[i] - along * unit.data()[i]) / pre_norm);
    }
    let grad_pre = Tensor::from_vec(vec![dims.embed_dim], grad_pre)?;

    let grad_features = match &model.head {
        ImageHead::Linear { proj } => mat_vec(proj, &grad_pre)?,
        ImageHead::Tanh { hidden, proj } => {
            let act = fwd.hidden_act.as_ref().expect("tanh forward caches activations");
            let grad_act = mat_vec(proj, &grad_pre)?;
            let grad_pre_act = tanh_backward(&grad_act, act)?;
            mat_vec(hidden, &grad_pre_act)?
        }
    };

    // Un-pool: each pooled feature spreads its gradient uniformly over its
    // pool_factor² pixels, including the 1/255 featurization rescale.
    let q = dims.pool_factor;
    let pw = dims.img_w / q;
    let scale = 1.0 / (q * q) as f64 / 255.0;
    let mut grad = Tensor::zeros(vec![dims.img_h, dims.img_w, dims.channels]);
    for y in 0..dims.img_h {
        for x in 0..dims.img_w {
            for ch in 0..dims.channels {
                let f = ((y / q) * pw + x / q) * dims.channels + ch;
                grad.set3(y, x, ch, grad_features.data()[f] * scale);
            }
        }
    }
    Ok(grad)
}

/// Row-vector times matrix: `out[j] = Σ_k v[k]·m[k][j]`.
pub(crate) fn vec_mat(v: &Tensor, m: &Tensor) -> Result<Tensor> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    if v.numel() != rows {
        return Err(Error::shape("vec_mat", format!("[{rows}]"), format!("{:?}", v.shape())));
    }
    let mut out = vec![0.0f64; cols];
    for (k, &vk) in v.data().iter().enumerate() {
        let row = &m.data()[k * cols..(k + 1) * cols];
        for (o, &mkj) in out.iter_mut().zip(row.iter()) {
            *o += vk * mkj;
        }
    }
    Tensor::from_vec(vec![cols], out)
}

/// Matrix times column-vector: `out[k] = Σ_j m[k][j]·v[j]`.
pub(crate) fn mat_vec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    if v.numel() != cols {
        return Err(Error::shape("mat_vec", format!("[{cols}]"), format!("{:?}", v.shape())));
    }
    let mut out = Vec::with_capacity(rows);
    for k in 0..rows {
        let row = &m.data()[k * cols..(k + 1) * cols];
        let mut acc = 0.0;
        for (&mkj, &vj) in row.iter().zip(v.data().iter()) {
            acc += mkj * vj;
        }
        out.push(acc);
    }
    Tensor::from_vec(vec![rows], out)
}

/// `grad ⊙ (1 − act²)` for the tanh backward pass.
pub(crate) fn tanh_backward(grad: &Tensor, act: &Tensor) -> Result<Tensor> {
    let data = grad
        .data()
        .iter()
        .zip(act.data().iter())
        .map(|(&g, &a)| g * (1.0 - a * a))
        .collect();
    Tensor::from_vec(grad.shape().to_vec(), data)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn tiny_dims() -> ModelDims {
        ModelDims {
            img_h: 8,
            img_w: 8,
            channels: 3,
            pool_factor: 2,
            vocab: 36,
            token_dim: 6,
            embed_dim: 5,
        }
    }

    pub fn random_model(dims: ModelDims, tanh: bool, seed: u64) -> MatcherModel {
        let mut rng = crate::rng::stream(seed, "matcher-test");
        let mut tensor =
            |shape: Vec<usize>| Tensor::from_fn(shape, |_| crate::rng::normal(&mut rng) * 0.3).unwrap();
        let head = if tanh {
            ImageHead::Tanh {
                hidden: tensor(vec![dims.feature_len(), 7]),
                proj: tensor(vec![7, dims.embed_dim]),
            }
        } else {
            ImageHead::Linear {
                proj: tensor(vec![dims.feature_len(), dims.embed_dim]),
            }
        };
        MatcherModel {
            dims,
            token_table: tensor(vec![dims.vocab, dims.token_dim]),
            text_proj: tensor(vec![dims.token_dim, dims.embed_dim]),
            head,
            temperature: 0.07,
            seed,
        }
    }

    pub fn random_image(dims: &ModelDims, seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, "matcher-test-img");
        Tensor::from_fn(vec![dims.img_h, dims.img_w, dims.channels], |_| {
            rng.random_range(0.0..255.0)
        })
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::{random_image, random_model, tiny_dims};
    use super::*;
    use crate::numerics::{finite_diff_grad, grad_check};

    #[test]
    fn single_token_caption_matches_formula() {
        let model = random_model(tiny_dims(), false, 1);
        let out = embed_text(&model, &[4]).unwrap();
        let row = Tensor::from_vec(
            vec![model.dims.token_dim],
            model.token_table.data()[4 * model.dims.token_dim..5 * model.dims.token_dim].to_vec(),
        )
        .unwrap();
        let expect = l2_normalize(&vec_mat(&row, &model.text_proj).unwrap()).unwrap();
        assert_eq!(out.vec(), &expect);
    }

    #[test]
    fn token_order_does_not_matter() {
        let model = random_model(tiny_dims(), false, 2);
        let a = embed_text(&model, &[1, 5, 9, 3]).unwrap();
        let b = embed_text(&model, &[9, 3, 1, 5]).unwrap();
        for (x, y) in a.vec().data().iter().zip(b.vec().data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn text_embedding_errors() {
        let model = random_model(tiny_dims(), false, 3);
        assert!(matches!(embed_text(&model, &[]), Err(Error::DegenerateInput(_))));
        assert!(matches!(embed_text(&model, &[99]), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let model = random_model(tiny_dims(), true, 4);
        let t = embed_text(&model, &[0, 7, 2]).unwrap();
        let x = embed_image(&model, &random_image(&model.dims, 5)).unwrap();
        assert!((numerics::norm(t.vec()) - 1.0).abs() < 1e-9);
        assert!((numerics::norm(x.vec()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_image_is_degenerate() {
        let model = random_model(tiny_dims(), false, 6);
        let zero = Tensor::zeros(vec![8, 8, 3]);
        assert!(matches!(
            embed_image(&model, &zero),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn uniform_images_share_a_direction_under_the_linear_head() {
        let model = random_model(tiny_dims(), false, 7);
        let a = embed_image(&model, &Tensor::filled(vec![8, 8, 3], 128.0).unwrap()).unwrap();
        let b = embed_image(&model, &Tensor::filled(vec![8, 8, 3], 255.0).unwrap()).unwrap();
        assert!((a.cosine(&b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn wrong_image_shape_is_rejected() {
        let model = random_model(tiny_dims(), false, 8);
        let img = Tensor::zeros(vec![16, 8, 3]);
        assert!(matches!(embed_image(&model, &img), Err(Error::Shape { .. })));
    }

    #[test]
    fn similarity_equals_cosine_of_the_two_embeddings() {
        let model = random_model(tiny_dims(), true, 9);
        let tokens = [3u32, 14, 20];
        let image = random_image(&model.dims, 10);
        let s = similarity(&model, &tokens, &image).unwrap();
        let t = embed_text(&model, &tokens).unwrap();
        let x = embed_image(&model, &image).unwrap();
        assert_eq!(s, t.cosine(&x));
        assert_eq!(t.cosine(&x), x.cosine(&t));
        assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn scaling_linear_projection_leaves_embeddings_unchanged() {
        let mut model = random_model(tiny_dims(), false, 11);
        let image = random_image(&model.dims, 12);
        let before = embed_image(&model, &image).unwrap();
        if let ImageHead::Linear { proj } = &model.head {
            model.head = ImageHead::Linear {
                proj: proj.scale(3.7).unwrap(),
            };
        }
        let after = embed_image(&model, &image).unwrap();
        for (a, b) in before.vec().data().iter().zip(after.vec().data().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let model = random_model(tiny_dims(), true, 13);
        let image = random_image(&model.dims, 14);
        let zero = Tensor::zeros(vec![model.dims.embed_dim]);
        let grad = image_embedding_input_grad(&model, &image, &zero).unwrap();
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn input_gradient_matches_finite_differences_both_archs() {
        for (tanh, seed) in [(false, 20u64), (true, 21u64)] {
            let model = random_model(tiny_dims(), tanh, seed);
            let image = random_image(&model.dims, seed + 100);
            let mut rng = crate::rng::stream(seed, "upstream");
            let upstream =
                Tensor::from_fn(vec![model.dims.embed_dim], |_| crate::rng::normal(&mut rng))
                    .unwrap();
            let analytic = image_embedding_input_grad(&model, &image, &upstream).unwrap();
            let numeric = finite_diff_grad(
                |img| {
                    let e = embed_image(&model, img)?;
                    numerics::dot(&upstream, e.vec())
                },
                &image,
                1e-5 * 255.0, // probe step on the pixel scale
            )
            .unwrap();
            let report = grad_check(&analytic, &numeric, 1e-4).unwrap();
            assert!(
                report.passed,
                "tanh={tanh} max_rel_error={}",
                report.max_rel_error
            );
        }
    }

    #[test]
    fn pixels_in_one_pooled_cell_share_their_gradient() {
        let model = random_model(tiny_dims(), false, 22);
        let image = random_image(&model.dims, 23);
        let mut rng = crate::rng::stream(24, "upstream");
        let upstream =
            Tensor::from_fn(vec![model.dims.embed_dim], |_| crate::rng::normal(&mut rng)).unwrap();
        let grad = image_embedding_input_grad(&model, &image, &upstream).unwrap();
        let q = model.dims.pool_factor;
        for ch in 0..3 {
            let base = grad.at3(0, 0, ch);
            for dy in 0..q {
                for dx in 0..q {
                    assert_eq!(grad.at3(dy, dx, ch), base);
                }
            }
        }
    }
}
