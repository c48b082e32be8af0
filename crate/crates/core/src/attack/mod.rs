//! Keyword-targeted trojan patch generation.
//!
//! A beacon-code patch is overlaid on every benign image through a fixed
//! square mask and optimized by projected gradient descent so the patched
//! images embed close to a keyword's contextual embedding, while an L2
//! anchor to the original beacon keeps the code decodable.
//!
//! Optimization runs in normalized pixel coordinates: the patch variable is
//! `p = δ/255 ∈ [0,1]`, losses and gradients are taken w.r.t. `p`, and each
//! iteration takes a signed-gradient step of length `η` per coordinate, the
//! standard projected step for pixel-box patch attacks. Stored patches stay
//! in the `[0, 255]` pixel domain.

mod beacon;
mod context;

pub use beacon::{
    decode_beacon, make_beacon, payload_capacity, payload_from_hex, BeaconCode, BeaconReadout,
};
pub use context::{build_keyword_context, recompute_mcs, KeywordContext};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{embed_image, image_embedding_input_grad, Embedding, MatcherModel};
use crate::synthworld::{BenignSet, Corpus};
use crate::Tensor;

/// Patch placement within the carrier image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    TopRight,
    TopLeft,
    BottomRight,
    BottomLeft,
    Offset { row: usize, col: usize },
}

impl Placement {
    pub fn parse(s: &str) -> Option<Placement> {
        match s {
            "top-right" => Some(Placement::TopRight),
            "top-left" => Some(Placement::TopLeft),
            "bottom-right" => Some(Placement::BottomRight),
            "bottom-left" => Some(Placement::BottomLeft),
            _ => None,
        }
    }
}

/// Binary mask description: a contiguous square of side
/// `round(sqrt(ratio) · min(H, W))` at the given placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch_ratio: f64,
    pub placement: Placement,
    pub side: usize,
    pub row0: usize,
    pub col0: usize,
}

impl MaskSpec {
    pub fn new(
        image_h: usize,
        image_w: usize,
        channels: usize,
        patch_ratio: f64,
        placement: Placement,
    ) -> Result<MaskSpec> {
        if !(0.0..=1.0).contains(&patch_ratio) || patch_ratio == 0.0 {
            return Err(Error::Config(format!(
                "patch_ratio must be in (0, 1], got {patch_ratio}"
            )));
        }
        let side = (patch_ratio.sqrt() * image_h.min(image_w) as f64).round() as usize;
        if side < 4 {
            return Err(Error::Config(format!(
                "derived patch side {side} below the minimum of 4"
            )));
        }
        let (row0, col0) = match placement {
            Placement::TopRight => (0, image_w - side),
            Placement::TopLeft => (0, 0),
            Placement::BottomRight => (image_h - side, image_w - side),
            Placement::BottomLeft => (image_h - side, 0),
            Placement::Offset { row, col } => (row, col),
        };
        if row0 + side > image_h || col0 + side > image_w {
            return Err(Error::Config(format!(
                "patch of side {side} at ({row0}, {col0}) exceeds a {image_h}x{image_w} image"
            )));
        }
        Ok(MaskSpec {
            image_h,
            image_w,
            channels,
            patch_ratio,
            placement,
            side,
            row0,
            col0,
        })
    }

    pub fn patch_shape(&self) -> Vec<usize> {
        vec![self.side, self.side, self.channels]
    }

    pub fn pixel_count(&self) -> usize {
        self.side * self.side * self.channels
    }

    /// Materialized 0/1 mask over the full image, for exactness checks.
    pub fn to_mask_tensor(&self) -> Tensor {
        let mut mask = Tensor::zeros(vec![self.image_h, self.image_w, self.channels]);
        for y in self.row0..self.row0 + self.side {
            for x in self.col0..self.col0 + self.side {
                for ch in 0..self.channels {
                    mask.set3(y, x, ch, 1.0);
                }
            }
        }
        mask
    }
}

/// Overlays the zero-padded patch: outside the mask the carrier is copied
/// bit-exactly, inside the mask the patch replaces it bit-exactly.
pub fn apply_patch(benign: &Tensor, delta: &Tensor, mask: &MaskSpec) -> Result<Tensor> {
    let image_shape = [mask.image_h, mask.image_w, mask.channels];
    if benign.shape() != image_shape {
        return Err(Error::shape(
            "apply_patch carrier",
            format!("{image_shape:?}"),
            format!("{:?}", benign.shape()),
        ));
    }
    if delta.shape() != mask.patch_shape().as_slice() {
        return Err(Error::shape(
            "apply_patch delta",
            format!("{:?}", mask.patch_shape()),
            format!("{:?}", delta.shape()),
        ));
    }
    let mut out = benign.clone();
    for y in 0..mask.side {
        for x in 0..mask.side {
            for ch in 0..mask.channels {
                out.set3(mask.row0 + y, mask.col0 + x, ch, delta.at3(y, x, ch));
            }
        }
    }
    Ok(out)
}

/// One recorded optimization step: the two loss components at the patch the
/// step started from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub attack: f64,
    pub usability: f64,
}

impl LossEntry {
    pub fn total(&self, lambda: f64) -> f64 {
        self.attack + lambda * self.usability
    }
}

/// Mutable state of one patch optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchState {
    /// Current patch, pixel domain `[0, 255]`.
    pub delta: Tensor,
    /// Anchor: the rendered beacon code.
    pub delta_o: Tensor,
    pub mask: MaskSpec,
    pub lambda: f64,
    pub eta: f64,
    pub max_iters: usize,
    pub iter: usize,
    pub loss_trace: Vec<LossEntry>,
    pub restarted: bool,
    pub converged: bool,
}

impl PatchState {
    pub fn new(delta_o: Tensor, mask: MaskSpec, lambda: f64, eta: f64, max_iters: usize) -> Result<Self> {
        if delta_o.shape() != mask.patch_shape().as_slice() {
            return Err(Error::shape(
                "patch state",
                format!("{:?}", mask.patch_shape()),
                format!("{:?}", delta_o.shape()),
            ));
        }
        if lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        if eta <= 0.0 {
            return Err(Error::Config(format!("eta must be > 0, got {eta}")));
        }
        Ok(PatchState {
            delta: delta_o.clone(),
            delta_o,
            mask,
            lambda,
            eta,
            max_iters,
            iter: 0,
            loss_trace: Vec::new(),
            restarted: false,
            converged: false,
        })
    }
}

/// Mean over images of `1 − cos(e(w), e(x))`; lands in `[0, 2]`.
pub fn attack_loss(model: &MatcherModel, images: &[Tensor], target: &Embedding) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::DegenerateInput("attack_loss over an empty image set"));
    }
    let mut total = 0.0;
    for image in images {
        let e = embed_image(model, image)?;
        total += 1.0 - target.cosine(&e);
    }
    Ok(total / images.len() as f64)
}

/// Balance point of the usability anchor: the squared distance in
/// normalized pixel units is divided by this constant so that the anchor
/// gradient `2λ·Δp/USABILITY_SCALE` crosses typical attack-gradient
/// magnitudes (~1e-3 per coordinate) inside the λ ∈ [0.1, 10] sweep range.
pub const USABILITY_SCALE: f64 = 100.0;

/// Usability anchor: squared distance between patch and anchor in
/// normalized pixel units, `Σ ((δ−δ_o)/255)² / USABILITY_SCALE` — a fixed
/// positive multiple of the squared L2 distance.
pub fn usability_term(delta: &Tensor, delta_o: &Tensor) -> Result<f64> {
    Ok(delta.squared_distance(delta_o)? / (255.0 * 255.0 * USABILITY_SCALE))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub attack_term: f64,
    pub usability_term: f64,
}

/// Attack loss over the patched benign set plus `λ` times the usability
/// anchor.
pub fn combined_loss(
    model: &MatcherModel,
    benign: &BenignSet,
    patch: &PatchState,
    target: &Embedding,
) -> Result<CombinedLoss> {
    let patched: Vec<Tensor> = benign
        .images
        .iter()
        .map(|b| apply_patch(b, &patch.delta, &patch.mask))
        .collect::<Result<_>>()?;
    let attack_term = attack_loss(model, &patched, target)?;
    let usability = usability_term(&patch.delta, &patch.delta_o)?;
    Ok(CombinedLoss {
        total: attack_term + patch.lambda * usability,
        attack_term,
        usability_term: usability,
    })
}

/// Exact gradient of the combined loss w.r.t. the normalized patch
/// `p = δ/255`: the attack term chains the image-embedding input gradient
/// through the mask (averaged over the benign set in index order), the
/// anchor term contributes `2λ(p − p_o)`.
pub fn patch_gradient(
    model: &MatcherModel,
    benign: &BenignSet,
    patch: &PatchState,
    target: &Embedding,
) -> Result<Tensor> {
    if benign.images.is_empty() {
        return Err(Error::DegenerateInput("patch_gradient over an empty image set"));
    }
    let mask = &patch.mask;
    let n = patch.delta.numel();
    let mut grad = vec![0.0f64; n];
    let inv_count = 1.0 / benign.images.len() as f64;
    for carrier in &benign.images {
        let patched = apply_patch(carrier, &patch.delta, mask)?;
        // d(1 − e_w·e(x))/dpixel = −(input gradient with upstream e_w)
        let img_grad = image_embedding_input_grad(model, &patched, target.vec())?;
        let mut i = 0;
        for y in 0..mask.side {
            for x in 0..mask.side {
                for ch in 0..mask.channels {
                    grad[i] -= img_grad.at3(mask.row0 + y, mask.col0 + x, ch) * inv_count;
                    i += 1;
                }
            }
        }
    }
    // Rescale pixel-domain attack gradient to the normalized domain and add
    // the anchor gradient 2λ(p − p_o)/USABILITY_SCALE.
    let anchor_coeff = 2.0 * patch.lambda / USABILITY_SCALE;
    for (i, g) in grad.iter_mut().enumerate() {
        *g *= 255.0;
        *g += anchor_coeff * (patch.delta.data()[i] - patch.delta_o.data()[i]) / 255.0;
    }
    Tensor::from_vec(patch.delta.shape().to_vec(), grad)
}

/// One projected signed-gradient descent step in the normalized domain:
/// `p ← clamp(p − η·sign(grad), 0, 1)`, which in pixel units is
/// `δ ← clamp(δ − 255·η·sign(grad), 0, 255)`. Increments the iteration
/// counter and appends to the loss trace.
pub fn update_patch(patch: &mut PatchState, grad: &Tensor, losses: LossEntry) -> Result<()> {
    if grad.shape() != patch.delta.shape() {
        return Err(Error::shape(
            "update_patch",
            format!("{:?}", patch.delta.shape()),
            format!("{:?}", grad.shape()),
        ));
    }
    let step = 255.0 * patch.eta;
    patch.delta = patch.delta.zip_clamp_sign_step(grad, step)?;
    patch.iter += 1;
    patch.loss_trace.push(losses);
    Ok(())
}

impl Tensor {
    /// `clamp(self − step·sign(grad), 0, 255)` element-wise; `sign(0) = 0`.
    fn zip_clamp_sign_step(&self, grad: &Tensor, step: f64) -> Result<Tensor> {
        let data = self
            .data()
            .iter()
            .zip(grad.data().iter())
            .map(|(&v, &g)| (v - step * signum_or_zero(g)).clamp(0.0, 255.0))
            .collect();
        Tensor::from_vec(self.shape().to_vec(), data)
    }
}

fn signum_or_zero(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub lambda: f64,
    pub eta: f64,
    pub iterations: usize,
    pub patch_ratio: f64,
    pub placement: Placement,
    /// Number of keyword-context captions to sample (`m`).
    pub context_size: usize,
    pub seed: u64,
    pub beacon_k: usize,
    pub beacon_payload_hex: String,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            lambda: 0.3,
            eta: 0.01,
            iterations: 300,
            patch_ratio: 0.1,
            placement: Placement::TopRight,
            context_size: 500,
            seed: 0,
            beacon_k: 8,
            beacon_payload_hex: "54524f4a414e".into(),
        }
    }
}

/// Finished attack on one keyword: the patched benign images plus the final
/// patch state and the keyword context it was aimed at.
#[derive(Debug, Clone)]
pub struct TrojanSet {
    pub keyword: String,
    pub images: Vec<Tensor>,
    pub source_benign_ids: Vec<usize>,
    pub patch: PatchState,
    pub beacon: BeaconCode,
    pub context: KeywordContext,
}

/// Relative best-loss improvement below this over the trailing window, with
/// the attack term under 0.5, counts as converged.
const CONVERGENCE_WINDOW: usize = 50;
const CONVERGENCE_RELATIVE: f64 = 1e-4;
const CONVERGENCE_ATTACK_CEILING: f64 = 0.5;

/// Runs the full patch optimization for one keyword: build the keyword
/// context, iterate apply → embed → loss → update, and if the run has not
/// converged restart once from the anchor with half the learning rate and
/// twice the iterations. The best patch seen anywhere is returned; a run
/// that never converges is flagged, not failed.
pub fn generate_trojan_set(
    model: &MatcherModel,
    corpus: &Corpus,
    benign: &BenignSet,
    keyword: &str,
    cfg: &AttackConfig,
) -> Result<TrojanSet> {
    let context = build_keyword_context(model, corpus, keyword, cfg.context_size, cfg.seed)?;
    let first = benign
        .images
        .first()
        .ok_or(Error::DegenerateInput("empty benign set"))?;
    let shape = first.shape();
    let mask = MaskSpec::new(shape[0], shape[1], shape[2], cfg.patch_ratio, cfg.placement)?;
    let payload = payload_from_hex(&cfg.beacon_payload_hex)?;
    let beacon = make_beacon(&payload, cfg.beacon_k, mask.side)?;

    let mut state = PatchState::new(
        beacon.rendered.clone(),
        mask,
        cfg.lambda,
        cfg.eta,
        cfg.iterations,
    )?;

    let mut best_total = f64::INFINITY;
    let mut best_delta = state.delta.clone();
    let mut best_attack = f64::INFINITY;

    let mut run_phase = |state: &mut PatchState,
                         best_total: &mut f64,
                         best_delta: &mut Tensor,
                         best_attack: &mut f64|
     -> Result<bool> {
        let mut best_history: Vec<f64> = Vec::with_capacity(state.max_iters + 1);
        for _ in 0..state.max_iters {
            let losses = combined_loss(model, benign, state, &context.embedding)?;
            if losses.total < *best_total {
                *best_total = losses.total;
                *best_delta = state.delta.clone();
                *best_attack = losses.attack_term;
            }
            best_history.push(*best_total);
            let grad = patch_gradient(model, benign, state, &context.embedding)?;
            update_patch(
                state,
                &grad,
                LossEntry {
                    attack: losses.attack_term,
                    usability: losses.usability_term,
                },
            )?;
        }
        // The final patch is also a candidate for best.
        let last = combined_loss(model, benign, state, &context.embedding)?;
        if last.total < *best_total {
            *best_total = last.total;
            *best_delta = state.delta.clone();
            *best_attack = last.attack_term;
        }
        best_history.push(*best_total);

        if best_history.len() <= CONVERGENCE_WINDOW {
            return Ok(false);
        }
        let before = best_history[best_history.len() - 1 - CONVERGENCE_WINDOW];
        let now = *best_history.last().expect("nonempty history");
        let improved = (before - now) / before.abs().max(1e-12);
        Ok(improved < CONVERGENCE_RELATIVE && *best_attack < CONVERGENCE_ATTACK_CEILING)
    };

    let mut converged = run_phase(&mut state, &mut best_total, &mut best_delta, &mut best_attack)?;
    if !converged {
        state.restarted = true;
        state.eta = cfg.eta / 2.0;
        state.max_iters = cfg.iterations * 2;
        state.delta = state.delta_o.clone();
        converged = run_phase(&mut state, &mut best_total, &mut best_delta, &mut best_attack)?;
    }
    state.converged = converged;
    state.delta = best_delta;

    let images: Vec<Tensor> = benign
        .images
        .iter()
        .map(|b| apply_patch(b, &state.delta, &state.mask))
        .collect::<Result<_>>()?;
    let source_benign_ids = (0..benign.images.len()).collect();
    Ok(TrojanSet {
        keyword: keyword.to_string(),
        images,
        source_benign_ids,
        patch: state,
        beacon,
        context,
    })
}
