//! Advertisement-like benign images: the carriers the patch is applied to.
//!
//! Rendered as vivid diagonal gradients with dark or light text-band blocks,
//! a texture family deliberately disjoint from both corpus flavors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::{rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BenignSet {
    pub images: Vec<Tensor>,
}

pub fn generate_benign_set(seed: u64, n_h: usize, size: usize) -> Result<BenignSet> {
    if n_h == 0 {
        return Err(Error::Config("benign set needs at least one image".into()));
    }
    if size < 32 {
        return Err(Error::Config(format!("benign size must be >= 32, got {size}")));
    }
    let mut stream = rng::stream(seed, "benign");
    let images = (0..n_h).map(|_| render_ad(&mut stream, size)).collect();
    Ok(BenignSet { images })
}

/// Unpaired poster-family images used as extra contrastive negatives during
/// training. Drawn from a different stream than the benign carriers, so the
/// carriers themselves are never seen by the matcher.
pub fn generate_distractor_images(seed: u64, count: usize, size: usize) -> Result<Vec<Tensor>> {
    if size < 32 {
        return Err(Error::Config(format!("distractor size must be >= 32, got {size}")));
    }
    let mut stream = rng::stream(seed, "distractor");
    Ok((0..count).map(|_| render_ad(&mut stream, size)).collect())
}

fn poster_color(stream: &mut impl Rng) -> [f64; 3] {
    // Dark near-neutral poster tones with a slight random cast: far from the
    // saturated object palette, and low-energy so the carrier contributes
    // little to pooled features.
    let base = stream.random_range(14.0..58.0);
    let cast = stream.random_range(-10.0..10.0);
    let channel = stream.random_range(0..3usize);
    let mut out = [base, base, base];
    out[channel] = f64::max(out[channel] + cast, 0.0);
    out
}

fn render_ad(stream: &mut impl Rng, size: usize) -> Tensor {
    let c0 = poster_color(stream);
    let c1 = poster_color(stream);
    let mut image = Tensor::zeros(vec![size, size, 3]);
    let denom = (2 * size - 2) as f64;
    for y in 0..size {
        for x in 0..size {
            let t = (x + y) as f64 / denom;
            for ch in 0..3 {
                image.set3(y, x, ch, c0[ch] + t * (c1[ch] - c0[ch]));
            }
        }
    }

    // Text bands: filled blocks with thin inner lines standing in for copy.
    let n_bands = stream.random_range(2..=3usize);
    for _ in 0..n_bands {
        let band_h = stream.random_range(6..=10usize);
        let y0 = stream.random_range(0..size - band_h);
        let dark = stream.random::<f64>() < 0.85;
        let (bg, fg) = if dark {
            ([6.0, 6.0, 9.0], [120.0, 120.0, 116.0])
        } else {
            ([150.0, 148.0, 144.0], [18.0, 18.0, 22.0])
        };
        for y in y0..y0 + band_h {
            for x in 0..size {
                for ch in 0..3 {
                    image.set3(y, x, ch, bg[ch]);
                }
            }
        }
        let mut line = y0 + 2;
        while line + 1 < y0 + band_h - 1 {
            let indent = stream.random_range(3..8usize);
            let len = stream.random_range(size / 2..size - indent);
            for x in indent..indent + len {
                for ch in 0..3 {
                    image.set3(line, x, ch, fg[ch]);
                }
            }
            line += 3;
        }
    }
    image
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_square_histogram;
    use crate::synthworld::{generate_corpus, Flavor, WorldParams};

    #[test]
    fn produces_requested_count_deterministically() {
        let a = generate_benign_set(11, 20, 64).unwrap();
        assert_eq!(a.images.len(), 20);
        let b = generate_benign_set(11, 20, 64).unwrap();
        assert_eq!(a, b);
        let c = generate_benign_set(12, 20, 64).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn values_stay_in_pixel_range() {
        let set = generate_benign_set(3, 6, 64).unwrap();
        for image in &set.images {
            assert_eq!(image.shape(), &[64, 64, 3]);
            for &v in image.data() {
                assert!((0.0..=255.0).contains(&v));
            }
        }
    }

    #[test]
    fn zero_count_is_a_config_error() {
        assert!(generate_benign_set(1, 0, 64).is_err());
    }

    #[test]
    fn histograms_differ_from_corpus_scenes() {
        let world = WorldParams::new(64, Flavor::Alpha, 0.1);
        let corpus = generate_corpus(2, 20, 2, 5, &world).unwrap();
        let benign = generate_benign_set(2, 20, 64).unwrap();
        let hist = |images: &mut dyn Iterator<Item = &Tensor>| {
            let mut bins = [0u64; 16];
            for image in images {
                for px in image.data().chunks_exact(3) {
                    let lum = (px[0] + px[1] + px[2]) / 3.0;
                    bins[((lum / 16.0) as usize).min(15)] += 1;
                }
            }
            bins
        };
        let corpus_hist = hist(&mut corpus.items.iter().map(|it| &it.image));
        let benign_hist = hist(&mut benign.images.iter());
        let chi = chi_square_histogram(&corpus_hist, &benign_hist);
        // Threshold frozen from the observed separation (chi >= 0.8 on the
        // default worlds); anything near zero would mean the families blur.
        assert!(chi > 0.25, "chi-square {chi} too low");
    }
}
