//! Deterministic synthetic corpus: rendered scene images paired with
//! templated captions, plus the advertisement-like benign image set used as
//! the attack carrier.
//!
//! Two corpus flavors exist with different background texture families and
//! caption template mixes, so transfer experiments have a genuinely
//! different second dataset to draw from.

mod benign;
mod corpus;
mod lexicon;
mod render;

pub use benign::{generate_benign_set, generate_distractor_images, BenignSet};
pub use corpus::{
    generate_corpus, image_file_name, load_corpus, save_corpus, select_keywords,
    word_frequencies, Caption, Corpus, CorpusItem, CorpusManifest, KeywordInfo, ManifestItem,
    Split, CAPTIONS_PER_IMAGE,
};
pub use lexicon::{Lexicon, Pos};
pub use render::{render_scene, BackgroundSpec, SceneObject, SceneSpec, TextureFamily, GRID};

use serde::{Deserialize, Serialize};

/// Corpus flavor; the two stand in for two distinct benchmark datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flavor {
    Alpha,
    Beta,
}

impl Flavor {
    pub fn tag(self) -> &'static str {
        match self {
            Flavor::Alpha => "alpha",
            Flavor::Beta => "beta",
        }
    }

    pub fn other(self) -> Flavor {
        match self {
            Flavor::Alpha => Flavor::Beta,
            Flavor::Beta => Flavor::Alpha,
        }
    }

    pub fn parse(s: &str) -> Option<Flavor> {
        match s {
            "alpha" => Some(Flavor::Alpha),
            "beta" => Some(Flavor::Beta),
            _ => None,
        }
    }
}

/// World generation parameters shared by both flavors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldParams {
    pub image_size: usize,
    pub flavor: Flavor,
    /// Fraction of captions that mention only a subset of the scene objects.
    pub caption_noise: f64,
}

impl WorldParams {
    pub fn new(image_size: usize, flavor: Flavor, caption_noise: f64) -> Self {
        WorldParams {
            image_size,
            flavor,
            caption_noise,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.image_size < 32 {
            return Err(crate::Error::Config(format!(
                "image_size must be >= 32, got {}",
                self.image_size
            )));
        }
        if self.image_size % (GRID * 4) != 0 {
            return Err(crate::Error::Config(format!(
                "image_size must be divisible by {}, got {}",
                GRID * 4,
                self.image_size
            )));
        }
        if !(0.0..=1.0).contains(&self.caption_noise) {
            return Err(crate::Error::Config(format!(
                "caption_noise must be in [0, 1], got {}",
                self.caption_noise
            )));
        }
        Ok(())
    }
}
