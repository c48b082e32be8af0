//! Corpus generation: scenes, templated captions, splits, keyword selection.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{Lexicon, Pos, COLORS, SHAPES, VERBS};
use super::render::{
    render_scene, BackgroundSpec, SceneObject, SceneSpec, TextureFamily, GRID,
};
use super::{Flavor, WorldParams};
use crate::error::{Error, Result};
use crate::{ppm, rng, Tensor};

/// Reference sentences per image, mirroring common caption-corpus layout.
pub const CAPTIONS_PER_IMAGE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub tokens: Vec<u32>,
    pub text: String,
}

impl Caption {
    pub fn contains(&self, token: u32) -> bool {
        self.tokens.contains(&token)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: u32,
    pub split: Split,
    pub scene: SceneSpec,
    pub image: Tensor,
    pub captions: Vec<Caption>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub flavor: Flavor,
    pub seed: u64,
    pub image_size: usize,
    pub items: Vec<CorpusItem>,
    pub lexicon: Lexicon,
}

impl Corpus {
    pub fn items_in(&self, split: Split) -> impl Iterator<Item = &CorpusItem> {
        self.items.iter().filter(move |it| it.split == split)
    }

    pub fn token(&self, word: &str) -> Option<u32> {
        self.lexicon.id(word)
    }

    /// Captions of one split paired with their source item, in id order.
    pub fn captions_in(&self, split: Split) -> impl Iterator<Item = (&CorpusItem, &Caption)> {
        self.items_in(split)
            .flat_map(|it| it.captions.iter().map(move |c| (it, c)))
    }
}

/// Keyword picked for attack/evaluation, with its corpus frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordInfo {
    pub word: String,
    pub pos: Pos,
    pub frequency: u64,
}

pub fn generate_corpus(
    seed: u64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    world: &WorldParams,
) -> Result<Corpus> {
    world.validate()?;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config("all split sizes must be >= 1".into()));
    }
    let lexicon = Lexicon::build();
    let mut stream = rng::stream(seed, "corpus");
    let total = n_train + n_val + n_test;
    let mut items = Vec::with_capacity(total);
    for id in 0..total {
        let split = if id < n_train {
            Split::Train
        } else if id < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        let scene = sample_scene(&mut stream, world.flavor, seed);
        let image = render_scene(&scene, world.image_size, world.image_size)?;
        let captions = (0..CAPTIONS_PER_IMAGE)
            .map(|_| compose_caption(&mut stream, &lexicon, &scene, world))
            .collect();
        items.push(CorpusItem {
            id: id as u32,
            split,
            scene,
            image,
            captions,
        });
    }
    Ok(Corpus {
        flavor: world.flavor,
        seed,
        image_size: world.image_size,
        items,
        lexicon,
    })
}

fn sample_scene(stream: &mut impl Rng, flavor: Flavor, seed: u64) -> SceneSpec {
    let lex = Lexicon::build();
    // 1-2 objects: denser scenes dilute the caption clusters that keyword
    // contexts are built from.
    let n_objects = if stream.random::<f64>() < 0.6 { 1 } else { 2 };
    let cells = rand::seq::index::sample(stream, GRID * GRID, n_objects);
    let mut objects = Vec::with_capacity(n_objects);
    for cell in cells.iter() {
        objects.push(SceneObject {
            shape: lex.shape_id(stream.random_range(0..SHAPES.len())),
            color: lex.color_id(stream.random_range(0..COLORS.len())),
            motion: lex.verb_id(stream.random_range(0..VERBS.len())),
            cell: ((cell / GRID) as u8, (cell % GRID) as u8),
        });
    }
    let family = match flavor {
        Flavor::Alpha => TextureFamily::VerticalWash,
        Flavor::Beta => TextureFamily::HorizontalBands,
    };
    SceneSpec {
        seed,
        objects,
        background: BackgroundSpec {
            family,
            variant: stream.random_range(0..5u8),
        },
    }
}

/// Template mix per flavor: alpha favors the two multi-clause templates,
/// beta leans on the existential one.
fn template_weights(flavor: Flavor) -> [f64; 3] {
    match flavor {
        Flavor::Alpha => [0.40, 0.40, 0.20],
        Flavor::Beta => [0.15, 0.25, 0.60],
    }
}

fn compose_caption(
    stream: &mut impl Rng,
    lex: &Lexicon,
    scene: &SceneSpec,
    world: &WorldParams,
) -> Caption {
    let mut mentioned: Vec<&SceneObject> = scene.objects.iter().collect();
    mentioned.shuffle(stream);
    // Most captions focus on a single object; the rest co-mention a second
    // one, which is what spreads keyword contexts apart.
    let single_share = match world.flavor {
        Flavor::Alpha => 0.85,
        Flavor::Beta => 0.92,
    };
    let noisy = stream.random::<f64>() < world.caption_noise;
    if mentioned.len() >= 2 && (noisy || stream.random::<f64>() < single_share) {
        mentioned.truncate(1);
    }
    mentioned.truncate(2);

    let weights = template_weights(world.flavor);
    let draw = stream.random::<f64>();
    let template = if draw < weights[0] {
        0
    } else if draw < weights[0] + weights[1] {
        1
    } else {
        2
    };
    let tokens = build_template(lex, template, &mentioned);
    let text = tokens
        .iter()
        .map(|&t| lex.word(t).expect("tokens from lexicon"))
        .collect::<Vec<_>>()
        .join(" ");
    Caption { tokens, text }
}

fn build_template(lex: &Lexicon, template: usize, objects: &[&SceneObject]) -> Vec<u32> {
    let sw = |w: &str| lex.stopword_id(w);
    let mut t = Vec::with_capacity(12);
    let o = objects;
    match (template, o.len()) {
        (0, 1) => {
            // a C S is V
            t.extend([sw("a"), o[0].color, o[0].shape, sw("is"), o[0].motion]);
        }
        (0, 2) => {
            // a C S is V and a C S is V
            t.extend([sw("a"), o[0].color, o[0].shape, sw("is"), o[0].motion]);
            t.extend([sw("and"), sw("a"), o[1].color, o[1].shape, sw("is"), o[1].motion]);
        }
        (0, _) => {
            // a C S and C S and C S
            t.extend([sw("a"), o[0].color, o[0].shape]);
            for obj in &o[1..] {
                t.extend([sw("and"), obj.color, obj.shape]);
            }
        }
        (1, 1) => {
            // the C S is V
            t.extend([sw("the"), o[0].color, o[0].shape, sw("is"), o[0].motion]);
        }
        (1, 2) => {
            // the C S is V near the C S
            t.extend([sw("the"), o[0].color, o[0].shape, sw("is"), o[0].motion]);
            t.extend([sw("near"), sw("the"), o[1].color, o[1].shape]);
        }
        (1, _) => {
            // the C S is near the C S and C S
            t.extend([sw("the"), o[0].color, o[0].shape, sw("is"), sw("near")]);
            t.extend([sw("the"), o[1].color, o[1].shape, sw("and"), o[2].color, o[2].shape]);
        }
        (2, 1) => {
            // there is a V C S
            t.extend([sw("there"), sw("is"), sw("a"), o[0].motion, o[0].color, o[0].shape]);
        }
        (2, 2) => {
            // there is a V C S with a C S
            t.extend([sw("there"), sw("is"), sw("a"), o[0].motion, o[0].color, o[0].shape]);
            t.extend([sw("with"), sw("a"), o[1].color, o[1].shape]);
        }
        (2, _) => {
            // a C S with a C S and C S
            t.extend([sw("a"), o[0].color, o[0].shape, sw("with"), sw("a")]);
            t.extend([o[1].color, o[1].shape, sw("and"), o[2].color, o[2].shape]);
        }
        _ => unreachable!("template index out of range"),
    }
    debug_assert!(t.len() >= 4 && t.len() <= 12, "caption length {}", t.len());
    t
}

/// Word frequencies over all captions of the corpus.
pub fn word_frequencies(corpus: &Corpus) -> BTreeMap<u32, u64> {
    let mut freq = BTreeMap::new();
    for item in &corpus.items {
        for caption in &item.captions {
            for &token in &caption.tokens {
                *freq.entry(token).or_insert(0) += 1;
            }
        }
    }
    freq
}

/// Picks `per_pos` keywords per part of speech, spanning the frequency range
/// (at least one from the top and one from the bottom tercile when
/// `per_pos >= 2`). Stop words are excluded; candidates must occur in both
/// the train and test splits so contexts and query sets are nonempty.
pub fn select_keywords(corpus: &Corpus, per_pos: usize, seed: u64) -> Result<Vec<KeywordInfo>> {
    if per_pos == 0 {
        return Ok(Vec::new());
    }
    let freq = word_frequencies(corpus);
    let occurs_in = |token: u32, split: Split| {
        corpus
            .captions_in(split)
            .any(|(_, caption)| caption.contains(token))
    };

    let mut by_pos: BTreeMap<Pos, Vec<(u32, u64)>> = BTreeMap::new();
    for (&token, &count) in &freq {
        let pos = corpus.lexicon.pos_of(token)?;
        if pos == Pos::Stopword {
            continue;
        }
        if !occurs_in(token, Split::Train) || !occurs_in(token, Split::Test) {
            continue;
        }
        by_pos.entry(pos).or_default().push((token, count));
    }

    let mut stream = rng::stream(seed, "sampling");
    let mut selected = Vec::new();
    for pos in [Pos::Noun, Pos::Verb, Pos::Adjective] {
        let mut group = by_pos.remove(&pos).unwrap_or_default();
        if group.len() < per_pos {
            return Err(Error::Config(format!(
                "need {per_pos} usable {pos:?} words, found {}",
                group.len()
            )));
        }
        // Frequency-descending with word tiebreak for a stable tercile split.
        group.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| corpus.lexicon.words[a.0 as usize].cmp(&corpus.lexicon.words[b.0 as usize]))
        });
        let tercile = group.len().div_ceil(3);
        let mut picked: Vec<usize> = Vec::new();
        picked.push(stream.random_range(0..tercile));
        if per_pos >= 2 {
            picked.push(stream.random_range(group.len() - tercile..group.len()));
        }
        let mut rest: Vec<usize> = (0..group.len()).filter(|i| !picked.contains(i)).collect();
        rest.shuffle(&mut stream);
        picked.extend(rest.into_iter().take(per_pos.saturating_sub(picked.len())));
        picked.sort_unstable();
        for idx in picked {
            let (token, count) = group[idx];
            selected.push(KeywordInfo {
                word: corpus.lexicon.words[token as usize].clone(),
                pos,
                frequency: count,
            });
        }
    }
    Ok(selected)
}

/// Manifest document persisted alongside the PPM images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub flavor: Flavor,
    pub seed: u64,
    pub image_size: usize,
    pub vocab: Vec<String>,
    pub pos: Vec<Pos>,
    pub items: Vec<ManifestItem>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: u32,
    pub split: Split,
    pub scene: SceneSpec,
    pub captions: Vec<Caption>,
}

pub fn image_file_name(id: u32) -> String {
    format!("img-{id:04}.ppm")
}

/// Writes `manifest.json` plus one PPM per image under `dir/images/`.
pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let manifest = CorpusManifest {
        flavor: corpus.flavor,
        seed: corpus.seed,
        image_size: corpus.image_size,
        vocab: corpus.lexicon.words.clone(),
        pos: corpus.lexicon.pos.clone(),
        items: corpus
            .items
            .iter()
            .map(|it| ManifestItem {
                id: it.id,
                split: it.split,
                scene: it.scene.clone(),
                captions: it.captions.clone(),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    for item in &corpus.items {
        ppm::write_file(&images_dir.join(image_file_name(item.id)), &item.image)?;
    }
    Ok(())
}

/// Loads a corpus saved by [`save_corpus`]; images come back quantized to
/// the byte grid.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join("manifest.json");
    let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&json).map_err(|e| Error::Format(format!("manifest parse: {e}")))?;
    let lexicon = Lexicon::build();
    if manifest.vocab != lexicon.words || manifest.pos != lexicon.pos {
        return Err(Error::Config(
            "corpus manifest vocabulary does not match this build's lexicon".into(),
        ));
    }
    let mut items = Vec::with_capacity(manifest.items.len());
    for entry in manifest.items {
        let image = ppm::read_file(&dir.join("images").join(image_file_name(entry.id)))?;
        items.push(CorpusItem {
            id: entry.id,
            split: entry.split,
            scene: entry.scene,
            image,
            captions: entry.captions,
        });
    }
    Ok(Corpus {
        flavor: manifest.flavor,
        seed: manifest.seed,
        image_size: manifest.image_size,
        items,
        lexicon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn world(flavor: Flavor) -> WorldParams {
        WorldParams::new(64, flavor, 0.1)
    }

    fn small_corpus() -> Corpus {
        generate_corpus(1, 30, 5, 10, &world(Flavor::Alpha)).unwrap()
    }

    #[test]
    fn same_seed_gives_identical_corpora() {
        let a = generate_corpus(1, 10, 2, 3, &world(Flavor::Alpha)).unwrap();
        let b = generate_corpus(1, 10, 2, 3, &world(Flavor::Alpha)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn counts_match_requested_sizes() {
        let corpus = generate_corpus(1, 200, 20, 50, &world(Flavor::Alpha)).unwrap();
        assert_eq!(corpus.items.len(), 270);
        let captions: usize = corpus.items.iter().map(|it| it.captions.len()).sum();
        assert_eq!(captions, 1350);
        assert_eq!(corpus.items_in(Split::Train).count(), 200);
        assert_eq!(corpus.items_in(Split::Val).count(), 20);
        assert_eq!(corpus.items_in(Split::Test).count(), 50);
    }

    #[test]
    fn splits_are_disjoint_by_id() {
        let corpus = small_corpus();
        let mut seen = std::collections::BTreeSet::new();
        for item in &corpus.items {
            assert!(seen.insert(item.id));
        }
    }

    #[test]
    fn captions_are_truthful_and_well_formed() {
        let corpus = small_corpus();
        let lex = &corpus.lexicon;
        for item in &corpus.items {
            let scene_colors: Vec<u32> = item.scene.objects.iter().map(|o| o.color).collect();
            let scene_shapes: Vec<u32> = item.scene.objects.iter().map(|o| o.shape).collect();
            let scene_verbs: Vec<u32> = item.scene.objects.iter().map(|o| o.motion).collect();
            for caption in &item.captions {
                assert!(caption.tokens.len() >= 4 && caption.tokens.len() <= 12);
                let mut mentions_pair = false;
                for &tok in &caption.tokens {
                    if lex.color_index(tok).is_some() {
                        assert!(scene_colors.contains(&tok), "untruthful color");
                    }
                    if lex.shape_index(tok).is_some() {
                        assert!(scene_shapes.contains(&tok), "untruthful shape");
                    }
                    if lex.verb_index(tok).is_some() {
                        assert!(scene_verbs.contains(&tok), "untruthful verb");
                    }
                }
                for obj in &item.scene.objects {
                    if caption.contains(obj.color) && caption.contains(obj.shape) {
                        mentions_pair = true;
                    }
                }
                assert!(mentions_pair, "caption mentions no color+shape pair");
            }
        }
    }

    #[test]
    fn frequencies_match_independent_recount() {
        let corpus = small_corpus();
        let mut recount: HashMap<u32, u64> = HashMap::new();
        for item in &corpus.items {
            for caption in &item.captions {
                for &tok in &caption.tokens {
                    *recount.entry(tok).or_insert(0) += 1;
                }
            }
        }
        let freq = word_frequencies(&corpus);
        assert_eq!(freq.len(), recount.len());
        for (tok, count) in recount {
            assert_eq!(freq[&tok], count);
        }
    }

    #[test]
    fn select_keywords_returns_24_at_8_per_pos() {
        let corpus = generate_corpus(1, 200, 20, 50, &world(Flavor::Alpha)).unwrap();
        let keywords = select_keywords(&corpus, 8, 7).unwrap();
        assert_eq!(keywords.len(), 24);
        for pos in [Pos::Noun, Pos::Verb, Pos::Adjective] {
            assert_eq!(keywords.iter().filter(|k| k.pos == pos).count(), 8);
        }
        // Every keyword must appear in at least one test-split caption.
        for kw in &keywords {
            let token = corpus.token(&kw.word).unwrap();
            assert!(corpus
                .captions_in(Split::Test)
                .any(|(_, c)| c.contains(token)));
            assert_ne!(corpus.lexicon.pos_of(token).unwrap(), Pos::Stopword);
        }
    }

    #[test]
    fn select_keywords_zero_is_empty_and_reported_freqs_recount() {
        let corpus = small_corpus();
        assert!(select_keywords(&corpus, 0, 7).unwrap().is_empty());
        let keywords = select_keywords(&corpus, 2, 7).unwrap();
        let freq = word_frequencies(&corpus);
        for kw in keywords {
            let token = corpus.token(&kw.word).unwrap();
            assert_eq!(kw.frequency, freq[&token]);
        }
    }

    #[test]
    fn select_keywords_spans_terciles() {
        let corpus = generate_corpus(3, 120, 10, 30, &world(Flavor::Beta)).unwrap();
        let keywords = select_keywords(&corpus, 3, 11).unwrap();
        let freq = word_frequencies(&corpus);
        for pos in [Pos::Noun, Pos::Verb, Pos::Adjective] {
            // Candidate pool for this POS, frequency-descending.
            let mut pool: Vec<u64> = freq
                .iter()
                .filter(|(t, _)| corpus.lexicon.pos_of(**t).unwrap() == pos)
                .map(|(_, &c)| c)
                .collect();
            pool.sort_unstable_by(|a, b| b.cmp(a));
            let tercile = pool.len().div_ceil(3);
            let top_floor = pool[tercile - 1];
            let bottom_ceil = pool[pool.len() - tercile];
            let chosen: Vec<u64> = keywords
                .iter()
                .filter(|k| k.pos == pos)
                .map(|k| k.frequency)
                .collect();
            assert!(chosen.iter().any(|&f| f >= top_floor), "no top-tercile pick");
            assert!(chosen.iter().any(|&f| f <= bottom_ceil), "no bottom-tercile pick");
        }
    }

    #[test]
    fn insufficient_vocabulary_is_a_config_error() {
        let corpus = small_corpus();
        assert!(matches!(
            select_keywords(&corpus, 100, 7),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn corpus_round_trips_through_disk() {
        let corpus = generate_corpus(5, 4, 2, 2, &world(Flavor::Beta)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(dir.path(), &corpus).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(loaded.flavor, corpus.flavor);
        assert_eq!(loaded.items.len(), corpus.items.len());
        for (a, b) in corpus.items.iter().zip(loaded.items.iter()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.captions, b.captions);
            assert_eq!(a.scene, b.scene);
            // Images go through byte quantization on disk.
            for (&x, &y) in a.image.data().iter().zip(b.image.data().iter()) {
                assert!((x - y).abs() <= 0.5);
            }
        }
    }
}
