//! Fixed vocabulary and part-of-speech lexicon of the synthetic world.
//!
//! Every caption token comes from this table: 8 shape nouns, 8 color
//! adjectives, 8 motion verbs and 12 stopwords. The POS map is total over
//! the vocabulary, replacing a statistical tagger.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STOPWORDS: [&str; 12] = [
    "a", "the", "is", "and", "there", "near", "on", "in", "with", "by", "its", "some",
];

pub const COLORS: [&str; 8] = [
    "red", "blue", "green", "yellow", "purple", "orange", "teal", "pink",
];

/// Mid-luminance, hue-differentiated palette: colors separate mostly in
/// chroma rather than brightness.
pub const COLOR_RGB: [[f64; 3]; 8] = [
    [225.0, 60.0, 55.0],  // red
    [60.0, 85.0, 225.0],  // blue
    [55.0, 195.0, 75.0],  // green
    [185.0, 175.0, 45.0], // yellow
    [165.0, 70.0, 205.0], // purple
    [215.0, 130.0, 40.0], // orange
    [50.0, 175.0, 170.0], // teal
    [220.0, 105.0, 150.0],// pink
];

pub const SHAPES: [&str; 8] = [
    "square", "circle", "triangle", "diamond", "cross", "ring", "star", "bar",
];

pub const VERBS: [&str; 8] = [
    "spinning", "glowing", "falling", "rising", "drifting", "shaking", "fading", "blinking",
];

/// Part of speech of a vocabulary word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pos {
    Noun,
    Verb,
    Adjective,
    Stopword,
}

/// Token table: ids are assigned in declaration order
/// (stopwords, colors, shapes, verbs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub words: Vec<String>,
    pub pos: Vec<Pos>,
}

impl Lexicon {
    pub fn build() -> Lexicon {
        let mut words = Vec::new();
        let mut pos = Vec::new();
        for w in STOPWORDS {
            words.push(w.to_string());
            pos.push(Pos::Stopword);
        }
        for w in COLORS {
            words.push(w.to_string());
            pos.push(Pos::Adjective);
        }
        for w in SHAPES {
            words.push(w.to_string());
            pos.push(Pos::Noun);
        }
        for w in VERBS {
            words.push(w.to_string());
            pos.push(Pos::Verb);
        }
        Lexicon { words, pos }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.words.iter().position(|w| w == word).map(|i| i as u32)
    }

    pub fn word(&self, id: u32) -> Result<&str> {
        self.words
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocabulary(format!("token id {id} out of range")))
    }

    pub fn pos_of(&self, id: u32) -> Result<Pos> {
        self.pos
            .get(id as usize)
            .copied()
            .ok_or_else(|| Error::Vocabulary(format!("token id {id} out of range")))
    }

    /// Token ids of the color block; index order matches [`COLOR_RGB`].
    pub fn color_id(&self, color_index: usize) -> u32 {
        (STOPWORDS.len() + color_index) as u32
    }

    pub fn shape_id(&self, shape_index: usize) -> u32 {
        (STOPWORDS.len() + COLORS.len() + shape_index) as u32
    }

    pub fn verb_id(&self, verb_index: usize) -> u32 {
        (STOPWORDS.len() + COLORS.len() + SHAPES.len() + verb_index) as u32
    }

    pub fn stopword_id(&self, word: &str) -> u32 {
        STOPWORDS
            .iter()
            .position(|&w| w == word)
            .unwrap_or_else(|| panic!("not a stopword: {word}")) as u32
    }

    /// Index into the color/shape/verb tables from a token id, if the token
    /// belongs to that block.
    pub fn color_index(&self, id: u32) -> Option<usize> {
        let base = STOPWORDS.len() as u32;
        (base..base + COLORS.len() as u32)
            .contains(&id)
            .then(|| (id - base) as usize)
    }

    pub fn shape_index(&self, id: u32) -> Option<usize> {
        let base = (STOPWORDS.len() + COLORS.len()) as u32;
        (base..base + SHAPES.len() as u32)
            .contains(&id)
            .then(|| (id - base) as usize)
    }

    pub fn verb_index(&self, id: u32) -> Option<usize> {
        let base = (STOPWORDS.len() + COLORS.len() + SHAPES.len()) as u32;
        (base..base + VERBS.len() as u32)
            .contains(&id)
            .then(|| (id - base) as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicon_is_total_and_consistent() {
        let lex = Lexicon::build();
        assert_eq!(lex.len(), 12 + 8 + 8 + 8);
        assert_eq!(lex.pos.len(), lex.words.len());
        for (i, word) in lex.words.iter().enumerate() {
            assert_eq!(lex.id(word), Some(i as u32));
        }
        assert_eq!(lex.pos_of(lex.id("square").unwrap()).unwrap(), Pos::Noun);
        assert_eq!(lex.pos_of(lex.id("red").unwrap()).unwrap(), Pos::Adjective);
        assert_eq!(lex.pos_of(lex.id("spinning").unwrap()).unwrap(), Pos::Verb);
        assert_eq!(lex.pos_of(lex.id("the").unwrap()).unwrap(), Pos::Stopword);
    }

    #[test]
    fn block_id_helpers_line_up() {
        let lex = Lexicon::build();
        assert_eq!(lex.word(lex.color_id(0)).unwrap(), "red");
        assert_eq!(lex.word(lex.shape_id(7)).unwrap(), "bar");
        assert_eq!(lex.word(lex.verb_id(1)).unwrap(), "glowing");
        assert_eq!(lex.color_index(lex.color_id(3)), Some(3));
        assert_eq!(lex.shape_index(lex.color_id(3)), None);
    }
}
