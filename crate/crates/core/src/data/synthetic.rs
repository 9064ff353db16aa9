//! Deterministic synthetic corpora and tasks built on one small lexicon.
//!
//! Sentences follow `det adj noun verb det noun [prep det noun] .` where
//! adjectives, verbs and prepositions agree with the class of the noun they
//! attach to, so masked tokens are predictable from context.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::corpus::{ClassificationExample, TaggingExample};
use crate::seed::{self, Stream};

const DETS: [&str; 5] = ["the", "a", "every", "some", "this"];
const NOUNS: [[&str; 5]; 4] = [
    ["river", "lake", "stream", "harbor", "canal"],
    ["falcon", "sparrow", "heron", "raven", "finch"],
    ["engine", "lever", "piston", "gear", "valve"],
    ["poem", "story", "ballad", "verse", "fable"],
];
const ADJS: [[&str; 3]; 4] = [
    ["calm", "deep", "muddy"],
    ["swift", "feathered", "noisy"],
    ["rusty", "oiled", "heavy"],
    ["lyrical", "ancient", "tragic"],
];
const VERBS: [[&str; 3]; 4] = [
    ["floods", "drains", "carries"],
    ["chases", "circles", "watches"],
    ["drives", "grinds", "lifts"],
    ["inspires", "haunts", "recalls"],
];
const PREPS: [&str; 4] = ["beside", "above", "inside", "within"];

/// Adjectives marking the positive class of the classification task.
pub const KEYWORDS: [&str; 4] = ["brilliant", "splendid", "superb", "marvelous"];
/// Adjectives that fill the same slot in negative examples.
pub const DISTRACTORS: [&str; 4] = ["plain", "ordinary", "dull", "modest"];
const ENTITY_FIRST: [&str; 6] = ["zorvan", "kelith", "amaro", "tesk", "vireo", "pandu"];
const ENTITY_SECOND: [&str; 4] = ["holt", "maris", "quen", "dabro"];

pub const POSITIVE_LABEL: &str = "pos";
pub const NEGATIVE_LABEL: &str = "neg";
pub const ENTITY_BEGIN: &str = "B-ENT";
pub const ENTITY_INSIDE: &str = "I-ENT";
pub const OUTSIDE: &str = "O";

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).copied().expect("non-empty word list")
}

/// Token and tag sequence of one sentence.
struct Sentence {
    tokens: Vec<&'static str>,
    tags: Vec<&'static str>,
}

impl Sentence {
    fn push(&mut self, tok: &'static str) {
        self.tokens.push(tok);
        self.tags.push(OUTSIDE);
    }

    fn noun_phrase(&mut self, rng: &mut ChaCha8Rng, class: usize, adj: Option<&'static str>, entity_p: f64) {
        if rng.random::<f64>() < entity_p {
            self.tokens.push(pick(rng, &ENTITY_FIRST));
            self.tags.push(ENTITY_BEGIN);
            if rng.random::<bool>() {
                self.tokens.push(pick(rng, &ENTITY_SECOND));
                self.tags.push(ENTITY_INSIDE);
            }
            return;
        }
        self.push(pick(rng, &DETS));
        self.push(adj.unwrap_or_else(|| pick(rng, &ADJS[class])));
        self.push(pick(rng, &NOUNS[class]));
    }
}

fn sentence(rng: &mut ChaCha8Rng, subject_adj: Option<&'static str>, entity_p: f64) -> Sentence {
    let mut s = Sentence { tokens: Vec::new(), tags: Vec::new() };
    let subj = rng.random_range(0..4);
    s.noun_phrase(rng, subj, subject_adj, entity_p);
    s.push(pick(rng, &VERBS[subj]));
    let obj = (subj + 1 + rng.random_range(0..3)) % 4;
    s.noun_phrase(rng, obj, None, entity_p);
    if rng.random::<bool>() {
        let place = rng.random_range(0..4);
        s.push(PREPS[place]);
        s.noun_phrase(rng, place, None, entity_p);
    }
    s.push(".");
    s
}

/// `n_docs` documents of `min_sentences..=max_sentences` sentences each.
/// Keywords, distractors and entities occur occasionally so the task
/// vocabulary is covered.
pub fn synthetic_corpus(seed: u64, n_docs: usize, min_sentences: usize, max_sentences: usize) -> Vec<String> {
    let mut rng = seed::rng(seed, Stream::Synthetic, 0);
    let max_sentences = max_sentences.max(min_sentences).max(1);
    (0..n_docs)
        .map(|_| {
            let n = rng.random_range(min_sentences.max(1)..=max_sentences);
            let mut words = Vec::new();
            for _ in 0..n {
                let adj = match rng.random_range(0..10) {
                    0 => Some(pick(&mut rng, &KEYWORDS)),
                    1 => Some(pick(&mut rng, &DISTRACTORS)),
                    _ => None,
                };
                words.extend(sentence(&mut rng, adj, 0.1).tokens);
            }
            words.join(" ")
        })
        .collect()
}

/// Balanced keyword-presence task: the subject adjective is a keyword in
/// positive examples and a distractor in negative ones.
pub fn synthetic_classification(seed: u64, n: usize) -> Vec<ClassificationExample> {
    let mut rng = seed::rng(seed, Stream::Synthetic, 1);
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let adj = pick(&mut rng, if positive { &KEYWORDS } else { &DISTRACTORS });
            let s = sentence(&mut rng, Some(adj), 0.0);
            let label = if positive { POSITIVE_LABEL } else { NEGATIVE_LABEL };
            ClassificationExample { text: s.tokens.join(" "), label: label.to_string() }
        })
        .collect()
}

/// BIO entity tagging over the planted name sublexicon.
pub fn synthetic_tagging(seed: u64, n: usize) -> Vec<TaggingExample> {
    let mut rng = seed::rng(seed, Stream::Synthetic, 2);
    (0..n)
        .map(|_| {
            let s = sentence(&mut rng, None, 0.4);
            TaggingExample {
                tokens: s.tokens.iter().map(|t| t.to_string()).collect(),
                tags: s.tags.iter().map(|t| t.to_string()).collect(),
            }
        })
        .collect()
}
