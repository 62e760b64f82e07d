//! Random dependency trees and small labeled corpora for tests and demos.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::ingest::{Dataset, DepSentence};
use crate::numerics::{rng_from_seed, Rng};

const FILLER: &[&str] = &[
    "the", "a", "film", "movie", "story", "plot", "cast", "is", "was", "quite", "very", "and",
    "but", "with", "its", "of", "this", "that", "an", "ending", "script", "scene", "at", "times",
];

const CUES: &[&[&str]] = &[
    &["dull", "tedious", "awful", "bland", "lifeless"],
    &["moving", "sharp", "gorgeous", "witty", "tender"],
    &["uneven", "odd", "modest", "familiar", "slight"],
    &["stunning", "superb", "brilliant", "masterful", "radiant"],
    &["dreadful", "painful", "inept", "hollow", "grating"],
    &["curious", "quiet", "plain", "standard", "routine"],
];

/// Heads of a uniformly grown random tree with a single root: words are
/// visited in random order and each attaches to an already placed word.
pub fn random_heads(rng: &mut Rng, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=len).collect();
    order.shuffle(rng);
    let mut heads = vec![0; len];
    for k in 1..order.len() {
        heads[order[k] - 1] = order[rng.random_range(0..k)];
    }
    heads
}

/// Random heads where any word may be a root (a forest under ROOT).
pub fn random_forest_heads(rng: &mut Rng, len: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (1..=len).collect();
    order.shuffle(rng);
    let mut heads = vec![0; len];
    for k in 1..order.len() {
        let pick = rng.random_range(0..=k);
        heads[order[k] - 1] = if pick == k { 0 } else { order[pick] };
    }
    heads
}

pub fn random_sentence(rng: &mut Rng, id: impl Into<String>, len: usize) -> DepSentence {
    let forms: Vec<&str> = (0..len)
        .map(|_| FILLER[rng.random_range(0..FILLER.len())])
        .collect();
    let heads = random_heads(rng, len);
    DepSentence::from_heads(id, &forms, &heads)
}

/// `n` sentences of 4–`max_len` words over up to six classes. Each sentence
/// carries one or two cue words of its class among filler words, on a random
/// tree. Labels cycle through the classes.
pub fn cue_corpus(n: usize, classes: usize, max_len: usize, seed: u64) -> Dataset {
    assert!((2..=CUES.len()).contains(&classes) && max_len >= 4);
    let mut rng = rng_from_seed(seed);
    let mut sentences = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let len = rng.random_range(4..=max_len);
        let mut forms: Vec<&str> = (0..len)
            .map(|_| FILLER[rng.random_range(0..FILLER.len())])
            .collect();
        let cues = if len > 5 { 2 } else { 1 };
        for _ in 0..cues {
            let at = rng.random_range(0..len);
            forms[at] = CUES[label][rng.random_range(0..CUES[label].len())];
        }
        let heads = random_heads(&mut rng, len);
        sentences
            .push(DepSentence::from_heads(format!("syn{i:05}"), &forms, &heads).with_label(label));
    }
    let mut dataset = Dataset {
        sentences,
        label_names: (0..classes).map(|c| format!("c{c}")).collect(),
        ..Dataset::default()
    };
    for s in &dataset.sentences {
        for t in &s.tokens {
            *dataset
                .vocab_counts
                .entry(t.form.to_lowercase())
                .or_insert(0) += 1;
        }
    }
    dataset
}
