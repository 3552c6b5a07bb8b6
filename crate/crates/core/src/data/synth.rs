//! Synthetic retrieval data with a known answer key.
//!
//! Each pair owns a few unique topic words. Its query mentions some of them
//! and its positive passage mentions all of them, both padded with words
//! from a shared filler pool, so a model can only match pairs by learning
//! the topic words.

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::{CorpusDoc, PairRecord};
use crate::seed;

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "be", "du", "fi", "go", "ha", "je", "pu", "ze",
];

const FILLER: [&str; 24] = [
    "the", "of", "and", "a", "to", "in", "is", "for", "on", "with", "as", "by", "at", "from", "about", "this", "that",
    "which", "more", "some", "how", "what", "notes", "info",
];

/// Pronounceable word number `i`, unique for every `i`.
pub fn topic_word(mut i: usize) -> String {
    let mut w = String::new();
    for _ in 0..3 {
        w.push_str(SYLLABLES[i % 16]);
        i /= 16;
    }
    while i > 0 {
        w.push_str(SYLLABLES[i % 16]);
        i /= 16;
    }
    w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub pairs: usize,
    pub datasets: usize,
    pub topic_words: usize,
    pub query_topic_words: usize,
    pub filler_words: usize,
    /// Extra corpus documents that match no query.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pairs: 100,
            datasets: 1,
            topic_words: 3,
            query_topic_words: 2,
            filler_words: 4,
            distractors: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSet {
    pub pairs: Vec<PairRecord>,
    /// Positives as documents `d{i}`, then distractors `x{j}`.
    pub corpus: Vec<CorpusDoc>,
    /// `(query id, text)` with query `q{i}` relevant to document `d{i}`.
    pub queries: Vec<(String, String)>,
    pub qrels: Vec<(String, String, u32)>,
}

pub fn generate(cfg: &SynthConfig) -> SynthSet {
    let mut rng = seed::rng(cfg.seed, &[7]);
    let mut fill =
        |n: usize| -> Vec<&'static str> { (0..n).map(|_| *FILLER.choose(&mut rng).expect("filler")).collect() };
    let k = cfg.topic_words.max(1);
    let mut set = SynthSet {
        pairs: Vec::with_capacity(cfg.pairs),
        corpus: Vec::with_capacity(cfg.pairs + cfg.distractors),
        queries: Vec::with_capacity(cfg.pairs),
        qrels: Vec::with_capacity(cfg.pairs),
    };
    for i in 0..cfg.pairs {
        let topics: Vec<String> = (0..k).map(|j| topic_word(i * k + j)).collect();
        let mut q: Vec<String> = fill(2).into_iter().map(String::from).collect();
        q.extend(topics.iter().take(cfg.query_topic_words.clamp(1, k)).cloned());
        let mut p: Vec<String> = topics.clone();
        p.extend(fill(cfg.filler_words).into_iter().map(String::from));
        let query = q.join(" ");
        let positive = p.join(" ");
        set.pairs.push(PairRecord {
            query: query.clone(),
            positive: positive.clone(),
            negatives: vec![],
            dataset: format!("set{}", i % cfg.datasets.max(1)),
        });
        set.corpus.push(CorpusDoc {
            id: format!("d{i}"),
            text: positive,
        });
        set.queries.push((format!("q{i}"), query));
        set.qrels.push((format!("q{i}"), format!("d{i}"), 1));
    }
    for j in 0..cfg.distractors {
        let mut words: Vec<String> = (0..k).map(|t| topic_word((cfg.pairs + j) * k + t)).collect();
        words.extend(fill(cfg.filler_words).into_iter().map(String::from));
        set.corpus.push(CorpusDoc {
            id: format!("x{j}"),
            text: words.join(" "),
        });
    }
    set
}
