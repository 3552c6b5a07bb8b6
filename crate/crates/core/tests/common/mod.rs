#![allow(dead_code)]

use embedkit::data::synth::{generate, SynthConfig, SynthSet};
use embedkit::encoder::{EncoderConfig, Pooling, Vocab};

pub fn synth(pairs: usize) -> SynthSet {
    generate(&SynthConfig {
        pairs,
        ..Default::default()
    })
}

pub fn vocab(set: &SynthSet) -> Vocab {
    Vocab::build(
        set.pairs.iter().flat_map(|p| [p.query.as_str(), p.positive.as_str()]),
        4096,
    )
    .unwrap()
}

/// One-layer encoder small enough for many training steps in a test.
pub fn tiny(vocab: &Vocab, pooling: Pooling) -> EncoderConfig {
    EncoderConfig {
        vocab_size: vocab.len(),
        layers: 1,
        hidden: 16,
        intermediate: 32,
        heads: 2,
        max_seq: 24,
        pooling,
        lm_head: true,
    }
}
