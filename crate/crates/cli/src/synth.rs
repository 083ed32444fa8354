//! Synthetic parallel corpus with known provider quality ordering.
//!
//! Every segment has a hidden reference. On "easy" segments all providers
//! return the reference verbatim; on the rest provider `i` corrupts each
//! reference token with probability `0.1 + 0.1·i` (capped at 0.9) by a
//! substitution, deletion or insertion. Hypotheses are stored in a shuffled
//! order so that list position carries no signal.

use std::collections::HashSet;

use mtloop_core::corpus::{CorpusEntry, CorpusHypothesis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ren", "to", "sa", "vel", "qu", "an", "dor", "pi", "se", "mun", "tra", "el", "no",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub segments: usize,
    pub providers: usize,
    /// Share of segments where every provider outputs the reference.
    pub easy_fraction: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            segments: 500,
            providers: 5,
            easy_fraction: 0.5,
            min_tokens: 6,
            max_tokens: 14,
        }
    }
}

/// Per-token corruption probability of provider `i`.
pub fn edit_probability(i: usize) -> f64 {
    (0.1 + 0.1 * i as f64).min(0.9)
}

pub fn provider_id(i: usize) -> String {
    format!("mt-{i}")
}

fn vocabulary(rng: &mut ChaCha8Rng, size: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    while seen.len() < size {
        let n = rng.random_range(1..=3);
        let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        seen.insert(w);
    }
    let mut v: Vec<String> = seen.into_iter().collect();
    v.sort();
    v
}

fn corrupt(rng: &mut ChaCha8Rng, reference: &[&str], vocab: &[String], p: f64) -> String {
    let mut out: Vec<&str> = Vec::with_capacity(reference.len() + 2);
    for tok in reference {
        if !rng.random_bool(p) {
            out.push(tok);
            continue;
        }
        match rng.random_range(0..3) {
            0 => out.push(vocab.choose(rng).unwrap()),
            1 => {}
            _ => {
                out.push(tok);
                out.push(vocab.choose(rng).unwrap());
            }
        }
    }
    if out.is_empty() {
        out.push(vocab.choose(rng).unwrap());
    }
    out.join(" ")
}

/// Deterministic corpus for `seed`. Source sentences are unique.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Vec<CorpusEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let src_vocab = vocabulary(&mut rng, 400);
    let tgt_vocab = vocabulary(&mut rng, 400);
    let mut sources = HashSet::new();
    let mut out = Vec::with_capacity(cfg.segments);
    while out.len() < cfg.segments {
        let len = rng.random_range(cfg.min_tokens..=cfg.max_tokens.max(cfg.min_tokens));
        let source: Vec<&str> = (0..len).map(|_| src_vocab.choose(&mut rng).unwrap().as_str()).collect();
        let source = source.join(" ");
        if !sources.insert(source.clone()) {
            continue;
        }
        let reference: Vec<&str> = (0..len).map(|_| tgt_vocab.choose(&mut rng).unwrap().as_str()).collect();
        let easy = rng.random_bool(cfg.easy_fraction);
        let mut hypotheses: Vec<CorpusHypothesis> = (0..cfg.providers)
            .map(|i| CorpusHypothesis {
                provider_id: provider_id(i),
                text: if easy {
                    reference.join(" ")
                } else {
                    corrupt(&mut rng, &reference, &tgt_vocab, edit_probability(i))
                },
            })
            .collect();
        hypotheses.shuffle(&mut rng);
        out.push(CorpusEntry {
            id: format!("syn-{:04}", out.len()),
            source,
            source_lang: "xx".into(),
            target_lang: "yy".into(),
            reference: reference.join(" "),
            topic: Some(if easy { "easy" } else { "hard" }.into()),
            hypotheses,
        });
    }
    out
}
