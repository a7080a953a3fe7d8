//! Shared generators for the integration suites.
#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Pronounceable pseudo-words, distinct by construction.
pub fn vocabulary(n: usize) -> Vec<String> {
    const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    (0..n)
        .map(|mut i| {
            let mut w = String::new();
            loop {
                w.push_str(ONSETS[i % 12]);
                i /= 12;
                w.push_str(VOWELS[i % 5]);
                i /= 5;
                if i == 0 {
                    break;
                }
                i -= 1;
            }
            w
        })
        .collect()
}

pub fn sentence(rng: &mut impl Rng, vocab: &[String]) -> String {
    let len = rng.random_range(6..=18);
    let words: Vec<&str> = (0..len).map(|_| vocab.choose(rng).unwrap().as_str()).collect();
    format!("{} .", words.join(" "))
}

/// Files of whole sentences. A fraction `repeated` of the sentences is
/// drawn from a fixed pool of `pool` distinct sentences, the rest are fresh.
pub fn sentence_corpus(
    seed: u64,
    target_bytes: usize,
    files: usize,
    pool: usize,
    repeated: f64,
) -> Vec<(String, String)> {
    let mut r = rng(seed);
    let vocab = vocabulary(5000);
    let sentences: Vec<String> = (0..pool).map(|_| sentence(&mut r, &vocab)).collect();
    let per_file = target_bytes / files;
    (0..files)
        .map(|f| {
            let mut text = String::with_capacity(per_file + 256);
            while text.len() < per_file {
                if r.random_bool(repeated) {
                    text.push_str(sentences.choose(&mut r).unwrap());
                } else {
                    text.push_str(&sentence(&mut r, &vocab));
                }
                text.push('\n');
            }
            (format!("doc{f:04}.txt"), text)
        })
        .collect()
}

/// Small corpora for oracle fuzzing: up to `max_files` files over a
/// vocabulary of at most `max_vocab` words, with phrase-level repetition so
/// grammars have depth. Empty files are allowed.
pub fn fuzz_corpus(rng: &mut impl Rng, max_files: usize, max_tokens: usize, max_vocab: usize) -> Vec<(String, String)> {
    let vocab = vocabulary(rng.random_range(1..=max_vocab));
    let files = rng.random_range(1..=max_files);
    let phrases: Vec<Vec<&str>> = (0..rng.random_range(1..8))
        .map(|_| (0..rng.random_range(1..12)).map(|_| vocab.choose(rng).unwrap().as_str()).collect())
        .collect();
    let budget = rng.random_range(1..=max_tokens);
    let mut out: Vec<(String, String)> = Vec::with_capacity(files);
    for f in 0..files {
        let len = if rng.random_bool(0.1) { 0 } else { rng.random_range(0..=budget / files + 1) };
        let mut words: Vec<&str> = Vec::with_capacity(len);
        while words.len() < len {
            if rng.random_bool(0.6) {
                words.extend(phrases.choose(rng).unwrap());
            } else {
                words.push(vocab.choose(rng).unwrap());
            }
        }
        words.truncate(len);
        out.push((format!("f{f}"), words.join(" ")));
    }
    if out.iter().all(|(_, t)| t.is_empty()) {
        out[0].1 = vocab[0].clone();
    }
    out
}

/// A passage of `pool` distinct sentences repeated verbatim until the corpus
/// reaches `target_bytes`, cut into `files` files at sentence boundaries.
pub fn repeated_passage_corpus(seed: u64, target_bytes: usize, files: usize, pool: usize) -> Vec<(String, String)> {
    let mut r = rng(seed);
    let vocab = vocabulary(5000);
    let passage: Vec<String> = (0..pool).map(|_| sentence(&mut r, &vocab)).collect();
    let per_file = target_bytes / files;
    let mut next = 0usize;
    (0..files)
        .map(|f| {
            let mut text = String::with_capacity(per_file + 256);
            while text.len() < per_file {
                text.push_str(&passage[next % pool]);
                text.push('\n');
                next += 1;
            }
            (format!("doc{f:04}.txt"), text)
        })
        .collect()
}
