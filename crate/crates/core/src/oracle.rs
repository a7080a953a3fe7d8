//! Uncompressed baselines for every kernel.
//!
//! Deliberately plain: every function walks the token lists directly, with no
//! grammar and no memoization. These are ground truth for the compressed
//! path and the `baseline` engine of the benchmark.

use std::collections::{BTreeMap, BTreeSet};

use crate::corpus::Tokenizer;
use crate::result::{AnalyticsResult, Task, TaskParams};
use crate::Error;

/// Tokenizes every file with the same rules as the encoder.
pub fn tokenize_files<T: AsRef<str>>(texts: &[T], tokenizer: Tokenizer) -> Vec<Vec<String>> {
    texts.iter().map(|t| tokenizer.tokenize(t.as_ref())).collect()
}

pub fn per_file_counts(files: &[Vec<String>]) -> Vec<BTreeMap<String, u64>> {
    files
        .iter()
        .map(|f| {
            let mut m = BTreeMap::new();
            for w in f {
                *m.entry(w.clone()).or_default() += 1;
            }
            m
        })
        .collect()
}

pub fn oracle_word_count(files: &[Vec<String>]) -> AnalyticsResult {
    let mut m: BTreeMap<String, u64> = BTreeMap::new();
    for w in files.iter().flatten() {
        *m.entry(w.clone()).or_default() += 1;
    }
    AnalyticsResult::WordCount(m)
}

pub fn oracle_sort(files: &[Vec<String>]) -> AnalyticsResult {
    let mut words: Vec<&String> = files.iter().flatten().collect();
    words.sort();
    let mut out: Vec<(String, u64)> = Vec::new();
    for w in words {
        match out.last_mut() {
            Some((last, c)) if last == w => *c += 1,
            _ => out.push((w.clone(), 1)),
        }
    }
    AnalyticsResult::SortedWords(out)
}

pub fn oracle_inverted_index(files: &[Vec<String>]) -> AnalyticsResult {
    let mut m: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    for (i, f) in files.iter().enumerate() {
        for w in f {
            m.entry(w.clone()).or_default().insert(i as u32);
        }
    }
    AnalyticsResult::InvertedIndex(m.into_iter().map(|(w, s)| (w, s.into_iter().collect())).collect())
}

pub fn oracle_term_vector(files: &[Vec<String>]) -> AnalyticsResult {
    AnalyticsResult::term_vectors(per_file_counts(files))
}

pub fn per_file_sequences(files: &[Vec<String>], l: usize) -> Result<Vec<BTreeMap<Vec<String>, u64>>, Error> {
    if l < 2 {
        return Err(Error::Parameter(format!("sequence length must be at least 2, got {l}")));
    }
    Ok(files
        .iter()
        .map(|f| {
            let mut m = BTreeMap::new();
            for w in f.windows(l) {
                *m.entry(w.to_vec()).or_default() += 1;
            }
            m
        })
        .collect())
}

pub fn oracle_sequence_count(files: &[Vec<String>], l: usize) -> Result<AnalyticsResult, Error> {
    Ok(AnalyticsResult::SequenceCount(per_file_sequences(files, l)?))
}

pub fn oracle_ranked_inverted_index(files: &[Vec<String>], l: usize) -> Result<AnalyticsResult, Error> {
    Ok(AnalyticsResult::ranked(&per_file_sequences(files, l)?))
}

pub fn oracle_tfidf(files: &[Vec<String>]) -> AnalyticsResult {
    let tf = per_file_counts(files);
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for f in files {
        let distinct: BTreeSet<&String> = f.iter().collect();
        for w in distinct {
            *df.entry(w.clone()).or_default() += 1;
        }
    }
    AnalyticsResult::tfidf(&tf, &df)
}

pub fn run(task: Task, params: TaskParams, files: &[Vec<String>]) -> Result<AnalyticsResult, Error> {
    let mut r = match task {
        Task::WordCount => oracle_word_count(files),
        Task::Sort => oracle_sort(files),
        Task::InvertedIndex => oracle_inverted_index(files),
        Task::TermVector => oracle_term_vector(files),
        Task::SequenceCount => oracle_sequence_count(files, params.l)?,
        Task::RankedInvertedIndex => oracle_ranked_inverted_index(files, params.l)?,
        Task::Tfidf => oracle_tfidf(files),
    };
    r.apply_top_k(params.top_k);
    Ok(r)
}
