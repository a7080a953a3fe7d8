//! Decoded analytics results shared by the compressed path and the oracle.
//!
//! Ordering is fixed here so any two engines that agree on the numbers also
//! agree byte-for-byte on the rendered output.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    WordCount,
    Sort,
    InvertedIndex,
    TermVector,
    SequenceCount,
    RankedInvertedIndex,
    Tfidf,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::WordCount,
        Task::Sort,
        Task::InvertedIndex,
        Task::TermVector,
        Task::SequenceCount,
        Task::RankedInvertedIndex,
        Task::Tfidf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::WordCount => "word-count",
            Task::Sort => "sort",
            Task::InvertedIndex => "inverted-index",
            Task::TermVector => "term-vector",
            Task::SequenceCount => "sequence-count",
            Task::RankedInvertedIndex => "ranked-inverted-index",
            Task::Tfidf => "tfidf",
        }
    }

    /// Needs words in document order (and so uncoarsened ordering is kept
    /// only through element lists, and split files need stitching).
    pub fn is_order_sensitive(self) -> bool {
        matches!(self, Task::SequenceCount | Task::RankedInvertedIndex)
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Task::ALL
            .into_iter()
            .find(|t| t.name() == norm || t.name().replace('-', "") == norm)
            .ok_or_else(|| Error::Parameter(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskParams {
    /// Sequence length for the sequence kernels.
    pub l: usize,
    /// Keep only the first k entries of each term vector / ranked list.
    pub top_k: Option<usize>,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams { l: 3, top_k: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TfidfScore {
    pub word: String,
    pub file: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnalyticsResult {
    WordCount(BTreeMap<String, u64>),
    /// Ascending by word (byte order).
    SortedWords(Vec<(String, u64)>),
    InvertedIndex(BTreeMap<String, Vec<u32>>),
    /// Per file, count descending then word ascending.
    TermVector(Vec<Vec<(String, u64)>>),
    SequenceCount(Vec<BTreeMap<Vec<String>, u64>>),
    /// Per gram, count descending then file ascending.
    RankedInvertedIndex(BTreeMap<Vec<String>, Vec<(u32, u64)>>),
    /// Ordered by word, then file.
    Tfidf(Vec<TfidfScore>),
}

/// `tf · ln(files / df)`.
pub fn tfidf_score(tf: u64, df: usize, files: usize) -> f64 {
    tf as f64 * (files as f64 / df as f64).ln()
}

pub fn sort_term_vector(v: &mut [(String, u64)]) {
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
}

impl AnalyticsResult {
    pub fn task(&self) -> Task {
        match self {
            AnalyticsResult::WordCount(_) => Task::WordCount,
            AnalyticsResult::SortedWords(_) => Task::Sort,
            AnalyticsResult::InvertedIndex(_) => Task::InvertedIndex,
            AnalyticsResult::TermVector(_) => Task::TermVector,
            AnalyticsResult::SequenceCount(_) => Task::SequenceCount,
            AnalyticsResult::RankedInvertedIndex(_) => Task::RankedInvertedIndex,
            AnalyticsResult::Tfidf(_) => Task::Tfidf,
        }
    }

    pub fn sorted(counts: BTreeMap<String, u64>) -> Self {
        AnalyticsResult::SortedWords(counts.into_iter().collect())
    }

    pub fn term_vectors(per_file: Vec<BTreeMap<String, u64>>) -> Self {
        AnalyticsResult::TermVector(
            per_file
                .into_iter()
                .map(|m| {
                    let mut v: Vec<_> = m.into_iter().collect();
                    sort_term_vector(&mut v);
                    v
                })
                .collect(),
        )
    }

    pub fn ranked(per_file: &[BTreeMap<Vec<String>, u64>]) -> Self {
        let mut out: BTreeMap<Vec<String>, Vec<(u32, u64)>> = BTreeMap::new();
        for (file, table) in per_file.iter().enumerate() {
            for (gram, &c) in table {
                out.entry(gram.clone()).or_default().push((file as u32, c));
            }
        }
        for list in out.values_mut() {
            list.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        }
        AnalyticsResult::RankedInvertedIndex(out)
    }

    /// Scores from per-file word counts; DF is the number of files with a
    /// non-zero count.
    pub fn tfidf(per_file: &[BTreeMap<String, u64>], df: &BTreeMap<String, usize>) -> Self {
        let files = per_file.len();
        let mut scores = Vec::new();
        for (word, &d) in df {
            for (file, table) in per_file.iter().enumerate() {
                if let Some(&tf) = table.get(word) {
                    scores.push(TfidfScore { word: word.clone(), file: file as u32, score: tfidf_score(tf, d, files) });
                }
            }
        }
        AnalyticsResult::Tfidf(scores)
    }

    /// Truncates per-file term vectors and per-gram ranked lists.
    pub fn apply_top_k(&mut self, k: Option<usize>) {
        let Some(k) = k else { return };
        match self {
            AnalyticsResult::TermVector(files) => files.iter_mut().for_each(|v| v.truncate(k)),
            AnalyticsResult::RankedInvertedIndex(m) => m.values_mut().for_each(|v| v.truncate(k)),
            _ => {}
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        match self {
            AnalyticsResult::WordCount(m) => {
                for (w, c) in m {
                    let _ = writeln!(s, "{w}\t{c}");
                }
            }
            AnalyticsResult::SortedWords(v) => {
                for (w, c) in v {
                    let _ = writeln!(s, "{w}\t{c}");
                }
            }
            AnalyticsResult::InvertedIndex(m) => {
                for (w, files) in m {
                    let _ = writeln!(s, "{w}\t{}", join(files.iter()));
                }
            }
            AnalyticsResult::TermVector(files) => {
                for (f, v) in files.iter().enumerate() {
                    for (w, c) in v {
                        let _ = writeln!(s, "{f}\t{w}\t{c}");
                    }
                }
            }
            AnalyticsResult::SequenceCount(files) => {
                for (f, t) in files.iter().enumerate() {
                    for (g, c) in t {
                        let _ = writeln!(s, "{f}\t{}\t{c}", g.join("_"));
                    }
                }
            }
            AnalyticsResult::RankedInvertedIndex(m) => {
                for (g, list) in m {
                    let _ = writeln!(s, "{}\t{}", g.join("_"), join(list.iter().map(|(f, c)| format!("{f}:{c}"))));
                }
            }
            AnalyticsResult::Tfidf(v) => {
                for t in v {
                    let _ = writeln!(s, "{}\t{}\t{:.6}", t.word, t.file, t.score);
                }
            }
        }
        s
    }

    pub fn to_json(&self) -> Value {
        let result = match self {
            AnalyticsResult::WordCount(m) => Value::Object(m.iter().map(|(w, c)| (w.clone(), json!(c))).collect()),
            AnalyticsResult::SortedWords(v) => json!(v),
            AnalyticsResult::InvertedIndex(m) => json!(m),
            AnalyticsResult::TermVector(files) => json!(files),
            AnalyticsResult::SequenceCount(files) => Value::Array(
                files
                    .iter()
                    .map(|t| Value::Object(t.iter().map(|(g, c)| (g.join("_"), json!(c))).collect::<Map<_, _>>()))
                    .collect(),
            ),
            AnalyticsResult::RankedInvertedIndex(m) => {
                Value::Object(m.iter().map(|(g, list)| (g.join("_"), json!(list))).collect())
            }
            AnalyticsResult::Tfidf(v) => json!(v),
        };
        json!({ "task": self.task().name(), "result": result })
    }
}

fn join<T: std::fmt::Display>(it: impl Iterator<Item = T>) -> String {
    let mut s = String::new();
    for (i, x) in it.enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|&(w, c)| (w.to_string(), c)).collect()
    }

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert_eq!("wordcount".parse::<Task>().unwrap(), Task::WordCount);
        assert!("grep".parse::<Task>().is_err());
    }

    #[test]
    fn tfidf_by_hand() {
        let files = vec![map(&[("a", 1), ("b", 1)]), map(&[("a", 1), ("c", 1)])];
        let df: BTreeMap<String, usize> = [("a", 2), ("b", 1), ("c", 1)].iter().map(|&(w, d)| (w.into(), d)).collect();
        let AnalyticsResult::Tfidf(s) = AnalyticsResult::tfidf(&files, &df) else { unreachable!() };
        assert_eq!(s.len(), 4);
        assert_eq!(s[0].score, 0.0);
        assert_eq!(s[1].score, 0.0);
        assert!((s[2].score - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!((s[2].word.as_str(), s[2].file), ("b", 0));
        assert!(AnalyticsResult::Tfidf(s).to_tsv().contains("b\t0\t0.693147"));
    }

    #[test]
    fn term_vector_order_and_top_k() {
        let mut r = AnalyticsResult::term_vectors(vec![map(&[("b", 1), ("a", 2), ("c", 1)])]);
        assert_eq!(r.to_tsv(), "0\ta\t2\n0\tb\t1\n0\tc\t1\n");
        r.apply_top_k(Some(1));
        assert_eq!(r.to_tsv(), "0\ta\t2\n");
    }

    #[test]
    fn ranked_order() {
        let g = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        let t0: BTreeMap<_, _> = [(g("a b"), 1)].into_iter().collect();
        let t1: BTreeMap<_, _> = [(g("a b"), 3)].into_iter().collect();
        let r = AnalyticsResult::ranked(&[t0, t1]);
        assert_eq!(r.to_tsv(), "a_b\t1:3,0:1\n");
        assert_eq!(r.to_json()["result"]["a_b"], json!([[1, 3], [0, 1]]));
    }
}
