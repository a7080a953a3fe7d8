//! Variant selection and coarse-grained parallel execution.
//!
//! A corpus is packed into `n_w` partitions, each compressed into its own
//! grammar over the shared dictionary. Analytics run one worker per
//! partition; partial results are folded in partition order.

use std::collections::BTreeMap;
use std::ops::Range;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::container::{Container, PartitionGrammar, Unit};
use crate::corpus::{encode_corpus, Dictionary, EncodedCorpus, FileEntry, Tokenizer};
use crate::dag::{Dag, DatasetFeatures, DEFAULT_COARSEN_THRESHOLD};
use crate::kernels::{self, SequenceTable, Variant};
use crate::result::{AnalyticsResult, Task, TaskParams};
use crate::sequitur::infer_grammar;
use crate::{Error, Symbol};

pub const WORKERS_ENV: &str = "TADOC_WORKERS";

/// Average file size (tokens) below which postorder wins.
pub const AVG_FILE_SIZE_SPLIT: f64 = 2860.0;
/// File count above which the two-level bitmap wins.
pub const FILE_COUNT_SPLIT: f64 = 800.0;

/// Worker count from `--workers`, else `TADOC_WORKERS`, else the number of
/// available cores.
pub fn resolve_workers(flag: Option<usize>) -> Result<usize, Error> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => {
                v.trim().parse().map_err(|_| Error::Parameter(format!("{WORKERS_ENV}={v:?} is not a worker count")))?
            }
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(Error::Parameter("worker count must be at least 1".into()));
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    AvgFileSize,
    FileCount,
    TotalTokens,
    Vocabulary,
    RuleCount,
}

impl Feature {
    fn of(self, f: &DatasetFeatures) -> f64 {
        match self {
            Feature::AvgFileSize => f.avg_file_size,
            Feature::FileCount => f.file_count as f64,
            Feature::TotalTokens => f.total_tokens as f64,
            Feature::Vocabulary => f.vocabulary as f64,
            Feature::RuleCount => f.rule_count as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: Feature,
    pub op: Cmp,
    pub value: f64,
}

impl Condition {
    fn holds(&self, f: &DatasetFeatures) -> bool {
        let x = self.feature.of(f);
        match self.op {
            Cmp::Lt => x < self.value,
            Cmp::Le => x <= self.value,
            Cmp::Gt => x > self.value,
            Cmp::Ge => x >= self.value,
        }
    }
}

/// A rule fires when all its conditions hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    #[serde(default)]
    pub when: Vec<Condition>,
    pub variant: Variant,
}

/// Ordered rule table; the first matching rule decides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub rules: Vec<DecisionRule>,
}

impl Default for DecisionTree {
    fn default() -> Self {
        let cond = |feature, op, value| Condition { feature, op, value };
        DecisionTree {
            rules: vec![
                DecisionRule {
                    when: vec![cond(Feature::AvgFileSize, Cmp::Lt, AVG_FILE_SIZE_SPLIT)],
                    variant: Variant::Postorder,
                },
                DecisionRule {
                    when: vec![cond(Feature::FileCount, Cmp::Gt, FILE_COUNT_SPLIT)],
                    variant: Variant::PreorderTwoLevel,
                },
                DecisionRule { when: vec![], variant: Variant::PreorderBitmap },
            ],
        }
    }
}

impl DecisionTree {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let t: DecisionTree = serde_json::from_str(text).map_err(|e| Error::Parameter(format!("rule table: {e}")))?;
        if t.rules.is_empty() {
            return Err(Error::Parameter("rule table has no rules".into()));
        }
        Ok(t)
    }

    pub fn decide(&self, f: &DatasetFeatures) -> Variant {
        self.rules.iter().find(|r| r.when.iter().all(|c| c.holds(f))).map_or(Variant::PreorderBitmap, |r| r.variant)
    }
}

/// Variant for `task` under the default tree.
///
/// Kernels with a single traversal ignore the choice.
pub fn select_variant(f: &DatasetFeatures, task: Task) -> Variant {
    select_variant_with(&DecisionTree::default(), f, task)
}

pub fn select_variant_with(tree: &DecisionTree, f: &DatasetFeatures, task: Task) -> Variant {
    let v = tree.decide(f);
    log::info!("variant for {task}: {} (avg file size {:.1}, files {})", v.name(), f.avg_file_size, f.file_count);
    v
}

/// A whole file or one section of a split file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub file: u32,
    pub section: u32,
    /// Token range within the file.
    pub tokens: Range<u64>,
}

impl Piece {
    pub fn len(&self) -> u64 {
        self.tokens.end - self.tokens.start
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    /// Pieces of every partition, in placement order.
    pub partitions: Vec<Vec<Piece>>,
    /// Number of sections per file (1 for whole files).
    pub sections: Vec<u32>,
    pub h_split: f64,
    pub limit: f64,
}

impl PartitionPlan {
    pub fn loads(&self) -> Vec<u64> {
        self.partitions.iter().map(|p| p.iter().map(Piece::len).sum()).collect()
    }

    pub fn is_split(&self, file: u32) -> bool {
        self.sections[file as usize] > 1
    }

    /// Pieces of one file ordered by section number.
    pub fn sections_of(&self, file: u32) -> Vec<&Piece> {
        let mut v: Vec<&Piece> = self.partitions.iter().flatten().filter(|p| p.file == file).collect();
        v.sort_by_key(|p| p.section);
        v
    }
}

fn argmin(loads: &[u64]) -> usize {
    let mut best = 0;
    for (i, &l) in loads.iter().enumerate() {
        if l < loads[best] {
            best = i;
        }
    }
    best
}

fn section_ranges(size: u64, k: u64) -> Vec<Range<u64>> {
    (0..k).map(|i| i * size / k..(i + 1) * size / k).collect()
}

/// Largest-first greedy packing of files (sizes in tokens) into `n_w`
/// partitions.
///
/// A file goes whole onto the least-loaded partition unless it is larger
/// than `h_split = S/(2 n_w)` and doing so would push that partition above
/// `1.25 · S/n_w`; then it is cut into the fewest equal sections whose
/// greedy placement keeps every receiving partition under that limit. Files
/// at or below `h_split` are never split, so such a file can still overrun
/// the limit when every partition is already nearly full; it is then the
/// last piece of the overfull partition.
pub fn plan_partitions(sizes: &[u64], n_w: usize) -> Result<PartitionPlan, Error> {
    if n_w == 0 {
        return Err(Error::Parameter("worker count must be at least 1".into()));
    }
    let total: u64 = sizes.iter().sum();
    let h_split = total as f64 / (2.0 * n_w as f64);
    let limit = total as f64 / n_w as f64 * 1.25;
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(sizes[i]), i));

    let mut loads = vec![0u64; n_w];
    let mut partitions: Vec<Vec<Piece>> = vec![Vec::new(); n_w];
    let mut sections = vec![1u32; sizes.len()];
    for i in order {
        let size = sizes[i];
        let j = argmin(&loads);
        let fits = (loads[j] + size) as f64 <= limit;
        if n_w == 1 || fits || size as f64 <= h_split {
            loads[j] += size;
            partitions[j].push(Piece { file: i as u32, section: 0, tokens: 0..size });
            continue;
        }
        let mut chosen = None;
        for k in 2..=size.max(2) {
            let ranges = section_ranges(size, k);
            let mut trial = loads.clone();
            let mut places = Vec::with_capacity(ranges.len());
            for r in &ranges {
                let t = argmin(&trial);
                trial[t] += r.end - r.start;
                places.push(t);
            }
            if places.iter().all(|&t| trial[t] as f64 <= limit) || k >= size {
                chosen = Some((ranges, places, trial));
                break;
            }
        }
        let (ranges, places, trial) = chosen.expect("a split is always produced");
        sections[i] = ranges.len() as u32;
        for (s, (r, t)) in ranges.into_iter().zip(places).enumerate() {
            partitions[t].push(Piece { file: i as u32, section: s as u32, tokens: r });
        }
        loads = trial;
    }
    partitions.retain(|p| !p.is_empty());
    if partitions.is_empty() {
        partitions.push(Vec::new());
    }
    Ok(PartitionPlan { partitions, sections, h_split, limit })
}

/// Encodes, partitions and compresses a corpus.
pub fn compress_corpus<N, T>(files: &[(N, T)], tokenizer: Tokenizer, n_w: usize) -> Result<Container, Error>
where
    N: AsRef<str> + Sync,
    T: AsRef<str> + Sync,
{
    let (dict, enc) = encode_corpus(files, tokenizer)?;
    compress_encoded(dict, &enc, n_w)
}

pub fn compress_encoded(dict: Dictionary, enc: &EncodedCorpus, n_w: usize) -> Result<Container, Error> {
    let sizes: Vec<u64> = enc.files.iter().map(|f| f.token_count).collect();
    let plan = plan_partitions(&sizes, n_w)?;
    compress_with_plan(dict, enc, &plan)
}

pub fn compress_with_plan(dict: Dictionary, enc: &EncodedCorpus, plan: &PartitionPlan) -> Result<Container, Error> {
    let unit_count: usize = plan.partitions.iter().map(Vec::len).sum();
    let dict = dict.with_separators(u32::try_from(unit_count).map_err(|_| Error::Parameter("too many units".into()))?);
    let space = dict.space();
    let tokens = enc.file_tokens();

    let mut streams = Vec::with_capacity(plan.partitions.len());
    let mut unit_lists = Vec::with_capacity(plan.partitions.len());
    let mut files: Vec<FileEntry> = enc.files.clone();
    let mut unit = 0u32;
    for part in &plan.partitions {
        let len: u64 = part.iter().map(|p| p.len() + 1).sum();
        let mut s: Vec<Symbol> = Vec::with_capacity(len as usize);
        let mut units = Vec::with_capacity(part.len());
        for piece in part {
            let f = piece.file as usize;
            s.extend_from_slice(&tokens[f][piece.tokens.start as usize..piece.tokens.end as usize]);
            let sep = space.separator(unit);
            s.push(sep);
            if piece.section + 1 == plan.sections[f] {
                files[f].separator = sep;
            }
            units.push(Unit { file: piece.file, section: piece.section, token_count: piece.len() });
            unit += 1;
        }
        streams.push(s);
        unit_lists.push(units);
    }

    let grammars: Vec<_> = streams.par_iter().map(|s| infer_grammar(s, space)).collect::<Result<_, _>>()?;
    let partitions =
        grammars.into_iter().zip(unit_lists).map(|(grammar, units)| PartitionGrammar { units, grammar }).collect();
    Ok(Container::new(dict, files, partitions)?)
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    pub workers: usize,
    /// `None` picks from the decision tree.
    pub variant: Option<Variant>,
    pub tree: DecisionTree,
    pub coarsen: Coarsening,
    pub params: TaskParams,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            workers: 1,
            variant: None,
            tree: DecisionTree::default(),
            coarsen: Coarsening::default(),
            params: TaskParams::default(),
        }
    }
}

/// When to apply node coarsening after loading.
///
/// Order-insensitive tasks only need the merged weighted edges every DAG
/// already has; inlining small rules pays off for the sequence kernels,
/// where it keeps more windows inside one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coarsening {
    /// Coarsen with this threshold for order-sensitive tasks only.
    OrderSensitive(usize),
    Always(usize),
    Never,
}

impl Default for Coarsening {
    fn default() -> Self {
        Coarsening::OrderSensitive(DEFAULT_COARSEN_THRESHOLD)
    }
}

impl Coarsening {
    pub fn threshold_for(self, task: Task) -> Option<usize> {
        match self {
            Coarsening::OrderSensitive(t) if task.is_order_sensitive() => Some(t),
            Coarsening::Always(t) => Some(t),
            _ => None,
        }
    }
}

/// What a task will run: variant, partition count and workers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutionPlan {
    pub task: Task,
    pub variant: Variant,
    pub partitions: usize,
    pub workers: usize,
}

pub fn execution_plan(container: &Container, task: Task, opts: &ExecOptions) -> Result<ExecutionPlan, Error> {
    let variant = match opts.variant {
        Some(v) => v,
        None => {
            let f = crate::dag::extract_features(&container.header, 0)?;
            select_variant_with(&opts.tree, &f, task)
        }
    };
    Ok(ExecutionPlan { task, variant, partitions: container.partitions.len(), workers: opts.workers })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::Worker(e.to_string()))
}

/// Runs `job` on every partition with `workers` threads; a panicking job
/// becomes an error.
fn par_partitions<I: Sync, O: Send>(
    workers: usize,
    items: &[I],
    job: impl Fn(usize, &I) -> Result<O, Error> + Sync,
) -> Result<Vec<O>, Error> {
    pool(workers)?.install(|| {
        items
            .par_iter()
            .enumerate()
            .map(|(i, it)| match catch_unwind(AssertUnwindSafe(|| job(i, it))) {
                Ok(r) => r,
                Err(p) => {
                    let msg = p
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| p.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "worker panicked".into());
                    Err(Error::Worker(format!("partition {i}: {msg}")))
                }
            })
            .collect()
    })
}

/// Loads (and optionally coarsens) the DAG of every partition.
pub fn load_dags(container: &Container, workers: usize, coarsen: Option<usize>) -> Result<Vec<Dag>, Error> {
    par_partitions(workers, &container.partitions, |_, p| {
        let d = Dag::load_merge_graph(&p.grammar);
        Ok(match coarsen {
            Some(t) => d.coarsen(t),
            None => d,
        })
    })
}

/// Loads, runs and merges one task.
pub fn run_task(container: &Container, task: Task, opts: &ExecOptions) -> Result<AnalyticsResult, Error> {
    let dags = load_dags(container, opts.workers, opts.coarsen.threshold_for(task))?;
    run_parallel(container, &dags, task, opts)
}

enum Partial {
    Counts(Vec<u64>),
    Index(kernels::UnitIndex),
    Terms(kernels::UnitTermVectors),
    Both(kernels::UnitTermVectors, kernels::UnitIndex),
    /// Per-unit tables plus `(head, tail)` tokens of every unit.
    Sequences(Vec<SequenceTable>, Vec<SectionEdges>),
}

/// Runs `task` over already loaded partition DAGs and merges the results.
pub fn run_parallel(
    container: &Container,
    dags: &[Dag],
    task: Task,
    opts: &ExecOptions,
) -> Result<AnalyticsResult, Error> {
    if dags.len() != container.partitions.len() {
        return Err(Error::Parameter(format!("{} DAGs for {} partitions", dags.len(), container.partitions.len())));
    }
    let plan = execution_plan(container, task, opts)?;
    let variant = plan.variant;
    let l = opts.params.l;
    if task.is_order_sensitive() && l < 2 {
        return Err(Error::Parameter(format!("sequence length must be at least 2, got {l}")));
    }
    let split: Vec<bool> = split_files(container);
    let partials = par_partitions(opts.workers, dags, |p, d| {
        Ok(match task {
            Task::WordCount | Task::Sort => Partial::Counts(kernels::word_count(d, variant)),
            Task::InvertedIndex => Partial::Index(kernels::inverted_index(d, variant)),
            Task::TermVector => Partial::Terms(kernels::term_vector(d)),
            Task::Tfidf => Partial::Both(kernels::term_vector(d), kernels::inverted_index(d, variant)),
            Task::SequenceCount | Task::RankedInvertedIndex => {
                let tables = kernels::sequence_count(d, l)?;
                let units = &container.partitions[p].units;
                let edges = units
                    .iter()
                    .enumerate()
                    .map(|(u, unit)| {
                        if !split[unit.file as usize] {
                            return (Vec::new(), Vec::new());
                        }
                        let words = kernels::depth_first_words(d, u);
                        let n = words.len().min(l - 1);
                        (words[..n].to_vec(), words[words.len() - n..].to_vec())
                    })
                    .collect();
                Partial::Sequences(tables, edges)
            }
        })
    })?;

    let mut result = merge(container, task, l, partials);
    result.apply_top_k(opts.params.top_k);
    Ok(result)
}

fn split_files(c: &Container) -> Vec<bool> {
    let mut sections = vec![0u32; c.header.files.len()];
    for u in c.partitions.iter().flat_map(|p| &p.units) {
        sections[u.file as usize] += 1;
    }
    sections.into_iter().map(|s| s > 1).collect()
}

fn merge(c: &Container, task: Task, l: usize, partials: Vec<Partial>) -> AnalyticsResult {
    let dict = &c.dictionary;
    let word = |w: Symbol| dict.word(w).expect("word code in dictionary").to_string();
    let n_files = c.header.files.len();
    let files_of = |p: usize| c.partitions[p].units.iter().map(|u| u.file);

    let merge_terms = |per_file: &mut Vec<FxHashMap<Symbol, u64>>, p: usize, tv: kernels::UnitTermVectors| {
        for (file, table) in files_of(p).zip(tv) {
            let acc = &mut per_file[file as usize];
            for (w, k) in table {
                *acc.entry(w).or_default() += k;
            }
        }
    };
    let merge_index = |per_word: &mut Vec<Vec<u32>>, p: usize, idx: kernels::UnitIndex| {
        let files: Vec<u32> = files_of(p).collect();
        for (w, units) in idx {
            per_word[w as usize].extend(units.into_iter().map(|u| files[u as usize]));
        }
    };
    let decode_terms = |per_file: Vec<FxHashMap<Symbol, u64>>| -> Vec<BTreeMap<String, u64>> {
        per_file.into_iter().map(|m| m.into_iter().map(|(w, k)| (word(w), k)).collect()).collect()
    };
    let decode_index = |per_word: Vec<Vec<u32>>| -> BTreeMap<String, Vec<u32>> {
        per_word
            .into_iter()
            .enumerate()
            .filter(|(_, f)| !f.is_empty())
            .map(|(w, mut f)| {
                f.sort_unstable();
                f.dedup();
                (word(w as Symbol), f)
            })
            .collect()
    };

    match task {
        Task::WordCount | Task::Sort => {
            let mut total = vec![0u64; dict.word_count() as usize];
            for part in partials {
                let Partial::Counts(c) = part else { unreachable!() };
                for (t, x) in total.iter_mut().zip(c) {
                    *t += x;
                }
            }
            let m: BTreeMap<String, u64> =
                total.into_iter().enumerate().filter(|&(_, k)| k > 0).map(|(w, k)| (word(w as Symbol), k)).collect();
            if task == Task::Sort {
                AnalyticsResult::sorted(m)
            } else {
                AnalyticsResult::WordCount(m)
            }
        }
        Task::InvertedIndex => {
            let mut per_word = vec![Vec::new(); dict.word_count() as usize];
            for (p, part) in partials.into_iter().enumerate() {
                let Partial::Index(idx) = part else { unreachable!() };
                merge_index(&mut per_word, p, idx);
            }
            AnalyticsResult::InvertedIndex(decode_index(per_word))
        }
        Task::TermVector => {
            let mut per_file = vec![FxHashMap::default(); n_files];
            for (p, part) in partials.into_iter().enumerate() {
                let Partial::Terms(tv) = part else { unreachable!() };
                merge_terms(&mut per_file, p, tv);
            }
            AnalyticsResult::term_vectors(decode_terms(per_file))
        }
        Task::Tfidf => {
            let mut per_file = vec![FxHashMap::default(); n_files];
            let mut per_word = vec![Vec::new(); dict.word_count() as usize];
            for (p, part) in partials.into_iter().enumerate() {
                let Partial::Both(tv, idx) = part else { unreachable!() };
                merge_terms(&mut per_file, p, tv);
                merge_index(&mut per_word, p, idx);
            }
            let df = decode_index(per_word).into_iter().map(|(w, f)| (w, f.len())).collect();
            AnalyticsResult::tfidf(&decode_terms(per_file), &df)
        }
        Task::SequenceCount | Task::RankedInvertedIndex => {
            let mut per_file: Vec<SequenceTable> = vec![SequenceTable::default(); n_files];
            // Edges of split-file sections, by (file, section).
            let mut edges: BTreeMap<(u32, u32), SectionEdges> = BTreeMap::new();
            for (p, part) in partials.into_iter().enumerate() {
                let Partial::Sequences(tables, unit_edges) = part else { unreachable!() };
                for ((unit, table), e) in c.partitions[p].units.iter().zip(tables).zip(unit_edges) {
                    let acc = &mut per_file[unit.file as usize];
                    for (k, v) in table {
                        *acc.entry(k).or_default() += v;
                    }
                    if !e.0.is_empty() || !e.1.is_empty() {
                        edges.insert((unit.file, unit.section), e);
                    }
                }
            }
            stitch(&mut per_file, &edges, l);
            let decoded: Vec<BTreeMap<Vec<String>, u64>> = per_file
                .into_iter()
                .map(|t| t.into_iter().map(|(k, v)| (k.into_iter().map(word).collect(), v)).collect())
                .collect();
            if task == Task::RankedInvertedIndex {
                AnalyticsResult::ranked(&decoded)
            } else {
                AnalyticsResult::SequenceCount(decoded)
            }
        }
    }
}

/// First and last `l-1` tokens of a section.
type SectionEdges = (Vec<Symbol>, Vec<Symbol>);

/// Adds the windows that start in one section and end in a later one.
///
/// `edges` holds the first and last `l-1` tokens of every section of every
/// split file (fewer if the section is shorter).
fn stitch(per_file: &mut [SequenceTable], edges: &BTreeMap<(u32, u32), SectionEdges>, l: usize) {
    let mut by_file: BTreeMap<u32, Vec<&SectionEdges>> = BTreeMap::new();
    for (&(file, _), e) in edges {
        by_file.entry(file).or_default().push(e);
    }
    for (file, sections) in by_file {
        for k in 0..sections.len() {
            let tail = &sections[k].1;
            let mut buf: Vec<Symbol> = tail.clone();
            for next in &sections[k + 1..] {
                if buf.len() >= tail.len() + l - 1 {
                    break;
                }
                buf.extend_from_slice(&next.0);
            }
            buf.truncate(tail.len() + l - 1);
            for start in 0..tail.len() {
                if start + l <= buf.len() {
                    *per_file[file as usize].entry(buf[start..start + l].to_vec()).or_default() += 1;
                }
            }
        }
    }
}
