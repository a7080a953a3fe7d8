//! Analytics kernels that run directly on a [`Dag`].
//!
//! Results here are in code space and indexed by *unit* (the root segments of
//! one partition). [`crate::scheduler`] maps units back to files, merges
//! partitions and decodes words.

use std::collections::VecDeque;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::bitmap::{DoubleLayeredBitmap, FileSet, FlatBitmap, SortedFileSet};
use crate::dag::{Dag, Element, ROOT};
use crate::{Error, Symbol};

/// Traversal and file-set representation used by a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Postorder,
    PreorderSet,
    PreorderBitmap,
    PreorderTwoLevel,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::Postorder, Variant::PreorderSet, Variant::PreorderBitmap, Variant::PreorderTwoLevel];

    pub fn is_preorder(self) -> bool {
        self != Variant::Postorder
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Postorder => "postorder",
            Variant::PreorderSet => "preorder-set",
            Variant::PreorderBitmap => "preorder-bitmap",
            Variant::PreorderTwoLevel => "preorder-two-level",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "postorder" => Ok(Variant::Postorder),
            "preorder" | "preorder-bitmap" => Ok(Variant::PreorderBitmap),
            "preorder-set" => Ok(Variant::PreorderSet),
            "preorder-two-level" | "two-level" => Ok(Variant::PreorderTwoLevel),
            _ => Err(Error::Parameter(format!("unknown variant {s:?}"))),
        }
    }
}

/// Word totals indexed by word code.
pub type WordCounts = Vec<u64>;
/// `(word, ascending units)` for every word that occurs, by code.
pub type UnitIndex = Vec<(Symbol, Vec<u32>)>;
/// Per unit `(word, count)` sorted by code.
pub type UnitTermVectors = Vec<Vec<(Symbol, u64)>>;
/// l-gram counts of one unit.
pub type SequenceTable = FxHashMap<Vec<Symbol>, u64>;

/// Total occurrences of every node in the full expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeFrequency {
    pub fq: Vec<u64>,
}

/// Dequeue log of a preorder propagation: `(node, updates seen)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PropagationTrace {
    pub dequeued: Vec<(u32, u64)>,
}

/// Preorder frequency propagation gated on `updates == in_edges`.
pub fn node_frequencies_traced(d: &Dag) -> (NodeFrequency, PropagationTrace) {
    let nodes = d.nodes();
    let mut fq = vec![0u64; nodes.len()];
    let mut updates = vec![0u64; nodes.len()];
    let mut trace = PropagationTrace::default();
    let mut queue = VecDeque::with_capacity(nodes.len());
    fq[ROOT as usize] = 1;
    queue.push_back(ROOT);
    while let Some(head) = queue.pop_front() {
        trace.dequeued.push((head, updates[head as usize]));
        let f = fq[head as usize];
        for &(c, m) in &nodes[head as usize].children {
            let c = c as usize;
            fq[c] += f * m;
            updates[c] += m;
            if updates[c] == nodes[c].in_edges {
                queue.push_back(c as u32);
            }
        }
    }
    (NodeFrequency { fq }, trace)
}

pub fn node_frequencies(d: &Dag) -> NodeFrequency {
    node_frequencies_traced(d).0
}

/// Per-node word tables folded bottom-up (children before parents).
///
/// Entry `i` holds the complete word multiset of node `i` as `(code, count)`
/// sorted by code. The root entry is filled only if `include_root`.
fn postorder_tables(d: &Dag, include_root: bool) -> Vec<Vec<(Symbol, u64)>> {
    let nodes = d.nodes();
    let mut tables: Vec<Vec<(Symbol, u64)>> = vec![Vec::new(); nodes.len()];
    let mut acc: FxHashMap<Symbol, u64> = FxHashMap::default();
    for &id in d.topological_order().iter().rev() {
        if id == ROOT && !include_root {
            continue;
        }
        let node = &nodes[id as usize];
        acc.clear();
        for &(w, k) in &node.words {
            *acc.entry(w).or_default() += k;
        }
        for &(c, m) in &node.children {
            for &(w, k) in &tables[c as usize] {
                *acc.entry(w).or_default() += m * k;
            }
        }
        let mut table: Vec<(Symbol, u64)> = acc.iter().map(|(&w, &k)| (w, k)).collect();
        table.sort_unstable();
        tables[id as usize] = table;
    }
    tables
}

/// Word count by folding local tables into parents.
pub fn word_count_postorder(d: &Dag) -> WordCounts {
    let mut counts = vec![0u64; d.space().words as usize];
    let tables = postorder_tables(d, true);
    for &(w, k) in &tables[ROOT as usize] {
        counts[w as usize] = k;
    }
    counts
}

/// Word count via node frequencies: `Σ_r fq(r) · direct count of w in r`.
pub fn word_count_preorder(d: &Dag) -> WordCounts {
    let fq = node_frequencies(d).fq;
    let mut counts = vec![0u64; d.space().words as usize];
    for (node, f) in d.nodes().iter().zip(fq) {
        for &(w, k) in &node.words {
            counts[w as usize] += k * f;
        }
    }
    counts
}

pub fn word_count(d: &Dag, variant: Variant) -> WordCounts {
    match variant {
        Variant::Postorder => word_count_postorder(d),
        _ => word_count_preorder(d),
    }
}

pub fn inverted_index(d: &Dag, variant: Variant) -> UnitIndex {
    let units = d.segments().len() as u32;
    match variant {
        Variant::Postorder => inverted_index_postorder(d),
        Variant::PreorderSet => inverted_index_preorder(d, || SortedFileSet::with_universe(units)),
        Variant::PreorderBitmap => inverted_index_preorder(d, || FlatBitmap::with_universe(units)),
        Variant::PreorderTwoLevel => inverted_index_preorder(d, || DoubleLayeredBitmap::with_universe(units)),
    }
}

fn collect_index(per_word: Vec<Vec<u32>>) -> UnitIndex {
    per_word
        .into_iter()
        .enumerate()
        .filter(|(_, u)| !u.is_empty())
        .map(|(w, mut u)| {
            u.sort_unstable();
            u.dedup();
            (w as Symbol, u)
        })
        .collect()
}

/// File sets pushed from the root down; then every word of a node inherits
/// the node's file set.
pub fn inverted_index_preorder<S: FileSet>(d: &Dag, make: impl Fn() -> S) -> UnitIndex {
    let nodes = d.nodes();
    let root = d.root();
    let mut sets: Vec<S> = (0..nodes.len()).map(|_| make()).collect();
    let mut updates = vec![0u64; nodes.len()];
    let mut per_word: Vec<Vec<u32>> = vec![Vec::new(); d.space().words as usize];

    for (unit, seg) in d.segments().iter().enumerate() {
        let unit = unit as u32;
        for e in &root.elements[seg.clone()] {
            match *e {
                Element::Rule(c) => {
                    sets[c as usize].insert(unit).expect("unit within universe");
                    updates[c as usize] += 1;
                }
                Element::Word(w) => {
                    let list = &mut per_word[w as usize];
                    if list.last() != Some(&unit) {
                        list.push(unit);
                    }
                }
                Element::Separator(_) => {}
            }
        }
    }

    let mut queue: VecDeque<u32> =
        d.level_two().filter(|&c| updates[c as usize] == nodes[c as usize].in_edges).collect();
    while let Some(head) = queue.pop_front() {
        let src = std::mem::replace(&mut sets[head as usize], make());
        for &(c, m) in &nodes[head as usize].children {
            let c = c as usize;
            sets[c].union_with(&src);
            updates[c] += m;
            if updates[c] == nodes[c].in_edges {
                queue.push_back(c as u32);
            }
        }
        sets[head as usize] = src;
    }

    for (id, node) in nodes.iter().enumerate().skip(1) {
        if node.words.is_empty() {
            continue;
        }
        let units = sets[id].ids();
        for &(w, _) in &node.words {
            per_word[w as usize].extend_from_slice(&units);
        }
    }
    collect_index(per_word)
}

/// Word sets folded up to the level-2 nodes, then crossed with the root
/// segments.
pub fn inverted_index_postorder(d: &Dag) -> UnitIndex {
    let nodes = d.nodes();
    let mut word_sets: Vec<Vec<Symbol>> = vec![Vec::new(); nodes.len()];
    for &id in d.topological_order().iter().rev() {
        if id == ROOT {
            continue;
        }
        let node = &nodes[id as usize];
        let mut set: Vec<Symbol> = node.words.iter().map(|&(w, _)| w).collect();
        for &(c, _) in &node.children {
            set.extend_from_slice(&word_sets[c as usize]);
        }
        set.sort_unstable();
        set.dedup();
        word_sets[id as usize] = set;
    }

    let mut per_word: Vec<Vec<u32>> = vec![Vec::new(); d.space().words as usize];
    let mut push = |w: Symbol, unit: u32| {
        let list = &mut per_word[w as usize];
        if list.last() != Some(&unit) {
            list.push(unit);
        }
    };
    for (unit, seg) in d.segments().iter().enumerate() {
        for e in &d.root().elements[seg.clone()] {
            match *e {
                Element::Word(w) => push(w, unit as u32),
                Element::Rule(c) => {
                    for &w in &word_sets[c as usize] {
                        push(w, unit as u32);
                    }
                }
                Element::Separator(_) => {}
            }
        }
    }
    collect_index(per_word)
}

/// Per-unit word counts from level-2 tables and the root segments.
pub fn term_vector(d: &Dag) -> UnitTermVectors {
    let tables = postorder_tables(d, false);
    let mut acc: FxHashMap<Symbol, u64> = FxHashMap::default();
    d.segments()
        .iter()
        .map(|seg| {
            acc.clear();
            for e in &d.root().elements[seg.clone()] {
                match *e {
                    Element::Word(w) => *acc.entry(w).or_default() += 1,
                    Element::Rule(c) => {
                        for &(w, k) in &tables[c as usize] {
                            *acc.entry(w).or_default() += k;
                        }
                    }
                    Element::Separator(_) => {}
                }
            }
            let mut v: Vec<_> = acc.iter().map(|(&w, &k)| (w, k)).collect();
            v.sort_unstable();
            v
        })
        .collect()
}

/// Depth-first, left-to-right walk of one root segment.
///
/// `on_word` receives every word with the node it appears in and an id of
/// that node *instance* (fresh each time a node is entered; the segment
/// itself is instance 0). `on_exit` fires when a node instance is finished.
pub fn traverse_segment(d: &Dag, unit: usize, mut on_word: impl FnMut(Symbol, u32, u64), mut on_exit: impl FnMut(u32)) {
    let seg = d.segments()[unit].clone();
    let mut instances = 0u64;
    let mut stack: Vec<(u32, usize, usize, u64)> = vec![(ROOT, seg.start, seg.end, 0)];
    while let Some(top) = stack.last_mut() {
        let (node, pos, end, instance) = *top;
        if pos == end {
            stack.pop();
            if node != ROOT {
                on_exit(node);
            }
            continue;
        }
        top.1 += 1;
        match d.node(node).elements[pos] {
            Element::Word(w) => on_word(w, node, instance),
            Element::Rule(c) => {
                instances += 1;
                stack.push((c, 0, d.node(c).elements.len(), instances));
            }
            Element::Separator(_) => {}
        }
    }
}

/// The words of one unit in the order [`traverse_segment`] visits them.
pub fn depth_first_words(d: &Dag, unit: usize) -> Vec<Symbol> {
    let mut out = Vec::new();
    traverse_segment(d, unit, |w, _, _| out.push(w), |_| {});
    out
}

/// Frequency of every node within one root segment.
///
/// Fills `fq` for the reachable nodes and returns them in propagation order.
fn segment_frequencies(d: &Dag, unit: usize, fq: &mut [u64], local_in: &mut [u64], updates: &mut [u64]) -> Vec<u32> {
    let nodes = d.nodes();
    let seg = d.segments()[unit].clone();
    let root = d.root();

    let mut reached: Vec<u32> = Vec::new();
    let mut stack: Vec<u32> = Vec::new();
    let visit = |c: u32, local_in: &mut [u64], reached: &mut Vec<u32>, stack: &mut Vec<u32>, m: u64| {
        if local_in[c as usize] == 0 {
            reached.push(c);
            stack.push(c);
        }
        local_in[c as usize] += m;
    };
    for e in &root.elements[seg.clone()] {
        if let Element::Rule(c) = *e {
            visit(c, local_in, &mut reached, &mut stack, 1);
        }
    }
    while let Some(p) = stack.pop() {
        for &(c, m) in &nodes[p as usize].children {
            visit(c, local_in, &mut reached, &mut stack, m);
        }
    }

    let mut queue = VecDeque::new();
    for e in &root.elements[seg] {
        if let Element::Rule(c) = *e {
            let c = c as usize;
            fq[c] += 1;
            updates[c] += 1;
            if updates[c] == local_in[c] {
                queue.push_back(c as u32);
            }
        }
    }
    let mut order = Vec::with_capacity(reached.len());
    while let Some(head) = queue.pop_front() {
        order.push(head);
        let f = fq[head as usize];
        for &(c, m) in &nodes[head as usize].children {
            let c = c as usize;
            fq[c] += f * m;
            updates[c] += m;
            if updates[c] == local_in[c] {
                queue.push_back(c as u32);
            }
        }
    }
    debug_assert_eq!(order.len(), reached.len());
    for &c in &reached {
        local_in[c as usize] = 0;
        updates[c as usize] = 0;
    }
    order
}

/// Counts l-word sequences in every unit.
///
/// Windows whose words all come from one node instance go to that node's
/// local table, built on the node's first visit only; all other windows go
/// to the unit's global table. Local tables are folded in afterwards,
/// weighted by each node's frequency within the unit.
pub fn sequence_count(d: &Dag, l: usize) -> Result<Vec<SequenceTable>, Error> {
    if l < 2 {
        return Err(Error::Parameter(format!("sequence length must be at least 2, got {l}")));
    }
    let n = d.len();
    let mut local: Vec<SequenceTable> = vec![SequenceTable::default(); n];
    let mut ready = vec![false; n];
    let mut fq = vec![0u64; n];
    let mut local_in = vec![0u64; n];
    let mut updates = vec![0u64; n];
    let mut out = Vec::with_capacity(d.segments().len());

    let mut window: VecDeque<(Symbol, u64)> = VecDeque::with_capacity(l);
    let mut key: Vec<Symbol> = Vec::with_capacity(l);
    for unit in 0..d.segments().len() {
        let mut global = SequenceTable::default();
        window.clear();
        {
            let ready_ref = std::cell::Cell::from_mut(&mut ready[..]).as_slice_of_cells();
            let local_ref = &mut local;
            let global_ref = &mut global;
            traverse_segment(
                d,
                unit,
                |w, node, instance| {
                    if window.len() == l {
                        window.pop_front();
                    }
                    window.push_back((w, instance));
                    if window.len() < l {
                        return;
                    }
                    let single = window.iter().all(|&(_, i)| i == instance);
                    let table = if !single || node == ROOT {
                        &mut *global_ref
                    } else if !ready_ref[node as usize].get() {
                        &mut local_ref[node as usize]
                    } else {
                        return;
                    };
                    key.clear();
                    key.extend(window.iter().map(|&(w, _)| w));
                    bump(table, &key, 1);
                },
                |node| ready_ref[node as usize].set(true),
            );
        }
        let order = segment_frequencies(d, unit, &mut fq, &mut local_in, &mut updates);
        for &r in &order {
            let f = std::mem::take(&mut fq[r as usize]);
            for (k, &c) in &local[r as usize] {
                bump(&mut global, k, c * f);
            }
        }
        out.push(global);
    }
    Ok(out)
}

fn bump(table: &mut SequenceTable, key: &[Symbol], by: u64) {
    match table.get_mut(key) {
        Some(c) => *c += by,
        None => {
            table.insert(key.to_vec(), by);
        }
    }
}
