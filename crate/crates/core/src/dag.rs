//! The analytic view of a grammar.
//!
//! Each node keeps its ordered element list (for order-sensitive kernels) and
//! the merged-edge view: direct word counts and child multiplicities (the
//! node's local table). Node 0 is the root; its elements are split into one
//! segment per unit by the separators.

use std::ops::Range;

use crate::container::ContainerHeader;
use crate::corpus::SymbolSpace;
use crate::sequitur::Grammar;
use crate::{Error, Symbol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    Word(Symbol),
    /// Index of a child node in the same [`Dag`].
    Rule(u32),
    Separator(Symbol),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub elements: Vec<Element>,
    /// Direct word occurrences, sorted by code. Separators are excluded.
    pub words: Vec<(Symbol, u64)>,
    /// Distinct children with their multiplicity, sorted by node index.
    pub children: Vec<(u32, u64)>,
    /// Parent references, counting multiplicity.
    pub in_edges: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dag {
    space: SymbolSpace,
    nodes: Vec<Node>,
    segments: Vec<Range<usize>>,
    topo: Vec<u32>,
}

pub const ROOT: u32 = 0;

/// Threshold used for node coarsening unless configured otherwise.
pub const DEFAULT_COARSEN_THRESHOLD: usize = 100;

impl Dag {
    /// Builds the DAG of the rules reachable from the root.
    pub fn load_merge_graph(g: &Grammar) -> Dag {
        let rules = g.rules();
        if g.all_reachable() {
            let space = g.space();
            let n = g.n_terminals();
            let bodies = rules
                .iter()
                .map(|body| {
                    body.iter()
                        .map(|&s| match s {
                            s if s >= n => Element::Rule(s - n),
                            s if space.is_separator(s) => Element::Separator(s),
                            s => Element::Word(s),
                        })
                        .collect()
                })
                .collect();
            return Dag::from_elements(space, bodies);
        }
        let mut node_of = vec![u32::MAX; rules.len()];
        let mut order = vec![0usize];
        node_of[0] = 0;
        let mut head = 0;
        while head < order.len() {
            let r = order[head];
            head += 1;
            for &s in &rules[r] {
                if let Some(c) = g.rule_index(s) {
                    if node_of[c] == u32::MAX {
                        node_of[c] = order.len() as u32;
                        order.push(c);
                    }
                }
            }
        }
        let space = g.space();
        let bodies = order
            .iter()
            .map(|&r| {
                rules[r]
                    .iter()
                    .map(|&s| match g.rule_index(s) {
                        Some(c) => Element::Rule(node_of[c]),
                        None if space.is_separator(s) => Element::Separator(s),
                        None => Element::Word(s),
                    })
                    .collect()
            })
            .collect();
        Dag::from_elements(space, bodies)
    }

    /// Derives local tables, in-edges, segments and topological order.
    fn from_elements(space: SymbolSpace, bodies: Vec<Vec<Element>>) -> Dag {
        let mut in_edges = vec![0u64; bodies.len()];
        // Dense counters with touched lists: no hashing on the load path.
        let mut word_count = vec![0u64; space.words as usize];
        let mut child_count = vec![0u64; bodies.len()];
        let mut nodes: Vec<Node> = bodies
            .into_iter()
            .map(|elements| {
                let mut words: Vec<(Symbol, u64)> = Vec::new();
                let mut children: Vec<(u32, u64)> = Vec::new();
                for e in &elements {
                    match *e {
                        Element::Word(w) => {
                            if word_count[w as usize] == 0 {
                                words.push((w, 0));
                            }
                            word_count[w as usize] += 1;
                        }
                        Element::Rule(c) => {
                            if child_count[c as usize] == 0 {
                                children.push((c, 0));
                            }
                            child_count[c as usize] += 1;
                        }
                        Element::Separator(_) => {}
                    }
                }
                for (w, k) in &mut words {
                    *k = std::mem::take(&mut word_count[*w as usize]);
                }
                for (c, m) in &mut children {
                    *m = std::mem::take(&mut child_count[*c as usize]);
                }
                words.sort_unstable();
                children.sort_unstable();
                for &(c, m) in &children {
                    in_edges[c as usize] += m;
                }
                Node { elements, words, children, in_edges: 0 }
            })
            .collect();
        for (n, e) in nodes.iter_mut().zip(in_edges) {
            n.in_edges = e;
        }

        let mut segments = Vec::new();
        let mut start = 0;
        for (i, e) in nodes[0].elements.iter().enumerate() {
            if let Element::Separator(_) = e {
                segments.push(start..i);
                start = i + 1;
            }
        }
        if start < nodes[0].elements.len() {
            segments.push(start..nodes[0].elements.len());
        }

        let mut pending: Vec<u64> = nodes.iter().map(|n| n.in_edges).collect();
        let mut topo = vec![ROOT];
        let mut head = 0;
        while head < topo.len() {
            let n = topo[head] as usize;
            head += 1;
            for &(c, m) in &nodes[n].children {
                pending[c as usize] -= m;
                if pending[c as usize] == 0 {
                    topo.push(c);
                }
            }
        }
        debug_assert_eq!(topo.len(), nodes.len());

        Dag { space, nodes, segments, topo }
    }

    pub fn space(&self) -> SymbolSpace {
        self.space
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: u32) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Root element spans, one per unit, separators excluded.
    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    /// Node ids with every parent before its children; root first.
    pub fn topological_order(&self) -> &[u32] {
        &self.topo
    }

    /// Level-2 nodes: the distinct rule children of the root.
    pub fn level_two(&self) -> impl Iterator<Item = u32> + '_ {
        self.root().children.iter().map(|&(c, _)| c)
    }

    /// Terminal expansion (separators included), root first.
    pub fn expand(&self) -> Vec<Symbol> {
        let mut out = Vec::new();
        self.walk(ROOT, &mut |e| match e {
            Element::Word(w) | Element::Separator(w) => out.push(w),
            Element::Rule(_) => unreachable!(),
        });
        out
    }

    /// Depth-first visit of every terminal element under `node` in order.
    pub(crate) fn walk(&self, node: u32, visit: &mut impl FnMut(Element)) {
        let mut stack: Vec<(u32, usize)> = vec![(node, 0)];
        while let Some((n, pos)) = stack.last_mut() {
            let elements = &self.nodes[*n as usize].elements;
            if *pos == elements.len() {
                stack.pop();
                continue;
            }
            let e = elements[*pos];
            *pos += 1;
            match e {
                Element::Rule(c) => stack.push((c, 0)),
                e => visit(e),
            }
        }
    }

    /// Inlines every non-root node with fewer than `threshold` elements.
    ///
    /// Children are handled before parents, so a node's size is measured
    /// after its own small children have been spliced in.
    pub fn coarsen(&self, threshold: usize) -> Dag {
        if threshold == 0 {
            return self.clone();
        }
        let n = self.nodes.len();
        let mut bodies: Vec<Option<Vec<Element>>> = vec![None; n];
        let mut inlined = vec![false; n];
        for &id in self.topo.iter().rev() {
            let mut body = Vec::with_capacity(self.nodes[id as usize].elements.len());
            for &e in &self.nodes[id as usize].elements {
                match e {
                    Element::Rule(c) if inlined[c as usize] => {
                        body.extend_from_slice(bodies[c as usize].as_ref().expect("child first"))
                    }
                    e => body.push(e),
                }
            }
            if id != ROOT && body.len() < threshold {
                inlined[id as usize] = true;
            }
            bodies[id as usize] = Some(body);
        }

        let mut new_id = vec![u32::MAX; n];
        let mut next = 0u32;
        for (i, &gone) in inlined.iter().enumerate() {
            if !gone {
                new_id[i] = next;
                next += 1;
            }
        }
        let kept = bodies
            .into_iter()
            .zip(&inlined)
            .filter(|(_, &gone)| !gone)
            .map(|(body, _)| {
                body.expect("every node visited")
                    .into_iter()
                    .map(|e| match e {
                        Element::Rule(c) => Element::Rule(new_id[c as usize]),
                        e => e,
                    })
                    .collect()
            })
            .collect();
        Dag::from_elements(self.space, kept)
    }

    /// Approximate heap footprint in bytes.
    pub fn heap_bytes(&self) -> usize {
        use std::mem::size_of;
        self.nodes
            .iter()
            .map(|n| {
                size_of::<Node>()
                    + n.elements.capacity() * size_of::<Element>()
                    + n.words.capacity() * size_of::<(Symbol, u64)>()
                    + n.children.capacity() * size_of::<(u32, u64)>()
            })
            .sum::<usize>()
            + self.topo.capacity() * 4
            + self.segments.capacity() * size_of::<Range<usize>>()
    }
}

/// Inputs to the traversal-order decision.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DatasetFeatures {
    pub file_count: u64,
    pub total_tokens: u64,
    /// Average file size in tokens.
    pub avg_file_size: f64,
    pub vocabulary: u64,
    pub rule_count: u64,
    pub container_bytes: u64,
}

/// Reads the features from container metadata alone.
pub fn extract_features(header: &ContainerHeader, container_bytes: u64) -> Result<DatasetFeatures, Error> {
    let fb = header.features;
    if fb.file_count == 0 {
        return Err(Error::Parameter("feature extraction needs at least one file".into()));
    }
    Ok(DatasetFeatures {
        file_count: fb.file_count,
        total_tokens: fb.total_tokens,
        avg_file_size: fb.total_tokens as f64 / fb.file_count as f64,
        vocabulary: fb.vocabulary,
        rule_count: fb.rule_count,
        container_bytes,
    })
}
