//! Sequitur grammar inference and grammar expansion.
//!
//! The builder is the classic online algorithm: symbols are appended to the
//! root rule one at a time, a hash index maps every digram to its single
//! occurrence, a repeated digram is replaced by a (new or existing) rule, and
//! a rule whose reference count drops to one is inlined again. Digrams that
//! touch a file separator are never indexed, so separators stay in the root.

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::corpus::SymbolSpace;
use crate::Symbol;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("malformed input: symbol {code} is not a terminal below {n_terminals}")]
    MalformedInput { code: Symbol, n_terminals: u32 },
    #[error("rule {rule} references undefined rule id {id}")]
    DanglingRule { rule: usize, id: Symbol },
    #[error("rule reference graph contains a cycle through rule {0}")]
    Cycle(usize),
    #[error("grammar has no root rule")]
    MissingRoot,
    #[error("grammar symbol space overflow")]
    Overflow,
}

/// A context-free grammar; rule `i` has id `N + i` and rule 0 is the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    space: SymbolSpace,
    rules: Vec<Vec<Symbol>>,
    /// Parents before children; derived from `rules`.
    order: Vec<u32>,
    /// Rules nobody references.
    sources: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GrammarStats {
    /// Number of rules, the root included.
    pub rules: usize,
    /// Total symbols over all rule bodies.
    pub symbols: usize,
    /// Longest root-to-leaf chain of rules; a lone root has depth 1.
    pub max_depth: usize,
}

/// Rule indices with every parent before its children (Kahn's algorithm),
/// rejecting dangling references and cycles.
fn topological_order(space: SymbolSpace, rules: &[Vec<Symbol>]) -> Result<(Vec<u32>, usize), GrammarError> {
    let n = space.n_terminals();
    let index = |s: Symbol| (s >= n).then(|| (s - n) as usize);
    let mut indeg = vec![0u32; rules.len()];
    for (i, body) in rules.iter().enumerate() {
        for &s in body {
            if let Some(c) = index(s) {
                if c >= rules.len() {
                    return Err(GrammarError::DanglingRule { rule: i, id: s });
                }
                indeg[c] += 1;
            }
        }
    }
    let mut order: Vec<u32> = (0..rules.len() as u32).filter(|&i| indeg[i as usize] == 0).collect();
    let sources = order.len();
    let mut head = 0;
    while head < order.len() {
        let r = order[head] as usize;
        head += 1;
        for &s in &rules[r] {
            if let Some(c) = index(s) {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    order.push(c as u32);
                }
            }
        }
    }
    if order.len() != rules.len() {
        let stuck = (0..rules.len()).find(|&i| indeg[i] > 0).unwrap_or(0);
        return Err(GrammarError::Cycle(stuck));
    }
    Ok((order, sources))
}

impl Grammar {
    /// Validates rule references and acyclicity.
    pub fn new(space: SymbolSpace, rules: Vec<Vec<Symbol>>) -> Result<Self, GrammarError> {
        if rules.is_empty() {
            return Err(GrammarError::MissingRoot);
        }
        let n = space.n_terminals() as u64;
        if n + rules.len() as u64 > u32::MAX as u64 {
            return Err(GrammarError::Overflow);
        }
        let (order, sources) = topological_order(space, &rules)?;
        Ok(Self { space, rules, order, sources })
    }

    pub fn space(&self) -> SymbolSpace {
        self.space
    }

    /// Whether every rule is reachable from the root: in a DAG each rule
    /// with a parent descends from a rule without one, so this holds iff the
    /// root is the only such rule.
    pub(crate) fn all_reachable(&self) -> bool {
        self.sources == 1 && self.order[0] == 0
    }

    pub fn n_terminals(&self) -> u32 {
        self.space.n_terminals()
    }

    pub fn rules(&self) -> &[Vec<Symbol>] {
        &self.rules
    }

    pub fn root(&self) -> &[Symbol] {
        &self.rules[0]
    }

    pub fn root_id(&self) -> Symbol {
        self.n_terminals()
    }

    /// Position of a rule id in [`Grammar::rules`], `None` for terminals.
    pub fn rule_index(&self, sym: Symbol) -> Option<usize> {
        let n = self.n_terminals();
        if sym < n {
            return None;
        }
        let i = (sym - n) as usize;
        (i < self.rules.len()).then_some(i)
    }

    pub fn rule_id(&self, index: usize) -> Symbol {
        self.n_terminals() + index as Symbol
    }

    /// Depth-first left-to-right substitution starting at the root.
    pub fn expand(&self) -> Vec<Symbol> {
        let mut out = Vec::with_capacity(self.expanded_len() as usize);
        self.expand_rule_into(0, &mut out);
        out
    }

    pub(crate) fn expand_rule_into(&self, index: usize, out: &mut Vec<Symbol>) {
        let mut stack: Vec<(usize, usize)> = vec![(index, 0)];
        while let Some((r, pos)) = stack.last_mut() {
            let body = &self.rules[*r];
            if *pos == body.len() {
                stack.pop();
                continue;
            }
            let s = body[*pos];
            *pos += 1;
            match self.rule_index(s) {
                Some(c) => stack.push((c, 0)),
                None => out.push(s),
            }
        }
    }

    /// Expanded length of every rule, terminals and separators included.
    pub fn expanded_lengths(&self) -> Vec<u64> {
        let mut len = vec![0u64; self.rules.len()];
        for &r in self.order.iter().rev() {
            let r = r as usize;
            len[r] = self.rules[r].iter().map(|&s| self.rule_index(s).map_or(1, |c| len[c])).sum();
        }
        len
    }

    pub fn expanded_len(&self) -> u64 {
        self.expanded_lengths()[0]
    }

    pub fn stats(&self) -> GrammarStats {
        let mut depth = vec![1usize; self.rules.len()];
        for &r in self.order.iter().rev() {
            let r = r as usize;
            depth[r] =
                1 + self.rules[r].iter().filter_map(|&s| self.rule_index(s)).map(|c| depth[c]).max().unwrap_or(0);
        }
        GrammarStats { rules: self.rules.len(), symbols: self.rules.iter().map(Vec::len).sum(), max_depth: depth[0] }
    }

    /// Digrams occurring more than once across rule bodies.
    ///
    /// Overlapping occurrences inside a run (`x x x`) count once, and digrams
    /// touching a separator are exempt.
    pub fn repeated_digrams(&self) -> Vec<(Symbol, Symbol)> {
        let mut seen: FxHashMap<(Symbol, Symbol), (usize, usize)> = FxHashMap::default();
        let mut repeated = Vec::new();
        for (r, body) in self.rules.iter().enumerate() {
            for (pos, w) in body.windows(2).enumerate() {
                let key = (w[0], w[1]);
                if self.space.is_separator(key.0) || self.space.is_separator(key.1) {
                    continue;
                }
                match seen.get(&key) {
                    None => {
                        seen.insert(key, (r, pos));
                    }
                    Some(&(pr, ppos)) if pr == r && ppos + 1 == pos && key.0 == key.1 => {}
                    Some(_) => repeated.push(key),
                }
            }
        }
        repeated
    }

    /// Non-root rules referenced fewer than twice.
    pub fn underused_rules(&self) -> Vec<usize> {
        let mut refs = vec![0usize; self.rules.len()];
        for body in &self.rules {
            for &s in body {
                if let Some(c) = self.rule_index(s) {
                    refs[c] += 1;
                }
            }
        }
        (1..self.rules.len()).filter(|&r| refs[r] < 2).collect()
    }
}

const NIL: u32 = u32::MAX;
const FREE: u32 = u32::MAX;
const GUARD: u32 = 1 << 31;

#[derive(Clone, Copy)]
struct Node {
    sym: u32,
    prev: u32,
    next: u32,
    /// Position in the referenced rule's `refs`, for rule symbols.
    ref_pos: u32,
}

struct RuleSlot {
    guard: u32,
    refs: Vec<u32>,
    alive: bool,
}

/// Online Sequitur state. Rule slot 0 is the root.
struct Builder {
    space: SymbolSpace,
    n: u32,
    nodes: Vec<Node>,
    free: Vec<u32>,
    rules: Vec<RuleSlot>,
    digrams: FxHashMap<u64, u32>,
    underused: Vec<u32>,
}

impl Builder {
    fn new(space: SymbolSpace, capacity: usize) -> Self {
        let mut b = Self {
            space,
            n: space.n_terminals(),
            nodes: Vec::with_capacity(capacity / 2 + 16),
            free: Vec::new(),
            rules: Vec::new(),
            digrams: FxHashMap::default(),
            underused: Vec::new(),
        };
        b.digrams.reserve(capacity / 4 + 16);
        b.new_rule();
        b
    }

    #[inline]
    fn sym(&self, i: u32) -> u32 {
        self.nodes[i as usize].sym
    }

    #[inline]
    fn next(&self, i: u32) -> u32 {
        self.nodes[i as usize].next
    }

    #[inline]
    fn prev(&self, i: u32) -> u32 {
        self.nodes[i as usize].prev
    }

    #[inline]
    fn is_guard(&self, i: u32) -> bool {
        let s = self.sym(i);
        s != FREE && s & GUARD != 0
    }

    #[inline]
    fn rule_of_sym(&self, sym: u32) -> Option<u32> {
        (sym & GUARD == 0 && sym >= self.n).then(|| sym - self.n)
    }

    fn alloc(&mut self, sym: u32) -> u32 {
        let node = Node { sym, prev: NIL, next: NIL, ref_pos: 0 };
        let i = match self.free.pop() {
            Some(i) => {
                self.nodes[i as usize] = node;
                i
            }
            None => {
                self.nodes.push(node);
                (self.nodes.len() - 1) as u32
            }
        };
        if let Some(r) = self.rule_of_sym(sym) {
            let refs = &mut self.rules[r as usize].refs;
            self.nodes[i as usize].ref_pos = refs.len() as u32;
            refs.push(i);
        }
        i
    }

    fn new_rule(&mut self) -> u32 {
        let r = self.rules.len() as u32;
        let g = self.alloc(GUARD | r);
        self.nodes[g as usize].prev = g;
        self.nodes[g as usize].next = g;
        self.rules.push(RuleSlot { guard: g, refs: Vec::new(), alive: true });
        r
    }

    /// Drops `node` from its rule's reference list; returns the rule.
    fn unref(&mut self, node: u32) -> Option<u32> {
        let r = self.rule_of_sym(self.sym(node))?;
        let pos = self.nodes[node as usize].ref_pos as usize;
        let refs = &mut self.rules[r as usize].refs;
        refs.swap_remove(pos);
        if let Some(&moved) = refs.get(pos) {
            self.nodes[moved as usize].ref_pos = pos as u32;
        }
        Some(r)
    }

    fn release(&mut self, i: u32) {
        self.nodes[i as usize].sym = FREE;
        self.free.push(i);
    }

    #[inline]
    fn digram_key(&self, i: u32) -> Option<u64> {
        let j = self.next(i);
        if j == NIL {
            return None;
        }
        let (a, b) = (self.sym(i), self.sym(j));
        if a & GUARD != 0 || b & GUARD != 0 {
            return None;
        }
        if self.space.is_separator(a) || self.space.is_separator(b) {
            return None;
        }
        Some(((a as u64) << 32) | b as u64)
    }

    fn delete_digram(&mut self, i: u32) {
        if let Some(k) = self.digram_key(i) {
            if self.digrams.get(&k) == Some(&i) {
                self.digrams.remove(&k);
            }
        }
    }

    fn index_digram(&mut self, i: u32) {
        if let Some(k) = self.digram_key(i) {
            self.digrams.insert(k, i);
        }
    }

    fn join(&mut self, left: u32, right: u32) {
        if self.next(left) != NIL {
            self.delete_digram(left);
            // Keep runs of identical symbols indexed after a deletion.
            let (rp, rn) = (self.prev(right), self.next(right));
            if rp != NIL && rn != NIL && self.sym(right) == self.sym(rp) && self.sym(right) == self.sym(rn) {
                self.index_digram(right);
            }
            let (lp, ln) = (self.prev(left), self.next(left));
            if lp != NIL && ln != NIL && self.sym(left) == self.sym(ln) && self.sym(left) == self.sym(lp) {
                self.index_digram(lp);
            }
        }
        self.nodes[left as usize].next = right;
        self.nodes[right as usize].prev = left;
    }

    fn insert_after(&mut self, at: u32, node: u32) {
        let next = self.next(at);
        self.join(node, next);
        self.join(at, node);
    }

    fn delete_symbol(&mut self, i: u32) {
        let (p, n) = (self.prev(i), self.next(i));
        self.join(p, n);
        self.delete_digram(i);
        if let Some(r) = self.unref(i) {
            if self.rules[r as usize].refs.len() == 1 {
                self.underused.push(r);
            }
        }
        self.release(i);
    }

    /// Replaces the digram starting at `s` with a reference to rule `r`.
    fn substitute(&mut self, s: u32, r: u32) {
        let q = self.prev(s);
        self.delete_symbol(self.next(q));
        self.delete_symbol(self.next(q));
        let y = self.alloc(self.n + r);
        self.insert_after(q, y);
        if !self.check(q) {
            self.check(self.next(q));
        }
    }

    /// Enforces digram uniqueness for the digram starting at `s`.
    /// Returns true when the grammar was changed (or `s` overlaps its twin).
    fn check(&mut self, s: u32) -> bool {
        if self.sym(s) == FREE || self.is_guard(s) || self.is_guard(self.next(s)) {
            return false;
        }
        let Some(k) = self.digram_key(s) else {
            return false;
        };
        match self.digrams.get(&k).copied() {
            None => {
                self.digrams.insert(k, s);
                false
            }
            Some(x) if x == s => false,
            Some(x) => {
                if self.next(x) != s && self.next(s) != x {
                    self.match_digram(s, x);
                }
                true
            }
        }
    }

    fn match_digram(&mut self, ss: u32, m: u32) {
        let whole_rule = self.is_guard(self.prev(m)) && self.is_guard(self.next(self.next(m)));
        let reuse = whole_rule.then(|| self.sym(self.prev(m)) & !GUARD).filter(|&r| r != 0);
        match reuse {
            Some(r) => self.substitute(ss, r),
            None => {
                let r = self.new_rule();
                let guard = self.rules[r as usize].guard;
                let a = self.alloc(self.sym(ss));
                let b = self.alloc(self.sym(self.next(ss)));
                self.insert_after(guard, a);
                self.insert_after(a, b);
                self.substitute(m, r);
                self.substitute(ss, r);
                let first = self.next(guard);
                self.index_digram(first);
            }
        }
    }

    /// Inlines the body of the rule referenced by `node`, its only reference.
    fn expand(&mut self, node: u32) {
        let r = self.rule_of_sym(self.sym(node)).expect("rule symbol");
        let guard = self.rules[r as usize].guard;
        let (left, right) = (self.prev(node), self.next(node));
        let (first, last) = (self.next(guard), self.prev(guard));
        self.delete_digram(left);
        self.delete_digram(node);
        self.unref(node);
        self.rules[r as usize].alive = false;
        self.release(node);
        self.release(guard);
        self.nodes[left as usize].next = first;
        self.nodes[first as usize].prev = left;
        self.nodes[last as usize].next = right;
        self.nodes[right as usize].prev = last;
        self.check(last);
        if self.sym(left) != FREE {
            self.check(left);
        }
    }

    /// Restores rule utility for every rule left with a single reference.
    fn settle(&mut self) {
        while let Some(r) = self.underused.pop() {
            let slot = &self.rules[r as usize];
            if slot.alive && slot.refs.len() == 1 {
                let node = slot.refs[0];
                self.expand(node);
            }
        }
    }

    fn push(&mut self, sym: Symbol) {
        let guard = self.rules[0].guard;
        let tail = self.prev(guard);
        let y = self.alloc(sym);
        self.insert_after(tail, y);
        let before = self.prev(y);
        self.check(before);
        self.settle();
    }

    fn finish(self) -> Result<Grammar, GrammarError> {
        let mut new_index = vec![u32::MAX; self.rules.len()];
        let mut next = 0u32;
        for (i, slot) in self.rules.iter().enumerate() {
            if slot.alive {
                new_index[i] = next;
                next += 1;
            }
        }
        let mut rules = Vec::with_capacity(next as usize);
        for slot in self.rules.iter().filter(|s| s.alive) {
            let mut body = Vec::new();
            let mut cur = self.next(slot.guard);
            while cur != slot.guard {
                let s = self.sym(cur);
                body.push(match self.rule_of_sym(s) {
                    Some(r) => self.n + new_index[r as usize],
                    None => s,
                });
                cur = self.next(cur);
            }
            rules.push(body);
        }
        Grammar::new(self.space, rules)
    }
}

/// Infers a Sequitur grammar whose expansion is exactly `symbols`.
pub fn infer_grammar(symbols: &[Symbol], space: SymbolSpace) -> Result<Grammar, GrammarError> {
    let n = space.n_terminals();
    if let Some(&code) = symbols.iter().find(|&&s| s >= n) {
        return Err(GrammarError::MalformedInput { code, n_terminals: n });
    }
    // Rule ids must stay clear of the guard tag.
    if n as u64 + symbols.len() as u64 >= GUARD as u64 {
        return Err(GrammarError::Overflow);
    }
    let mut b = Builder::new(space, symbols.len());
    for &s in symbols {
        b.push(s);
    }
    b.finish()
}
