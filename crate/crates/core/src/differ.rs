// SPDX-License-Identifier: Apache-2.0

//! Tree differencing between a reference method and a variant.
//!
//! Matching follows the GumTree scheme: a greedy top-down pass pairs
//! isomorphic subtrees of sufficient height, then a bottom-up pass pairs
//! containers whose descendants largely match and recovers leftover children.
//! The edit script is derived from the matching with the Chawathe et al.
//! algorithm (insert/update/move with child alignment, then deletes).

use std::collections::{HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::perturb::Location;
use crate::syntax::{NodePath, Span, Tree};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffConfig {
    /// Minimum subtree height for top-down matching (leaves have height 1).
    pub min_height: usize,
    /// Bottom-up containers match when their dice similarity exceeds this.
    pub min_dice: f64,
    /// Matched pairs whose subtrees both have at most this many nodes get an
    /// optimal (Zhang-Shasha) recovery of their leftover descendants; larger
    /// pairs use the in-order and unique-kind heuristics.
    pub max_recovery_size: usize,
}

impl Default for DiffConfig {
    fn default() -> Self {
        DiffConfig { min_height: 2, min_dice: 0.5, max_recovery_size: 1000 }
    }
}

/// Plain labelled ordered tree, used for replaying scripts and for tests.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledTree {
    pub kind: String,
    pub label: String,
    pub children: Vec<LabeledTree>,
}

impl LabeledTree {
    pub fn leaf(kind: impl Into<String>, label: impl Into<String>) -> Self {
        LabeledTree { kind: kind.into(), label: label.into(), children: Vec::new() }
    }

    pub fn node(kind: impl Into<String>, children: Vec<LabeledTree>) -> Self {
        LabeledTree { kind: kind.into(), label: String::new(), children }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(LabeledTree::size).sum::<usize>()
    }

    /// Leaf labels in order, separated by single spaces.
    pub fn render(&self) -> String {
        fn walk<'a>(t: &'a LabeledTree, out: &mut Vec<&'a str>) {
            if t.children.is_empty() {
                out.push(&t.label);
            }
            for c in &t.children {
                walk(c, out);
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out.join(" ")
    }
}

#[derive(Clone, Debug)]
struct DNode {
    kind: String,
    label: String,
    span: Span,
    path: NodePath,
    parent: Option<usize>,
    children: Vec<usize>,
    pos: usize,
    height: usize,
    size: usize,
    hash: u64,
    shash: u64,
}

/// Operator tokens are update-compatible with each other, and so are
/// non-string literals.
const OPERATOR_KINDS: &[&str] = &[
    "+", "-", "*", "/", "//", "%", "**", "@", "|", "&", "^", "~", "<<", ">>", "<", ">", "<=", ">=", "==", "!=", "<>",
    "in", "not in", "is", "is not", "not", "and", "or", "+=", "-=", "*=", "/=", "//=", "%=", "**=", "@=", "|=", "&=",
    "^=", "<<=", ">>=",
];
const LITERAL_KINDS: &[&str] = &["integer", "float", "true", "false", "none"];

fn compat(kind: &str) -> &str {
    if OPERATOR_KINDS.contains(&kind) {
        "<op>"
    } else if LITERAL_KINDS.contains(&kind) {
        "<literal>"
    } else {
        kind
    }
}

fn fnv(mut h: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

const FNV_SEED: u64 = 0xcbf29ce484222325;

/// Preorder arena over a tree, with the bookkeeping the matcher needs.
#[derive(Clone, Debug)]
pub struct DiffTree {
    nodes: Vec<DNode>,
    source: String,
}

impl DiffTree {
    pub fn from_syntax(tree: &Tree) -> Self {
        let mut nodes = Vec::new();
        fn walk(n: &crate::syntax::Node, src: &str, parent: Option<usize>, pos: usize, out: &mut Vec<DNode>) -> usize {
            let id = out.len();
            let label = if n.is_leaf() { src[n.span.start..n.span.end].to_string() } else { String::new() };
            out.push(DNode {
                kind: n.kind.to_string(),
                label,
                span: n.span,
                path: n.path.clone(),
                parent,
                children: Vec::new(),
                pos,
                height: 0,
                size: 0,
                hash: 0,
                shash: 0,
            });
            for (i, c) in n.children.iter().enumerate() {
                let cid = walk(c, src, Some(id), i, out);
                out[id].children.push(cid);
            }
            id
        }
        walk(tree.root(), tree.source(), None, 0, &mut nodes);
        let mut t = DiffTree { nodes, source: tree.source().to_string() };
        t.finish();
        t
    }

    pub fn from_labeled(tree: &LabeledTree) -> Self {
        let mut nodes = Vec::new();
        fn walk(n: &LabeledTree, parent: Option<usize>, pos: usize, path: NodePath, out: &mut Vec<DNode>) -> usize {
            let id = out.len();
            out.push(DNode {
                kind: n.kind.clone(),
                label: n.label.clone(),
                span: Span::default(),
                path: path.clone(),
                parent,
                children: Vec::new(),
                pos,
                height: 0,
                size: 0,
                hash: 0,
                shash: 0,
            });
            for (i, c) in n.children.iter().enumerate() {
                let cid = walk(c, Some(id), i, path.child(i as u32), out);
                out[id].children.push(cid);
            }
            id
        }
        walk(tree, None, 0, NodePath::root(), &mut nodes);
        let mut t = DiffTree { nodes, source: String::new() };
        t.finish();
        t
    }

    fn finish(&mut self) {
        for i in (0..self.nodes.len()).rev() {
            let (mut height, mut size) = (1, 1);
            let mut h = fnv(fnv(FNV_SEED, self.nodes[i].kind.as_bytes()), &[0]);
            h = fnv(h, self.nodes[i].label.as_bytes());
            let mut sh = fnv(FNV_SEED, compat(&self.nodes[i].kind).as_bytes());
            for &c in &self.nodes[i].children {
                height = height.max(self.nodes[c].height + 1);
                size += self.nodes[c].size;
                h = fnv(h, &self.nodes[c].hash.to_le_bytes());
                sh = fnv(sh, &self.nodes[c].shash.to_le_bytes());
            }
            // close the child list so that (a (b c)) and (a b c) differ
            h = fnv(h, b")");
            sh = fnv(sh, b")");
            let n = &mut self.nodes[i];
            n.height = height;
            n.size = size;
            n.hash = h;
            n.shash = sh;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, id: usize) -> &str {
        &self.nodes[id].kind
    }

    pub fn label(&self, id: usize) -> &str {
        &self.nodes[id].label
    }

    pub fn path(&self, id: usize) -> &NodePath {
        &self.nodes[id].path
    }

    /// Leaves with non-empty text, in source order.
    fn leaves(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].children.is_empty() && !self.nodes[i].span.is_empty())
            .collect();
        out.sort_by_key(|&i| self.nodes[i].span.start);
        out
    }

    pub fn span(&self, id: usize) -> Span {
        self.nodes[id].span
    }

    pub fn ancestors_or_self(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(Some(id), |&i| self.nodes[i].parent)
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.nodes[id].children
    }

    /// Source text covered by a node (empty for trees built from labels).
    pub fn text(&self, id: usize) -> &str {
        let s = self.nodes[id].span;
        &self.source[s.start..s.end]
    }

    pub fn id_of(&self, path: &NodePath) -> Option<usize> {
        let mut cur = 0;
        for &i in &path.0 {
            cur = *self.nodes.get(cur)?.children.get(i as usize)?;
        }
        (!self.nodes.is_empty()).then_some(cur)
    }

    fn is_descendant(&self, d: usize, of: usize) -> bool {
        of < d && d < of + self.nodes[of].size
    }

    fn descendants(&self, of: usize) -> std::ops::Range<usize> {
        of + 1..of + self.nodes[of].size
    }

    fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        fn walk(t: &DiffTree, i: usize, out: &mut Vec<usize>) {
            for &c in &t.nodes[i].children {
                walk(t, c, out);
            }
            out.push(i);
        }
        if !self.nodes.is_empty() {
            walk(self, 0, &mut out);
        }
        out
    }

    pub fn to_labeled(&self) -> LabeledTree {
        fn build(t: &DiffTree, i: usize) -> LabeledTree {
            LabeledTree {
                kind: t.nodes[i].kind.clone(),
                label: t.nodes[i].label.clone(),
                children: t.nodes[i].children.iter().map(|&c| build(t, c)).collect(),
            }
        }
        build(self, 0)
    }
}

/// Node correspondence between two trees (by preorder id).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mapping {
    src_to_dst: Vec<Option<usize>>,
    dst_to_src: Vec<Option<usize>>,
}

impl Mapping {
    fn new(src: usize, dst: usize) -> Self {
        Mapping { src_to_dst: vec![None; src], dst_to_src: vec![None; dst] }
    }

    fn link(&mut self, s: usize, d: usize) {
        debug_assert!(self.src_to_dst[s].is_none() && self.dst_to_src[d].is_none());
        self.src_to_dst[s] = Some(d);
        self.dst_to_src[d] = Some(s);
    }

    pub fn dst_of(&self, s: usize) -> Option<usize> {
        self.src_to_dst[s]
    }

    pub fn src_of(&self, d: usize) -> Option<usize> {
        self.dst_to_src[d]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.src_to_dst.iter().enumerate().filter_map(|(s, d)| d.map(|d| (s, d)))
    }

    pub fn len(&self) -> usize {
        self.pairs().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Matching expressed as node paths.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<(NodePath, NodePath)>,
    pub unmatched_solution: Vec<NodePath>,
    pub unmatched_variant: Vec<NodePath>,
}

struct Matcher<'a> {
    src: &'a DiffTree,
    dst: &'a DiffTree,
    cfg: DiffConfig,
    m: Mapping,
}

impl<'a> Matcher<'a> {
    fn isomorphic(&self, s: usize, d: usize) -> bool {
        let (a, b) = (&self.src.nodes[s], &self.dst.nodes[d]);
        a.hash == b.hash && a.size == b.size
    }

    fn struct_isomorphic(&self, s: usize, d: usize) -> bool {
        let (a, b) = (&self.src.nodes[s], &self.dst.nodes[d]);
        a.shash == b.shash && a.size == b.size
    }

    fn compatible(&self, s: usize, d: usize) -> bool {
        compat(&self.src.nodes[s].kind) == compat(&self.dst.nodes[d].kind)
    }

    /// Link two subtrees of the same shape node by node, skipping nodes that
    /// are already linked.
    fn link_subtrees(&mut self, s: usize, d: usize) {
        for k in 0..self.src.nodes[s].size {
            if self.m.src_to_dst[s + k].is_none() && self.m.dst_to_src[d + k].is_none() {
                self.m.link(s + k, d + k);
            }
        }
    }

    fn dice(&self, s: usize, d: usize) -> f64 {
        let ds = self.src.nodes[s].size - 1;
        let dd = self.dst.nodes[d].size - 1;
        if ds + dd == 0 {
            return 0.0;
        }
        let common = self
            .src
            .descendants(s)
            .filter(|&x| self.m.src_to_dst[x].is_some_and(|y| self.dst.is_descendant(y, d)))
            .count();
        2.0 * common as f64 / (ds + dd) as f64
    }

    fn top_down(&mut self) {
        let mut count_src: HashMap<u64, usize> = HashMap::new();
        let mut count_dst: HashMap<u64, usize> = HashMap::new();
        for n in &self.src.nodes {
            *count_src.entry(n.hash).or_default() += 1;
        }
        for n in &self.dst.nodes {
            *count_dst.entry(n.hash).or_default() += 1;
        }
        let mut l1 = vec![0usize];
        let mut l2 = vec![0usize];
        let mut ambiguous: Vec<(usize, usize)> = Vec::new();
        let max_h = |t: &DiffTree, l: &[usize]| l.iter().map(|&i| t.nodes[i].height).max().unwrap_or(0);
        fn take(t: &DiffTree, l: &mut Vec<usize>, h: usize) -> Vec<usize> {
            let (mut hit, rest): (Vec<usize>, Vec<usize>) = l.iter().partition(|&&i| t.nodes[i].height == h);
            *l = rest;
            hit.sort_unstable();
            hit
        }
        fn open(t: &DiffTree, l: &mut Vec<usize>, nodes: &[usize]) {
            for &n in nodes {
                l.extend_from_slice(&t.nodes[n].children);
            }
        }
        if self.src.is_empty() || self.dst.is_empty() {
            return;
        }
        loop {
            let (h1, h2) = (max_h(self.src, &l1), max_h(self.dst, &l2));
            if h1.min(h2) < self.cfg.min_height {
                break;
            }
            if h1 != h2 {
                if h1 > h2 {
                    let hs = take(self.src, &mut l1, h1);
                    open(self.src, &mut l1, &hs);
                } else {
                    let hs = take(self.dst, &mut l2, h2);
                    open(self.dst, &mut l2, &hs);
                }
                continue;
            }
            let hs1 = take(self.src, &mut l1, h1);
            let hs2 = take(self.dst, &mut l2, h2);
            let mut used1 = HashSet::new();
            let mut used2 = HashSet::new();
            for &t1 in &hs1 {
                for &t2 in &hs2 {
                    if !self.isomorphic(t1, t2) {
                        continue;
                    }
                    let h = self.src.nodes[t1].hash;
                    if count_src[&h] > 1 || count_dst[&h] > 1 {
                        ambiguous.push((t1, t2));
                    } else {
                        self.link_subtrees(t1, t2);
                    }
                    used1.insert(t1);
                    used2.insert(t2);
                }
            }
            let rest1: Vec<usize> = hs1.into_iter().filter(|t| !used1.contains(t)).collect();
            let rest2: Vec<usize> = hs2.into_iter().filter(|t| !used2.contains(t)).collect();
            open(self.src, &mut l1, &rest1);
            open(self.dst, &mut l2, &rest2);
        }
        // resolve ambiguous candidates: parent similarity, then same position,
        // then source order
        let mut scored: Vec<(f64, bool, usize, usize)> = ambiguous
            .into_iter()
            .map(|(s, d)| {
                let dice = match (self.src.nodes[s].parent, self.dst.nodes[d].parent) {
                    (Some(ps), Some(pd)) => self.dice(ps, pd),
                    _ => 0.0,
                };
                (dice, self.src.nodes[s].pos == self.dst.nodes[d].pos, s, d)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));
        for (_, _, s, d) in scored {
            if self.m.src_to_dst[s].is_none() && self.m.dst_to_src[d].is_none() {
                self.link_subtrees(s, d);
            }
        }
    }

    fn bottom_up(&mut self) {
        if self.src.is_empty() || self.dst.is_empty() {
            return;
        }
        for s in self.src.postorder() {
            if s == 0 {
                if self.m.src_to_dst[0].is_none() && self.m.dst_to_src[0].is_none() && self.compatible(0, 0) {
                    self.m.link(0, 0);
                    self.recover(0, 0);
                }
                break;
            }
            if self.m.src_to_dst[s].is_some() || self.src.nodes[s].children.is_empty() {
                continue;
            }
            let mut seen = HashSet::new();
            let mut candidates = Vec::new();
            for x in self.src.descendants(s) {
                let Some(y) = self.m.src_to_dst[x] else { continue };
                let mut p = self.dst.nodes[y].parent;
                while let Some(c) = p {
                    if !seen.insert(c) {
                        break;
                    }
                    if c != 0 && self.m.dst_to_src[c].is_none() && self.compatible(s, c) {
                        candidates.push(c);
                    }
                    p = self.dst.nodes[c].parent;
                }
            }
            let mut best: Option<(f64, bool, usize)> = None;
            for c in candidates {
                let score = (self.dice(s, c), self.src.nodes[s].pos == self.dst.nodes[c].pos, c);
                let better = match best {
                    None => true,
                    Some(b) => {
                        score.0 > b.0 || (score.0 == b.0 && (score.1 && !b.1 || (score.1 == b.1 && score.2 < b.2)))
                    }
                };
                if better {
                    best = Some(score);
                }
            }
            if let Some((dice, _, d)) = best {
                if dice > self.cfg.min_dice {
                    self.m.link(s, d);
                    self.recover(s, d);
                }
            }
        }
    }

    fn unmatched_children(&self, s: usize, d: usize) -> (Vec<usize>, Vec<usize>) {
        let a = self.src.nodes[s].children.iter().copied().filter(|&c| self.m.src_to_dst[c].is_none()).collect();
        let b = self.dst.nodes[d].children.iter().copied().filter(|&c| self.m.dst_to_src[c].is_none()).collect();
        (a, b)
    }

    fn recover(&mut self, s: usize, d: usize) {
        let open_src = self.src.descendants(s).any(|x| self.m.src_to_dst[x].is_none());
        let open_dst = self.dst.descendants(d).any(|y| self.m.dst_to_src[y].is_none());
        if !(open_src && open_dst) {
            return;
        }
        let max = self.cfg.max_recovery_size;
        if self.src.nodes[s].size <= max && self.dst.nodes[d].size <= max {
            for (x, y) in zs_mapping(self.src, s, self.dst, d) {
                if self.m.src_to_dst[x].is_none() && self.m.dst_to_src[y].is_none() && self.compatible(x, y) {
                    self.m.link(x, y);
                }
            }
        } else {
            self.recover_simple(s, d);
        }
    }

    /// Match leftover children of a matched pair: equal subtrees in order,
    /// then same-shape subtrees in order, then children whose kind occurs
    /// exactly once on both sides (recursively).
    fn recover_simple(&mut self, s: usize, d: usize) {
        let (a, b) = self.unmatched_children(s, d);
        for (x, y) in lcs(&a, &b, |x, y| self.isomorphic(x, y)) {
            self.link_subtrees(x, y);
        }
        let (a, b) = self.unmatched_children(s, d);
        for (x, y) in lcs(&a, &b, |x, y| self.struct_isomorphic(x, y)) {
            self.link_subtrees(x, y);
        }
        let (a, b) = self.unmatched_children(s, d);
        let mut hist: HashMap<&str, (Vec<usize>, Vec<usize>)> = HashMap::new();
        for &x in &a {
            hist.entry(compat(&self.src.nodes[x].kind)).or_default().0.push(x);
        }
        for &y in &b {
            hist.entry(compat(&self.dst.nodes[y].kind)).or_default().1.push(y);
        }
        let mut unique: Vec<(usize, usize)> =
            hist.values().filter(|(x, y)| x.len() == 1 && y.len() == 1).map(|(x, y)| (x[0], y[0])).collect();
        unique.sort_unstable();
        for (x, y) in unique {
            self.m.link(x, y);
            self.recover_simple(x, y);
        }
    }
}

/// Postorder view of a subtree, 1-based, with leftmost leaf descendants.
struct ZsTree {
    ids: Vec<usize>,
    lld: Vec<usize>,
    keyroots: Vec<usize>,
}

impl ZsTree {
    fn new(t: &DiffTree, root: usize) -> Self {
        let mut ids = vec![usize::MAX];
        let mut lld = vec![0];
        fn walk(t: &DiffTree, i: usize, ids: &mut Vec<usize>, lld: &mut Vec<usize>) -> usize {
            let mut first = None;
            for &c in &t.nodes[i].children {
                let l = walk(t, c, ids, lld);
                first.get_or_insert(l);
            }
            ids.push(i);
            let l = first.unwrap_or(ids.len() - 1);
            lld.push(l);
            l
        }
        walk(t, root, &mut ids, &mut lld);
        let n = ids.len() - 1;
        let mut seen = HashSet::new();
        let mut keyroots: Vec<usize> = (1..=n).rev().filter(|&k| seen.insert(lld[k])).collect();
        keyroots.sort_unstable();
        ZsTree { ids, lld, keyroots }
    }
}

/// Optimal unit-cost mapping between two subtrees (Zhang-Shasha with
/// backtracking). Incompatible kinds are never paired.
fn zs_mapping(src: &DiffTree, s: usize, dst: &DiffTree, d: usize) -> Vec<(usize, usize)> {
    let a = ZsTree::new(src, s);
    let b = ZsTree::new(dst, d);
    let (n, m) = (a.ids.len() - 1, b.ids.len() - 1);
    let upd = |i: usize, j: usize| -> u32 {
        let (x, y) = (&src.nodes[a.ids[i]], &dst.nodes[b.ids[j]]);
        if x.kind == y.kind && x.label == y.label {
            0
        } else if compat(&x.kind) == compat(&y.kind) {
            1
        } else {
            3
        }
    };
    let mut td = vec![vec![0u32; m + 1]; n + 1];
    let mut fd = vec![vec![0u32; m + 1]; n + 1];
    let forest = |i: usize, j: usize, td: &mut Vec<Vec<u32>>, fd: &mut Vec<Vec<u32>>| {
        let (li, lj) = (a.lld[i], b.lld[j]);
        fd[li - 1][lj - 1] = 0;
        for di in li..=i {
            fd[di][lj - 1] = fd[di - 1][lj - 1] + 1;
        }
        for dj in lj..=j {
            fd[li - 1][dj] = fd[li - 1][dj - 1] + 1;
        }
        for di in li..=i {
            for dj in lj..=j {
                let best = (fd[di - 1][dj] + 1).min(fd[di][dj - 1] + 1);
                if a.lld[di] == li && b.lld[dj] == lj {
                    fd[di][dj] = best.min(fd[di - 1][dj - 1] + upd(di, dj));
                    td[di][dj] = fd[di][dj];
                } else {
                    fd[di][dj] = best.min(fd[a.lld[di] - 1][b.lld[dj] - 1] + td[di][dj]);
                }
            }
        }
    };
    for &i in &a.keyroots {
        for &j in &b.keyroots {
            forest(i, j, &mut td, &mut fd);
        }
    }
    let mut out = Vec::new();
    let mut stack = vec![(n, m)];
    let mut first = true;
    while let Some((last_row, last_col)) = stack.pop() {
        if !first {
            forest(last_row, last_col, &mut td, &mut fd);
        }
        first = false;
        let (first_row, first_col) = (a.lld[last_row] - 1, b.lld[last_col] - 1);
        let (mut row, mut col) = (last_row, last_col);
        while row > first_row || col > first_col {
            if row > first_row && fd[row - 1][col] + 1 == fd[row][col] {
                row -= 1;
            } else if col > first_col && fd[row][col - 1] + 1 == fd[row][col] {
                col -= 1;
            } else if a.lld[row] == a.lld[last_row] && b.lld[col] == b.lld[last_col] {
                if upd(row, col) < 3 {
                    out.push((a.ids[row], b.ids[col]));
                }
                row -= 1;
                col -= 1;
            } else {
                stack.push((row, col));
                row = a.lld[row] - 1;
                col = b.lld[col] - 1;
            }
        }
    }
    out
}

/// Longest common subsequence of two id lists under `eq`, as index pairs.
fn lcs(a: &[usize], b: &[usize], eq: impl Fn(usize, usize) -> bool) -> Vec<(usize, usize)> {
    let (n, m) = (a.len(), b.len());
    let mut t = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            t[i][j] = if eq(a[i], b[j]) { t[i + 1][j + 1] + 1 } else { t[i + 1][j].max(t[i][j + 1]) };
        }
    }
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < n && j < m {
        if eq(a[i], b[j]) && t[i][j] == t[i + 1][j + 1] + 1 {
            out.push((a[i], b[j]));
            i += 1;
            j += 1;
        } else if t[i + 1][j] >= t[i][j + 1] {
            i += 1;
        } else {
            j += 1;
        }
    }
    out
}

pub fn match_trees(src: &DiffTree, dst: &DiffTree, cfg: &DiffConfig) -> Mapping {
    let mut m = Matcher { src, dst, cfg: *cfg, m: Mapping::new(src.len(), dst.len()) };
    m.top_down();
    m.bottom_up();
    m.m
}

/// A node of the tree being edited.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRef {
    /// Parent of the root, present so that the root itself can be replaced.
    VirtualRoot,
    /// Node of the solution tree, by preorder id.
    Solution(usize),
    /// The k-th node created by an insert.
    Inserted(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    /// Create `Inserted(k)` (k counts inserts so far) under `parent` at
    /// `index`. `variant` is the preorder id of the node it stands for.
    Insert {
        variant: usize,
        kind: String,
        label: String,
        parent: NodeRef,
        index: usize,
    },
    Delete {
        node: NodeRef,
    },
    Update {
        node: NodeRef,
        kind: String,
        label: String,
    },
    /// Detach `node`, then attach it under `parent` at `index`.
    Move {
        node: NodeRef,
        parent: NodeRef,
        index: usize,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditScript {
    pub operations: Vec<EditOp>,
}

impl EditScript {
    pub fn len(&self) -> usize {
        self.operations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operations.is_empty()
    }

    /// Replay the script on `src` and return the resulting tree.
    pub fn apply(&self, src: &DiffTree) -> Result<LabeledTree> {
        let mut w = WorkTree::from_src(src);
        let bad = |msg: &str| Error::Config(format!("invalid edit script: {msg}"));
        for op in &self.operations {
            match op {
                EditOp::Insert { kind, label, parent, index, .. } => {
                    let p = w.idx(*parent).ok_or_else(|| bad("unknown parent"))?;
                    let n = w.add(kind.clone(), label.clone());
                    if *index > w.children[p].len() {
                        return Err(bad("insert index out of range"));
                    }
                    w.attach(n, p, *index);
                }
                EditOp::Delete { node } => {
                    let n = w.idx(*node).ok_or_else(|| bad("unknown node"))?;
                    if !w.children[n].is_empty() {
                        return Err(bad("delete of a node with children"));
                    }
                    w.detach(n);
                }
                EditOp::Update { node, kind, label } => {
                    let n = w.idx(*node).ok_or_else(|| bad("unknown node"))?;
                    w.kinds[n] = kind.clone();
                    w.labels[n] = label.clone();
                }
                EditOp::Move { node, parent, index } => {
                    let n = w.idx(*node).ok_or_else(|| bad("unknown node"))?;
                    let p = w.idx(*parent).ok_or_else(|| bad("unknown parent"))?;
                    w.detach(n);
                    if *index > w.children[p].len() {
                        return Err(bad("move index out of range"));
                    }
                    w.attach(n, p, *index);
                }
            }
        }
        match w.children[0].as_slice() {
            [root] => Ok(w.labeled(*root)),
            _ => Err(bad("result does not have a single root")),
        }
    }
}

/// Mutable tree used while generating and replaying scripts. Index 0 is the
/// virtual root, `1 + i` is solution node `i`, later indices are inserts.
struct WorkTree {
    n_src: usize,
    kinds: Vec<String>,
    labels: Vec<String>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
}

impl WorkTree {
    fn from_src(src: &DiffTree) -> Self {
        let n = src.len();
        let mut w = WorkTree {
            n_src: n,
            kinds: vec![String::new()],
            labels: vec![String::new()],
            parent: vec![None],
            children: vec![if n > 0 { vec![1] } else { Vec::new() }],
        };
        for node in &src.nodes {
            w.kinds.push(node.kind.clone());
            w.labels.push(node.label.clone());
            w.parent.push(Some(node.parent.map_or(0, |p| p + 1)));
            w.children.push(node.children.iter().map(|c| c + 1).collect());
        }
        w
    }

    fn idx(&self, r: NodeRef) -> Option<usize> {
        let i = match r {
            NodeRef::VirtualRoot => 0,
            NodeRef::Solution(i) if i < self.n_src => i + 1,
            NodeRef::Solution(_) => return None,
            NodeRef::Inserted(k) => 1 + self.n_src + k,
        };
        (i < self.kinds.len()).then_some(i)
    }

    fn nref(&self, i: usize) -> NodeRef {
        if i == 0 {
            NodeRef::VirtualRoot
        } else if i <= self.n_src {
            NodeRef::Solution(i - 1)
        } else {
            NodeRef::Inserted(i - 1 - self.n_src)
        }
    }

    fn add(&mut self, kind: String, label: String) -> usize {
        self.kinds.push(kind);
        self.labels.push(label);
        self.parent.push(None);
        self.children.push(Vec::new());
        self.kinds.len() - 1
    }

    fn detach(&mut self, n: usize) {
        if let Some(p) = self.parent[n].take() {
            self.children[p].retain(|&c| c != n);
        }
    }

    fn attach(&mut self, n: usize, p: usize, index: usize) {
        let index = index.min(self.children[p].len());
        self.children[p].insert(index, n);
        self.parent[n] = Some(p);
    }

    fn position(&self, n: usize) -> usize {
        let p = self.parent[n].expect("attached node");
        self.children[p].iter().position(|&c| c == n).expect("child of its parent")
    }

    fn labeled(&self, i: usize) -> LabeledTree {
        LabeledTree {
            kind: self.kinds[i].clone(),
            label: self.labels[i].clone(),
            children: self.children[i].iter().map(|&c| self.labeled(c)).collect(),
        }
    }
}

struct ScriptGen<'a> {
    dst: &'a DiffTree,
    w: WorkTree,
    /// work index -> dst id (dst id `dst.len()` is the virtual root)
    w2x: HashMap<usize, usize>,
    x2w: Vec<Option<usize>>,
    src_in_order: HashSet<usize>,
    dst_in_order: HashSet<usize>,
    ops: Vec<EditOp>,
    inserted: usize,
}

impl<'a> ScriptGen<'a> {
    fn dst_parent(&self, x: usize) -> usize {
        self.dst.nodes[x].parent.unwrap_or(self.dst.len())
    }

    fn dst_children(&self, y: usize) -> Vec<usize> {
        if y == self.dst.len() {
            vec![0]
        } else {
            self.dst.nodes[y].children.clone()
        }
    }

    fn link(&mut self, w: usize, x: usize) {
        self.w2x.insert(w, x);
        self.x2w[x] = Some(w);
    }

    fn partner_of_dst(&self, y: usize) -> Option<usize> {
        if y == self.dst.len() {
            Some(0)
        } else {
            self.x2w[y]
        }
    }

    fn find_pos(&self, x: usize) -> usize {
        let sibs = self.dst_children(self.dst_parent(x));
        if let Some(&first) = sibs.iter().find(|c| self.dst_in_order.contains(c)) {
            if first == x {
                return 0;
            }
        }
        let xpos = sibs.iter().position(|&c| c == x).expect("x among its siblings");
        let Some(&v) = sibs[..xpos].iter().rev().find(|c| self.dst_in_order.contains(c)) else {
            return 0;
        };
        let u = self.x2w[v].expect("in-order node has a partner");
        self.w.position(u) + 1
    }

    fn align_children(&mut self, w: usize, x: usize) {
        for c in self.w.children[w].clone() {
            self.src_in_order.remove(&c);
        }
        let xc = self.dst_children(x);
        for c in &xc {
            self.dst_in_order.remove(c);
        }
        let s1: Vec<usize> = self.w.children[w]
            .iter()
            .copied()
            .filter(|c| self.w2x.get(c).is_some_and(|&p| self.dst_parent(p) == x))
            .collect();
        let s2: Vec<usize> =
            xc.iter().copied().filter(|&c| self.x2w[c].is_some_and(|p| self.w.parent[p] == Some(w))).collect();
        let common = lcs(&s1, &s2, |a, b| self.w2x.get(&a) == Some(&b));
        let in_lcs: HashSet<(usize, usize)> = common.iter().copied().collect();
        for &(a, b) in &common {
            self.src_in_order.insert(a);
            self.dst_in_order.insert(b);
        }
        for b in s2 {
            let a = self.x2w[b].expect("filtered on partner");
            if in_lcs.contains(&(a, b)) {
                continue;
            }
            self.w.detach(a);
            let k = self.find_pos(b);
            self.w.attach(a, w, k);
            self.ops.push(EditOp::Move { node: self.w.nref(a), parent: self.w.nref(w), index: k });
            self.src_in_order.insert(a);
            self.dst_in_order.insert(b);
        }
    }

    fn run(mut self) -> EditScript {
        if self.dst.is_empty() {
            // everything goes
        } else {
            let mut queue = VecDeque::from([0usize]);
            while let Some(x) = queue.pop_front() {
                queue.extend(self.dst.nodes[x].children.iter().copied());
                let y = self.dst_parent(x);
                let z = self.partner_of_dst(y).expect("parent visited first");
                let w = match self.x2w[x] {
                    None => {
                        let k = self.find_pos(x);
                        let node = &self.dst.nodes[x];
                        let w = self.w.add(node.kind.clone(), node.label.clone());
                        self.w.attach(w, z, k);
                        self.ops.push(EditOp::Insert {
                            variant: x,
                            kind: node.kind.clone(),
                            label: node.label.clone(),
                            parent: self.w.nref(z),
                            index: k,
                        });
                        self.inserted += 1;
                        self.link(w, x);
                        w
                    }
                    Some(w) => {
                        let node = &self.dst.nodes[x];
                        if self.w.kinds[w] != node.kind || self.w.labels[w] != node.label {
                            self.w.kinds[w] = node.kind.clone();
                            self.w.labels[w] = node.label.clone();
                            self.ops.push(EditOp::Update {
                                node: self.w.nref(w),
                                kind: node.kind.clone(),
                                label: node.label.clone(),
                            });
                        }
                        if self.w.parent[w] != Some(z) {
                            self.w.detach(w);
                            let k = self.find_pos(x);
                            self.w.attach(w, z, k);
                            self.ops.push(EditOp::Move { node: self.w.nref(w), parent: self.w.nref(z), index: k });
                        }
                        w
                    }
                };
                self.src_in_order.insert(w);
                self.dst_in_order.insert(x);
                self.align_children(w, x);
            }
        }
        // deletes, children first
        let mut post = Vec::new();
        fn walk(w: &WorkTree, i: usize, out: &mut Vec<usize>) {
            for &c in &w.children[i] {
                walk(w, c, out);
            }
            out.push(i);
        }
        walk(&self.w, 0, &mut post);
        for i in post {
            if i != 0 && !self.w2x.contains_key(&i) {
                self.w.detach(i);
                self.ops.push(EditOp::Delete { node: self.w.nref(i) });
            }
        }
        EditScript { operations: self.ops }
    }
}

pub fn edit_script(src: &DiffTree, dst: &DiffTree, mapping: &Mapping) -> EditScript {
    let mut g = ScriptGen {
        dst,
        w: WorkTree::from_src(src),
        w2x: HashMap::new(),
        x2w: vec![None; dst.len()],
        src_in_order: HashSet::new(),
        dst_in_order: HashSet::new(),
        ops: Vec::new(),
        inserted: 0,
    };
    for (s, d) in mapping.pairs() {
        g.link(s + 1, d);
    }
    g.w2x.insert(0, dst.len());
    g.run()
}

/// Where a perturbed location ended up in the variant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Correspondence {
    Matched { variant: NodePath, identical: bool },
    Deleted,
}

impl Correspondence {
    /// The variant differs from the solution at this location.
    pub fn is_changed(&self) -> bool {
        !matches!(self, Correspondence::Matched { identical: true, .. })
    }
}

/// Matching plus edit script between a solution and a variant.
#[derive(Clone, Debug)]
pub struct Diff {
    pub src: DiffTree,
    pub dst: DiffTree,
    pub mapping: Mapping,
    pub script: EditScript,
}

impl Diff {
    pub fn new(solution: &Tree, variant: &Tree, cfg: &DiffConfig) -> Self {
        Self::between(DiffTree::from_syntax(solution), DiffTree::from_syntax(variant), cfg)
    }

    pub fn between(src: DiffTree, dst: DiffTree, cfg: &DiffConfig) -> Self {
        let mapping = match_trees(&src, &dst, cfg);
        let script = edit_script(&src, &dst, &mapping);
        Diff { src, dst, mapping, script }
    }

    pub fn matching(&self) -> Matching {
        Matching {
            pairs: self.mapping.pairs().map(|(s, d)| (self.src.path(s).clone(), self.dst.path(d).clone())).collect(),
            unmatched_solution: (0..self.src.len())
                .filter(|&s| self.mapping.dst_of(s).is_none())
                .map(|s| self.src.path(s).clone())
                .collect(),
            unmatched_variant: (0..self.dst.len())
                .filter(|&d| self.mapping.src_of(d).is_none())
                .map(|d| self.dst.path(d).clone())
                .collect(),
        }
    }

    fn location_ids(&self, locations: &[Location]) -> Result<Vec<usize>> {
        locations
            .iter()
            .map(|l| {
                self.src
                    .id_of(&l.path)
                    .filter(|&id| self.src.span(id) == l.span)
                    .ok_or_else(|| Error::LocationNotFound(l.path.0.clone()))
            })
            .collect()
    }

    /// Classify each location as matched or deleted. A match is identical
    /// when the texts are byte-equal and the node stayed in place: its parent
    /// maps to the partner's parent and the script does not move it. This
    /// keeps two swapped subtrees from counting as unchanged.
    pub fn locate_perturbed(&self, locations: &[Location]) -> Result<Vec<Correspondence>> {
        // Moves under a node of the solution reorder it; moves under a new
        // node only follow a restructure around them.
        let displaced: HashSet<usize> = self
            .script
            .operations
            .iter()
            .filter_map(|op| match op {
                EditOp::Move { node: NodeRef::Solution(i), parent: NodeRef::Solution(_), .. } => Some(*i),
                _ => None,
            })
            .collect();
        let src_leaves = self.src.leaves();
        Ok(self
            .location_ids(locations)?
            .into_iter()
            .map(|s| match self.mapping.dst_of(s) {
                Some(d) => Correspondence::Matched {
                    variant: self.dst.path(d).clone(),
                    identical: self.src.text(s) == self.dst.text(d)
                        && !self.src.ancestors_or_self(s).any(|a| displaced.contains(&a))
                        && (self.same_parent(s, d) || self.in_slot(s, &src_leaves)),
                },
                None => Correspondence::Deleted,
            })
            .collect())
    }

    fn same_parent(&self, s: usize, d: usize) -> bool {
        match (self.src.parent(s), self.dst.parent(d)) {
            (None, None) => true,
            (Some(ps), Some(pd)) => self.mapping.dst_of(ps) == Some(pd),
            _ => false,
        }
    }

    /// Whether the variant text between the partners of the leaves around
    /// `s` is exactly the text of `s`.
    fn in_slot(&self, s: usize, src_leaves: &[usize]) -> bool {
        let span = self.src.span(s);
        let prev = src_leaves.iter().rev().find(|&&l| self.src.span(l).end <= span.start);
        let next = src_leaves.iter().find(|&&l| self.src.span(l).start >= span.end);
        let root = self.dst.span(0);
        let lo = match prev {
            None => Some(root.start),
            Some(&p) => self.mapping.dst_of(p).map(|q| self.dst.span(q).end),
        };
        let hi = match next {
            None => Some(root.end),
            Some(&n) => self.mapping.dst_of(n).map(|q| self.dst.span(q).start),
        };
        match (lo, hi) {
            (Some(lo), Some(hi)) => lo <= hi && self.dst.source[lo..hi].trim() == self.src.text(s).trim(),
            _ => false,
        }
    }

    /// Whether the script touches anything outside the location subtrees.
    /// An insert is inside when its parent is inside, or when it fills a gap
    /// left only by location nodes.
    pub fn changes_outside(&self, locations: &[Location]) -> Result<bool> {
        let ids = self.location_ids(locations)?;
        let inside = |s: usize| ids.iter().any(|&l| s == l || self.src.is_descendant(s, l));
        let mut inserted_inside: Vec<bool> = Vec::new();
        for op in &self.script.operations {
            let ok = match op {
                EditOp::Insert { variant, parent, .. } => {
                    let v = match parent {
                        NodeRef::Inserted(k) => inserted_inside[*k],
                        NodeRef::Solution(p) => inside(*p) || self.fills_location_gap(*variant, *p, &inside),
                        NodeRef::VirtualRoot => false,
                    };
                    inserted_inside.push(v);
                    v
                }
                EditOp::Delete { node } | EditOp::Update { node, .. } | EditOp::Move { node, .. } => match node {
                    NodeRef::Solution(s) => inside(*s),
                    NodeRef::Inserted(k) => inserted_inside[*k],
                    NodeRef::VirtualRoot => false,
                },
            };
            if !ok {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// The variant node `x`, child of the partner of solution node `p`, sits
    /// where the solution had only location nodes.
    fn fills_location_gap(&self, x: usize, p: usize, inside: &impl Fn(usize) -> bool) -> bool {
        let Some(y) = self.dst.parent(x) else { return false };
        let sibs = self.dst.children(y);
        let xpos = sibs.iter().position(|&c| c == x).expect("x among its siblings");
        let anchored = |d: usize| self.mapping.src_of(d).filter(|&s| self.src.parent(s) == Some(p));
        let left = sibs[..xpos].iter().rev().find_map(|&d| anchored(d));
        let right = sibs[xpos + 1..].iter().find_map(|&d| anchored(d));
        let pc = self.src.children(p);
        let from = left.map_or(0, |s| self.src.nodes[s].pos + 1);
        let to = right.map_or(pc.len(), |s| self.src.nodes[s].pos);
        from < to && pc[from..to].iter().all(|&s| inside(s))
    }
}
