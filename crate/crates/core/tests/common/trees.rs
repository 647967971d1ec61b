// SPDX-License-Identifier: Apache-2.0
//! Random labelled trees, tree mutations, a Zhang-Shasha edit distance and
//! single-token variants of fixture methods.

use ctxbug::differ::LabeledTree;
use ctxbug::perturb::Location;
use ctxbug::syntax::{self, Grammar, Node, SpanEdit, Tree};
use rand::seq::SliceRandom;
use rand::Rng;

const INNER: &[&str] = &["A", "B", "C"];
const LEAF: &[&str] = &["x", "y"];
const LABELS: &[&str] = &["p", "q", "r", "s", "t"];

fn random_leaf(rng: &mut impl Rng) -> LabeledTree {
    LabeledTree::leaf(*LEAF.choose(rng).unwrap(), *LABELS.choose(rng).unwrap())
}

/// A random tree with exactly `size` nodes.
pub fn random_tree(rng: &mut impl Rng, size: usize) -> LabeledTree {
    if size <= 1 {
        return random_leaf(rng);
    }
    let mut rest = size - 1;
    let k = rng.gen_range(1..=rest.min(4));
    let mut children = Vec::new();
    for i in 0..k {
        let left = k - i - 1;
        let take = if left == 0 { rest } else { rng.gen_range(1..=rest - left) };
        rest -= take;
        children.push(random_tree(rng, take));
    }
    LabeledTree::node(*INNER.choose(rng).unwrap(), children)
}

fn paths(t: &LabeledTree, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    out.push(prefix.clone());
    for (i, c) in t.children.iter().enumerate() {
        prefix.push(i);
        paths(c, prefix, out);
        prefix.pop();
    }
}

fn all_paths(t: &LabeledTree) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    paths(t, &mut Vec::new(), &mut out);
    out
}

fn at<'a>(t: &'a mut LabeledTree, path: &[usize]) -> &'a mut LabeledTree {
    path.iter().fold(t, |n, &i| &mut n.children[i])
}

/// Apply one random edit: relabel, rekind, delete (subtree or splice),
/// insert a leaf, or move a subtree.
pub fn mutate(rng: &mut impl Rng, t: &mut LabeledTree) {
    let ps = all_paths(t);
    let p = ps.choose(rng).unwrap().clone();
    match rng.gen_range(0..6) {
        0 => {
            let n = at(t, &p);
            if n.children.is_empty() {
                n.label = LABELS.choose(rng).unwrap().to_string();
            } else {
                n.kind = INNER.choose(rng).unwrap().to_string();
            }
        }
        1 | 2 if !p.is_empty() => {
            let (last, parent) = p.split_last().unwrap();
            let removed = at(t, parent).children.remove(*last);
            if rng.gen_bool(0.5) {
                let pn = at(t, parent);
                for (i, c) in removed.children.into_iter().enumerate() {
                    pn.children.insert(last + i, c);
                }
            }
        }
        1..=3 => {
            let n = at(t, &p);
            if !n.children.is_empty() {
                let i = rng.gen_range(0..=n.children.len());
                n.children.insert(i, random_leaf(rng));
            }
        }
        _ if !p.is_empty() => {
            let (last, parent) = p.split_last().unwrap();
            let moved = at(t, parent).children.remove(*last);
            let targets: Vec<Vec<usize>> = all_paths(t).into_iter().filter(|q| !at(t, q).children.is_empty()).collect();
            let Some(q) = targets.choose(rng).cloned() else {
                at(t, parent).children.insert(*last, moved);
                return;
            };
            let n = at(t, &q);
            let i = rng.gen_range(0..=n.children.len());
            n.children.insert(i, moved);
        }
        _ => {}
    }
}

/// Unit-cost ordered tree edit distance (insert, delete, relabel).
pub fn zhang_shasha(a: &LabeledTree, b: &LabeledTree) -> usize {
    ted(a, b, false)
}

/// Edit distance where only labels can be relabelled; a kind change costs
/// a delete plus an insert.
pub fn zhang_shasha_kind_preserving(a: &LabeledTree, b: &LabeledTree) -> usize {
    ted(a, b, true)
}

fn ted(a: &LabeledTree, b: &LabeledTree, keep_kinds: bool) -> usize {
    struct Post<'a> {
        nodes: Vec<&'a LabeledTree>,
        lml: Vec<usize>,
        keyroots: Vec<usize>,
    }
    fn post(t: &LabeledTree) -> Post<'_> {
        fn walk<'a>(t: &'a LabeledTree, nodes: &mut Vec<&'a LabeledTree>, lml: &mut Vec<usize>) -> usize {
            let mut first = None;
            for c in &t.children {
                let l = walk(c, nodes, lml);
                first.get_or_insert(l);
            }
            let me = nodes.len();
            nodes.push(t);
            let l = first.unwrap_or(me);
            lml.push(l);
            l
        }
        let (mut nodes, mut lml) = (Vec::new(), Vec::new());
        walk(t, &mut nodes, &mut lml);
        let n = nodes.len();
        let keyroots = (0..n).filter(|&i| !(i + 1..n).any(|j| lml[j] == lml[i])).collect();
        Post { nodes, lml, keyroots }
    }
    let (x, y) = (post(a), post(b));
    let (n, m) = (x.nodes.len(), y.nodes.len());
    let mut td = vec![vec![0usize; m]; n];
    let relabel = |i: usize, j: usize| {
        let (p, q) = (x.nodes[i], y.nodes[j]);
        if p.kind != q.kind && keep_kinds {
            2
        } else {
            usize::from(p.kind != q.kind || p.label != q.label)
        }
    };
    for &i in &x.keyroots {
        for &j in &y.keyroots {
            let (li, lj) = (x.lml[i], y.lml[j]);
            let (w, h) = (i - li + 2, j - lj + 2);
            let mut fd = vec![vec![0usize; h]; w];
            for di in 1..w {
                fd[di][0] = fd[di - 1][0] + 1;
            }
            for dj in 1..h {
                fd[0][dj] = fd[0][dj - 1] + 1;
            }
            for di in 1..w {
                for dj in 1..h {
                    let (ii, jj) = (li + di - 1, lj + dj - 1);
                    let del = fd[di - 1][dj] + 1;
                    let ins = fd[di][dj - 1] + 1;
                    if x.lml[ii] == li && y.lml[jj] == lj {
                        fd[di][dj] = del.min(ins).min(fd[di - 1][dj - 1] + relabel(ii, jj));
                        td[ii][jj] = fd[di][dj];
                    } else {
                        let pi = x.lml[ii] - li;
                        let pj = y.lml[jj] - lj;
                        fd[di][dj] = del.min(ins).min(fd[pi][pj] + td[ii][jj]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// A same-class replacement for a leaf token, if it has one.
fn replacement(tree: &Tree, leaf: &Node, parent: Option<&Node>, rng: &mut impl Rng) -> Option<String> {
    let text = tree.node_text(leaf).ok()?;
    const ARITH: &[&str] = &["+", "-", "*", "%", "|", "&", "^", "//"];
    const CMP: &[&str] = &["<", ">", "<=", ">=", "==", "!="];
    const BOOL: &[&str] = &["and", "or"];
    let pick = |set: &[&str], rng: &mut dyn rand::RngCore| -> Option<String> {
        let others: Vec<&&str> = set.iter().filter(|s| **s != text).collect();
        others.choose(rng).map(|s| s.to_string())
    };
    let pk = parent.map(|p| p.kind).unwrap_or("");
    match leaf.kind {
        "identifier" => Some(format!("{text}_zz{}", rng.gen_range(0..100))),
        "integer" => Some(format!("{}", text.parse::<i64>().unwrap_or(0) + rng.gen_range(1..50))),
        "float" => Some(format!("{}.5", rng.gen_range(0..50))),
        "string_content" => Some(format!("{text}#")),
        "true" => Some("False".into()),
        "false" => Some("True".into()),
        k if pk == "binary_operator" && ARITH.contains(&k) => pick(ARITH, rng),
        k if pk == "comparison_operator" && CMP.contains(&k) => pick(CMP, rng),
        k if pk == "boolean_operator" && BOOL.contains(&k) => pick(BOOL, rng),
        _ => None,
    }
}

/// Replace one random token of `source` with a token of the same kind.
/// Returns the variant text and the location of the replaced token.
pub fn single_token_edit(source: &str, rng: &mut impl Rng) -> Option<(String, Location)> {
    let tree = syntax::parse(source, Grammar::Python).ok()?;
    let mut leaves: Vec<(&Node, Option<&Node>)> = Vec::new();
    fn walk<'a>(n: &'a Node, parent: Option<&'a Node>, out: &mut Vec<(&'a Node, Option<&'a Node>)>) {
        if n.is_leaf() {
            out.push((n, parent));
        }
        for c in &n.children {
            walk(c, Some(n), out);
        }
    }
    walk(tree.root(), None, &mut leaves);
    for _ in 0..20 {
        let (leaf, parent) = *leaves.choose(rng)?;
        let Some(new) = replacement(&tree, leaf, parent, rng) else { continue };
        let variant = syntax::splice(source, &[SpanEdit::new(leaf.span, new)]).ok()?;
        let vt = syntax::parse(&variant, Grammar::Python).ok()?;
        let shape = |t: &Tree| -> Vec<(ctxbug::syntax::NodePath, String)> {
            t.preorder()
                .map(|n| (n.path.clone(), if n.path == leaf.path { String::new() } else { n.kind.to_string() }))
                .collect()
        };
        if vt.has_errors() || shape(&vt) != shape(&tree) {
            continue;
        }
        return Some((variant, Location::of(leaf)));
    }
    None
}
