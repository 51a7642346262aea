//! Grammar-driven formula generator with an independent expansion oracle.
//!
//! A derivation tree is drawn at random, rendered to text, and expanded by
//! walking the tree with a running multiplier. The parser never sees the tree.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use curation_core::parsers::{normalize_formula, parse_composition, Composition};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SYMBOLS: &[&str] = &[
    "H", "B", "C", "N", "O", "F", "Mg", "Al", "Si", "P", "S", "K", "Ca", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu",
    "Zn", "Ga", "As", "Se", "Sr", "Y", "Zr", "Nb", "Mo", "Ru", "Pd", "In", "Sn", "Sb", "Te", "Ba", "La", "Ce", "Pr",
    "Nd", "Sm", "Gd", "Hg", "Tl", "Pb", "Bi", "U",
];
const VARS: &[char] = &['x', 'y', 'z', 'δ', 'd'];

#[derive(Debug, Clone)]
pub enum Count {
    One,
    Int(u32),
    /// Hundredths.
    Decimal(u32),
    /// `base - var` or `base + var`.
    Symbolic {
        base: u32,
        plus: bool,
        var: char,
    },
}

#[derive(Debug, Clone)]
pub enum Node {
    Element(&'static str, Count),
    Group {
        square: bool,
        items: Vec<Node>,
        count: Count,
    },
}

fn random_count(rng: &mut ChaCha8Rng, allow_vars: bool) -> Count {
    match rng.random_range(0..10) {
        0..=2 => Count::One,
        3..=5 => Count::Int(rng.random_range(1..=12)),
        6 | 7 => {
            let mut h = rng.random_range(1..=399);
            if h % 100 == 0 {
                h += 5;
            }
            Count::Decimal(h)
        }
        _ if allow_vars => Count::Symbolic {
            base: rng.random_range(1..=8),
            plus: rng.random_bool(0.3),
            var: *VARS.choose(rng).unwrap(),
        },
        _ => Count::Int(2),
    }
}

fn random_items(rng: &mut ChaCha8Rng, depth: u32, allow_vars: bool) -> Vec<Node> {
    let n = rng.random_range(1..=4);
    (0..n)
        .map(|_| {
            if depth < 2 && rng.random_bool(0.25) {
                Node::Group {
                    square: rng.random_bool(0.3),
                    items: random_items(rng, depth + 1, allow_vars),
                    count: random_count(rng, allow_vars),
                }
            } else {
                Node::Element(SYMBOLS.choose(rng).unwrap(), random_count(rng, allow_vars))
            }
        })
        .collect()
}

fn render_count(c: &Count, out: &mut String) {
    match c {
        Count::One => {}
        Count::Int(n) => out.push_str(&n.to_string()),
        Count::Decimal(h) => out.push_str(&format!("{}.{:02}", h / 100, h % 100)),
        Count::Symbolic { base, plus, var } => {
            out.push_str(&base.to_string());
            out.push(if *plus { '+' } else { '-' });
            out.push(*var);
        }
    }
}

pub fn render(items: &[Node]) -> String {
    let mut out = String::new();
    for node in items {
        match node {
            Node::Element(sym, count) => {
                out.push_str(sym);
                render_count(count, &mut out);
            }
            Node::Group { square, items, count } => {
                out.push(if *square { '[' } else { '(' });
                out.push_str(&render(items));
                out.push(if *square { ']' } else { ')' });
                render_count(count, &mut out);
            }
        }
    }
    out
}

fn factor(c: &Count, vars: &mut BTreeSet<String>) -> f64 {
    match c {
        Count::One => 1.0,
        Count::Int(n) => f64::from(*n),
        Count::Decimal(h) => f64::from(*h) / 100.0,
        Count::Symbolic { var, .. } => {
            vars.insert(var.to_string());
            1.0
        }
    }
}

fn expand(items: &[Node], multiplier: f64, atoms: &mut BTreeMap<String, f64>, vars: &mut BTreeSet<String>) {
    for node in items {
        match node {
            Node::Element(sym, count) => {
                let f = factor(count, vars);
                *atoms.entry(sym.to_string()).or_insert(0.0) += multiplier * f;
            }
            Node::Group { items, count, .. } => {
                let f = factor(count, vars);
                expand(items, multiplier * f, atoms, vars);
            }
        }
    }
}

pub fn expected(items: &[Node]) -> Composition {
    let mut atoms = BTreeMap::new();
    let mut vars = BTreeSet::new();
    expand(items, 1.0, &mut atoms, &mut vars);
    if vars.is_empty() {
        Composition::Resolved { elements: atoms }
    } else {
        Composition::Unresolved { variables: vars }
    }
}

pub fn same_composition(a: &Composition, b: &Composition) -> bool {
    match (a, b) {
        (Composition::Resolved { elements: x }, Composition::Resolved { elements: y }) => {
            x.len() == y.len()
                && x.iter()
                    .zip(y)
                    .all(|((ka, va), (kb, vb))| ka == kb && (va - vb).abs() <= 1e-9)
        }
        (Composition::Unresolved { variables: x }, Composition::Unresolved { variables: y }) => x == y,
        _ => false,
    }
}

/// The first `n` generated formulas with their expected compositions.
pub fn sample(n: usize, seed: u64) -> Vec<(String, Composition)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let tree = random_items(&mut rng, 0, i % 3 == 0);
            (render(&tree), expected(&tree))
        })
        .collect()
}

/// Generates `n` formulas and returns a description of each disagreement.
pub fn check_generated(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    for i in 0..n {
        let allow_vars = i % 3 == 0;
        let tree = random_items(&mut rng, 0, allow_vars);
        let text = render(&tree);
        let want = expected(&tree);
        let got = parse_composition(&text);
        if !same_composition(&want, &got) {
            failures.push(format!("{text:?}: expected {want:?}, parsed {got:?}"));
        }
    }
    failures
}

const NOISE: &[char] = &[
    'a', 'B', 'x', 'δ', '2', '₂', '³', '⁻', '−', '–', ' ', ' ', '\t', '\n', '\u{a0}', ',', '.', ';', ':', '!', '?',
    '\'', '"', '(', ')', '[', '-', '+', '/', 'é', '中',
];

pub fn random_noise(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(0..=24);
    (0..len).map(|_| *NOISE.choose(rng).unwrap()).collect()
}

/// Returns the inputs on which normalisation is not idempotent.
pub fn check_normalize_idempotent(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| random_noise(&mut rng))
        .filter(|s| {
            let once = normalize_formula(s);
            normalize_formula(&once) != once
        })
        .collect()
}
