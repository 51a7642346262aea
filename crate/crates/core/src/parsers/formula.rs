//! Chemical formula normalisation and composition parsing.
//!
//! Parsing runs in two stages. The strict stage accepts
//!
//! ```text
//! Formula := (Element Count? | Open Formula Close Count?)+
//! Count   := Term (('+' | '-') Term)*
//! Term    := Decimal Variable? | Variable
//! ```
//!
//! where `Variable` is one of `x y z δ d`. Counts that mention a variable
//! make the composition unresolved. When the strict stage fails, a relaxed
//! stage strips phase prefixes/suffixes, stray hyphens and blanks, then
//! retries the strict grammar once.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::elements::is_element;

pub const VARIABLES: [char; 5] = ['x', 'y', 'z', 'δ', 'd'];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Composition {
    Resolved { elements: BTreeMap<String, f64> },
    Unresolved { variables: BTreeSet<String> },
    ParseError { reason: String },
}

impl Composition {
    pub fn outcome(&self) -> &'static str {
        match self {
            Composition::Resolved { .. } => "resolved",
            Composition::Unresolved { .. } => "unresolved",
            Composition::ParseError { .. } => "parse_error",
        }
    }

    pub fn is_parse_error(&self) -> bool {
        matches!(self, Composition::ParseError { .. })
    }
}

fn map_char(c: char) -> char {
    match c {
        '₀'..='₉' => char::from(b'0' + (c as u32 - '₀' as u32) as u8),
        '⁰' => '0',
        '¹' => '1',
        '²' => '2',
        '³' => '3',
        '⁴'..='⁹' => char::from(b'4' + (c as u32 - '⁴' as u32) as u8),
        '\u{2212}' | '\u{2010}' | '\u{2011}' | '\u{2012}' | '\u{2013}' | '\u{2014}' | '₋' | '⁻' => '-',
        '₊' | '⁺' => '+',
        _ => c,
    }
}

fn is_trailing_punct(c: char) -> bool {
    matches!(c, ',' | ';' | ':' | '.' | '!' | '?' | '\'' | '"')
}

/// Canonical surface form of a formula mention. Idempotent.
pub fn normalize_formula(raw: &str) -> String {
    let mapped: String = raw.chars().map(map_char).collect();
    let mut out = mapped.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let stripped = out.trim_end_matches(is_trailing_punct).trim_end();
        if stripped.len() == out.len() {
            return out;
        }
        out = stripped.to_string();
    }
}

pub fn parse_composition(raw: &str) -> Composition {
    let normalized = normalize_formula(raw);
    if normalized.is_empty() {
        return Composition::ParseError {
            reason: "empty formula".into(),
        };
    }
    match parse_strict(&normalized) {
        Ok(c) => c,
        Err(strict_err) => {
            let relaxed = relax(&normalized);
            if relaxed != normalized && !relaxed.is_empty() {
                if let Ok(c) = parse_strict(&relaxed) {
                    return c;
                }
            }
            Composition::ParseError { reason: strict_err }
        }
    }
}

const PHASE_SUFFIXES: &[&str] = &[
    "-based",
    "-type",
    "-phase",
    " phase",
    " thin films",
    " thin film",
    " films",
    " film",
    " single crystals",
    " single crystal",
    " crystals",
    " crystal",
    " polycrystals",
    " nanowires",
    " nanoparticles",
    " powders",
    " powder",
    " ceramics",
    " samples",
    " sample",
    " compounds",
    " compound",
    " superconductors",
    " superconductor",
];

fn strip_phase_prefix(s: &str) -> &str {
    let mut chars = s.chars();
    let first = chars.next();
    let second = chars.next();
    let third = chars.next();
    match (first, second, third) {
        // Greek-letter phase marker, e.g. "β-FeSe".
        (Some(g), Some('-'), _) if ('α'..='ω').contains(&g) => &s[g.len_utf8() + 1..],
        // Polytype marker, e.g. "2H-NbSe2".
        (Some(d), Some(t), Some('-')) if d.is_ascii_digit() && matches!(t, 'H' | 'T' | 'R' | 'M') => &s[3..],
        _ => s,
    }
}

fn relax(s: &str) -> String {
    let mut work = strip_phase_prefix(s).to_string();
    loop {
        let lower = work.to_lowercase();
        match PHASE_SUFFIXES.iter().find(|suffix| lower.ends_with(*suffix)) {
            Some(suffix) => {
                let cut = work.len() - suffix.len();
                work.truncate(cut);
            }
            None => break,
        }
    }
    let chars: Vec<char> = work.chars().filter(|c| !c.is_whitespace()).collect();
    let mut out = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        // A hyphen that separates two element groups is decoration; one that
        // precedes a count term belongs to the count expression.
        if c == '-' {
            let next = chars.get(i + 1).copied();
            if matches!(next, Some(n) if n.is_ascii_uppercase() || n == '(' || n == '[') || next.is_none() {
                continue;
            }
        }
        out.push(c);
    }
    out
}

enum Count {
    Number(f64),
    Symbolic(BTreeSet<String>),
}

#[derive(Default)]
struct Tally {
    elements: BTreeMap<String, f64>,
    variables: BTreeSet<String>,
}

struct Parser<'a> {
    chars: &'a [char],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn err<T>(&self, what: &str) -> Result<T, String> {
        Err(format!("{what} at position {}", self.pos))
    }

    /// Parses items until end of input or a closing bracket; returns the
    /// tally of this level with counts applied.
    fn formula(&mut self, depth: usize) -> Result<Tally, String> {
        let mut tally = Tally::default();
        let mut items = 0;
        while let Some(c) = self.peek() {
            match c {
                ')' | ']' if depth > 0 => break,
                '(' | '[' => {
                    let close = if c == '(' { ')' } else { ']' };
                    self.pos += 1;
                    let inner = self.formula(depth + 1)?;
                    if self.peek() != Some(close) {
                        return self.err(&format!("expected '{close}'"));
                    }
                    self.pos += 1;
                    let count = self.count()?;
                    merge(&mut tally, inner, count);
                }
                c if c.is_ascii_uppercase() => {
                    let symbol = self.element()?;
                    let count = self.count()?;
                    let mut single = Tally::default();
                    single.elements.insert(symbol, 1.0);
                    merge(&mut tally, single, count);
                }
                _ => return self.err(&format!("unexpected character {c:?}")),
            }
            items += 1;
        }
        if items == 0 {
            return self.err("empty formula or group");
        }
        Ok(tally)
    }

    fn element(&mut self) -> Result<String, String> {
        let first = self.chars[self.pos];
        if let Some(second) = self.peek_at(1).filter(|c| c.is_ascii_lowercase()) {
            let two: String = [first, second].iter().collect();
            if is_element(&two) {
                self.pos += 2;
                return Ok(two);
            }
        }
        let one = first.to_string();
        if is_element(&one) {
            self.pos += 1;
            Ok(one)
        } else {
            self.err(&format!("unknown element {one:?}"))
        }
    }

    fn starts_term(c: Option<char>) -> bool {
        matches!(c, Some(c) if c.is_ascii_digit() || c == '.' || VARIABLES.contains(&c))
    }

    /// Optional count after an element or group. Absent means 1.
    fn count(&mut self) -> Result<Option<Count>, String> {
        if !Self::starts_term(self.peek()) {
            return Ok(None);
        }
        let mut total = 0.0;
        let mut vars = BTreeSet::new();
        let mut sign = 1.0;
        loop {
            let (number, var) = self.term()?;
            match var {
                Some(v) => {
                    vars.insert(v.to_string());
                }
                None => total += sign * number.unwrap_or(1.0),
            }
            match self.peek() {
                Some(op @ ('+' | '-')) if Self::starts_term(self.peek_at(1)) => {
                    sign = if op == '+' { 1.0 } else { -1.0 };
                    self.pos += 1;
                }
                _ => break,
            }
        }
        if !vars.is_empty() {
            return Ok(Some(Count::Symbolic(vars)));
        }
        if !total.is_finite() || total <= 0.0 {
            return self.err("non-positive coefficient");
        }
        Ok(Some(Count::Number(total)))
    }

    fn term(&mut self) -> Result<(Option<f64>, Option<char>), String> {
        let start = self.pos;
        let mut seen_dot = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                self.pos += 1;
            } else if c == '.' && !seen_dot {
                seen_dot = true;
                self.pos += 1;
            } else {
                break;
            }
        }
        let number = if self.pos > start {
            let text: String = self.chars[start..self.pos].iter().collect();
            match text.parse::<f64>() {
                Ok(v) => Some(v),
                Err(_) => return self.err(&format!("malformed number {text:?}")),
            }
        } else {
            None
        };
        let var = match self.peek() {
            Some(c) if VARIABLES.contains(&c) => {
                self.pos += 1;
                Some(c)
            }
            _ => None,
        };
        Ok((number, var))
    }
}

fn merge(into: &mut Tally, part: Tally, count: Option<Count>) {
    let factor = match count {
        None => 1.0,
        Some(Count::Number(n)) => n,
        Some(Count::Symbolic(vars)) => {
            into.variables.extend(vars);
            1.0
        }
    };
    into.variables.extend(part.variables);
    for (symbol, coefficient) in part.elements {
        *into.elements.entry(symbol).or_insert(0.0) += coefficient * factor;
    }
}

fn parse_strict(s: &str) -> Result<Composition, String> {
    let chars: Vec<char> = s.chars().collect();
    let mut parser = Parser { chars: &chars, pos: 0 };
    let tally = parser.formula(0)?;
    if parser.pos != chars.len() {
        return parser.err("unbalanced closing bracket");
    }
    if tally.variables.is_empty() {
        Ok(Composition::Resolved {
            elements: tally.elements,
        })
    } else {
        Ok(Composition::Unresolved {
            variables: tally.variables,
        })
    }
}
