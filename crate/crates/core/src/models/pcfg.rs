//! Probabilistic grammars in Greibach normal form, the lazy strings they
//! generate, and substring tests over those strings.
//!
//! A string is a list of `Cons(terminal, rest)` cells ending in `Empty`. The
//! element for a position holds the stack of nonterminals still to expand;
//! choosing a production for the top nonterminal emits its terminal and
//! pushes its right-hand side. Because every production starts with a
//! terminal, each expansion level yields exactly one more symbol.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Registry;
use crate::value::{ElementId, Field, Value};

const PROBABILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Production {
    pub lhs: String,
    pub prob: f64,
    pub terminal: String,
    #[serde(default)]
    pub rhs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnfGrammar {
    /// The first nonterminal is the start symbol.
    pub nonterminals: Vec<String>,
    pub terminals: Vec<String>,
    pub productions: Vec<Production>,
}

fn production(lhs: &str, prob: f64, terminal: &str, rhs: &[&str]) -> Production {
    Production {
        lhs: lhs.into(),
        prob,
        terminal: terminal.into(),
        rhs: rhs.iter().map(|s| s.to_string()).collect(),
    }
}

impl GnfGrammar {
    /// Subcritical grammar: every derivation is finite with probability 1.
    pub fn finite() -> Self {
        GnfGrammar {
            nonterminals: vec!["S".into(), "T".into(), "V".into()],
            terminals: ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect(),
            productions: vec![
                production("S", 0.2, "a", &["T", "S"]),
                production("S", 0.3, "b", &["T"]),
                production("S", 0.5, "c", &[]),
                production("T", 0.4, "d", &["V"]),
                production("T", 0.6, "e", &[]),
                production("V", 0.5, "d", &[]),
                production("V", 0.5, "e", &["T"]),
            ],
        }
    }

    /// Supercritical grammar: `S` derives an infinite string with positive
    /// probability.
    pub fn infinite() -> Self {
        let mut g = GnfGrammar::finite();
        g.productions[0] = production("S", 0.6, "a", &["S", "S"]);
        g.productions[1] = production("S", 0.2, "b", &["T"]);
        g.productions[2] = production("S", 0.2, "c", &[]);
        g
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: GnfGrammar =
            serde_json::from_str(text).map_err(|e| Error::InvalidGrammar(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGrammar(msg));
        if self.nonterminals.is_empty() {
            return bad("no nonterminals".into());
        }
        for (i, n) in self.nonterminals.iter().enumerate() {
            if self.nonterminals[..i].contains(n) {
                return bad(format!("nonterminal {n} listed twice"));
            }
            if self.terminals.contains(n) {
                return bad(format!("{n} is both a terminal and a nonterminal"));
            }
        }
        for (i, t) in self.terminals.iter().enumerate() {
            if self.terminals[..i].contains(t) {
                return bad(format!("terminal {t} listed twice"));
            }
        }
        let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
        for p in &self.productions {
            if !self.nonterminals.contains(&p.lhs) {
                return bad(format!("unknown nonterminal {}", p.lhs));
            }
            if !self.terminals.contains(&p.terminal) {
                return bad(format!("production for {} starts with unknown terminal {}", p.lhs, p.terminal));
            }
            if let Some(r) = p.rhs.iter().find(|r| !self.nonterminals.contains(r)) {
                return bad(format!("unknown nonterminal {r} on a right-hand side"));
            }
            if !(p.prob > 0.0 && p.prob <= 1.0) {
                return bad(format!("production probability {} is outside (0, 1]", p.prob));
            }
            *totals.entry(&p.lhs).or_default() += p.prob;
        }
        for n in &self.nonterminals {
            match totals.get(n.as_str()) {
                None => return bad(format!("{n} has no productions")),
                Some(t) if (t - 1.0).abs() > PROBABILITY_TOLERANCE => {
                    return bad(format!("productions of {n} sum to {t}"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn index(&self, name: &str) -> usize {
        self.nonterminals.iter().position(|n| n == name).expect("validated")
    }

    /// Probability that each nonterminal derives a finite string: the least
    /// fixpoint of `q_N = sum over productions of prob * prod q_M`.
    pub fn extinction_probabilities(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.nonterminals.len()];
        for _ in 0..100_000 {
            let mut next = vec![0.0; q.len()];
            for p in &self.productions {
                let term: f64 = p.rhs.iter().map(|r| q[self.index(r)]).product();
                next[self.index(&p.lhs)] += p.prob * term;
            }
            let delta = next
                .iter()
                .zip(&q)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            q = next;
            if delta < 1e-15 {
                break;
            }
        }
        q
    }
}

/// Grammar compiled to index form for the sequence builder.
#[derive(Debug)]
struct Compiled {
    /// Per nonterminal: (probability, terminal, right-hand side).
    rules: Vec<Vec<(f64, Value, Vec<usize>)>>,
}

impl Compiled {
    fn new(grammar: &GnfGrammar) -> Self {
        let mut rules = vec![Vec::new(); grammar.nonterminals.len()];
        for p in &grammar.productions {
            rules[grammar.index(&p.lhs)].push((
                p.prob,
                Value::symbol(&p.terminal),
                p.rhs.iter().map(|r| grammar.index(r)).collect(),
            ));
        }
        Compiled { rules }
    }
}

/// String derived from `stack` (top first).
fn sequence(registry: &mut Registry, grammar: &Arc<Compiled>, stack: Vec<usize>) -> Result<ElementId> {
    let Some((&top, rest)) = stack.split_first() else {
        return registry.constant(Value::nullary("Empty"));
    };
    let rules = &grammar.rules[top];
    let choice = registry.select(
        rules
            .iter()
            .enumerate()
            .map(|(i, (p, _, _))| (*p, Value::Int(i as i64)))
            .collect(),
    )?;
    let grammar = grammar.clone();
    let rest = rest.to_vec();
    registry.apply(vec![choice], move |vs, reg| {
        let i = vs[0]
            .as_int()
            .ok_or_else(|| Error::Model(format!("bad production index {}", vs[0])))?;
        let (_, terminal, rhs) = &grammar.rules[top][i as usize];
        let mut next = rhs.clone();
        next.extend_from_slice(&rest);
        let tail = sequence(reg, &grammar, next)?;
        Ok(Value::constructed(
            "Cons",
            vec![Field::Value(terminal.clone()), Field::Element(tail)],
        ))
    })
}

/// Lazy string generated from the start symbol.
pub fn derive(registry: &mut Registry, grammar: &GnfGrammar) -> Result<ElementId> {
    grammar.validate()?;
    let compiled = Arc::new(Compiled::new(grammar));
    sequence(registry, &compiled, vec![0])
}

/// Prefix-function automaton for a pattern.
#[derive(Debug, Clone)]
struct Matcher {
    pattern: Vec<Value>,
    failure: Vec<usize>,
}

impl Matcher {
    fn new(pattern: Vec<Value>) -> Self {
        let mut failure = vec![0; pattern.len()];
        let mut k = 0;
        for i in 1..pattern.len() {
            while k > 0 && pattern[i] != pattern[k] {
                k = failure[k - 1];
            }
            if pattern[i] == pattern[k] {
                k += 1;
            }
            failure[i] = k;
        }
        Matcher { pattern, failure }
    }

    /// Next state after reading `symbol` having matched `k` symbols.
    fn step(&self, mut k: usize, symbol: &Value) -> usize {
        loop {
            if self.pattern[k] == *symbol {
                return k + 1;
            }
            if k == 0 {
                return 0;
            }
            k = self.failure[k - 1];
        }
    }
}

fn scan(registry: &mut Registry, matcher: &Arc<Matcher>, seq: ElementId, k: usize) -> Result<ElementId> {
    let matcher = matcher.clone();
    registry.chain(seq, move |v, reg| match v.ctor() {
        Some("Empty") => reg.constant(false),
        Some("Cons") => {
            let (Some(symbol), Some(tail)) = (v.value_field(0), v.element_field(1)) else {
                return Err(Error::Model(format!("malformed string cell {v}")));
            };
            let next = matcher.step(k, symbol);
            if next == matcher.pattern.len() {
                reg.constant(true)
            } else {
                scan(reg, &matcher, tail, next)
            }
        }
        _ => Err(Error::Model(format!("not a string: {v}"))),
    })
}

/// Boolean element that is true when `pattern` occurs as a contiguous
/// substring of `seq`. An empty pattern always occurs.
pub fn contains_substring(
    registry: &mut Registry,
    grammar: &GnfGrammar,
    seq: ElementId,
    pattern: &str,
) -> Result<ElementId> {
    let symbols = parse_pattern(grammar, pattern)?;
    if symbols.is_empty() {
        return registry.constant(true);
    }
    scan(registry, &Arc::new(Matcher::new(symbols)), seq, 0)
}

/// Boolean element that is true when `seq` ends.
pub fn is_finite(registry: &mut Registry, seq: ElementId) -> Result<ElementId> {
    registry.chain(seq, |v, reg| match v.ctor() {
        Some("Empty") => reg.constant(true),
        Some("Cons") => match v.element_field(1) {
            Some(tail) => is_finite(reg, tail),
            None => Err(Error::Model(format!("malformed string cell {v}"))),
        },
        _ => Err(Error::Model(format!("not a string: {v}"))),
    })
}

/// Splits a pattern into terminals. Terminals are matched greedily, longest
/// first, so multi-character terminal names work without separators;
/// whitespace and commas are ignored.
pub fn parse_pattern(grammar: &GnfGrammar, pattern: &str) -> Result<Vec<Value>> {
    let mut names: Vec<&str> = grammar.terminals.iter().map(String::as_str).collect();
    names.sort_by_key(|n| std::cmp::Reverse(n.len()));
    let mut out = Vec::new();
    let mut rest = pattern.trim_start_matches(|c: char| c.is_whitespace() || c == ',');
    while !rest.is_empty() {
        let Some(name) = names.iter().find(|n| !n.is_empty() && rest.starts_with(**n)) else {
            return Err(Error::InvalidGrammar(format!(
                "pattern {pattern:?} uses a symbol that is not a terminal"
            )));
        };
        out.push(Value::symbol(name));
        rest = rest[name.len()..].trim_start_matches(|c: char| c.is_whitespace() || c == ',');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct Pcfg {
    pub sequence: ElementId,
    pub query: ElementId,
    /// Observed true when an evidence pattern was given.
    pub evidence: Option<ElementId>,
}

/// A derived string, a query for `pattern` and, unless `evidence_pattern` is
/// empty, the observation that `evidence_pattern` occurs.
pub fn pcfg_model(
    registry: &mut Registry,
    grammar: &GnfGrammar,
    pattern: &str,
    evidence_pattern: &str,
) -> Result<Pcfg> {
    grammar.validate()?;
    parse_pattern(grammar, pattern)?;
    parse_pattern(grammar, evidence_pattern)?;
    let sequence = derive(registry, grammar)?;
    let evidence = if evidence_pattern.trim().is_empty() {
        None
    } else {
        let e = contains_substring(registry, grammar, sequence, evidence_pattern)?;
        registry.observe(e, true)?;
        Some(e)
    };
    let query = contains_substring(registry, grammar, sequence, pattern)?;
    Ok(Pcfg {
        sequence,
        query,
        evidence,
    })
}
