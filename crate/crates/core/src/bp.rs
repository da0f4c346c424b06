//! Sum-product belief propagation on the bipartite factor graph, with a
//! flooding schedule.
//!
//! The lower and upper passes run side by side. When messages are
//! normalized, both passes of a message are divided by the same constant
//! (the sum of its upper entries), so the two passes stay on a common scale
//! and the finalized bounds do not depend on the normalization.
//!
//! Before messages are passed the factor set is simplified without changing
//! the joint it represents: a factor whose scope is contained in another
//! factor's scope is multiplied into it, and a variable whose neighbors all
//! lie inside one of its factors is summed out. This folds the per-value
//! factors of a Chain back together wherever that does not grow any table,
//! which removes most of the short cycles they would otherwise create.

use std::collections::{BTreeMap, BTreeSet};

use log::debug;

use crate::error::{Error, Result};
use crate::factor::{Factor, FactorKind, Interval, Var};
use crate::value::ElementId;

#[derive(Debug, Clone, PartialEq)]
pub struct BpOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub damping: f64,
    /// `None` normalizes on loopy graphs only.
    pub normalize_messages: Option<bool>,
    /// Accumulate messages as logarithms.
    pub log_domain: bool,
    /// Simplify the factor set exactly before passing messages.
    pub simplify: bool,
}

impl Default for BpOptions {
    fn default() -> Self {
        BpOptions {
            max_iterations: 100,
            tolerance: 1e-9,
            damping: 0.0,
            normalize_messages: None,
            log_domain: false,
            simplify: true,
        }
    }
}

impl BpOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidConfig("damping must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BpResult {
    /// Unnormalized beliefs over the query, lower and upper pass.
    pub factor: Factor,
    pub converged: bool,
    pub iterations: usize,
    /// Set unless the factor graph is a forest and the run converged.
    pub approximate: bool,
    pub is_tree: bool,
}

/// Message pair for one directed edge. In log mode entries are logarithms.
#[derive(Debug, Clone)]
struct Message {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Message {
    fn ones(n: usize, log: bool) -> Self {
        let one = if log { 0.0 } else { 1.0 };
        Message {
            lo: vec![one; n],
            hi: vec![one; n],
        }
    }
}

struct Graph {
    vars: Vec<Var>,
    /// Per factor: indices into `vars`, and lower/upper tables.
    factors: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)>,
    /// Per variable: (factor, position within that factor).
    edges: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    fn build(factors: &[Factor], log: bool) -> Result<Graph> {
        let mut vars: Vec<Var> = Vec::new();
        let mut index: BTreeMap<ElementId, usize> = BTreeMap::new();
        let mut out = Vec::with_capacity(factors.len());
        let mut edges: Vec<Vec<(usize, usize)>> = Vec::new();
        for (fi, f) in factors.iter().enumerate() {
            let mut scope = Vec::with_capacity(f.vars.len());
            for (pos, v) in f.vars.iter().enumerate() {
                let vi = match index.get(&v.id) {
                    Some(&vi) => {
                        if vars[vi].range != v.range {
                            return Err(Error::RangeMismatch(v.id));
                        }
                        vi
                    }
                    None => {
                        index.insert(v.id, vars.len());
                        vars.push(v.clone());
                        edges.push(Vec::new());
                        vars.len() - 1
                    }
                };
                edges[vi].push((fi, pos));
                scope.push(vi);
            }
            let conv = |x: f64| if log { x.ln() } else { x };
            let lo = f.entries.iter().map(|e| conv(e.lo)).collect();
            let hi = f.entries.iter().map(|e| conv(e.hi)).collect();
            out.push((scope, lo, hi));
        }
        Ok(Graph {
            vars,
            factors: out,
            edges,
        })
    }

    /// True when the factor graph has no cycles.
    fn is_forest(&self) -> bool {
        let n = self.vars.len() + self.factors.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (fi, (scope, _, _)) in self.factors.iter().enumerate() {
            for &vi in scope {
                let a = find(&mut parent, self.vars.len() + fi);
                let b = find(&mut parent, vi);
                if a == b {
                    return false;
                }
                parent[a] = b;
            }
        }
        true
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Factor-to-variable message from factor `fi` to its scope position `pos`.
fn factor_message(graph: &Graph, v2f: &[Vec<Message>], fi: usize, pos: usize, log: bool) -> Message {
    let (scope, lo, hi) = &graph.factors[fi];
    let sizes: Vec<usize> = scope.iter().map(|&v| graph.vars[v].len()).collect();
    let zero = if log { f64::NEG_INFINITY } else { 0.0 };
    let mut out = Message {
        lo: vec![zero; sizes[pos]],
        hi: vec![zero; sizes[pos]],
    };
    let mut idx = vec![0usize; sizes.len()];
    for e in 0..lo.len() {
        let (mut l, mut h) = (lo[e], hi[e]);
        let skip = if log { h == f64::NEG_INFINITY } else { h == 0.0 };
        if !skip {
            for (p, &i) in idx.iter().enumerate() {
                if p != pos {
                    let m = &v2f[fi][p];
                    if log {
                        l += m.lo[i];
                        h += m.hi[i];
                    } else {
                        l *= m.lo[i];
                        h *= m.hi[i];
                    }
                }
            }
            let k = idx[pos];
            if log {
                out.lo[k] = log_add(out.lo[k], l);
                out.hi[k] = log_add(out.hi[k], h);
            } else {
                out.lo[k] += l;
                out.hi[k] += h;
            }
        }
        let mut p = sizes.len();
        while p > 0 {
            p -= 1;
            idx[p] += 1;
            if idx[p] < sizes[p] {
                break;
            }
            idx[p] = 0;
        }
    }
    out
}

/// Product of incoming factor messages at variable `vi`, optionally leaving
/// out the edge to factor `except`.
fn variable_product(graph: &Graph, f2v: &[Vec<Message>], vi: usize, except: Option<usize>, log: bool) -> Message {
    let mut out = Message::ones(graph.vars[vi].len(), log);
    for &(fi, pos) in &graph.edges[vi] {
        if Some(fi) == except {
            continue;
        }
        let m = &f2v[fi][pos];
        for k in 0..out.lo.len() {
            if log {
                out.lo[k] += m.lo[k];
                out.hi[k] += m.hi[k];
            } else {
                out.lo[k] *= m.lo[k];
                out.hi[k] *= m.hi[k];
            }
        }
    }
    out
}

fn normalize(m: &mut Message, log: bool) {
    if log {
        let total = m.hi.iter().fold(f64::NEG_INFINITY, |a, &b| log_add(a, b));
        if total.is_finite() {
            m.lo.iter_mut().for_each(|x| *x -= total);
            m.hi.iter_mut().for_each(|x| *x -= total);
        }
    } else {
        let total: f64 = m.hi.iter().sum();
        if total > 0.0 && total.is_finite() {
            m.lo.iter_mut().for_each(|x| *x /= total);
            m.hi.iter_mut().for_each(|x| *x /= total);
        }
    }
}

fn damp(new: &mut Message, old: &Message, damping: f64, log: bool) {
    if damping == 0.0 {
        return;
    }
    let mix = |n: &mut f64, o: f64| {
        *n = if log {
            log_add(n.max(f64::NEG_INFINITY) + (1.0 - damping).ln(), o + damping.ln())
        } else {
            (1.0 - damping) * *n + damping * o
        }
    };
    for k in 0..new.lo.len() {
        mix(&mut new.lo[k], old.lo[k]);
        mix(&mut new.hi[k], old.hi[k]);
    }
}

fn difference(a: &Message, b: &Message, log: bool) -> f64 {
    let rel = |x: f64, y: f64| {
        let (x, y) = if log { (x.exp(), y.exp()) } else { (x, y) };
        let scale = x.abs().max(y.abs());
        if scale == 0.0 {
            0.0
        } else {
            (x - y).abs() / scale.max(1.0)
        }
    };
    a.lo.iter()
        .zip(&b.lo)
        .chain(a.hi.iter().zip(&b.hi))
        .map(|(&x, &y)| rel(x, y))
        .fold(0.0, f64::max)
}

/// Exact simplification described in the module docs. Factors over no
/// variables are returned too; they scale the final beliefs.
pub fn simplify_factors(factors: &[Factor], query: ElementId) -> Result<Vec<Factor>> {
    let mut slots: Vec<Option<Factor>> = factors.iter().cloned().map(Some).collect();
    let mut index: BTreeMap<ElementId, BTreeSet<usize>> = BTreeMap::new();
    for (i, f) in factors.iter().enumerate() {
        for v in &f.vars {
            index.entry(v.id).or_default().insert(i);
        }
    }
    let scope_of = |f: &Factor| -> BTreeSet<ElementId> { f.vars.iter().map(|v| v.id).collect() };
    let mut changed = true;
    while changed {
        changed = false;
        // absorb factors into supersets
        for i in 0..slots.len() {
            let Some(f) = &slots[i] else { continue };
            let Some(first) = f.vars.first() else { continue };
            let scope = scope_of(f);
            let host = index[&first.id].iter().copied().find(|&j| {
                j != i
                    && slots[j].as_ref().is_some_and(|g| {
                        let gs = scope_of(g);
                        scope.is_subset(&gs) && (scope.len() < gs.len() || j < i)
                    })
            });
            if let Some(j) = host {
                let f = slots[i].take().expect("present");
                for v in &f.vars {
                    index.get_mut(&v.id).expect("indexed").remove(&i);
                }
                let g = slots[j].as_ref().expect("present");
                slots[j] = Some(g.product(&f)?);
                changed = true;
            }
        }
        // sum out variables covered by one of their factors
        let candidates: Vec<ElementId> = index.keys().copied().filter(|&v| v != query).collect();
        for v in candidates {
            let touching: Vec<usize> = index[&v].iter().copied().collect();
            if touching.is_empty() {
                continue;
            }
            let union: BTreeSet<ElementId> = touching
                .iter()
                .flat_map(|&k| slots[k].as_ref().expect("present").vars.iter().map(|u| u.id))
                .collect();
            let covered = touching
                .iter()
                .any(|&k| scope_of(slots[k].as_ref().expect("present")) == union);
            if !covered {
                continue;
            }
            let mut product = Factor::unit();
            for &k in &touching {
                let f = slots[k].take().expect("present");
                for u in &f.vars {
                    index.get_mut(&u.id).expect("indexed").remove(&k);
                }
                product = product.product(&f)?;
            }
            let reduced = product.marginalize(v)?;
            let k = slots.len();
            for u in &reduced.vars {
                index.entry(u.id).or_default().insert(k);
            }
            slots.push(Some(reduced));
            index.remove(&v);
            changed = true;
        }
    }
    Ok(slots.into_iter().flatten().collect())
}

/// Runs belief propagation and returns the query beliefs from both passes.
pub fn run_bp(factors: &[Factor], query: ElementId, options: &BpOptions) -> Result<BpResult> {
    options.validate()?;
    let log = options.log_domain;
    let simplified;
    let factors = if options.simplify {
        simplified = simplify_factors(factors, query)?;
        &simplified[..]
    } else {
        factors
    };
    let (constants, factors): (Vec<&Factor>, Vec<&Factor>) =
        factors.iter().partition(|f| f.vars.is_empty());
    let scale = constants
        .iter()
        .fold(Interval::ONE, |acc, f| acc.mul(f.entries[0]));
    let factors: Vec<Factor> = factors.into_iter().cloned().collect();
    let graph = Graph::build(&factors, log)?;
    let qi = graph
        .vars
        .iter()
        .position(|v| v.id == query)
        .ok_or(Error::QueryNotInFactors(query))?;
    let is_tree = graph.is_forest();
    let normalize_messages = options.normalize_messages.unwrap_or(!is_tree);

    let mut v2f: Vec<Vec<Message>> = graph
        .factors
        .iter()
        .map(|(scope, _, _)| scope.iter().map(|&v| Message::ones(graph.vars[v].len(), log)).collect())
        .collect();
    let mut f2v = v2f.clone();

    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let mut delta: f64 = 0.0;
        let mut next_f2v = f2v.clone();
        for (fi, (scope, _, _)) in graph.factors.iter().enumerate() {
            for pos in 0..scope.len() {
                let mut m = factor_message(&graph, &v2f, fi, pos, log);
                if normalize_messages {
                    normalize(&mut m, log);
                }
                damp(&mut m, &f2v[fi][pos], options.damping, log);
                delta = delta.max(difference(&m, &f2v[fi][pos], log));
                next_f2v[fi][pos] = m;
            }
        }
        f2v = next_f2v;
        for (vi, edges) in graph.edges.iter().enumerate() {
            for &(fi, pos) in edges {
                let mut m = variable_product(&graph, &f2v, vi, Some(fi), log);
                if normalize_messages {
                    normalize(&mut m, log);
                }
                delta = delta.max(difference(&m, &v2f[fi][pos], log));
                v2f[fi][pos] = m;
            }
        }
        if delta <= options.tolerance {
            converged = true;
            break;
        }
    }
    debug!("bp: {iterations} iterations, converged {converged}, tree {is_tree}");

    let belief = variable_product(&graph, &f2v, qi, None, log);
    let finite = |x: &f64| if log { *x < f64::INFINITY } else { x.is_finite() };
    if !belief.lo.iter().chain(&belief.hi).all(finite) {
        return Err(Error::BeliefOverflow(iterations));
    }
    let conv = |x: f64| if log { x.exp() } else { x };
    let entries = belief
        .lo
        .iter()
        .zip(&belief.hi)
        .map(|(&l, &h)| {
            let (l, h) = (conv(l) * scale.lo, conv(h) * scale.hi);
            // equal-valued passes can drift apart by rounding
            Interval::new(l.min(h), h)
        })
        .collect();
    let factor = Factor::new(vec![graph.vars[qi].clone()], entries, FactorKind::Derived)?;
    Ok(BpResult {
        factor,
        converged,
        iterations,
        approximate: !(is_tree && converged),
        is_tree,
    })
}
