//! Brute-force reference computations for testing.
//!
//! [`enumerate_bounds`] works directly on the program: it works out which
//! elements a depth-bounded expansion reaches, then enumerates every
//! assignment to the atomic choices a world actually consults and adds up
//! the probability of each query outcome. It shares no code with expansion
//! or the factor machinery. [`naive_sum`] multiplies out a factor set over
//! every joint assignment.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::factor::{Factor, FactorKind, Interval, Var};
use crate::model::{ElementKind, Registry};
use crate::value::{ElementId, ExtendedValue, Value};

pub const DEFAULT_TRACE_CAP: usize = 1_000_000;
pub const DEFAULT_NODE_GUARD: u64 = 50_000_000;

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Depth assigned to each element the expansion reaches.
    pub depths: BTreeMap<ElementId, i64>,
    /// Unnormalized lower and upper mass per extended query value.
    pub masses: BTreeMap<ExtendedValue, Interval>,
    pub traces: usize,
}

impl OracleResult {
    /// Mass for `value`, zero if no trace produced it.
    pub fn mass(&self, value: &ExtendedValue) -> Interval {
        self.masses.get(value).copied().unwrap_or(Interval::ZERO)
    }
}

/// Extended value set of every reached element under a depth assignment.
fn ranges_for(
    registry: &mut Registry,
    depths: &BTreeMap<ElementId, i64>,
) -> Result<BTreeMap<ElementId, BTreeSet<ExtendedValue>>> {
    let mut ranges = BTreeMap::new();
    for &id in depths.keys() {
        range_of(registry, depths, &mut ranges, id)?;
    }
    Ok(ranges)
}

fn range_of(
    registry: &mut Registry,
    depths: &BTreeMap<ElementId, i64>,
    ranges: &mut BTreeMap<ElementId, BTreeSet<ExtendedValue>>,
    id: ElementId,
) -> Result<BTreeSet<ExtendedValue>> {
    if let Some(r) = ranges.get(&id) {
        return Ok(r.clone());
    }
    let star: BTreeSet<ExtendedValue> = [ExtendedValue::Star].into();
    let depth = depths.get(&id).copied().unwrap_or(-1);
    let range = if depth < 0 {
        star
    } else {
        match registry.kind(id)?.clone() {
            ElementKind::Constant(v) => [ExtendedValue::Regular(v)].into(),
            kind @ (ElementKind::Flip(_) | ElementKind::Select(_)) => kind
                .support()
                .into_iter()
                .map(|(v, _)| ExtendedValue::Regular(v))
                .collect(),
            ElementKind::Apply { args, .. } => {
                let mut arg_ranges = Vec::new();
                for &a in &args {
                    arg_ranges.push(range_of(registry, depths, ranges, a)?);
                }
                let mut out = BTreeSet::new();
                let mut combos: Vec<Vec<Value>> = vec![Vec::new()];
                for r in &arg_ranges {
                    let mut next = Vec::new();
                    for c in &combos {
                        for v in r.iter().filter_map(ExtendedValue::regular) {
                            let mut c = c.clone();
                            c.push(v.clone());
                            next.push(c);
                        }
                    }
                    combos = next;
                }
                for c in combos {
                    out.insert(ExtendedValue::Regular(registry.apply_result(id, &c)?));
                }
                if arg_ranges.iter().any(|r| r.contains(&ExtendedValue::Star)) {
                    out.insert(ExtendedValue::Star);
                }
                out
            }
            ElementKind::Chain { parent, .. } => {
                let parent_range = range_of(registry, depths, ranges, parent)?;
                let mut out = BTreeSet::new();
                for x in parent_range.iter().filter_map(ExtendedValue::regular) {
                    let y = registry.chain_result(id, x)?;
                    out.extend(range_of(registry, depths, ranges, y)?);
                }
                if parent_range.contains(&ExtendedValue::Star) {
                    out.insert(ExtendedValue::Star);
                }
                out
            }
        }
    };
    ranges.insert(id, range.clone());
    Ok(range)
}

/// Closes a set of depth requests: every reached element at depth `k >= 0`
/// requests its arguments, and for a Chain the result for each regular
/// parent value, at `k - 1`. Repeats whole passes until nothing changes.
fn close_depths(registry: &mut Registry, depths: &mut BTreeMap<ElementId, i64>) -> Result<()> {
    loop {
        let ranges = ranges_for(registry, depths)?;
        let mut changed = false;
        let snapshot: Vec<(ElementId, i64)> = depths.iter().map(|(&k, &v)| (k, v)).collect();
        for (id, depth) in snapshot {
            if depth < 0 {
                continue;
            }
            let mut requests = Vec::new();
            match registry.kind(id)?.clone() {
                ElementKind::Apply { args, .. } => requests.extend(args),
                ElementKind::Chain { parent, .. } => {
                    requests.push(parent);
                    if let Some(r) = ranges.get(&parent) {
                        for x in r.iter().filter_map(ExtendedValue::regular) {
                            requests.push(registry.chain_result(id, x)?);
                        }
                    }
                }
                _ => {}
            }
            for r in requests {
                let entry = depths.entry(r).or_insert(i64::MIN);
                if *entry < depth - 1 {
                    *entry = depth - 1;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(());
        }
    }
}

/// Depths reached when expanding `query` to `depth` and then pulling in
/// evidence one use-hop at a time, one level shallower per hop.
pub fn reference_depths(registry: &mut Registry, query: ElementId, depth: i64) -> Result<BTreeMap<ElementId, i64>> {
    let mut depths: BTreeMap<ElementId, i64> = [(query, depth)].into();
    close_depths(registry, &mut depths)?;
    let evidence = registry.evidence_targets();
    let mut seen: BTreeSet<ElementId> = depths.keys().copied().collect();
    let mut frontier: Vec<ElementId> = seen.iter().copied().collect();
    let mut level = depth;
    while level > 0 && !frontier.is_empty() {
        let target = level - 1;
        let mut next = BTreeSet::new();
        let mut grew = false;
        for e in &frontier {
            for &user in registry.used_by(*e) {
                if evidence.contains(&user) && depths.get(&user).is_none_or(|&d| d < target) {
                    depths.insert(user, target);
                    grew = true;
                }
                if seen.insert(user) {
                    next.insert(user);
                }
            }
        }
        if grew {
            close_depths(registry, &mut depths)?;
            for &id in depths.keys() {
                if seen.insert(id) {
                    next.insert(id);
                }
            }
        }
        frontier = next.into_iter().collect();
        level -= 1;
    }
    Ok(depths)
}

enum Eval {
    Done(ExtendedValue),
    Choose(ElementId),
}

struct Tracer<'a> {
    registry: &'a mut Registry,
    depths: &'a BTreeMap<ElementId, i64>,
}

impl Tracer<'_> {
    /// Value of `id` in the partial world `choices`, or the first atomic
    /// element whose choice is still open.
    fn eval(
        &mut self,
        id: ElementId,
        choices: &BTreeMap<ElementId, Value>,
        memo: &mut BTreeMap<ElementId, ExtendedValue>,
    ) -> Result<Eval> {
        if let Some(v) = memo.get(&id) {
            return Ok(Eval::Done(v.clone()));
        }
        if self.depths.get(&id).is_none_or(|&d| d < 0) {
            return Ok(Eval::Done(ExtendedValue::Star));
        }
        let value = match self.registry.kind(id)?.clone() {
            ElementKind::Constant(v) => ExtendedValue::Regular(v),
            ElementKind::Flip(_) | ElementKind::Select(_) => match choices.get(&id) {
                Some(v) => ExtendedValue::Regular(v.clone()),
                None => return Ok(Eval::Choose(id)),
            },
            ElementKind::Apply { args, .. } => {
                let mut inputs = Vec::new();
                let mut star = false;
                for a in args {
                    match self.eval(a, choices, memo)? {
                        Eval::Choose(c) => return Ok(Eval::Choose(c)),
                        Eval::Done(ExtendedValue::Star) => star = true,
                        Eval::Done(ExtendedValue::Regular(v)) => inputs.push(v),
                    }
                }
                if star {
                    ExtendedValue::Star
                } else {
                    ExtendedValue::Regular(self.registry.apply_result(id, &inputs)?)
                }
            }
            ElementKind::Chain { parent, .. } => match self.eval(parent, choices, memo)? {
                Eval::Choose(c) => return Ok(Eval::Choose(c)),
                Eval::Done(ExtendedValue::Star) => ExtendedValue::Star,
                Eval::Done(ExtendedValue::Regular(x)) => {
                    let y = self.registry.chain_result(id, &x)?;
                    match self.eval(y, choices, memo)? {
                        Eval::Choose(c) => return Ok(Eval::Choose(c)),
                        Eval::Done(v) => v,
                    }
                }
            },
        };
        memo.insert(id, value.clone());
        Ok(Eval::Done(value))
    }
}

/// Unnormalized lower and upper mass of each query value at `depth`, by
/// enumerating traces. Fails once more than `trace_cap` complete traces
/// have been visited.
pub fn enumerate_bounds(
    registry: &mut Registry,
    query: ElementId,
    depth: i64,
    trace_cap: usize,
) -> Result<OracleResult> {
    let depths = reference_depths(registry, query, depth)?;
    let evidence: Vec<_> = registry
        .evidence()
        .iter()
        .filter(|e| depths.contains_key(&e.target))
        .cloned()
        .collect();
    let mut targets = vec![query];
    targets.extend(evidence.iter().map(|e| e.target));

    let mut masses: BTreeMap<ExtendedValue, Interval> = BTreeMap::new();
    let mut traces = 0usize;
    let mut tracer = Tracer {
        registry,
        depths: &depths,
    };
    // depth-first over partial worlds: (choices, probability)
    let mut stack: Vec<(BTreeMap<ElementId, Value>, f64)> = vec![(BTreeMap::new(), 1.0)];
    while let Some((choices, p)) = stack.pop() {
        let mut memo = BTreeMap::new();
        let mut values = Vec::with_capacity(targets.len());
        let mut open = None;
        for &t in &targets {
            match tracer.eval(t, &choices, &mut memo)? {
                Eval::Done(v) => values.push(v),
                Eval::Choose(c) => {
                    open = Some(c);
                    break;
                }
            }
        }
        if let Some(c) = open {
            for (v, q) in tracer.registry.kind(c)?.support() {
                let mut next = choices.clone();
                next.insert(c, v);
                stack.push((next, p * q));
            }
            continue;
        }
        traces += 1;
        if traces > trace_cap {
            return Err(Error::OracleBudgetExceeded(trace_cap));
        }
        let mut w = Interval::point(p);
        for (e, v) in evidence.iter().zip(&values[1..]) {
            w = w.mul(match v {
                ExtendedValue::Regular(v) => e.weight_of(v),
                ExtendedValue::Star => e.star_weight(),
            });
        }
        let slot = masses.entry(values[0].clone()).or_insert(Interval::ZERO);
        *slot = slot.add(w);
    }
    Ok(OracleResult {
        depths,
        masses,
        traces,
    })
}

/// Number of reached atomic elements with more than one possible value.
pub fn choice_points(registry: &Registry, depths: &BTreeMap<ElementId, i64>) -> Result<usize> {
    let mut n = 0;
    for (&id, &d) in depths {
        let kind = registry.kind(id)?;
        if d >= 0 && kind.is_atomic() && kind.support().len() > 1 {
            n += 1;
        }
    }
    Ok(n)
}

/// Sums the product of all factors over every joint assignment of the
/// non-query variables, separately for lower and upper entries. Branches
/// whose partial product is already zero in the upper pass are cut. Fails
/// with [`Error::SizeGuard`] after visiting `node_guard` partial
/// assignments.
pub fn naive_sum(factors: &[Factor], query: ElementId, node_guard: u64) -> Result<Factor> {
    let mut vars: BTreeMap<ElementId, Var> = BTreeMap::new();
    for f in factors {
        for v in &f.vars {
            if let Some(existing) = vars.get(&v.id) {
                if existing.range != v.range {
                    return Err(Error::RangeMismatch(v.id));
                }
            } else {
                vars.insert(v.id, v.clone());
            }
        }
    }
    let query_var = vars.get(&query).cloned().ok_or(Error::QueryNotInFactors(query))?;

    // assign each variable after the others it is defined from, so a
    // factor is complete as soon as its defined variable is assigned
    let mut deps: BTreeMap<ElementId, BTreeSet<ElementId>> = BTreeMap::new();
    for f in factors {
        if let (FactorKind::Definition, Some(owner)) = (f.kind, f.element) {
            deps.entry(owner)
                .or_default()
                .extend(f.vars.iter().map(|v| v.id).filter(|&id| id != owner));
        }
    }
    let mut order = Vec::with_capacity(vars.len());
    let mut placed = BTreeSet::new();
    fn visit(
        id: ElementId,
        deps: &BTreeMap<ElementId, BTreeSet<ElementId>>,
        placed: &mut BTreeSet<ElementId>,
        order: &mut Vec<ElementId>,
    ) {
        if !placed.insert(id) {
            return;
        }
        if let Some(ds) = deps.get(&id) {
            for &d in ds {
                visit(d, deps, placed, order);
            }
        }
        order.push(id);
    }
    for &id in vars.keys() {
        visit(id, &deps, &mut placed, &mut order);
    }
    let position: BTreeMap<ElementId, usize> = order.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    // factors grouped by the position at which they become complete
    let mut complete_at: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
    let mut constant = Interval::ONE;
    for (fi, f) in factors.iter().enumerate() {
        match f.vars.iter().map(|v| position[&v.id]).max() {
            Some(p) => complete_at[p].push(fi),
            None => constant = constant.mul(f.entries[0]),
        }
    }
    let ranges: Vec<&Var> = order.iter().map(|id| &vars[id]).collect();

    struct Search<'a> {
        factors: &'a [Factor],
        ranges: Vec<&'a Var>,
        position: BTreeMap<ElementId, usize>,
        complete_at: Vec<Vec<usize>>,
        assignment: Vec<usize>,
        query_pos: usize,
        result: Vec<Interval>,
        nodes: u64,
        guard: u64,
    }

    impl Search<'_> {
        fn go(&mut self, k: usize, acc: Interval) -> Result<()> {
            if k == self.ranges.len() {
                let q = self.assignment[self.query_pos];
                self.result[q] = self.result[q].add(acc);
                return Ok(());
            }
            for i in 0..self.ranges[k].len() {
                self.nodes += 1;
                if self.nodes > self.guard {
                    return Err(Error::SizeGuard(self.guard));
                }
                self.assignment[k] = i;
                let mut w = acc;
                for &fi in &self.complete_at[k] {
                    let f = &self.factors[fi];
                    let idx: Vec<usize> = f.vars.iter().map(|v| self.assignment[self.position[&v.id]]).collect();
                    w = w.mul(f.get(&idx));
                    if w.hi == 0.0 {
                        break;
                    }
                }
                if w.hi > 0.0 {
                    self.go(k + 1, w)?;
                }
            }
            Ok(())
        }
    }

    let mut search = Search {
        factors,
        query_pos: position[&query],
        assignment: vec![0; order.len()],
        result: vec![Interval::ZERO; query_var.len()],
        ranges,
        position,
        complete_at,
        nodes: 0,
        guard: node_guard,
    };
    search.go(0, constant)?;
    Factor::new(vec![query_var], search.result, FactorKind::Derived)
}
