//! Bounded-depth expansion of a program into relevant elements with
//! extended ranges.
//!
//! Expanding an element to depth `d` expands its arguments (and, for a Chain,
//! the results for each regular parent value) to `d - 1`. Anything requested
//! at a negative depth gets the range `{*}`. Every element touched this way
//! is relevant and later becomes a factor variable.
//!
//! Shared elements can be requested at several depths. The state keeps the
//! maximum depth seen for each element and a back pointer from each element
//! to the elements whose range was computed from it. When an element is
//! re-expanded deeper and its range changes, everything that read the old
//! range is queued for recomputation, so on return every range is consistent
//! with the final ranges it depends on.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use log::{debug, log_enabled, Level};

use crate::error::{Error, Result};
use crate::factor::Var;
use crate::model::{ElementKind, Registry};
use crate::value::{ElementId, ExtendedValue, Value};

pub type Range = BTreeSet<ExtendedValue>;

#[derive(Debug, Default, Clone)]
pub struct ExpansionState {
    depth_of: BTreeMap<ElementId, i64>,
    range_of: BTreeMap<ElementId, Range>,
    back_pointers: BTreeMap<ElementId, BTreeSet<ElementId>>,
    worklist: VecDeque<ElementId>,
    queued: BTreeSet<ElementId>,
    trace: Option<Vec<String>>,
    computations: usize,
}

impl ExpansionState {
    pub fn new() -> Self {
        Self::default()
    }

    /// A state that records one trace line per range computation.
    pub fn with_trace() -> Self {
        ExpansionState {
            trace: Some(Vec::new()),
            ..Self::default()
        }
    }

    pub fn depth_of(&self, id: ElementId) -> Option<i64> {
        self.depth_of.get(&id).copied()
    }

    pub fn range_of(&self, id: ElementId) -> Option<&Range> {
        self.range_of.get(&id)
    }

    pub fn contains(&self, id: ElementId) -> bool {
        self.depth_of.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.depth_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth_of.is_empty()
    }

    /// Relevant element ids in ascending order.
    pub fn elements(&self) -> impl Iterator<Item = ElementId> + '_ {
        self.depth_of.keys().copied()
    }

    pub fn depths(&self) -> &BTreeMap<ElementId, i64> {
        &self.depth_of
    }

    pub fn ranges(&self) -> &BTreeMap<ElementId, Range> {
        &self.range_of
    }

    pub fn back_pointers(&self, id: ElementId) -> Option<&BTreeSet<ElementId>> {
        self.back_pointers.get(&id)
    }

    /// Trace lines `(step) id kind depth → range`, if tracing was enabled.
    pub fn trace(&self) -> &[String] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Number of range computations performed, including recomputations.
    pub fn computations(&self) -> usize {
        self.computations
    }

    /// Evidence targets that were expanded.
    pub fn expanded_evidence(&self, registry: &Registry) -> BTreeSet<ElementId> {
        registry
            .evidence_targets()
            .into_iter()
            .filter(|id| self.contains(*id))
            .collect()
    }

    fn range(&self, id: ElementId) -> Result<&Range> {
        self.range_of.get(&id).ok_or_else(|| {
            Error::Model(format!("cyclic dependency: {id} is needed while being expanded"))
        })
    }

    fn add_back_pointer(&mut self, from: ElementId, to: ElementId) {
        self.back_pointers.entry(from).or_default().insert(to);
    }

    fn enqueue(&mut self, id: ElementId) {
        if self.queued.insert(id) {
            self.worklist.push_back(id);
        }
    }
}

/// Expands `element` to depth `depth` with the basic recursive algorithm and
/// returns its range. Elements already expanded at least this deep are
/// reused; nothing is backtracked.
pub fn expand_basic(
    state: &mut ExpansionState,
    registry: &mut Registry,
    element: ElementId,
    depth: i64,
) -> Result<Range> {
    request(state, registry, element, depth, false)?;
    Ok(state.range(element)?.clone())
}

/// Expands every root to its depth and runs the backtracking worklist to a
/// fixpoint.
pub fn expand_with_backtracking(
    state: &mut ExpansionState,
    registry: &mut Registry,
    roots: &[(ElementId, i64)],
) -> Result<()> {
    for &(root, depth) in roots {
        request(state, registry, root, depth, true)?;
    }
    drain(state, registry)
}

/// Expands the queries to depth `depth`, then pulls in evidence lazily.
///
/// Starting from every element expanded so far, the users of those elements
/// are scanned one hop per round. In round `k` (counting from zero) an
/// evidence element that has not been expanded to `depth - k - 1` is expanded
/// to that depth, and the elements it brings in join the next round's
/// frontier. Rounds stop when the frontier is empty or the depth would go
/// negative, so evidence more than `depth` hops of use away from everything
/// expanded is never touched.
pub fn expand_lazy_evidence(
    state: &mut ExpansionState,
    registry: &mut Registry,
    queries: &[ElementId],
    depth: i64,
) -> Result<()> {
    let roots: Vec<_> = queries.iter().map(|&q| (q, depth)).collect();
    expand_with_backtracking(state, registry, &roots)?;

    let evidence = registry.evidence_targets();
    if evidence.is_empty() {
        return Ok(());
    }
    let mut visited: BTreeSet<ElementId> = state.elements().collect();
    let mut frontier: Vec<ElementId> = visited.iter().copied().collect();
    let mut level = depth;
    while level > 0 && !frontier.is_empty() {
        let target = level - 1;
        let mut next = BTreeSet::new();
        let mut additions = Vec::new();
        for &e in &frontier {
            for &user in registry.used_by(e) {
                if evidence.contains(&user)
                    && state.depth_of(user).is_none_or(|d| d < target)
                    && !additions.iter().any(|&(a, _)| a == user)
                {
                    additions.push((user, target));
                }
                if visited.insert(user) {
                    next.insert(user);
                }
            }
        }
        if !additions.is_empty() {
            debug!("lazy evidence round at depth {target}: {additions:?}");
            expand_with_backtracking(state, registry, &additions)?;
            for id in state.elements() {
                if visited.insert(id) {
                    next.insert(id);
                }
            }
        }
        frontier = next.into_iter().collect();
        level -= 1;
    }
    Ok(())
}

/// One variable per relevant element, ordered by element id, with its range
/// in canonical order.
pub fn relevant_variables(state: &ExpansionState) -> Vec<Var> {
    state
        .range_of
        .iter()
        .map(|(&id, range)| Var::new(id, range.iter().cloned().collect()))
        .collect()
}

/// Recomputes every range once from the current ranges of its dependencies
/// without expanding anything, and reports whether all of them are
/// unchanged. A state produced by the backtracking algorithm passes.
pub fn verify_fixpoint(state: &ExpansionState, registry: &Registry) -> bool {
    state.depth_of.keys().all(|&id| {
        match recompute_readonly(state, registry, id) {
            Some(range) => state.range_of.get(&id) == Some(&range),
            None => false,
        }
    })
}

fn recompute_readonly(state: &ExpansionState, registry: &Registry, id: ElementId) -> Option<Range> {
    let depth = state.depth_of(id)?;
    let mut range = Range::new();
    if depth < 0 {
        range.insert(ExtendedValue::Star);
        return Some(range);
    }
    let deep_enough = |dep: ElementId| state.depth_of(dep).is_some_and(|d| d >= depth - 1);
    match &registry.kind(id).ok()? {
        kind if kind.is_atomic() => {
            range.extend(kind.support().into_iter().map(|(v, _)| ExtendedValue::Regular(v)));
        }
        ElementKind::Apply { args, .. } => {
            if !args.iter().all(|&a| deep_enough(a)) {
                return None;
            }
            let ranges: Vec<&Range> = args.iter().map(|a| state.range_of.get(a)).collect::<Option<_>>()?;
            for combo in regular_combinations(&ranges) {
                range.insert(ExtendedValue::Regular(
                    registry.cached_apply_result(id, &combo)?.clone(),
                ));
            }
            if ranges.iter().any(|r| r.contains(&ExtendedValue::Star)) {
                range.insert(ExtendedValue::Star);
            }
        }
        ElementKind::Chain { parent, .. } => {
            if !deep_enough(*parent) {
                return None;
            }
            let parent_range = state.range_of.get(parent)?;
            for x in parent_range.iter().filter_map(ExtendedValue::regular) {
                let result = registry.cached_chain_result(id, x)?;
                if !deep_enough(result) {
                    return None;
                }
                range.extend(state.range_of.get(&result)?.iter().cloned());
            }
            if parent_range.contains(&ExtendedValue::Star) {
                range.insert(ExtendedValue::Star);
            }
        }
        _ => unreachable!("atomic kinds handled above"),
    }
    Some(range)
}

fn request(
    state: &mut ExpansionState,
    registry: &mut Registry,
    id: ElementId,
    depth: i64,
    backtrack: bool,
) -> Result<()> {
    registry.element(id)?;
    if state.depth_of(id).is_some_and(|d| d >= depth) {
        return Ok(());
    }
    state.depth_of.insert(id, depth);
    compute(state, registry, id, backtrack)
}

fn drain(state: &mut ExpansionState, registry: &mut Registry) -> Result<()> {
    while let Some(id) = state.worklist.pop_front() {
        state.queued.remove(&id);
        compute(state, registry, id, true)?;
    }
    Ok(())
}

/// Computes the range of `id` at its recorded depth, expanding dependencies
/// as needed.
fn compute(
    state: &mut ExpansionState,
    registry: &mut Registry,
    id: ElementId,
    backtrack: bool,
) -> Result<()> {
    let depth = state.depth_of[&id];
    let kind = registry.kind(id)?.clone();
    let mut range = Range::new();
    if depth < 0 {
        range.insert(ExtendedValue::Star);
    } else {
        match &kind {
            ElementKind::Constant(_) | ElementKind::Flip(_) | ElementKind::Select(_) => {
                range.extend(kind.support().into_iter().map(|(v, _)| ExtendedValue::Regular(v)));
            }
            ElementKind::Apply { args, .. } => {
                for &arg in args {
                    request(state, registry, arg, depth - 1, backtrack)?;
                    state.add_back_pointer(arg, id);
                }
                let ranges: Vec<Range> = args
                    .iter()
                    .map(|&a| state.range(a).cloned())
                    .collect::<Result<_>>()?;
                let refs: Vec<&Range> = ranges.iter().collect();
                for combo in regular_combinations(&refs) {
                    range.insert(ExtendedValue::Regular(registry.apply_result(id, &combo)?));
                }
                if ranges.iter().any(|r| r.contains(&ExtendedValue::Star)) {
                    range.insert(ExtendedValue::Star);
                }
            }
            ElementKind::Chain { parent, .. } => {
                request(state, registry, *parent, depth - 1, backtrack)?;
                state.add_back_pointer(*parent, id);
                let parent_range = state.range(*parent)?.clone();
                for x in parent_range.iter().filter_map(ExtendedValue::regular) {
                    let result = registry.chain_result(id, x)?;
                    if result == id {
                        return Err(Error::Model(format!("chain {id} resolved to itself")));
                    }
                    request(state, registry, result, depth - 1, backtrack)?;
                    state.add_back_pointer(result, id);
                    let result_range = state.range(result)?.clone();
                    range.extend(result_range);
                }
                if parent_range.contains(&ExtendedValue::Star) {
                    range.insert(ExtendedValue::Star);
                }
            }
        }
    }

    state.computations += 1;
    if state.trace.is_some() || log_enabled!(Level::Debug) {
        let line = format!(
            "({}) {} {} {} → {}",
            state.computations,
            id,
            kind.name(),
            depth,
            range_text(&range)
        );
        debug!("{line}");
        if let Some(trace) = state.trace.as_mut() {
            trace.push(line);
        }
    }

    let changed = state.range_of.get(&id) != Some(&range);
    state.range_of.insert(id, range);
    if changed && backtrack {
        let users: Vec<ElementId> = state
            .back_pointers
            .get(&id)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for user in users {
            state.enqueue(user);
        }
    }
    Ok(())
}

/// All tuples of regular values, one from each range, in lexicographic
/// order. Empty if any range has no regular value.
pub(crate) fn regular_combinations(ranges: &[&Range]) -> Vec<Vec<Value>> {
    let lists: Vec<Vec<&Value>> = ranges
        .iter()
        .map(|r| r.iter().filter_map(ExtendedValue::regular).collect())
        .collect();
    if lists.iter().any(|l| l.is_empty()) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; lists.len()];
    loop {
        out.push(idx.iter().zip(&lists).map(|(&i, l)| l[i].clone()).collect());
        let mut pos = lists.len();
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < lists[pos].len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

pub fn range_text(range: &Range) -> String {
    let parts: Vec<String> = range.iter().map(|v| v.to_string()).collect();
    format!("{{{}}}", parts.join(", "))
}
