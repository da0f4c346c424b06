//! Interval-entry factors over extended-range variables, and the lowering of
//! an expansion state into a factor set.
//!
//! Each relevant element contributes a definition factor (several for a
//! Chain), and each expanded evidence element a constraint factor. Entries
//! are intervals `[lo, hi]`; definition factors are always point-valued, and
//! only constraint factors put a genuine interval on star.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::expand::{relevant_variables, ExpansionState};
use crate::model::{ElementKind, Evidence, EvidenceKind, Registry};
use crate::table::{product_with, strides, sum_out_with, table_size, Table};
use crate::value::{ElementId, ExtendedValue, Value};

/// A closed interval of nonnegative reals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };
    pub const ONE: Interval = Interval { lo: 1.0, hi: 1.0 };
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn mul(self, other: Interval) -> Interval {
        Interval {
            lo: self.lo * other.lo,
            hi: self.hi * other.hi,
        }
    }

    pub fn add(self, other: Interval) -> Interval {
        Interval {
            lo: self.lo + other.lo,
            hi: self.hi + other.hi,
        }
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && 0.0 <= self.lo && self.lo <= self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// A factor variable: one relevant element and its extended range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Var {
    pub id: ElementId,
    pub range: Vec<ExtendedValue>,
}

impl Var {
    pub fn new(id: ElementId, range: Vec<ExtendedValue>) -> Self {
        Var { id, range }
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn index_of(&self, value: &ExtendedValue) -> Option<usize> {
        self.range.binary_search(value).ok()
    }

    pub fn has_star(&self) -> bool {
        self.range.last().is_some_and(ExtendedValue::is_star)
    }

    pub fn regular_values(&self) -> impl Iterator<Item = &Value> {
        self.range.iter().filter_map(ExtendedValue::regular)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    /// Defines the distribution of an element given its inputs.
    Definition,
    /// Encodes evidence.
    Constraint,
    /// Produced by multiplying or summing other factors.
    Derived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub vars: Vec<Var>,
    pub entries: Vec<Interval>,
    pub kind: FactorKind,
    /// Element the factor was built for, if any.
    pub element: Option<ElementId>,
}

impl Factor {
    pub fn new(vars: Vec<Var>, entries: Vec<Interval>, kind: FactorKind) -> Result<Self> {
        for (i, v) in vars.iter().enumerate() {
            if v.range.is_empty() {
                return Err(Error::InvalidFactor(format!("variable {} has an empty range", v.id)));
            }
            if !v.range.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::InvalidFactor(format!(
                    "range of {} is not in canonical order",
                    v.id
                )));
            }
            if vars[..i].iter().any(|u| u.id == v.id) {
                return Err(Error::InvalidFactor(format!("variable {} appears twice", v.id)));
            }
        }
        if table_size(&vars) != entries.len() {
            return Err(Error::InvalidFactor(format!(
                "table over {} entries given {} entries",
                table_size(&vars),
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|e| !e.is_valid()) {
            return Err(Error::InvalidFactor(format!("entry {bad} is not a nonnegative interval")));
        }
        Ok(Factor {
            vars,
            entries,
            kind,
            element: None,
        })
    }

    /// Builds a factor over `scope` by evaluating `entry` on each joint
    /// assignment. A variable may appear in `scope` more than once; the
    /// table is built over the distinct variables and `entry` sees the value
    /// of each scope position.
    pub fn tabulate(
        scope: &[&Var],
        kind: FactorKind,
        mut entry: impl FnMut(&[&ExtendedValue]) -> Result<Interval>,
    ) -> Result<Factor> {
        let mut vars: Vec<Var> = Vec::new();
        let mut slot = Vec::with_capacity(scope.len());
        for v in scope {
            match vars.iter().position(|u| u.id == v.id) {
                Some(p) => {
                    if vars[p].range != v.range {
                        return Err(Error::RangeMismatch(v.id));
                    }
                    slot.push(p);
                }
                None => {
                    slot.push(vars.len());
                    vars.push((*v).clone());
                }
            }
        }
        let sizes: Vec<usize> = vars.iter().map(Var::len).collect();
        let total: usize = sizes.iter().product();
        let mut entries = Vec::with_capacity(total);
        let mut idx = vec![0usize; vars.len()];
        for _ in 0..total {
            let values: Vec<&ExtendedValue> =
                slot.iter().map(|&p| &vars[p].range[idx[p]]).collect();
            entries.push(entry(&values)?);
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
        Factor::new(vars, entries, kind)
    }

    /// The factor over no variables holding `[1, 1]`.
    pub fn unit() -> Factor {
        Factor {
            vars: Vec::new(),
            entries: vec![Interval::ONE],
            kind: FactorKind::Derived,
            element: None,
        }
    }

    fn for_element(mut self, id: ElementId) -> Self {
        self.element = Some(id);
        self
    }

    pub fn contains(&self, id: ElementId) -> bool {
        self.vars.iter().any(|v| v.id == id)
    }

    pub fn var(&self, id: ElementId) -> Option<&Var> {
        self.vars.iter().find(|v| v.id == id)
    }

    pub fn is_point(&self) -> bool {
        self.entries.iter().all(Interval::is_point)
    }

    /// Entry at the given per-variable indices.
    pub fn get(&self, indices: &[usize]) -> Interval {
        let s = strides(&self.vars);
        self.entries[indices.iter().zip(&s).map(|(i, s)| i * s).sum::<usize>()]
    }

    /// Entry at a joint assignment given as values in scope order.
    pub fn entry(&self, values: &[&ExtendedValue]) -> Option<Interval> {
        let mut indices = Vec::with_capacity(values.len());
        for (v, x) in self.vars.iter().zip(values) {
            indices.push(v.index_of(x)?);
        }
        Some(self.get(&indices))
    }

    pub fn lo_table(&self) -> Table {
        Table {
            vars: self.vars.clone(),
            values: self.entries.iter().map(|e| e.lo).collect(),
        }
    }

    pub fn hi_table(&self) -> Table {
        Table {
            vars: self.vars.clone(),
            values: self.entries.iter().map(|e| e.hi).collect(),
        }
    }

    /// Pairs a lower and an upper table over the same scope.
    pub fn from_tables(lo: &Table, hi: &Table) -> Result<Factor> {
        if lo.vars != hi.vars {
            return Err(Error::InvalidFactor("lower and upper tables differ in scope".into()));
        }
        let entries = lo
            .values
            .iter()
            .zip(&hi.values)
            .map(|(&l, &h)| Interval::new(l, h))
            .collect();
        Factor::new(lo.vars.clone(), entries, FactorKind::Derived)
    }

    pub fn product(&self, other: &Factor) -> Result<Factor> {
        let (vars, entries) =
            product_with(&self.vars, &self.entries, &other.vars, &other.entries, Interval::mul)?;
        Ok(Factor {
            vars,
            entries,
            kind: FactorKind::Derived,
            element: None,
        })
    }

    pub fn marginalize(&self, id: ElementId) -> Result<Factor> {
        let (vars, entries) = sum_out_with(&self.vars, &self.entries, id, Interval::ZERO, Interval::add)
            .ok_or_else(|| Error::InvalidFactor(format!("{id} is not in the factor")))?;
        Ok(Factor {
            vars,
            entries,
            kind: FactorKind::Derived,
            element: None,
        })
    }

    /// Dump block: a header line then one `<indices> <lo> <hi>` line per
    /// entry.
    pub fn dump(&self, index: usize) -> String {
        let mut out = String::new();
        let vars: Vec<String> = self.vars.iter().map(|v| format!("{}:{}", v.id.0, v.len())).collect();
        let _ = writeln!(out, "factor {index} vars={}", vars.join(","));
        let sizes: Vec<usize> = self.vars.iter().map(Var::len).collect();
        let mut idx = vec![0usize; sizes.len()];
        for e in &self.entries {
            let text = if idx.is_empty() {
                "-".to_string()
            } else {
                idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
            };
            let _ = writeln!(out, "{text} {} {}", e.lo, e.hi);
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
}

/// Chain encoding: one three-variable factor per regular parent value and a
/// binary factor for a star parent.
#[derive(Debug, Clone)]
pub struct ChainFactorSet {
    pub per_value: Vec<(Value, Factor)>,
    pub star: Option<Factor>,
}

impl ChainFactorSet {
    pub fn into_factors(self) -> Vec<Factor> {
        let mut out: Vec<Factor> = self.per_value.into_iter().map(|(_, f)| f).collect();
        out.extend(self.star);
        out
    }
}

/// All variables and factors for one expansion.
#[derive(Debug, Clone)]
pub struct FactorSet {
    pub variables: Vec<Var>,
    pub factors: Vec<Factor>,
}

impl FactorSet {
    pub fn variable(&self, id: ElementId) -> Option<&Var> {
        self.variables
            .binary_search_by_key(&id, |v| v.id)
            .ok()
            .map(|i| &self.variables[i])
    }

    pub fn dump(&self) -> String {
        self.factors
            .iter()
            .enumerate()
            .map(|(i, f)| f.dump(i))
            .collect()
    }
}

fn star_unit(var: &Var) -> Result<Factor> {
    if var.range != [ExtendedValue::Star] {
        return Err(Error::FactorInconsistency {
            element: var.id,
            detail: "unexpanded element must have range {*}".into(),
        });
    }
    Factor::new(vec![var.clone()], vec![Interval::ONE], FactorKind::Definition)
}

/// Factor for an atomic element, or for any element whose range is `{*}`
/// because it was requested below depth zero.
pub fn atomic_factor(var: &Var, kind: &ElementKind) -> Result<Factor> {
    if var.range == [ExtendedValue::Star] {
        return Ok(star_unit(var)?.for_element(var.id));
    }
    if !kind.is_atomic() {
        return Err(Error::FactorInconsistency {
            element: var.id,
            detail: format!("{} is not atomic", kind.name()),
        });
    }
    let support = kind.support();
    let matches = support.len() == var.len()
        && support
            .iter()
            .zip(&var.range)
            .all(|((v, _), x)| x.regular() == Some(v));
    if !matches {
        return Err(Error::FactorInconsistency {
            element: var.id,
            detail: "range differs from the support".into(),
        });
    }
    let entries = support.iter().map(|&(_, p)| Interval::point(p)).collect();
    Ok(Factor::new(vec![var.clone()], entries, FactorKind::Definition)?.for_element(var.id))
}

/// Indicator factor over `(args..., result)` for an Apply element.
pub fn apply_factor(
    result: &Var,
    args: &[&Var],
    element: ElementId,
    registry: &Registry,
) -> Result<Factor> {
    let mut scope: Vec<&Var> = args.to_vec();
    scope.push(result);
    let inconsistent = |detail: String| Error::FactorInconsistency { element, detail };
    let n = args.len();
    let f = Factor::tabulate(&scope, FactorKind::Definition, |values| {
        let (xs, y) = values.split_at(n);
        let y = y[0];
        if xs.iter().any(|x| x.is_star()) {
            return Ok(if y.is_star() { Interval::ONE } else { Interval::ZERO });
        }
        let inputs: Vec<Value> = xs.iter().map(|x| x.regular().cloned().unwrap()).collect();
        let out = registry
            .cached_apply_result(element, &inputs)
            .ok_or_else(|| inconsistent("apply result was never computed".into()))?;
        let out = ExtendedValue::Regular(out.clone());
        if result.index_of(&out).is_none() {
            return Err(inconsistent(format!("result {out} is missing from the range")));
        }
        Ok(if *y == out { Interval::ONE } else { Interval::ZERO })
    })?;
    Ok(f.for_element(element))
}

/// Decomposed factors for a Chain element. `results` maps each regular
/// parent value to the variable of the element it resolves to.
pub fn chain_factors(
    chain: &Var,
    parent: &Var,
    results: &BTreeMap<Value, &Var>,
) -> Result<ChainFactorSet> {
    let inconsistent = |detail: String| Error::FactorInconsistency {
        element: chain.id,
        detail,
    };
    let mut per_value = Vec::new();
    for x in parent.regular_values() {
        let result = results
            .get(x)
            .ok_or_else(|| inconsistent(format!("no result variable for parent value {x}")))?;
        if let Some(missing) = result.range.iter().find(|y| chain.index_of(y).is_none()) {
            return Err(inconsistent(format!("result value {missing} is missing from the range")));
        }
        let this = ExtendedValue::Regular(x.clone());
        let f = Factor::tabulate(&[parent, result, chain], FactorKind::Definition, |v| {
            Ok(if *v[0] != this || v[1] == v[2] {
                Interval::ONE
            } else {
                Interval::ZERO
            })
        })?;
        per_value.push((x.clone(), f.for_element(chain.id)));
    }
    let star = if parent.has_star() {
        if !chain.has_star() {
            return Err(inconsistent("parent has * but the chain does not".into()));
        }
        let f = Factor::tabulate(&[parent, chain], FactorKind::Definition, |v| {
            Ok(if !v[0].is_star() || v[1].is_star() {
                Interval::ONE
            } else {
                Interval::ZERO
            })
        })?;
        Some(f.for_element(chain.id))
    } else {
        None
    };
    Ok(ChainFactorSet { per_value, star })
}

/// Constraint factor for one piece of evidence on `var`.
pub fn constraint_factor(var: &Var, evidence: &Evidence) -> Result<Factor> {
    let mut entries = Vec::with_capacity(var.len());
    for x in &var.range {
        let w = match x {
            ExtendedValue::Star => evidence.star_weight(),
            ExtendedValue::Regular(v) => {
                let w = evidence.weight_of(v);
                if let EvidenceKind::SoftConstraint { .. } = evidence.kind {
                    if !(0.0..=1.0).contains(&w.lo) {
                        return Err(Error::InvalidWeight {
                            element: var.id,
                            value: v.clone(),
                            weight: w.lo,
                        });
                    }
                }
                w
            }
        };
        entries.push(w);
    }
    Ok(Factor::new(vec![var.clone()], entries, FactorKind::Constraint)?.for_element(var.id))
}

/// Lowers a finished expansion into its factor set: definition factors for
/// every relevant element in id order, then one constraint factor per
/// expanded evidence element in registration order.
pub fn build_all_factors(state: &ExpansionState, registry: &Registry) -> Result<FactorSet> {
    let variables = relevant_variables(state);
    let lookup = |id: ElementId| -> Result<&Var> {
        variables
            .binary_search_by_key(&id, |v| v.id)
            .map(|i| &variables[i])
            .map_err(|_| Error::FactorInconsistency {
                element: id,
                detail: "dependency was not expanded".into(),
            })
    };
    let mut factors = Vec::new();
    for var in &variables {
        let kind = registry.kind(var.id)?;
        if var.range == [ExtendedValue::Star] && state.depth_of(var.id).is_some_and(|d| d < 0) {
            factors.push(star_unit(var)?.for_element(var.id));
            continue;
        }
        match kind {
            ElementKind::Constant(_) | ElementKind::Flip(_) | ElementKind::Select(_) => {
                factors.push(atomic_factor(var, kind)?);
            }
            ElementKind::Apply { args, .. } => {
                let arg_vars: Vec<&Var> = args.iter().map(|&a| lookup(a)).collect::<Result<_>>()?;
                factors.push(apply_factor(var, &arg_vars, var.id, registry)?);
            }
            ElementKind::Chain { parent, .. } => {
                let parent_var = lookup(*parent)?;
                let mut results = BTreeMap::new();
                for x in parent_var.regular_values() {
                    let y = registry.cached_chain_result(var.id, x).ok_or_else(|| {
                        Error::FactorInconsistency {
                            element: var.id,
                            detail: format!("chain result for {x} was never computed"),
                        }
                    })?;
                    results.insert(x.clone(), lookup(y)?);
                }
                factors.extend(chain_factors(var, parent_var, &results)?.into_factors());
            }
        }
    }
    for evidence in registry.evidence() {
        if let Ok(var) = lookup(evidence.target) {
            factors.push(constraint_factor(var, evidence)?);
        }
    }
    Ok(FactorSet { variables, factors })
}
