//! Program representation: elements, evidence and the registry that owns
//! them.
//!
//! A program is a graph of [`Element`]s. Atomic elements (`Constant`, `Flip`,
//! `Select`) have a fixed finite support. `Apply` maps the values of its
//! arguments through a deterministic function. `Chain` feeds the value of its
//! parent to a function returning another element, which is how recursion and
//! unbounded structure enter a program. Chain and Apply functions may create
//! new elements; every result is memoized, so the same input always maps to
//! the same output for the lifetime of the registry.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::factor::Interval;
use crate::value::{ElementId, Field, Value};

pub type ApplyFn = Arc<dyn Fn(&[Value], &mut Registry) -> Result<Value> + Send + Sync>;
pub type ChainFn = Arc<dyn Fn(&Value, &mut Registry) -> Result<ElementId> + Send + Sync>;
pub type WeightFn = Arc<dyn Fn(&Value) -> f64 + Send + Sync>;

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Clone)]
pub enum ElementKind {
    Constant(Value),
    Flip(f64),
    Select(Vec<(f64, Value)>),
    Apply { args: Vec<ElementId>, func: ApplyFn },
    Chain { parent: ElementId, func: ChainFn },
}

impl ElementKind {
    pub fn is_atomic(&self) -> bool {
        matches!(
            self,
            ElementKind::Constant(_) | ElementKind::Flip(_) | ElementKind::Select(_)
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            ElementKind::Constant(_) => "Constant",
            ElementKind::Flip(_) => "Flip",
            ElementKind::Select(_) => "Select",
            ElementKind::Apply { .. } => "Apply",
            ElementKind::Chain { .. } => "Chain",
        }
    }

    /// Argument edges fixed at creation time.
    pub fn arguments(&self) -> Vec<ElementId> {
        match self {
            ElementKind::Apply { args, .. } => args.clone(),
            ElementKind::Chain { parent, .. } => vec![*parent],
            _ => Vec::new(),
        }
    }

    /// Support of an atomic element with the probability of each value, in
    /// canonical value order. Zero-probability Flip outcomes are left out.
    /// Empty for Apply and Chain.
    pub fn support(&self) -> Vec<(Value, f64)> {
        let mut support = match self {
            ElementKind::Constant(v) => vec![(v.clone(), 1.0)],
            ElementKind::Flip(p) => {
                let mut s = Vec::with_capacity(2);
                if *p < 1.0 {
                    s.push((Value::Bool(false), 1.0 - p));
                }
                if *p > 0.0 {
                    s.push((Value::Bool(true), *p));
                }
                s
            }
            ElementKind::Select(branches) => {
                branches.iter().map(|(w, v)| (v.clone(), *w)).collect()
            }
            ElementKind::Apply { .. } | ElementKind::Chain { .. } => Vec::new(),
        };
        support.sort_by(|a, b| a.0.cmp(&b.0));
        support
    }
}

impl fmt::Debug for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementKind::Constant(v) => write!(f, "Constant({v})"),
            ElementKind::Flip(p) => write!(f, "Flip({p})"),
            ElementKind::Select(b) => {
                write!(f, "Select(")?;
                for (i, (w, v)) in b.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{w} -> {v}")?;
                }
                write!(f, ")")
            }
            ElementKind::Apply { args, .. } => write!(f, "Apply({args:?})"),
            ElementKind::Chain { parent, .. } => write!(f, "Chain({parent})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Element {
    pub id: ElementId,
    pub kind: ElementKind,
}

#[derive(Clone)]
pub enum EvidenceKind {
    Observation(Value),
    SoftConstraint { weight: WeightFn, star_bounds: Interval },
}

impl fmt::Debug for EvidenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvidenceKind::Observation(v) => write!(f, "Observation({v})"),
            EvidenceKind::SoftConstraint { star_bounds, .. } => {
                write!(f, "SoftConstraint(star: [{}, {}])", star_bounds.lo, star_bounds.hi)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evidence {
    pub target: ElementId,
    pub kind: EvidenceKind,
}

impl Evidence {
    pub fn observation(target: ElementId, value: Value) -> Self {
        Evidence {
            target,
            kind: EvidenceKind::Observation(value),
        }
    }

    /// Soft constraint with the default star bounds `[0, 1]`.
    pub fn soft(target: ElementId, weight: impl Fn(&Value) -> f64 + Send + Sync + 'static) -> Self {
        Evidence {
            target,
            kind: EvidenceKind::SoftConstraint {
                weight: Arc::new(weight),
                star_bounds: Interval::UNIT,
            },
        }
    }

    pub fn with_star_bounds(mut self, bounds: Interval) -> Self {
        if let EvidenceKind::SoftConstraint { star_bounds, .. } = &mut self.kind {
            *star_bounds = bounds;
        }
        self
    }

    /// Weight interval this evidence assigns to a regular value.
    pub fn weight_of(&self, value: &Value) -> Interval {
        match &self.kind {
            EvidenceKind::Observation(v) => {
                if v == value {
                    Interval::ONE
                } else {
                    Interval::ZERO
                }
            }
            EvidenceKind::SoftConstraint { weight, .. } => Interval::point(weight(value)),
        }
    }

    /// Weight interval for an unresolved (star) value.
    pub fn star_weight(&self) -> Interval {
        match &self.kind {
            EvidenceKind::Observation(_) => Interval::UNIT,
            EvidenceKind::SoftConstraint { star_bounds, .. } => *star_bounds,
        }
    }
}

/// Counts of user-function evaluations, for checking memoization.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct EvaluationCounts {
    pub apply: usize,
    pub chain: usize,
}

/// Owns every element of a program together with evidence, reverse argument
/// edges and the Apply/Chain result caches.
#[derive(Default)]
pub struct Registry {
    elements: Vec<Element>,
    used_by: Vec<BTreeSet<ElementId>>,
    evidence: Vec<Evidence>,
    apply_memo: HashMap<(ElementId, Vec<Value>), Value>,
    chain_memo: HashMap<(ElementId, Value), ElementId>,
    keyed: HashMap<Value, ElementId>,
    counts: EvaluationCounts,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("elements", &self.elements.len())
            .field("evidence", &self.evidence)
            .finish()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, id: ElementId) -> Result<&Element> {
        self.elements.get(id.0).ok_or(Error::UnknownElement(id))
    }

    pub fn kind(&self, id: ElementId) -> Result<&ElementKind> {
        Ok(&self.element(id)?.kind)
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.elements.iter()
    }

    /// Elements that use `id`: its Apply/Chain users plus the Chains that
    /// resolved to it.
    pub fn used_by(&self, id: ElementId) -> &BTreeSet<ElementId> {
        static EMPTY: BTreeSet<ElementId> = BTreeSet::new();
        self.used_by.get(id.0).unwrap_or(&EMPTY)
    }

    pub fn evaluation_counts(&self) -> EvaluationCounts {
        self.counts
    }

    pub fn create_element(&mut self, kind: ElementKind) -> Result<ElementId> {
        match &kind {
            ElementKind::Constant(_) => {}
            ElementKind::Flip(p) => check_probability(*p)?,
            ElementKind::Select(branches) => check_select(branches)?,
            ElementKind::Apply { args, .. } => {
                if args.is_empty() {
                    return Err(Error::EmptyApply);
                }
                for &a in args {
                    self.element(a)?;
                }
            }
            ElementKind::Chain { parent, .. } => {
                self.element(*parent)?;
            }
        }
        let id = ElementId(self.elements.len());
        for arg in kind.arguments() {
            self.used_by[arg.0].insert(id);
        }
        self.elements.push(Element { id, kind });
        self.used_by.push(BTreeSet::new());
        Ok(id)
    }

    pub fn constant(&mut self, value: impl Into<Value>) -> Result<ElementId> {
        self.create_element(ElementKind::Constant(value.into()))
    }

    pub fn flip(&mut self, p: f64) -> Result<ElementId> {
        self.create_element(ElementKind::Flip(p))
    }

    pub fn select(&mut self, branches: Vec<(f64, Value)>) -> Result<ElementId> {
        self.create_element(ElementKind::Select(branches))
    }

    pub fn apply(
        &mut self,
        args: Vec<ElementId>,
        func: impl Fn(&[Value], &mut Registry) -> Result<Value> + Send + Sync + 'static,
    ) -> Result<ElementId> {
        self.create_element(ElementKind::Apply {
            args,
            func: Arc::new(func),
        })
    }

    /// Apply over a single argument with a function that creates no elements.
    pub fn map(
        &mut self,
        arg: ElementId,
        func: impl Fn(&Value) -> Value + Send + Sync + 'static,
    ) -> Result<ElementId> {
        self.apply(vec![arg], move |vs, _| Ok(func(&vs[0])))
    }

    pub fn chain(
        &mut self,
        parent: ElementId,
        func: impl Fn(&Value, &mut Registry) -> Result<ElementId> + Send + Sync + 'static,
    ) -> Result<ElementId> {
        self.create_element(ElementKind::Chain {
            parent,
            func: Arc::new(func),
        })
    }

    /// `If(test, then, else)` lowered to a Chain over the Boolean test.
    pub fn if_then_else(
        &mut self,
        test: ElementId,
        then_branch: ElementId,
        else_branch: ElementId,
    ) -> Result<ElementId> {
        self.element(then_branch)?;
        self.element(else_branch)?;
        self.chain(test, move |v, _| match v {
            Value::Bool(true) => Ok(then_branch),
            Value::Bool(false) => Ok(else_branch),
            other => Err(Error::Model(format!("if test produced non-Boolean {other}"))),
        })
    }

    /// `a === value`, lowered to an Apply.
    pub fn equals_const(&mut self, a: ElementId, value: Value) -> Result<ElementId> {
        self.map(a, move |v| Value::Bool(*v == value))
    }

    /// `a === b`, lowered to an Apply.
    pub fn equals(&mut self, a: ElementId, b: ElementId) -> Result<ElementId> {
        self.apply(vec![a, b], |vs, _| Ok(Value::Bool(vs[0] == vs[1])))
    }

    pub fn not(&mut self, a: ElementId) -> Result<ElementId> {
        self.apply(vec![a], |vs, _| match vs[0] {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            ref other => Err(Error::Model(format!("negation of non-Boolean {other}"))),
        })
    }

    /// Joins several elements into one tuple-valued element, the way to pose
    /// a query over more than one variable.
    pub fn tuple(&mut self, items: Vec<ElementId>) -> Result<ElementId> {
        self.apply(items, |vs, _| {
            Ok(Value::constructed(
                "Tuple",
                vs.iter().cloned().map(Field::Value).collect(),
            ))
        })
    }

    /// Returns the element registered under `key`, building and registering
    /// it on first use. Models use this to share one element per logical
    /// position (such as the HMM state at time t) across recursive calls.
    pub fn memo_element(
        &mut self,
        key: Value,
        build: impl FnOnce(&mut Registry) -> Result<ElementId>,
    ) -> Result<ElementId> {
        if let Some(&id) = self.keyed.get(&key) {
            return Ok(id);
        }
        let id = build(self)?;
        self.keyed.insert(key, id);
        Ok(id)
    }

    /// Result element of a Chain for parent value `value`, evaluating the
    /// chain function at most once per value.
    pub fn chain_result(&mut self, chain: ElementId, value: &Value) -> Result<ElementId> {
        if let Some(&id) = self.chain_memo.get(&(chain, value.clone())) {
            return Ok(id);
        }
        let func = match self.kind(chain)? {
            ElementKind::Chain { func, .. } => func.clone(),
            _ => {
                return Err(Error::WrongKind {
                    element: chain,
                    expected: "a Chain",
                })
            }
        };
        self.counts.chain += 1;
        let result = func(value, self).map_err(|source| Error::FunctionFailed {
            element: chain,
            input: value.to_string(),
            source: Box::new(source),
        })?;
        self.element(result).map_err(|source| Error::FunctionFailed {
            element: chain,
            input: value.to_string(),
            source: Box::new(source),
        })?;
        self.used_by[result.0].insert(chain);
        self.chain_memo.insert((chain, value.clone()), result);
        Ok(result)
    }

    pub fn cached_chain_result(&self, chain: ElementId, value: &Value) -> Option<ElementId> {
        self.chain_memo.get(&(chain, value.clone())).copied()
    }

    /// Result of an Apply on argument values `values`, evaluating the
    /// function at most once per input tuple.
    pub fn apply_result(&mut self, apply: ElementId, values: &[Value]) -> Result<Value> {
        if let Some(v) = self.apply_memo.get(&(apply, values.to_vec())) {
            return Ok(v.clone());
        }
        let (arity, func) = match self.kind(apply)? {
            ElementKind::Apply { args, func } => (args.len(), func.clone()),
            _ => {
                return Err(Error::WrongKind {
                    element: apply,
                    expected: "an Apply",
                })
            }
        };
        if arity != values.len() {
            return Err(Error::Arity {
                element: apply,
                expected: arity,
                actual: values.len(),
            });
        }
        self.counts.apply += 1;
        let result = func(values, self).map_err(|source| Error::FunctionFailed {
            element: apply,
            input: tuple_text(values),
            source: Box::new(source),
        })?;
        self.apply_memo
            .insert((apply, values.to_vec()), result.clone());
        Ok(result)
    }

    pub fn cached_apply_result(&self, apply: ElementId, values: &[Value]) -> Option<&Value> {
        self.apply_memo.get(&(apply, values.to_vec()))
    }

    pub fn add_evidence(&mut self, evidence: Evidence) -> Result<()> {
        self.element(evidence.target)?;
        if let EvidenceKind::SoftConstraint { star_bounds, .. } = &evidence.kind {
            let Interval { lo, hi } = *star_bounds;
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::InvalidStarBounds { lo, hi });
            }
        }
        self.evidence.push(evidence);
        Ok(())
    }

    pub fn observe(&mut self, target: ElementId, value: impl Into<Value>) -> Result<()> {
        self.add_evidence(Evidence::observation(target, value.into()))
    }

    pub fn evidence(&self) -> &[Evidence] {
        &self.evidence
    }

    pub fn evidence_targets(&self) -> BTreeSet<ElementId> {
        self.evidence.iter().map(|e| e.target).collect()
    }

    pub fn is_evidence(&self, id: ElementId) -> bool {
        self.evidence.iter().any(|e| e.target == id)
    }
}

fn tuple_text(values: &[Value]) -> String {
    let parts: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(", "))
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p))
    }
}

fn check_select(branches: &[(f64, Value)]) -> Result<()> {
    if branches.is_empty() {
        return Err(Error::EmptySelect);
    }
    let mut seen = BTreeSet::new();
    let mut total = 0.0;
    for (w, v) in branches {
        if !(*w > 0.0) || !w.is_finite() {
            return Err(Error::NonPositiveWeight(*w));
        }
        check_probability(*w)?;
        if !seen.insert(v) {
            return Err(Error::DuplicateSelectValue(v.clone()));
        }
        total += w;
    }
    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::SelectNotNormalized(total));
    }
    Ok(())
}
