//! Normalized probability bounds and the iterative-deepening driver.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::{Duration, Instant};

use log::{info, warn};

use crate::bp::{run_bp, BpOptions};
use crate::error::{Error, Result};
use crate::expand::{expand_lazy_evidence, ExpansionState};
use crate::factor::{build_all_factors, Factor, FactorSet};
use crate::model::Registry;
use crate::value::{ElementId, ExtendedValue, Value};
use crate::ve::run_ve;

const MONOTONICITY_TOLERANCE: f64 = 1e-12;

/// Lower and upper probability for each regular query value.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub per_value: BTreeMap<Value, (f64, f64)>,
    /// Share of the upper normalizer sitting on star before it is absorbed
    /// into the regular upper bounds.
    pub star_mass_upper: f64,
}

impl Bounds {
    /// Bounds for `value`. A value absent from the expanded range has lower
    /// bound 0 and takes whatever mass the listed values leave.
    pub fn get(&self, value: &Value) -> (f64, f64) {
        match self.per_value.get(value) {
            Some(&b) => b,
            None => (0.0, (1.0 - self.lower_sum()).clamp(0.0, 1.0)),
        }
    }

    pub fn lower_sum(&self) -> f64 {
        self.per_value.values().map(|b| b.0).sum()
    }

    /// Largest `upper - lower` over the listed values and `extra`, or 1 if
    /// there are none.
    pub fn gap(&self, extra: &[Value]) -> f64 {
        let values: BTreeSet<&Value> = self.per_value.keys().chain(extra).collect();
        values
            .into_iter()
            .map(|v| {
                let (l, u) = self.get(v);
                u - l
            })
            .reduce(f64::max)
            .unwrap_or(1.0)
    }
}

/// Turns an unnormalized interval factor over the query into bounds.
///
/// With `U` the sum of all upper entries including star, each regular value
/// gets lower bound `lo / U` and upper bound one minus the lower bounds of
/// the other regular values.
pub fn finalize(unnormalized: &Factor) -> Result<Bounds> {
    let [var] = unnormalized.vars.as_slice() else {
        return Err(Error::InvalidFactor(format!(
            "finalize expects a factor over one variable, got {}",
            unnormalized.vars.len()
        )));
    };
    let total: f64 = unnormalized.entries.iter().map(|e| e.hi).sum();
    if !(total > 0.0) {
        return Err(Error::InconsistentEvidence);
    }
    let mut lower = Vec::new();
    let mut star_mass_upper = 0.0;
    for (x, e) in var.range.iter().zip(&unnormalized.entries) {
        match x {
            ExtendedValue::Regular(v) => lower.push((v.clone(), e.lo / total)),
            ExtendedValue::Star => star_mass_upper = e.hi / total,
        }
    }
    let mut per_value = BTreeMap::new();
    for (j, (v, l)) in lower.iter().enumerate() {
        let others: f64 = lower
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != j)
            .map(|(_, (_, li))| li)
            .sum();
        let upper = (1.0 - others).clamp(*l, 1.0);
        per_value.insert(v.clone(), (*l, upper));
    }
    Ok(Bounds {
        per_value,
        star_mass_upper,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ve,
    Bp,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Ve => "ve",
            Algorithm::Bp => "bp",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct AnytimeOptions {
    pub algorithm: Option<Algorithm>,
    pub bp: BpOptions,
    /// Query values that should count toward the gap even before they show
    /// up in the expanded range.
    pub domain: Vec<Value>,
}

impl AnytimeOptions {
    pub fn ve() -> Self {
        AnytimeOptions::default()
    }

    pub fn bp(bp: BpOptions) -> Self {
        AnytimeOptions {
            algorithm: Some(Algorithm::Bp),
            bp,
            domain: Vec::new(),
        }
    }

    pub fn with_domain(mut self, domain: Vec<Value>) -> Self {
        self.domain = domain;
        self
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm.unwrap_or(Algorithm::Ve)
    }
}

#[derive(Debug, Clone)]
pub struct DepthResult {
    pub depth: i64,
    pub bounds: Bounds,
    pub gap: f64,
    pub num_variables: usize,
    pub num_factors: usize,
    pub elapsed: Duration,
    pub algorithm: Algorithm,
    pub approximate: bool,
    pub converged: bool,
    /// False when bounds loosened relative to the previous depth while the
    /// set of expanded evidence grew.
    pub monotonicity_ok: bool,
    pub evidence: BTreeSet<ElementId>,
}

/// A failed anytime run with the depths that completed before the failure.
#[derive(Debug, thiserror::Error)]
#[error("anytime run failed after {} depths: {source}", partial.len())]
pub struct AnytimeError {
    pub partial: Vec<DepthResult>,
    #[source]
    pub source: Error,
}

/// Expands `query` to `depth` with lazy evidence and lowers the result to
/// factors.
pub fn prepare_depth(
    registry: &mut Registry,
    query: ElementId,
    depth: i64,
) -> Result<(ExpansionState, FactorSet)> {
    let mut state = ExpansionState::new();
    expand_lazy_evidence(&mut state, registry, &[query], depth)?;
    let factors = build_all_factors(&state, registry)?;
    Ok((state, factors))
}

/// Runs one depth end to end.
pub fn run_depth(
    registry: &mut Registry,
    query: ElementId,
    depth: i64,
    options: &AnytimeOptions,
) -> Result<DepthResult> {
    let start = Instant::now();
    let (state, set) = prepare_depth(registry, query, depth)?;
    let algorithm = options.algorithm();
    let (unnormalized, approximate, converged) = match algorithm {
        Algorithm::Ve => (run_ve(&set.factors, query)?, false, true),
        Algorithm::Bp => {
            let r = run_bp(&set.factors, query, &options.bp)?;
            (r.factor, r.approximate, r.converged)
        }
    };
    let bounds = finalize(&unnormalized)?;
    let elapsed = start.elapsed();
    Ok(DepthResult {
        depth,
        gap: bounds.gap(&options.domain),
        bounds,
        num_variables: set.variables.len(),
        num_factors: set.factors.len(),
        elapsed,
        algorithm,
        approximate,
        converged,
        monotonicity_ok: true,
        evidence: state.expanded_evidence(registry),
    })
}

pub fn validate_schedule(schedule: &[i64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::InvalidSchedule("no depths given".into()));
    }
    if let Some(w) = schedule.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSchedule(format!(
            "depths must increase strictly, found {} then {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Checks that `next` is at least as tight as `prev` for every value.
/// Returns the first value that loosened.
pub fn check_tightening(prev: &Bounds, next: &Bounds, domain: &[Value]) -> Option<Value> {
    let values: BTreeSet<&Value> = prev
        .per_value
        .keys()
        .chain(next.per_value.keys())
        .chain(domain)
        .collect();
    values.into_iter().find_map(|v| {
        let (l0, u0) = prev.get(v);
        let (l1, u1) = next.get(v);
        (l1 < l0 - MONOTONICITY_TOLERANCE || u1 > u0 + MONOTONICITY_TOLERANCE).then(|| v.clone())
    })
}

/// Iterative deepening over `schedule`. Each finished depth is passed to
/// `on_result` as soon as it is available.
///
/// With variable elimination and an unchanged set of expanded evidence,
/// bounds must tighten from one depth to the next; a violation aborts the
/// run. If the evidence set grew, a violation is only logged and recorded in
/// `monotonicity_ok`.
pub fn anytime_run(
    registry: &mut Registry,
    query: ElementId,
    schedule: &[i64],
    options: &AnytimeOptions,
    mut on_result: impl FnMut(&DepthResult),
) -> std::result::Result<Vec<DepthResult>, AnytimeError> {
    let mut results: Vec<DepthResult> = Vec::with_capacity(schedule.len());
    if let Err(source) = validate_schedule(schedule) {
        return Err(AnytimeError {
            partial: results,
            source,
        });
    }
    for &depth in schedule {
        let mut result = match run_depth(registry, query, depth, options) {
            Ok(r) => r,
            Err(source) => {
                return Err(AnytimeError {
                    partial: results,
                    source,
                })
            }
        };
        if let Some(prev) = results.last() {
            if let Some(value) = check_tightening(&prev.bounds, &result.bounds, &options.domain) {
                result.monotonicity_ok = false;
                let exact = result.algorithm == Algorithm::Ve;
                if exact && prev.evidence == result.evidence {
                    let from = prev.depth;
                    return Err(AnytimeError {
                        partial: results,
                        source: Error::MonotonicityViolation {
                            value,
                            from,
                            to: depth,
                        },
                    });
                }
                warn!(
                    "bounds on {value} loosened from depth {} to {depth} ({})",
                    prev.depth,
                    if exact { "new evidence expanded" } else { "approximate algorithm" }
                );
            }
        }
        info!(
            "depth {depth}: gap {:.6} over {} variables, {} factors",
            result.gap, result.num_variables, result.num_factors
        );
        on_result(&result);
        results.push(result);
    }
    Ok(results)
}
