//! A 15-state birth-death chain with absorbing ends, unrolled lazily over an
//! unbounded horizon.
//!
//! In state `s` with `1 <= s <= 13` the chain moves to `s + 1` with
//! probability `s / 14` and to `s - 1` otherwise; states 0 and 14 stay put.
//! Each state emits `true` with probability `s / 14`. The query asks whether
//! state 14 is reached before state 0.

use crate::error::{Error, Result};
use crate::model::Registry;
use crate::value::{ElementId, Field, Value};

pub const NUM_STATES: i64 = 15;
const TOP: i64 = NUM_STATES - 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HmmConfig {
    pub initial_state: i64,
    /// Observed emissions from time 0 on.
    pub observations: Vec<bool>,
}

impl Default for HmmConfig {
    fn default() -> Self {
        HmmConfig {
            initial_state: 7,
            observations: vec![true; 10],
        }
    }
}

impl HmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0..NUM_STATES).contains(&self.initial_state) {
            return Err(Error::InvalidConfig(format!(
                "initial state {} is outside 0..={TOP}",
                self.initial_state
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Hmm {
    /// True when 14 is reached before 0.
    pub query: ElementId,
    pub initial: ElementId,
    /// Observed emission elements, one per observation.
    pub emissions: Vec<ElementId>,
}

fn key(kind: &str, anchor: ElementId, t: i64) -> Value {
    Value::constructed(kind, vec![Field::Element(anchor), Field::Value(Value::Int(t))])
}

fn state_of(v: &Value) -> Result<i64> {
    v.as_int()
        .filter(|s| (0..NUM_STATES).contains(s))
        .ok_or_else(|| Error::Model(format!("not an HMM state: {v}")))
}

/// State at time `t`; one shared element per time step.
pub fn state(registry: &mut Registry, anchor: ElementId, t: i64) -> Result<ElementId> {
    if t == 0 {
        return Ok(anchor);
    }
    registry.memo_element(key("hmm-state", anchor, t), |reg| {
        let prev = state(reg, anchor, t - 1)?;
        reg.chain(prev, |v, reg| {
            let s = state_of(v)?;
            if s == 0 || s == TOP {
                reg.constant(s)
            } else {
                let up = s as f64 / TOP as f64;
                reg.select(vec![(1.0 - up, Value::Int(s - 1)), (up, Value::Int(s + 1))])
            }
        })
    })
}

/// Emission at time `t`.
pub fn emission(registry: &mut Registry, anchor: ElementId, t: i64) -> Result<ElementId> {
    registry.memo_element(key("hmm-emission", anchor, t), |reg| {
        let s = state(reg, anchor, t)?;
        reg.chain(s, |v, reg| {
            let s = state_of(v)?;
            reg.flip(s as f64 / TOP as f64)
        })
    })
}

/// Whether the chain, standing at time `t`, is absorbed at 14 rather than
/// at 0. Unrolls one time step per level.
pub fn reaches_top(registry: &mut Registry, anchor: ElementId, t: i64) -> Result<ElementId> {
    registry.memo_element(key("hmm-reach", anchor, t), |reg| {
        let s = state(reg, anchor, t)?;
        reg.chain(s, move |v, reg| match state_of(v)? {
            TOP => reg.constant(true),
            0 => reg.constant(false),
            _ => reaches_top(reg, anchor, t + 1),
        })
    })
}

pub fn infinite_hmm_model(registry: &mut Registry, config: &HmmConfig) -> Result<Hmm> {
    config.validate()?;
    let initial = registry.constant(config.initial_state)?;
    let mut emissions = Vec::with_capacity(config.observations.len());
    for (t, &obs) in config.observations.iter().enumerate() {
        let e = emission(registry, initial, t as i64)?;
        registry.observe(e, obs)?;
        emissions.push(e);
    }
    let query = reaches_top(registry, initial, 0)?;
    Ok(Hmm {
        query,
        initial,
        emissions,
    })
}

/// Probability of reaching 14 before 0 from each state, by solving the
/// boundary-value recurrence directly.
pub fn absorption_probabilities() -> Vec<f64> {
    // h(s) = p h(s+1) + q h(s-1) gives h(s+1) - h(s) = (q/p) (h(s) - h(s-1))
    let n = NUM_STATES as usize;
    let mut diffs = vec![0.0; n - 1];
    diffs[0] = 1.0;
    for s in 1..n - 1 {
        let p = s as f64 / TOP as f64;
        diffs[s] = diffs[s - 1] * (1.0 - p) / p;
    }
    let total: f64 = diffs.iter().sum();
    let mut h = vec![0.0; n];
    for s in 1..n {
        h[s] = h[s - 1] + diffs[s - 1] / total;
    }
    h
}
