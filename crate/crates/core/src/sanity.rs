//! Truncated forward sampling, used only to sanity-check bounds.
//!
//! Each world is evaluated lazily from the query and the evidence targets
//! with a per-path depth budget. Worlds that hit the budget are counted and
//! dropped; worlds violating an observation are rejected; soft constraints
//! weight the world.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ElementKind, Registry};
use crate::value::{ElementId, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleEstimate {
    pub estimate: f64,
    pub num_samples: usize,
    pub num_rejected: usize,
    pub num_truncated: usize,
    /// Sum of world weights that entered the estimate.
    pub total_weight: f64,
}

impl SampleEstimate {
    /// Binomial standard error of the estimate, treating accepted worlds as
    /// equally weighted.
    pub fn standard_error(&self) -> f64 {
        let n = (self.num_samples - self.num_rejected - self.num_truncated).max(1) as f64;
        (self.estimate * (1.0 - self.estimate) / n).sqrt()
    }
}

enum Outcome {
    Value(Value),
    Truncated,
}

struct World<'a> {
    rng: &'a mut ChaCha8Rng,
    values: HashMap<ElementId, Value>,
}

impl World<'_> {
    fn eval(&mut self, registry: &mut Registry, id: ElementId, budget: i64) -> Result<Outcome> {
        if let Some(v) = self.values.get(&id) {
            return Ok(Outcome::Value(v.clone()));
        }
        if budget < 0 {
            return Ok(Outcome::Truncated);
        }
        let kind = registry.kind(id)?.clone();
        let value = match &kind {
            ElementKind::Constant(v) => v.clone(),
            ElementKind::Flip(p) => Value::Bool(self.rng.gen::<f64>() < *p),
            ElementKind::Select(branches) => {
                let u: f64 = self.rng.gen();
                let mut acc = 0.0;
                let mut chosen = &branches[branches.len() - 1].1;
                for (w, v) in branches {
                    acc += w;
                    if u < acc {
                        chosen = v;
                        break;
                    }
                }
                chosen.clone()
            }
            ElementKind::Apply { args, .. } => {
                let mut inputs = Vec::with_capacity(args.len());
                for &a in args {
                    match self.eval(registry, a, budget - 1)? {
                        Outcome::Value(v) => inputs.push(v),
                        Outcome::Truncated => return Ok(Outcome::Truncated),
                    }
                }
                registry.apply_result(id, &inputs)?
            }
            ElementKind::Chain { parent, .. } => {
                let x = match self.eval(registry, *parent, budget - 1)? {
                    Outcome::Value(v) => v,
                    Outcome::Truncated => return Ok(Outcome::Truncated),
                };
                let result = registry.chain_result(id, &x)?;
                match self.eval(registry, result, budget - 1)? {
                    Outcome::Value(v) => v,
                    Outcome::Truncated => return Ok(Outcome::Truncated),
                }
            }
        };
        self.values.insert(id, value.clone());
        Ok(Outcome::Value(value))
    }
}

/// Estimates `P(query = target | evidence)` from `n` sampled worlds. Sample
/// `i` draws from its own stream of a generator seeded with `seed`, so runs
/// are reproducible and can be split by sample index.
pub fn sample_estimate(
    registry: &mut Registry,
    query: ElementId,
    target: &Value,
    depth_budget: i64,
    n: usize,
    seed: u64,
) -> Result<SampleEstimate> {
    if n == 0 {
        return Err(Error::InvalidConfig("at least one sample is needed".into()));
    }
    let evidence = registry.evidence().to_vec();
    let mut hits = 0.0;
    let mut total = 0.0;
    let mut rejected = 0;
    let mut truncated = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'worlds: for i in 0..n {
        rng.set_stream(i as u64);
        rng.set_word_pos(0);
        let mut world = World {
            rng: &mut rng,
            values: HashMap::new(),
        };
        let q = match world.eval(registry, query, depth_budget)? {
            Outcome::Value(v) => v,
            Outcome::Truncated => {
                truncated += 1;
                continue;
            }
        };
        let mut weight = 1.0;
        for e in &evidence {
            match world.eval(registry, e.target, depth_budget)? {
                Outcome::Value(v) => weight *= e.weight_of(&v).lo,
                Outcome::Truncated => {
                    truncated += 1;
                    continue 'worlds;
                }
            }
            if weight == 0.0 {
                rejected += 1;
                continue 'worlds;
            }
        }
        total += weight;
        if q == *target {
            hits += weight;
        }
    }
    if !(total > 0.0) {
        return Err(Error::EstimateUnavailable {
            samples: n,
            rejected,
            truncated,
        });
    }
    Ok(SampleEstimate {
        estimate: hits / total,
        num_samples: n,
        num_rejected: rejected,
        num_truncated: truncated,
        total_weight: total,
    })
}
