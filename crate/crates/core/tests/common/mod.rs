#![allow(dead_code)]

use std::collections::BTreeMap;

use lfi::models::hmm::{infinite_hmm_model, HmmConfig};
use lfi::models::identity_chain;
use lfi::models::pcfg::{pcfg_model, GnfGrammar};
use lfi::models::random_list::random_list_model;
use lfi::{ElementId, Evidence, ExtendedValue, Factor, Registry, Value};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn int_of(v: &Value) -> i64 {
    match v {
        Value::Bool(b) => *b as i64,
        other => other.as_int().expect("integer value"),
    }
}

fn random_leaf(reg: &mut Registry, rng: &mut impl Rng) -> ElementId {
    if rng.gen_bool(0.5) {
        reg.flip(rng.gen_range(0.1..0.9)).unwrap()
    } else {
        let k = rng.gen_range(2..=3);
        let mut ws: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = ws.iter().sum();
        ws.iter_mut().for_each(|w| *w /= total);
        reg.select(ws.into_iter().enumerate().map(|(i, w)| (w, Value::Int(i as i64))).collect())
            .unwrap()
    }
}

fn sum_mod(reg: &mut Registry, args: Vec<ElementId>, m: i64) -> ElementId {
    reg.apply(args, move |vs, _| Ok(Value::Int(vs.iter().map(int_of).sum::<i64>() % m)))
        .unwrap()
}

fn soft_evidence(reg: &mut Registry, target: ElementId, rng: &mut impl Rng) {
    let w0 = rng.gen_range(0.1..1.0);
    let w1 = rng.gen_range(0.1..1.0);
    reg.add_evidence(Evidence::soft(target, move |v| if int_of(v) == 0 { w0 } else { w1 }))
        .unwrap();
}

/// A program whose elements each have at most one user, so its factor graph
/// is a tree. Returns the query and the number of elements.
pub fn random_tree_program(reg: &mut Registry, rng: &mut impl Rng) -> (ElementId, usize) {
    let leaves = rng.gen_range(1..=5);
    let mut pool: Vec<ElementId> = (0..leaves).map(|_| random_leaf(reg, rng)).collect();
    let mut count = leaves;
    if rng.gen_bool(0.5) {
        let target = pool[rng.gen_range(0..pool.len())];
        soft_evidence(reg, target, rng);
    }
    loop {
        if pool.len() == 1 && (count >= 10 || rng.gen_bool(0.4)) {
            return (pool[0], count);
        }
        // keep room for the merges still needed to reach a single root
        let must_merge = count + pool.len() > 10;
        let take = if pool.len() >= 2 && (must_merge || rng.gen_bool(0.7)) { 2 } else { 1 };
        pool.shuffle(rng);
        let args: Vec<ElementId> = pool.drain(..take).collect();
        pool.push(sum_mod(reg, args, rng.gen_range(2..=3)));
        count += 1;
    }
}

/// A program with shared sub-elements and chains whose results are other
/// elements of the program or fresh constants. Returns candidate roots.
pub fn random_dag_program(reg: &mut Registry, rng: &mut impl Rng) -> Vec<ElementId> {
    let n = rng.gen_range(4..=12);
    let mut elems: Vec<ElementId> = Vec::new();
    for _ in 0..n {
        let choice = if elems.is_empty() { 0 } else { rng.gen_range(0..4) };
        let id = match choice {
            0 => random_leaf(reg, rng),
            1 => {
                let k = rng.gen_range(1..=2.min(elems.len()));
                let args: Vec<ElementId> = elems.choose_multiple(rng, k).copied().collect();
                sum_mod(reg, args, rng.gen_range(2..=4))
            }
            2 => {
                let parent = *elems.choose(rng).unwrap();
                let k = rng.gen_range(1..=3.min(elems.len()));
                let targets: Vec<ElementId> = elems.choose_multiple(rng, k).copied().collect();
                reg.chain(parent, move |v, _| Ok(targets[int_of(v).unsigned_abs() as usize % targets.len()]))
                    .unwrap()
            }
            _ => {
                let parent = *elems.choose(rng).unwrap();
                let offset = rng.gen_range(0..3);
                reg.chain(parent, move |v, reg| reg.constant(Value::Int(int_of(v) + offset)))
                    .unwrap()
            }
        };
        elems.push(id);
    }
    let k = rng.gen_range(1..=3.min(elems.len()));
    let mut roots: Vec<ElementId> = elems[elems.len() / 2..].choose_multiple(rng, k).copied().collect();
    roots.sort();
    roots
}

/// A registry holding one of the example models, and its query.
pub struct Example {
    pub name: &'static str,
    pub registry: Registry,
    pub query: ElementId,
}

pub fn example_models() -> Vec<Example> {
    let mut out = Vec::new();
    let mut reg = Registry::new();
    let query = random_list_model(&mut reg).unwrap().query;
    out.push(Example { name: "random-list", registry: reg, query });

    let mut reg = Registry::new();
    let query = infinite_hmm_model(&mut reg, &HmmConfig::default()).unwrap().query;
    out.push(Example { name: "hmm", registry: reg, query });

    let mut reg = Registry::new();
    let config = HmmConfig { initial_state: 7, observations: Vec::new() };
    let query = infinite_hmm_model(&mut reg, &config).unwrap().query;
    out.push(Example { name: "hmm-unobserved", registry: reg, query });

    let mut reg = Registry::new();
    let query = pcfg_model(&mut reg, &GnfGrammar::finite(), "de", "a").unwrap().query;
    out.push(Example { name: "pcfg-finite", registry: reg, query });

    let mut reg = Registry::new();
    let query = pcfg_model(&mut reg, &GnfGrammar::infinite(), "de", "a").unwrap().query;
    out.push(Example { name: "pcfg-infinite", registry: reg, query });

    let mut reg = Registry::new();
    let query = identity_chain(&mut reg).unwrap();
    out.push(Example { name: "identity-chain", registry: reg, query });
    out
}

/// Largest entrywise difference between two factors over the same single
/// variable, lower and upper entries alike.
pub fn max_entry_diff(a: &Factor, b: &Factor) -> f64 {
    assert_eq!(a.vars, b.vars, "factors over different scopes");
    a.entries
        .iter()
        .zip(&b.entries)
        .map(|(x, y)| (x.lo - y.lo).abs().max((x.hi - y.hi).abs()))
        .fold(0.0, f64::max)
}

/// Entries of a single-variable factor keyed by value.
pub fn by_value(f: &Factor) -> BTreeMap<ExtendedValue, (f64, f64)> {
    assert_eq!(f.vars.len(), 1);
    f.vars[0]
        .range
        .iter()
        .zip(&f.entries)
        .map(|(v, e)| (v.clone(), (e.lo, e.hi)))
        .collect()
}
