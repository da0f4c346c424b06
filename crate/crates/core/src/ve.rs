//! Variable elimination over interval factors, run as a lower pass and an
//! upper pass that share one elimination order.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::factor::{Factor, Var};
use crate::table::Table;
use crate::value::ElementId;

/// Greedy min-fill elimination order over every variable except `query`.
/// Ties go to the smaller resulting table, then to the smaller element id.
pub fn elimination_order(factors: &[Factor], query: ElementId) -> Result<Vec<ElementId>> {
    if !factors.iter().any(|f| f.contains(query)) {
        return Err(Error::QueryNotInFactors(query));
    }
    let mut graph: BTreeMap<ElementId, BTreeSet<ElementId>> = BTreeMap::new();
    let mut size: BTreeMap<ElementId, u64> = BTreeMap::new();
    for f in factors {
        for v in &f.vars {
            size.insert(v.id, v.len() as u64);
            let entry = graph.entry(v.id).or_default();
            entry.extend(f.vars.iter().map(|u| u.id).filter(|&u| u != v.id));
        }
    }

    let score = |graph: &BTreeMap<ElementId, BTreeSet<ElementId>>, v: ElementId| -> (usize, u64) {
        let neighbors = &graph[&v];
        let mut fill = 0;
        for (i, a) in neighbors.iter().enumerate() {
            let adj = &graph[a];
            fill += neighbors.iter().skip(i + 1).filter(|b| !adj.contains(b)).count();
        }
        let table = neighbors
            .iter()
            .fold(size[&v], |acc, n| acc.saturating_mul(size[n]));
        (fill, table)
    };

    let mut scores: BTreeMap<ElementId, (usize, u64)> = BTreeMap::new();
    let mut queue: BTreeSet<(usize, u64, ElementId)> = BTreeSet::new();
    for &v in graph.keys() {
        if v != query {
            let (fill, table) = score(&graph, v);
            scores.insert(v, (fill, table));
            queue.insert((fill, table, v));
        }
    }

    let mut order = Vec::with_capacity(queue.len());
    while let Some((_, _, v)) = queue.pop_first() {
        scores.remove(&v);
        order.push(v);
        let neighbors = graph.remove(&v).unwrap_or_default();
        for &a in &neighbors {
            let adj = graph.get_mut(&a).expect("neighbor present");
            adj.remove(&v);
            adj.extend(neighbors.iter().copied().filter(|&b| b != a));
        }
        let mut touched: BTreeSet<ElementId> = neighbors.clone();
        for a in &neighbors {
            touched.extend(graph[a].iter().copied());
        }
        for u in touched {
            if let Some(old) = scores.get(&u).copied() {
                let new = score(&graph, u);
                if new != old {
                    queue.remove(&(old.0, old.1, u));
                    queue.insert((new.0, new.1, u));
                    scores.insert(u, new);
                }
            }
        }
    }
    Ok(order)
}

/// Unnormalized interval factor over `query`: entry `i` pairs the lower and
/// upper sums of the factor product over all other variables.
pub fn run_ve(factors: &[Factor], query: ElementId) -> Result<Factor> {
    let order = elimination_order(factors, query)?;
    run_ve_with_order(factors, query, &order)
}

/// As [`run_ve`], with a caller-supplied elimination order.
pub fn run_ve_with_order(factors: &[Factor], query: ElementId, order: &[ElementId]) -> Result<Factor> {
    let query_var = factors
        .iter()
        .find_map(|f| f.var(query))
        .ok_or(Error::QueryNotInFactors(query))?
        .clone();
    check_order(factors, query, order)?;
    let lo = eliminate(factors.iter().map(Factor::lo_table).collect(), order, &query_var)?;
    let hi = eliminate(factors.iter().map(Factor::hi_table).collect(), order, &query_var)?;
    Factor::from_tables(&lo, &hi)
}

fn check_order(factors: &[Factor], query: ElementId, order: &[ElementId]) -> Result<()> {
    let all: BTreeSet<ElementId> = factors
        .iter()
        .flat_map(|f| f.vars.iter().map(|v| v.id))
        .filter(|&id| id != query)
        .collect();
    let given: BTreeSet<ElementId> = order.iter().copied().collect();
    if given.len() != order.len() || given != all {
        return Err(Error::InvalidConfig(
            "elimination order must list every non-query variable once".into(),
        ));
    }
    Ok(())
}

/// One scalar pass of sum-product elimination.
pub fn eliminate(tables: Vec<Table>, order: &[ElementId], query: &Var) -> Result<Table> {
    let mut slots: Vec<Option<Table>> = Vec::with_capacity(tables.len());
    let mut index: BTreeMap<ElementId, BTreeSet<usize>> = BTreeMap::new();
    let add = |slots: &mut Vec<Option<Table>>, index: &mut BTreeMap<ElementId, BTreeSet<usize>>, t: Table| {
        let k = slots.len();
        for v in &t.vars {
            index.entry(v.id).or_default().insert(k);
        }
        slots.push(Some(t));
    };
    for t in tables {
        add(&mut slots, &mut index, t);
    }
    for &v in order {
        let bucket = index.remove(&v).unwrap_or_default();
        let mut product: Option<Table> = None;
        for k in bucket {
            let t = slots[k].take().expect("table used once");
            for u in &t.vars {
                if u.id != v {
                    if let Some(set) = index.get_mut(&u.id) {
                        set.remove(&k);
                    }
                }
            }
            product = Some(match product {
                None => t,
                Some(p) => p.product(&t)?,
            });
        }
        if let Some(p) = product {
            let reduced = p.sum_out(v)?;
            add(&mut slots, &mut index, reduced);
        }
    }
    let mut result = Table::new(vec![query.clone()], vec![1.0; query.len()])?;
    for t in slots.into_iter().flatten() {
        if t.vars.iter().any(|u| u.id != query.id) {
            return Err(Error::InvalidConfig(
                "elimination left a variable other than the query".into(),
            ));
        }
        result = result.product(&t)?;
    }
    result.permuted(&[query.id])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{FactorKind, Interval};
    use crate::value::{ExtendedValue, Value};

    fn bool_var(id: usize) -> Var {
        Var::new(
            ElementId(id),
            vec![Value::Bool(false).into(), Value::Bool(true).into()],
        )
    }

    fn pair(a: usize, b: usize, vals: [f64; 4]) -> Factor {
        Factor::new(
            vec![bool_var(a), bool_var(b)],
            vals.iter().map(|&x| Interval::point(x)).collect(),
            FactorKind::Definition,
        )
        .unwrap()
    }

    #[test]
    fn path_eliminates_leaf_first() {
        let fs = vec![pair(1, 2, [1.; 4]), pair(2, 3, [1.; 4])];
        let order = elimination_order(&fs, ElementId(1)).unwrap();
        assert_eq!(order, [ElementId(3), ElementId(2)]);
    }

    #[test]
    fn single_variable_has_empty_order() {
        let f = Factor::new(vec![bool_var(0)], vec![Interval::point(0.3), Interval::point(0.7)], FactorKind::Definition).unwrap();
        assert!(elimination_order(&[f.clone()], ElementId(0)).unwrap().is_empty());
        let r = run_ve(&[f.clone()], ElementId(0)).unwrap();
        assert_eq!(r.entries, f.entries);
    }

    #[test]
    fn missing_query_is_an_error() {
        let fs = vec![pair(1, 2, [1.; 4])];
        assert!(matches!(run_ve(&fs, ElementId(9)), Err(Error::QueryNotInFactors(_))));
    }

    #[test]
    fn two_factor_chain_by_hand() {
        let fs = vec![
            Factor::new(vec![bool_var(1)], vec![Interval::point(0.4), Interval::point(0.6)], FactorKind::Definition).unwrap(),
            pair(1, 2, [0.9, 0.1, 0.2, 0.8]),
        ];
        let r = run_ve(&fs, ElementId(2)).unwrap();
        assert!((r.entries[0].lo - (0.4 * 0.9 + 0.6 * 0.2)).abs() < 1e-15);
        assert!((r.entries[1].hi - (0.4 * 0.1 + 0.6 * 0.8)).abs() < 1e-15);
    }

    #[test]
    fn interval_entries_run_as_two_passes() {
        let star_var = Var::new(ElementId(0), vec![Value::Bool(true).into(), ExtendedValue::Star]);
        let prior = Factor::new(vec![star_var.clone()], vec![Interval::point(0.5); 2], FactorKind::Definition).unwrap();
        let obs = Factor::new(vec![star_var], vec![Interval::ONE, Interval::UNIT], FactorKind::Constraint).unwrap();
        let r = run_ve(&[prior, obs], ElementId(0)).unwrap();
        assert_eq!(r.entries[1], Interval::new(0.0, 0.5));
    }
}
