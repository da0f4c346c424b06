//! Lists of random length over `'a` and `'b`, and a membership test.

use crate::error::{Error, Result};
use crate::model::Registry;
use crate::value::{ElementId, Value};

/// A random list: empty with probability 0.5, otherwise a head drawn from
/// `'a` (0.6) or `'b` (0.4) followed by another random list.
pub fn generate(registry: &mut Registry) -> Result<ElementId> {
    let stop = registry.flip(0.5)?;
    registry.apply(vec![stop], |vs, reg| match vs[0] {
        Value::Bool(true) => Ok(Value::nullary("Empty")),
        Value::Bool(false) => {
            let head = reg.select(vec![(0.6, Value::symbol("a")), (0.4, Value::symbol("b"))])?;
            let tail = generate(reg)?;
            Ok(Value::constructed("Cons", vec![head.into(), tail.into()]))
        }
        ref other => Err(Error::Model(format!("flip produced {other}"))),
    })
}

/// Boolean element that is true when `target` occurs in `list`.
pub fn contains(registry: &mut Registry, target: &str, list: ElementId) -> Result<ElementId> {
    contains_value(registry, Value::symbol(target), list)
}

fn contains_value(registry: &mut Registry, target: Value, list: ElementId) -> Result<ElementId> {
    registry.chain(list, move |v, reg| match v.ctor() {
        Some("Empty") => reg.constant(false),
        Some("Cons") => {
            let (Some(head), Some(tail)) = (v.element_field(0), v.element_field(1)) else {
                return Err(Error::Model(format!("malformed list cell {v}")));
            };
            let test = reg.equals_const(head, target.clone())?;
            let found = reg.constant(true)?;
            let rest = contains_value(reg, target.clone(), tail)?;
            reg.if_then_else(test, found, rest)
        }
        _ => Err(Error::Model(format!("not a list: {v}"))),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RandomList {
    pub list: ElementId,
    /// `contains('b, list)`
    pub query: ElementId,
    /// `contains('a, list)`, observed true
    pub evidence: ElementId,
}

/// The list program with its standard query and evidence registered.
pub fn random_list_model(registry: &mut Registry) -> Result<RandomList> {
    let list = generate(registry)?;
    let evidence = contains(registry, "a", list)?;
    let query = contains(registry, "b", list)?;
    registry.observe(evidence, true)?;
    Ok(RandomList {
        list,
        query,
        evidence,
    })
}
