//! Dense tables over extended-range variables.
//!
//! Tables are stored row-major in scope order with the last variable varying
//! fastest. The layout helpers here are generic over the entry type so the
//! same code serves interval factors and the scalar tables used by the lower
//! and upper inference passes.

use crate::error::{Error, Result};
use crate::factor::Var;
use crate::value::ElementId;

/// Number of entries in a table over `vars`.
pub fn table_size(vars: &[Var]) -> usize {
    vars.iter().map(|v| v.range.len()).product()
}

pub(crate) fn strides(vars: &[Var]) -> Vec<usize> {
    let mut strides = vec![0; vars.len()];
    let mut s = 1;
    for (i, v) in vars.iter().enumerate().rev() {
        strides[i] = s;
        s *= v.range.len();
    }
    strides
}

/// Scope of a product: `a`'s variables followed by those of `b` not in `a`.
pub(crate) fn merge_scopes(a: &[Var], b: &[Var]) -> Result<Vec<Var>> {
    let mut out = a.to_vec();
    for v in b {
        match out.iter().find(|x| x.id == v.id) {
            Some(x) if x.range != v.range => return Err(Error::RangeMismatch(v.id)),
            Some(_) => {}
            None => out.push(v.clone()),
        }
    }
    Ok(out)
}

pub(crate) fn product_with<T: Copy>(
    a_vars: &[Var],
    a: &[T],
    b_vars: &[Var],
    b: &[T],
    mul: impl Fn(T, T) -> T,
) -> Result<(Vec<Var>, Vec<T>)> {
    let vars = merge_scopes(a_vars, b_vars)?;
    let sizes: Vec<usize> = vars.iter().map(|v| v.range.len()).collect();
    let stride_in = |scope: &[Var]| -> Vec<usize> {
        let own = strides(scope);
        vars.iter()
            .map(|v| {
                scope
                    .iter()
                    .position(|x| x.id == v.id)
                    .map_or(0, |p| own[p])
            })
            .collect()
    };
    let sa = stride_in(a_vars);
    let sb = stride_in(b_vars);
    let total: usize = sizes.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; sizes.len()];
    let (mut ia, mut ib) = (0usize, 0usize);
    for _ in 0..total {
        out.push(mul(a[ia], b[ib]));
        let mut p = sizes.len();
        while p > 0 {
            p -= 1;
            idx[p] += 1;
            ia += sa[p];
            ib += sb[p];
            if idx[p] < sizes[p] {
                break;
            }
            ia -= sa[p] * sizes[p];
            ib -= sb[p] * sizes[p];
            idx[p] = 0;
        }
    }
    Ok((vars, out))
}

pub(crate) fn sum_out_with<T: Copy>(
    vars: &[Var],
    data: &[T],
    id: ElementId,
    zero: T,
    add: impl Fn(T, T) -> T,
) -> Option<(Vec<Var>, Vec<T>)> {
    let pos = vars.iter().position(|v| v.id == id)?;
    let n = vars[pos].range.len();
    let inner: usize = vars[pos + 1..].iter().map(|v| v.range.len()).product();
    let outer: usize = vars[..pos].iter().map(|v| v.range.len()).product();
    let mut out = vec![zero; outer * inner];
    for o in 0..outer {
        for k in 0..n {
            let base = (o * n + k) * inner;
            for i in 0..inner {
                let slot = &mut out[o * inner + i];
                *slot = add(*slot, data[base + i]);
            }
        }
    }
    let mut rest = vars.to_vec();
    rest.remove(pos);
    Some((rest, out))
}

/// A table of nonnegative reals, one pass of an interval factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub vars: Vec<Var>,
    pub values: Vec<f64>,
}

impl Table {
    pub fn new(vars: Vec<Var>, values: Vec<f64>) -> Result<Self> {
        if table_size(&vars) != values.len() {
            return Err(Error::InvalidFactor(format!(
                "table over {} entries given {} values",
                table_size(&vars),
                values.len()
            )));
        }
        Ok(Table { vars, values })
    }

    /// The empty-scope table holding a single 1.
    pub fn unit() -> Self {
        Table {
            vars: Vec::new(),
            values: vec![1.0],
        }
    }

    pub fn product(&self, other: &Table) -> Result<Table> {
        let (vars, values) =
            product_with(&self.vars, &self.values, &other.vars, &other.values, |a, b| a * b)?;
        Ok(Table { vars, values })
    }

    pub fn sum_out(&self, id: ElementId) -> Result<Table> {
        let (vars, values) = sum_out_with(&self.vars, &self.values, id, 0.0, |a, b| a + b)
            .ok_or(Error::QueryNotInFactors(id))?;
        Ok(Table { vars, values })
    }

    pub fn contains(&self, id: ElementId) -> bool {
        self.vars.iter().any(|v| v.id == id)
    }

    /// Reorders the table so its scope is exactly `order`, which must be a
    /// permutation of the current scope.
    pub fn permuted(&self, order: &[ElementId]) -> Result<Table> {
        if order.len() != self.vars.len() {
            return Err(Error::InvalidFactor("permutation has the wrong length".into()));
        }
        let old_strides = strides(&self.vars);
        let mut vars = Vec::with_capacity(order.len());
        let mut stride_map = Vec::with_capacity(order.len());
        for id in order {
            let p = self
                .vars
                .iter()
                .position(|v| v.id == *id)
                .ok_or(Error::QueryNotInFactors(*id))?;
            vars.push(self.vars[p].clone());
            stride_map.push(old_strides[p]);
        }
        let sizes: Vec<usize> = vars.iter().map(|v| v.range.len()).collect();
        let total = self.values.len();
        let mut values = Vec::with_capacity(total);
        let mut idx = vec![0usize; sizes.len()];
        let mut src = 0usize;
        for _ in 0..total {
            values.push(self.values[src]);
            let mut p = sizes.len();
            while p > 0 {
                p -= 1;
                idx[p] += 1;
                src += stride_map[p];
                if idx[p] < sizes[p] {
                    break;
                }
                src -= stride_map[p] * sizes[p];
                idx[p] = 0;
            }
        }
        Ok(Table { vars, values })
    }
}
