//! Example programs: the recursive random list, an infinite-horizon HMM and
//! probabilistic grammars, plus a recursion that never resolves.

pub mod hmm;
pub mod pcfg;
pub mod random_list;

use crate::error::Result;
use crate::model::Registry;
use crate::value::{ElementId, Value};

/// `f() = identity(f())`: a Boolean defined only in terms of itself. The
/// recursive call sits behind a Chain on a constant so that it is unfolded
/// one level per expansion step instead of at construction time.
pub fn identity_chain(registry: &mut Registry) -> Result<ElementId> {
    let unit = registry.constant(Value::Unit)?;
    let inner = registry.chain(unit, |_, reg| identity_chain(reg))?;
    registry.map(inner, |v| v.clone())
}
