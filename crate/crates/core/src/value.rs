//! Values flowing through a program and the extended values used by factors.

use std::fmt;
use std::sync::Arc;

/// Identifies an element in a [`Registry`](crate::Registry). Ids are handed
/// out in creation order, so comparing ids compares creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ElementId(pub usize);

impl ElementId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// A regular (discrete) value.
///
/// The derived ordering is the canonical range order: first by variant, then
/// by contents. Embedded element ids compare by creation order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Symbol(Arc<str>),
    Unit,
    Constructed(Arc<str>, Arc<[Field]>),
}

/// A field of a constructed value: either a plain value or a reference to an
/// element, as in `Cons(head, tail)` where both are random elements.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Field {
    Value(Value),
    Element(ElementId),
}

impl Value {
    pub fn symbol(name: &str) -> Value {
        Value::Symbol(Arc::from(name))
    }

    pub fn constructed(ctor: &str, fields: Vec<Field>) -> Value {
        Value::Constructed(Arc::from(ctor), fields.into())
    }

    /// A constructor with no fields, such as `Empty`.
    pub fn nullary(ctor: &str) -> Value {
        Value::constructed(ctor, Vec::new())
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match self {
            Value::Symbol(s) => Some(s),
            _ => None,
        }
    }

    pub fn ctor(&self) -> Option<&str> {
        match self {
            Value::Constructed(c, _) => Some(c),
            _ => None,
        }
    }

    pub fn fields(&self) -> &[Field] {
        match self {
            Value::Constructed(_, fields) => fields,
            _ => &[],
        }
    }

    pub fn element_field(&self, index: usize) -> Option<ElementId> {
        match self.fields().get(index)? {
            Field::Element(id) => Some(*id),
            Field::Value(_) => None,
        }
    }

    pub fn value_field(&self, index: usize) -> Option<&Value> {
        match self.fields().get(index)? {
            Field::Value(v) => Some(v),
            Field::Element(_) => None,
        }
    }

    /// Parses the textual form used on the command line: `true`, `false`,
    /// integers, `()`, and anything else (optionally prefixed with `'`) as a
    /// symbol.
    pub fn parse(text: &str) -> Value {
        let text = text.trim();
        match text {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            "()" => Value::Unit,
            _ => match text.parse::<i64>() {
                Ok(i) => Value::Int(i),
                Err(_) => Value::symbol(text.strip_prefix('\'').unwrap_or(text)),
            },
        }
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<ElementId> for Field {
    fn from(id: ElementId) -> Self {
        Field::Element(id)
    }
}

impl From<Value> for Field {
    fn from(v: Value) -> Self {
        Field::Value(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Symbol(s) => write!(f, "'{s}"),
            Value::Unit => write!(f, "()"),
            Value::Constructed(ctor, fields) => {
                write!(f, "{ctor}")?;
                if !fields.is_empty() {
                    write!(f, "(")?;
                    for (i, field) in fields.iter().enumerate() {
                        if i > 0 {
                            write!(f, ", ")?;
                        }
                        match field {
                            Field::Value(v) => write!(f, "{v}")?,
                            Field::Element(id) => write!(f, "{id}")?,
                        }
                    }
                    write!(f, ")")?;
                }
                Ok(())
            }
        }
    }
}

/// A regular value or star, the unknown result of the unexpanded rest of the
/// computation. `Star` orders after every regular value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExtendedValue {
    Regular(Value),
    Star,
}

impl ExtendedValue {
    pub fn is_star(&self) -> bool {
        matches!(self, ExtendedValue::Star)
    }

    pub fn regular(&self) -> Option<&Value> {
        match self {
            ExtendedValue::Regular(v) => Some(v),
            ExtendedValue::Star => None,
        }
    }
}

impl From<Value> for ExtendedValue {
    fn from(v: Value) -> Self {
        ExtendedValue::Regular(v)
    }
}

impl fmt::Display for ExtendedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtendedValue::Regular(v) => write!(f, "{v}"),
            ExtendedValue::Star => write!(f, "*"),
        }
    }
}
