use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use super::ad::Ad;
use super::ast::{BinaryOp, Expr, Literal, Scope, UnaryOp};

/// Recursion budget covering tree depth plus attribute indirection; exceeding it
/// (e.g. `a = b; b = a`) evaluates to ERROR.
const MAX_EVAL_DEPTH: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Str(String),
    Bool(bool),
    List(Vec<Value>),
    Undefined,
    Error,
}

impl Value {
    pub fn is_true(&self) -> bool {
        matches!(self, Value::Bool(true))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    /// Strings of a list value; `None` unless every element is a string.
    pub fn as_string_list(&self) -> Option<Vec<String>> {
        match self {
            Value::List(items) => items.iter().map(|v| v.as_str().map(String::from)).collect(),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v:?}"),
            Value::Str(s) => write!(f, "{}", Literal::Str(s.clone())),
            Value::Bool(b) => write!(f, "{b}"),
            Value::List(items) => {
                f.write_str("{")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("}")
            }
            Value::Undefined => f.write_str("UNDEFINED"),
            Value::Error => f.write_str("ERROR"),
        }
    }
}

/// Evaluates `expr` with `self_ad` as the owning ad and `other_ad` as the candidate.
///
/// Errors are in-band: unknown attributes give UNDEFINED, type mismatches,
/// overflow and division by zero give ERROR.
pub fn evaluate(expr: &Expr, self_ad: &Ad, other_ad: &Ad) -> Value {
    eval(expr, self_ad, other_ad, 0)
}

fn eval(expr: &Expr, mine: &Ad, other: &Ad, depth: usize) -> Value {
    if depth > MAX_EVAL_DEPTH {
        return Value::Error;
    }
    match expr {
        Expr::Literal(lit) => match lit {
            Literal::Int(v) => Value::Int(*v),
            Literal::Real(v) => Value::Real(*v),
            Literal::Str(s) => Value::Str(s.clone()),
            Literal::Bool(b) => Value::Bool(*b),
            Literal::Undefined => Value::Undefined,
        },
        Expr::Attr(attr) => {
            // An attribute's own expression is evaluated from its owner's point of view.
            let (owner, counterpart) = match attr.scope {
                Scope::Mine => (mine, other),
                Scope::Other => (other, mine),
            };
            match owner.get(&attr.name) {
                Some(e) => eval(e, owner, counterpart, depth + 1),
                None => Value::Undefined,
            }
        }
        Expr::List(items) => Value::List(items.iter().map(|e| eval(e, mine, other, depth + 1)).collect()),
        Expr::Unary(op, operand) => unary(*op, eval(operand, mine, other, depth + 1)),
        Expr::Member(needle, haystack) => {
            let needle = eval(needle, mine, other, depth + 1);
            let haystack = eval(haystack, mine, other, depth + 1);
            member(&needle, &haystack)
        }
        Expr::Binary(BinaryOp::Or, lhs, rhs) => {
            let l = eval(lhs, mine, other, depth + 1);
            match l {
                Value::Bool(true) => Value::Bool(true),
                Value::Bool(false) => as_logical(eval(rhs, mine, other, depth + 1)),
                Value::Undefined => match eval(rhs, mine, other, depth + 1) {
                    Value::Bool(true) => Value::Bool(true),
                    Value::Bool(false) | Value::Undefined => Value::Undefined,
                    _ => Value::Error,
                },
                _ => Value::Error,
            }
        }
        Expr::Binary(BinaryOp::And, lhs, rhs) => {
            let l = eval(lhs, mine, other, depth + 1);
            match l {
                Value::Bool(false) => Value::Bool(false),
                Value::Bool(true) => as_logical(eval(rhs, mine, other, depth + 1)),
                Value::Undefined => match eval(rhs, mine, other, depth + 1) {
                    Value::Bool(false) => Value::Bool(false),
                    Value::Bool(true) | Value::Undefined => Value::Undefined,
                    _ => Value::Error,
                },
                _ => Value::Error,
            }
        }
        Expr::Binary(op, lhs, rhs) => {
            let l = eval(lhs, mine, other, depth + 1);
            let r = eval(rhs, mine, other, depth + 1);
            binary(*op, l, r)
        }
    }
}

fn as_logical(v: Value) -> Value {
    match v {
        Value::Bool(_) | Value::Undefined => v,
        _ => Value::Error,
    }
}

fn unary(op: UnaryOp, v: Value) -> Value {
    match (op, v) {
        (_, Value::Error) => Value::Error,
        (_, Value::Undefined) => Value::Undefined,
        (UnaryOp::Not, Value::Bool(b)) => Value::Bool(!b),
        (UnaryOp::Neg, Value::Int(i)) => i.checked_neg().map_or(Value::Error, Value::Int),
        (UnaryOp::Neg, Value::Real(r)) => Value::Real(-r),
        _ => Value::Error,
    }
}

enum Numeric {
    Int(i64, i64),
    Real(f64, f64),
}

fn promote(l: &Value, r: &Value) -> Option<Numeric> {
    match (l, r) {
        (Value::Int(a), Value::Int(b)) => Some(Numeric::Int(*a, *b)),
        (Value::Int(a), Value::Real(b)) => Some(Numeric::Real(*a as f64, *b)),
        (Value::Real(a), Value::Int(b)) => Some(Numeric::Real(*a, *b as f64)),
        (Value::Real(a), Value::Real(b)) => Some(Numeric::Real(*a, *b)),
        _ => None,
    }
}

/// Ordering of two scalars of compatible types; `None` means the pair is not comparable.
fn compare(l: &Value, r: &Value) -> Option<Ordering> {
    if let Some(n) = promote(l, r) {
        return match n {
            Numeric::Int(a, b) => Some(a.cmp(&b)),
            Numeric::Real(a, b) => a.partial_cmp(&b),
        };
    }
    match (l, r) {
        (Value::Str(a), Value::Str(b)) => Some(a.as_str().cmp(b.as_str())),
        _ => None,
    }
}

fn binary(op: BinaryOp, l: Value, r: Value) -> Value {
    if matches!(l, Value::Error) || matches!(r, Value::Error) {
        return Value::Error;
    }
    if matches!(l, Value::Undefined) || matches!(r, Value::Undefined) {
        return Value::Undefined;
    }
    match op {
        BinaryOp::Eq | BinaryOp::Ne => {
            let equal = match (&l, &r) {
                (Value::Bool(a), Value::Bool(b)) => Some(a == b),
                _ => compare(&l, &r).map(|o| o == Ordering::Equal),
            };
            match equal {
                Some(eq) => Value::Bool(if op == BinaryOp::Eq { eq } else { !eq }),
                None => Value::Error,
            }
        }
        BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => match compare(&l, &r) {
            Some(o) => Value::Bool(match op {
                BinaryOp::Lt => o == Ordering::Less,
                BinaryOp::Le => o != Ordering::Greater,
                BinaryOp::Gt => o == Ordering::Greater,
                _ => o != Ordering::Less,
            }),
            None => Value::Error,
        },
        BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => match promote(&l, &r) {
            Some(Numeric::Int(a, b)) => {
                let v = match op {
                    BinaryOp::Add => a.checked_add(b),
                    BinaryOp::Sub => a.checked_sub(b),
                    BinaryOp::Mul => a.checked_mul(b),
                    _ => a.checked_div(b),
                };
                v.map_or(Value::Error, Value::Int)
            }
            Some(Numeric::Real(a, b)) => {
                if op == BinaryOp::Div && b == 0.0 {
                    return Value::Error;
                }
                let v = match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    _ => a / b,
                };
                Value::Real(v)
            }
            None => Value::Error,
        },
        BinaryOp::Or | BinaryOp::And => unreachable!("logical operators are evaluated lazily"),
    }
}

fn member(needle: &Value, haystack: &Value) -> Value {
    match (needle, haystack) {
        (Value::Error, _) | (_, Value::Error) => Value::Error,
        (_, Value::Undefined) | (Value::Undefined, _) => Value::Undefined,
        (Value::List(_), _) => Value::Error,
        (_, Value::List(items)) => {
            for item in items {
                let hit = match (needle, item) {
                    (Value::Bool(a), Value::Bool(b)) => a == b,
                    _ => compare(needle, item) == Some(Ordering::Equal),
                };
                if hit {
                    return Value::Bool(true);
                }
            }
            Value::Bool(false)
        }
        _ => Value::Error,
    }
}
