use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Which advertisement an attribute reference resolves against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    /// The ad that owns the expression being evaluated. A bare `Name` means `self.Name`.
    Mine,
    /// The candidate ad on the other side of the match.
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Real(f64),
    Str(String),
    Bool(bool),
    Undefined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "||",
            BinaryOp::And => "&&",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    /// Binding strength; higher binds tighter. All binary operators are left-associative.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => 1,
            BinaryOp::And => 2,
            BinaryOp::Eq | BinaryOp::Ne => 3,
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => 4,
            BinaryOp::Add | BinaryOp::Sub => 5,
            BinaryOp::Mul | BinaryOp::Div => 6,
        }
    }
}

const UNARY_PRECEDENCE: u8 = 7;
const ATOM_PRECEDENCE: u8 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AttrRef {
    pub scope: Scope,
    pub name: String,
}

/// Expression tree of the advertisement language.
///
/// Parenthesised input does not leave a node behind: `(a + b) * c` and the
/// tree built by hand from `Mul(Add(a, b), c)` are identical.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Literal),
    Attr(AttrRef),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// `{ e1, e2, ... }`
    List(Vec<Expr>),
    /// `member(scalar, list)`
    Member(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn int(v: i64) -> Expr {
        Expr::Literal(Literal::Int(v))
    }

    pub fn real(v: f64) -> Expr {
        Expr::Literal(Literal::Real(v))
    }

    pub fn string(v: impl Into<String>) -> Expr {
        Expr::Literal(Literal::Str(v.into()))
    }

    pub fn boolean(v: bool) -> Expr {
        Expr::Literal(Literal::Bool(v))
    }

    pub fn mine(name: impl Into<String>) -> Expr {
        Expr::Attr(AttrRef { scope: Scope::Mine, name: name.into() })
    }

    pub fn other(name: impl Into<String>) -> Expr {
        Expr::Attr(AttrRef { scope: Scope::Other, name: name.into() })
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn unary(op: UnaryOp, operand: Expr) -> Expr {
        Expr::Unary(op, Box::new(operand))
    }

    /// Height of the tree; a leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Literal(_) | Expr::Attr(_) => 0,
            Expr::Unary(_, e) => 1 + e.depth(),
            Expr::Binary(_, l, r) | Expr::Member(l, r) => 1 + l.depth().max(r.depth()),
            Expr::List(items) => 1 + items.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, _, _) => op.precedence(),
            Expr::Unary(_, _) => UNARY_PRECEDENCE,
            _ => ATOM_PRECEDENCE,
        }
    }

    /// Fully parenthesised prefix dump used by the golden corpus, e.g.
    /// `(&& (== other.Arch "x86") (>= other.FreeCPUs 2))`.
    pub fn sexpr(&self) -> SExpr<'_> {
        SExpr(self)
    }
}

fn write_string_literal(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(v) => write!(f, "{v}"),
            // `{:?}` is the shortest representation that reads back to the same bits and
            // always carries a '.' or an exponent, so it lexes as a real again.
            Literal::Real(v) => write!(f, "{v:?}"),
            Literal::Str(s) => write_string_literal(f, s),
            Literal::Bool(true) => f.write_str("true"),
            Literal::Bool(false) => f.write_str("false"),
            Literal::Undefined => f.write_str("undefined"),
        }
    }
}

impl fmt::Display for AttrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scope {
            Scope::Mine => write!(f, "self.{}", self.name),
            Scope::Other => write!(f, "other.{}", self.name),
        }
    }
}

/// Precedence-aware pretty printer; emits the fewest parentheses that keep the
/// tree shape when parsed back.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(lit) => write!(f, "{lit}"),
            Expr::Attr(attr) => write!(f, "{attr}"),
            Expr::Unary(op, operand) => {
                f.write_str(match op {
                    UnaryOp::Not => "!",
                    UnaryOp::Neg => "-",
                })?;
                if operand.precedence() < UNARY_PRECEDENCE {
                    write!(f, "({operand})")
                } else {
                    write!(f, "{operand}")
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let prec = op.precedence();
                if lhs.precedence() < prec {
                    write!(f, "({lhs})")?;
                } else {
                    write!(f, "{lhs}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if rhs.precedence() <= prec {
                    write!(f, "({rhs})")
                } else {
                    write!(f, "{rhs}")
                }
            }
            Expr::List(items) => {
                f.write_str("{")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("}")
            }
            Expr::Member(needle, haystack) => write!(f, "member({needle}, {haystack})"),
        }
    }
}

pub struct SExpr<'a>(&'a Expr);

impl fmt::Display for SExpr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Expr::Literal(lit) => write!(f, "{lit}"),
            Expr::Attr(attr) => write!(f, "{attr}"),
            Expr::Unary(UnaryOp::Not, e) => write!(f, "(! {})", e.sexpr()),
            Expr::Unary(UnaryOp::Neg, e) => write!(f, "(neg {})", e.sexpr()),
            Expr::Binary(op, l, r) => write!(f, "({} {} {})", op.symbol(), l.sexpr(), r.sexpr()),
            Expr::List(items) => {
                f.write_str("(list")?;
                for item in items {
                    write!(f, " {}", item.sexpr())?;
                }
                f.write_str(")")
            }
            Expr::Member(l, r) => write!(f, "(member {} {})", l.sexpr(), r.sexpr()),
        }
    }
}
