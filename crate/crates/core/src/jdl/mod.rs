//! Job/resource description language: a ClassAd subset.
//!
//! Grammar (lowest to highest binding):
//!
//! ```text
//! ad      := '[' (Name '=' expr (';')?)* ']'
//! expr    := expr '||' expr | expr '&&' expr
//!          | expr ('==' | '!=') expr | expr ('<' | '<=' | '>' | '>=') expr
//!          | expr ('+' | '-') expr | expr ('*' | '/') expr
//!          | ('!' | '-') expr | primary
//! primary := integer | real | string | true | false | undefined
//!          | Name | self.Name | other.Name
//!          | '(' expr ')' | '{' expr (',' expr)* '}' | member '(' expr ',' expr ')'
//! ```
//!
//! `#` starts a comment that runs to the end of the line. Keywords are
//! case-insensitive, as are attribute names at lookup time.

mod ad;
mod ast;
mod eval;
mod lexer;
mod matching;
mod parser;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use ad::{Ad, AdSExpr, Role};
pub use ast::{AttrRef, BinaryOp, Expr, Literal, SExpr, Scope, UnaryOp};
pub use eval::{evaluate, Value};
pub use matching::{match_ads, rank, rank_detailed, RankOutcome};
pub use parser::MAX_NESTING;

/// 1-based line and column (in characters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Position {
    pub line: u32,
    pub column: u32,
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub position: Position,
    pub expected: Vec<&'static str>,
    pub message: Option<&'static str>,
}

impl SyntaxError {
    pub(crate) fn new(position: Position, expected: Vec<&'static str>) -> SyntaxError {
        SyntaxError { position, expected, message: None }
    }

    pub(crate) fn with_message(position: Position, message: &'static str) -> SyntaxError {
        SyntaxError { position, expected: Vec::new(), message: Some(message) }
    }
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "syntax error at {}", self.position)?;
        if let Some(m) = self.message {
            write!(f, ": {m}")?;
        }
        if !self.expected.is_empty() {
            f.write_str(": expected ")?;
            for (i, e) in self.expected.iter().enumerate() {
                if i > 0 {
                    f.write_str(" or ")?;
                }
                f.write_str(e)?;
            }
        }
        Ok(())
    }
}

impl core::error::Error for SyntaxError {}

#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Expr(Expr),
    Ad(Ad),
}

/// Parses either a bracketed ad or a bare expression, depending on the first token.
pub fn parse(text: &str) -> Result<Parsed, SyntaxError> {
    let mut p = parser::Parser::new(text)?;
    let parsed = if p.at_ad() { Parsed::Ad(p.ad()?) } else { Parsed::Expr(p.expr()?) };
    p.expect_eof()?;
    Ok(parsed)
}

pub fn parse_expr(text: &str) -> Result<Expr, SyntaxError> {
    let mut p = parser::Parser::new(text)?;
    let e = p.expr()?;
    p.expect_eof()?;
    Ok(e)
}

pub fn parse_ad(text: &str) -> Result<Ad, SyntaxError> {
    let mut p = parser::Parser::new(text)?;
    let ad = p.ad()?;
    p.expect_eof()?;
    Ok(ad)
}

/// Parses a file holding zero or more ads back to back (the snapshot body format).
pub fn parse_ads(text: &str) -> Result<Vec<Ad>, SyntaxError> {
    let mut p = parser::Parser::new(text)?;
    let mut out = Vec::new();
    while p.at_ad() {
        out.push(p.ad()?);
    }
    p.expect_eof()?;
    Ok(out)
}

/// Byte-level entry point: invalid UTF-8 is reported as a syntax error at the offending line.
pub fn parse_bytes(bytes: &[u8]) -> Result<Parsed, SyntaxError> {
    match core::str::from_utf8(bytes) {
        Ok(text) => parse(text),
        Err(e) => {
            let good = &bytes[..e.valid_up_to()];
            let line = 1 + good.iter().filter(|b| **b == b'\n').count() as u32;
            let tail = good.rsplit(|b| *b == b'\n').next().unwrap_or(&[]);
            // valid prefix, so this cannot fail
            let column = 1 + core::str::from_utf8(tail).map(|s| s.chars().count()).unwrap_or(0) as u32;
            Err(SyntaxError::with_message(Position { line, column }, "invalid UTF-8"))
        }
    }
}

/// Evaluates an attribute of `ad` with no counterpart, e.g. a resource's `Id`.
pub fn attribute_value(ad: &Ad, name: &str) -> Value {
    match ad.get(name) {
        Some(e) => evaluate(e, ad, &Ad::new()),
        None => Value::Undefined,
    }
}

pub fn attribute_string(ad: &Ad, name: &str) -> Option<String> {
    attribute_value(ad, name).as_str().map(String::from)
}
