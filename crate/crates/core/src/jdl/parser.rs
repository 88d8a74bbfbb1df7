use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::ast::{AttrRef, BinaryOp, Expr, Literal, Scope, UnaryOp};
use super::lexer::{tokenize, Spanned, Token};
use super::{Ad, SyntaxError};

/// Trees deeper than this are rejected instead of recursing further.
pub const MAX_NESTING: usize = 200;

/// Iterative height check with an early exit, safe on any tree the parser can build.
fn height_exceeds(e: &Expr, limit: usize) -> bool {
    let mut stack = vec![(e, 0usize)];
    while let Some((node, d)) = stack.pop() {
        if d > limit {
            return true;
        }
        match node {
            Expr::Literal(_) | Expr::Attr(_) => {}
            Expr::Unary(_, x) => stack.push((x, d + 1)),
            Expr::Binary(_, l, r) | Expr::Member(l, r) => {
                stack.push((l, d + 1));
                stack.push((r, d + 1));
            }
            Expr::List(items) => stack.extend(items.iter().map(|x| (x, d + 1))),
        }
    }
    false
}

pub(crate) struct Parser {
    tokens: Vec<Spanned>,
    at: usize,
    nesting: usize,
}

impl Parser {
    pub(crate) fn new(text: &str) -> Result<Parser, SyntaxError> {
        Ok(Parser { tokens: tokenize(text)?, at: 0, nesting: 0 })
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.at].token
    }

    fn peek_at(&self, offset: usize) -> &Token {
        let i = (self.at + offset).min(self.tokens.len() - 1);
        &self.tokens[i].token
    }

    fn advance(&mut self) -> Spanned {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn error(&self, expected: Vec<&'static str>) -> SyntaxError {
        SyntaxError::new(self.tokens[self.at].pos, expected)
    }

    fn expect(&mut self, token: Token) -> Result<(), SyntaxError> {
        if *self.peek() == token {
            self.advance();
            Ok(())
        } else {
            Err(self.error(vec![token.describe()]))
        }
    }

    pub(crate) fn expect_eof(&self) -> Result<(), SyntaxError> {
        if *self.peek() == Token::Eof {
            Ok(())
        } else {
            Err(self.error(vec!["end of input"]))
        }
    }

    pub(crate) fn at_ad(&self) -> bool {
        *self.peek() == Token::LBracket
    }

    pub(crate) fn ad(&mut self) -> Result<Ad, SyntaxError> {
        self.expect(Token::LBracket)?;
        let mut ad = Ad::new();
        loop {
            match self.peek().clone() {
                Token::RBracket => {
                    self.advance();
                    return Ok(ad);
                }
                Token::Ident(name) => {
                    self.advance();
                    self.expect(Token::Assign)?;
                    let value = self.expr()?;
                    ad.insert(name, value);
                    match self.peek() {
                        Token::Semi => {
                            self.advance();
                        }
                        Token::RBracket => {}
                        _ => return Err(self.error(vec!["';'", "']'"])),
                    }
                }
                _ => return Err(self.error(vec!["attribute name", "']'"])),
            }
        }
    }

    pub(crate) fn expr(&mut self) -> Result<Expr, SyntaxError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(self.too_deep());
        }
        let result = self.binary(1);
        self.nesting -= 1;
        let e = result?;
        // Left-associative chains deepen the tree without recursing here, so
        // the tree height is checked as well.
        if height_exceeds(&e, MAX_NESTING) {
            return Err(self.too_deep());
        }
        Ok(e)
    }

    fn too_deep(&self) -> SyntaxError {
        SyntaxError::with_message(self.tokens[self.at].pos, "expression nested too deeply")
    }

    fn binary_op(&self) -> Option<BinaryOp> {
        Some(match self.peek() {
            Token::OrOr => BinaryOp::Or,
            Token::AndAnd => BinaryOp::And,
            Token::EqEq => BinaryOp::Eq,
            Token::NotEq => BinaryOp::Ne,
            Token::Lt => BinaryOp::Lt,
            Token::Le => BinaryOp::Le,
            Token::Gt => BinaryOp::Gt,
            Token::Ge => BinaryOp::Ge,
            Token::Plus => BinaryOp::Add,
            Token::Minus => BinaryOp::Sub,
            Token::Star => BinaryOp::Mul,
            Token::Slash => BinaryOp::Div,
            _ => return None,
        })
    }

    // Precedence climbing over the left-associative binary operators.
    fn binary(&mut self, min_prec: u8) -> Result<Expr, SyntaxError> {
        let mut lhs = self.unary()?;
        let mut chained = 0;
        while let Some(op) = self.binary_op().filter(|op| op.precedence() >= min_prec) {
            chained += 1;
            if chained > MAX_NESTING {
                return Err(self.too_deep());
            }
            self.advance();
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        let op = match self.peek() {
            Token::Bang => UnaryOp::Not,
            Token::Minus => UnaryOp::Neg,
            _ => return self.primary(),
        };
        self.advance();
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            return Err(self.too_deep());
        }
        let operand = self.unary();
        self.nesting -= 1;
        Ok(Expr::Unary(op, Box::new(operand?)))
    }

    fn attribute_name(&mut self) -> Result<String, SyntaxError> {
        match self.peek().clone() {
            Token::Ident(name) => {
                self.advance();
                Ok(name)
            }
            _ => Err(self.error(vec!["attribute name"])),
        }
    }

    fn primary(&mut self) -> Result<Expr, SyntaxError> {
        match self.peek().clone() {
            Token::Int(v) => {
                self.advance();
                Ok(Expr::Literal(Literal::Int(v)))
            }
            Token::Real(v) => {
                self.advance();
                Ok(Expr::Literal(Literal::Real(v)))
            }
            Token::Str(s) => {
                self.advance();
                Ok(Expr::Literal(Literal::Str(s)))
            }
            Token::LParen => {
                self.advance();
                let inner = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Token::LBrace => {
                self.advance();
                let mut items = Vec::new();
                if *self.peek() == Token::RBrace {
                    self.advance();
                    return Ok(Expr::List(items));
                }
                loop {
                    items.push(self.expr()?);
                    match self.peek() {
                        Token::Comma => {
                            self.advance();
                        }
                        Token::RBrace => {
                            self.advance();
                            return Ok(Expr::List(items));
                        }
                        _ => return Err(self.error(vec!["','", "'}'"])),
                    }
                }
            }
            Token::Ident(word) => {
                let lower = word.to_ascii_lowercase();
                match lower.as_str() {
                    "true" => {
                        self.advance();
                        Ok(Expr::Literal(Literal::Bool(true)))
                    }
                    "false" => {
                        self.advance();
                        Ok(Expr::Literal(Literal::Bool(false)))
                    }
                    "undefined" => {
                        self.advance();
                        Ok(Expr::Literal(Literal::Undefined))
                    }
                    "self" | "other" if *self.peek_at(1) == Token::Dot => {
                        self.advance();
                        self.advance();
                        let name = self.attribute_name()?;
                        let scope = if lower == "self" { Scope::Mine } else { Scope::Other };
                        Ok(Expr::Attr(AttrRef { scope, name }))
                    }
                    "member" if *self.peek_at(1) == Token::LParen => {
                        self.advance();
                        self.advance();
                        let needle = self.expr()?;
                        self.expect(Token::Comma)?;
                        let haystack = self.expr()?;
                        self.expect(Token::RParen)?;
                        Ok(Expr::Member(Box::new(needle), Box::new(haystack)))
                    }
                    _ => {
                        if *self.peek_at(1) == Token::LParen {
                            return Err(SyntaxError::with_message(
                                self.tokens[self.at].pos,
                                "unknown function (only member is supported)",
                            ));
                        }
                        self.advance();
                        Ok(Expr::Attr(AttrRef { scope: Scope::Mine, name: word }))
                    }
                }
            }
            _ => Err(self.error(vec!["literal", "attribute", "'('", "'{'", "'!'", "'-'"])),
        }
    }
}
