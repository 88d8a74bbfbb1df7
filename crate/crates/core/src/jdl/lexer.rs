use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{Position, SyntaxError};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Ident(String),
    Int(i64),
    Real(f64),
    Str(String),
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Semi,
    Comma,
    Dot,
    Assign,
    OrOr,
    AndAnd,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Bang,
    Eof,
}

impl Token {
    pub(crate) fn describe(&self) -> &'static str {
        match self {
            Token::Ident(_) => "identifier",
            Token::Int(_) => "integer",
            Token::Real(_) => "real",
            Token::Str(_) => "string",
            Token::LBracket => "'['",
            Token::RBracket => "']'",
            Token::LBrace => "'{'",
            Token::RBrace => "'}'",
            Token::LParen => "'('",
            Token::RParen => "')'",
            Token::Semi => "';'",
            Token::Comma => "','",
            Token::Dot => "'.'",
            Token::Assign => "'='",
            Token::OrOr => "'||'",
            Token::AndAnd => "'&&'",
            Token::EqEq => "'=='",
            Token::NotEq => "'!='",
            Token::Lt => "'<'",
            Token::Le => "'<='",
            Token::Gt => "'>'",
            Token::Ge => "'>='",
            Token::Plus => "'+'",
            Token::Minus => "'-'",
            Token::Star => "'*'",
            Token::Slash => "'/'",
            Token::Bang => "'!'",
            Token::Eof => "end of input",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Spanned {
    pub token: Token,
    pub pos: Position,
}

struct Lexer<'a> {
    chars: core::iter::Peekable<core::str::Chars<'a>>,
    line: u32,
    column: u32,
}

impl<'a> Lexer<'a> {
    fn pos(&self) -> Position {
        Position { line: self.line, column: self.column }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn eat(&mut self, expected: char) -> bool {
        if self.peek() == Some(expected) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, pos: Position) -> Result<Token, SyntaxError> {
        let mut text = String::new();
        let mut is_real = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                text.push(c);
                self.bump();
            } else {
                break;
            }
        }
        if self.peek() == Some('.') {
            // `1.` is not accepted; a fraction needs at least one digit.
            self.bump();
            text.push('.');
            is_real = true;
            let before = text.len();
            while let Some(c) = self.peek().filter(char::is_ascii_digit) {
                text.push(c);
                self.bump();
            }
            if text.len() == before {
                return Err(SyntaxError::new(self.pos(), vec!["digit"]));
            }
        }
        if matches!(self.peek(), Some('e') | Some('E')) {
            self.bump();
            text.push('e');
            is_real = true;
            if let Some(sign) = self.peek().filter(|c| *c == '+' || *c == '-') {
                text.push(sign);
                self.bump();
            }
            let before = text.len();
            while let Some(c) = self.peek().filter(char::is_ascii_digit) {
                text.push(c);
                self.bump();
            }
            if text.len() == before {
                return Err(SyntaxError::new(self.pos(), vec!["exponent digits"]));
            }
        }
        if is_real {
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Token::Real(v)),
                _ => Err(SyntaxError::with_message(pos, "real literal out of range")),
            }
        } else {
            text.parse::<i64>()
                .map(Token::Int)
                .map_err(|_| SyntaxError::with_message(pos, "integer literal out of range"))
        }
    }

    fn string(&mut self, pos: Position) -> Result<Token, SyntaxError> {
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(SyntaxError::new(self.pos(), vec!["'\"'"])),
                Some('"') => return Ok(Token::Str(out)),
                Some('\\') => match self.bump() {
                    Some('"') => out.push('"'),
                    Some('\\') => out.push('\\'),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    _ => return Err(SyntaxError::with_message(pos, "invalid escape in string")),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn next_token(&mut self) -> Result<Spanned, SyntaxError> {
        self.skip_trivia();
        let pos = self.pos();
        let Some(c) = self.peek() else {
            return Ok(Spanned { token: Token::Eof, pos });
        };
        if c.is_ascii_digit() {
            let token = self.number(pos)?;
            return Ok(Spanned { token, pos });
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut ident = String::new();
            while let Some(c) = self.peek().filter(|c| c.is_ascii_alphanumeric() || *c == '_') {
                ident.push(c);
                self.bump();
            }
            return Ok(Spanned { token: Token::Ident(ident), pos });
        }
        self.bump();
        let token = match c {
            '"' => self.string(pos)?,
            '[' => Token::LBracket,
            ']' => Token::RBracket,
            '{' => Token::LBrace,
            '}' => Token::RBrace,
            '(' => Token::LParen,
            ')' => Token::RParen,
            ';' => Token::Semi,
            ',' => Token::Comma,
            '.' => Token::Dot,
            '+' => Token::Plus,
            '-' => Token::Minus,
            '*' => Token::Star,
            '/' => Token::Slash,
            '=' if self.eat('=') => Token::EqEq,
            '=' => Token::Assign,
            '!' if self.eat('=') => Token::NotEq,
            '!' => Token::Bang,
            '<' if self.eat('=') => Token::Le,
            '<' => Token::Lt,
            '>' if self.eat('=') => Token::Ge,
            '>' => Token::Gt,
            '|' if self.eat('|') => Token::OrOr,
            '&' if self.eat('&') => Token::AndAnd,
            '|' => return Err(SyntaxError::new(self.pos(), vec!["'|'"])),
            '&' => return Err(SyntaxError::new(self.pos(), vec!["'&'"])),
            _ => return Err(SyntaxError::with_message(pos, "unexpected character")),
        };
        Ok(Spanned { token, pos })
    }
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Spanned>, SyntaxError> {
    let mut lexer = Lexer { chars: text.chars().peekable(), line: 1, column: 1 };
    let mut out = Vec::new();
    loop {
        let t = lexer.next_token()?;
        let done = t.token == Token::Eof;
        out.push(t);
        if done {
            return Ok(out);
        }
    }
}
