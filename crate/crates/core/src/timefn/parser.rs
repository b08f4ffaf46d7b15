//! Recursive-descent parser for time expressions.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := number | 't' | func '(' expr (',' expr)* ')' | '(' expr ')' | '-' factor
//! func   := exp | sin | cos | min | max        (min/max take two arguments)
//! ```

use std::fmt;

use thiserror::Error;

use super::Expr;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at position {pos}: {kind}")]
pub struct ParseError {
    /// Byte offset into the input.
    pub pos: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    EmptyInput,
    UnexpectedChar(char),
    UnexpectedToken {
        found: String,
        expected: String,
    },
    UnexpectedEnd {
        expected: String,
    },
    UnknownIdentifier(String),
    Arity {
        func: String,
        expected: usize,
        found: usize,
    },
    BadNumber(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::EmptyInput => write!(f, "empty expression"),
            ParseErrorKind::UnexpectedChar(c) => write!(f, "unexpected character {c:?}"),
            ParseErrorKind::UnexpectedToken { found, expected } => {
                write!(f, "expected {expected}, found {found}")
            }
            ParseErrorKind::UnexpectedEnd { expected } => {
                write!(f, "unexpected end of input, expected {expected}")
            }
            ParseErrorKind::UnknownIdentifier(name) => write!(f, "unknown identifier {name:?}"),
            ParseErrorKind::Arity { func, expected, found } => {
                write!(f, "{func} takes {expected} argument(s), found {found}")
            }
            ParseErrorKind::BadNumber(s) => write!(f, "malformed number {s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(x) => write!(f, "number {x}"),
            Tok::Ident(s) => write!(f, "identifier {s:?}"),
            Tok::Plus => f.write_str("'+'"),
            Tok::Minus => f.write_str("'-'"),
            Tok::Star => f.write_str("'*'"),
            Tok::Slash => f.write_str("'/'"),
            Tok::LParen => f.write_str("'('"),
            Tok::RParen => f.write_str("')'"),
            Tok::Comma => f.write_str("','"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((start, Tok::Plus)),
            b'-' => out.push((start, Tok::Minus)),
            b'*' => out.push((start, Tok::Star)),
            b'/' => out.push((start, Tok::Slash)),
            b'(' => out.push((start, Tok::LParen)),
            b')' => out.push((start, Tok::RParen)),
            b',' => out.push((start, Tok::Comma)),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| ParseError {
                    pos: start,
                    kind: ParseErrorKind::BadNumber(text.to_string()),
                })?;
                out.push((start, Tok::Num(value)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    pos: start,
                    kind: ParseErrorKind::UnexpectedChar(ch),
                });
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn error_here(&self, expected: &str) -> ParseError {
        let kind = match self.peek() {
            Some(tok) => ParseErrorKind::UnexpectedToken {
                found: tok.to_string(),
                expected: expected.to_string(),
            },
            None => ParseErrorKind::UnexpectedEnd {
                expected: expected.to_string(),
            },
        };
        ParseError {
            pos: self.offset(),
            kind,
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error_here(expected))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        let start = self.offset();
        match self.bump() {
            Some(Tok::Num(x)) => Ok(Expr::Num(x)),
            Some(Tok::Minus) => Ok(Expr::Neg(Box::new(self.factor()?))),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                if name == "t" {
                    return Ok(Expr::Var);
                }
                let arity = match name.as_str() {
                    "exp" | "sin" | "cos" => 1,
                    "min" | "max" => 2,
                    _ => {
                        return Err(ParseError {
                            pos: start,
                            kind: ParseErrorKind::UnknownIdentifier(name),
                        })
                    }
                };
                self.expect(Tok::LParen, "'(' after function name")?;
                let mut args = vec![self.expr()?];
                while self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen, "')' or ','")?;
                if args.len() != arity {
                    return Err(ParseError {
                        pos: start,
                        kind: ParseErrorKind::Arity {
                            func: name,
                            expected: arity,
                            found: args.len(),
                        },
                    });
                }
                let mut args = args.into_iter().map(Box::new);
                let first = args.next().expect("arity >= 1");
                Ok(match name.as_str() {
                    "exp" => Expr::Exp(first),
                    "sin" => Expr::Sin(first),
                    "cos" => Expr::Cos(first),
                    "min" => Expr::Min(first, args.next().expect("arity 2")),
                    _ => Expr::Max(first, args.next().expect("arity 2")),
                })
            }
            _ => {
                self.pos -= 1;
                Err(self.error_here("a number, 't', a function or '('"))
            }
        }
    }
}

pub(crate) fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    if toks.is_empty() {
        return Err(ParseError {
            pos: 0,
            kind: ParseErrorKind::EmptyInput,
        });
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        return Err(p.error_here("an operator or end of input"));
    }
    Ok(e)
}
