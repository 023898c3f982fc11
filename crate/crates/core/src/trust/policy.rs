//! Emotion-based policies.
//!
//! ```text
//! expr  := and ( ("|" | "||" | "or" | "∨") and )*
//! and   := unary ( ("&" | "&&" | "and" | "∧") unary )*
//! unary := ("!" | "not" | "¬") unary | atom
//! atom  := "true" | "false" | ("happy" | "bored") "(" resource ")" | "(" expr ")"
//! resource := money | time | data | compute      (case-insensitive)
//! ```

use std::fmt;
use std::str::FromStr;

use super::contract::{Direction, Resource};
use super::state::EmotionState;
use super::TrustError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Const(bool),
    Happy(Resource),
    Bored(Resource),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

impl Expr {
    /// `happy(R)`: the last event on R was favorable. `bored(R)`: the last
    /// event on R was unfavorable with intensity above `bored_margin`.
    /// Unobserved resources make both atoms false.
    pub fn eval(&self, state: &EmotionState, bored_margin: f64) -> bool {
        match self {
            Expr::Const(b) => *b,
            Expr::Happy(r) => state.last(*r).is_some_and(|e| e.direction == Direction::Favorable),
            Expr::Bored(r) => state
                .last(*r)
                .is_some_and(|e| e.direction == Direction::Unfavorable && e.intensity > bored_margin),
            Expr::Not(e) => !e.eval(state, bored_margin),
            Expr::And(a, b) => a.eval(state, bored_margin) && b.eval(state, bored_margin),
            Expr::Or(a, b) => a.eval(state, bored_margin) || b.eval(state, bored_margin),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(b) => write!(f, "{b}"),
            Expr::Happy(r) => write!(f, "happy({r})"),
            Expr::Bored(r) => write!(f, "bored({r})"),
            Expr::Not(e) => write!(f, "!{e}"),
            Expr::And(a, b) => write!(f, "({a} & {b})"),
            Expr::Or(a, b) => write!(f, "({a} | {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub id: String,
    pub expr: Expr,
}

impl Policy {
    pub fn parse(id: impl Into<String>, source: &str) -> Result<Self, TrustError> {
        Ok(Self { id: id.into(), expr: source.parse()? })
    }

    pub fn evaluate(&self, state: &EmotionState, bored_margin: f64) -> bool {
        self.expr.eval(state, bored_margin)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    And,
    Or,
    Not,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, TrustError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let tok = match c {
            c if c.is_whitespace() => continue,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '!' | '¬' => Tok::Not,
            '∧' => Tok::And,
            '∨' => Tok::Or,
            '&' | '|' => {
                if chars.peek().is_some_and(|(_, n)| *n == c) {
                    chars.next();
                }
                if c == '&' {
                    Tok::And
                } else {
                    Tok::Or
                }
            }
            c if c.is_alphanumeric() || c == '_' => {
                let mut word = c.to_string();
                while let Some((_, n)) = chars.peek().filter(|(_, n)| n.is_alphanumeric() || *n == '_') {
                    word.push(*n);
                    chars.next();
                }
                match word.to_lowercase().as_str() {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    _ => Tok::Word(word),
                }
            }
            other => {
                return Err(TrustError::PolicySyntax { at: i, msg: format!("unexpected `{other}`") });
            }
        };
        out.push((i, tok));
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

    fn at(&self) -> usize {
        self.toks.get(self.pos).map(|(i, _)| *i).unwrap_or(self.end)
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, TrustError> {
        Err(TrustError::PolicySyntax { at: self.at(), msg: msg.into() })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), TrustError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected {what}"))
        }
    }

    fn or(&mut self) -> Result<Expr, TrustError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, TrustError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            lhs = Expr::And(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, TrustError> {
        if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, TrustError> {
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.or()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Word(w)) => {
                self.pos += 1;
                let ctor: fn(Resource) -> Expr = match w.to_lowercase().as_str() {
                    "true" => return Ok(Expr::Const(true)),
                    "false" => return Ok(Expr::Const(false)),
                    "happy" => Expr::Happy,
                    "bored" => Expr::Bored,
                    _ => return Err(TrustError::PolicySyntax { at: self.toks[self.pos - 1].0, msg: format!("unknown predicate `{w}`") }),
                };
                self.expect(Tok::LParen, "`(`")?;
                let resource = match self.peek() {
                    Some(Tok::Word(r)) => r.parse::<Resource>()?,
                    _ => return self.fail("expected a resource"),
                };
                self.pos += 1;
                self.expect(Tok::RParen, "`)`")?;
                Ok(ctor(resource))
            }
            Some(_) => self.fail("expected a predicate, constant or `(`"),
            None => self.fail("unexpected end of policy"),
        }
    }
}

impl FromStr for Expr {
    type Err = TrustError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser { toks: lex(s)?, pos: 0, end: s.len() };
        let e = p.or()?;
        if p.pos != p.toks.len() {
            return p.fail("trailing input");
        }
        Ok(e)
    }
}
