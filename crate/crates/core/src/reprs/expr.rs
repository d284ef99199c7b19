//! Per-pixel rule expressions for `binary/threshold`.
//!
//! ```text
//! expr    := sum (cmp_op sum)?
//! cmp_op  := '<' | '<=' | '>' | '>=' | '==' | '!='
//! sum     := product (('+' | '-') product)*
//! product := unary (('*' | '/') unary)*
//! unary   := '-' unary | atom
//! atom    := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Values are `f64`; comparisons yield 1 or 0, so `*` acts as logical AND.
//! The only function is `safe_class(x)`, which is 1 when `x` (a class index)
//! is in the configured safe set.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("rule syntax error at column {column}: {message}")]
pub struct ExprError {
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        let truth = |c: bool| if c { 1.0 } else { 0.0 };
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Lt => truth(a < b),
            BinOp::Le => truth(a <= b),
            BinOp::Gt => truth(a > b),
            BinOp::Ge => truth(a >= b),
            BinOp::Eq => truth(a == b),
            BinOp::Ne => truth(a != b),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Call(String, Box<Expr>),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Call(name, arg) => write!(f, "{name}({arg})"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

impl Expr {
    /// Identifiers referenced outside function names.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Var(v) = e {
                out.insert(v.clone());
            }
        });
        out
    }

    pub fn functions(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Call(name, _) = e {
                out.insert(name.clone());
            }
        });
        out
    }

    fn walk(&self, visit: &mut impl FnMut(&Expr)) {
        visit(self);
        match self {
            Expr::Num(_) | Expr::Var(_) => {}
            Expr::Call(_, a) | Expr::Neg(a) => a.walk(visit),
            Expr::Bin(_, a, b) => {
                a.walk(visit);
                b.walk(visit);
            }
        }
    }

    /// Replaces variables for which `lookup` returns a value by that constant.
    pub fn substitute(self, lookup: &impl Fn(&str) -> Option<f64>) -> Expr {
        match self {
            Expr::Var(name) => match lookup(&name) {
                Some(v) => Expr::Num(v),
                None => Expr::Var(name),
            },
            Expr::Num(v) => Expr::Num(v),
            Expr::Call(name, a) => Expr::Call(name, Box::new(a.substitute(lookup))),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(lookup))),
            Expr::Bin(op, a, b) => Expr::Bin(op, Box::new(a.substitute(lookup)), Box::new(b.substitute(lookup))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(BinOp),
    Minus,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |column: usize, message: String| ExprError { column: column + 1, message };
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                i += 1;
                if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                    i += 1;
                }
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text = &src[start..i];
            let v = text
                .parse::<f64>()
                .map_err(|_| err(start, format!("bad number '{text}'")))?;
            out.push((start, Token::Num(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Token::Ident(src[start..i].to_string())));
            continue;
        }
        let two = src.get(i..i + 2);
        let (tok, len) = match (c, two) {
            (_, Some("<=")) => (Token::Op(BinOp::Le), 2),
            (_, Some(">=")) => (Token::Op(BinOp::Ge), 2),
            (_, Some("==")) => (Token::Op(BinOp::Eq), 2),
            (_, Some("!=")) => (Token::Op(BinOp::Ne), 2),
            ('<', _) => (Token::Op(BinOp::Lt), 1),
            ('>', _) => (Token::Op(BinOp::Gt), 1),
            ('+', _) => (Token::Op(BinOp::Add), 1),
            ('-', _) => (Token::Minus, 1),
            ('*', _) => (Token::Op(BinOp::Mul), 1),
            ('/', _) => (Token::Op(BinOp::Div), 1),
            ('(', _) => (Token::LParen, 1),
            (')', _) => (Token::RParen, 1),
            _ => return Err(err(start, format!("unexpected character '{c}'"))),
        };
        out.push((start, tok));
        i += len;
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn column(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(c, _)| *c) + 1
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            column: self.column(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.sum()?;
        if let Some(Token::Op(op)) = self.peek() {
            let op = *op;
            if matches!(op, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne) {
                self.pos += 1;
                let rhs = self.sum()?;
                return Ok(Expr::Bin(op, Box::new(lhs), Box::new(rhs)));
            }
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(Token::Op(BinOp::Add)) => BinOp::Add,
                Some(Token::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.product()?));
        }
    }

    fn product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Token::Op(BinOp::Mul)) => BinOp::Mul,
                Some(Token::Op(BinOp::Div)) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek().cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Token::LParen) {
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    Ok(Expr::Call(name, Box::new(arg)))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Some(t) => self.error(format!("unexpected {t:?}")),
            None => self.error("unexpected end of rule"),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        if self.peek() == Some(&Token::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            self.error("expected ')'")
        }
    }
}

pub fn parse_expr(src: &str) -> Result<Expr, ExprError> {
    let mut p = Parser {
        tokens: tokenize(src)?,
        pos: 0,
        end: src.len(),
    };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return p.error("unexpected trailing input");
    }
    Ok(e)
}

/// An expression with variables bound to slot indices, ready for per-pixel evaluation.
#[derive(Debug, Clone)]
pub enum Compiled {
    Num(f64),
    Slot(usize),
    SafeClass(Box<Compiled>),
    Neg(Box<Compiled>),
    Bin(BinOp, Box<Compiled>, Box<Compiled>),
}

#[derive(Debug, Error, PartialEq)]
pub enum BindError {
    #[error("rule references unknown channel '{0}'")]
    UnknownVariable(String),
    #[error("rule calls unknown function '{0}'")]
    UnknownFunction(String),
}

impl Compiled {
    pub fn bind(expr: &Expr, slot_of: &impl Fn(&str) -> Option<usize>) -> Result<Compiled, BindError> {
        Ok(match expr {
            Expr::Num(v) => Compiled::Num(*v),
            Expr::Var(name) => Compiled::Slot(slot_of(name).ok_or_else(|| BindError::UnknownVariable(name.clone()))?),
            Expr::Call(name, arg) if name == "safe_class" => Compiled::SafeClass(Box::new(Self::bind(arg, slot_of)?)),
            Expr::Call(name, _) => return Err(BindError::UnknownFunction(name.clone())),
            Expr::Neg(a) => Compiled::Neg(Box::new(Self::bind(a, slot_of)?)),
            Expr::Bin(op, a, b) => Compiled::Bin(*op, Box::new(Self::bind(a, slot_of)?), Box::new(Self::bind(b, slot_of)?)),
        })
    }

    /// `safe` is indexed by class; classes past its end are unsafe.
    pub fn eval(&self, slots: &[f64], safe: &[bool]) -> f64 {
        match self {
            Compiled::Num(v) => *v,
            Compiled::Slot(i) => slots[*i],
            Compiled::SafeClass(a) => {
                let c = a.eval(slots, safe);
                let hit = c >= 0.0 && c.fract() == 0.0 && safe.get(c as usize).copied().unwrap_or(false);
                if hit {
                    1.0
                } else {
                    0.0
                }
            }
            Compiled::Neg(a) => -a.eval(slots, safe),
            Compiled::Bin(op, a, b) => op.apply(a.eval(slots, safe), b.eval(slots, safe)),
        }
    }
}
