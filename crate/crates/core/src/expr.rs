//! A tiny arithmetic-expression language used by configuration files and
//! symbol banks.
//!
//! Grammar: `+ - * / ^`, parentheses, numeric literals, the constant `pi`,
//! the functions `sin cos exp sqrt`, and a caller-provided list of variable
//! names (typically `x1`, `x2`, `xi1`, `xi2`). Expressions can be
//! differentiated symbolically, which gives analytic derivative oracles for
//! metrics and symbols defined in text.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Ln,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

/// A parsed expression over a fixed list of variables.
#[derive(Clone)]
pub struct Expr {
    root: Node,
    vars: Arc<Vec<String>>,
    source: String,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    pub fn parse(src: &str, vars: &[&str]) -> Result<Self> {
        let vars: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens: &tokens, pos: 0, vars: &vars };
        let root = p.expr()?;
        if p.pos != tokens.len() {
            return Err(Error::Expr {
                offset: tokens[p.pos].offset,
                message: format!("unexpected token {:?}", tokens[p.pos].kind),
            });
        }
        Ok(Self { root, vars: Arc::new(vars), source: src.trim().to_string() })
    }

    pub fn constant(value: f64, vars: &[&str]) -> Self {
        Self {
            root: Node::Num(value),
            vars: Arc::new(vars.iter().map(|s| s.to_string()).collect()),
            source: format!("{value}"),
        }
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn is_constant(&self) -> bool {
        matches!(simplify(self.root.clone()), Node::Num(_))
    }

    /// Evaluates with `values[i]` bound to the i-th variable. Missing values
    /// read as zero.
    pub fn eval(&self, values: &[f64]) -> f64 {
        eval(&self.root, values)
    }

    /// Symbolic partial derivative with respect to the named variable.
    pub fn diff(&self, var: &str) -> Result<Self> {
        let idx = self
            .vars
            .iter()
            .position(|v| v == var)
            .ok_or_else(|| Error::Expr { offset: 0, message: format!("unknown variable {var}") })?;
        Ok(self.diff_index(idx))
    }

    pub fn diff_index(&self, idx: usize) -> Self {
        let root = simplify(diff(&self.root, idx));
        let source = render(&root, &self.vars);
        Self { root, vars: self.vars.clone(), source }
    }
}

fn eval(n: &Node, v: &[f64]) -> f64 {
    match n {
        Node::Num(c) => *c,
        Node::Var(i) => v.get(*i).copied().unwrap_or(0.0),
        Node::Neg(a) => -eval(a, v),
        Node::Add(a, b) => eval(a, v) + eval(b, v),
        Node::Sub(a, b) => eval(a, v) - eval(b, v),
        Node::Mul(a, b) => eval(a, v) * eval(b, v),
        Node::Div(a, b) => eval(a, v) / eval(b, v),
        Node::Pow(a, b) => {
            let base = eval(a, v);
            match **b {
                Node::Num(e) if e == e.trunc() && e.abs() <= 64.0 => base.powi(e as i32),
                _ => base.powf(eval(b, v)),
            }
        }
        Node::Call(f, a) => {
            let x = eval(a, v);
            match f {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Sqrt => x.sqrt(),
                Func::Ln => x.ln(),
            }
        }
    }
}

fn num(c: f64) -> Box<Node> {
    Box::new(Node::Num(c))
}

fn diff(n: &Node, i: usize) -> Node {
    use Node::*;
    match n {
        Num(_) => Num(0.0),
        Var(j) => Num(if *j == i { 1.0 } else { 0.0 }),
        Neg(a) => Neg(Box::new(diff(a, i))),
        Add(a, b) => Add(Box::new(diff(a, i)), Box::new(diff(b, i))),
        Sub(a, b) => Sub(Box::new(diff(a, i)), Box::new(diff(b, i))),
        Mul(a, b) => Add(
            Box::new(Mul(Box::new(diff(a, i)), b.clone())),
            Box::new(Mul(a.clone(), Box::new(diff(b, i)))),
        ),
        Div(a, b) => Div(
            Box::new(Sub(
                Box::new(Mul(Box::new(diff(a, i)), b.clone())),
                Box::new(Mul(a.clone(), Box::new(diff(b, i)))),
            )),
            Box::new(Pow(b.clone(), num(2.0))),
        ),
        Pow(a, b) => {
            if let Num(e) = simplify((**b).clone()) {
                // d(a^e) = e a^(e-1) a'
                Mul(
                    Box::new(Mul(num(e), Box::new(Pow(a.clone(), num(e - 1.0))))),
                    Box::new(diff(a, i)),
                )
            } else {
                // d(a^b) = a^b (b' ln a + b a'/a)
                Mul(
                    Box::new(n.clone()),
                    Box::new(Add(
                        Box::new(Mul(Box::new(diff(b, i)), Box::new(Call(Func::Ln, a.clone())))),
                        Box::new(Div(Box::new(Mul(b.clone(), Box::new(diff(a, i)))), a.clone())),
                    )),
                )
            }
        }
        Call(f, a) => {
            let outer = match f {
                Func::Sin => Call(Func::Cos, a.clone()),
                Func::Cos => Neg(Box::new(Call(Func::Sin, a.clone()))),
                Func::Exp => Call(Func::Exp, a.clone()),
                Func::Sqrt => Div(num(0.5), Box::new(Call(Func::Sqrt, a.clone()))),
                Func::Ln => Div(num(1.0), a.clone()),
            };
            Mul(Box::new(outer), Box::new(diff(a, i)))
        }
    }
}

#[allow(clippy::redundant_guards)]
fn simplify(n: Node) -> Node {
    use Node::*;
    match n {
        Neg(a) => match simplify(*a) {
            Num(c) => Num(-c),
            Neg(inner) => *inner,
            s => Neg(Box::new(s)),
        },
        Add(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x + y),
            (Num(z), s) | (s, Num(z)) if z == 0.0 => s,
            (x, y) => Add(Box::new(x), Box::new(y)),
        },
        Sub(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x - y),
            (s, Num(z)) if z == 0.0 => s,
            (Num(z), s) if z == 0.0 => Neg(Box::new(s)),
            (x, y) => Sub(Box::new(x), Box::new(y)),
        },
        Mul(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x * y),
            (Num(z), _) | (_, Num(z)) if z == 0.0 => Num(0.0),
            (Num(o), s) | (s, Num(o)) if o == 1.0 => s,
            (x, y) => Mul(Box::new(x), Box::new(y)),
        },
        Div(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x / y),
            (Num(z), _) if z == 0.0 => Num(0.0),
            (s, Num(o)) if o == 1.0 => s,
            (x, y) => Div(Box::new(x), Box::new(y)),
        },
        Pow(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x.powf(y)),
            (_, Num(z)) if z == 0.0 => Num(1.0),
            (s, Num(o)) if o == 1.0 => s,
            (x, y) => Pow(Box::new(x), Box::new(y)),
        },
        Call(f, a) => match simplify(*a) {
            Num(x) => Num(eval(&Call(f, num(x)), &[])),
            s => Call(f, Box::new(s)),
        },
        other => other,
    }
}

fn render(n: &Node, vars: &[String]) -> String {
    use Node::*;
    match n {
        Num(c) => {
            if *c < 0.0 {
                format!("({c})")
            } else {
                format!("{c}")
            }
        }
        Var(i) => vars[*i].clone(),
        Neg(a) => format!("(-{})", render(a, vars)),
        Add(a, b) => format!("({} + {})", render(a, vars), render(b, vars)),
        Sub(a, b) => format!("({} - {})", render(a, vars), render(b, vars)),
        Mul(a, b) => format!("{}*{}", render(a, vars), render(b, vars)),
        Div(a, b) => format!("{}/({})", render(a, vars), render(b, vars)),
        Pow(a, b) => format!("({})^({})", render(a, vars), render(b, vars)),
        Call(f, a) => {
            let name = match f {
                Func::Sin => "sin",
                Func::Cos => "cos",
                Func::Exp => "exp",
                Func::Sqrt => "sqrt",
                Func::Ln => "ln",
            };
            format!("{name}({})", render(a, vars))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    offset: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // exponent part: 1e-5, 2.5E+3
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let value = text.parse::<f64>().map_err(|_| Error::Expr {
                offset: start,
                message: format!("bad number {text:?}"),
            })?;
            out.push(Token { kind: Tok::Num(value), offset: start });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { kind: Tok::Ident(src[start..i].to_string()), offset: start });
        } else if "+-*/^".contains(c) {
            out.push(Token { kind: Tok::Op(c), offset: i });
            i += 1;
        } else if c == '(' {
            out.push(Token { kind: Tok::LParen, offset: i });
            i += 1;
        } else if c == ')' {
            out.push(Token { kind: Tok::RParen, offset: i });
            i += 1;
        } else {
            return Err(Error::Expr { offset: i, message: format!("unexpected character {c:?}") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.offset).unwrap_or(usize::MAX)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Expr { offset: self.offset(), message: message.into() })
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            // right associative, binds tighter than unary minus on the left
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected ')'");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "sqrt" => Some(Func::Sqrt),
                    _ => None,
                };
                if let Some(f) = func {
                    if self.peek() != Some(&Tok::LParen) {
                        return self.err(format!("expected '(' after {name}"));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek() != Some(&Tok::RParen) {
                        return self.err("expected ')'");
                    }
                    self.pos += 1;
                    return Ok(Node::Call(f, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => Ok(Node::Var(i)),
                    None => {
                        self.pos -= 1;
                        self.err(format!("unknown identifier {name:?}"))
                    }
                }
            }
            Some(tok) => self.err(format!("unexpected token {tok:?}")),
            None => self.err("unexpected end of expression"),
        }
    }
}
