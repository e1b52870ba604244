//! Functionals `φ(θ, V_{1:T})` written as small arithmetic expressions.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | name | name '(' expr ')' | 'V' '[' expr ']' | '(' expr ')'
//! ```
//!
//! Names are the parameter fields (`V0 kappa lambda nu H C rho r sigma_obs`)
//! and `T`, the number of observations. `V[t]` is the volatility at unit time
//! `t` (`V[0]` is `V0`). Functions: `log exp sqrt abs tanh atanh`.

use crate::error::{Error, Result};
use crate::models::{ModelParams, ModelSpec};

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    Param(&'static str),
    Horizon,
    Vol(Box<Expr>),
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Log,
    Exp,
    Sqrt,
    Abs,
    Tanh,
    Atanh,
}

const PARAMS: [&str; 9] = ["V0", "kappa", "lambda", "nu", "H", "C", "rho", "r", "sigma_obs"];

/// A parsed functional together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Functional {
    source: String,
    expr: Expr,
    uses_path: bool,
}

impl Functional {
    pub fn parse(source: &str) -> Result<Self> {
        let tokens = lex(source)?;
        let mut p = Parser { tokens, pos: 0 };
        let expr = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Functional(format!("unexpected trailing input in '{source}'")));
        }
        let uses_path = mentions_path(&expr);
        Ok(Functional { source: source.trim().to_string(), expr, uses_path })
    }

    pub fn name(&self) -> &str {
        &self.source
    }

    /// Whether the value depends on the volatility path.
    pub fn uses_path(&self) -> bool {
        self.uses_path
    }

    /// Evaluate at `θ` and the unit-time skeleton `V_1..V_T`.
    pub fn eval(&self, theta: &ModelParams, skeleton: &[f64]) -> f64 {
        eval(&self.expr, theta, skeleton)
    }

    /// One projection per estimated parameter, on the unconstrained scale.
    pub fn parameter_defaults(spec: &ModelSpec) -> Vec<Functional> {
        spec.coords()
            .into_iter()
            .map(|c| Functional::parse(c.unconstrained_label()).expect("built-in functional"))
            .collect()
    }
}

impl std::fmt::Display for Functional {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.source)
    }
}

fn mentions_path(e: &Expr) -> bool {
    match e {
        Expr::Vol(_) => true,
        Expr::Num(_) | Expr::Param(_) | Expr::Horizon => false,
        Expr::Neg(a) | Expr::Call(_, a) => mentions_path(a),
        Expr::Bin(_, a, b) => mentions_path(a) || mentions_path(b),
    }
}

fn eval(e: &Expr, theta: &ModelParams, v: &[f64]) -> f64 {
    match e {
        Expr::Num(x) => *x,
        Expr::Param(name) => theta.get(name).expect("validated at parse time"),
        Expr::Horizon => v.len() as f64,
        Expr::Vol(idx) => {
            let i = eval(idx, theta, v).round();
            if i == 0.0 {
                theta.vol.v0
            } else if i >= 1.0 && (i as usize) <= v.len() {
                v[i as usize - 1]
            } else {
                f64::NAN
            }
        }
        Expr::Neg(a) => -eval(a, theta, v),
        Expr::Bin(op, a, b) => {
            let (x, y) = (eval(a, theta, v), eval(b, theta, v));
            match op {
                Op::Add => x + y,
                Op::Sub => x - y,
                Op::Mul => x * y,
                Op::Div => x / y,
                Op::Pow => x.powf(y),
            }
        }
        Expr::Call(f, a) => {
            let x = eval(a, theta, v);
            match f {
                Func::Log => x.ln(),
                Func::Exp => x.exp(),
                Func::Sqrt => x.sqrt(),
                Func::Abs => x.abs(),
                Func::Tanh => x.tanh(),
                Func::Atanh => x.atanh(),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn lex(s: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let x = text.parse::<f64>().map_err(|_| Error::Functional(format!("bad number '{text}'")))?;
            out.push(Tok::Num(x));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()[]".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(Error::Functional(format!("unexpected character '{c}' in '{s}'")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek_sym(&self, c: char) -> bool {
        matches!(self.tokens.get(self.pos), Some(Tok::Sym(x)) if *x == c)
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek_sym(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Functional(format!("expected '{c}'")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.peek_sym('+') {
                Op::Add
            } else if self.peek_sym('-') {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.peek_sym('*') {
                Op::Mul
            } else if self.peek_sym('/') {
                Op::Div
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_sym('-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.peek_sym('^') {
            self.pos += 1;
            return Ok(Expr::Bin(Op::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Num(x)) => {
                self.pos += 1;
                Ok(Expr::Num(x))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if name == "V" && self.peek_sym('[') {
                    self.pos += 1;
                    let idx = self.expr()?;
                    self.expect(']')?;
                    return Ok(Expr::Vol(Box::new(idx)));
                }
                if self.peek_sym('(') {
                    let f = match name.as_str() {
                        "log" => Func::Log,
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        "abs" => Func::Abs,
                        "tanh" => Func::Tanh,
                        "atanh" => Func::Atanh,
                        other => return Err(Error::Functional(format!("unknown function '{other}'"))),
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                if name == "T" {
                    return Ok(Expr::Horizon);
                }
                PARAMS
                    .iter()
                    .find(|p| **p == name)
                    .map(|p| Expr::Param(p))
                    .ok_or_else(|| Error::Functional(format!("unknown name '{name}'")))
            }
            Some(Tok::Sym(c)) => Err(Error::Functional(format!("unexpected '{c}'"))),
            None => Err(Error::Functional("unexpected end of expression".into())),
        }
    }
}
