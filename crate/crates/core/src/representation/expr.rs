//! Whitelisted expression grammar for analytic sources and initial data.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 't' | 'x' index | func '(' expr ')' | '(' expr ')'
//! func  := sin | cos | exp | gauss | step
//! ```
//!
//! `x1 .. xN` are the spatial coordinates, `gauss(u) = exp(-u^2)` and
//! `step(u) = 1` for `u > 0`, else 0.

use crate::error::{KfpError, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X(usize),
    T,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Gauss,
    Step,
}

/// Parsed expression in `(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
    dim: usize,
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(KfpError::Expression(format!("{msg} at offset {}", self.pos)))
    }

    fn skip(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip();
        self.s.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == b'+' { Node::Add(lhs.into(), rhs.into()) } else { Node::Sub(lhs.into(), rhs.into()) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == b'*' { Node::Mul(lhs.into(), rhs.into()) } else { Node::Div(lhs.into(), rhs.into()) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Node::Neg(self.unary()?.into()));
        }
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            return Ok(Node::Pow(base.into(), self.unary()?.into()));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            None => self.err("unexpected end of input"),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self.pos < self.s.len() {
                    let c = self.s[self.pos];
                    let exp_sign = (c == b'+' || c == b'-') && matches!(self.s[self.pos - 1], b'e' | b'E');
                    if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
                match text.parse::<f64>() {
                    Ok(v) => Ok(Node::Num(v)),
                    Err(_) => self.err(&format!("bad number `{text}`")),
                }
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let word = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
                if word == "t" {
                    return Ok(Node::T);
                }
                if let Some(idx) = word.strip_prefix('x') {
                    return match idx.parse::<usize>() {
                        Ok(i) if i >= 1 && i <= self.dim => Ok(Node::X(i - 1)),
                        _ => self.err(&format!("unknown variable `{word}` (expected x1..x{})", self.dim)),
                    };
                }
                let func = match word {
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "gauss" => Func::Gauss,
                    "step" => Func::Step,
                    _ => return self.err(&format!("unknown identifier `{word}`")),
                };
                if self.peek() != Some(b'(') {
                    return self.err("expected `(` after function name");
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(b')') {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(Node::Call(func, arg.into()))
            }
            Some(c) => self.err(&format!("unexpected character `{}`", c as char)),
        }
    }
}

fn eval(n: &Node, x: &[f64], t: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::X(i) => x[*i],
        Node::T => t,
        Node::Neg(a) => -eval(a, x, t),
        Node::Add(a, b) => eval(a, x, t) + eval(b, x, t),
        Node::Sub(a, b) => eval(a, x, t) - eval(b, x, t),
        Node::Mul(a, b) => eval(a, x, t) * eval(b, x, t),
        Node::Div(a, b) => eval(a, x, t) / eval(b, x, t),
        Node::Pow(a, b) => {
            let e = eval(b, x, t);
            let base = eval(a, x, t);
            if e.fract() == 0.0 && e.abs() < 64.0 {
                base.powi(e as i32)
            } else {
                base.powf(e)
            }
        }
        Node::Call(f, a) => {
            let u = eval(a, x, t);
            match f {
                Func::Sin => u.sin(),
                Func::Cos => u.cos(),
                Func::Exp => u.exp(),
                Func::Gauss => (-u * u).exp(),
                Func::Step => {
                    if u > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        }
    }
}

impl Expr {
    /// Parses `source` over `R^dim x R`.
    pub fn parse(source: &str, dim: usize) -> Result<Self> {
        let mut p = Parser { s: source.as_bytes(), pos: 0, dim };
        let root = p.expr()?;
        if p.peek().is_some() {
            return p.err("trailing input");
        }
        Ok(Self { source: source.to_string(), root, dim })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        eval(&self.root, x, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_functions() {
        let e = Expr::parse("1 + 2*x1^2 - x2/4 + sin(t)*gauss(x1) + step(t - 0.5)", 2).unwrap();
        let (x, t) = ([0.5, 2.0], 0.7);
        let expect = 1.0 + 2.0 * 0.25 - 0.5 + f64::sin(t) * (-0.25f64).exp() + 1.0;
        assert!((e.eval(&x, t) - expect).abs() < 1e-15);
        assert_eq!(Expr::parse("-2^2", 1).unwrap().eval(&[0.0], 0.0), -4.0);
        assert_eq!(Expr::parse("2^-1", 1).unwrap().eval(&[0.0], 0.0), 0.5);
        assert_eq!(Expr::parse("1e-2*3", 1).unwrap().eval(&[0.0], 0.0), 0.03);
    }

    #[test]
    fn rejects_outside_grammar() {
        for bad in ["x3", "log(x1)", "1 +", "(x1", "x1 x2", "x0"] {
            assert!(matches!(Expr::parse(bad, 2), Err(KfpError::Expression(_))), "{bad}");
        }
    }
}
