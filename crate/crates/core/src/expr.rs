//! Field expressions for configuration files.
//!
//! Grammar version 1:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('+' | '-') unary | power
//! power   := atom ('^' unary)?
//! atom    := NUMBER | 'pi' | 'e' | 't' | 'x' INDEX | FUNC '(' expr ')' | '(' expr ')'
//! FUNC    := 'cos' | 'sin' | 'exp' | 'tanh'
//! ```
//!
//! Coordinates are one-based (`x1 … xn`). `^` is right-associative and binds
//! tighter than unary minus, so `-x1^2` is `-(x1^2)`.

use std::fmt;

use thiserror::Error;

pub const GRAMMAR_VERSION: u32 = 1;

const MAX_DEPTH: usize = 64;
const MAX_LEN: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("expression error at byte {position}: {message}")]
pub struct ExprError {
    pub position: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Cos,
    Sin,
    Exp,
    Tanh,
}

impl Func {
    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Cos => v.cos(),
            Func::Sin => v.sin(),
            Func::Exp => v.exp(),
            Func::Tanh => v.tanh(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Cos => "cos",
            Func::Sin => "sin",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based coordinate axis.
    Coord(usize),
    Time,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        if src.len() > MAX_LEN {
            return Err(ExprError {
                position: MAX_LEN,
                message: format!("expression longer than {MAX_LEN} bytes"),
            });
        }
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
            depth: 0,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Coord(i) => x.get(*i).copied().unwrap_or(f64::NAN),
            Expr::Time => t,
            Expr::Neg(a) => -a.eval(x, t),
            Expr::Add(a, b) => a.eval(x, t) + b.eval(x, t),
            Expr::Sub(a, b) => a.eval(x, t) - b.eval(x, t),
            Expr::Mul(a, b) => a.eval(x, t) * b.eval(x, t),
            Expr::Div(a, b) => a.eval(x, t) / b.eval(x, t),
            Expr::Pow(a, b) => a.eval(x, t).powf(b.eval(x, t)),
            Expr::Call(f, a) => f.apply(a.eval(x, t)),
        }
    }

    /// Number of coordinate axes the expression needs (largest `xi` used).
    pub fn required_dim(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Time => 0,
            Expr::Coord(i) => i + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.required_dim(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.required_dim().max(b.required_dim())
            }
        }
    }

    pub fn uses_time(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Coord(_) => false,
            Expr::Time => true,
            Expr::Neg(a) | Expr::Call(_, a) => a.uses_time(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.uses_time() || b.uses_time()
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Coord(i) => write!(f, "x{}", i + 1),
            Expr::Time => write!(f, "t"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, b) => write!(f, "({a} ^ {b})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ExprError {
        ExprError {
            position: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error("expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        self.enter()?;
        let mut lhs = self.term()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == b'+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == b'*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        self.enter()?;
        let out = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Expr::Neg(Box::new(self.unary()?))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()?
            }
            _ => self.power()?,
        };
        self.depth -= 1;
        Ok(out)
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of expression")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(c) => Err(self.error(format!("unexpected character {:?}", c as char))),
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {:?}", c as char)))
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        text.parse::<f64>().map(Expr::Const).map_err(|_| ExprError {
            position: start,
            message: format!("malformed number {text:?}"),
        })
    }

    fn identifier(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        let func = match name {
            "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
            "e" => return Ok(Expr::Const(std::f64::consts::E)),
            "t" => return Ok(Expr::Time),
            "cos" => Func::Cos,
            "sin" => Func::Sin,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            _ => {
                if let Some(idx) = name.strip_prefix('x') {
                    return match idx.parse::<usize>() {
                        Ok(i) if i >= 1 && !idx.starts_with('0') => Ok(Expr::Coord(i - 1)),
                        _ => Err(ExprError {
                            position: start,
                            message: format!("bad coordinate {name:?}; coordinates are x1, x2, …"),
                        }),
                    };
                }
                return Err(ExprError {
                    position: start,
                    message: format!("unknown identifier {name:?}"),
                });
            }
        };
        self.expect(b'(')?;
        let arg = self.expr()?;
        self.expect(b')')?;
        Ok(Expr::Call(func, Box::new(arg)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ev(s: &str, x: &[f64], t: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x, t)
    }

    #[test]
    fn precedence_and_functions() {
        assert_eq!(ev("1 + 2 * 3", &[], 0.0), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[], 0.0), 512.0);
        assert_eq!(ev("-x1^2", &[3.0], 0.0), -9.0);
        assert_eq!(ev("(1 + 2) * 3", &[], 0.0), 9.0);
        assert_eq!(ev("2*-3", &[], 0.0), -6.0);
        assert!((ev("cos(pi*x1)*cos(pi*x2)", &[0.0, 1.0], 0.0) + 1.0).abs() < 1e-15);
        assert!((ev("exp(-t) * tanh(x1)", &[0.5], 2.0) - (-2.0f64).exp() * 0.5f64.tanh()).abs() < 1e-15);
        assert!((ev("sin(pi/2)", &[], 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(ev("1.5e-1 + 2E1", &[], 0.0), 20.15);
        assert!((ev("e", &[], 0.0) - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(ev("pi", &[], 0.0), PI);
    }

    #[test]
    fn reports_dimension_and_time_use() {
        let e = Expr::parse("x3 + cos(x1) * t").unwrap();
        assert_eq!(e.required_dim(), 3);
        assert!(e.uses_time());
        assert!(!Expr::parse("x1").unwrap().uses_time());
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in [
            "", "1 +", "cos 1", "x0", "x01", "foo(1)", "(1", "1)", "1 2", "x", "#", "cos()",
        ] {
            assert!(Expr::parse(bad).is_err(), "{bad:?} should fail");
        }
        let deep = "(".repeat(200) + "1" + &")".repeat(200);
        assert!(Expr::parse(&deep).is_err());
        let minus = "-".repeat(500) + "1";
        assert!(Expr::parse(&minus).is_err());
    }

    #[test]
    fn error_positions_point_at_the_problem() {
        let err = Expr::parse("1 + lamda").unwrap_err();
        assert_eq!(err.position, 4);
    }

    #[test]
    fn display_round_trips() {
        for s in ["-x1^2 + 3*t", "cos(pi*x1)/(1+x2)", "2^-1", "exp(tanh(sin(x1)))"] {
            let e = Expr::parse(s).unwrap();
            let again = Expr::parse(&e.to_string()).unwrap();
            for x in [[0.3, -0.2], [1.0, 0.5]] {
                assert_eq!(e.eval(&x, 0.7).to_bits(), again.eval(&x, 0.7).to_bits());
            }
        }
    }
}
