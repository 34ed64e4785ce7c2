//! Expression language for scenario files.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := ('-' | '+') unary | power
//! power := atom ('^' unary)?          exponent must be a real constant
//! atom  := number | 't' | 'x' | 'xi' | 'i' | 'pi'
//!        | ('sin' | 'cos' | 'exp') '(' expr ')'
//!        | 'bracket' '(' 'xi' ')'
//!        | '(' expr ')'
//! ```
//!
//! `sin`, `cos` and `exp` may not take arguments that depend on `xi`, so every
//! parsed expression is a finite sum of products of smooth `(t, x)` coefficients
//! and real powers of `xi` and `<xi>`. The symbol order is inferred from that
//! structure and the exact variable dependence is recorded.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::symbol::{bracket, Deps, ScalarSymbol, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(C64),
    T,
    X,
    Xi,
    Bracket,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, f64),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, t: f64, x: f64, xi: f64) -> C64 {
        match self {
            Node::Num(c) => *c,
            Node::T => C64::new(t, 0.0),
            Node::X => C64::new(x, 0.0),
            Node::Xi => C64::new(xi, 0.0),
            Node::Bracket => C64::new(bracket(xi), 0.0),
            Node::Neg(a) => -a.eval(t, x, xi),
            Node::Add(a, b) => a.eval(t, x, xi) + b.eval(t, x, xi),
            Node::Sub(a, b) => a.eval(t, x, xi) - b.eval(t, x, xi),
            Node::Mul(a, b) => a.eval(t, x, xi) * b.eval(t, x, xi),
            Node::Div(a, b) => a.eval(t, x, xi) / b.eval(t, x, xi),
            Node::Pow(a, p) => {
                let v = a.eval(t, x, xi);
                if v.im == 0.0 && v.re >= 0.0 {
                    C64::new(v.re.powf(*p), 0.0)
                } else if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
                    v.powi(*p as i32)
                } else {
                    v.powf(*p)
                }
            }
            Node::Call(f, a) => {
                let v = a.eval(t, x, xi);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                }
            }
        }
    }

    fn deps(&self) -> Deps {
        match self {
            Node::Num(_) => Deps::NONE,
            Node::T => Deps {
                t: true,
                ..Deps::NONE
            },
            Node::X => Deps {
                x: true,
                ..Deps::NONE
            },
            Node::Xi | Node::Bracket => Deps {
                xi: true,
                ..Deps::NONE
            },
            Node::Neg(a) | Node::Pow(a, _) | Node::Call(_, a) => a.deps(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => a.deps().union(b.deps()),
        }
    }

    /// Growth order in `xi`; `-inf` for the zero constant.
    fn order(&self) -> f64 {
        match self {
            Node::Num(c) if *c == C64::new(0.0, 0.0) => f64::NEG_INFINITY,
            Node::Num(_) | Node::T | Node::X | Node::Call(..) => 0.0,
            Node::Xi | Node::Bracket => 1.0,
            Node::Neg(a) => a.order(),
            Node::Add(a, b) | Node::Sub(a, b) => a.order().max(b.order()),
            Node::Mul(a, b) => a.order() + b.order(),
            Node::Div(a, b) => a.order() - b.order(),
            Node::Pow(a, p) => {
                let o = a.order();
                if o == f64::NEG_INFINITY {
                    o
                } else {
                    o * p
                }
            }
        }
    }

    fn fold(self) -> Node {
        if self.deps() == Deps::NONE {
            Node::Num(self.eval(0.0, 0.0, 0.0))
        } else {
            self
        }
    }
}

/// A parsed scenario expression.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Arc<Node>,
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Expr {
            source: src.to_string(),
            root: Arc::new(root),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, t: f64, x: f64, xi: f64) -> C64 {
        self.root.eval(t, x, xi)
    }

    pub fn deps(&self) -> Deps {
        self.root.deps()
    }

    /// Inferred symbol order (`-inf` for an identically zero expression).
    pub fn order(&self) -> f64 {
        self.root.order()
    }

    pub fn as_constant(&self) -> Option<C64> {
        match *self.root {
            Node::Num(c) => Some(c),
            _ => None,
        }
    }

    pub fn to_symbol(&self) -> ScalarSymbol {
        if let Some(c) = self.as_constant() {
            return ScalarSymbol::constant(c);
        }
        let order = self.order();
        if order == f64::NEG_INFINITY {
            return ScalarSymbol::zero();
        }
        let root = Arc::clone(&self.root);
        ScalarSymbol::with_deps(order, self.deps(), move |t, x, xi| root.eval(t, x, xi))
    }

    /// Rejects expressions that use any variable outside `allowed`.
    pub fn require_deps(&self, allowed: Deps, what: &str) -> Result<()> {
        let d = self.deps();
        let bad = [(d.t && !allowed.t, "t"), (d.x && !allowed.x, "x"), (d.xi && !allowed.xi, "xi")];
        match bad.iter().find(|(b, _)| *b) {
            Some((_, v)) => Err(Error::Parse {
                pos: 0,
                msg: format!("{what} may not depend on {v}: {}", self.source),
            }),
            None => Ok(()),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            pos: self.pos,
            msg: msg.into(),
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

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?)).fold();
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?)).fold();
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?)).fold();
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?)).fold();
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            Ok(Node::Neg(Box::new(self.unary()?)).fold())
        } else if self.eat(b'+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let at = self.pos;
        let exp = self.unary()?;
        match exp {
            Node::Num(c) if c.im == 0.0 && c.re.is_finite() => Ok(Node::Pow(Box::new(base), c.re).fold()),
            _ => Err(Error::Parse {
                pos: at,
                msg: "exponent must be a real constant".into(),
            }),
        }
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.error(format!("unexpected '{}'", c as char))),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
        };
        digits(&mut self.pos);
        if self.pos < s.len() && s[self.pos] == b'.' {
            self.pos += 1;
            digits(&mut self.pos);
        }
        if self.pos < s.len() && (s[self.pos] == b'e' || s[self.pos] == b'E') {
            let mut q = self.pos + 1;
            if q < s.len() && (s[q] == b'+' || s[q] == b'-') {
                q += 1;
            }
            if q < s.len() && s[q].is_ascii_digit() {
                self.pos = q;
                digits(&mut self.pos);
            }
        }
        let text = std::str::from_utf8(&s[start..self.pos]).expect("ascii");
        text.parse::<f64>()
            .map(|v| Node::Num(C64::new(v, 0.0)))
            .map_err(|_| Error::Parse {
                pos: start,
                msg: format!("malformed number '{text}'"),
            })
    }

    fn ident(&mut self) -> Result<Node> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let func = match name {
            "t" => return Ok(Node::T),
            "x" => return Ok(Node::X),
            "xi" => return Ok(Node::Xi),
            "i" => return Ok(Node::Num(C64::new(0.0, 1.0))),
            "pi" => return Ok(Node::Num(C64::new(PI, 0.0))),
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "bracket" => {
                self.expect(b'(')?;
                let at = self.pos;
                let arg = self.expr()?;
                if arg != Node::Xi {
                    return Err(Error::Parse {
                        pos: at,
                        msg: "bracket takes exactly the argument xi".into(),
                    });
                }
                self.expect(b')')?;
                return Ok(Node::Bracket);
            }
            _ => {
                return Err(Error::Parse {
                    pos: start,
                    msg: format!("unknown identifier '{name}'"),
                })
            }
        };
        self.expect(b'(')?;
        let at = self.pos;
        let arg = self.expr()?;
        self.expect(b')')?;
        if arg.deps().xi {
            return Err(Error::Parse {
                pos: at,
                msg: format!("{name} may not take an argument depending on xi"),
            });
        }
        Ok(Node::Call(func, Box::new(arg)).fold())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: C64, b: C64) -> bool {
        (a - b).norm() <= 1e-14 * (1.0 + b.norm())
    }

    #[test]
    fn evaluates_basic_expressions() {
        let e = Expr::parse("2*xi + sin(x)*bracket(xi)^(-1)").unwrap();
        let (x, xi) = (0.3f64, 4.0f64);
        let want = 2.0 * xi + x.sin() / (1.0 + xi * xi).sqrt();
        assert!(close(e.eval(0.0, x, xi), C64::new(want, 0.0)));
        assert_eq!(e.order(), 1.0);
        assert_eq!(
            e.deps(),
            Deps {
                t: false,
                x: true,
                xi: true
            }
        );
    }

    #[test]
    fn precedence_and_associativity() {
        let v = |s: &str| Expr::parse(s).unwrap().eval(0.0, 0.0, 0.0).re;
        assert_eq!(v("1 - 2 - 3"), -4.0);
        assert_eq!(v("8 / 4 / 2"), 1.0);
        assert_eq!(v("2 ^ 3 ^ 2"), 512.0);
        assert_eq!(v("-2 ^ 2"), -4.0);
        assert_eq!(v("2 * -3"), -6.0);
        assert_eq!(v("1.5e1 + .5"), 15.5);
        assert!((v("cos(pi)") + 1.0).abs() < 1e-15);
    }

    #[test]
    fn complex_constants() {
        let e = Expr::parse("-0.3*i").unwrap();
        assert_eq!(e.as_constant(), Some(C64::new(0.0, -0.3)));
        assert_eq!(e.order(), 0.0);
        let e = Expr::parse("exp(i*x)").unwrap();
        assert!(close(e.eval(0.0, 1.0, 0.0), C64::new(1f64.cos(), 1f64.sin())));
    }

    #[test]
    fn order_inference() {
        let o = |s: &str| Expr::parse(s).unwrap().order();
        assert_eq!(o("bracket(xi)^(-2)*cos(x)"), -2.0);
        assert_eq!(o("xi / bracket(xi)"), 0.0);
        assert_eq!(o("0.5*xi*(1 + 0.5*cos(t))"), 1.0);
        assert_eq!(o("xi*xi + 1"), 2.0);
        assert_eq!(o("0"), f64::NEG_INFINITY);
        assert_eq!(o("0*xi"), f64::NEG_INFINITY);
        assert_eq!(o("(bracket(xi))^0.5"), 0.5);
    }

    #[test]
    fn deps_are_exact() {
        let d = |s: &str| Expr::parse(s).unwrap().deps();
        assert_eq!(d("xi"), Deps { xi: true, ..Deps::NONE });
        assert_eq!(d("t*0 + 1"), Deps { t: true, ..Deps::NONE });
        assert_eq!(d("sin(pi)"), Deps::NONE);
        assert_eq!(d("cos(x + t)"), Deps { t: true, x: true, xi: false });
    }

    #[test]
    fn rejects_malformed_input() {
        for bad in [
            "", "1 +", "(xi", "sin xi", "foo(x)", "xi^t", "xi^xi", "bracket(x)", "sin(xi)", "exp(2*xi)", "2 3", "x $ 2",
        ] {
            assert!(matches!(Expr::parse(bad), Err(Error::Parse { .. })), "{bad}");
        }
        match Expr::parse("1 + foo") {
            Err(Error::Parse { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn to_symbol_carries_order_and_deps() {
        let s = Expr::parse("0.3*cos(x)*bracket(xi)^(-2)").unwrap().to_symbol();
        assert_eq!(s.order(), -2.0);
        assert!(!s.deps().t && s.deps().x);
        assert!(Expr::parse("0").unwrap().to_symbol().is_zero());
        assert!(Expr::parse("xi*0").unwrap().to_symbol().is_zero());
        let e = Expr::parse("x + t").unwrap();
        assert!(e.require_deps(Deps { x: true, ..Deps::NONE }, "u0").is_err());
        assert!(e.require_deps(Deps::ALL, "f").is_ok());
    }
}
