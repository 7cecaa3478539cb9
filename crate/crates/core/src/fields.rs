//! Closed-form space-time fields.
//!
//! An expression is a sum of terms `c * y1^i * y2^j * trig1 * trig2 * t^p * exp(r*t)`
//! where `sin(a,b)` stands for sin(a*pi*y1)*sin(b*pi*y2) and `sin1(a)`, `cos1(a)`,
//! `sin2(b)`, `cos2(b)` are the single-axis factors. Every term is separable, so
//! values and all derivatives needed by the solver are exact.
//!
//! Grammar (whitespace ignored):
//! ```text
//! expr   := ['-'] term (('+'|'-') term)*
//! term   := factor ('*' factor)*
//! factor := number | 'pi' | 'sin(' snum ',' snum ')' | ('sin'|'cos')('1'|'2') '(' snum ')'
//!         | 'y1' ['^' int] | 'y2' ['^' int] | 't' ['^' int] | 'exp(' [snum '*'] ['-'] 't' ')'
//! snum   := ['-'] number
//! ```

use crate::error::{Error, Result};
use nalgebra::Matrix2;
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coef: f64,
    /// per axis: (is_cos, frequency in units of pi)
    pub trig: [Option<(bool, f64)>; 2],
    pub pow_y: (u32, u32),
    pub pow_t: u32,
    pub rate: f64,
}

impl Term {
    fn constant(c: f64) -> Self {
        Term {
            coef: c,
            trig: [None, None],
            pow_y: (0, 0),
            pow_t: 0,
            rate: 0.0,
        }
    }
}

/// Value, first and second derivative of y^i * trig(a*pi*y) (trig factor optional).
fn factor1d(y: f64, pow: u32, trig: Option<(bool, f64)>) -> [f64; 3] {
    let (s, s1, s2) = match trig {
        Some((false, a)) => {
            let w = a * PI;
            let (sn, cs) = (w * y).sin_cos();
            (sn, w * cs, -w * w * sn)
        }
        Some((true, a)) => {
            let w = a * PI;
            let (sn, cs) = (w * y).sin_cos();
            (cs, -w * sn, -w * w * cs)
        }
        None => (1.0, 0.0, 0.0),
    };
    let i = pow as i32;
    let p = |k: i32| if k < 0 { 0.0 } else { y.powi(k) };
    let fi = pow as f64;
    let m0 = p(i);
    let m1 = fi * p(i - 1);
    let m2 = fi * (fi - 1.0) * p(i - 2);
    [m0 * s, m1 * s + m0 * s1, m2 * s + 2.0 * m1 * s1 + m0 * s2]
}

/// Scalar field on the space-time cylinder with closed-form derivatives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Expr {
    pub terms: Vec<Term>,
}

/// Value, gradient, Hessian and time derivative at one point.
#[derive(Debug, Clone, Copy, Default)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; 2],
    pub h: [[f64; 2]; 2],
    pub dt: f64,
}

impl Expr {
    pub fn zero() -> Self {
        Expr { terms: vec![] }
    }

    pub fn constant(c: f64) -> Self {
        Expr {
            terms: vec![Term::constant(c)],
        }
    }

    /// c * sin(a*pi*y1) sin(b*pi*y2)
    pub fn sine(c: f64, a: f64, b: f64) -> Self {
        Expr {
            terms: vec![Term {
                trig: [Some((false, a)), Some((false, b))],
                ..Term::constant(c)
            }],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coef == 0.0)
    }

    pub fn add(mut self, other: &Expr) -> Self {
        self.terms.extend(other.terms.iter().cloned());
        self
    }

    pub fn scale(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.coef *= s;
        }
        self
    }

    pub fn jet(&self, y: [f64; 2], t: f64) -> Jet {
        let mut out = Jet::default();
        for term in &self.terms {
            if term.coef == 0.0 {
                continue;
            }
            let f = factor1d(y[0], term.pow_y.0, term.trig[0]);
            let g = factor1d(y[1], term.pow_y.1, term.trig[1]);
            let pt = term.pow_t as i32;
            let e = (term.rate * t).exp();
            let tp = if pt == 0 { 1.0 } else { t.powi(pt) };
            let tp1 = if pt == 0 { 0.0 } else { term.pow_t as f64 * t.powi(pt - 1) };
            let time = tp * e;
            let dtime = tp1 * e + term.rate * time;
            let c = term.coef;
            out.v += c * f[0] * g[0] * time;
            out.g[0] += c * f[1] * g[0] * time;
            out.g[1] += c * f[0] * g[1] * time;
            out.h[0][0] += c * f[2] * g[0] * time;
            out.h[0][1] += c * f[1] * g[1] * time;
            out.h[1][1] += c * f[0] * g[2] * time;
            out.dt += c * f[0] * g[0] * dtime;
        }
        out.h[1][0] = out.h[0][1];
        out
    }

    pub fn value(&self, y: [f64; 2], t: f64) -> f64 {
        self.jet(y, t).v
    }

    pub fn parse(src: &str) -> Result<Self> {
        Parser::new(src).expr()
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

struct Parser {
    s: Vec<char>,
    i: usize,
}

impl Parser {
    fn new(src: &str) -> Self {
        Parser {
            s: src.chars().filter(|c| !c.is_whitespace()).collect(),
            i: 0,
        }
    }

    fn err<T>(&self, msg: &str) -> Result<T> {
        let src: String = self.s.iter().collect();
        Err(Error::Expr(format!("{msg} at offset {} in `{src}`", self.i)))
    }

    fn peek(&self) -> Option<char> {
        self.s.get(self.i).copied()
    }

    fn eat(&mut self, tok: &str) -> bool {
        let t: Vec<char> = tok.chars().collect();
        if self.s[self.i..].starts_with(&t) {
            self.i += t.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            self.err(&format!("expected `{tok}`"))
        }
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.i;
        while let Some(c) = self.peek() {
            let exp_sign = (c == '+' || c == '-') && self.i > start && matches!(self.s[self.i - 1], 'e' | 'E');
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                self.i += 1;
            } else {
                break;
            }
        }
        let txt: String = self.s[start..self.i].iter().collect();
        txt.parse::<f64>().or_else(|_| {
            self.i = start;
            self.err("expected a number")
        })
    }

    fn signed_number(&mut self) -> Result<f64> {
        if self.eat("-") {
            Ok(-self.number()?)
        } else {
            self.number()
        }
    }

    fn power(&mut self) -> Result<u32> {
        if self.eat("^") {
            let p = self.number()?;
            if p < 0.0 || p.fract() != 0.0 || p > 64.0 {
                return self.err("exponent must be a small nonnegative integer");
            }
            Ok(p as u32)
        } else {
            Ok(1)
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut terms = Vec::new();
        let mut sign = 1.0;
        if self.eat("-") {
            sign = -1.0;
        } else {
            self.eat("+");
        }
        if self.peek().is_none() {
            return self.err("empty expression");
        }
        loop {
            let mut t = self.term()?;
            t.coef *= sign;
            terms.push(t);
            if self.eat("+") {
                sign = 1.0;
            } else if self.eat("-") {
                sign = -1.0;
            } else if self.peek().is_none() {
                break;
            } else {
                return self.err("unexpected character");
            }
        }
        Ok(Expr { terms })
    }

    fn term(&mut self) -> Result<Term> {
        let mut t = Term::constant(1.0);
        self.factor(&mut t)?;
        while self.eat("*") {
            self.factor(&mut t)?;
        }
        Ok(t)
    }

    fn single_trig(&mut self) -> Option<(usize, bool)> {
        for (tok, axis, is_cos) in [("sin1(", 0, false), ("sin2(", 1, false), ("cos1(", 0, true), ("cos2(", 1, true)] {
            if self.eat(tok) {
                return Some((axis, is_cos));
            }
        }
        None
    }

    fn set_trig(&self, t: &mut Term, axis: usize, f: (bool, f64)) -> Result<()> {
        if t.trig[axis].is_some() {
            return self.err("at most one trigonometric factor per axis in a term");
        }
        t.trig[axis] = Some(f);
        Ok(())
    }

    fn factor(&mut self, t: &mut Term) -> Result<()> {
        if self.eat("sin(") {
            let a = self.signed_number()?;
            self.expect(",")?;
            let b = self.signed_number()?;
            self.expect(")")?;
            self.set_trig(t, 0, (false, a))?;
            self.set_trig(t, 1, (false, b))?;
        } else if let Some((axis, is_cos)) = self.single_trig() {
            let a = self.signed_number()?;
            self.expect(")")?;
            self.set_trig(t, axis, (is_cos, a))?;
        } else if self.eat("exp(") {
            let r = if self.eat("t") {
                1.0
            } else if self.eat("-t") {
                -1.0
            } else {
                let r = self.signed_number()?;
                self.expect("*")?;
                self.expect("t")?;
                r
            };
            self.expect(")")?;
            t.rate += r;
        } else if self.eat("y1") {
            t.pow_y.0 += self.power()?;
        } else if self.eat("y2") {
            t.pow_y.1 += self.power()?;
        } else if self.eat("t") {
            t.pow_t += self.power()?;
        } else if self.eat("pi") {
            t.coef *= PI;
        } else {
            t.coef *= self.number()?;
        }
        Ok(())
    }
}

/// Velocity field on the cylinder: either physical components or a stream
/// function s with z = M * (d2 s, -d1 s), which lies exactly in the discrete space.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityExpr {
    Stream(Expr),
    Components([Expr; 2]),
}

impl Default for VelocityExpr {
    fn default() -> Self {
        VelocityExpr::Stream(Expr::zero())
    }
}

impl VelocityExpr {
    pub fn is_zero(&self) -> bool {
        match self {
            VelocityExpr::Stream(s) => s.is_zero(),
            VelocityExpr::Components([a, b]) => a.is_zero() && b.is_zero(),
        }
    }

    pub fn value(&self, y: [f64; 2], t: f64, m: &Matrix2<f64>) -> [f64; 2] {
        match self {
            VelocityExpr::Stream(s) => {
                let g = s.jet(y, t).g;
                let z = m * nalgebra::Vector2::new(g[1], -g[0]);
                [z[0], z[1]]
            }
            VelocityExpr::Components([a, b]) => [a.value(y, t), b.value(y, t)],
        }
    }
}

/// Linearization fields: the velocity h and the scalar theta.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoefficientFields {
    pub h: [Expr; 2],
    pub theta: Expr,
}

impl CoefficientFields {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.h[0].is_zero() && self.h[1].is_zero() && self.theta.is_zero()
    }
}
