//! A small arithmetic expression language for scenario data.
//!
//! Grammar (standard precedence, `^` right-associative and tightest,
//! then unary minus, then `* /`, then `+ -`):
//!
//! ```text
//!   expr   := term (('+' | '-') term)*
//!   term   := unary (('*' | '/') unary)*
//!   unary  := '-' power | power          (only at operand start)
//!   power  := atom ('^' atom')?          (right-associative)
//!   atom   := number | var | func '(' expr (',' expr)? ')' | '(' expr ')'
//! ```
//!
//! Unary minus is admitted only where an operand starts (expression
//! start, after `(` or `,`); after a binary operator it is a syntax
//! error, so `2*-x` must be written `2*(-x)`. Variables are `x y z r t`;
//! functions are `sin cos exp log sqrt abs coth` and the two-argument
//! `min max`. Evaluation is total on the declared domain or returns a
//! typed error (log of a nonpositive value, even roots of negatives,
//! division by zero and any non-finite result).

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    Z,
    R,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Coth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Number(f64),
    Variable(Var),
    Unary(Box<Expression>),
    Binary(BinOp, Box<Expression>, Box<Expression>),
    Call(Func, Box<Expression>),
    Call2(bool, Box<Expression>, Box<Expression>), // true = max, false = min
}

/// Values bound to the variables at an evaluation point.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bindings {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
    pub t: f64,
}

impl Bindings {
    fn get(&self, v: Var) -> f64 {
        match v {
            Var::X => self.x,
            Var::Y => self.y,
            Var::Z => self.z,
            Var::R => self.r,
            Var::T => self.t,
        }
    }
}

impl Expression {
    pub fn parse(src: &str) -> Result<Expression> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expression()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Parse {
                pos: p.tokens[p.pos].1,
                msg: format!("unexpected {}", p.tokens[p.pos].0),
            });
        }
        Ok(e)
    }

    pub fn eval(&self, b: &Bindings) -> Result<f64> {
        let v = self.eval_inner(b)?;
        if !v.is_finite() {
            return Err(Error::Eval(format!("non-finite result {v} from {self}")));
        }
        Ok(v)
    }

    fn eval_inner(&self, b: &Bindings) -> Result<f64> {
        Ok(match self {
            Expression::Number(v) => *v,
            Expression::Variable(v) => b.get(*v),
            Expression::Unary(e) => -e.eval_inner(b)?,
            Expression::Binary(op, l, r) => {
                let (lv, rv) = (l.eval_inner(b)?, r.eval_inner(b)?);
                match op {
                    BinOp::Add => lv + rv,
                    BinOp::Sub => lv - rv,
                    BinOp::Mul => lv * rv,
                    BinOp::Div => {
                        if rv == 0.0 {
                            return Err(Error::Eval("division by zero".into()));
                        }
                        lv / rv
                    }
                    BinOp::Pow => {
                        let v = lv.powf(rv);
                        if v.is_nan() {
                            return Err(Error::Eval(format!("{lv}^{rv} undefined")));
                        }
                        v
                    }
                }
            }
            Expression::Call(f, a) => {
                let av = a.eval_inner(b)?;
                match f {
                    Func::Sin => av.sin(),
                    Func::Cos => av.cos(),
                    Func::Exp => av.exp(),
                    Func::Log => {
                        if av <= 0.0 {
                            return Err(Error::Eval(format!("log of {av}")));
                        }
                        av.ln()
                    }
                    Func::Sqrt => {
                        if av < 0.0 {
                            return Err(Error::Eval(format!("sqrt of {av}")));
                        }
                        av.sqrt()
                    }
                    Func::Abs => av.abs(),
                    Func::Coth => {
                        if av == 0.0 {
                            return Err(Error::Eval("coth of 0".into()));
                        }
                        1.0 / av.tanh()
                    }
                }
            }
            Expression::Call2(is_max, l, r) => {
                let (lv, rv) = (l.eval_inner(b)?, r.eval_inner(b)?);
                if *is_max {
                    lv.max(rv)
                } else {
                    lv.min(rv)
                }
            }
        })
    }

    /// Variables appearing in the tree.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            Expression::Number(_) => {}
            Expression::Variable(v) => {
                if !out.contains(v) {
                    out.push(*v);
                }
            }
            Expression::Unary(e) => e.collect_vars(out),
            Expression::Binary(_, l, r) | Expression::Call2(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expression::Call(_, a) => a.collect_vars(out),
        }
    }
}

/// Fully parenthesized printing; `parse(print(e)) == e`, so printing is a
/// fixed point of the round trip.
impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expression::Number(v) => {
                // Negative literals are unreachable from the parser (the
                // grammar has no signed numbers); print them in unary form
                // so the output always re-parses.
                if *v < 0.0 {
                    return write!(f, "(-{})", Expression::Number(-v));
                }
                if *v == v.trunc() && v.abs() < 1e15 {
                    write!(f, "{v:.1}")
                } else {
                    write!(f, "{v}")
                }
            }
            Expression::Variable(v) => write!(
                f,
                "{}",
                match v {
                    Var::X => "x",
                    Var::Y => "y",
                    Var::Z => "z",
                    Var::R => "r",
                    Var::T => "t",
                }
            ),
            Expression::Unary(e) => write!(f, "(-{e})"),
            Expression::Binary(op, l, r) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({l} {sym} {r})")
            }
            Expression::Call(func, a) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                    Func::Log => "log",
                    Func::Sqrt => "sqrt",
                    Func::Abs => "abs",
                    Func::Coth => "coth",
                };
                write!(f, "{name}({a})")
            }
            Expression::Call2(is_max, l, r) => {
                write!(f, "{}({l}, {r})", if *is_max { "max" } else { "min" })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Number(v) => write!(f, "number {v}"),
            Token::Ident(s) => write!(f, "identifier '{s}'"),
            Token::Plus => write!(f, "'+'"),
            Token::Minus => write!(f, "'-'"),
            Token::Star => write!(f, "'*'"),
            Token::Slash => write!(f, "'/'"),
            Token::Caret => write!(f, "'^'"),
            Token::LParen => write!(f, "'('"),
            Token::RParen => write!(f, "')'"),
            Token::Comma => write!(f, "','"),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(Token, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                out.push((Token::Plus, i));
                i += 1;
            }
            '-' => {
                out.push((Token::Minus, i));
                i += 1;
            }
            '*' => {
                out.push((Token::Star, i));
                i += 1;
            }
            '/' => {
                out.push((Token::Slash, i));
                i += 1;
            }
            '^' => {
                out.push((Token::Caret, i));
                i += 1;
            }
            '(' => {
                out.push((Token::LParen, i));
                i += 1;
            }
            ')' => {
                out.push((Token::RParen, i));
                i += 1;
            }
            ',' => {
                out.push((Token::Comma, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.') {
                    i += 1;
                }
                // Exponent part, with optional sign belonging to the literal.
                if i < bytes.len() && matches!(bytes[i] as char, 'e' | 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j] as char, '+' | '-') {
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
                let v: f64 = text.parse().map_err(|_| Error::Parse {
                    pos: start,
                    msg: format!("bad number literal '{text}'"),
                })?;
                out.push((Token::Number(v), start));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, 'a'..='z' | 'A'..='Z' | '0'..='9' | '_')
                {
                    i += 1;
                }
                out.push((Token::Ident(src[start..i].to_string()), start));
            }
            other => {
                return Err(Error::Parse { pos: i, msg: format!("unexpected character '{other}'") })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.tokens
            .get(self.pos)
            .or_else(|| self.tokens.last())
            .map(|(_, p)| *p)
            .unwrap_or(0)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Token) -> Result<()> {
        match self.bump() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(Error::Parse { pos: self.here(), msg: format!("expected {want}, found {t}") }),
            None => Err(Error::Parse { pos: self.here(), msg: format!("expected {want}, found end of input") }),
        }
    }

    fn expression(&mut self) -> Result<Expression> {
        let mut lhs = self.term(true)?;
        while let Some(tok) = self.peek() {
            let op = match tok {
                Token::Plus => BinOp::Add,
                Token::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term(false)?;
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self, unary_ok: bool) -> Result<Expression> {
        let mut lhs = self.unary(unary_ok)?;
        while let Some(tok) = self.peek() {
            let op = match tok {
                Token::Star => BinOp::Mul,
                Token::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary(false)?;
            lhs = Expression::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self, unary_ok: bool) -> Result<Expression> {
        if let Some(Token::Minus) = self.peek() {
            if !unary_ok {
                return Err(Error::Parse {
                    pos: self.here(),
                    msg: "unexpected '-' (unary minus needs parentheses after an operator)".into(),
                });
            }
            self.bump();
            // Unary minus binds looser than '^': -x^2 is -(x^2).
            let operand = self.power()?;
            return Ok(Expression::Unary(Box::new(operand)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expression> {
        let base = self.atom()?;
        if let Some(Token::Caret) = self.peek() {
            self.bump();
            // Right-associative; the exponent may not start with '-'.
            let exp = self.power_operand()?;
            return Ok(Expression::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn power_operand(&mut self) -> Result<Expression> {
        if let Some(Token::Minus) = self.peek() {
            return Err(Error::Parse {
                pos: self.here(),
                msg: "unexpected '-' (unary minus needs parentheses after an operator)".into(),
            });
        }
        self.power()
    }

    fn atom(&mut self) -> Result<Expression> {
        let pos = self.here();
        match self.bump() {
            Some(Token::Number(v)) => Ok(Expression::Number(v)),
            Some(Token::LParen) => {
                let e = self.expression()?;
                self.expect(Token::RParen)?;
                Ok(e)
            }
            Some(Token::Ident(name)) => self.ident(name, pos),
            Some(t) => Err(Error::Parse { pos, msg: format!("unexpected {t}") }),
            None => Err(Error::Parse { pos, msg: "unexpected end of input".into() }),
        }
    }

    fn ident(&mut self, name: String, pos: usize) -> Result<Expression> {
        match name.as_str() {
            "x" => return Ok(Expression::Variable(Var::X)),
            "y" => return Ok(Expression::Variable(Var::Y)),
            "z" => return Ok(Expression::Variable(Var::Z)),
            "r" => return Ok(Expression::Variable(Var::R)),
            "t" => return Ok(Expression::Variable(Var::T)),
            "pi" => return Ok(Expression::Number(std::f64::consts::PI)),
            _ => {}
        }
        let func = match name.as_str() {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            "coth" => Some(Func::Coth),
            _ => None,
        };
        if let Some(f) = func {
            self.expect(Token::LParen)?;
            let a = self.expression()?;
            self.expect(Token::RParen)?;
            return Ok(Expression::Call(f, Box::new(a)));
        }
        if name == "min" || name == "max" {
            self.expect(Token::LParen)?;
            let a = self.expression()?;
            self.expect(Token::Comma)?;
            let b = self.expression()?;
            self.expect(Token::RParen)?;
            return Ok(Expression::Call2(name == "max", Box::new(a), Box::new(b)));
        }
        Err(Error::Parse { pos, msg: format!("unknown identifier '{name}'") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval_at(src: &str, x: f64, t: f64) -> Result<f64> {
        Expression::parse(src)?.eval(&Bindings { x, r: x, t, ..Default::default() })
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(eval_at("1 - x^2", 0.5, 0.0).unwrap(), 0.75);
        assert_eq!(eval_at("2*x + 1", 2.0, 0.0).unwrap(), 5.0);
        assert_eq!(eval_at("2^3^2", 0.0, 0.0).unwrap(), 512.0); // right assoc
        assert_eq!(eval_at("-x^2", 3.0, 0.0).unwrap(), -9.0); // -(x^2)
        assert_eq!(eval_at("6/3/2", 0.0, 0.0).unwrap(), 1.0); // left assoc
        assert_eq!(eval_at("(-x)^2", 3.0, 0.0).unwrap(), 9.0);
        assert!((eval_at("exp(-t)*sin(3.14159*x)", 0.5, 0.0).unwrap() - 1.0).abs() < 1e-5);
        assert!((eval_at("coth(1)", 0.0, 0.0).unwrap() - 1.0 / 1.0f64.tanh()).abs() < 1e-15);
        assert_eq!(eval_at("min(2, t)", 0.0, 5.0).unwrap(), 2.0);
        assert_eq!(eval_at("max(2, t)", 0.0, 5.0).unwrap(), 5.0);
        assert_eq!(eval_at("1.5e-2", 0.0, 0.0).unwrap(), 0.015);
    }

    #[test]
    fn unary_minus_rules() {
        assert!(Expression::parse("2*-x").is_err());
        assert!(Expression::parse("2^-3").is_err());
        assert!(Expression::parse("1 - -x").is_err());
        assert!(Expression::parse("-x").is_ok());
        assert!(Expression::parse("2*(-x)").is_ok());
        assert!(Expression::parse("min(-1, -2)").is_ok());
        let e = Expression::parse("2*-x");
        match e {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("unexpected '-'"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn error_positions_and_unknown_identifiers() {
        match Expression::parse("1 + foo(2)") {
            Err(Error::Parse { pos, msg }) => {
                assert_eq!(pos, 4);
                assert!(msg.contains("unknown identifier"));
            }
            other => panic!("{other:?}"),
        }
        assert!(Expression::parse("").is_err());
        assert!(Expression::parse("(1 + 2").is_err());
        assert!(Expression::parse("1 + + 2").is_err());
    }

    #[test]
    fn typed_evaluation_errors() {
        assert!(eval_at("log(x)", -1.0, 0.0).is_err());
        assert!(eval_at("sqrt(x)", -1.0, 0.0).is_err());
        assert!(eval_at("1/x", 0.0, 0.0).is_err());
        assert!(eval_at("coth(x)", 0.0, 0.0).is_err());
        assert!(eval_at("(-2)^0.5", 0.0, 0.0).is_err());
        assert!(eval_at("exp(x)", 1e9, 0.0).is_err()); // overflow -> non-finite
    }

    #[test]
    fn display_round_trip_examples() {
        for src in [
            "1 - x^2",
            "exp(-t)*sin(3.14159*x)",
            "min(x, max(t, 1))",
            "-x^2 + coth(r)/2",
            "(x + t)^(2.5)",
        ] {
            let e = Expression::parse(src).unwrap();
            let printed = e.to_string();
            let reparsed = Expression::parse(&printed).unwrap();
            assert_eq!(e, reparsed, "{src} -> {printed}");
            assert_eq!(printed, reparsed.to_string());
        }
    }

    // Parser-reachable trees only: number literals are unsigned (the
    // grammar builds negatives through Unary).
    fn arb_expr() -> impl Strategy<Value = Expression> {
        let leaf = prop_oneof![
            (0.0..100.0f64).prop_map(Expression::Number),
            prop_oneof![
                Just(Var::X),
                Just(Var::Y),
                Just(Var::Z),
                Just(Var::R),
                Just(Var::T)
            ]
            .prop_map(Expression::Variable),
        ];
        leaf.prop_recursive(4, 32, 4, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expression::Binary(
                    BinOp::Add,
                    Box::new(a),
                    Box::new(b)
                )),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expression::Binary(
                    BinOp::Mul,
                    Box::new(a),
                    Box::new(b)
                )),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expression::Binary(
                    BinOp::Div,
                    Box::new(a),
                    Box::new(b)
                )),
                inner.clone().prop_map(|a| Expression::Unary(Box::new(a))),
                inner.clone().prop_map(|a| Expression::Call(Func::Sin, Box::new(a))),
                (inner.clone(), inner).prop_map(|(a, b)| Expression::Call2(
                    true,
                    Box::new(a),
                    Box::new(b)
                )),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_fixed_point(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = Expression::parse(&printed).unwrap();
            prop_assert_eq!(&e, &reparsed);
            prop_assert_eq!(printed, reparsed.to_string());
        }
    }
}
