//! Coefficient expression language.
//!
//! Model coefficients (drift, diffusion, switching rates, costs) are declared
//! as small arithmetic expressions over the variables `t`, `x1..xd`, `i`
//! (the 1-based regime label) and the measure moments `mu_m(p, c)` and
//! `nu_m(p, c)`, which integrate `u_c^p` against the current relaxed controls.
//!
//! Grammar (EBNF):
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = primary [ "^" unary ] ;          (* right associative *)
//! primary = number | ident | call | "(" expr ")" ;
//! call    = ident "(" [ expr { "," expr } ] ")" ;
//! ```
//!
//! Functions: `exp log sin cos abs sqrt` (one argument), `min max` (two),
//! `mu_m nu_m` (two non-negative integer literals).

use std::fmt;

use thiserror::Error;

use crate::measure::DiscreteMeasure;

const MAX_SOURCE_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown identifier `{name}` at line {line}, column {column}")]
    UnknownIdentifier {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("function `{name}` expects {expected} argument(s), found {found} (line {line}, column {column})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        line: usize,
        column: usize,
    },
    #[error("expression source exceeds {MAX_SOURCE_BYTES} bytes")]
    TooLarge,
    #[error("evaluation error in `{location}`: {message}")]
    Eval { location: String, message: String },
}

impl ExprError {
    pub fn is_parse(&self) -> bool {
        !matches!(self, ExprError::Eval { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    /// State coordinate, 0-based (`x1` is `X(0)`).
    X(usize),
    /// Regime label, evaluated 1-based.
    Regime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Abs,
    Sqrt,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

/// Which relaxed control a moment primitive integrates against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Mu,
    Nu,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
    Moment {
        control: Control,
        power: u32,
        coordinate: usize,
    },
}

/// Evaluation environment. `regime` is 0-based; expressions see `i = regime + 1`.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub regime: usize,
    pub mu: Option<&'a DiscreteMeasure>,
    pub nu: Option<&'a DiscreteMeasure>,
}

impl<'a> Env<'a> {
    pub fn new(t: f64, x: &'a [f64], regime: usize) -> Self {
        Env {
            t,
            x,
            regime,
            mu: None,
            nu: None,
        }
    }

    pub fn with_mu(mut self, mu: &'a DiscreteMeasure) -> Self {
        self.mu = Some(mu);
        self
    }

    pub fn with_nu(mut self, nu: &'a DiscreteMeasure) -> Self {
        self.nu = Some(nu);
        self
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ExprError> {
        if source.len() > MAX_SOURCE_BYTES {
            return Err(ExprError::TooLarge);
        }
        let tokens = lex(source)?;
        let mut parser = Parser { tokens, pos: 0 };
        let expr = parser.expr()?;
        let tok = parser.peek();
        if tok.kind != Tok::Eof {
            return Err(syntax(tok, "unexpected trailing input"));
        }
        Ok(expr)
    }

    pub fn constant(value: f64) -> Expr {
        Expr::Num(value)
    }

    pub fn eval(&self, env: &Env<'_>) -> Result<f64, ExprError> {
        let value = match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::T) => env.t,
            Expr::Var(Var::Regime) => (env.regime + 1) as f64,
            Expr::Var(Var::X(k)) => match env.x.get(*k) {
                Some(v) => *v,
                None => {
                    return Err(self.eval_error(format!(
                        "state has {} coordinate(s)",
                        env.x.len()
                    )))
                }
            },
            Expr::Neg(a) => -a.eval(env)?,
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(env)?, b.eval(env)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(self.eval_error("division by zero".into()));
                        }
                        a / b
                    }
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(env)?;
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => {
                        if a <= 0.0 {
                            return Err(self.eval_error(format!("log of non-positive value {a}")));
                        }
                        a.ln()
                    }
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Abs => a.abs(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(self.eval_error(format!("sqrt of negative value {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Min => a.min(args[1].eval(env)?),
                    Func::Max => a.max(args[1].eval(env)?),
                }
            }
            Expr::Moment {
                control,
                power,
                coordinate,
            } => {
                let measure = match control {
                    Control::Mu => env.mu,
                    Control::Nu => env.nu,
                };
                let Some(measure) = measure else {
                    return Err(self.eval_error("no measure bound in this context".into()));
                };
                if *coordinate >= measure.dim() {
                    return Err(self.eval_error(format!(
                        "coordinate out of range for action dimension {}",
                        measure.dim()
                    )));
                }
                measure.moment(*power, *coordinate)
            }
        };
        if !value.is_finite() {
            return Err(self.eval_error(format!("non-finite result {value}")));
        }
        Ok(value)
    }

    fn eval_error(&self, message: String) -> ExprError {
        ExprError::Eval {
            location: self.to_string(),
            message,
        }
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Neg(a) => a.visit(f),
            Expr::Bin(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
            _ => {}
        }
    }

    /// Number of state coordinates referenced (highest `xk` index).
    pub fn state_arity(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if let Expr::Var(Var::X(k)) = e {
                n = n.max(k + 1);
            }
        });
        n
    }

    pub fn uses_time(&self) -> bool {
        let mut used = false;
        self.visit(&mut |e| used |= matches!(e, Expr::Var(Var::T)));
        used
    }

    pub fn uses_regime(&self) -> bool {
        let mut used = false;
        self.visit(&mut |e| used |= matches!(e, Expr::Var(Var::Regime)));
        used
    }

    pub fn uses_control(&self, which: Control) -> bool {
        let mut used = false;
        self.visit(&mut |e| {
            if let Expr::Moment { control, .. } = e {
                used |= *control == which;
            }
        });
        used
    }

    /// Largest coordinate index used by any moment primitive, plus one.
    pub fn moment_arity(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if let Expr::Moment { coordinate, .. } = e {
                n = n.max(coordinate + 1);
            }
        });
        n
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

/// Canonical form: every compound node parenthesised, literals in shortest
/// round-trip notation.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(Var::T) => f.write_str("t"),
            Expr::Var(Var::Regime) => f.write_str("i"),
            Expr::Var(Var::X(k)) => write!(f, "x{}", k + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::Moment {
                control,
                power,
                coordinate,
            } => {
                let name = match control {
                    Control::Mu => "mu_m",
                    Control::Nu => "nu_m",
                };
                write!(f, "{name}({power}, {coordinate})")
            }
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
    Caret,
    LParen,
    RParen,
    Comma,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    text: String,
    line: usize,
    column: usize,
}

fn syntax(tok: &Token, message: &str) -> ExprError {
    let found = if tok.kind == Tok::Eof {
        "end of input".to_string()
    } else {
        format!("`{}`", tok.text)
    };
    ExprError::Syntax {
        line: tok.line,
        column: tok.column,
        message: format!("{message}, found {found}"),
    }
}

fn lex(source: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let (mut line, mut column) = (1usize, 1usize);
    let mut k = 0;
    while k < chars.len() {
        let c = chars[k];
        if c == '\n' {
            line += 1;
            column = 1;
            k += 1;
            continue;
        }
        if c.is_whitespace() {
            column += 1;
            k += 1;
            continue;
        }
        let start = k;
        let kind = if c.is_ascii_digit() || c == '.' {
            while k < chars.len() && (chars[k].is_ascii_digit() || chars[k] == '.') {
                k += 1;
            }
            if k < chars.len() && (chars[k] == 'e' || chars[k] == 'E') {
                let mut j = k + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    k = j;
                }
            }
            let text: String = chars[start..k].iter().collect();
            match text.parse::<f64>() {
                Ok(v) => Tok::Num(v),
                Err(_) => {
                    return Err(ExprError::Syntax {
                        line,
                        column,
                        message: format!("malformed number `{text}`"),
                    })
                }
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            while k < chars.len() && (chars[k].is_ascii_alphanumeric() || chars[k] == '_') {
                k += 1;
            }
            Tok::Ident(chars[start..k].iter().collect())
        } else {
            k += 1;
            match c {
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '/' => Tok::Slash,
                '^' => Tok::Caret,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => {
                    return Err(ExprError::Syntax {
                        line,
                        column,
                        message: format!("unexpected character `{c}`"),
                    })
                }
            }
        };
        let text: String = chars[start..k].iter().collect();
        tokens.push(Token {
            kind,
            text,
            line,
            column,
        });
        column += k - start;
    }
    tokens.push(Token {
        kind: Tok::Eof,
        text: String::new(),
        line,
        column,
    });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let tok = self.tokens[self.pos].clone();
        if tok.kind != Tok::Eof {
            self.pos += 1;
        }
        tok
    }

    fn expect(&mut self, kind: Tok, what: &str) -> Result<Token, ExprError> {
        if self.peek().kind == kind {
            Ok(self.bump())
        } else {
            Err(syntax(self.peek(), &format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().kind {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().kind {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek().kind == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek().kind == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let tok = self.bump();
        match tok.kind {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(ref name) => {
                if self.peek().kind == Tok::LParen {
                    self.call(&tok, name)
                } else {
                    variable(&tok, name)
                }
            }
            _ => Err(syntax(&tok, "expected a number, identifier or `(`")),
        }
    }

    fn call(&mut self, tok: &Token, name: &str) -> Result<Expr, ExprError> {
        self.bump(); // `(`
        let mut args = Vec::new();
        if self.peek().kind != Tok::RParen {
            loop {
                args.push(self.expr()?);
                if self.peek().kind == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        let arity_error = |expected: usize, found: usize| ExprError::Arity {
            name: name.to_string(),
            expected,
            found,
            line: tok.line,
            column: tok.column,
        };
        let control = match name {
            "mu_m" => Some(Control::Mu),
            "nu_m" => Some(Control::Nu),
            _ => None,
        };
        if let Some(control) = control {
            if args.len() != 2 {
                return Err(arity_error(2, args.len()));
            }
            let literal = |e: &Expr| match e {
                Expr::Num(v) if *v >= 0.0 && v.fract() == 0.0 && *v < 1e6 => Some(*v as usize),
                _ => None,
            };
            let (Some(power), Some(coordinate)) = (literal(&args[0]), literal(&args[1])) else {
                return Err(ExprError::Syntax {
                    line: tok.line,
                    column: tok.column,
                    message: format!("`{name}` takes non-negative integer literals"),
                });
            };
            return Ok(Expr::Moment {
                control,
                power: power as u32,
                coordinate,
            });
        }
        let Some(func) = Func::from_name(name) else {
            return Err(ExprError::UnknownIdentifier {
                name: name.to_string(),
                line: tok.line,
                column: tok.column,
            });
        };
        if args.len() != func.arity() {
            return Err(arity_error(func.arity(), args.len()));
        }
        Ok(Expr::Call(func, args))
    }
}

fn variable(tok: &Token, name: &str) -> Result<Expr, ExprError> {
    match name {
        "t" => return Ok(Expr::Var(Var::T)),
        "i" => return Ok(Expr::Var(Var::Regime)),
        "x" => return Ok(Expr::Var(Var::X(0))),
        _ => {}
    }
    if let Some(digits) = name.strip_prefix('x') {
        if let Ok(k) = digits.parse::<usize>() {
            if k >= 1 && !digits.starts_with('0') {
                return Ok(Expr::Var(Var::X(k - 1)));
            }
        }
    }
    Err(ExprError::UnknownIdentifier {
        name: name.to_string(),
        line: tok.line,
        column: tok.column,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{ActionSet, DiscreteMeasure};
    use proptest::prelude::*;

    fn eval(src: &str, x: &[f64]) -> f64 {
        Expr::parse(src).unwrap().eval(&Env::new(0.0, x, 0)).unwrap()
    }

    #[test]
    fn parses_expected_tree() {
        let e = Expr::parse("-x1 + 0.5*mu_m(1,0)").unwrap();
        let expected = Expr::Bin(
            BinOp::Add,
            Box::new(Expr::Neg(Box::new(Expr::Var(Var::X(0))))),
            Box::new(Expr::Bin(
                BinOp::Mul,
                Box::new(Expr::Num(0.5)),
                Box::new(Expr::Moment {
                    control: Control::Mu,
                    power: 1,
                    coordinate: 0,
                }),
            )),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn power_is_right_associative() {
        assert_eq!(eval("2^3^2", &[]), 512.0);
        assert_eq!(eval("-2^2", &[]), -4.0);
        assert_eq!(eval("2^-1", &[]), 0.5);
    }

    #[test]
    fn precedence() {
        assert_eq!(eval("1 + 2 * 3 - 4 / 2", &[]), 5.0);
        assert_eq!(eval("(1 + 2) * 3", &[]), 9.0);
        assert_eq!(eval("max(1, min(5, 3)) + abs(-2)", &[]), 5.0);
        assert_eq!(eval("1.5e1 + 2E-1", &[]), 15.2);
    }

    #[test]
    fn trailing_operator_reports_column() {
        match Expr::parse("x1 +") {
            Err(ExprError::Syntax { line, column, .. }) => assert_eq!((line, column), (1, 5)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn multiline_positions() {
        match Expr::parse("1 +\n  foo") {
            Err(ExprError::UnknownIdentifier { line, column, .. }) => {
                assert_eq!((line, column), (2, 3))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identifier_and_arity_errors() {
        assert!(matches!(
            Expr::parse("y + 1"),
            Err(ExprError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            Expr::parse("x0"),
            Err(ExprError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            Expr::parse("exp(1, 2)"),
            Err(ExprError::Arity { expected: 1, found: 2, .. })
        ));
        assert!(matches!(
            Expr::parse("mu_m(1)"),
            Err(ExprError::Arity { expected: 2, .. })
        ));
        assert!(matches!(
            Expr::parse("mu_m(x1, 0)"),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(Expr::parse("(1 + 2"), Err(ExprError::Syntax { .. })));
        assert!(matches!(Expr::parse("1 $ 2"), Err(ExprError::Syntax { .. })));
        let big = "1+".repeat(40_000) + "1";
        assert_eq!(Expr::parse(&big), Err(ExprError::TooLarge));
    }

    #[test]
    fn evaluates_examples() {
        assert_eq!(eval("x1*x1", &[3.0]), 9.0);
        let e = Expr::parse("exp(-t)").unwrap();
        assert_eq!(
            e.eval(&Env::new(1.0, &[], 0)).unwrap(),
            0.36787944117144233
        );
        let set = ActionSet::new(vec![0.0], vec![1.0]).unwrap();
        let half = DiscreteMeasure::new(&set, vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let e = Expr::parse("mu_m(1,0)").unwrap();
        assert_eq!(e.eval(&Env::new(0.0, &[], 0).with_mu(&half)).unwrap(), 0.5);
        let e = Expr::parse("nu_m(2,0) + i").unwrap();
        assert_eq!(e.eval(&Env::new(0.0, &[], 1).with_nu(&half)).unwrap(), 2.5);
    }

    #[test]
    fn evaluation_errors_carry_location() {
        let env = Env::new(0.0, &[0.0], 0);
        for src in ["1 / x1", "log(x1)", "sqrt(x1 - 1)", "mu_m(1, 0)", "x2"] {
            let err = Expr::parse(src).unwrap().eval(&env).unwrap_err();
            assert!(!err.is_parse(), "{src}");
            assert!(matches!(err, ExprError::Eval { .. }));
        }
        let err = Expr::parse("2 * (1 / x1)").unwrap().eval(&env).unwrap_err();
        match err {
            ExprError::Eval { location, .. } => assert_eq!(location, "(1.0 / x1)"),
            _ => unreachable!(),
        }
    }

    #[test]
    fn introspection() {
        let e = Expr::parse("x3 * nu_m(1, 1) + i").unwrap();
        assert_eq!(e.state_arity(), 3);
        assert_eq!(e.moment_arity(), 2);
        assert!(e.uses_regime());
        assert!(e.uses_control(Control::Nu));
        assert!(!e.uses_control(Control::Mu));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..1e3).prop_map(Expr::Num),
            Just(Expr::Var(Var::T)),
            Just(Expr::Var(Var::Regime)),
            (0usize..3).prop_map(|k| Expr::Var(Var::X(k))),
            (0u32..4, 0usize..2).prop_map(|(p, c)| Expr::Moment {
                control: Control::Nu,
                power: p,
                coordinate: c
            }),
        ];
        leaf.prop_recursive(4, 32, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| Expr::Call(Func::Sin, vec![a])),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Call(Func::Max, vec![a, b])),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_fixed_point(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = Expr::parse(&printed).unwrap();
            prop_assert_eq!(&reparsed, &e);
            prop_assert_eq!(reparsed.to_string(), printed);
        }

        #[test]
        fn moment_free_expressions_ignore_measures(e in arb_expr(), w in 0.0f64..1.0) {
            prop_assume!(!e.uses_control(Control::Nu) && !e.uses_control(Control::Mu));
            let set = ActionSet::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
            let a = DiscreteMeasure::dirac(&set, &[0.2, 0.3]).unwrap();
            let b = DiscreteMeasure::new(&set, vec![vec![0.0, 0.0], vec![1.0, 1.0]], vec![w, 1.0 - w]).unwrap();
            let x = [0.3, -0.7, 1.1];
            let base = Env::new(0.25, &x, 1);
            let r1 = e.eval(&base.with_mu(&a).with_nu(&a));
            let r2 = e.eval(&base.with_mu(&b).with_nu(&b));
            let r3 = e.eval(&base);
            prop_assert_eq!(r1.clone(), r2);
            prop_assert_eq!(r1, r3);
        }
    }
}
