//! Scalar math expression language used throughout the configuration surface.
//!
//! Nonlinearities `f_i`, inputs `u_j(t)`, delay laws `tau(t)`, history
//! functions `phi(s)` and gain bounds `gamma_i(eps)` are all written as plain
//! text in this small fixed grammar and parsed into immutable trees.
//!
//! Grammar (recursive descent, LL):
//!
//! ```text
//! expr   := term  (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?              -- right associative
//! atom   := NUMBER | 'pi' | VAR | FUNC '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `-2^2` therefore parses as `-(2^2)` and `2^-3` is accepted. Functions are
//! fixed: `sin cos tan exp log sqrt abs` (one argument, `log` is the natural
//! logarithm) and `min max` (two arguments). Variable names are restricted to
//! the closed vocabulary `t`, `s`, `eps`, `x1..`, `xd1..`, `u1..`, `ud1..`
//! with 1-based indices; anything else is rejected at parse time.
//!
//! Expressions are immutable after parsing and evaluation is pure, so they
//! may be shared freely across threads.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

/// A variable of the closed vocabulary. Indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarRef {
    /// Simulation time `t`.
    Time,
    /// History parameter `s` (used by `phi(s)` on `[-tau*, 0]`).
    HistTime,
    /// High-gain parameter `eps`.
    Eps,
    /// State component `x<i>`.
    State(usize),
    /// Delayed state component `xd<i>`.
    DelayedState(usize),
    /// Input component `u<j>`.
    Input(usize),
    /// Delayed input component `ud<j>`.
    DelayedInput(usize),
}

impl VarRef {
    /// Resolves a raw identifier against the vocabulary.
    pub fn parse_name(name: &str) -> Option<VarRef> {
        match name {
            "t" => return Some(VarRef::Time),
            "s" => return Some(VarRef::HistTime),
            "eps" => return Some(VarRef::Eps),
            _ => {}
        }
        let (ctor, digits): (fn(usize) -> VarRef, &str) = if let Some(d) = name.strip_prefix("xd")
        {
            (VarRef::DelayedState, d)
        } else if let Some(d) = name.strip_prefix("ud") {
            (VarRef::DelayedInput, d)
        } else if let Some(d) = name.strip_prefix('x') {
            (VarRef::State, d)
        } else if let Some(d) = name.strip_prefix('u') {
            (VarRef::Input, d)
        } else {
            return None;
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let idx: usize = digits.parse().ok()?;
        if idx == 0 {
            return None;
        }
        Some(ctor(idx))
    }

    /// The canonical textual name of the variable.
    pub fn name(&self) -> String {
        match self {
            VarRef::Time => "t".to_string(),
            VarRef::HistTime => "s".to_string(),
            VarRef::Eps => "eps".to_string(),
            VarRef::State(i) => format!("x{i}"),
            VarRef::DelayedState(i) => format!("xd{i}"),
            VarRef::Input(i) => format!("u{i}"),
            VarRef::DelayedInput(i) => format!("ud{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(&self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(&self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(VarRef),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// An immutable parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown function `{name}` at position {pos}")]
    UnknownFunction { pos: usize, name: String },
    #[error("unknown variable `{name}` at position {pos}")]
    UnknownVariable { pos: usize, name: String },
    #[error("unknown character `{ch}` at position {pos}")]
    UnknownCharacter { pos: usize, ch: char },
    #[error("number literal out of range at position {pos}")]
    NumberOutOfRange { pos: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("domain error: {func}({arg}) is undefined over the reals")]
    Domain { func: &'static str, arg: f64 },
}

/// Variable binding environment for evaluation.
pub trait EvalEnv {
    fn lookup(&self, var: VarRef) -> Option<f64>;
}

impl EvalEnv for HashMap<String, f64> {
    fn lookup(&self, var: VarRef) -> Option<f64> {
        self.get(&var.name()).copied()
    }
}

/// Adapter turning any closure into an [`EvalEnv`].
pub struct FnEnv<F: Fn(VarRef) -> Option<f64>>(pub F);

impl<F: Fn(VarRef) -> Option<f64>> EvalEnv for FnEnv<F> {
    fn lookup(&self, var: VarRef) -> Option<f64> {
        (self.0)(var)
    }
}

/// Parses `text` into an expression tree. See the module docs for the grammar.
pub fn parse_expression(text: &str) -> Result<Expression, ParseError> {
    Expression::parse(text)
}

/// Evaluates `e` under a name-to-value map.
pub fn evaluate(e: &Expression, env: &HashMap<String, f64>) -> Result<f64, EvalError> {
    e.evaluate(env)
}

impl Expression {
    pub fn parse(text: &str) -> Result<Expression, ParseError> {
        let tokens = lex(text)?;
        if tokens.is_empty() {
            return Err(ParseError::Empty);
        }
        let mut parser = Parser {
            tokens,
            pos: 0,
            end: text.len(),
        };
        let root = parser.parse_expr()?;
        if let Some((tok, pos)) = parser.peek() {
            return Err(ParseError::Syntax {
                pos,
                msg: format!("unexpected `{tok}`"),
            });
        }
        Ok(Expression { root })
    }

    /// Evaluates the tree under `env`. Missing variables and real-domain
    /// violations (`log`/`sqrt` of a negative number, fractional powers of a
    /// negative base) are reported as errors; everything else follows IEEE
    /// double-precision arithmetic.
    pub fn evaluate<E: EvalEnv + ?Sized>(&self, env: &E) -> Result<f64, EvalError> {
        eval_node(&self.root, env)
    }

    /// The set of variable names appearing in the expression.
    pub fn free_variables(&self) -> BTreeSet<String> {
        self.free_var_refs().iter().map(VarRef::name).collect()
    }

    /// The set of variables appearing in the expression, in vocabulary form.
    pub fn free_var_refs(&self) -> BTreeSet<VarRef> {
        let mut out = BTreeSet::new();
        collect_vars(&self.root, &mut out);
        out
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, f)
    }
}

fn collect_vars(node: &Node, out: &mut BTreeSet<VarRef>) {
    match node {
        Node::Num(_) => {}
        Node::Var(v) => {
            out.insert(*v);
        }
        Node::Neg(inner) => collect_vars(inner, out),
        Node::Bin(_, a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
        Node::Call(_, args) => {
            for a in args {
                collect_vars(a, out);
            }
        }
    }
}

// Fully parenthesized output; re-parsing it reproduces the tree exactly.
fn write_node(node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        Node::Num(v) => write!(f, "{v}"),
        Node::Var(v) => write!(f, "{}", v.name()),
        Node::Neg(inner) => {
            write!(f, "(-")?;
            write_node(inner, f)?;
            write!(f, ")")
        }
        Node::Bin(op, a, b) => {
            write!(f, "(")?;
            write_node(a, f)?;
            write!(f, " {} ", op.symbol())?;
            write_node(b, f)?;
            write!(f, ")")
        }
        Node::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write_node(a, f)?;
            }
            write!(f, ")")
        }
    }
}

fn eval_node<E: EvalEnv + ?Sized>(node: &Node, env: &E) -> Result<f64, EvalError> {
    match node {
        Node::Num(v) => Ok(*v),
        Node::Var(v) => env
            .lookup(*v)
            .ok_or_else(|| EvalError::UnboundVariable(v.name())),
        Node::Neg(inner) => Ok(-eval_node(inner, env)?),
        Node::Bin(op, a, b) => {
            let x = eval_node(a, env)?;
            let y = eval_node(b, env)?;
            match op {
                BinOp::Add => Ok(x + y),
                BinOp::Sub => Ok(x - y),
                BinOp::Mul => Ok(x * y),
                BinOp::Div => Ok(x / y),
                BinOp::Pow => {
                    if x < 0.0 && y.fract() != 0.0 {
                        Err(EvalError::Domain { func: "^", arg: x })
                    } else {
                        Ok(x.powf(y))
                    }
                }
            }
        }
        Node::Call(func, args) => {
            let x = eval_node(&args[0], env)?;
            match func {
                Func::Sin => Ok(x.sin()),
                Func::Cos => Ok(x.cos()),
                Func::Tan => Ok(x.tan()),
                Func::Exp => Ok(x.exp()),
                Func::Log => {
                    if x < 0.0 {
                        Err(EvalError::Domain { func: "log", arg: x })
                    } else {
                        Ok(x.ln())
                    }
                }
                Func::Sqrt => {
                    if x < 0.0 {
                        Err(EvalError::Domain {
                            func: "sqrt",
                            arg: x,
                        })
                    } else {
                        Ok(x.sqrt())
                    }
                }
                Func::Abs => Ok(x.abs()),
                Func::Min => Ok(x.min(eval_node(&args[1], env)?)),
                Func::Max => Ok(x.max(eval_node(&args[1], env)?)),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer / parser
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
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
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Num(v) => write!(f, "{v}"),
            Token::Ident(s) => write!(f, "{s}"),
            Token::Plus => write!(f, "+"),
            Token::Minus => write!(f, "-"),
            Token::Star => write!(f, "*"),
            Token::Slash => write!(f, "/"),
            Token::Caret => write!(f, "^"),
            Token::LParen => write!(f, "("),
            Token::RParen => write!(f, ")"),
            Token::Comma => write!(f, ","),
        }
    }
}

fn lex(text: &str) -> Result<Vec<(Token, usize)>, ParseError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => i += 1,
            b'+' => {
                tokens.push((Token::Plus, i));
                i += 1;
            }
            b'-' => {
                tokens.push((Token::Minus, i));
                i += 1;
            }
            b'*' => {
                tokens.push((Token::Star, i));
                i += 1;
            }
            b'/' => {
                tokens.push((Token::Slash, i));
                i += 1;
            }
            b'^' => {
                tokens.push((Token::Caret, i));
                i += 1;
            }
            b'(' => {
                tokens.push((Token::LParen, i));
                i += 1;
            }
            b')' => {
                tokens.push((Token::RParen, i));
                i += 1;
            }
            b',' => {
                tokens.push((Token::Comma, i));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // optional exponent: e/E [+-] digits
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let slice = &text[start..i];
                let value: f64 = slice.parse().map_err(|_| ParseError::Syntax {
                    pos: start,
                    msg: format!("invalid number `{slice}`"),
                })?;
                if !value.is_finite() {
                    return Err(ParseError::NumberOutOfRange { pos: start });
                }
                tokens.push((Token::Num(value), start));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                tokens.push((Token::Ident(text[start..i].to_string()), start));
            }
            _ => {
                let ch = text[i..].chars().next().unwrap();
                return Err(ParseError::UnknownCharacter { pos: i, ch });
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<(&Token, usize)> {
        self.tokens.get(self.pos).map(|(t, p)| (t, *p))
    }

    fn next(&mut self) -> Option<(Token, usize)> {
        let item = self.tokens.get(self.pos).cloned();
        if item.is_some() {
            self.pos += 1;
        }
        item
    }

    fn expect(&mut self, want: Token) -> Result<(), ParseError> {
        match self.next() {
            Some((tok, _)) if tok == want => Ok(()),
            Some((tok, pos)) => Err(ParseError::Syntax {
                pos,
                msg: format!("expected `{want}`, found `{tok}`"),
            }),
            None => Err(ParseError::Syntax {
                pos: self.end,
                msg: format!("expected `{want}`, found end of input"),
            }),
        }
    }

    fn parse_expr(&mut self) -> Result<Node, ParseError> {
        let mut node = self.parse_term()?;
        while let Some((tok, _)) = self.peek() {
            let op = match tok {
                Token::Plus => BinOp::Add,
                Token::Minus => BinOp::Sub,
                _ => break,
            };
            self.next();
            let rhs = self.parse_term()?;
            node = Node::Bin(op, Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn parse_term(&mut self) -> Result<Node, ParseError> {
        let mut node = self.parse_unary()?;
        while let Some((tok, _)) = self.peek() {
            let op = match tok {
                Token::Star => BinOp::Mul,
                Token::Slash => BinOp::Div,
                _ => break,
            };
            self.next();
            let rhs = self.parse_unary()?;
            node = Node::Bin(op, Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn parse_unary(&mut self) -> Result<Node, ParseError> {
        if let Some((Token::Minus, _)) = self.peek() {
            self.next();
            let inner = self.parse_unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Node, ParseError> {
        let base = self.parse_atom()?;
        if let Some((Token::Caret, _)) = self.peek() {
            self.next();
            // right associative; the exponent may carry a unary minus
            let exponent = self.parse_unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Node, ParseError> {
        match self.next() {
            Some((Token::Num(v), _)) => Ok(Node::Num(v)),
            Some((Token::LParen, _)) => {
                let inner = self.parse_expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some((Token::Ident(name), pos)) => {
                if let Some((Token::LParen, _)) = self.peek() {
                    let func = Func::from_name(&name)
                        .ok_or(ParseError::UnknownFunction { pos, name })?;
                    self.next();
                    let mut args = vec![self.parse_expr()?];
                    while let Some((Token::Comma, _)) = self.peek() {
                        self.next();
                        args.push(self.parse_expr()?);
                    }
                    self.expect(Token::RParen)?;
                    if args.len() != func.arity() {
                        return Err(ParseError::Syntax {
                            pos,
                            msg: format!(
                                "`{}` takes {} argument(s), got {}",
                                func.name(),
                                func.arity(),
                                args.len()
                            ),
                        });
                    }
                    return Ok(Node::Call(func, args));
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                match VarRef::parse_name(&name) {
                    Some(var) => Ok(Node::Var(var)),
                    None => Err(ParseError::UnknownVariable { pos, name }),
                }
            }
            Some((tok, pos)) => Err(ParseError::Syntax {
                pos,
                msg: format!("unexpected `{tok}`"),
            }),
            None => Err(ParseError::Syntax {
                pos: self.end,
                msg: "unexpected end of input".to_string(),
            }),
        }
    }
}
