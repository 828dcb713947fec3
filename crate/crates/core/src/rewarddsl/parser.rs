use std::fmt;

use serde::{Deserialize, Serialize};

use super::{BinaryOp, CmpOp, Expr, Feature, UnaryOp, VALUE_BOUND};

/// Recursion guard for the descent itself; tighter AST bounds are checked after.
const MAX_NESTING: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub token: String,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {} (at `{}`)", self.line, self.column, self.message, self.token)
    }
}

impl std::error::Error for ParseDiagnostic {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Cmp(CmpOp),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    start: usize,
    end: usize,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, bytes: src.as_bytes(), pos: 0 }
    }

    fn skip_trivia(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn tokenize(mut self) -> Result<Vec<Token>, ParseDiagnostic> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let start = self.pos;
            if start >= self.bytes.len() {
                out.push(Token { tok: Tok::Eof, start, end: start });
                return Ok(out);
            }
            let c = self.bytes[start];
            let single = |t: Tok| (t, start + 1);
            let (tok, end) = match c {
                b'(' => single(Tok::LParen),
                b')' => single(Tok::RParen),
                b',' => single(Tok::Comma),
                b'+' => single(Tok::Plus),
                b'-' => single(Tok::Minus),
                b'*' => single(Tok::Star),
                b'/' => single(Tok::Slash),
                b'<' | b'>' => {
                    let eq = self.bytes.get(start + 1) == Some(&b'=');
                    let op = match (c, eq) {
                        (b'<', false) => CmpOp::Lt,
                        (b'<', true) => CmpOp::Le,
                        (_, false) => CmpOp::Gt,
                        (_, true) => CmpOp::Ge,
                    };
                    (Tok::Cmp(op), start + 1 + eq as usize)
                }
                b'0'..=b'9' | b'.' => self.number(start)?,
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let mut end = start;
                    while end < self.bytes.len()
                        && (self.bytes[end].is_ascii_alphanumeric() || self.bytes[end] == b'_')
                    {
                        end += 1;
                    }
                    (Tok::Ident(self.src[start..end].to_string()), end)
                }
                _ => {
                    let ch = self.src[start..].chars().next().unwrap();
                    return Err(diagnostic(
                        self.src,
                        start,
                        format!("unexpected character `{ch}`"),
                        ch.to_string(),
                    ));
                }
            };
            self.pos = end;
            out.push(Token { tok, start, end });
        }
    }

    fn number(&self, start: usize) -> Result<(Tok, usize), ParseDiagnostic> {
        let b = self.bytes;
        let mut end = start;
        let digits = |mut i: usize| {
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
            i
        };
        end = digits(end);
        if end < b.len() && b[end] == b'.' {
            end = digits(end + 1);
        }
        if end < b.len() && (b[end] == b'e' || b[end] == b'E') {
            let mut j = end + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            let k = digits(j);
            if k > j {
                end = k;
            }
        }
        let text = &self.src[start..end];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() && v <= VALUE_BOUND => Ok((Tok::Num(v), end)),
            Ok(_) => Err(diagnostic(self.src, start, "number out of range".into(), text.into())),
            Err(_) => Err(diagnostic(self.src, start, "malformed number".into(), text.into())),
        }
    }
}

fn diagnostic(src: &str, offset: usize, message: String, token: String) -> ParseDiagnostic {
    let offset = offset.min(src.len());
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    ParseDiagnostic { offset, line, column, message, token }
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Token>,
    pos: usize,
    nesting: usize,
}

type PResult<T> = Result<T, ParseDiagnostic>;

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if !matches!(t.tok, Tok::Eof) {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, tok: &Token, message: impl Into<String>) -> ParseDiagnostic {
        let text = if matches!(tok.tok, Tok::Eof) {
            "<end of input>".to_string()
        } else {
            self.src[tok.start..tok.end].to_string()
        };
        diagnostic(self.src, tok.start, message.into(), text)
    }

    fn expect(&mut self, want: Tok, what: &str) -> PResult<Token> {
        let t = self.peek().clone();
        if t.tok == want {
            Ok(self.bump())
        } else {
            Err(self.error_at(&t, format!("expected {what}")))
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING {
            let t = self.peek().clone();
            return Err(self.error_at(&t, "expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        self.nesting -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> PResult<Expr> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(*v))
            }
            Tok::Minus => {
                self.bump();
                self.enter()?;
                let inner = self.factor()?;
                self.nesting -= 1;
                Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                if self.peek().tok == Tok::LParen {
                    self.call(name.clone(), &t)
                } else {
                    Feature::from_name(name)
                        .map(Expr::Feature)
                        .ok_or_else(|| self.error_at(&t, format!("unknown feature `{name}`")))
                }
            }
            _ => Err(self.error_at(&t, "expected expression")),
        }
    }

    /// A possibly negated numeric literal.
    fn literal(&mut self) -> PResult<f64> {
        let neg = if self.peek().tok == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.error_at(&t, "expected numeric literal")),
        }
    }

    fn comma(&mut self) -> PResult<()> {
        self.expect(Tok::Comma, "`,`").map(|_| ())
    }

    fn close(&mut self, name: &str) -> PResult<()> {
        let t = self.peek().clone();
        match t.tok {
            Tok::RParen => {
                self.bump();
                Ok(())
            }
            Tok::Comma => Err(self.error_at(&t, format!("too many arguments to `{name}`"))),
            _ => Err(self.error_at(&t, "expected `)`")),
        }
    }

    fn call(&mut self, name: String, name_tok: &Token) -> PResult<Expr> {
        self.expect(Tok::LParen, "`(`")?;
        self.enter()?;
        let unary = |op| Some(op);
        let op = match name.as_str() {
            "abs" => unary(UnaryOp::Abs),
            "exp" => unary(UnaryOp::Exp),
            "tanh" => unary(UnaryOp::Tanh),
            "sqrt" => unary(UnaryOp::Sqrt),
            _ => None,
        };
        let e = if let Some(op) = op {
            let a = self.arg(&name)?;
            self.close(&name)?;
            Expr::Unary(op, Box::new(a))
        } else {
            match name.as_str() {
                "min" | "max" => {
                    let a = self.arg(&name)?;
                    self.comma_or_arity(&name, 2)?;
                    let b = self.expr()?;
                    self.close(&name)?;
                    let op = if name == "min" { BinaryOp::Min } else { BinaryOp::Max };
                    Expr::Binary(op, Box::new(a), Box::new(b))
                }
                "pow" => {
                    let a = self.arg(&name)?;
                    self.comma_or_arity(&name, 2)?;
                    let p = self.literal()?;
                    self.close(&name)?;
                    Expr::Pow(Box::new(a), p)
                }
                "clip" => {
                    let a = self.arg(&name)?;
                    self.comma_or_arity(&name, 3)?;
                    let lo_tok = self.peek().clone();
                    let lo = self.literal()?;
                    self.comma_or_arity(&name, 3)?;
                    let hi = self.literal()?;
                    self.close(&name)?;
                    if lo > hi {
                        return Err(self.error_at(&lo_tok, format!("clip lower bound {lo} exceeds upper bound {hi}")));
                    }
                    Expr::Clip(Box::new(a), lo, hi)
                }
                "if" => {
                    let lhs = self.arg(&name)?;
                    let t = self.peek().clone();
                    let cmp = match t.tok {
                        Tok::Cmp(op) => {
                            self.bump();
                            op
                        }
                        _ => return Err(self.error_at(&t, "expected comparison (`<`, `<=`, `>`, `>=`)")),
                    };
                    let rhs = self.expr()?;
                    self.comma_or_arity(&name, 3)?;
                    let then = self.expr()?;
                    self.comma_or_arity(&name, 3)?;
                    let otherwise = self.expr()?;
                    self.close(&name)?;
                    Expr::If {
                        lhs: Box::new(lhs),
                        cmp,
                        rhs: Box::new(rhs),
                        then: Box::new(then),
                        otherwise: Box::new(otherwise),
                    }
                }
                _ => return Err(self.error_at(name_tok, format!("unknown function `{name}`"))),
            }
        };
        self.nesting -= 1;
        Ok(e)
    }

    fn arg(&mut self, name: &str) -> PResult<Expr> {
        if self.peek().tok == Tok::RParen {
            let t = self.peek().clone();
            return Err(self.error_at(&t, format!("`{name}` expects arguments")));
        }
        self.expr()
    }

    fn comma_or_arity(&mut self, name: &str, arity: usize) -> PResult<()> {
        if self.peek().tok == Tok::RParen {
            let t = self.peek().clone();
            return Err(self.error_at(&t, format!("`{name}` expects {arity} arguments")));
        }
        self.comma()
    }
}

/// Parses one reward expression. `#` comments are ignored.
pub fn parse(source: &str) -> Result<Expr, ParseDiagnostic> {
    let toks = Lexer::new(source).tokenize()?;
    let mut p = Parser { src: source, toks, pos: 0, nesting: 0 };
    let e = p.expr()?;
    let t = p.peek().clone();
    if !matches!(t.tok, Tok::Eof) {
        let msg = match t.tok {
            Tok::Cmp(_) => "comparisons are only allowed as the first argument of `if`",
            _ => "unexpected token after expression",
        };
        return Err(p.error_at(&t, msg));
    }
    e.check_bounds().map_err(|m| diagnostic(source, 0, m, source.chars().take(16).collect()))?;
    Ok(e)
}

/// Removes `#` line comments.
pub fn strip_comments(source: &str) -> String {
    source
        .lines()
        .map(|l| l.split_once('#').map_or(l, |(code, _)| code))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses a reward source file (comments allowed).
pub fn parse_source(source: &str) -> Result<Expr, ParseDiagnostic> {
    parse(source)
}
