//! Representation recipes: how the detector's working vector is assembled
//! from the encoder latent `v` and the language-similarity blocks `pi`
//! (normal descriptions) and `pibar` (anomalous descriptions).
//!
//! Surface syntax, case-insensitive, whitespace ignored:
//!
//! ```text
//! recipe      := add | append | term
//! append      := "(" add_or_term ("," add_or_term)+ ")"
//! add         := term ("+" term)+
//! add_or_term := add | term
//! term        := [integer] name
//! name        := "pi" | "pibar" | "v"
//! integer     := [1-9][0-9]*
//! ```
//!
//! A factor `k` repeats the base block `k` times end to end, so `(pi,3v)`
//! weights the latent three times as long as the language block.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TermKind {
    V,
    Pi,
    PiBar,
}

impl TermKind {
    pub fn name(self) -> &'static str {
        match self {
            TermKind::V => "v",
            TermKind::Pi => "pi",
            TermKind::PiBar => "pibar",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Term {
    pub kind: TermKind,
    factor: u32,
}

impl Term {
    pub fn new(kind: TermKind, factor: u32) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Config("term factor must be at least 1".into()));
        }
        Ok(Self { kind, factor })
    }

    pub fn once(kind: TermKind) -> Self {
        Self { kind, factor: 1 }
    }

    pub fn factor(&self) -> u32 {
        self.factor
    }
}

/// Child of an append: a single term or a sum of terms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Block {
    Term(Term),
    Add(Vec<Term>),
}

/// Parsed recipe. Depth is at most two by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Recipe {
    Term(Term),
    Add(Vec<Term>),
    Append(Vec<Block>),
}

impl Recipe {
    pub fn term(kind: TermKind, factor: u32) -> Result<Self> {
        Term::new(kind, factor).map(Recipe::Term)
    }

    pub fn add(terms: Vec<Term>) -> Result<Self> {
        if terms.len() < 2 {
            return Err(Error::Config("add needs at least two terms".into()));
        }
        Ok(Recipe::Add(terms))
    }

    pub fn append(blocks: Vec<Block>) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(Error::Config("append needs at least two children".into()));
        }
        if blocks
            .iter()
            .any(|b| matches!(b, Block::Add(terms) if terms.len() < 2))
        {
            return Err(Error::Config("add needs at least two terms".into()));
        }
        Ok(Recipe::Append(blocks))
    }

    /// Every term in left-to-right order.
    pub fn terms(&self) -> Vec<Term> {
        match self {
            Recipe::Term(t) => vec![*t],
            Recipe::Add(ts) => ts.clone(),
            Recipe::Append(blocks) => blocks
                .iter()
                .flat_map(|b| match b {
                    Block::Term(t) => vec![*t],
                    Block::Add(ts) => ts.clone(),
                })
                .collect(),
        }
    }

    pub fn uses(&self, kind: TermKind) -> bool {
        self.terms().iter().any(|t| t.kind == kind)
    }

    pub fn uses_language(&self) -> bool {
        self.uses(TermKind::Pi) || self.uses(TermKind::PiBar)
    }

    /// Canonical text form.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.factor != 1 {
            write!(f, "{}", self.factor)?;
        }
        f.write_str(self.kind.name())
    }
}

fn write_sum(f: &mut fmt::Formatter<'_>, terms: &[Term]) -> fmt::Result {
    for (i, t) in terms.iter().enumerate() {
        if i > 0 {
            f.write_str("+")?;
        }
        write!(f, "{t}")?;
    }
    Ok(())
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recipe::Term(t) => write!(f, "{t}"),
            Recipe::Add(ts) => write_sum(f, ts),
            Recipe::Append(blocks) => {
                f.write_str("(")?;
                for (i, b) in blocks.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    match b {
                        Block::Term(t) => write!(f, "{t}")?,
                        Block::Add(ts) => write_sum(f, ts)?,
                    }
                }
                f.write_str(")")
            }
        }
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_recipe(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok {
    Int(u32),
    Name(TermKind),
    Plus,
    Comma,
    Open,
    Close,
    End,
}

impl Tok {
    fn describe(self) -> String {
        match self {
            Tok::Int(n) => format!("integer {n}"),
            Tok::Name(k) => format!("'{}'", k.name()),
            Tok::Plus => "'+'".into(),
            Tok::Comma => "','".into(),
            Tok::Open => "'('".into(),
            Tok::Close => "')'".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn parse_err(position: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        position,
        message: message.into(),
    }
}

/// Splits input into (token, char position) pairs, ending with `End`.
fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        match c {
            c if c.is_whitespace() => {
                i += 1;
                continue;
            }
            '+' => toks.push((Tok::Plus, start)),
            ',' => toks.push((Tok::Comma, start)),
            '(' => toks.push((Tok::Open, start)),
            ')' => toks.push((Tok::Close, start)),
            '0'..='9' => {
                while i + 1 < chars.len() && chars[i + 1].is_ascii_digit() {
                    i += 1;
                }
                let digits: String = chars[start..=i].iter().collect();
                if digits.starts_with('0') {
                    return Err(parse_err(start, "factor must be a positive integer without leading zeros"));
                }
                let n = digits
                    .parse::<u32>()
                    .map_err(|_| parse_err(start, format!("factor {digits} is too large")))?;
                toks.push((Tok::Int(n), start));
            }
            c if c.is_alphabetic() => {
                while i + 1 < chars.len() && chars[i + 1].is_alphabetic() {
                    i += 1;
                }
                let word: String = chars[start..=i].iter().collect::<String>().to_lowercase();
                let kind = match word.as_str() {
                    "v" => TermKind::V,
                    "pi" => TermKind::Pi,
                    "pibar" => TermKind::PiBar,
                    _ => {
                        return Err(parse_err(
                            start,
                            format!("unknown term '{word}', expected pi, pibar or v"),
                        ))
                    }
                };
                toks.push((Tok::Name(kind), start));
            }
            other => return Err(parse_err(start, format!("unexpected character '{other}'"))),
        }
        i += 1;
    }
    toks.push((Tok::End, chars.len()));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> (Tok, usize) {
        self.toks[self.pos]
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos];
        if t.0 != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn term(&mut self) -> Result<Term> {
        let (tok, at) = self.bump();
        match tok {
            Tok::Name(kind) => Ok(Term::once(kind)),
            Tok::Int(factor) => match self.bump() {
                (Tok::Name(kind), _) => Ok(Term { kind, factor }),
                (other, at) => Err(parse_err(
                    at,
                    format!("expected a term name after factor, found {}", other.describe()),
                )),
            },
            other => Err(parse_err(at, format!("expected a term, found {}", other.describe()))),
        }
    }

    /// term ("+" term)*, returned flat.
    fn sum(&mut self) -> Result<Vec<Term>> {
        let mut terms = vec![self.term()?];
        while self.peek().0 == Tok::Plus {
            self.bump();
            terms.push(self.term()?);
        }
        Ok(terms)
    }

    fn block(&mut self) -> Result<Block> {
        if self.peek().0 == Tok::Open {
            return Err(parse_err(self.peek().1, "nested parentheses are not supported"));
        }
        let mut terms = self.sum()?;
        Ok(if terms.len() == 1 {
            Block::Term(terms.pop().unwrap())
        } else {
            Block::Add(terms)
        })
    }

    fn recipe(&mut self) -> Result<Recipe> {
        let recipe = match self.peek() {
            (Tok::End, at) => return Err(parse_err(at, "empty recipe")),
            (Tok::Open, open_at) => {
                self.bump();
                let mut blocks = vec![self.block()?];
                loop {
                    match self.bump() {
                        (Tok::Comma, _) => blocks.push(self.block()?),
                        (Tok::Close, _) => break,
                        (Tok::End, at) => {
                            return Err(parse_err(
                                at,
                                format!("unbalanced parentheses: '(' at {open_at} is never closed"),
                            ))
                        }
                        (other, at) => {
                            return Err(parse_err(
                                at,
                                format!("expected ',' or ')', found {}", other.describe()),
                            ))
                        }
                    }
                }
                if blocks.len() < 2 {
                    return Err(parse_err(open_at, "append needs at least two children"));
                }
                Recipe::Append(blocks)
            }
            _ => {
                let mut terms = self.sum()?;
                if terms.len() == 1 {
                    Recipe::Term(terms.pop().unwrap())
                } else {
                    Recipe::Add(terms)
                }
            }
        };
        match self.peek() {
            (Tok::End, _) => Ok(recipe),
            (Tok::Close, at) => Err(parse_err(at, "unbalanced parentheses: unexpected ')'")),
            (other, at) => Err(parse_err(at, format!("unexpected {}", other.describe()))),
        }
    }
}

pub fn parse_recipe(text: &str) -> Result<Recipe> {
    let toks = lex(text)?;
    Parser { toks, pos: 0 }.recipe()
}

pub fn render_recipe(recipe: &Recipe) -> String {
    recipe.render()
}

fn block_len(t: &Term, dims: &BaseDims) -> Result<usize> {
    Ok(t.factor as usize * dims.of(t.kind)?)
}

fn sum_len(ts: &[Term], dims: &BaseDims) -> Result<usize> {
    ts.iter()
        .map(|t| block_len(t, dims))
        .try_fold(0, |acc, l| l.map(|l| acc.max(l)))
}

/// Base lengths of the three term kinds. Zero means unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BaseDims {
    pub v: usize,
    pub pi: usize,
    pub pibar: usize,
}

impl BaseDims {
    pub fn of(&self, kind: TermKind) -> Result<usize> {
        let d = match kind {
            TermKind::V => self.v,
            TermKind::Pi => self.pi,
            TermKind::PiBar => self.pibar,
        };
        if d == 0 {
            return Err(Error::Config(format!(
                "recipe uses '{}' but its dimension is unknown",
                kind.name()
            )));
        }
        Ok(d)
    }
}

/// Length of the composed vector: a term is factor x base length, append
/// sums its children, add takes the longest child.
pub fn recipe_dimension(recipe: &Recipe, dim_v: usize, n_pi: usize, n_pibar: usize) -> Result<usize> {
    let dims = BaseDims {
        v: dim_v,
        pi: n_pi,
        pibar: n_pibar,
    };
    match recipe {
        Recipe::Term(t) => block_len(t, &dims),
        Recipe::Add(ts) => sum_len(ts, &dims),
        Recipe::Append(blocks) => blocks.iter().try_fold(0, |acc, b| {
            let l = match b {
                Block::Term(t) => block_len(t, &dims)?,
                Block::Add(ts) => sum_len(ts, &dims)?,
            };
            Ok(acc + l)
        }),
    }
}
