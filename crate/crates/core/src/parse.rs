//! Sequence expressions such as `Face=K; Suit=* & Face=(Q|J)`.
//!
//! ```text
//! SEQ  := PREP ';' STEP ('&' STEP)*
//! PREP := VAR '=' VALUE
//! STEP := VAR '=' VALUE | VAR '=' '(' VALUE ('|' VALUE)+ ')' | VAR '=' '*'
//! ```
//!
//! Whitespace is insignificant. Every step manifests exactly one variable, so
//! there is no way to write a simultaneous observation of two variables.

use std::fmt;

use thiserror::Error;

use crate::deck::{Deck, Target};
use crate::engine::{Engine, EngineError, EventSequence, EventStep, OutcomePredicate, Outcome};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Eq,
    Semi,
    Amp,
    Bar,
    Open,
    Close,
    Star,
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "{s:?}"),
            Tok::Eq => f.write_str("'='"),
            Tok::Semi => f.write_str("';'"),
            Tok::Amp => f.write_str("'&'"),
            Tok::Bar => f.write_str("'|'"),
            Tok::Open => f.write_str("'('"),
            Tok::Close => f.write_str("')'"),
            Tok::Star => f.write_str("'*'"),
            Tok::End => f.write_str("end of input"),
        }
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | '\'') || (!c.is_ascii() && !c.is_whitespace())
}

fn lex(input: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let mut out = Vec::new();
    let mut chars = input.char_indices().peekable();
    while let Some(&(at, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let tok = match c {
            '=' => Tok::Eq,
            ';' => Tok::Semi,
            '&' => Tok::Amp,
            '|' => Tok::Bar,
            '(' => Tok::Open,
            ')' => Tok::Close,
            '*' => Tok::Star,
            c if is_ident_char(c) => {
                let mut end = at;
                while let Some(&(i, c)) = chars.peek() {
                    if !is_ident_char(c) {
                        break;
                    }
                    end = i + c.len_utf8();
                    chars.next();
                }
                out.push((at, Tok::Ident(input[at..end].to_string())));
                continue;
            }
            other => {
                return Err(ParseError {
                    offset: at,
                    message: format!("unexpected character {other:?}"),
                })
            }
        };
        chars.next();
        out.push((at, tok));
    }
    out.push((input.len(), Tok::End));
    Ok(out)
}

/// A parsed expression: preparation plus observation steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expression {
    pub prep: Outcome,
    pub steps: Vec<EventStep>,
}

impl Expression {
    pub fn sequence(&self, engine: &Engine<'_>) -> Result<EventSequence, EngineError> {
        Ok(EventSequence {
            prep: engine.prepare(self.prep.target, self.prep.value)?,
            steps: self.steps.clone(),
        })
    }
}

struct Parser<'a> {
    deck: &'a Deck,
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &(usize, Tok) {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> (usize, Tok) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        let (at, tok) = self.next();
        if tok == want {
            Ok(())
        } else {
            Err(ParseError {
                offset: at,
                message: format!("expected {want}, found {tok}"),
            })
        }
    }

    fn ident(&mut self, what: &str) -> Result<(usize, String), ParseError> {
        match self.next() {
            (at, Tok::Ident(s)) => Ok((at, s)),
            (at, tok) => Err(ParseError {
                offset: at,
                message: format!("expected {what}, found {tok}"),
            }),
        }
    }

    fn target(&mut self) -> Result<Target, ParseError> {
        let (at, name) = self.ident("a variable name")?;
        self.deck.target(&name).ok_or(ParseError {
            offset: at,
            message: format!("unknown variable {name:?}"),
        })
    }

    fn value(&mut self, target: Target) -> Result<usize, ParseError> {
        let (at, name) = self.ident("a value")?;
        self.deck.outcome_index(target, &name).ok_or_else(|| ParseError {
            offset: at,
            message: format!("unknown value {name:?} for {}", self.deck.target_name(target)),
        })
    }

    fn assignment(&mut self) -> Result<Outcome, ParseError> {
        let target = self.target()?;
        self.expect(Tok::Eq)?;
        let value = self.value(target)?;
        Ok(Outcome::new(target, value))
    }

    fn step(&mut self) -> Result<EventStep, ParseError> {
        let target = self.target()?;
        self.expect(Tok::Eq)?;
        match self.peek().1 {
            Tok::Star => {
                self.next();
                Ok(EventStep::ignored(target))
            }
            Tok::Open => {
                let (open_at, _) = self.next();
                let mut values = vec![self.value(target)?];
                while self.peek().1 == Tok::Bar {
                    self.next();
                    let at = self.peek().0;
                    let v = self.value(target)?;
                    if values.contains(&v) {
                        return Err(ParseError {
                            offset: at,
                            message: "value repeated in alternative".into(),
                        });
                    }
                    values.push(v);
                }
                self.expect(Tok::Close)?;
                if values.len() < 2 {
                    return Err(ParseError {
                        offset: open_at,
                        message: "an alternative needs at least two values".into(),
                    });
                }
                Ok(EventStep::set(target, values))
            }
            _ => Ok(EventStep::single(target, self.value(target)?)),
        }
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        match self.next() {
            (_, Tok::End) => Ok(()),
            (at, tok) => Err(ParseError {
                offset: at,
                message: format!("unexpected {tok}"),
            }),
        }
    }
}

/// Parses a full sequence expression against `deck`.
pub fn parse_expression(deck: &Deck, input: &str) -> Result<Expression, ParseError> {
    let mut p = Parser {
        deck,
        toks: lex(input)?,
        pos: 0,
    };
    let prep = p.assignment()?;
    p.expect(Tok::Semi)?;
    let mut steps = vec![p.step()?];
    while p.peek().1 == Tok::Amp {
        p.next();
        steps.push(p.step()?);
    }
    p.finish()?;
    Ok(Expression { prep, steps })
}

/// Parses a single `VAR=VALUE`.
pub fn parse_assignment(deck: &Deck, input: &str) -> Result<Outcome, ParseError> {
    let mut p = Parser {
        deck,
        toks: lex(input)?,
        pos: 0,
    };
    let out = p.assignment()?;
    p.finish()?;
    Ok(out)
}

pub fn format_outcome(deck: &Deck, o: Outcome) -> String {
    format!("{}={}", deck.target_name(o.target), deck.outcome_name(o.target, o.value))
}

pub fn format_step(deck: &Deck, step: &EventStep) -> String {
    let t = step.manifestation;
    let name = deck.target_name(t);
    match &step.outcome {
        OutcomePredicate::Single(o) => format!("{name}={}", deck.outcome_name(t, *o)),
        OutcomePredicate::Set(os) => {
            let alts: Vec<_> = os.iter().map(|&o| deck.outcome_name(t, o)).collect();
            format!("{name}=({})", alts.join("|"))
        }
        OutcomePredicate::Ignored => format!("{name}=*"),
    }
}

pub fn format_steps(deck: &Deck, steps: &[EventStep]) -> String {
    steps
        .iter()
        .map(|s| format_step(deck, s))
        .collect::<Vec<_>>()
        .join(" & ")
}

pub fn format_expression(deck: &Deck, e: &Expression) -> String {
    format!("{}; {}", format_outcome(deck, e.prep), format_steps(deck, &e.steps))
}
