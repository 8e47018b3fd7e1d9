//! Model mini-language: `response ~ term + ... + (term + ... | group)`.
//!
//! Terms are column names, `name^k` powers (k ≤ 4), `a:b` interactions, and
//! the literals `1`/`0` switching the intercept on or off. Exactly one
//! parenthesised random-effects clause is required. Term order in the parsed
//! spec is appearance order.

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Term};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Int(u32),
    Tilde,
    Plus,
    Bar,
    LParen,
    RParen,
    Caret,
    Colon,
}

struct Lexer<'a> {
    src: &'a str,
    tokens: Vec<(Token, usize)>,
}

impl<'a> Lexer<'a> {
    fn lex(src: &'a str) -> Result<Self> {
        let mut tokens = Vec::new();
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            match c {
                ' ' | '\t' => i += 1,
                '~' => {
                    tokens.push((Token::Tilde, i));
                    i += 1;
                }
                '+' => {
                    tokens.push((Token::Plus, i));
                    i += 1;
                }
                '|' => {
                    tokens.push((Token::Bar, i));
                    i += 1;
                }
                '(' => {
                    tokens.push((Token::LParen, i));
                    i += 1;
                }
                ')' => {
                    tokens.push((Token::RParen, i));
                    i += 1;
                }
                '^' => {
                    tokens.push((Token::Caret, i));
                    i += 1;
                }
                ':' => {
                    tokens.push((Token::Colon, i));
                    i += 1;
                }
                c if c.is_ascii_digit() => {
                    let start = i;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                    let text = &src[start..i];
                    let value = text.parse::<u32>().map_err(|_| Error::Syntax {
                        position: start,
                        message: format!("invalid integer `{text}`"),
                    })?;
                    tokens.push((Token::Int(value), start));
                }
                c if c.is_ascii_alphabetic() || c == '_' || c == '.' => {
                    let start = i;
                    while i < bytes.len() {
                        let ch = bytes[i] as char;
                        if ch.is_ascii_alphanumeric() || ch == '_' || ch == '.' {
                            i += 1;
                        } else {
                            break;
                        }
                    }
                    tokens.push((Token::Ident(src[start..i].to_string()), start));
                }
                other => {
                    return Err(Error::Syntax {
                        position: i,
                        message: format!("unexpected character `{other}`"),
                    })
                }
            }
        }
        Ok(Lexer { src, tokens })
    }
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(Token, usize)> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<(Token, usize)> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |(_, p)| *p)
    }

    fn expect_ident(&mut self, what: &str) -> Result<String> {
        match self.next() {
            Some((Token::Ident(name), _)) => Ok(name),
            other => Err(Error::Syntax {
                position: other.map_or(self.end, |(_, p)| p),
                message: format!("expected {what}"),
            }),
        }
    }

    /// One term: `0`, `1`, `name`, `name^k`, or `a:b`. Returns `None` for the
    /// intercept literals, which are reported through the `intercept` flag.
    fn parse_term(&mut self, intercept: &mut Option<bool>) -> Result<Option<Term>> {
        match self.next() {
            Some((Token::Int(0), _)) => {
                *intercept = Some(false);
                Ok(None)
            }
            Some((Token::Int(1), _)) => {
                *intercept = Some(true);
                Ok(None)
            }
            Some((Token::Int(other), position)) => Err(Error::Syntax {
                position,
                message: format!("unexpected integer `{other}` (only 0 and 1 control the intercept)"),
            }),
            Some((Token::Ident(name), _)) => match self.peek() {
                Some((Token::Caret, _)) => {
                    self.next();
                    match self.next() {
                        Some((Token::Int(k), position)) => {
                            if !(1..=4).contains(&k) {
                                return Err(Error::Syntax {
                                    position,
                                    message: format!("power {k} out of range (1..=4)"),
                                });
                            }
                            Ok(Some(Term::Power(name, k)))
                        }
                        other => Err(Error::Syntax {
                            position: other.map_or(self.end, |(_, p)| p),
                            message: "expected an integer power after `^`".into(),
                        }),
                    }
                }
                Some((Token::Colon, _)) => {
                    self.next();
                    let rhs = self.expect_ident("a column name after `:`")?;
                    Ok(Some(Term::Interaction(name, rhs)))
                }
                _ => Ok(Some(Term::Column(name))),
            },
            other => Err(Error::Syntax {
                position: other.map_or(self.end, |(_, p)| p),
                message: "expected a term".into(),
            }),
        }
    }
}

/// Parse a model formula into a [`ModelSpec`].
pub fn parse_formula(text: &str) -> Result<ModelSpec> {
    let lexer = Lexer::lex(text)?;
    let end = lexer.src.len();
    let mut p = Parser { tokens: lexer.tokens, pos: 0, end };

    let response = p.expect_ident("a response column name")?;
    match p.next() {
        Some((Token::Tilde, _)) => {}
        other => {
            return Err(Error::Syntax {
                position: other.map_or(end, |(_, pos)| pos),
                message: "expected `~` after the response".into(),
            })
        }
    }

    let mut fixed_terms = Vec::new();
    let mut fixed_intercept: Option<bool> = None;
    let mut random: Option<(Vec<Term>, bool, String)> = None;

    loop {
        if let Some((Token::LParen, _)) = p.peek() {
            p.next();
            if random.is_some() {
                return Err(Error::MultipleGroupClauses);
            }
            let mut re_terms = Vec::new();
            let mut re_intercept: Option<bool> = None;
            loop {
                if let Some(term) = p.parse_term(&mut re_intercept)? {
                    re_terms.push(term);
                }
                match p.next() {
                    Some((Token::Plus, _)) => continue,
                    Some((Token::Bar, _)) => break,
                    other => {
                        return Err(Error::Syntax {
                            position: other.map_or(end, |(_, pos)| pos),
                            message: "expected `+` or `|` inside the group clause".into(),
                        })
                    }
                }
            }
            let group = p.expect_ident("a grouping column name")?;
            match p.next() {
                Some((Token::RParen, _)) => {}
                other => {
                    return Err(Error::Syntax {
                        position: other.map_or(end, |(_, pos)| pos),
                        message: "expected `)` to close the group clause".into(),
                    })
                }
            }
            random = Some((re_terms, re_intercept.unwrap_or(true), group));
        } else if let Some(term) = p.parse_term(&mut fixed_intercept)? {
            fixed_terms.push(term);
        }

        match p.next() {
            Some((Token::Plus, _)) => continue,
            None => break,
            Some((tok, position)) => {
                return Err(Error::Syntax {
                    position,
                    message: format!("unexpected token {tok:?}"),
                })
            }
        }
    }

    let (random_terms, random_intercept, group) = random.ok_or(Error::Syntax {
        position: end,
        message: "formula needs a random-effects clause `( ... | group )`".into(),
    })?;

    Ok(ModelSpec {
        response,
        fixed_terms,
        random_terms,
        group,
        fixed_intercept: fixed_intercept.unwrap_or(true),
        random_intercept,
    })
}
