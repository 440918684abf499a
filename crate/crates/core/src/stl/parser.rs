//! Recursive-descent parser for the formula grammar in `docs/stl-grammar.md`.

use nalgebra::Vector3;

use super::formula::{Formula, Interval, Predicate};
use super::StlError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Semi,
    And,
    Or,
    Not,
    End,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, StlError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            ',' => Some(Tok::Comma),
            ';' => Some(Tok::Semi),
            '∧' => Some(Tok::And),
            '∨' => Some(Tok::Or),
            '¬' | '!' => Some(Tok::Not),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token { tok, pos });
            i += 1;
            continue;
        }
        if c == '&' || c == '|' {
            let tok = if c == '&' { Tok::And } else { Tok::Or };
            // accept both `&` and `&&`
            i += 1;
            if i < chars.len() && chars[i].1 == c {
                i += 1;
            }
            out.push(Token { tok, pos });
            continue;
        }
        if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i].1;
                let prev = chars[i - 1].1;
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' {
                    i += 1;
                } else if (d == '-' || d == '+') && (prev == 'e' || prev == 'E') {
                    i += 1;
                } else {
                    break;
                }
            }
            let end = if i < chars.len() { chars[i].0 } else { text.len() };
            let s = &text[pos..end];
            let v: f64 = s.parse().map_err(|_| StlError::Syntax {
                pos: chars[start].0,
                message: format!("invalid number `{s}`"),
            })?;
            out.push(Token { tok: Tok::Num(v), pos });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            i += 1;
            while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                i += 1;
            }
            let end = if i < chars.len() { chars[i].0 } else { text.len() };
            let word = &text[pos..end];
            let tok = match word {
                "and" => Tok::And,
                "or" => Tok::Or,
                "not" => Tok::Not,
                _ => Tok::Ident(word.to_string()),
            };
            out.push(Token { tok, pos });
            continue;
        }
        return Err(StlError::Syntax {
            pos,
            message: format!("unexpected character `{c}`"),
        });
    }
    out.push(Token {
        tok: Tok::End,
        pos: text.len(),
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].tok
    }

    fn pos(&self) -> usize {
        self.toks[self.at].pos
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, StlError> {
        Err(StlError::Syntax {
            pos: self.pos(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), StlError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn number(&mut self) -> Result<f64, StlError> {
        match *self.peek() {
            Tok::Num(v) => {
                self.bump();
                Ok(v)
            }
            _ => self.err("expected number"),
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == kw)
    }

    fn disjunction(&mut self) -> Result<Formula, StlError> {
        let mut items = vec![self.conjunction()?];
        while *self.peek() == Tok::Or {
            self.bump();
            items.push(self.conjunction()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Formula::or(items)
        })
    }

    fn conjunction(&mut self) -> Result<Formula, StlError> {
        let mut items = vec![self.until()?];
        while *self.peek() == Tok::And {
            self.bump();
            items.push(self.until()?);
        }
        Ok(Formula::and(items))
    }

    fn until(&mut self) -> Result<Formula, StlError> {
        let lhs = self.unary()?;
        if self.is_keyword("U") {
            self.bump();
            let iv = self.interval()?;
            let rhs = self.unary()?;
            return Ok(Formula::until(iv, lhs, rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, StlError> {
        match self.peek().clone() {
            Tok::Not => {
                self.bump();
                Ok(Formula::not(self.unary()?))
            }
            Tok::Ident(w) if w == "G" || w == "F" => {
                self.bump();
                let iv = self.interval()?;
                let inner = self.unary()?;
                Ok(if w == "G" {
                    Formula::always(iv, inner)
                } else {
                    Formula::eventually(iv, inner)
                })
            }
            Tok::Ident(w) if w == "U" => {
                self.bump();
                let iv = self.interval()?;
                self.expect(Tok::LParen, "`(` after until interval")?;
                let lhs = self.disjunction()?;
                self.expect(Tok::Comma, "`,` between until operands")?;
                let rhs = self.disjunction()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Formula::until(iv, lhs, rhs))
            }
            _ => self.atom(),
        }
    }

    fn interval(&mut self) -> Result<Interval, StlError> {
        self.expect(Tok::LBracket, "`[` opening a time interval")?;
        let pos = self.pos();
        let lo = self.number()?;
        self.expect(Tok::Comma, "`,` inside interval")?;
        let hi = self.number()?;
        self.expect(Tok::RBracket, "`]` closing a time interval")?;
        Interval::new(lo, hi).map_err(|_| StlError::Syntax {
            pos,
            message: format!("interval [{lo},{hi}] must satisfy 0 <= a <= b"),
        })
    }

    fn point(&mut self) -> Result<Vector3<f64>, StlError> {
        let x = self.number()?;
        self.expect(Tok::Comma, "`,`")?;
        let y = self.number()?;
        self.expect(Tok::Comma, "`,`")?;
        let z = self.number()?;
        Ok(Vector3::new(x, y, z))
    }

    fn atom(&mut self) -> Result<Formula, StlError> {
        let tok = self.peek().clone();
        match tok {
            Tok::LParen => {
                self.bump();
                let f = self.disjunction()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(f)
            }
            Tok::Ident(w) => match w.as_str() {
                "true" => {
                    self.bump();
                    Ok(Formula::True)
                }
                "false" => {
                    self.bump();
                    Ok(Formula::not(Formula::True))
                }
                "ball" | "outside" => {
                    self.bump();
                    self.expect(Tok::LParen, "`(`")?;
                    let center = self.point()?;
                    self.expect(Tok::Semi, "`;` before radius")?;
                    let rpos = self.pos();
                    let radius = self.number()?;
                    self.expect(Tok::RParen, "`)`")?;
                    if !(radius > 0.0) {
                        return Err(StlError::Syntax {
                            pos: rpos,
                            message: "radius must be positive".into(),
                        });
                    }
                    Ok(Formula::Pred(if w == "ball" {
                        Predicate::Ball { center, radius }
                    } else {
                        Predicate::Outside { center, radius }
                    }))
                }
                "avoid" => {
                    self.bump();
                    self.expect(Tok::LParen, "`(`")?;
                    let field = match self.peek().clone() {
                        Tok::Ident(name) => {
                            self.bump();
                            name
                        }
                        _ => return self.err("expected obstacle set name"),
                    };
                    self.expect(Tok::Semi, "`;` before margin")?;
                    let mpos = self.pos();
                    let margin = self.number()?;
                    self.expect(Tok::RParen, "`)`")?;
                    if margin < 0.0 {
                        return Err(StlError::Syntax {
                            pos: mpos,
                            message: "margin must be non-negative".into(),
                        });
                    }
                    Ok(Formula::Pred(Predicate::Avoid { field, margin }))
                }
                other => self.err(format!("unknown identifier `{other}`")),
            },
            Tok::End => self.err("unexpected end of input"),
            _ => self.err("expected formula"),
        }
    }
}

/// Parses a formula from its textual form.
pub fn parse_formula(text: &str) -> Result<Formula, StlError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, at: 0 };
    let f = p.disjunction()?;
    if *p.peek() != Tok::End {
        return p.err("trailing input");
    }
    Ok(f)
}
