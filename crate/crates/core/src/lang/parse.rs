//! Text grammar for actions, conditions and properties.
//!
//! ```text
//! action   := [ assign { ";" assign } [ ";" ] ]
//! assign   := IDENT ":=" expr
//! cond     := disj [ ("implies" | "=>") cond ]
//! disj     := conj { ("or" | "||") conj }
//! conj     := neg { ("and" | "&&") neg }
//! neg      := ("not" | "!") neg | atom
//! atom     := "true" | "false" | "active" "(" STRING ")"
//!           | "(" cond ")" | expr CMP expr
//! CMP      := "=" | "==" | "!=" | "<" | "<=" | ">" | ">="
//! expr     := term { ("+" | "-") term }
//! term     := unary { "*" unary }        -- one side must be a literal
//! unary    := "-" unary | INT | IDENT | "(" expr ")"
//! ```

use num_bigint::BigInt;
use thiserror::Error;

use super::expr::{CmpOp, Cond, Expr};
use super::Action;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Int(BigInt),
    Ident(String),
    Str(String),
    Assign,
    Semi,
    LParen,
    RParen,
    Plus,
    Minus,
    Star,
    Cmp(CmpOp),
    AndAnd,
    OrOr,
    Bang,
    Arrow,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset, message: &str| ParseError { offset, message: message.to_string() };
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let two = src.get(i..i + 2).unwrap_or("");
        let tok = match two {
            ":=" => Some(Tok::Assign),
            "==" => Some(Tok::Cmp(CmpOp::Eq)),
            "!=" => Some(Tok::Cmp(CmpOp::Ne)),
            "<=" => Some(Tok::Cmp(CmpOp::Le)),
            ">=" => Some(Tok::Cmp(CmpOp::Ge)),
            "&&" => Some(Tok::AndAnd),
            "||" => Some(Tok::OrOr),
            "=>" => Some(Tok::Arrow),
            _ => None,
        };
        if let Some(tok) = tok {
            out.push((start, tok));
            i += 2;
            continue;
        }
        let tok = match c {
            ';' => Tok::Semi,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '=' => Tok::Cmp(CmpOp::Eq),
            '<' => Tok::Cmp(CmpOp::Lt),
            '>' => Tok::Cmp(CmpOp::Gt),
            '!' => Tok::Bang,
            '"' | '\'' => {
                let close = src[i + 1..]
                    .find(c)
                    .ok_or_else(|| err(start, "unterminated string"))?;
                let s = src[i + 1..i + 1 + close].to_string();
                i += close + 2;
                out.push((start, Tok::Str(s)));
                continue;
            }
            _ if c.is_ascii_digit() => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let n: BigInt = src[start..i].parse().expect("digits");
                out.push((start, Tok::Int(n)));
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(src[start..i].to_string())));
                continue;
            }
            _ => return Err(err(start, &format!("unexpected character '{c}'"))),
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

const KEYWORDS: &[&str] = &["and", "or", "not", "true", "false", "implies", "active"];

impl Parser {
    fn new(src: &str) -> Result<Self, ParseError> {
        Ok(Parser { toks: lex(src)?, pos: 0, end: src.len() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { offset: self.offset(), message: message.into() })
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.eat(&tok) {
            Ok(())
        } else {
            self.error(format!("expected {what}"))
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos < self.toks.len() {
            self.error("unexpected trailing input")
        } else {
            Ok(())
        }
    }

    fn action(&mut self) -> Result<Action, ParseError> {
        let mut assigns = Vec::new();
        while self.peek().is_some() {
            let name = match self.bump() {
                Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => s,
                _ => {
                    self.pos -= 1;
                    return self.error("expected assignment target");
                }
            };
            self.expect(Tok::Assign, "':='")?;
            let rhs = self.expr()?;
            assigns.push((name, rhs));
            if !self.eat(&Tok::Semi) {
                break;
            }
        }
        Ok(Action { assigns })
    }

    fn cond(&mut self) -> Result<Cond<String>, ParseError> {
        let lhs = self.disj()?;
        if self.eat_keyword("implies") || self.eat(&Tok::Arrow) {
            let rhs = self.cond()?;
            return Ok(Cond::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn disj(&mut self) -> Result<Cond<String>, ParseError> {
        let mut items = vec![self.conj()?];
        while self.eat_keyword("or") || self.eat(&Tok::OrOr) {
            items.push(self.conj()?);
        }
        Ok(Cond::or(items))
    }

    fn conj(&mut self) -> Result<Cond<String>, ParseError> {
        let mut items = vec![self.neg()?];
        while self.eat_keyword("and") || self.eat(&Tok::AndAnd) {
            items.push(self.neg()?);
        }
        Ok(Cond::and(items))
    }

    fn neg(&mut self) -> Result<Cond<String>, ParseError> {
        if self.eat_keyword("not") || self.eat(&Tok::Bang) {
            return Ok(Cond::not(self.neg()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Cond<String>, ParseError> {
        if self.eat_keyword("true") {
            return Ok(Cond::Bool(true));
        }
        if self.eat_keyword("false") {
            return Ok(Cond::Bool(false));
        }
        if self.eat_keyword("active") {
            self.expect(Tok::LParen, "'(' after active")?;
            let path = match self.bump() {
                Some(Tok::Str(s)) => s,
                _ => {
                    self.pos -= 1;
                    return self.error("expected quoted state path");
                }
            };
            self.expect(Tok::RParen, "')'")?;
            return Ok(Cond::Active(path));
        }
        if self.peek() == Some(&Tok::LParen) {
            // Either a parenthesized condition or the start of an arithmetic
            // comparison such as `(x + 1) < 3`.
            let save = self.pos;
            self.pos += 1;
            if let Ok(c) = self.cond() {
                if self.eat(&Tok::RParen)
                    && !matches!(
                        self.peek(),
                        Some(Tok::Cmp(_) | Tok::Plus | Tok::Minus | Tok::Star)
                    )
                {
                    return Ok(c);
                }
            }
            self.pos = save;
        }
        let lhs = self.expr()?;
        let op = match self.bump() {
            Some(Tok::Cmp(op)) => op,
            _ => {
                self.pos -= 1;
                return self.error("expected comparison operator");
            }
        };
        let rhs = self.expr()?;
        Ok(Cond::Cmp(op, lhs, rhs))
    }

    fn expr(&mut self) -> Result<Expr<String>, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(&Tok::Plus) {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(&Tok::Minus) {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr<String>, ParseError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::Star) {
            let at = self.offset();
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = match (lhs, rhs) {
                (Expr::Const(k), rhs) => Expr::Mul(k, Box::new(rhs)),
                (lhs, Expr::Const(k)) => Expr::Mul(k, Box::new(lhs)),
                _ => {
                    return Err(ParseError {
                        offset: at,
                        message: "non-linear multiplication: one operand must be a literal"
                            .into(),
                    })
                }
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr<String>, ParseError> {
        match self.bump() {
            Some(Tok::Minus) => match self.peek() {
                Some(Tok::Int(n)) => {
                    let n = -n.clone();
                    self.pos += 1;
                    Ok(Expr::Const(n))
                }
                _ => Ok(Expr::Neg(Box::new(self.unary()?))),
            },
            Some(Tok::Int(n)) => Ok(Expr::Const(n)),
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => Ok(Expr::Var(s)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            _ => {
                self.pos -= 1;
                self.error("expected expression")
            }
        }
    }
}

pub fn parse_action(src: &str) -> Result<Action, ParseError> {
    let mut p = Parser::new(src)?;
    let a = p.action()?;
    p.finish()?;
    Ok(a)
}

pub fn parse_cond(src: &str) -> Result<Cond<String>, ParseError> {
    let mut p = Parser::new(src)?;
    let c = p.cond()?;
    p.finish()?;
    Ok(c)
}

pub fn parse_expr(src: &str) -> Result<Expr<String>, ParseError> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

/// Checks the identifier syntax used for variables, events and state names.
pub fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sequenced_assignments() {
        let a = parse_action("x := x + 1; y := x;").unwrap();
        assert_eq!(a.assigns.len(), 2);
        assert_eq!(a.to_string(), "x := x + 1; y := x");
        assert!(parse_action("").unwrap().assigns.is_empty());
    }

    #[test]
    fn parenthesized_arithmetic_in_comparison() {
        let c = parse_cond("(x + 1) < 3").unwrap();
        assert_eq!(c.to_string(), "x + 1 < 3");
        let c = parse_cond("(x < 3) and not (y = 0)").unwrap();
        assert_eq!(c.to_string(), "(x < 3) and not (y = 0)");
    }

    #[test]
    fn active_atoms_accept_both_quotes() {
        assert_eq!(parse_cond("active('Run')").unwrap(), Cond::Active("Run".into()));
        let c = parse_cond("active(\"Run\") implies cent >= 0").unwrap();
        assert!(matches!(c, Cond::Implies(..)));
    }

    #[test]
    fn rejects_nonlinear_product() {
        let e = parse_expr("x * y").unwrap_err();
        assert!(e.message.contains("non-linear"));
        assert!(parse_expr("2 * x * 3").is_ok());
    }

    #[test]
    fn reports_offsets() {
        let e = parse_cond("x < ").unwrap_err();
        assert_eq!(e.offset, 4);
        let e = parse_action("x = 1").unwrap_err();
        assert_eq!(e.offset, 2);
    }

    #[test]
    fn negative_literals_round_trip() {
        let e = parse_expr("x - -3").unwrap();
        assert_eq!(e.to_string(), "x - (-3)");
        assert_eq!(parse_expr(&e.to_string()).unwrap(), e);
    }
}
