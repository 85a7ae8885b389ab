//! Recursive-descent parser producing an unresolved syntax tree.

use super::lexer::{Token, TokenKind};
use super::{ParseDiagnostic, SourceSpan};
use crate::model::{ChannelMode, Sort};

pub(crate) const RESERVED: &[&str] = &[
    "Protocol",
    "Types",
    "Knowledge",
    "Actions",
    "Goals",
    "secret",
    "between",
    "authenticates",
    "injectively",
    "on",
    "inv",
];

const SECTIONS: &[&str] = &["Types", "Knowledge", "Actions", "Goals"];

#[derive(Debug, Clone)]
pub(crate) enum RawKind {
    Ident(String),
    App(String, Vec<RawTerm>),
    Enc(Box<RawTerm>, Box<RawTerm>),
    Inv(Box<RawTerm>),
    Pair(Box<RawTerm>, Box<RawTerm>),
}

#[derive(Debug, Clone)]
pub(crate) struct RawTerm {
    pub kind: RawKind,
    pub span: SourceSpan,
}

#[derive(Debug, Clone)]
pub(crate) struct Spanned<T> {
    pub value: T,
    pub span: SourceSpan,
}

#[derive(Debug)]
pub(crate) struct RawAction {
    pub sender: Spanned<String>,
    pub mode: ChannelMode,
    pub receiver: Spanned<String>,
    pub payload: RawTerm,
}

#[derive(Debug)]
pub(crate) enum RawGoal {
    Secrecy { term: RawTerm, parties: Vec<Spanned<String>> },
    Agreement {
        claimer: Spanned<String>,
        peer: Spanned<String>,
        injective: bool,
        on: Vec<RawTerm>,
    },
}

#[derive(Debug, Default)]
pub(crate) struct RawProtocol {
    pub name: String,
    pub types: Vec<(Sort, Vec<Spanned<String>>)>,
    pub knowledge: Vec<(Spanned<String>, Vec<RawTerm>)>,
    pub actions: Vec<RawAction>,
    pub actions_span: Option<SourceSpan>,
    pub goals: Vec<RawGoal>,
}

pub(crate) struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseDiagnostic>;

impl Parser {
    pub fn new(tokens: Vec<Token>) -> Self {
        Parser { tokens, pos: 0 }
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &Token {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> ParseDiagnostic {
        let t = self.peek();
        ParseDiagnostic::error(
            "syntax-error",
            t.span,
            format!("expected {expected}, found {}", t.describe()),
        )
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> PResult<Token> {
        if self.peek().kind == kind {
            Ok(self.bump())
        } else {
            Err(self.unexpected(what))
        }
    }

    fn peek_word(&self) -> Option<&str> {
        match &self.peek().kind {
            TokenKind::Ident(s) => Some(s),
            _ => None,
        }
    }

    fn is_word(&self, w: &str) -> bool {
        self.peek_word() == Some(w)
    }

    fn expect_word(&mut self, w: &str) -> PResult<Token> {
        if self.is_word(w) {
            Ok(self.bump())
        } else {
            Err(self.unexpected(&format!("`{w}`")))
        }
    }

    /// A non-reserved identifier.
    fn ident(&mut self) -> PResult<Spanned<String>> {
        match &self.peek().kind {
            TokenKind::Ident(s) if RESERVED.contains(&s.as_str()) => Err(ParseDiagnostic::error(
                "syntax-error",
                self.peek().span,
                format!("`{s}` is a reserved word"),
            )),
            TokenKind::Ident(s) => {
                let value = s.clone();
                let span = self.bump().span;
                Ok(Spanned { value, span })
            }
            _ => Err(self.unexpected("an identifier")),
        }
    }

    fn at_section_start(&self) -> bool {
        matches!(&self.peek().kind, TokenKind::Ident(s) if SECTIONS.contains(&s.as_str()))
            && self.peek_at(1).kind == TokenKind::Colon
    }

    fn at_eof(&self) -> bool {
        self.peek().kind == TokenKind::Eof
    }

    pub fn protocol(&mut self) -> PResult<RawProtocol> {
        self.expect_word("Protocol")?;
        self.expect(TokenKind::Colon, "`:`")?;
        let name = self.ident()?.value;
        let mut out = RawProtocol { name, ..Default::default() };
        let mut seen: Vec<String> = Vec::new();
        while !self.at_eof() {
            if !self.at_section_start() {
                return Err(self.unexpected("a section header (Types, Knowledge, Actions, Goals)"));
            }
            let header = self.bump();
            let TokenKind::Ident(section) = header.kind else { unreachable!() };
            if seen.contains(&section) {
                return Err(ParseDiagnostic::error(
                    "duplicate-section",
                    header.span,
                    format!("section `{section}` appears twice"),
                ));
            }
            seen.push(section.clone());
            self.bump(); // colon
            match section.as_str() {
                "Types" => self.types(&mut out)?,
                "Knowledge" => self.knowledge(&mut out)?,
                "Actions" => {
                    out.actions_span = Some(header.span);
                    self.actions(&mut out)?
                }
                _ => self.goals(&mut out)?,
            }
        }
        Ok(out)
    }

    fn types(&mut self, out: &mut RawProtocol) -> PResult<()> {
        while let Some(word) = self.peek_word() {
            let Some(sort) = Sort::from_keyword(word) else {
                if self.at_section_start() {
                    break;
                }
                return Err(self.unexpected("a sort name"));
            };
            self.bump();
            let ids = self.identlist()?;
            self.expect(TokenKind::Semi, "`;`")?;
            out.types.push((sort, ids));
            if self.at_section_start() {
                break;
            }
        }
        if out.types.is_empty() {
            return Err(self.unexpected("a sort name"));
        }
        Ok(())
    }

    fn knowledge(&mut self, out: &mut RawProtocol) -> PResult<()> {
        let mut any = false;
        while !self.at_eof() && !self.at_section_start() {
            let role = self.ident()?;
            self.expect(TokenKind::Colon, "`:`")?;
            let terms = self.termlist()?;
            self.expect(TokenKind::Semi, "`;`")?;
            out.knowledge.push((role, terms));
            any = true;
        }
        if !any {
            return Err(self.unexpected("a knowledge entry"));
        }
        Ok(())
    }

    fn actions(&mut self, out: &mut RawProtocol) -> PResult<()> {
        while !self.at_eof() && !self.at_section_start() {
            let sender = self.ident()?;
            let mode = match self.peek().kind {
                TokenKind::Arrow(m) => {
                    self.bump();
                    m
                }
                _ => return Err(self.unexpected("an arrow (->, *->, ->*, *->*)")),
            };
            let receiver = self.ident()?;
            self.expect(TokenKind::Colon, "`:`")?;
            let payload = self.term()?;
            out.actions.push(RawAction { sender, mode, receiver, payload });
        }
        Ok(())
    }

    fn goals(&mut self, out: &mut RawProtocol) -> PResult<()> {
        let start = self.peek().span;
        while !self.at_eof() && !self.at_section_start() {
            let g = self.goal()?;
            out.goals.push(g);
        }
        if out.goals.is_empty() {
            return Err(ParseDiagnostic::error("syntax-error", start, "expected at least one goal"));
        }
        Ok(())
    }

    fn goal(&mut self) -> PResult<RawGoal> {
        let second = match &self.peek_at(1).kind {
            TokenKind::Ident(s) => Some(s.as_str()),
            _ => None,
        };
        if matches!(self.peek().kind, TokenKind::Ident(_))
            && matches!(second, Some("authenticates" | "injectively"))
        {
            let claimer = self.ident()?;
            let injective = if self.is_word("injectively") {
                self.bump();
                true
            } else {
                false
            };
            self.expect_word("authenticates")?;
            let peer = self.ident()?;
            self.expect_word("on")?;
            let on = self.termlist()?;
            return Ok(RawGoal::Agreement { claimer, peer, injective, on });
        }
        let start = self.peek().span;
        let term = self.term()?;
        if !self.is_word("secret") {
            return Err(ParseDiagnostic::error(
                "unknown-goal-form",
                if self.at_eof() { start } else { self.peek().span },
                "unknown goal form: expected `<term> secret between <roles>` or \
                 `<role> [injectively] authenticates <role> on <terms>`",
            ));
        }
        self.bump();
        self.expect_word("between")?;
        let parties = self.identlist()?;
        Ok(RawGoal::Secrecy { term, parties })
    }

    fn identlist(&mut self) -> PResult<Vec<Spanned<String>>> {
        let mut ids = vec![self.ident()?];
        while self.peek().kind == TokenKind::Comma {
            self.bump();
            ids.push(self.ident()?);
        }
        Ok(ids)
    }

    /// Comma-separated list whose items are basic terms; a pair inside a list
    /// needs parentheses.
    pub fn termlist(&mut self) -> PResult<Vec<RawTerm>> {
        let mut items = vec![self.basic()?];
        while self.peek().kind == TokenKind::Comma {
            self.bump();
            items.push(self.basic()?);
        }
        Ok(items)
    }

    pub fn term(&mut self) -> PResult<RawTerm> {
        let left = self.basic()?;
        if self.peek().kind == TokenKind::Comma {
            self.bump();
            let right = self.term()?;
            let span = left.span;
            return Ok(RawTerm { kind: RawKind::Pair(Box::new(left), Box::new(right)), span });
        }
        Ok(left)
    }

    fn basic(&mut self) -> PResult<RawTerm> {
        let tok = self.peek().clone();
        match &tok.kind {
            TokenKind::LBrace => {
                self.bump();
                let payload = self.term()?;
                self.expect(TokenKind::RBrace, "`}`")?;
                let key = self.basic()?;
                Ok(RawTerm { kind: RawKind::Enc(Box::new(payload), Box::new(key)), span: tok.span })
            }
            TokenKind::LParen => {
                self.bump();
                let inner = self.term()?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(inner)
            }
            TokenKind::Ident(w) if w == "inv" => {
                self.bump();
                self.expect(TokenKind::LParen, "`(`")?;
                let inner = self.term()?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(RawTerm { kind: RawKind::Inv(Box::new(inner)), span: tok.span })
            }
            TokenKind::Ident(_) => {
                let id = self.ident()?;
                if self.peek().kind == TokenKind::LParen {
                    self.bump();
                    let args = self.termlist()?;
                    self.expect(TokenKind::RParen, "`)`")?;
                    Ok(RawTerm { kind: RawKind::App(id.value, args), span: id.span })
                } else {
                    Ok(RawTerm { kind: RawKind::Ident(id.value), span: id.span })
                }
            }
            _ => Err(self.unexpected("a term")),
        }
    }

    pub fn expect_eof(&self) -> PResult<()> {
        if self.at_eof() {
            Ok(())
        } else {
            Err(self.unexpected("end of input"))
        }
    }
}
