//! Concrete syntax of the pivot notation (`.anb` files).
//!
//! ```text
//! Protocol: NSPK
//! Types:
//!   Agent A,B;
//!   Number NA,NB;
//!   PublicKey pk;
//! Knowledge:
//!   A: A,B,pk,inv(pk(A));
//!   B: B,pk,inv(pk(B));
//! Actions:
//!   A -> B: {NA,A}pk(B)
//!   B -> A: {NA,NB}pk(A)
//!   A -> B: {NB}pk(B)
//! Goals:
//!   NB secret between A,B
//!   B injectively authenticates A on NA,NB
//! ```
//!
//! `{m}k` is resolved by the sort of `k`: a public key gives asymmetric
//! encryption, `inv(..)` a signature, anything else symmetric encryption.
//! An identifier declared with a key sort and used with arguments is a
//! key-valued function (`pk(B)` above).

mod lexer;
mod parser;

use std::collections::BTreeMap;
use std::fmt;

use crate::model::{
    term_sort, Action, Declarations, Goal, ProtocolSpec, Sort, Term, TermList,
};
use parser::{Parser, RawGoal, RawKind, RawProtocol, RawTerm, Spanned};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SourceSpan {
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseDiagnostic {
    pub severity: Severity,
    pub span: SourceSpan,
    pub message: String,
    pub code: &'static str,
}

impl ParseDiagnostic {
    pub fn error(code: &'static str, span: SourceSpan, message: impl Into<String>) -> Self {
        ParseDiagnostic { severity: Severity::Error, span, message: message.into(), code }
    }

    pub fn warning(code: &'static str, span: SourceSpan, message: impl Into<String>) -> Self {
        ParseDiagnostic { severity: Severity::Warning, span, message: message.into(), code }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{}:{}: {sev}[{}]: {}",
            self.span.line, self.span.column, self.code, self.message
        )
    }
}

/// A successfully parsed protocol together with any warnings.
#[derive(Debug, Clone)]
pub struct Parsed {
    pub spec: ProtocolSpec,
    pub warnings: Vec<ParseDiagnostic>,
}

pub fn parse_protocol(source: &str) -> Result<ProtocolSpec, Vec<ParseDiagnostic>> {
    parse_protocol_with_warnings(source).map(|p| p.spec)
}

pub fn parse_protocol_with_warnings(source: &str) -> Result<Parsed, Vec<ParseDiagnostic>> {
    let tokens = lexer::tokenize(source).map_err(|d| vec![d])?;
    let mut parser = Parser::new(tokens);
    let raw = parser.protocol().map_err(|d| vec![d])?;
    resolve_protocol(raw)
}

/// Parses a single term against known declarations.
pub fn parse_term(source: &str, decls: &Declarations) -> Result<Term, Vec<ParseDiagnostic>> {
    let tokens = lexer::tokenize(source).map_err(|d| vec![d])?;
    let mut parser = Parser::new(tokens);
    let raw = parser.term().map_err(|d| vec![d])?;
    parser.expect_eof().map_err(|d| vec![d])?;
    let mut r = Resolver { decls, diags: Vec::new() };
    let t = r.term(&raw);
    match t {
        Some(t) if r.diags.iter().all(|d| !d.is_error()) => Ok(t),
        _ => Err(r.diags),
    }
}

struct Resolver<'a> {
    decls: &'a Declarations,
    diags: Vec<ParseDiagnostic>,
}

impl Resolver<'_> {
    fn err(&mut self, code: &'static str, span: SourceSpan, msg: String) {
        self.diags.push(ParseDiagnostic::error(code, span, msg));
    }

    fn term(&mut self, raw: &RawTerm) -> Option<Term> {
        match &raw.kind {
            RawKind::Ident(name) => match self.decls.sort_of(name) {
                Some(sort) => Some(Term::atom(name.clone(), sort)),
                None => {
                    self.err("undeclared-identifier", raw.span, format!("undeclared identifier `{name}`"));
                    None
                }
            },
            RawKind::App(f, args) => {
                let args: Vec<Option<Term>> = args.iter().map(|a| self.term(a)).collect();
                match self.decls.sort_of(f) {
                    None => {
                        self.err("undeclared-identifier", raw.span, format!("undeclared identifier `{f}`"));
                        None
                    }
                    Some(s) if !s.is_function_like() => {
                        self.err("not-a-function", raw.span, format!("`{f}` is declared {s} and cannot be applied"));
                        None
                    }
                    Some(_) => {
                        let args: Option<Vec<Term>> = args.into_iter().collect();
                        Some(Term::app(f.clone(), args?))
                    }
                }
            }
            RawKind::Pair(a, b) => {
                let (a, b) = (self.term(a), self.term(b));
                Some(Term::pair(a?, b?))
            }
            RawKind::Inv(inner) => {
                let t = self.term(inner)?;
                match term_sort(&t, self.decls) {
                    Ok(Sort::PublicKey) => Some(Term::inv(t)),
                    _ => {
                        self.err("invalid-inverse", raw.span, format!("inv() expects a public key, found `{t}`"));
                        None
                    }
                }
            }
            RawKind::Enc(payload, key) => {
                let (m, k) = (self.term(payload), self.term(key));
                let (m, k) = (m?, k?);
                match term_sort(&k, self.decls) {
                    Ok(Sort::PublicKey) => Some(Term::aenc(m, k)),
                    Ok(Sort::PrivateKey) => Some(Term::sign(m, k)),
                    Ok(Sort::SymmetricKey) => Some(Term::senc(m, k)),
                    Ok(Sort::Untyped) if matches!(k, Term::FunApp { .. }) => Some(Term::senc(m, k)),
                    _ => {
                        self.err("invalid-key", key.span, format!("`{k}` cannot be used as an encryption key"));
                        None
                    }
                }
            }
        }
    }

    fn role(&mut self, id: &Spanned<String>) -> String {
        match self.decls.sort_of(&id.value) {
            Some(Sort::Agent) => {}
            Some(s) => self.err("role-not-agent", id.span, format!("`{}` is declared {s}, not Agent", id.value)),
            None => self.err(
                "undeclared-identifier",
                id.span,
                format!("undeclared identifier `{}`", id.value),
            ),
        }
        id.value.clone()
    }
}

fn resolve_protocol(raw: RawProtocol) -> Result<Parsed, Vec<ParseDiagnostic>> {
    let mut diags = Vec::new();
    let mut decls = Declarations::new();
    for (sort, ids) in &raw.types {
        for id in ids {
            if decls.insert(id.value.clone(), *sort).is_some() {
                diags.push(ParseDiagnostic::error(
                    "duplicate-declaration",
                    id.span,
                    format!("`{}` is declared more than once", id.value),
                ));
            }
        }
    }

    let mut r = Resolver { decls: &decls, diags };
    let mut knowledge = BTreeMap::new();
    for (role, terms) in &raw.knowledge {
        let name = r.role(role);
        let terms: Vec<Term> = terms.iter().filter_map(|t| r.term(t)).collect();
        if knowledge.insert(name, terms).is_some() {
            r.err("duplicate-knowledge", role.span, format!("role `{}` has two knowledge entries", role.value));
        }
    }

    let mut actions = Vec::new();
    for a in &raw.actions {
        let sender = r.role(&a.sender);
        let receiver = r.role(&a.receiver);
        if sender == receiver {
            r.err("sender-equals-receiver", a.receiver.span, "sender equals receiver".into());
        }
        if let Some(payload) = r.term(&a.payload) {
            actions.push(Action { sender, receiver, mode: a.mode, payload });
        }
    }
    if raw.actions.is_empty() {
        let span = raw.actions_span.unwrap_or(SourceSpan { line: 1, column: 1, length: 1 });
        r.err("no-actions", span, "protocol has no actions".into());
    }
    let mut roles: Vec<&Spanned<String>> = Vec::new();
    for a in &raw.actions {
        for id in [&a.sender, &a.receiver] {
            if !roles.iter().any(|r| r.value == id.value) {
                roles.push(id);
            }
        }
    }
    let mut warnings = Vec::new();
    for id in &roles {
        if !knowledge.contains_key(&id.value) {
            r.err("missing-knowledge", id.span, format!("role `{}` has no knowledge entry", id.value));
        }
        if !id.value.starts_with(|c: char| c.is_ascii_uppercase()) {
            warnings.push(ParseDiagnostic::warning(
                "role-case",
                id.span,
                format!("role `{}` should start with an uppercase letter", id.value),
            ));
        }
    }

    let mut goals = Vec::new();
    for g in &raw.goals {
        match g {
            RawGoal::Secrecy { term, parties } => {
                let t = r.term(term);
                let parties: Vec<String> = parties.iter().map(|p| r.role(p)).collect();
                if let Some(t) = t {
                    if !actions.iter().any(|a| a.payload.contains(&t)) {
                        r.err("goal-term-absent", term.span, format!("`{t}` does not occur in any action"));
                    }
                    goals.push(Goal::Secrecy { term: t, parties });
                }
            }
            RawGoal::Agreement { claimer, peer, injective, on } => {
                let claimer = r.role(claimer);
                let peer = r.role(peer);
                let mut terms = Vec::new();
                for raw_t in on {
                    if let Some(t) = r.term(raw_t) {
                        if !actions.iter().any(|a| a.payload.contains(&t)) {
                            r.err("goal-term-absent", raw_t.span, format!("`{t}` does not occur in any action"));
                        }
                        terms.push(t);
                    }
                }
                goals.push(if *injective {
                    Goal::InjAgreement { claimer, peer, on: terms }
                } else {
                    Goal::WeakAgreement { claimer, peer, on: terms }
                });
            }
        }
    }

    let diags = r.diags;
    if diags.iter().any(ParseDiagnostic::is_error) {
        let mut all = diags;
        all.extend(warnings);
        return Err(all);
    }
    warnings.extend(diags);
    let spec = ProtocolSpec { name: raw.name, declarations: decls, knowledge, actions, goals };
    Ok(Parsed { spec, warnings })
}

/// Canonical text of a protocol; reparses to a structurally equal spec.
pub fn pretty_print(spec: &ProtocolSpec) -> String {
    let mut out = format!("Protocol: {}\n", spec.name);
    out.push_str("Types:\n");
    for sort in Sort::DECLARABLE {
        let names: Vec<&str> = spec.declarations.names_of(sort).collect();
        if !names.is_empty() {
            out.push_str(&format!("  {} {};\n", sort, names.join(",")));
        }
    }
    out.push_str("Knowledge:\n");
    for (role, terms) in &spec.knowledge {
        out.push_str(&format!("  {role}: {};\n", TermList(terms)));
    }
    out.push_str("Actions:\n");
    for a in &spec.actions {
        out.push_str(&format!("  {a}\n"));
    }
    if !spec.goals.is_empty() {
        out.push_str("Goals:\n");
        for g in &spec.goals {
            out.push_str(&format!("  {g}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChannelMode;

    pub(crate) const NSPK: &str = "\
Protocol: NSPK
Types:
  Agent A,B;
  Number NA,NB;
  PublicKey pk;
Knowledge:
  A: A,B,pk,inv(pk(A));
  B: B,pk,inv(pk(B));
Actions:
  A -> B: {NA,A}pk(B)
  B -> A: {NA,NB}pk(A)
  A -> B: {NB}pk(B)
Goals:
  NB secret between A,B
  B injectively authenticates A on NA,NB
";

    fn decls() -> Declarations {
        parse_protocol(NSPK).unwrap().declarations
    }

    #[test]
    fn nspk_tree_matches_hand_construction() {
        let spec = parse_protocol(NSPK).unwrap();
        let a = || Term::agent("A");
        let b = || Term::agent("B");
        let na = || Term::atom("NA", Sort::Number);
        let nb = || Term::atom("NB", Sort::Number);
        let pk = |x: Term| Term::app("pk", vec![x]);
        assert_eq!(spec.name, "NSPK");
        assert_eq!(spec.actions.len(), 3);
        assert_eq!(spec.goals.len(), 2);
        assert_eq!(
            spec.actions[0],
            Action {
                sender: "A".into(),
                receiver: "B".into(),
                mode: ChannelMode::Plain,
                payload: Term::aenc(Term::pair(na(), a()), pk(b())),
            }
        );
        assert_eq!(spec.actions[1].payload, Term::aenc(Term::pair(na(), nb()), pk(a())));
        assert_eq!(spec.actions[2].payload, Term::aenc(nb(), pk(b())));
        assert_eq!(
            spec.knowledge["A"],
            vec![a(), b(), Term::atom("pk", Sort::PublicKey), Term::inv(pk(a()))]
        );
        assert_eq!(
            spec.goals[0],
            Goal::Secrecy { term: nb(), parties: vec!["A".into(), "B".into()] }
        );
        assert_eq!(
            spec.goals[1],
            Goal::InjAgreement { claimer: "B".into(), peer: "A".into(), on: vec![na(), nb()] }
        );
        assert!(spec.validate().is_empty());
    }

    #[test]
    fn sender_equals_receiver() {
        let src = NSPK.replace("B -> A: {NA,NB}pk(A)", "A -> A: NA");
        let d = parse_protocol(&src).unwrap_err();
        assert!(d.iter().any(|d| d.message == "sender equals receiver"));
    }

    #[test]
    fn empty_actions() {
        let src = "Protocol: P\nTypes: Agent A,B;\nKnowledge: A: A; B: B;\nActions:\n";
        let d = parse_protocol(src).unwrap_err();
        assert_eq!(d[0].message, "protocol has no actions");
        assert_eq!(d[0].code, "no-actions");
    }

    #[test]
    fn undeclared_and_duplicate() {
        let src = NSPK.replace("{NB}pk(B)", "{NC}pk(B)");
        let d = parse_protocol(&src).unwrap_err();
        assert!(d.iter().any(|d| d.code == "undeclared-identifier" && d.message.contains("NC")));
        let src = NSPK.replace("Number NA,NB;", "Number NA,NB,A;");
        let d = parse_protocol(&src).unwrap_err();
        assert!(d.iter().any(|d| d.code == "duplicate-declaration"));
    }

    #[test]
    fn unknown_goal_form() {
        let src = NSPK.replace("NB secret between A,B", "NB leaks to A");
        let d = parse_protocol(&src).unwrap_err();
        assert_eq!(d[0].code, "unknown-goal-form");
    }

    #[test]
    fn syntax_error_has_span() {
        let d = parse_protocol("Protocol: P\nTypes: Agent A B;").unwrap_err();
        assert_eq!(d[0].code, "syntax-error");
        assert_eq!((d[0].span.line, d[0].span.column), (2, 16));
    }

    #[test]
    fn parse_term_dispatch() {
        let d = decls();
        let t = parse_term("{NA,A}pk(B)", &d).unwrap();
        assert_eq!(
            t,
            Term::aenc(
                Term::pair(Term::atom("NA", Sort::Number), Term::agent("A")),
                Term::app("pk", vec![Term::agent("B")])
            )
        );
        assert_eq!(parse_term("NA", &d).unwrap(), Term::atom("NA", Sort::Number));
        assert_eq!(
            parse_term("{NA}inv(pk(A))", &d).unwrap(),
            Term::sign(Term::atom("NA", Sort::Number), Term::inv(Term::app("pk", vec![Term::agent("A")])))
        );
        assert!(parse_term("{NA}NB", &d).is_err());
        assert!(parse_term("NA NB", &d).is_err());
    }

    #[test]
    fn symmetric_dispatch() {
        let mut d = decls();
        d.insert("K", Sort::SymmetricKey);
        d.insert("h", Sort::Function);
        let na = Term::atom("NA", Sort::Number);
        assert_eq!(parse_term("{NA}K", &d).unwrap(), Term::senc(na.clone(), Term::atom("K", Sort::SymmetricKey)));
        assert_eq!(
            parse_term("{NA}h(NA,NB)", &d).unwrap(),
            Term::senc(na.clone(), Term::app("h", vec![na, Term::atom("NB", Sort::Number)]))
        );
    }

    #[test]
    fn pretty_print_round_trip() {
        let spec = parse_protocol(NSPK).unwrap();
        let text = pretty_print(&spec);
        assert_eq!(text, NSPK);
        assert_eq!(parse_protocol(&text).unwrap(), spec);
    }

    #[test]
    fn single_action_line() {
        let src = "Protocol: T\nTypes: Agent A,B; Number NA;\nKnowledge: A: A,B; B: B;\nActions: A -> B: NA\n";
        let text = pretty_print(&parse_protocol(src).unwrap());
        assert_eq!(text.lines().filter(|l| l.trim() == "A -> B: NA").count(), 1);
    }

    #[test]
    fn nested_pairs_print_right_associated() {
        let d = decls();
        let t = parse_term("NA,NB,A", &d).unwrap();
        assert_eq!(t.to_string(), "NA,NB,A");
        let l = parse_term("(NA,NB),A", &d).unwrap();
        assert_eq!(l.to_string(), "(NA,NB),A");
        assert_ne!(t, l);
    }

    #[test]
    fn lowercase_role_warns() {
        let src = "Protocol: T\nTypes: Agent a,B; Number NA;\nKnowledge: a: a,B; B: B;\nActions: a -> B: NA\n";
        let p = parse_protocol_with_warnings(src).unwrap();
        assert_eq!(p.warnings.len(), 1);
        assert_eq!(p.warnings[0].code, "role-case");
    }
}
