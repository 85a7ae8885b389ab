//! High-level protocol documents: principals, stereotyped interactions and
//! constraints, with payload text lowered through a domain grammar.

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::anb::parse_term;
use crate::model::{Action, ChannelMode, Declarations, Goal, ModelError, ProtocolSpec, Sort, Term};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HlError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown stereotype `{0}`")]
    UnknownStereotype(String),
    #[error("interaction {interaction} references undeclared principal `{name}`")]
    DanglingPrincipalReference { interaction: usize, name: String },
    #[error("no production matches payload `{0}`")]
    NoProductionMatches(String),
    #[error("payload `{payload}` matches both `{first}` and `{second}`")]
    AmbiguousMatch { payload: String, first: String, second: String },
    #[error("interaction {interaction}: {source}")]
    Payload { interaction: usize, source: Box<HlError> },
    #[error("cannot build term `{text}`: {message}")]
    Term { text: String, message: String },
    #[error("`{name}` is used both as {first} and as {second}")]
    SortConflict { name: String, first: Sort, second: Sort },
    #[error("no grammar named `{0}` is registered")]
    UnknownGrammar(String),
    #[error("constraint {constraint}: {message}")]
    GoalLowering { constraint: usize, message: String },
    #[error("lowered model is invalid: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Model(Vec<ModelError>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionKind {
    Transaction,
    Message,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Secrecy,
    Agreement,
    InjAgreement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub name: String,
    /// Initial knowledge as AnB term strings.
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub from: String,
    pub to: String,
    pub kind: InteractionKind,
    pub tagged_values: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub kind: ConstraintKind,
    pub arguments: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HlModel {
    pub name: String,
    pub default_grammar: Option<String>,
    pub principals: Vec<Principal>,
    pub interactions: Vec<Interaction>,
    pub constraints: Vec<Constraint>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PrincipalDoc {
    name: String,
    stereotype: String,
    #[serde(default)]
    attributes: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InteractionDoc {
    from: String,
    to: String,
    stereotype: String,
    #[serde(default)]
    tagged_values: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintDoc {
    kind: String,
    #[serde(default)]
    arguments: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    name: String,
    #[serde(default)]
    default_grammar: Option<String>,
    principals: Vec<PrincipalDoc>,
    interactions: Vec<InteractionDoc>,
    #[serde(default)]
    constraints: Vec<ConstraintDoc>,
}

/// Stereotypes may be written bare or in guillemets.
fn stereotype(s: &str) -> &str {
    s.trim().trim_start_matches('«').trim_end_matches('»')
}

pub fn load_hl_model(document: &str) -> Result<HlModel, HlError> {
    let doc: ModelDoc = serde_json::from_str(document).map_err(|e| HlError::Schema(e.to_string()))?;
    let mut principals = Vec::new();
    for p in doc.principals {
        if stereotype(&p.stereotype) != "principal" {
            return Err(HlError::UnknownStereotype(p.stereotype));
        }
        if principals.iter().any(|q: &Principal| q.name == p.name) {
            return Err(HlError::Schema(format!("principal `{}` declared twice", p.name)));
        }
        principals.push(Principal { name: p.name, attributes: p.attributes });
    }
    let mut interactions = Vec::new();
    for (k, i) in doc.interactions.into_iter().enumerate() {
        let kind = match stereotype(&i.stereotype) {
            "transaction" => InteractionKind::Transaction,
            "message" => InteractionKind::Message,
            _ => return Err(HlError::UnknownStereotype(i.stereotype)),
        };
        for name in [&i.from, &i.to] {
            if !principals.iter().any(|p| p.name == *name) {
                return Err(HlError::DanglingPrincipalReference { interaction: k + 1, name: name.clone() });
            }
        }
        if !i.tagged_values.contains_key("payload") {
            return Err(HlError::Schema(format!("interaction {} has no `payload` tagged value", k + 1)));
        }
        interactions.push(Interaction { from: i.from, to: i.to, kind, tagged_values: i.tagged_values });
    }
    let mut constraints = Vec::new();
    for (k, c) in doc.constraints.into_iter().enumerate() {
        let (kind, required): (_, &[&str]) = match stereotype(&c.kind) {
            "secrecy" => (ConstraintKind::Secrecy, &["term", "between"]),
            "agreement" => (ConstraintKind::Agreement, &["claimer", "peer", "on"]),
            "inj-agreement" => (ConstraintKind::InjAgreement, &["claimer", "peer", "on"]),
            _ => return Err(HlError::UnknownStereotype(c.kind)),
        };
        for r in required {
            if !c.arguments.contains_key(*r) {
                return Err(HlError::Schema(format!("constraint {} lacks the `{r}` argument", k + 1)));
            }
        }
        constraints.push(Constraint { kind, arguments: c.arguments });
    }
    Ok(HlModel { name: doc.name, default_grammar: doc.default_grammar, principals, interactions, constraints })
}

#[derive(Debug, Clone)]
pub struct TokenClass {
    pub name: String,
    pub sort: Sort,
    pub regex: Regex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Item {
    Literal(String),
    Capture { name: String, token: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Production {
    pub label: String,
    pub sequence: Vec<Item>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ambiguity {
    FirstMatch,
    Error,
}

#[derive(Debug, Clone)]
pub struct PayloadGrammar {
    pub name: String,
    /// Function and constant symbols templates may use.
    pub symbols: Declarations,
    pub tokens: Vec<TokenClass>,
    pub productions: Vec<Production>,
    pub templates: BTreeMap<String, String>,
    pub ambiguity: Ambiguity,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenDoc {
    name: String,
    sort: String,
    regex: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ItemDoc {
    Literal(String),
    Capture { cap: String, token: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProductionDoc {
    label: String,
    sequence: Vec<ItemDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarDoc {
    name: String,
    #[serde(default)]
    symbols: BTreeMap<String, String>,
    tokens: Vec<TokenDoc>,
    productions: Vec<ProductionDoc>,
    templates: BTreeMap<String, String>,
    #[serde(default)]
    ambiguity: Option<String>,
}

fn sort_named(s: &str) -> Result<Sort, HlError> {
    Sort::from_keyword(s).ok_or_else(|| HlError::Schema(format!("unknown sort `{s}`")))
}

/// `$name` placeholders in a template, in order of appearance.
fn placeholders(template: &str) -> Vec<String> {
    let re = Regex::new(r"\$([A-Za-z_][A-Za-z0-9_]*)").expect("valid");
    re.captures_iter(template).map(|c| c[1].to_string()).collect()
}

pub fn load_grammar(document: &str) -> Result<PayloadGrammar, HlError> {
    let doc: GrammarDoc = serde_json::from_str(document).map_err(|e| HlError::Schema(e.to_string()))?;
    let mut symbols = Declarations::new();
    for (name, sort) in &doc.symbols {
        symbols.insert(name.clone(), sort_named(sort)?);
    }
    let mut tokens = Vec::new();
    for t in doc.tokens {
        let regex = Regex::new(&format!("^(?:{})$", t.regex))
            .map_err(|e| HlError::Schema(format!("token `{}`: {e}", t.name)))?;
        tokens.push(TokenClass { name: t.name, sort: sort_named(&t.sort)?, regex });
    }
    let mut productions = Vec::new();
    for p in doc.productions {
        let mut sequence = Vec::new();
        for item in p.sequence {
            sequence.push(match item {
                ItemDoc::Literal(l) => Item::Literal(l),
                ItemDoc::Capture { cap, token } => {
                    if !tokens.iter().any(|t: &TokenClass| t.name == token) {
                        return Err(HlError::Schema(format!("production `{}` uses unknown token `{token}`", p.label)));
                    }
                    Item::Capture { name: cap, token }
                }
            });
        }
        let Some(template) = doc.templates.get(&p.label) else {
            return Err(HlError::Schema(format!("production `{}` has no template", p.label)));
        };
        for ph in placeholders(template) {
            let produced = sequence.iter().any(|i| matches!(i, Item::Capture { name, .. } if *name == ph));
            if !produced {
                return Err(HlError::Schema(format!("template `{}` uses `${ph}`, which is never captured", p.label)));
            }
        }
        productions.push(Production { label: p.label, sequence });
    }
    let ambiguity = match doc.ambiguity.as_deref() {
        None | Some("first") => Ambiguity::FirstMatch,
        Some("error") => Ambiguity::Error,
        Some(other) => return Err(HlError::Schema(format!("unknown ambiguity policy `{other}`"))),
    };
    Ok(PayloadGrammar { name: doc.name, symbols, tokens, productions, templates: doc.templates, ambiguity })
}

/// A successful production match: its label and the captured identifiers
/// with their sorts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayloadMatch {
    pub label: String,
    pub captures: BTreeMap<String, (String, Sort)>,
}

impl PayloadGrammar {
    fn token(&self, name: &str) -> &TokenClass {
        self.tokens.iter().find(|t| t.name == name).expect("validated on load")
    }

    fn match_production(&self, p: &Production, words: &[&str]) -> Option<PayloadMatch> {
        if p.sequence.len() != words.len() || words.is_empty() {
            return None;
        }
        let mut captures = BTreeMap::new();
        for (item, word) in p.sequence.iter().zip(words) {
            match item {
                Item::Literal(l) if l == word => {}
                Item::Literal(_) => return None,
                Item::Capture { name, token } => {
                    let class = self.token(token);
                    if !class.regex.is_match(word) {
                        return None;
                    }
                    if let Some((prev, _)) = captures.get(name) {
                        if prev != word {
                            return None;
                        }
                    }
                    captures.insert(name.clone(), (word.to_string(), class.sort));
                }
            }
        }
        Some(PayloadMatch { label: p.label.clone(), captures })
    }

    /// Payload text is split on whitespace; each item of a production
    /// consumes exactly one word.
    pub fn match_payload(&self, payload: &str) -> Result<PayloadMatch, HlError> {
        let words: Vec<&str> = payload.split_whitespace().collect();
        let mut hits = self.productions.iter().filter_map(|p| self.match_production(p, &words));
        let first = hits.next().ok_or_else(|| HlError::NoProductionMatches(payload.to_string()))?;
        if self.ambiguity == Ambiguity::Error {
            if let Some(second) = hits.next() {
                return Err(HlError::AmbiguousMatch {
                    payload: payload.to_string(),
                    first: first.label,
                    second: second.label,
                });
            }
        }
        Ok(first)
    }

    /// Words of `payloads` that match more than one token class.
    pub fn overlap_warnings<'a>(&self, payloads: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for word in payloads.into_iter().flat_map(str::split_whitespace) {
            if !seen.insert(word) {
                continue;
            }
            let classes: Vec<&str> =
                self.tokens.iter().filter(|t| t.regex.is_match(word)).map(|t| t.name.as_str()).collect();
            if classes.len() > 1 {
                out.push(format!("grammar {}: `{word}` matches token classes {}", self.name, classes.join(", ")));
            }
        }
        out
    }
}

fn add_decl(decls: &mut Declarations, name: &str, sort: Sort) -> Result<(), HlError> {
    match decls.sort_of(name) {
        Some(s) if s != sort => Err(HlError::SortConflict { name: name.into(), first: s, second: sort }),
        Some(_) => Ok(()),
        None => {
            decls.insert(name, sort);
            Ok(())
        }
    }
}

fn term_error(text: &str, diags: Vec<crate::anb::ParseDiagnostic>) -> HlError {
    HlError::Term { text: text.to_string(), message: diags.iter().map(|d| d.message.clone()).collect::<Vec<_>>().join("; ") }
}

fn instantiate(grammar: &PayloadGrammar, m: &PayloadMatch, decls: &Declarations) -> Result<Term, HlError> {
    let re = Regex::new(r"\$([A-Za-z_][A-Za-z0-9_]*)").expect("valid");
    let template = &grammar.templates[&m.label];
    let text = re.replace_all(template, |c: &regex::Captures| m.captures[&c[1]].0.clone()).into_owned();
    parse_term(&text, decls).map_err(|d| term_error(&text, d))
}

/// Lowers one payload. Captured identifiers are declared with their token
/// class's sort on top of `decls` and the grammar's symbols.
pub fn parse_payload(grammar: &PayloadGrammar, payload: &str, decls: &Declarations) -> Result<Term, HlError> {
    let m = grammar.match_payload(payload)?;
    let mut d = decls.clone();
    for (name, sort) in grammar.symbols.iter() {
        add_decl(&mut d, name, sort)?;
    }
    for (word, sort) in m.captures.values() {
        add_decl(&mut d, word, *sort)?;
    }
    instantiate(grammar, &m, &d)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lowered {
    pub spec: ProtocolSpec,
    pub warnings: Vec<String>,
}

fn channel(value: Option<&String>) -> Result<ChannelMode, HlError> {
    match value {
        None => Ok(ChannelMode::Plain),
        Some(v) => ChannelMode::from_arrow(v.trim()).ok_or_else(|| HlError::Schema(format!("unknown channel `{v}`"))),
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

/// Declarations are the principals as agents, the symbols of every grammar
/// used, and each captured identifier with its token's sort.
pub fn to_anb(model: &HlModel, grammars: &BTreeMap<String, PayloadGrammar>) -> Result<Lowered, HlError> {
    let mut decls = Declarations::new();
    for p in &model.principals {
        add_decl(&mut decls, &p.name, Sort::Agent)?;
    }
    let mut warnings = Vec::new();
    let mut matches: Vec<Option<(&PayloadGrammar, PayloadMatch)>> = Vec::new();
    let mut used: BTreeSet<&str> = BTreeSet::new();
    for (k, i) in model.interactions.iter().enumerate() {
        let at = |e: HlError| HlError::Payload { interaction: k + 1, source: Box::new(e) };
        if i.kind == InteractionKind::Message {
            matches.push(None);
            continue;
        }
        let name = i
            .tagged_values
            .get("grammar")
            .or(model.default_grammar.as_ref())
            .ok_or_else(|| at(HlError::Schema("no grammar for this transaction".into())))?;
        let g = grammars.get(name).ok_or_else(|| at(HlError::UnknownGrammar(name.clone())))?;
        let m = g.match_payload(&i.tagged_values["payload"]).map_err(at)?;
        for (word, sort) in m.captures.values() {
            add_decl(&mut decls, word, *sort).map_err(at)?;
        }
        if used.insert(name.as_str()) {
            for (s, sort) in g.symbols.iter() {
                add_decl(&mut decls, s, sort).map_err(at)?;
            }
        }
        matches.push(Some((g, m)));
    }
    for name in &used {
        let g = &grammars[*name];
        let texts = model
            .interactions
            .iter()
            .filter(|i| {
                i.kind == InteractionKind::Transaction
                    && i.tagged_values.get("grammar").or(model.default_grammar.as_ref()).map(String::as_str) == Some(*name)
            })
            .map(|i| i.tagged_values["payload"].as_str());
        warnings.extend(g.overlap_warnings(texts));
    }

    let mut actions = Vec::new();
    for (k, (i, m)) in model.interactions.iter().zip(&matches).enumerate() {
        let at = |e: HlError| HlError::Payload { interaction: k + 1, source: Box::new(e) };
        let payload = match m {
            Some((g, m)) => instantiate(g, m, &decls).map_err(at)?,
            None => {
                let text = &i.tagged_values["payload"];
                parse_term(text, &decls).map_err(|d| at(term_error(text, d)))?
            }
        };
        actions.push(Action {
            sender: i.from.clone(),
            receiver: i.to.clone(),
            mode: channel(i.tagged_values.get("channel")).map_err(at)?,
            payload,
        });
    }

    let mut knowledge = BTreeMap::new();
    for p in &model.principals {
        let terms = p
            .attributes
            .iter()
            .map(|a| parse_term(a, &decls).map_err(|d| term_error(a, d)))
            .collect::<Result<Vec<_>, _>>()?;
        knowledge.insert(p.name.clone(), terms);
    }

    let payload_atoms: BTreeSet<String> =
        actions.iter().flat_map(|a| a.payload.atoms()).map(|a| a.name).collect();
    let mut goals = Vec::new();
    for (k, c) in model.constraints.iter().enumerate() {
        let fail = |message: String| HlError::GoalLowering { constraint: k + 1, message };
        let term = |s: &str| parse_term(s, &decls).map_err(|d| fail(term_error(s, d).to_string()));
        let goal = match c.kind {
            ConstraintKind::Secrecy => {
                Goal::Secrecy { term: term(&c.arguments["term"])?, parties: split_list(&c.arguments["between"]) }
            }
            ConstraintKind::Agreement | ConstraintKind::InjAgreement => {
                let on = split_list(&c.arguments["on"]).iter().map(|s| term(s)).collect::<Result<Vec<_>, _>>()?;
                let (claimer, peer) = (c.arguments["claimer"].clone(), c.arguments["peer"].clone());
                if c.kind == ConstraintKind::Agreement {
                    Goal::WeakAgreement { claimer, peer, on }
                } else {
                    Goal::InjAgreement { claimer, peer, on }
                }
            }
        };
        for t in goal.terms() {
            if let Some(a) = t.atoms().into_iter().find(|a| !payload_atoms.contains(&a.name)) {
                return Err(fail(format!("`{}` does not occur in any payload", a.name)));
            }
        }
        goals.push(goal);
    }
    if goals.is_empty() {
        warnings.push("no goals".into());
    }

    let spec = ProtocolSpec { name: model.name.clone(), declarations: decls, knowledge, actions, goals };
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(HlError::Model(errs));
    }
    Ok(Lowered { spec, warnings })
}
