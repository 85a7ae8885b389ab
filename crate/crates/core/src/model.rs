//! Term algebra and protocol model shared by every stage of the workbench.
//!
//! Terms are plain immutable trees compared structurally. `Inv(Inv(t))`
//! never exists: [`Term::inv`] normalizes it away.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("undeclared identifier `{0}`")]
    UndeclaredIdentifier(String),
    #[error("`{0}` is not a function symbol")]
    NotAFunction(String),
    #[error("inv() applied to `{0}`, which is not a public key")]
    InvOnNonPublicKey(String),
    #[error("action {index}: sender equals receiver ({role})")]
    SenderEqualsReceiver { index: usize, role: String },
    #[error("`{0}` is used as a role but is not declared as an Agent")]
    RoleNotAgent(String),
    #[error("role `{0}` has no knowledge entry")]
    MissingKnowledge(String),
    #[error("goal {goal}: term `{term}` does not occur in any action payload")]
    GoalTermAbsent { goal: usize, term: String },
    #[error("protocol has no actions")]
    NoActions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sort {
    Agent,
    Number,
    SymmetricKey,
    PublicKey,
    PrivateKey,
    Function,
    Untyped,
}

impl Sort {
    /// Sorts that may appear in a `Types` section, in canonical print order.
    pub const DECLARABLE: [Sort; 5] = [
        Sort::Agent,
        Sort::Number,
        Sort::SymmetricKey,
        Sort::PublicKey,
        Sort::Function,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            Sort::Agent => "Agent",
            Sort::Number => "Number",
            Sort::SymmetricKey => "SymmetricKey",
            Sort::PublicKey => "PublicKey",
            Sort::PrivateKey => "PrivateKey",
            Sort::Function => "Function",
            Sort::Untyped => "Untyped",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Sort> {
        Sort::DECLARABLE.into_iter().find(|k| k.keyword() == s)
    }

    /// Sorts a declared symbol may have when applied to arguments.
    pub fn is_function_like(self) -> bool {
        matches!(self, Sort::Function | Sort::SymmetricKey | Sort::PublicKey)
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Identifier to sort map of a protocol (its `Types` section).
///
/// Lookups fall back to the base name for instantiated fresh atoms, so
/// `NA#s2` resolves to whatever `NA` is declared as.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declarations(BTreeMap<String, Sort>);

impl Declarations {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the previous sort if `name` was already declared.
    pub fn insert(&mut self, name: impl Into<String>, sort: Sort) -> Option<Sort> {
        self.0.insert(name.into(), sort)
    }

    pub fn sort_of(&self, name: &str) -> Option<Sort> {
        self.0
            .get(name)
            .or_else(|| name.split_once('#').and_then(|(base, _)| self.0.get(base)))
            .copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Sort)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn names_of(&self, sort: Sort) -> impl Iterator<Item = &str> {
        self.0
            .iter()
            .filter(move |(_, s)| **s == sort)
            .map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, Sort)> for Declarations {
    fn from_iter<I: IntoIterator<Item = (String, Sort)>>(iter: I) -> Self {
        Declarations(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub name: String,
    pub sort: Sort,
    /// Role-local unknown, bound by substitution or pattern matching.
    pub var: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Atom(Atom),
    Pair(Box<Term>, Box<Term>),
    SymEnc { payload: Box<Term>, key: Box<Term> },
    AsymEnc { payload: Box<Term>, key: Box<Term> },
    Sign { payload: Box<Term>, key: Box<Term> },
    FunApp { function: String, args: Vec<Term>, one_way: bool },
    Inv(Box<Term>),
}

/// Variable name to term map used by [`Term::substitute`] and matching.
pub type Binding = BTreeMap<String, Term>;

impl Term {
    pub fn atom(name: impl Into<String>, sort: Sort) -> Term {
        Term::Atom(Atom { name: name.into(), sort, var: false })
    }

    pub fn var(name: impl Into<String>, sort: Sort) -> Term {
        Term::Atom(Atom { name: name.into(), sort, var: true })
    }

    pub fn agent(name: impl Into<String>) -> Term {
        Term::atom(name, Sort::Agent)
    }

    pub fn pair(left: Term, right: Term) -> Term {
        Term::Pair(Box::new(left), Box::new(right))
    }

    /// Right-associated tuple; `None` for an empty list.
    pub fn tuple(items: impl IntoIterator<Item = Term>) -> Option<Term> {
        let items: Vec<Term> = items.into_iter().collect();
        items.into_iter().rev().reduce(|acc, t| Term::pair(t, acc))
    }

    pub fn senc(payload: Term, key: Term) -> Term {
        Term::SymEnc { payload: Box::new(payload), key: Box::new(key) }
    }

    pub fn aenc(payload: Term, key: Term) -> Term {
        Term::AsymEnc { payload: Box::new(payload), key: Box::new(key) }
    }

    pub fn sign(payload: Term, key: Term) -> Term {
        Term::Sign { payload: Box::new(payload), key: Box::new(key) }
    }

    pub fn app(function: impl Into<String>, args: Vec<Term>) -> Term {
        Term::FunApp { function: function.into(), args, one_way: true }
    }

    pub fn inv(of: Term) -> Term {
        match of {
            Term::Inv(inner) => *inner,
            other => Term::Inv(Box::new(other)),
        }
    }

    pub fn as_atom(&self) -> Option<&Atom> {
        match self {
            Term::Atom(a) => Some(a),
            _ => None,
        }
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Atom(Atom { var: true, .. }))
    }

    /// Immediate constructor arguments, keys included.
    pub fn children(&self) -> Vec<&Term> {
        match self {
            Term::Atom(_) => vec![],
            Term::Pair(a, b) => vec![a, b],
            Term::SymEnc { payload, key }
            | Term::AsymEnc { payload, key }
            | Term::Sign { payload, key } => vec![payload, key],
            Term::FunApp { args, .. } => args.iter().collect(),
            Term::Inv(t) => vec![t],
        }
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Atom(a) => !a.var,
            _ => self.children().into_iter().all(Term::is_ground),
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.children().into_iter().map(Term::depth).max().unwrap_or(0)
    }

    pub fn size(&self) -> usize {
        1 + self.children().into_iter().map(Term::size).sum::<usize>()
    }

    /// Reflexive-transitive closure over constructor arguments.
    pub fn subterms(&self) -> BTreeSet<Term> {
        let mut out = BTreeSet::new();
        self.collect_subterms(&mut out);
        out
    }

    fn collect_subterms(&self, out: &mut BTreeSet<Term>) {
        if out.insert(self.clone()) {
            for c in self.children() {
                c.collect_subterms(out);
            }
        }
    }

    pub fn contains(&self, needle: &Term) -> bool {
        self == needle || self.children().into_iter().any(|c| c.contains(needle))
    }

    pub fn atoms(&self) -> BTreeSet<Atom> {
        let mut out = BTreeSet::new();
        self.visit_atoms(&mut |a| {
            out.insert(a.clone());
        });
        out
    }

    pub fn vars(&self) -> BTreeSet<Atom> {
        self.atoms().into_iter().filter(|a| a.var).collect()
    }

    fn visit_atoms(&self, f: &mut impl FnMut(&Atom)) {
        match self {
            Term::Atom(a) => f(a),
            _ => {
                for c in self.children() {
                    c.visit_atoms(f);
                }
            }
        }
    }

    /// Simultaneous replacement of bound variables; everything else is kept.
    pub fn substitute(&self, binding: &Binding) -> Term {
        match self {
            Term::Atom(a) if a.var => binding.get(&a.name).cloned().unwrap_or_else(|| self.clone()),
            Term::Atom(_) => self.clone(),
            Term::Pair(a, b) => Term::pair(a.substitute(binding), b.substitute(binding)),
            Term::SymEnc { payload, key } => {
                Term::senc(payload.substitute(binding), key.substitute(binding))
            }
            Term::AsymEnc { payload, key } => {
                Term::aenc(payload.substitute(binding), key.substitute(binding))
            }
            Term::Sign { payload, key } => {
                Term::sign(payload.substitute(binding), key.substitute(binding))
            }
            Term::FunApp { function, args, one_way } => Term::FunApp {
                function: function.clone(),
                args: args.iter().map(|t| t.substitute(binding)).collect(),
                one_way: *one_way,
            },
            Term::Inv(t) => Term::inv(t.substitute(binding)),
        }
    }

    /// Rewrites every atom through `f`, rebuilding constructors bottom-up.
    pub fn map_atoms(&self, f: &mut impl FnMut(&Atom) -> Term) -> Term {
        match self {
            Term::Atom(a) => f(a),
            Term::Pair(a, b) => Term::pair(a.map_atoms(f), b.map_atoms(f)),
            Term::SymEnc { payload, key } => Term::senc(payload.map_atoms(f), key.map_atoms(f)),
            Term::AsymEnc { payload, key } => Term::aenc(payload.map_atoms(f), key.map_atoms(f)),
            Term::Sign { payload, key } => Term::sign(payload.map_atoms(f), key.map_atoms(f)),
            Term::FunApp { function, args, one_way } => Term::FunApp {
                function: function.clone(),
                args: args.iter().map(|t| t.map_atoms(f)).collect(),
                one_way: *one_way,
            },
            Term::Inv(t) => Term::inv(t.map_atoms(f)),
        }
    }

    /// Rebuilds the head constructor over `f` applied to each child.
    pub fn map_children(&self, f: &mut impl FnMut(&Term) -> Term) -> Term {
        match self {
            Term::Atom(_) => self.clone(),
            Term::Pair(a, b) => Term::pair(f(a), f(b)),
            Term::SymEnc { payload, key } => Term::senc(f(payload), f(key)),
            Term::AsymEnc { payload, key } => Term::aenc(f(payload), f(key)),
            Term::Sign { payload, key } => Term::sign(f(payload), f(key)),
            Term::FunApp { function, args, one_way } => Term::FunApp {
                function: function.clone(),
                args: args.iter().map(&mut *f).collect(),
                one_way: *one_way,
            },
            Term::Inv(t) => Term::inv(f(t)),
        }
    }

    /// Flattens right-nested pairs into their components.
    pub fn tuple_items(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        let mut cur = self;
        while let Term::Pair(a, b) = cur {
            out.push(a.as_ref());
            cur = b;
        }
        out.push(cur);
        out
    }
}

/// Sort of the term's head constructor.
pub fn term_sort(t: &Term, decls: &Declarations) -> Result<Sort, ModelError> {
    match t {
        Term::Atom(a) => decls
            .sort_of(&a.name)
            .ok_or_else(|| ModelError::UndeclaredIdentifier(a.name.clone())),
        Term::FunApp { function, args, .. } => {
            for a in args {
                term_sort(a, decls)?;
            }
            match decls.sort_of(function) {
                None => Err(ModelError::UndeclaredIdentifier(function.clone())),
                Some(s @ (Sort::SymmetricKey | Sort::PublicKey)) => Ok(s),
                Some(Sort::Function) => Ok(Sort::Untyped),
                Some(_) => Err(ModelError::NotAFunction(function.clone())),
            }
        }
        Term::Inv(inner) => match term_sort(inner, decls)? {
            Sort::PublicKey => Ok(Sort::PrivateKey),
            _ => Err(ModelError::InvOnNonPublicKey(inner.to_string())),
        },
        _ => {
            for c in t.children() {
                term_sort(c, decls)?;
            }
            Ok(Sort::Untyped)
        }
    }
}

/// One-sided typed matching of `pattern` against a ground term, extending
/// `binding`. A variable of a non-`Untyped` sort only matches an atom of
/// the same sort.
pub fn match_term(pattern: &Term, ground: &Term, binding: &Binding) -> Option<Binding> {
    let mut b = binding.clone();
    if match_into(pattern, ground, &mut b) {
        Some(b)
    } else {
        None
    }
}

fn match_into(pattern: &Term, ground: &Term, b: &mut Binding) -> bool {
    match (pattern, ground) {
        (Term::Atom(v), _) if v.var => {
            if let Some(bound) = b.get(&v.name) {
                return bound == ground;
            }
            let sort_ok = match (v.sort, ground) {
                (Sort::Untyped, _) => true,
                (s, Term::Atom(g)) => g.sort == s && !g.var,
                _ => false,
            };
            if sort_ok {
                b.insert(v.name.clone(), ground.clone());
            }
            sort_ok
        }
        (Term::Atom(p), Term::Atom(g)) => p == g,
        (Term::Pair(p1, p2), Term::Pair(g1, g2)) => match_into(p1, g1, b) && match_into(p2, g2, b),
        (Term::SymEnc { payload: p, key: k }, Term::SymEnc { payload: gp, key: gk })
        | (Term::AsymEnc { payload: p, key: k }, Term::AsymEnc { payload: gp, key: gk })
        | (Term::Sign { payload: p, key: k }, Term::Sign { payload: gp, key: gk }) => {
            match_into(k, gk, b) && match_into(p, gp, b)
        }
        (
            Term::FunApp { function: f, args: a, one_way: o },
            Term::FunApp { function: g, args: ga, one_way: go },
        ) => {
            f == g
                && o == go
                && a.len() == ga.len()
                && a.iter().zip(ga).all(|(x, y)| match_into(x, y, b))
        }
        (Term::Inv(p), Term::Inv(g)) => match_into(p, g, b),
        _ => false,
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Position {
    Top,
    Basic,
}

fn write_term(t: &Term, pos: Position, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match t {
        Term::Atom(a) => f.write_str(&a.name),
        Term::Pair(a, b) => {
            if pos == Position::Basic {
                f.write_str("(")?;
            }
            write_term(a, Position::Basic, f)?;
            f.write_str(",")?;
            write_term(b, Position::Top, f)?;
            if pos == Position::Basic {
                f.write_str(")")?;
            }
            Ok(())
        }
        Term::SymEnc { payload, key } | Term::AsymEnc { payload, key } | Term::Sign { payload, key } => {
            f.write_str("{")?;
            write_term(payload, Position::Top, f)?;
            f.write_str("}")?;
            write_term(key, Position::Basic, f)
        }
        Term::FunApp { function, args, .. } => {
            write!(f, "{function}(")?;
            write_list(args, f)?;
            f.write_str(")")
        }
        Term::Inv(t) => {
            f.write_str("inv(")?;
            write_term(t, Position::Top, f)?;
            f.write_str(")")
        }
    }
}

fn write_list(items: &[Term], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for (i, t) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write_term(t, Position::Basic, f)?;
    }
    Ok(())
}

/// Surface syntax with minimal parentheses: pairs nest to the right and only
/// get parenthesized in list, key or left-of-comma positions.
impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_term(self, Position::Top, f)
    }
}

/// Displays a slice of terms as a comma-separated term list.
pub struct TermList<'a>(pub &'a [Term]);

impl fmt::Display for TermList<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_list(self.0, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChannelMode {
    Plain,
    Authentic,
    Confidential,
    Secure,
}

impl ChannelMode {
    pub const ALL: [ChannelMode; 4] = [
        ChannelMode::Plain,
        ChannelMode::Authentic,
        ChannelMode::Confidential,
        ChannelMode::Secure,
    ];

    pub fn arrow(self) -> &'static str {
        match self {
            ChannelMode::Plain => "->",
            ChannelMode::Authentic => "*->",
            ChannelMode::Confidential => "->*",
            ChannelMode::Secure => "*->*",
        }
    }

    pub fn from_arrow(s: &str) -> Option<ChannelMode> {
        ChannelMode::ALL.into_iter().find(|m| m.arrow() == s)
    }

    /// Whether the intruder sees payloads addressed to honest receivers.
    pub fn intruder_readable(self) -> bool {
        matches!(self, ChannelMode::Plain | ChannelMode::Authentic)
    }

    /// Whether the intruder may forge messages claiming an honest sender.
    pub fn intruder_injectable(self) -> bool {
        matches!(self, ChannelMode::Plain | ChannelMode::Confidential)
    }
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.arrow())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action {
    pub sender: String,
    pub receiver: String,
    pub mode: ChannelMode,
    pub payload: Term,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}: {}", self.sender, self.mode, self.receiver, self.payload)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Goal {
    Secrecy { term: Term, parties: Vec<String> },
    WeakAgreement { claimer: String, peer: String, on: Vec<Term> },
    InjAgreement { claimer: String, peer: String, on: Vec<Term> },
}

impl Goal {
    pub fn roles(&self) -> Vec<&str> {
        match self {
            Goal::Secrecy { parties, .. } => parties.iter().map(String::as_str).collect(),
            Goal::WeakAgreement { claimer, peer, .. } | Goal::InjAgreement { claimer, peer, .. } => {
                vec![claimer.as_str(), peer.as_str()]
            }
        }
    }

    pub fn terms(&self) -> Vec<&Term> {
        match self {
            Goal::Secrecy { term, .. } => vec![term],
            Goal::WeakAgreement { on, .. } | Goal::InjAgreement { on, .. } => on.iter().collect(),
        }
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Goal::Secrecy { term, parties } => {
                write!(f, "{term} secret between {}", parties.join(","))
            }
            Goal::WeakAgreement { claimer, peer, on } => {
                write!(f, "{claimer} authenticates {peer} on {}", TermList(on))
            }
            Goal::InjAgreement { claimer, peer, on } => {
                write!(f, "{claimer} injectively authenticates {peer} on {}", TermList(on))
            }
        }
    }
}

/// The pivot model every front-end lowers into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub name: String,
    pub declarations: Declarations,
    pub knowledge: BTreeMap<String, Vec<Term>>,
    pub actions: Vec<Action>,
    pub goals: Vec<Goal>,
}

impl ProtocolSpec {
    /// Roles in order of first appearance in the action list.
    pub fn roles(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for a in &self.actions {
            for r in [&a.sender, &a.receiver] {
                if !out.contains(r) {
                    out.push(r.clone());
                }
            }
        }
        out
    }

    /// Function symbols the intruder may apply: those appearing bare in
    /// some role's initial knowledge.
    pub fn public_functions(&self) -> BTreeSet<String> {
        self.knowledge
            .values()
            .flatten()
            .filter_map(|t| match t {
                Term::Atom(a) if self.declarations.sort_of(&a.name).is_some_and(Sort::is_function_like) => {
                    Some(a.name.clone())
                }
                _ => None,
            })
            .collect()
    }

    /// Checks the structural invariants of the model.
    pub fn validate(&self) -> Vec<ModelError> {
        let mut errs = Vec::new();
        if self.actions.is_empty() {
            errs.push(ModelError::NoActions);
        }
        let check_term = |t: &Term, errs: &mut Vec<ModelError>| {
            if let Err(e) = term_sort(t, &self.declarations) {
                if !errs.contains(&e) {
                    errs.push(e);
                }
            }
        };
        for terms in self.knowledge.values() {
            for t in terms {
                check_term(t, &mut errs);
            }
        }
        for (i, a) in self.actions.iter().enumerate() {
            check_term(&a.payload, &mut errs);
            if a.sender == a.receiver {
                errs.push(ModelError::SenderEqualsReceiver { index: i + 1, role: a.sender.clone() });
            }
        }
        for role in self.roles() {
            match self.declarations.sort_of(&role) {
                None => errs.push(ModelError::UndeclaredIdentifier(role.clone())),
                Some(Sort::Agent) => {}
                Some(_) => errs.push(ModelError::RoleNotAgent(role.clone())),
            }
            if !self.knowledge.contains_key(&role) {
                errs.push(ModelError::MissingKnowledge(role));
            }
        }
        for (gi, g) in self.goals.iter().enumerate() {
            for r in g.roles() {
                if self.declarations.sort_of(r) != Some(Sort::Agent) {
                    errs.push(ModelError::RoleNotAgent(r.to_string()));
                }
            }
            for t in g.terms() {
                check_term(t, &mut errs);
                if !self.actions.iter().any(|a| a.payload.contains(t)) {
                    errs.push(ModelError::GoalTermAbsent { goal: gi + 1, term: t.to_string() });
                }
            }
        }
        errs
    }
}
