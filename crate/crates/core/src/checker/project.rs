//! Role projection and the executability check.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::dolev_yao::KnowledgeBase;
use crate::model::{Atom, ChannelMode, Goal, ProtocolSpec, Sort, Term, TermList};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Send { action: usize, payload: Term, mode: ChannelMode, peer: String },
    Receive { action: usize, pattern: Term, mode: ChannelMode, peer: String },
}

impl Step {
    /// Index of the global action this step projects.
    pub fn action(&self) -> usize {
        match self {
            Step::Send { action, .. } | Step::Receive { action, .. } => *action,
        }
    }

    pub fn term(&self) -> &Term {
        match self {
            Step::Send { payload, .. } => payload,
            Step::Receive { pattern, .. } => pattern,
        }
    }

    pub fn mode(&self) -> ChannelMode {
        match self {
            Step::Send { mode, .. } | Step::Receive { mode, .. } => *mode,
        }
    }

    pub fn peer(&self) -> &str {
        match self {
            Step::Send { peer, .. } | Step::Receive { peer, .. } => peer,
        }
    }

    pub fn is_send(&self) -> bool {
        matches!(self, Step::Send { .. })
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Send { payload, mode, peer, .. } => write!(f, "send {mode} {peer}: {payload}"),
            Step::Receive { pattern, mode, peer, .. } => write!(f, "recv {peer} {mode}: {pattern}"),
        }
    }
}

/// Claim templates over the role's variables, instantiated at run time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClaimSpec {
    Running { goal: usize, claimer: String, terms: Vec<Term> },
    Commit { goal: usize, peer: String, terms: Vec<Term> },
    Secret { goal: usize, term: Term, parties: Vec<String> },
}

impl fmt::Display for ClaimSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClaimSpec::Running { claimer, terms, .. } => {
                write!(f, "running for {claimer} on {}", TermList(terms))
            }
            ClaimSpec::Commit { peer, terms, .. } => write!(f, "commit with {peer} on {}", TermList(terms)),
            ClaimSpec::Secret { term, parties, .. } => {
                write!(f, "secret {term} between {}", parties.join(","))
            }
        }
    }
}

/// One role's view of the protocol. Variables are atoms flagged `var`; their
/// names coincide with the identifiers of the global specification, except
/// for ciphertexts the role cannot open, which become `X1`, `X2`, ...
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleScript {
    pub role: String,
    /// Role names bound to agents when the role is instantiated.
    pub parameters: Vec<String>,
    /// Atoms generated by this role, renamed per session.
    pub fresh: Vec<Atom>,
    pub knowledge: Vec<Term>,
    pub steps: Vec<Step>,
    /// `(step, claim)`: the claim fires once step `step` has executed.
    pub claims: Vec<(usize, ClaimSpec)>,
}

impl fmt::Display for RoleScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "role {} knows {}", self.role, TermList(&self.knowledge))?;
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(f, "  {}. {s}", i + 1)?;
            for (_, c) in self.claims.iter().filter(|(at, _)| *at == i) {
                writeln!(f, "     claim {c}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NotExecutable {
    pub role: String,
    /// 1-based index into the role's steps.
    pub step: usize,
    pub missing: Term,
}

impl fmt::Display for NotExecutable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "role {} cannot build its message at step {}: missing {}", self.role, self.step, self.missing)
    }
}

struct RoleView {
    script: RoleScript,
    vars: BTreeSet<String>,
    opaque: Vec<(Term, Term)>,
    reserved: BTreeSet<String>,
    known_after: Vec<BTreeSet<Term>>,
    problems: Vec<NotExecutable>,
}

impl RoleView {
    fn mark(&self, t: &Term) -> Term {
        if let Some((_, x)) = self.opaque.iter().find(|(o, _)| o == t) {
            return x.clone();
        }
        match t {
            Term::Atom(a) if self.vars.contains(&a.name) => Term::var(a.name.clone(), a.sort),
            Term::Atom(_) => t.clone(),
            _ => t.map_children(&mut |c| self.mark(c)),
        }
    }

    fn opaque(&mut self, t: &Term) -> Term {
        if let Some((_, x)) = self.opaque.iter().find(|(o, _)| o == t) {
            return x.clone();
        }
        let mut n = self.opaque.len() + 1;
        while self.reserved.contains(&format!("X{n}")) {
            n += 1;
        }
        let x = Term::var(format!("X{n}"), Sort::Untyped);
        self.opaque.push((t.clone(), x.clone()));
        x
    }

    fn learn_atoms(&mut self, t: &Term, before: &KnowledgeBase) {
        for a in t.atoms() {
            if !before.derivable(&Term::Atom(a.clone())) {
                self.vars.insert(a.name);
            }
        }
    }

    fn key(&mut self, k: &Term, before: &KnowledgeBase) -> Term {
        if !before.derivable(k) {
            self.learn_atoms(k, before);
        }
        self.mark(k)
    }

    fn receive(&mut self, m: &Term, before: &KnowledgeBase, after: &KnowledgeBase) -> Term {
        if before.derivable(m) {
            return self.mark(m);
        }
        match m {
            Term::Atom(a) => {
                self.vars.insert(a.name.clone());
                Term::var(a.name.clone(), a.sort)
            }
            Term::Pair(x, y) => {
                let x = self.receive(x, before, after);
                Term::pair(x, self.receive(y, before, after))
            }
            Term::SymEnc { payload, key } if after.derivable(key) => {
                let k = self.key(key, before);
                Term::senc(self.receive(payload, before, after), k)
            }
            Term::AsymEnc { payload, key } if after.derivable(&Term::inv((**key).clone())) => {
                let k = self.key(key, before);
                Term::aenc(self.receive(payload, before, after), k)
            }
            Term::Sign { payload, key } => match key.as_ref() {
                Term::Inv(pk) if after.derivable(pk) => {
                    let k = self.key(pk, before);
                    Term::sign(self.receive(payload, before, after), Term::inv(k))
                }
                _ => self.opaque(m),
            },
            _ => self.opaque(m),
        }
    }
}

/// Atoms outside key positions, in first-occurrence order.
fn content_atoms(t: &Term, out: &mut Vec<Atom>) {
    match t {
        Term::Atom(a) => {
            if !out.contains(a) {
                out.push(a.clone());
            }
        }
        Term::SymEnc { payload, .. } | Term::AsymEnc { payload, .. } | Term::Sign { payload, .. } => {
            content_atoms(payload, out)
        }
        Term::Inv(_) => {}
        _ => {
            for c in t.children() {
                content_atoms(c, out);
            }
        }
    }
}

/// Smallest underivable subterm on the leftmost failing path.
fn missing_subterm(kb: &KnowledgeBase, t: &Term) -> Term {
    for c in t.children() {
        if !kb.derivable(c) {
            return missing_subterm(kb, c);
        }
    }
    t.clone()
}

fn project_role(spec: &ProtocolSpec, role: &str, role_names: &BTreeSet<String>) -> RoleView {
    let init = spec.knowledge.get(role).cloned().unwrap_or_default();
    let mut parameters = vec![role.to_string()];
    for t in &init {
        for a in t.atoms() {
            if role_names.contains(&a.name) && !parameters.contains(&a.name) {
                parameters.push(a.name);
            }
        }
    }
    let mut known: BTreeSet<Term> = init.iter().cloned().collect();
    known.insert(Term::agent(role));
    let mut view = RoleView {
        script: RoleScript {
            role: role.to_string(),
            parameters: parameters.clone(),
            fresh: Vec::new(),
            knowledge: Vec::new(),
            steps: Vec::new(),
            claims: Vec::new(),
        },
        vars: parameters.into_iter().collect(),
        opaque: Vec::new(),
        reserved: spec.declarations.iter().map(|(n, _)| n.to_string()).collect(),
        known_after: Vec::new(),
        problems: Vec::new(),
    };
    view.script.knowledge = init.iter().map(|t| view.mark(t)).collect();

    for (idx, action) in spec.actions.iter().enumerate() {
        if action.sender == role {
            let kb = KnowledgeBase::from_facts(known.clone());
            let mut atoms = Vec::new();
            content_atoms(&action.payload, &mut atoms);
            for a in atoms {
                let t = Term::Atom(a.clone());
                let generable = matches!(a.sort, Sort::Number | Sort::SymmetricKey)
                    && !spec.actions[..idx].iter().any(|b| b.payload.contains(&t))
                    && !spec.knowledge.values().flatten().any(|k| k.contains(&t));
                if generable && !kb.derivable(&t) {
                    view.vars.insert(a.name.clone());
                    view.script.fresh.push(Atom { var: true, ..a.clone() });
                    known.insert(Term::Atom(a));
                }
            }
            let kb = KnowledgeBase::from_facts(known.clone());
            if !kb.derivable(&action.payload) {
                view.problems.push(NotExecutable {
                    role: role.to_string(),
                    step: view.script.steps.len() + 1,
                    missing: missing_subterm(&kb, &action.payload),
                });
            }
            let payload = view.mark(&action.payload);
            view.script.steps.push(Step::Send {
                action: idx,
                payload,
                mode: action.mode,
                peer: action.receiver.clone(),
            });
            known.insert(action.payload.clone());
            view.known_after.push(known.clone());
        } else if action.receiver == role {
            let before = KnowledgeBase::from_facts(known.clone());
            known.insert(action.payload.clone());
            let after = KnowledgeBase::from_facts(known.clone());
            let pattern = view.receive(&action.payload, &before, &after);
            view.script.steps.push(Step::Receive {
                action: idx,
                pattern,
                mode: action.mode,
                peer: action.sender.clone(),
            });
            view.known_after.push(known.clone());
        }
    }
    view
}

fn project_all(spec: &ProtocolSpec) -> BTreeMap<String, RoleView> {
    let roles = spec.roles();
    let role_names: BTreeSet<String> = roles.iter().cloned().collect();
    let mut views: BTreeMap<String, RoleView> =
        roles.iter().map(|r| (r.clone(), project_role(spec, r, &role_names))).collect();

    let mut claims: Vec<(String, usize, usize, ClaimSpec)> = Vec::new();
    for (gi, goal) in spec.goals.iter().enumerate() {
        match goal {
            Goal::Secrecy { term, parties } => {
                for p in parties {
                    if let Some(v) = views.get(p) {
                        let last = v.script.steps.len().saturating_sub(1);
                        let c = ClaimSpec::Secret { goal: gi, term: v.mark(term), parties: parties.clone() };
                        claims.push((p.clone(), last, gi, c));
                    }
                }
            }
            Goal::WeakAgreement { claimer, peer, on } | Goal::InjAgreement { claimer, peer, on } => {
                if let Some(v) = views.get(claimer) {
                    let last = v.script.steps.len().saturating_sub(1);
                    let terms = on.iter().map(|t| v.mark(t)).collect();
                    claims.push((claimer.clone(), last, gi, ClaimSpec::Commit { goal: gi, peer: peer.clone(), terms }));
                }
                if let Some(v) = views.get(peer) {
                    let at = (0..v.script.steps.len())
                        .rev()
                        .find(|&j| {
                            v.script.steps[j].is_send() && {
                                let kb = KnowledgeBase::from_facts(v.known_after[j].clone());
                                on.iter().all(|t| kb.derivable(t))
                            }
                        })
                        .unwrap_or(v.script.steps.len().saturating_sub(1));
                    let terms = on.iter().map(|t| v.mark(t)).collect();
                    claims.push((peer.clone(), at, gi, ClaimSpec::Running { goal: gi, claimer: claimer.clone(), terms }));
                }
            }
        }
    }
    claims.sort_by_key(|(_, at, gi, _)| (*at, *gi));
    for (role, at, _, c) in claims {
        if let Some(v) = views.get_mut(&role) {
            v.script.claims.push((at, c));
        }
    }
    views
}

/// Per-role scripts, keyed by role name.
pub fn project_roles(spec: &ProtocolSpec) -> BTreeMap<String, RoleScript> {
    project_all(spec).into_iter().map(|(r, v)| (r, v.script)).collect()
}

/// Every send whose payload the sender cannot build from what it knows at
/// that point. Empty iff the protocol is executable.
pub fn executability_check(spec: &ProtocolSpec) -> Vec<NotExecutable> {
    let views = project_all(spec);
    spec.roles().iter().flat_map(|r| views[r].problems.clone()).collect()
}
