//! Abstract test cases: a flat, replayable serialization of an attack, its
//! JSON form, and the intruder script compiled from it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anb::parse_term;
use crate::checker::{
    ground_declarations, rebuild_trace, AttackTrace, ClaimEvent, Session, TraceEvent, ViolationKind, Witness,
    INTRUDER,
};
use crate::dolev_yao::{Derivation, Rule};
use crate::model::{Atom, ChannelMode, Declarations, ProtocolSpec, Term};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AtcStep {
    ExpectSend { instance: String, term: Term },
    /// The intruder adds the message `instance` just sent to its knowledge.
    Observe { instance: String, term: Term },
    Inject { instance: String, term: Term, from: Option<String> },
}

impl fmt::Display for AtcStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtcStep::ExpectSend { instance, term } => write!(f, "expect {instance} sends {term}"),
            AtcStep::Observe { term, .. } => write!(f, "observe {term}"),
            AtcStep::Inject { instance, term, .. } => write!(f, "inject {term} into {instance}"),
        }
    }
}

pub type Assertion = ViolationKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractTestCase {
    pub protocol: String,
    pub goal: usize,
    pub agents: Vec<String>,
    pub sessions: Vec<Session>,
    pub steps: Vec<AtcStep>,
    pub assertion: Assertion,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("cannot parse term `{term}`: {message}")]
    Term { term: String, message: String },
}

/// Network events become steps in order: a send is expected and, when the
/// intruder can read it, observed; a delivery is an injection. Claims are
/// internal to the participants and are dropped.
pub fn trace_to_atc(trace: &AttackTrace) -> AbstractTestCase {
    let mut steps = Vec::new();
    for e in &trace.events {
        match e {
            TraceEvent::Send { instance, term, mode } => {
                steps.push(AtcStep::ExpectSend { instance: instance.clone(), term: term.clone() });
                let to_intruder = receiver_agent(trace, instance).as_deref() == Some(INTRUDER);
                if mode.intruder_readable() || to_intruder {
                    steps.push(AtcStep::Observe { instance: instance.clone(), term: term.clone() });
                }
            }
            TraceEvent::Deliver { instance, term, sender } => {
                steps.push(AtcStep::Inject { instance: instance.clone(), term: term.clone(), from: sender.clone() })
            }
            TraceEvent::Claim(_) => {}
        }
    }
    AbstractTestCase {
        protocol: trace.protocol.clone(),
        goal: trace.goal,
        agents: trace.agents.clone(),
        sessions: trace.sessions.clone(),
        steps,
        assertion: trace.violation.clone(),
    }
}

/// Intended receiver of a send, read off the sender's session. Only needed
/// to tell whether a non-readable send went to the intruder.
fn receiver_agent(trace: &AttackTrace, instance: &str) -> Option<String> {
    let (sid, role) = instance.split_once('/')?;
    let session = trace.sessions.iter().find(|s| s.id == sid)?;
    let others: Vec<&String> = session.roles.iter().filter(|(r, _)| r.as_str() != role).map(|(_, a)| a).collect();
    match others.as_slice() {
        [only] => Some((*only).clone()),
        _ => None,
    }
}

/// Inverse of [`trace_to_atc`] up to claim events, which are recomputed.
pub fn atc_to_trace(spec: &ProtocolSpec, atc: &AbstractTestCase) -> Result<AttackTrace, String> {
    let mut events = Vec::new();
    let scripts = crate::checker::project_roles(spec);
    let mut pcs: BTreeMap<String, usize> = BTreeMap::new();
    for step in &atc.steps {
        let (instance, term) = match step {
            AtcStep::Observe { .. } => continue,
            AtcStep::ExpectSend { instance, term } | AtcStep::Inject { instance, term, .. } => (instance, term),
        };
        let role = instance.split_once('/').map(|(_, r)| r).ok_or_else(|| format!("bad instance `{instance}`"))?;
        let script = scripts.get(role).ok_or_else(|| format!("unknown role in `{instance}`"))?;
        let pc = pcs.entry(instance.clone()).or_default();
        let mode = script.steps.get(*pc).map(|s| s.mode()).unwrap_or(ChannelMode::Plain);
        *pc += 1;
        events.push(match step {
            AtcStep::Inject { from, .. } => {
                TraceEvent::Deliver { instance: instance.clone(), term: term.clone(), sender: from.clone() }
            }
            _ => TraceEvent::Send { instance: instance.clone(), term: term.clone(), mode },
        });
    }
    let trace = rebuild_trace(spec, &atc.agents, atc.sessions.clone(), &events, atc.goal)?;
    if trace.violation != atc.assertion {
        return Err("replayed violation differs from the assertion".into());
    }
    Ok(trace)
}

// JSON documents. Terms travel as AnB surface syntax.

#[derive(Serialize, Deserialize)]
struct SessionDoc {
    id: String,
    roles: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum StepDoc {
    ExpectSend {
        instance: String,
        term: String,
    },
    Observe {
        instance: String,
        term: String,
    },
    Inject {
        instance: String,
        term: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<String>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum AssertDoc {
    SecretLearned { term: String },
    CommitWithoutRunning { claimer: String, peer: String, terms: Vec<String> },
    DuplicateCommit { claimer: String, peer: String, terms: Vec<String> },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtcDoc {
    protocol: String,
    goal: String,
    goal_index: usize,
    agents: Vec<String>,
    sessions: Vec<SessionDoc>,
    steps: Vec<StepDoc>,
    #[serde(rename = "assert")]
    assertion: AssertDoc,
}

fn terms_str(ts: &[Term]) -> Vec<String> {
    ts.iter().map(Term::to_string).collect()
}

fn assert_doc(a: &Assertion) -> AssertDoc {
    match a {
        ViolationKind::SecretLearned { term } => AssertDoc::SecretLearned { term: term.to_string() },
        ViolationKind::CommitWithoutRunning { claimer, peer, terms } => AssertDoc::CommitWithoutRunning {
            claimer: claimer.clone(),
            peer: peer.clone(),
            terms: terms_str(terms),
        },
        ViolationKind::DuplicateCommit { claimer, peer, terms } => {
            AssertDoc::DuplicateCommit { claimer: claimer.clone(), peer: peer.clone(), terms: terms_str(terms) }
        }
    }
}

struct Reader {
    decls: Declarations,
}

impl Reader {
    fn new(spec: &ProtocolSpec, agents: &[String]) -> Self {
        Reader { decls: ground_declarations(spec, agents) }
    }

    fn term(&self, s: &str) -> Result<Term, FormatError> {
        let t = parse_term(s, &self.decls).map_err(|d| FormatError::Term {
            term: s.to_string(),
            message: d.iter().map(|x| x.message.clone()).collect::<Vec<_>>().join("; "),
        })?;
        Ok(t)
    }

    fn terms(&self, ss: &[String]) -> Result<Vec<Term>, FormatError> {
        ss.iter().map(|s| self.term(s)).collect()
    }

    fn assertion(&self, a: AssertDoc) -> Result<Assertion, FormatError> {
        Ok(match a {
            AssertDoc::SecretLearned { term } => ViolationKind::SecretLearned { term: self.term(&term)? },
            AssertDoc::CommitWithoutRunning { claimer, peer, terms } => {
                ViolationKind::CommitWithoutRunning { claimer, peer, terms: self.terms(&terms)? }
            }
            AssertDoc::DuplicateCommit { claimer, peer, terms } => {
                ViolationKind::DuplicateCommit { claimer, peer, terms: self.terms(&terms)? }
            }
        })
    }
}

fn sessions_doc(sessions: &[Session]) -> Vec<SessionDoc> {
    sessions.iter().map(|s| SessionDoc { id: s.id.clone(), roles: s.roles.clone() }).collect()
}

fn check_sessions(spec: &ProtocolSpec, agents: &[String], docs: Vec<SessionDoc>) -> Result<Vec<Session>, FormatError> {
    let roles = spec.roles();
    let mut seen = BTreeSet::new();
    docs.into_iter()
        .map(|d| {
            if !seen.insert(d.id.clone()) {
                return Err(FormatError::Schema(format!("duplicate session `{}`", d.id)));
            }
            for r in &roles {
                match d.roles.get(r) {
                    Some(a) if agents.contains(a) => {}
                    _ => return Err(FormatError::Schema(format!("session `{}` lacks a pool agent for {r}", d.id))),
                }
            }
            Ok(Session { id: d.id, roles: d.roles })
        })
        .collect()
}

impl AbstractTestCase {
    pub fn to_json(&self, spec: &ProtocolSpec) -> String {
        let doc = AtcDoc {
            protocol: self.protocol.clone(),
            goal: spec.goals.get(self.goal).map(|g| g.to_string()).unwrap_or_default(),
            goal_index: self.goal,
            agents: self.agents.clone(),
            sessions: sessions_doc(&self.sessions),
            steps: self
                .steps
                .iter()
                .map(|s| match s {
                    AtcStep::ExpectSend { instance, term } => {
                        StepDoc::ExpectSend { instance: instance.clone(), term: term.to_string() }
                    }
                    AtcStep::Observe { instance, term } => {
                        StepDoc::Observe { instance: instance.clone(), term: term.to_string() }
                    }
                    AtcStep::Inject { instance, term, from } => {
                        StepDoc::Inject { instance: instance.clone(), term: term.to_string(), from: from.clone() }
                    }
                })
                .collect(),
            assertion: assert_doc(&self.assertion),
        };
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
    }

    /// Parses and validates an ATC document against the protocol it targets.
    pub fn from_json(text: &str, spec: &ProtocolSpec) -> Result<Self, FormatError> {
        let doc: AtcDoc = serde_json::from_str(text).map_err(|e| FormatError::Json(e.to_string()))?;
        if doc.protocol != spec.name {
            return Err(FormatError::Schema(format!("test case is for `{}`, not `{}`", doc.protocol, spec.name)));
        }
        let goal = spec
            .goals
            .get(doc.goal_index)
            .ok_or_else(|| FormatError::Schema(format!("goal index {} out of range", doc.goal_index)))?;
        if goal.to_string() != doc.goal {
            return Err(FormatError::Schema(format!("goal `{}` does not match index {}", doc.goal, doc.goal_index)));
        }
        if doc.steps.is_empty() {
            return Err(FormatError::Schema("a test case needs at least one step".into()));
        }
        let reader = Reader::new(spec, &doc.agents);
        let sessions = check_sessions(spec, &doc.agents, doc.sessions)?;
        let known_instance = |i: &str| {
            i.split_once('/').is_some_and(|(sid, role)| {
                sessions.iter().any(|s| s.id == sid && s.roles.get(role).is_some_and(|a| a != INTRUDER))
            })
        };
        let mut steps = Vec::new();
        for s in doc.steps {
            let (instance, term) = match &s {
                StepDoc::ExpectSend { instance, term }
                | StepDoc::Observe { instance, term }
                | StepDoc::Inject { instance, term, .. } => (instance.clone(), reader.term(term)?),
            };
            if !known_instance(&instance) {
                return Err(FormatError::Schema(format!("step refers to unknown instance `{instance}`")));
            }
            if !term.is_ground() {
                return Err(FormatError::Schema(format!("term `{term}` is not ground")));
            }
            steps.push(match s {
                StepDoc::ExpectSend { .. } => AtcStep::ExpectSend { instance, term },
                StepDoc::Observe { .. } => AtcStep::Observe { instance, term },
                StepDoc::Inject { from, .. } => AtcStep::Inject { instance, term, from },
            });
        }
        Ok(AbstractTestCase {
            protocol: doc.protocol,
            goal: doc.goal_index,
            agents: doc.agents,
            sessions,
            steps,
            assertion: reader.assertion(doc.assertion)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ClaimDoc {
    Running { goal: usize, instance: String, actor: String, claimer: String, terms: Vec<String> },
    Commit { goal: usize, instance: String, claimer: String, peer: String, terms: Vec<String> },
    Secret { goal: usize, instance: String, term: String, parties: Vec<String> },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum EventDoc {
    Send {
        instance: String,
        term: String,
        mode: String,
    },
    Deliver {
        instance: String,
        term: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<String>,
    },
    Claim {
        claim: ClaimDoc,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum DerivationDoc {
    Known(String),
    Compose { rule: String, conclusion: String, premises: Vec<DerivationDoc> },
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum WitnessDoc {
    Derivation(DerivationDoc),
    Commit(ClaimDoc),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceDoc {
    protocol: String,
    goal: String,
    goal_index: usize,
    also_violated: Vec<usize>,
    violation: AssertDoc,
    agents: Vec<String>,
    sessions: Vec<SessionDoc>,
    events: Vec<EventDoc>,
    witness: WitnessDoc,
}

fn claim_doc(c: &ClaimEvent) -> ClaimDoc {
    match c.clone() {
        ClaimEvent::Running { goal, instance, actor, claimer, terms } => {
            ClaimDoc::Running { goal, instance, actor, claimer, terms: terms_str(&terms) }
        }
        ClaimEvent::Commit { goal, instance, claimer, peer, terms } => {
            ClaimDoc::Commit { goal, instance, claimer, peer, terms: terms_str(&terms) }
        }
        ClaimEvent::Secret { goal, instance, term, parties } => {
            ClaimDoc::Secret { goal, instance, term: term.to_string(), parties }
        }
    }
}

fn rule_name(r: Rule) -> &'static str {
    match r {
        Rule::PairIntro => "pair",
        Rule::SymEncIntro => "senc",
        Rule::AsymEncIntro => "aenc",
        Rule::SignIntro => "sign",
        Rule::FunAppIntro => "apply",
    }
}

fn derivation_doc(d: &Derivation) -> DerivationDoc {
    match d {
        Derivation::Known(t) => DerivationDoc::Known(t.to_string()),
        Derivation::Compose { rule, conclusion, premises } => DerivationDoc::Compose {
            rule: rule_name(*rule).into(),
            conclusion: conclusion.to_string(),
            premises: premises.iter().map(derivation_doc).collect(),
        },
    }
}

impl Reader {
    fn claim(&self, c: ClaimDoc) -> Result<ClaimEvent, FormatError> {
        Ok(match c {
            ClaimDoc::Running { goal, instance, actor, claimer, terms } => {
                ClaimEvent::Running { goal, instance, actor, claimer, terms: self.terms(&terms)? }
            }
            ClaimDoc::Commit { goal, instance, claimer, peer, terms } => {
                ClaimEvent::Commit { goal, instance, claimer, peer, terms: self.terms(&terms)? }
            }
            ClaimDoc::Secret { goal, instance, term, parties } => {
                ClaimEvent::Secret { goal, instance, term: self.term(&term)?, parties }
            }
        })
    }

    fn derivation(&self, d: DerivationDoc) -> Result<Derivation, FormatError> {
        Ok(match d {
            DerivationDoc::Known(t) => Derivation::Known(self.term(&t)?),
            DerivationDoc::Compose { rule, conclusion, premises } => {
                let rule = match rule.as_str() {
                    "pair" => Rule::PairIntro,
                    "senc" => Rule::SymEncIntro,
                    "aenc" => Rule::AsymEncIntro,
                    "sign" => Rule::SignIntro,
                    "apply" => Rule::FunAppIntro,
                    other => return Err(FormatError::Schema(format!("unknown rule `{other}`"))),
                };
                Derivation::Compose {
                    rule,
                    conclusion: self.term(&conclusion)?,
                    premises: premises.into_iter().map(|p| self.derivation(p)).collect::<Result<_, _>>()?,
                }
            }
        })
    }
}

pub fn trace_to_json(spec: &ProtocolSpec, trace: &AttackTrace) -> String {
    let doc = TraceDoc {
        protocol: trace.protocol.clone(),
        goal: spec.goals.get(trace.goal).map(|g| g.to_string()).unwrap_or_default(),
        goal_index: trace.goal,
        also_violated: trace.also_violated.clone(),
        violation: assert_doc(&trace.violation),
        agents: trace.agents.clone(),
        sessions: sessions_doc(&trace.sessions),
        events: trace
            .events
            .iter()
            .map(|e| match e {
                TraceEvent::Send { instance, term, mode } => EventDoc::Send {
                    instance: instance.clone(),
                    term: term.to_string(),
                    mode: mode.arrow().into(),
                },
                TraceEvent::Deliver { instance, term, sender } => {
                    EventDoc::Deliver { instance: instance.clone(), term: term.to_string(), from: sender.clone() }
                }
                TraceEvent::Claim(c) => EventDoc::Claim { claim: claim_doc(c) },
            })
            .collect(),
        witness: match &trace.witness {
            Witness::Derivation(d) => WitnessDoc::Derivation(derivation_doc(d)),
            Witness::Commit(c) => WitnessDoc::Commit(claim_doc(c)),
        },
    };
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

pub fn trace_from_json(text: &str, spec: &ProtocolSpec) -> Result<AttackTrace, FormatError> {
    let doc: TraceDoc = serde_json::from_str(text).map_err(|e| FormatError::Json(e.to_string()))?;
    if doc.protocol != spec.name {
        return Err(FormatError::Schema(format!("trace is for `{}`, not `{}`", doc.protocol, spec.name)));
    }
    if doc.goal_index >= spec.goals.len() {
        return Err(FormatError::Schema(format!("goal index {} out of range", doc.goal_index)));
    }
    let reader = Reader::new(spec, &doc.agents);
    let sessions = check_sessions(spec, &doc.agents, doc.sessions)?;
    let events = doc
        .events
        .into_iter()
        .map(|e| {
            Ok(match e {
                EventDoc::Send { instance, term, mode } => TraceEvent::Send {
                    instance,
                    term: reader.term(&term)?,
                    mode: ChannelMode::from_arrow(&mode)
                        .ok_or_else(|| FormatError::Schema(format!("unknown channel `{mode}`")))?,
                },
                EventDoc::Deliver { instance, term, from } => {
                    TraceEvent::Deliver { instance, term: reader.term(&term)?, sender: from }
                }
                EventDoc::Claim { claim } => TraceEvent::Claim(reader.claim(claim)?),
            })
        })
        .collect::<Result<Vec<_>, FormatError>>()?;
    Ok(AttackTrace {
        protocol: doc.protocol,
        goal: doc.goal_index,
        also_violated: doc.also_violated,
        violation: reader.assertion(doc.violation)?,
        agents: doc.agents,
        sessions,
        events,
        witness: match doc.witness {
            WitnessDoc::Derivation(d) => Witness::Derivation(reader.derivation(d)?),
            WitnessDoc::Commit(c) => Witness::Commit(reader.claim(c)?),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    /// Block until `from` emits a message matching `pattern`; variables in
    /// the pattern are bound for later directives.
    WaitFor { pattern: Term, from: String },
    /// Put a message in the pending queue of instance `to`, claiming to be
    /// `from` on authenticated channels.
    Send { to: String, term: Term, from: Option<String> },
    /// Name the last message waited for.
    Record { binding: String },
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::WaitFor { pattern, from } => write!(f, "wait for {from}: {pattern}"),
            Directive::Send { to, term, .. } => write!(f, "send to {to}: {term}"),
            Directive::Record { binding } => write!(f, "record {binding}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntruderScript {
    pub protocol: String,
    pub agents: Vec<String>,
    pub sessions: Vec<Session>,
    pub directives: Vec<Directive>,
    /// Goal and violation the script is expected to reproduce. Absent for a
    /// passive network.
    pub expect: Option<(usize, Assertion)>,
}

/// Honest fresh names (`NA#s1`) in expected sends become pattern variables,
/// so the script replays against participants whose fresh values differ
/// from the trace's; later sends are instantiated from those bindings.
pub fn atc_to_intruder_script(atc: &AbstractTestCase) -> IntruderScript {
    let mut vars: BTreeSet<String> = BTreeSet::new();
    let mut directives = Vec::new();
    let mut observed = 0;
    let to_pattern = |t: &Term, vars: &BTreeSet<String>| {
        t.map_atoms(&mut |a| {
            if vars.contains(&a.name) {
                Term::Atom(Atom { var: true, ..a.clone() })
            } else {
                Term::Atom(a.clone())
            }
        })
    };
    for s in &atc.steps {
        match s {
            AtcStep::ExpectSend { instance, term } => {
                let session = instance.split('/').next().unwrap_or("");
                for a in term.atoms() {
                    if a.name.split_once('#').is_some_and(|(_, sid)| sid == session) {
                        vars.insert(a.name);
                    }
                }
                directives.push(Directive::WaitFor { pattern: to_pattern(term, &vars), from: instance.clone() });
            }
            AtcStep::Observe { .. } => {
                observed += 1;
                directives.push(Directive::Record { binding: format!("m{observed}") });
            }
            AtcStep::Inject { instance, term, from } => directives.push(Directive::Send {
                to: instance.clone(),
                term: to_pattern(term, &vars),
                from: from.clone(),
            }),
        }
    }
    IntruderScript {
        protocol: atc.protocol.clone(),
        agents: atc.agents.clone(),
        sessions: atc.sessions.clone(),
        directives,
        expect: Some((atc.goal, atc.assertion.clone())),
    }
}
