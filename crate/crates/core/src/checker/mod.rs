//! Bounded-session model checking. Roles are projected into scripts, each
//! scenario (a multiset of sessions) is instantiated with ground fresh
//! names, and the interleavings are searched depth-first with the intruder
//! acting as the network.

mod engine;
mod project;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::dolev_yao::{Derivation, KnowledgeBase};
use crate::model::{Binding, ChannelMode, Declarations, Goal, ProtocolSpec, Sort, Term, TermList};
use engine::{agent_of, Engine, Move, StateKey, World};

pub use project::{executability_check, project_roles, ClaimSpec, NotExecutable, RoleScript, Step};

/// The dishonest agent.
pub const INTRUDER: &str = "i";
/// Nonce and key the intruder generates itself.
pub const INTRUDER_NONCE: &str = "ni";
pub const INTRUDER_KEY: &str = "ki";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    /// Role name to agent name.
    pub roles: BTreeMap<String, String>,
}

impl fmt::Display for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.roles.iter().map(|(r, a)| format!("{r}={a}")).collect();
        write!(f, "{}: {}", self.id, parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClaimEvent {
    Running { goal: usize, instance: String, actor: String, claimer: String, terms: Vec<Term> },
    Commit { goal: usize, instance: String, claimer: String, peer: String, terms: Vec<Term> },
    Secret { goal: usize, instance: String, term: Term, parties: Vec<String> },
}

impl ClaimEvent {
    pub fn goal(&self) -> usize {
        match self {
            ClaimEvent::Running { goal, .. } | ClaimEvent::Commit { goal, .. } | ClaimEvent::Secret { goal, .. } => {
                *goal
            }
        }
    }

    pub fn instance(&self) -> &str {
        match self {
            ClaimEvent::Running { instance, .. }
            | ClaimEvent::Commit { instance, .. }
            | ClaimEvent::Secret { instance, .. } => instance,
        }
    }
}

impl fmt::Display for ClaimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClaimEvent::Running { actor, claimer, terms, .. } => {
                write!(f, "running({actor},{claimer},{})", TermList(terms))
            }
            ClaimEvent::Commit { claimer, peer, terms, .. } => {
                write!(f, "commit({claimer},{peer},{})", TermList(terms))
            }
            ClaimEvent::Secret { term, parties, .. } => write!(f, "secret({term},{})", parties.join(",")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Send { instance: String, term: Term, mode: ChannelMode },
    /// Delivery by the network; `sender` is who the receiver believes sent it.
    Deliver { instance: String, term: Term, sender: Option<String> },
    Claim(ClaimEvent),
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Send { instance, term, mode } => write!(f, "{instance} sends {term} on {mode}"),
            TraceEvent::Deliver { instance, term, sender: Some(s) } => {
                write!(f, "{instance} receives {term} (as from {s})")
            }
            TraceEvent::Deliver { instance, term, sender: None } => write!(f, "{instance} receives {term}"),
            TraceEvent::Claim(c) => write!(f, "{} claims {c}", c.instance()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    SecretLearned { term: Term },
    CommitWithoutRunning { claimer: String, peer: String, terms: Vec<Term> },
    DuplicateCommit { claimer: String, peer: String, terms: Vec<Term> },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::SecretLearned { term } => write!(f, "intruder learned {term}"),
            ViolationKind::CommitWithoutRunning { claimer, peer, terms } => {
                write!(f, "{claimer} committed with {peer} on {} without a matching run", TermList(terms))
            }
            ViolationKind::DuplicateCommit { claimer, peer, terms } => {
                write!(f, "{claimer} committed with {peer} on {} more often than {peer} ran", TermList(terms))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Witness {
    Derivation(Derivation),
    Commit(ClaimEvent),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub goal: usize,
    pub kind: ViolationKind,
    pub witness: Witness,
}

/// Ground claim event for an instance, or `None` while some variable the
/// claim mentions is still unbound.
pub fn instantiate_claim(claim: &ClaimSpec, instance: &str, agent: &str, binding: &Binding) -> Option<ClaimEvent> {
    let ground = |ts: &[Term]| -> Option<Vec<Term>> {
        let out: Vec<Term> = ts.iter().map(|t| t.substitute(binding)).collect();
        out.iter().all(Term::is_ground).then_some(out)
    };
    match claim {
        ClaimSpec::Running { goal, claimer, terms } => Some(ClaimEvent::Running {
            goal: *goal,
            instance: instance.to_string(),
            actor: agent.to_string(),
            claimer: agent_of(binding, claimer).unwrap_or_else(|| "?".into()),
            terms: ground(terms)?,
        }),
        ClaimSpec::Commit { goal, peer, terms } => Some(ClaimEvent::Commit {
            goal: *goal,
            instance: instance.to_string(),
            claimer: agent.to_string(),
            peer: agent_of(binding, peer)?,
            terms: ground(terms)?,
        }),
        ClaimSpec::Secret { goal, term, parties } => Some(ClaimEvent::Secret {
            goal: *goal,
            instance: instance.to_string(),
            term: ground(std::slice::from_ref(term))?.remove(0),
            parties: parties.iter().map(|p| agent_of(binding, p)).collect::<Option<_>>()?,
        }),
    }
}

/// Goal violations in a state given its claim ledger and the intruder's
/// knowledge; at most one per goal, in goal order.
///
/// Secrecy fails when the intruder derives a claimed secret whose parties
/// are all honest. Agreement fails on a commit by an honest claimer with an
/// honest peer that has no running event with the same agents and terms;
/// the injective flavour also fails when such commits outnumber runnings.
pub fn evaluate_goals(goals: &[Goal], claims: &[ClaimEvent], kb: &KnowledgeBase) -> Vec<Violation> {
    let mut out = Vec::new();
    for (gi, goal) in goals.iter().enumerate() {
        let found = match goal {
            Goal::Secrecy { .. } => claims.iter().find_map(|c| match c {
                ClaimEvent::Secret { goal, term, parties, .. }
                    if *goal == gi && parties.iter().all(|p| p != INTRUDER) =>
                {
                    kb.can_derive(term).map(|d| Violation {
                        goal: gi,
                        kind: ViolationKind::SecretLearned { term: term.clone() },
                        witness: Witness::Derivation(d),
                    })
                }
                _ => None,
            }),
            Goal::WeakAgreement { .. } | Goal::InjAgreement { .. } => {
                let injective = matches!(goal, Goal::InjAgreement { .. });
                let mut commits_seen: BTreeMap<(&str, &str, &[Term]), usize> = BTreeMap::new();
                claims.iter().find_map(|c| {
                    let ClaimEvent::Commit { goal, claimer, peer, terms, .. } = c else { return None };
                    if *goal != gi || peer == INTRUDER || claimer == INTRUDER {
                        return None;
                    }
                    let runs = claims
                        .iter()
                        .filter(|r| {
                            matches!(r, ClaimEvent::Running { goal, actor, claimer: rc, terms: rt, .. }
                                if *goal == gi && actor == peer && rc == claimer && rt == terms)
                        })
                        .count();
                    let n = commits_seen.entry((claimer, peer, terms)).or_default();
                    *n += 1;
                    let (claimer, peer, terms) = (claimer.clone(), peer.clone(), terms.clone());
                    let kind = if runs == 0 {
                        ViolationKind::CommitWithoutRunning { claimer, peer, terms }
                    } else if injective && *n > runs {
                        ViolationKind::DuplicateCommit { claimer, peer, terms }
                    } else {
                        return None;
                    };
                    Some(Violation { goal: gi, kind, witness: Witness::Commit(c.clone()) })
                })
            }
        };
        out.extend(found);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackTrace {
    pub protocol: String,
    /// Index into the specification's goals.
    pub goal: usize,
    /// Further goals violated in the final state.
    pub also_violated: Vec<usize>,
    pub violation: ViolationKind,
    /// Agent pool the intruder's initial knowledge was built from.
    pub agents: Vec<String>,
    pub sessions: Vec<Session>,
    pub events: Vec<TraceEvent>,
    pub witness: Witness,
}

impl AttackTrace {
    pub fn render(&self, spec: &ProtocolSpec) -> String {
        let mut s = format!("attack on {}: {}\n", self.protocol, spec.goals[self.goal]);
        for g in &self.also_violated {
            s.push_str(&format!("also violated: {}\n", spec.goals[*g]));
        }
        s.push_str(&format!("violation: {}\n", self.violation));
        for sess in &self.sessions {
            s.push_str(&format!("session {sess}\n"));
        }
        for (k, e) in self.events.iter().enumerate() {
            s.push_str(&format!("{:>3}. {e}\n", k + 1));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchConfig {
    pub max_sessions: usize,
    /// Honest agent names plus, optionally, the intruder `i`.
    pub agents: Vec<String>,
    pub max_depth: usize,
    pub max_states: usize,
    /// Explicit role assignments; `None` means all instantiations.
    pub assignments: Option<Vec<BTreeMap<String, String>>>,
    /// Lifts the three-session guardrail.
    pub allow_many_sessions: bool,
    /// Explores scenarios on the rayon pool; results are merged in
    /// scenario order so the outcome equals the sequential one.
    pub parallel: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_sessions: 2,
            agents: vec!["a".into(), "b".into(), INTRUDER.into()],
            max_depth: 64,
            max_states: 1_000_000,
            assignments: None,
            allow_many_sessions: false,
            parallel: false,
        }
    }
}

impl SearchConfig {
    pub fn with_sessions(mut self, n: usize) -> Self {
        self.max_sessions = n;
        self
    }

    pub fn with_agents(mut self, agents: &[&str]) -> Self {
        self.agents = agents.iter().map(|a| a.to_string()).collect();
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("protocol is not executable: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    NotExecutable(Vec<NotExecutable>),
    #[error("search budget exceeded after {states} states (depth bound {depth})")]
    SearchBudgetExceeded { states: usize, depth: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    SafeAtBound,
    Attack(Box<AttackTrace>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchOutcome {
    pub verdict: Verdict,
    pub states: usize,
    pub scenarios: usize,
}

/// All `len`-tuples over `0..base`, first position most significant.
pub(crate) fn tuples(len: usize, base: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out.into_iter().flat_map(|t| (0..base).map(move |d| [t.clone(), vec![d]].concat())).collect();
    }
    out
}

/// Role assignments over the agent pool, excluding all-dishonest ones and
/// those giving one honest agent two roles.
pub fn session_types(roles: &[String], agents: &[String]) -> Vec<BTreeMap<String, String>> {
    tuples(roles.len(), agents.len())
        .into_iter()
        .filter_map(|t| {
            let chosen: Vec<&String> = t.iter().map(|&k| &agents[k]).collect();
            if chosen.iter().all(|a| *a == INTRUDER) {
                return None;
            }
            let honest: Vec<&&String> = chosen.iter().filter(|a| **a != INTRUDER).collect();
            let distinct: BTreeSet<&&String> = honest.iter().copied().collect();
            if distinct.len() != honest.len() {
                return None;
            }
            Some(roles.iter().cloned().zip(chosen.into_iter().cloned()).collect())
        })
        .collect()
}

/// Multisets of session types of size 1..=max, smaller first, each size in
/// lexicographic order. Sessions are numbered `s1`, `s2`, ...
pub fn scenarios(types: &[BTreeMap<String, String>], max: usize) -> Vec<Vec<Session>> {
    fn extend(from: usize, left: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for k in from..n {
            cur.push(k);
            extend(k, left - 1, n, cur, out);
            cur.pop();
        }
    }
    let mut idx = Vec::new();
    for size in 1..=max {
        extend(0, size, types.len(), &mut Vec::new(), &mut idx);
    }
    idx.into_iter()
        .map(|combo| {
            combo
                .into_iter()
                .enumerate()
                .map(|(k, t)| Session { id: format!("s{}", k + 1), roles: types[t].clone() })
                .collect()
        })
        .collect()
}

fn validate(spec: &ProtocolSpec, config: &SearchConfig) -> Result<(), CheckError> {
    if config.max_sessions == 0 {
        return Err(CheckError::Config("max_sessions must be at least 1".into()));
    }
    if config.max_sessions > 3 && !config.allow_many_sessions {
        return Err(CheckError::Config("more than 3 sessions needs the explicit override".into()));
    }
    if !config.agents.iter().any(|a| a != INTRUDER) {
        return Err(CheckError::Config("agent pool needs at least one honest agent".into()));
    }
    let uniq: BTreeSet<&String> = config.agents.iter().collect();
    if uniq.len() != config.agents.len() {
        return Err(CheckError::Config("duplicate agent in pool".into()));
    }
    for a in &config.agents {
        if spec.declarations.contains(a) {
            return Err(CheckError::Config(format!("agent name `{a}` clashes with a declared identifier")));
        }
    }
    if let Some(list) = &config.assignments {
        let roles = spec.roles();
        for m in list {
            for r in &roles {
                match m.get(r) {
                    Some(a) if config.agents.contains(a) => {}
                    Some(a) => return Err(CheckError::Config(format!("agent `{a}` is not in the pool"))),
                    None => return Err(CheckError::Config(format!("assignment lacks role {r}"))),
                }
            }
        }
    }
    let problems = executability_check(spec);
    if !problems.is_empty() {
        return Err(CheckError::NotExecutable(problems));
    }
    Ok(())
}

fn all_scenarios(spec: &ProtocolSpec, config: &SearchConfig) -> Vec<Vec<Session>> {
    let types = match &config.assignments {
        Some(list) => list.clone(),
        None => session_types(&spec.roles(), &config.agents),
    };
    scenarios(&types, config.max_sessions)
}

struct Dfs<'e, 'a> {
    engine: &'e Engine<'a>,
    limit: usize,
    budget: usize,
    states: usize,
    truncated: bool,
    check_goals: bool,
    visited: HashMap<StateKey, usize>,
    path: Vec<Move>,
}

#[derive(Debug)]
struct OverBudget;

impl<'e, 'a> Dfs<'e, 'a> {
    fn new(engine: &'e Engine<'a>, limit: usize, budget: usize) -> Self {
        Dfs {
            engine,
            limit,
            budget,
            states: 0,
            truncated: false,
            check_goals: true,
            visited: HashMap::new(),
            path: Vec::new(),
        }
    }

    fn run(&mut self, w: &World, depth: usize, on_state: &mut dyn FnMut(&World, &[Move])) -> Result<Option<Vec<Move>>, OverBudget> {
        if self.check_goals && !self.engine.violations(w).is_empty() {
            return Ok(Some(self.path.clone()));
        }
        let remaining = self.limit - depth;
        let key = w.key();
        if self.visited.get(&key).is_some_and(|&r| r >= remaining) {
            return Ok(None);
        }
        self.visited.insert(key, remaining);
        self.states += 1;
        if self.states > self.budget {
            return Err(OverBudget);
        }
        let moves = self.engine.moves(w);
        on_state(w, &moves);
        if moves.is_empty() {
            return Ok(None);
        }
        if remaining == 0 {
            self.truncated = true;
            return Ok(None);
        }
        for m in moves {
            let (next, _) = self.engine.apply(w, &m);
            self.path.push(m);
            let found = self.run(&next, depth + 1, on_state)?;
            self.path.pop();
            if found.is_some() {
                return Ok(found);
            }
        }
        Ok(None)
    }
}

enum ScenarioResult {
    Safe,
    Attack(Vec<Move>),
    Truncated,
    OverBudget,
}

/// Exhaustive depth-first pass; on a hit, iterative deepening recovers a
/// shortest violating interleaving.
fn run_scenario(engine: &Engine, sessions: &[Session], config: &SearchConfig, budget: usize) -> (usize, ScenarioResult) {
    let w0 = engine.initial_world(sessions);
    let mut dfs = Dfs::new(engine, config.max_depth, budget);
    let found = dfs.run(&w0, 0, &mut |_, _| {});
    let mut states = dfs.states;
    let path = match found {
        Err(OverBudget) => return (states, ScenarioResult::OverBudget),
        Ok(None) if dfs.truncated => return (states, ScenarioResult::Truncated),
        Ok(None) => return (states, ScenarioResult::Safe),
        Ok(Some(p)) => p,
    };
    for limit in 0..path.len() {
        let mut d = Dfs::new(engine, limit, budget.saturating_sub(states));
        let r = d.run(&w0, 0, &mut |_, _| {});
        states += d.states;
        match r {
            Err(OverBudget) => return (states, ScenarioResult::OverBudget),
            Ok(Some(p)) => return (states, ScenarioResult::Attack(p)),
            Ok(None) => {}
        }
    }
    (states, ScenarioResult::Attack(path))
}

/// Renumbers sessions by first activity so session ids read in trace order.
fn renumber(sessions: &[Session], events: &[TraceEvent]) -> (Vec<Session>, Vec<TraceEvent>) {
    let session_of = |instance: &str| instance.split('/').next().unwrap_or("").to_string();
    let mut order: Vec<String> = Vec::new();
    for e in events {
        let id = match e {
            TraceEvent::Send { instance, .. } | TraceEvent::Deliver { instance, .. } => session_of(instance),
            TraceEvent::Claim(_) => continue,
        };
        if !order.contains(&id) {
            order.push(id);
        }
    }
    for s in sessions {
        if !order.contains(&s.id) {
            order.push(s.id.clone());
        }
    }
    let map: BTreeMap<String, String> =
        order.iter().enumerate().map(|(k, old)| (old.clone(), format!("s{}", k + 1))).collect();
    let rename_term = |t: &Term| {
        t.map_atoms(&mut |a| match a.name.split_once('#') {
            Some((base, sid)) if map.contains_key(sid) => {
                Term::Atom(crate::model::Atom { name: format!("{base}#{}", map[sid]), ..a.clone() })
            }
            _ => Term::Atom(a.clone()),
        })
    };
    let rename_inst = |i: &str| match i.split_once('/') {
        Some((sid, role)) => format!("{}/{role}", map.get(sid).cloned().unwrap_or_else(|| sid.to_string())),
        None => i.to_string(),
    };
    let mut new_sessions: Vec<Session> =
        sessions.iter().map(|s| Session { id: map[&s.id].clone(), roles: s.roles.clone() }).collect();
    new_sessions.sort_by_key(|s| s.id[1..].parse::<usize>().unwrap_or(0));
    let new_events = events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Send { instance, term, mode } => {
                Some(TraceEvent::Send { instance: rename_inst(instance), term: rename_term(term), mode: *mode })
            }
            TraceEvent::Deliver { instance, term, sender } => Some(TraceEvent::Deliver {
                instance: rename_inst(instance),
                term: rename_term(term),
                sender: sender.clone(),
            }),
            TraceEvent::Claim(_) => None,
        })
        .collect();
    (new_sessions, new_events)
}

fn build_trace(engine: &Engine, sessions: &[Session], path: &[Move]) -> AttackTrace {
    let mut w = engine.initial_world(sessions);
    let mut events = Vec::new();
    for m in path {
        let (next, evs) = engine.apply(&w, m);
        w = next;
        events.extend(evs);
    }
    let (sessions, events) = renumber(sessions, &events);
    assemble_trace(engine, sessions, &events, None).expect("search traces replay with a violation")
}

fn assemble_trace(
    engine: &Engine,
    sessions: Vec<Session>,
    events: &[TraceEvent],
    goal: Option<usize>,
) -> Result<AttackTrace, String> {
    let (w, events) = engine.replay(&sessions, events, false)?;
    let mut violations = engine.violations(&w);
    let pos = match goal {
        Some(g) => violations.iter().position(|v| v.goal == g).ok_or("the named goal is not violated")?,
        None if violations.is_empty() => return Err("no goal is violated".into()),
        None => 0,
    };
    let main = violations.remove(pos);
    Ok(AttackTrace {
        protocol: engine.spec.name.clone(),
        goal: main.goal,
        also_violated: violations.iter().map(|v| v.goal).collect(),
        violation: main.kind,
        agents: engine.agents.clone(),
        sessions,
        events,
        witness: main.witness,
    })
}

/// Rebuilds a full trace (claims, violation, witness) from its network
/// events by replay. Claim events in `events` are ignored.
pub fn rebuild_trace(
    spec: &ProtocolSpec,
    agents: &[String],
    sessions: Vec<Session>,
    events: &[TraceEvent],
    goal: usize,
) -> Result<AttackTrace, String> {
    let engine = Engine::new(spec, agents);
    assemble_trace(&engine, sessions, events, Some(goal))
}

/// The intruder's initial knowledge for a given agent pool.
pub fn intruder_knowledge(spec: &ProtocolSpec, agents: &[String]) -> BTreeSet<Term> {
    Engine::new(spec, agents).intruder_facts()
}

/// Searches every scenario of up to `max_sessions` sessions for a goal
/// violation. The first attack in scenario order is returned.
pub fn search(spec: &ProtocolSpec, config: &SearchConfig) -> Result<SearchOutcome, CheckError> {
    validate(spec, config)?;
    let engine = Engine::new(spec, &config.agents);
    let all = all_scenarios(spec, config);
    let results: Vec<(usize, ScenarioResult)> = if config.parallel {
        all.par_iter().map(|s| run_scenario(&engine, s, config, config.max_states)).collect()
    } else {
        let mut out = Vec::new();
        let mut used = 0;
        for s in &all {
            let r = run_scenario(&engine, s, config, config.max_states.saturating_sub(used));
            used += r.0;
            let stop = !matches!(r.1, ScenarioResult::Safe);
            out.push(r);
            if stop {
                break;
            }
        }
        out
    };
    let mut states = 0;
    for (k, (n, r)) in results.into_iter().enumerate() {
        states += n;
        if states > config.max_states || matches!(r, ScenarioResult::OverBudget) {
            return Err(CheckError::SearchBudgetExceeded { states, depth: config.max_depth });
        }
        match r {
            ScenarioResult::Safe => {}
            ScenarioResult::Truncated | ScenarioResult::OverBudget => {
                return Err(CheckError::SearchBudgetExceeded { states, depth: config.max_depth })
            }
            ScenarioResult::Attack(path) => {
                let trace = build_trace(&engine, &all[k], &path);
                return Ok(SearchOutcome { verdict: Verdict::Attack(Box::new(trace)), states, scenarios: k + 1 });
            }
        }
    }
    Ok(SearchOutcome { verdict: Verdict::SafeAtBound, states, scenarios: all.len() })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SendInfo {
    pub instance: String,
    pub receiver: Option<String>,
    pub term: Term,
    pub mode: ChannelMode,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DeliveryInfo {
    pub instance: String,
    pub term: Term,
    pub sender: Option<String>,
    pub mode: ChannelMode,
    /// False when the delivered message is one an honest instance sent to
    /// this receiver.
    pub injected: bool,
}

/// Summary of the complete reachable state space, goals ignored.
#[derive(Debug, Clone, Default)]
pub struct Exploration {
    pub states: usize,
    /// Some reachable state has every instance of its scenario completed.
    pub all_completed: bool,
    /// Union of the intruder's analyzed knowledge over all states.
    pub intruder_knowledge: BTreeSet<Term>,
    pub sends: BTreeSet<SendInfo>,
    pub deliveries: BTreeSet<DeliveryInfo>,
}

pub fn explore(spec: &ProtocolSpec, config: &SearchConfig) -> Result<Exploration, CheckError> {
    validate(spec, config)?;
    let engine = Engine::new(spec, &config.agents);
    let mut ex = Exploration::default();
    for sessions in all_scenarios(spec, config) {
        let w0 = engine.initial_world(&sessions);
        let mut dfs = Dfs::new(&engine, config.max_depth, config.max_states.saturating_sub(ex.states));
        dfs.check_goals = false;
        let r = dfs.run(&w0, 0, &mut |w, moves| {
            ex.intruder_knowledge.extend(w.kb.analyzed().iter().cloned());
            if engine.all_completed(w) {
                ex.all_completed = true;
            }
            for m in moves {
                match m {
                    Move::Send(i) => {
                        let (next, _) = engine.apply(w, m);
                        let r = next.records.last().expect("send records");
                        ex.sends.insert(SendInfo {
                            instance: w.insts[*i].id.clone(),
                            receiver: r.receiver.clone(),
                            term: r.term.clone(),
                            mode: engine.step(w, *i).expect("step").mode(),
                        });
                    }
                    Move::Deliver { inst, term, sender, injected, .. } => {
                        ex.deliveries.insert(DeliveryInfo {
                            instance: w.insts[*inst].id.clone(),
                            term: term.clone(),
                            sender: sender.clone(),
                            mode: engine.step(w, *inst).expect("step").mode(),
                            injected: *injected,
                        });
                    }
                }
            }
        });
        ex.states += dfs.states;
        if r.is_err() || dfs.truncated {
            return Err(CheckError::SearchBudgetExceeded { states: ex.states, depth: config.max_depth });
        }
    }
    Ok(ex)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceCheck {
    Accept,
    Reject(String),
}

/// Independent certificate check: replays the trace from its session table
/// without searching and confirms the claimed violation and witness.
pub fn verify_trace(spec: &ProtocolSpec, trace: &AttackTrace) -> TraceCheck {
    let reject = |s: &str| TraceCheck::Reject(s.to_string());
    if trace.goal >= spec.goals.len() {
        return reject("goal index out of range");
    }
    let roles = spec.roles();
    for s in &trace.sessions {
        if roles.iter().any(|r| !s.roles.get(r).is_some_and(|a| trace.agents.contains(a))) {
            return TraceCheck::Reject(format!("session {} does not assign every role to a pool agent", s.id));
        }
    }
    if !executability_check(spec).is_empty() {
        return reject("protocol is not executable");
    }
    let engine = Engine::new(spec, &trace.agents);
    let world = match engine.replay(&trace.sessions, &trace.events, true) {
        Ok((w, _)) => w,
        Err(e) => return TraceCheck::Reject(e),
    };
    let violations = engine.violations(&world);
    let Some(v) = violations.iter().find(|v| v.goal == trace.goal) else {
        return reject("claimed goal is not violated");
    };
    if v.kind != trace.violation {
        return reject("violation mismatch");
    }
    let witness_ok = match (&trace.witness, &v.kind) {
        (Witness::Derivation(d), ViolationKind::SecretLearned { term }) => {
            d.conclusion() == term && d.replay(&world.kb).as_ref() == Some(term)
        }
        (Witness::Commit(c), _) => Witness::Commit(c.clone()) == v.witness,
        _ => false,
    };
    if !witness_ok {
        return reject("witness mismatch");
    }
    TraceCheck::Accept
}

/// Declarations for parsing ground trace terms: the specification's
/// identifiers plus agent names and the intruder's constants.
pub fn ground_declarations(spec: &ProtocolSpec, agents: &[String]) -> Declarations {
    let mut d = spec.declarations.clone();
    for a in agents {
        d.insert(a.clone(), Sort::Agent);
    }
    d.insert(INTRUDER, Sort::Agent);
    d.insert(INTRUDER_NONCE, Sort::Number);
    d.insert(INTRUDER_KEY, Sort::SymmetricKey);
    d
}
