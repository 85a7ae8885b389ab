//! Event-based replay of an intruder script against executable participant
//! processes, watched by a security monitor.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::checker::{
    evaluate_goals, instantiate_claim, intruder_knowledge, project_roles, ClaimEvent, RoleScript, Session, Step,
    Violation, ViolationKind, INTRUDER,
};
use crate::dolev_yao::KnowledgeBase;
use crate::model::{match_term, Binding, ChannelMode, Goal, ProtocolSpec, Term};
use crate::testgen::{Directive, IntruderScript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessStatus {
    Ready,
    Blocked,
    Completed,
    /// The current send cannot be built from the local bindings.
    Stuck,
}

#[derive(Debug, Clone)]
pub struct ParticipantProcess {
    pub instance: String,
    pub role: String,
    pub agent: String,
    pub script: RoleScript,
    pub pc: usize,
    pub bindings: Binding,
    pub status: ProcessStatus,
}

fn session_of(instance: &str) -> &str {
    instance.split_once('/').map_or(instance, |(s, _)| s)
}

/// `roles` maps every role of the session to its agent. Fresh atoms become
/// `NAME#<session>`, or `NAME#<session>r<seed>` for a nonzero seed.
pub fn compile_participant(
    script: &RoleScript,
    instance: &str,
    roles: &BTreeMap<String, String>,
    seed: u64,
) -> ParticipantProcess {
    let sid = session_of(instance);
    let mut bindings = Binding::new();
    for p in &script.parameters {
        if let Some(agent) = roles.get(p) {
            bindings.insert(p.clone(), Term::agent(agent));
        }
    }
    for f in &script.fresh {
        let name = if seed == 0 { format!("{}#{sid}", f.name) } else { format!("{}#{sid}r{seed}", f.name) };
        bindings.insert(f.name.clone(), Term::atom(name, f.sort));
    }
    let mut p = ParticipantProcess {
        instance: instance.to_string(),
        role: script.role.clone(),
        agent: roles.get(&script.role).cloned().unwrap_or_default(),
        script: script.clone(),
        pc: 0,
        bindings,
        status: ProcessStatus::Ready,
    };
    p.status = p.idle_status();
    p
}

impl ParticipantProcess {
    pub fn current(&self) -> Option<&Step> {
        self.script.steps.get(self.pc)
    }

    fn idle_status(&self) -> ProcessStatus {
        match self.current() {
            None => ProcessStatus::Completed,
            Some(Step::Send { payload, .. }) if !payload.substitute(&self.bindings).is_ground() => {
                ProcessStatus::Stuck
            }
            Some(Step::Send { .. }) => ProcessStatus::Ready,
            Some(Step::Receive { .. }) => ProcessStatus::Blocked,
        }
    }

    fn peer_agent(&self, peer: &str) -> Option<String> {
        self.bindings.get(peer).and_then(Term::as_atom).map(|a| a.name.clone())
    }
}

/// Builds one process per honest role slot of every session, in session
/// table order.
pub fn processes_for(spec: &ProtocolSpec, sessions: &[Session], seed: u64) -> Vec<ParticipantProcess> {
    let scripts = project_roles(spec);
    let mut out = Vec::new();
    for s in sessions {
        for role in spec.roles() {
            if s.roles.get(&role).is_none_or(|a| a == INTRUDER) {
                continue;
            }
            out.push(compile_participant(&scripts[&role], &format!("{}/{role}", s.id), &s.roles, seed));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub term: Term,
    /// Sender agent the message claims, if any.
    pub sender: Option<String>,
    /// Copy of an honest send addressed to this agent by `sender`.
    pub genuine: bool,
}

/// A message an honest process put on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireRecord {
    pub instance: String,
    pub sender: String,
    pub receiver: Option<String>,
    pub mode: ChannelMode,
    pub term: Term,
}

#[derive(Debug, Clone, Default)]
pub struct NetworkHub {
    pub pending: BTreeMap<String, VecDeque<Delivery>>,
    /// Honest send from `(session, role)` goes to this instance when the hub
    /// is passive.
    pub routes: BTreeMap<(String, String), String>,
    pub mailbox: Vec<Term>,
    pub wire: Vec<WireRecord>,
    /// Without an intruder script, honest sends are routed to their
    /// intended peer. Otherwise the script does all delivering.
    pub passive: bool,
}

impl NetworkHub {
    fn genuine(&self, to_agent: &str, term: &Term, sender: Option<&str>) -> bool {
        self.wire.iter().any(|r| {
            r.receiver.as_deref() == Some(to_agent) && r.term == *term && sender.is_none_or(|s| s == r.sender)
        })
    }
}

#[derive(Debug, Clone)]
pub struct SecurityMonitor {
    pub goals: Vec<Goal>,
    pub claims: Vec<ClaimEvent>,
    pub knowledge: KnowledgeBase,
    pub raised: Vec<Violation>,
}

impl SecurityMonitor {
    pub fn new(spec: &ProtocolSpec, agents: &[String]) -> Self {
        SecurityMonitor {
            goals: spec.goals.clone(),
            claims: Vec::new(),
            knowledge: KnowledgeBase::from_facts(intruder_knowledge(spec, agents)),
            raised: Vec::new(),
        }
    }
}

/// Appends and returns the violations that hold now but were not raised
/// before.
pub fn monitor_check(monitor: &mut SecurityMonitor) -> Vec<Violation> {
    let mut delta = Vec::new();
    for v in evaluate_goals(&monitor.goals, &monitor.claims, &monitor.knowledge) {
        if !monitor.raised.iter().any(|r| r.goal == v.goal && r.kind == v.kind) {
            monitor.raised.push(v.clone());
            delta.push(v);
        }
    }
    delta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NotReproduced {
    ScriptStalled,
    RunCompletedClean,
    StepBudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimVerdict {
    ViolationReproduced { goal: usize, step: usize, kind: ViolationKind },
    NotReproduced(NotReproduced),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub step: usize,
    pub actor: String,
    pub kind: String,
    pub term: String,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}|{}", self.step, self.actor, self.kind, self.term)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimReport {
    pub protocol: String,
    pub verdict: SimVerdict,
    pub log: Vec<LogEntry>,
    pub steps: usize,
    pub final_status: Vec<(String, ProcessStatus)>,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    protocol: &'a str,
    verdict: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    goal: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    violation: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<NotReproduced>,
    steps: usize,
    processes: BTreeMap<&'a str, ProcessStatus>,
    log: Vec<String>,
}

impl SimReport {
    pub fn reproduced(&self) -> bool {
        matches!(self.verdict, SimVerdict::ViolationReproduced { .. })
    }

    pub fn log_lines(&self) -> String {
        self.log.iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn to_json(&self) -> String {
        let mut doc = ReportDoc {
            protocol: &self.protocol,
            verdict: "not_reproduced",
            goal: None,
            violation: None,
            step: None,
            reason: None,
            steps: self.steps,
            processes: self.final_status.iter().map(|(i, s)| (i.as_str(), *s)).collect(),
            log: self.log.iter().map(ToString::to_string).collect(),
        };
        match &self.verdict {
            SimVerdict::ViolationReproduced { goal, step, kind } => {
                doc.verdict = "violation_reproduced";
                doc.goal = Some(*goal);
                doc.step = Some(*step);
                doc.violation = Some(kind.to_string());
            }
            SimVerdict::NotReproduced(r) => doc.reason = Some(*r),
        }
        serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
}

struct Intruder {
    directives: Vec<Directive>,
    next: usize,
    bindings: Binding,
    knowledge: KnowledgeBase,
    /// Wire indices already claimed by a `WaitFor`.
    consumed: BTreeSet<usize>,
    last: Option<Term>,
}

enum Action {
    Directive,
    Process(usize),
}

struct Sim<'a> {
    procs: Vec<ParticipantProcess>,
    hub: NetworkHub,
    intruder: Intruder,
    monitor: &'a mut SecurityMonitor,
    log: Vec<LogEntry>,
    step: usize,
}

impl Sim<'_> {
    fn entry(&mut self, actor: &str, kind: &str, term: impl fmt::Display) {
        self.log.push(LogEntry { step: self.step, actor: actor.into(), kind: kind.into(), term: term.to_string() });
    }

    fn proc_index(&self, instance: &str) -> Option<usize> {
        self.procs.iter().position(|p| p.instance == instance)
    }

    fn wait_match(&self, pattern: &Term, from: &str) -> Option<(usize, Binding)> {
        self.hub.wire.iter().enumerate().find_map(|(k, r)| {
            if r.instance != from || self.intruder.consumed.contains(&k) {
                return None;
            }
            match_term(pattern, &r.term, &self.intruder.bindings).map(|b| (k, b))
        })
    }

    fn directive_ready(&self) -> bool {
        let Some(d) = self.intruder.directives.get(self.intruder.next) else { return false };
        match d {
            Directive::WaitFor { pattern, from } => self.wait_match(pattern, from).is_some(),
            Directive::Record { .. } => true,
            Directive::Send { to, term, from } => {
                let term = term.substitute(&self.intruder.bindings);
                let to_agent = &self.procs[self.proc_index(to).expect("checked instance")].agent;
                term.is_ground()
                    && (self.intruder.knowledge.derivable(&term)
                        || self.hub.genuine(to_agent, &term, from.as_deref()))
            }
        }
    }

    fn run_directive(&mut self) {
        let d = self.intruder.directives[self.intruder.next].clone();
        self.intruder.next += 1;
        match d {
            Directive::WaitFor { pattern, from } => {
                let (k, b) = self.wait_match(&pattern, &from).expect("eligible");
                self.intruder.consumed.insert(k);
                self.intruder.bindings = b;
                let term = self.hub.wire[k].term.clone();
                self.intruder.last = Some(term.clone());
                self.entry("intruder", "wait", term);
            }
            Directive::Record { binding } => {
                if let Some(t) = self.intruder.last.clone() {
                    self.intruder.bindings.insert(binding.clone(), t.clone());
                    self.entry("intruder", "record", format!("{binding}={t}"));
                }
            }
            Directive::Send { to, term, from } => {
                let term = term.substitute(&self.intruder.bindings);
                let to_agent = self.procs[self.proc_index(&to).expect("checked instance")].agent.clone();
                let genuine = self.hub.genuine(&to_agent, &term, from.as_deref());
                self.hub.pending.entry(to.clone()).or_default().push_back(Delivery {
                    term: term.clone(),
                    sender: from,
                    genuine,
                });
                self.entry("intruder", "inject", format!("{to} {term}"));
            }
        }
    }

    /// First pending delivery the process accepts, with the extended bindings.
    fn acceptable(&self, i: usize) -> Option<(usize, Binding)> {
        let p = &self.procs[i];
        let Some(Step::Receive { pattern, mode, peer, .. }) = p.current() else { return None };
        let queue = self.hub.pending.get(&p.instance)?;
        let bound = p.peer_agent(peer);
        queue.iter().enumerate().find_map(|(k, d)| {
            let mut b = p.bindings.clone();
            if !mode.intruder_injectable() {
                let claimed = d.sender.clone().or(bound.clone())?;
                if bound.as_ref().is_some_and(|x| *x != claimed) {
                    return None;
                }
                if !(d.genuine || claimed == INTRUDER) {
                    return None;
                }
                b.insert(peer.clone(), Term::agent(&claimed));
            }
            match_term(pattern, &d.term, &b).map(|nb| (k, nb))
        })
    }

    fn refresh(&mut self) {
        for i in 0..self.procs.len() {
            let st = match self.procs[i].idle_status() {
                ProcessStatus::Blocked if self.acceptable(i).is_some() => ProcessStatus::Ready,
                s => s,
            };
            self.procs[i].status = st;
        }
    }

    fn run_process(&mut self, i: usize) {
        let done = self.procs[i].pc;
        let id = self.procs[i].instance.clone();
        match self.procs[i].current().cloned() {
            Some(Step::Send { payload, mode, peer, .. }) => {
                let p = &self.procs[i];
                let term = payload.substitute(&p.bindings);
                let receiver = p.peer_agent(&peer);
                self.hub.wire.push(WireRecord {
                    instance: id.clone(),
                    sender: p.agent.clone(),
                    receiver: receiver.clone(),
                    mode,
                    term: term.clone(),
                });
                if mode.intruder_readable() || receiver.as_deref() == Some(INTRUDER) {
                    self.hub.mailbox.push(term.clone());
                    self.intruder.knowledge.insert(term.clone());
                    self.monitor.knowledge.insert(term.clone());
                }
                if self.hub.passive {
                    let key = (session_of(&id).to_string(), peer.clone());
                    if let Some(to) = self.hub.routes.get(&key).cloned() {
                        self.hub.pending.entry(to).or_default().push_back(Delivery {
                            term: term.clone(),
                            sender: Some(p.agent.clone()),
                            genuine: true,
                        });
                    }
                }
                self.entry(&id, "send", term);
            }
            Some(Step::Receive { .. }) => {
                let (k, nb) = self.acceptable(i).expect("ready receive");
                let d = self.hub.pending.get_mut(&id).and_then(|q| q.remove(k)).expect("pending delivery");
                self.procs[i].bindings = nb;
                self.entry(&id, "deliver", d.term);
            }
            None => return,
        }
        self.procs[i].pc += 1;
        let p = &self.procs[i];
        let fired: Vec<ClaimEvent> = p
            .script
            .claims
            .iter()
            .filter(|(at, _)| *at == done)
            .filter_map(|(_, c)| instantiate_claim(c, &p.instance, &p.agent, &p.bindings))
            .collect();
        for c in fired {
            self.entry(&id, "claim", &c);
            self.monitor.claims.push(c);
        }
    }

    fn next_action(&self) -> Option<Action> {
        if self.directive_ready() {
            return Some(Action::Directive);
        }
        self.procs.iter().position(|p| p.status == ProcessStatus::Ready).map(Action::Process)
    }

    fn finish(&self) -> NotReproduced {
        let script_done = self.intruder.next >= self.intruder.directives.len();
        if script_done && self.procs.iter().all(|p| p.status == ProcessStatus::Completed) {
            NotReproduced::RunCompletedClean
        } else {
            NotReproduced::ScriptStalled
        }
    }
}

fn instance_order(id: &str) -> (u64, String) {
    let (sid, role) = id.split_once('/').unwrap_or((id, ""));
    let n = sid.trim_start_matches('s').parse().unwrap_or(u64::MAX);
    (n, role.to_string())
}

/// Runs the deterministic scheduler: an eligible intruder directive goes
/// first, otherwise the ready process with the lowest instance id takes one
/// step. The monitor is consulted after every step.
pub fn run(
    processes: Vec<ParticipantProcess>,
    intruder: &IntruderScript,
    monitor: &mut SecurityMonitor,
    max_steps: usize,
) -> Result<SimReport, SimError> {
    if max_steps == 0 {
        return Err(SimError::Config("max_steps must be at least 1".into()));
    }
    let mut procs = processes;
    procs.sort_by_key(|p| instance_order(&p.instance));
    let known: BTreeSet<&str> = procs.iter().map(|p| p.instance.as_str()).collect();
    for d in &intruder.directives {
        let inst = match d {
            Directive::WaitFor { from, .. } => from,
            Directive::Send { to, .. } => to,
            Directive::Record { .. } => continue,
        };
        if !known.contains(inst.as_str()) {
            return Err(SimError::Config(format!("intruder script references unknown instance `{inst}`")));
        }
    }
    let routes = procs
        .iter()
        .map(|p| ((session_of(&p.instance).to_string(), p.role.clone()), p.instance.clone()))
        .collect();
    let mut sim = Sim {
        hub: NetworkHub { routes, passive: intruder.directives.is_empty(), ..NetworkHub::default() },
        intruder: Intruder {
            directives: intruder.directives.clone(),
            next: 0,
            bindings: Binding::new(),
            knowledge: monitor.knowledge.clone(),
            consumed: BTreeSet::new(),
            last: None,
        },
        procs,
        monitor,
        log: Vec::new(),
        step: 0,
    };
    sim.refresh();
    let verdict = loop {
        let Some(action) = sim.next_action() else { break SimVerdict::NotReproduced(sim.finish()) };
        if sim.step >= max_steps {
            break SimVerdict::NotReproduced(NotReproduced::StepBudgetExhausted);
        }
        sim.step += 1;
        match action {
            Action::Directive => sim.run_directive(),
            Action::Process(i) => sim.run_process(i),
        }
        sim.refresh();
        let delta = monitor_check(sim.monitor);
        for v in &delta {
            sim.entry("monitor", "violation", format!("goal {} {}", v.goal, v.kind));
        }
        if let Some(v) = delta.into_iter().next() {
            break SimVerdict::ViolationReproduced { goal: v.goal, step: sim.step, kind: v.kind };
        }
    };
    Ok(SimReport {
        protocol: intruder.protocol.clone(),
        verdict,
        log: sim.log,
        steps: sim.step,
        final_status: sim.procs.iter().map(|p| (p.instance.clone(), p.status)).collect(),
    })
}

/// Processes for the script's session table, a monitor over every goal of
/// `spec`, and a run.
pub fn simulate(
    spec: &ProtocolSpec,
    script: &IntruderScript,
    seed: u64,
    max_steps: usize,
) -> Result<SimReport, SimError> {
    if script.protocol != spec.name {
        return Err(SimError::Config(format!("script is for `{}`, not `{}`", script.protocol, spec.name)));
    }
    let mut monitor = SecurityMonitor::new(spec, &script.agents);
    run(processes_for(spec, &script.sessions, seed), script, &mut monitor, max_steps)
}

/// Script with no directives over the given sessions: a passive network.
pub fn passive_script(spec: &ProtocolSpec, agents: &[String], sessions: Vec<Session>) -> IntruderScript {
    IntruderScript {
        protocol: spec.name.clone(),
        agents: agents.to_vec(),
        sessions,
        directives: Vec::new(),
        expect: None,
    }
}
