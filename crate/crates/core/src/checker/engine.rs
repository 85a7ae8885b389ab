//! Ground execution of role instances against the intruder-controlled
//! network. Shared by the search, the exploration API and trace replay.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::project::{project_roles, RoleScript, Step};
use super::{evaluate_goals, instantiate_claim, tuples, ClaimEvent, Session, TraceEvent, Violation, INTRUDER, INTRUDER_KEY, INTRUDER_NONCE};
use crate::dolev_yao::KnowledgeBase;
use crate::model::{match_term, Binding, ProtocolSpec, Sort, Term};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct Inst {
    pub id: String,
    pub role: usize,
    pub agent: String,
    pub pc: usize,
    pub binding: Binding,
}

/// A message an honest instance put on the network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Record {
    pub action: usize,
    pub sender: String,
    pub receiver: Option<String>,
    pub term: Term,
}

#[derive(Debug, Clone)]
pub(crate) struct World {
    pub insts: Vec<Inst>,
    pub kb: KnowledgeBase,
    pub records: Vec<Record>,
    pub claims: Vec<ClaimEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct StateKey {
    insts: Vec<(usize, Binding)>,
    facts: BTreeSet<Term>,
    claims: Vec<ClaimEvent>,
    records: BTreeSet<Record>,
}

impl World {
    pub fn key(&self) -> StateKey {
        let mut claims = self.claims.clone();
        claims.sort();
        StateKey {
            insts: self.insts.iter().map(|i| (i.pc, i.binding.clone())).collect(),
            facts: self.kb.facts().clone(),
            claims,
            records: self.records.iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Move {
    Send(usize),
    Deliver { inst: usize, term: Term, binding: Binding, sender: Option<String>, injected: bool },
}

pub(crate) fn agent_of(binding: &Binding, role: &str) -> Option<String> {
    binding.get(role).and_then(Term::as_atom).map(|a| a.name.clone())
}

pub(crate) struct Engine<'a> {
    pub spec: &'a ProtocolSpec,
    pub roles: Vec<String>,
    pub scripts: Vec<RoleScript>,
    pub agents: Vec<String>,
}

impl<'a> Engine<'a> {
    pub fn new(spec: &'a ProtocolSpec, agents: &[String]) -> Self {
        let roles = spec.roles();
        let mut by_role = project_roles(spec);
        let scripts = roles.iter().map(|r| by_role.remove(r).expect("projected role")).collect();
        Engine { spec, roles, scripts, agents: agents.to_vec() }
    }

    /// Agent names, the intruder's own constants, the public function
    /// symbols, and every role's initial knowledge instantiated for `i`.
    pub fn intruder_facts(&self) -> BTreeSet<Term> {
        let mut facts: BTreeSet<Term> = self.agents.iter().map(Term::agent).collect();
        facts.insert(Term::atom(INTRUDER_NONCE, Sort::Number));
        facts.insert(Term::atom(INTRUDER_KEY, Sort::SymmetricKey));
        for f in self.spec.public_functions() {
            let sort = self.spec.declarations.sort_of(&f).unwrap_or(Sort::Function);
            facts.insert(Term::atom(f, sort));
        }
        if !self.agents.iter().any(|a| a == INTRUDER) {
            return facts;
        }
        for (ri, role) in self.roles.iter().enumerate() {
            let Some(init) = self.spec.knowledge.get(role) else { continue };
            let others: Vec<&String> = self.roles.iter().enumerate().filter(|(j, _)| *j != ri).map(|(_, r)| r).collect();
            for choice in tuples(others.len(), self.agents.len()) {
                let mut map: BTreeMap<&str, &str> = BTreeMap::new();
                map.insert(role, INTRUDER);
                for (o, c) in others.iter().zip(&choice) {
                    map.insert(o.as_str(), self.agents[*c].as_str());
                }
                for t in init {
                    facts.insert(t.map_atoms(&mut |a| match map.get(a.name.as_str()) {
                        Some(agent) => Term::agent(*agent),
                        None => Term::Atom(a.clone()),
                    }));
                }
            }
        }
        facts
    }

    pub fn initial_world(&self, sessions: &[Session]) -> World {
        let mut insts = Vec::new();
        for s in sessions {
            for (ri, role) in self.roles.iter().enumerate() {
                let agent = &s.roles[role];
                if agent == INTRUDER {
                    continue;
                }
                let script = &self.scripts[ri];
                let mut binding = Binding::new();
                for p in &script.parameters {
                    binding.insert(p.clone(), Term::agent(&s.roles[p]));
                }
                for f in &script.fresh {
                    binding.insert(f.name.clone(), Term::atom(format!("{}#{}", f.name, s.id), f.sort));
                }
                insts.push(Inst { id: format!("{}/{}", s.id, role), role: ri, agent: agent.clone(), pc: 0, binding });
            }
        }
        World { insts, kb: KnowledgeBase::from_facts(self.intruder_facts()), records: Vec::new(), claims: Vec::new() }
    }

    pub fn step(&self, w: &World, i: usize) -> Option<&Step> {
        let inst = &w.insts[i];
        self.scripts[inst.role].steps.get(inst.pc)
    }

    pub fn script_of(&self, inst: &Inst) -> &RoleScript {
        &self.scripts[inst.role]
    }

    pub fn all_completed(&self, w: &World) -> bool {
        w.insts.iter().all(|i| i.pc >= self.scripts[i.role].steps.len())
    }

    pub fn violations(&self, w: &World) -> Vec<Violation> {
        evaluate_goals(&self.spec.goals, &w.claims, &w.kb)
    }

    /// Enabled moves in deterministic order: instances in table order, and
    /// for each receive, genuine messages before intruder-built ones.
    pub fn moves(&self, w: &World) -> Vec<Move> {
        let mut out = Vec::new();
        for i in 0..w.insts.len() {
            match self.step(w, i) {
                Some(Step::Send { .. }) => out.push(Move::Send(i)),
                Some(Step::Receive { .. }) => out.extend(self.deliveries(w, i)),
                None => {}
            }
        }
        out
    }

    fn deliveries(&self, w: &World, i: usize) -> Vec<Move> {
        let inst = &w.insts[i];
        let Some(Step::Receive { action, pattern, mode, peer }) = self.step(w, i) else {
            return Vec::new();
        };
        let peer_bound = agent_of(&inst.binding, peer);
        let authenticated = !mode.intruder_injectable();
        let mut seen: BTreeSet<(Term, Binding)> = BTreeSet::new();
        let mut out = Vec::new();
        let mut push = |term: Term, binding: Binding, injected: bool, out: &mut Vec<Move>| {
            if seen.insert((term.clone(), binding.clone())) {
                let sender = agent_of(&binding, peer);
                out.push(Move::Deliver { inst: i, term, binding, sender, injected });
            }
        };

        for r in &w.records {
            if r.action != *action || r.receiver.as_deref() != Some(inst.agent.as_str()) {
                continue;
            }
            if peer_bound.as_ref().is_some_and(|p| *p != r.sender) {
                continue;
            }
            let mut b = inst.binding.clone();
            if authenticated && peer_bound.is_none() {
                b.insert(peer.clone(), Term::agent(&r.sender));
            }
            if let Some(nb) = match_term(pattern, &r.term, &b) {
                push(r.term.clone(), nb, false, &mut out);
            }
        }

        let may_inject = !authenticated || peer_bound.is_none() || peer_bound.as_deref() == Some(INTRUDER);
        if may_inject {
            let mut b = inst.binding.clone();
            if authenticated && peer_bound.is_none() {
                b.insert(peer.clone(), Term::agent(INTRUDER));
            }
            for nb in intruder_instances(pattern, &b, &w.kb) {
                let term = pattern.substitute(&nb);
                push(term, nb, true, &mut out);
            }
        }
        out
    }

    pub fn apply(&self, w: &World, m: &Move) -> (World, Vec<TraceEvent>) {
        let mut nw = w.clone();
        let mut events = Vec::new();
        let i = match m {
            Move::Send(i) => {
                let inst = &w.insts[*i];
                let Some(Step::Send { action, payload, mode, peer }) = self.step(w, *i) else {
                    panic!("send move on a non-send step");
                };
                let term = payload.substitute(&inst.binding);
                let receiver = agent_of(&inst.binding, peer);
                if mode.intruder_readable() || receiver.as_deref() == Some(INTRUDER) {
                    nw.kb.insert(term.clone());
                }
                nw.records.push(Record { action: *action, sender: inst.agent.clone(), receiver, term: term.clone() });
                events.push(TraceEvent::Send { instance: inst.id.clone(), term, mode: *mode });
                *i
            }
            Move::Deliver { inst, term, binding, sender, .. } => {
                nw.insts[*inst].binding = binding.clone();
                events.push(TraceEvent::Deliver {
                    instance: w.insts[*inst].id.clone(),
                    term: term.clone(),
                    sender: sender.clone(),
                });
                *inst
            }
        };
        let done = nw.insts[i].pc;
        nw.insts[i].pc += 1;
        for c in self.fire_claims(&nw.insts[i], done) {
            nw.claims.push(c.clone());
            events.push(TraceEvent::Claim(c));
        }
        (nw, events)
    }

    pub fn fire_claims(&self, inst: &Inst, step: usize) -> Vec<ClaimEvent> {
        self.script_of(inst)
            .claims
            .iter()
            .filter(|(at, _)| *at == step)
            .filter_map(|(_, c)| instantiate_claim(c, &inst.id, &inst.agent, &inst.binding))
            .collect()
    }

    /// Re-executes a trace from its session table. With `strict`, claim
    /// events in `events` must coincide with the recomputed ones; otherwise
    /// they are ignored and regenerated.
    pub fn replay(
        &self,
        sessions: &[Session],
        events: &[TraceEvent],
        strict: bool,
    ) -> Result<(World, Vec<TraceEvent>), String> {
        let mut w = self.initial_world(sessions);
        let mut out = Vec::new();
        let mut pending: VecDeque<ClaimEvent> = VecDeque::new();
        for (k0, ev) in events.iter().enumerate() {
            let k = k0 + 1;
            let index_of = |id: &str| {
                w.insts.iter().position(|i| i.id == id).ok_or_else(|| format!("unknown instance {id} at event {k}"))
            };
            let m = match ev {
                TraceEvent::Claim(c) => {
                    if strict {
                        match pending.pop_front() {
                            Some(p) if p == *c => out.push(ev.clone()),
                            _ => return Err(format!("unexpected claim at event {k}")),
                        }
                    }
                    continue;
                }
                _ if strict && !pending.is_empty() => return Err(format!("missing claim before event {k}")),
                TraceEvent::Send { instance, term, mode } => {
                    let i = index_of(instance)?;
                    match self.step(&w, i) {
                        Some(Step::Send { payload, mode: m, .. }) => {
                            if payload.substitute(&w.insts[i].binding) != *term || m != mode {
                                return Err(format!("send mismatch at event {k}"));
                            }
                        }
                        _ => return Err(format!("instance {instance} cannot send at event {k}")),
                    }
                    Move::Send(i)
                }
                TraceEvent::Deliver { instance, term, sender } => {
                    let i = index_of(instance)?;
                    let inst = &w.insts[i];
                    let Some(Step::Receive { action, pattern, mode, peer }) = self.step(&w, i) else {
                        return Err(format!("instance {instance} is not receiving at event {k}"));
                    };
                    let mut b = inst.binding.clone();
                    if !mode.intruder_injectable() && agent_of(&b, peer).is_none() {
                        if let Some(s) = sender {
                            b.insert(peer.clone(), Term::agent(s));
                        }
                    }
                    let nb = match_term(pattern, term, &b).ok_or_else(|| format!("pattern mismatch at event {k}"))?;
                    let claimed = agent_of(&nb, peer);
                    let genuine = w.records.iter().any(|r| {
                        r.action == *action
                            && r.receiver.as_deref() == Some(inst.agent.as_str())
                            && r.term == *term
                            && (mode.intruder_injectable() || claimed.as_deref() == Some(r.sender.as_str()))
                    });
                    if !genuine {
                        if !mode.intruder_injectable() && claimed.as_deref() != Some(INTRUDER) {
                            return Err(format!("non-genuine delivery on {mode} channel at event {k}"));
                        }
                        if !w.kb.derivable(term) {
                            return Err(format!("underivable injection at event {k}"));
                        }
                    }
                    Move::Deliver { inst: i, term: term.clone(), binding: nb, sender: claimed, injected: !genuine }
                }
            };
            let (nw, evs) = self.apply(&w, &m);
            w = nw;
            for e in evs {
                match e {
                    TraceEvent::Claim(c) if strict => pending.push_back(c),
                    other => out.push(other),
                }
            }
        }
        if !pending.is_empty() {
            return Err("missing claim at end of trace".into());
        }
        Ok((w, out))
    }
}

/// Bindings extending `b` under which `pattern` becomes a term the intruder
/// can produce: matches against analyzed knowledge, typed atoms of the
/// right sort, and structure-directed composition.
pub(crate) fn intruder_instances(pattern: &Term, b: &Binding, kb: &KnowledgeBase) -> BTreeSet<Binding> {
    let p = pattern.substitute(b);
    let mut out = BTreeSet::new();
    if p.is_ground() {
        if kb.derivable(&p) {
            out.insert(b.clone());
        }
        return out;
    }
    if let Term::Atom(v) = &p {
        for t in kb.analyzed() {
            let ok = match (v.sort, t) {
                (Sort::Untyped, Term::Atom(_) | Term::Pair(..)) => false,
                (Sort::Untyped, _) => true,
                (s, Term::Atom(a)) => a.sort == s && !a.var,
                _ => false,
            };
            if ok {
                let mut nb = b.clone();
                nb.insert(v.name.clone(), t.clone());
                out.insert(nb);
            }
        }
        return out;
    }
    for t in kb.analyzed() {
        if let Some(nb) = match_term(&p, t, b) {
            out.insert(nb);
        }
    }
    let chain = |parts: &[&Term], out: &mut BTreeSet<Binding>| {
        let mut frontier: BTreeSet<Binding> = [b.clone()].into();
        for part in parts {
            frontier = frontier.iter().flat_map(|fb| intruder_instances(part, fb, kb)).collect();
        }
        out.extend(frontier);
    };
    match &p {
        Term::Pair(x, y) => chain(&[x, y], &mut out),
        Term::SymEnc { payload, key } | Term::AsymEnc { payload, key } | Term::Sign { payload, key } => {
            chain(&[key, payload], &mut out)
        }
        Term::FunApp { function, args, .. } if kb.knows_function(function) => {
            let parts: Vec<&Term> = args.iter().collect();
            chain(&parts, &mut out)
        }
        _ => {}
    }
    out
}
