use apv_core::anb::parse_protocol;
use apv_core::checker::{
    executability_check, explore, project_roles, search, verify_trace, AttackTrace, CheckError, ClaimEvent,
    SearchConfig, Step, TraceCheck, TraceEvent, Verdict, ViolationKind, Witness,
};
use apv_core::dolev_yao::Derivation;
use apv_core::model::{ChannelMode, ProtocolSpec, Sort, Term};

fn corpus(name: &str) -> ProtocolSpec {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    parse_protocol(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn inline(src: &str) -> ProtocolSpec {
    parse_protocol(src).unwrap()
}

fn attack(spec: &ProtocolSpec, config: &SearchConfig) -> AttackTrace {
    match search(spec, config).unwrap().verdict {
        Verdict::Attack(t) => *t,
        Verdict::SafeAtBound => panic!("expected an attack on {}", spec.name),
    }
}

fn pk(a: &str) -> Term {
    Term::app("pk", vec![Term::agent(a)])
}

fn num(n: &str) -> Term {
    Term::atom(n, Sort::Number)
}

#[test]
fn nspk_responder_projection() {
    let scripts = project_roles(&corpus("nspk.anb"));
    let b = &scripts["B"];
    assert_eq!(b.steps.len(), 3);
    let Step::Receive { pattern, .. } = &b.steps[0] else { panic!("B starts by receiving") };
    // {NA,A}pk(B): B is a parameter, NA and A are bound on receipt
    let vars: Vec<String> = pattern.vars().into_iter().map(|a| a.name).collect();
    assert_eq!(vars, ["A", "B", "NA"]);
    assert!(b.parameters.contains(&"B".to_string()) && !b.parameters.contains(&"A".to_string()));
    let Step::Send { payload, .. } = &b.steps[1] else { panic!() };
    let Term::AsymEnc { key, .. } = payload else { panic!() };
    assert_eq!(key.vars().into_iter().next().unwrap().name, "A");
    assert!(b.fresh.iter().any(|a| a.name == "NB"));
    assert!(matches!(b.steps[2], Step::Receive { .. }));

    let a = &scripts["A"];
    assert!(a.steps[0].is_send());
    assert!(a.fresh.iter().any(|x| x.name == "NA"));
}

#[test]
fn single_action_projection() {
    let spec = corpus("plaintext.anb");
    let scripts = project_roles(&spec);
    assert_eq!(scripts["A"].steps.len(), 1);
    assert!(scripts["A"].steps.iter().all(Step::is_send));
    let Step::Receive { pattern, .. } = &scripts["B"].steps[0] else { panic!() };
    assert!(pattern.is_var());
    assert_eq!(pattern.as_atom().unwrap().name, "NA");
}

#[test]
fn executability() {
    assert!(executability_check(&corpus("nspk.anb")).is_empty());
    assert!(executability_check(&corpus("kms.anb")).is_empty());

    let missing_key = inline(
        "Protocol: K\nTypes: Agent A,B; Number NA; SymmetricKey KAB;\n\
         Knowledge: A: A,B; B: A,B,KAB;\nActions: A -> B: {NA}KAB\n",
    );
    let d = executability_check(&missing_key);
    assert_eq!(d.len(), 1);
    assert_eq!((d[0].role.as_str(), d[0].step), ("A", 1));
    assert_eq!(d[0].missing, Term::atom("KAB", Sort::SymmetricKey));

    // B only ever sees NX under a key it lacks
    let forward = inline(
        "Protocol: F\nTypes: Agent A,B; Number NX; SymmetricKey KA;\n\
         Knowledge: A: A,B,KA; B: A,B;\nActions: A -> B: {NX}KA\nB -> A: NX\n",
    );
    let d = executability_check(&forward);
    assert!(d.iter().any(|e| e.role == "B" && e.step == 2 && e.missing == num("NX")), "{d:?}");
}

#[test]
fn nspk_man_in_the_middle() {
    let spec = corpus("nspk.anb");
    let trace = attack(&spec, &SearchConfig::default());
    assert_eq!(trace.goal, 0);
    assert_eq!(trace.also_violated, vec![1]);
    assert_eq!(trace.violation, ViolationKind::SecretLearned { term: num("NB#s2") });

    let s1 = &trace.sessions[0].roles;
    let s2 = &trace.sessions[1].roles;
    assert_eq!((s1["A"].as_str(), s1["B"].as_str()), ("a", "i"));
    assert_eq!((s2["A"].as_str(), s2["B"].as_str()), ("a", "b"));

    let net: Vec<&TraceEvent> = trace.events.iter().filter(|e| !matches!(e, TraceEvent::Claim(_))).collect();
    let msg1 = |k: &str| Term::aenc(Term::pair(num("NA#s1"), Term::agent("a")), pk(k));
    let expected = [
        ("send", "s1/A", msg1("i")),
        ("deliver", "s2/B", msg1("b")),
        ("send", "s2/B", Term::aenc(Term::pair(num("NA#s1"), num("NB#s2")), pk("a"))),
        ("deliver", "s1/A", Term::aenc(Term::pair(num("NA#s1"), num("NB#s2")), pk("a"))),
        ("send", "s1/A", Term::aenc(num("NB#s2"), pk("i"))),
        ("deliver", "s2/B", Term::aenc(num("NB#s2"), pk("b"))),
    ];
    assert_eq!(net.len(), expected.len());
    for (e, (kind, inst, term)) in net.iter().zip(expected) {
        match e {
            TraceEvent::Send { instance, term: t, mode } => {
                assert_eq!((kind, instance.as_str(), t, *mode), ("send", inst, &term, ChannelMode::Plain))
            }
            TraceEvent::Deliver { instance, term: t, .. } => assert_eq!((kind, instance.as_str(), t), ("deliver", inst, &term)),
            TraceEvent::Claim(_) => unreachable!(),
        }
    }
    assert_eq!(verify_trace(&spec, &trace), TraceCheck::Accept);
}

#[test]
fn nsl_is_safe_at_bound_two() {
    let out = search(&corpus("nsl.anb"), &SearchConfig::default()).unwrap();
    assert_eq!(out.verdict, Verdict::SafeAtBound);
    assert!(out.states > 0);
}

#[test]
fn plaintext_secret_leaks_with_one_send() {
    let spec = corpus("plaintext.anb");
    let trace = attack(&spec, &SearchConfig::default());
    let sends = trace.events.iter().filter(|e| matches!(e, TraceEvent::Send { .. })).count();
    let delivers = trace.events.iter().filter(|e| matches!(e, TraceEvent::Deliver { .. })).count();
    assert_eq!((sends, delivers), (1, 0));
    let Witness::Derivation(d) = &trace.witness else { panic!() };
    assert!(matches!(d, Derivation::Known(_)));
    assert_eq!(d.leaves().len(), 1);
}

#[test]
fn kms_replay_breaks_injective_agreement() {
    let spec = corpus("kms.anb");
    let trace = attack(&spec, &SearchConfig::default());
    assert_eq!(trace.goal, 1);
    assert!(matches!(trace.violation, ViolationKind::DuplicateCommit { .. }));
    assert_eq!(verify_trace(&spec, &trace), TraceCheck::Accept);
}

#[test]
fn verify_trace_rejects_forgeries() {
    let spec = corpus("nspk.anb");
    let trace = attack(&spec, &SearchConfig::default());

    let mut forged = trace.clone();
    let k = forged.events.iter().position(|e| matches!(e, TraceEvent::Deliver { .. })).unwrap();
    let TraceEvent::Deliver { instance, sender, .. } = forged.events[k].clone() else { unreachable!() };
    // the intruder cannot open {..}pk(a), so it cannot build this for b
    let secret = Term::aenc(Term::pair(num("NA#s9"), Term::agent("a")), pk("b"));
    forged.events[k] = TraceEvent::Deliver { instance, term: secret, sender };
    assert_eq!(verify_trace(&spec, &forged), TraceCheck::Reject(format!("underivable injection at event {}", k + 1)));

    let mut wrong = trace.clone();
    wrong.witness = Witness::Derivation(Derivation::Known(Term::agent("a")));
    assert_eq!(verify_trace(&spec, &wrong), TraceCheck::Reject("witness mismatch".into()));

    let mut claims = trace.clone();
    let c = claims.events.iter().position(|e| matches!(e, TraceEvent::Claim(ClaimEvent::Commit { .. }))).unwrap();
    claims.events.remove(c);
    assert!(matches!(verify_trace(&spec, &claims), TraceCheck::Reject(_)));
}

#[test]
fn search_is_deterministic() {
    for f in ["nspk.anb", "kms.anb", "plaintext.anb"] {
        let spec = corpus(f);
        let a = search(&spec, &SearchConfig::default()).unwrap();
        let b = search(&spec, &SearchConfig::default()).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn parallel_search_equals_sequential() {
    for f in ["nspk.anb", "nsl.anb", "kms.anb", "plaintext.anb"] {
        let spec = corpus(f);
        let seq = search(&spec, &SearchConfig::default()).unwrap();
        let par = search(&spec, &SearchConfig { parallel: true, ..SearchConfig::default() }).unwrap();
        assert_eq!(seq.verdict, par.verdict, "{f}");
    }
}

#[test]
fn attacks_persist_at_larger_bounds() {
    for f in ["nspk.anb", "nsl.anb", "kms.anb", "plaintext.anb", "mode_plain.anb", "mode_authentic.anb"] {
        let spec = corpus(f);
        let at = |k: usize| matches!(search(&spec, &SearchConfig::default().with_sessions(k)).unwrap().verdict, Verdict::Attack(_));
        if at(1) {
            assert!(at(2), "{f}: attack at 1 session but not at 2");
        }
    }
}

#[test]
fn budgets_are_enforced() {
    let spec = corpus("nsl.anb");
    let tiny = SearchConfig { max_states: 10, ..SearchConfig::default() };
    assert!(matches!(search(&spec, &tiny), Err(CheckError::SearchBudgetExceeded { .. })));
    let shallow = SearchConfig { max_depth: 2, ..SearchConfig::default() };
    assert!(matches!(search(&spec, &shallow), Err(CheckError::SearchBudgetExceeded { .. })));
    assert!(matches!(search(&spec, &SearchConfig::default().with_sessions(4)), Err(CheckError::Config(_))));
    assert!(matches!(search(&spec, &SearchConfig::default().with_sessions(0)), Err(CheckError::Config(_))));
}

/// Sessions between the honest agents only, so fresh names are never
/// handed to the intruder as an endpoint.
fn honest_pairs() -> SearchConfig {
    let pair = |a: &str, b: &str| [("A".to_string(), a.to_string()), ("B".to_string(), b.to_string())].into();
    SearchConfig { assignments: Some(vec![pair("a", "b"), pair("b", "a")]), ..SearchConfig::default() }
}

#[test]
fn secure_channel_payload_stays_hidden() {
    let spec = corpus("mode_secure.anb");
    let ex = explore(&spec, &honest_pairs()).unwrap();
    assert!(ex.states > 0);
    assert!(!ex.intruder_knowledge.iter().any(|t| matches!(t, Term::Atom(a) if a.name.starts_with("NA#"))));
    assert!(ex.deliveries.iter().filter(|d| d.sender.as_deref() != Some("i")).all(|d| !d.injected));
}

#[test]
fn confidential_channel_admits_injection_but_hides_payload() {
    let spec = corpus("mode_confidential.anb");
    let ex = explore(&spec, &honest_pairs()).unwrap();
    assert!(ex.deliveries.iter().any(|d| d.injected && d.instance.ends_with("/B")));
    let honest_payloads: Vec<&Term> =
        ex.sends.iter().filter(|s| s.receiver.as_deref() != Some("i")).map(|s| &s.term).collect();
    assert!(!honest_payloads.is_empty());
    assert!(honest_payloads.iter().all(|t| !ex.intruder_knowledge.contains(t)));
    assert!(!ex.intruder_knowledge.iter().any(|t| matches!(t, Term::Atom(a) if a.name.starts_with("NA#"))));
}

#[test]
fn authentic_channel_payload_is_public_but_genuine() {
    let spec = corpus("mode_authentic.anb");
    let ex = explore(&spec, &honest_pairs()).unwrap();
    assert!(ex.sends.iter().all(|s| ex.intruder_knowledge.contains(&s.term)));
    assert!(ex.deliveries.iter().filter(|d| d.sender.as_deref() != Some("i")).all(|d| !d.injected));
    assert!(ex.deliveries.iter().any(|d| !d.injected));
}

#[test]
fn honest_runs_reach_completion() {
    let honest = SearchConfig::default().with_agents(&["a", "b"]);
    for f in [
        "nspk.anb",
        "nsl.anb",
        "kms.anb",
        "plaintext.anb",
        "mode_plain.anb",
        "mode_authentic.anb",
        "mode_confidential.anb",
        "mode_secure.anb",
    ] {
        let ex = explore(&corpus(f), &honest).unwrap();
        assert!(ex.all_completed, "{f}");
    }
}
