use std::collections::BTreeMap;

use apv_core::anb::parse_protocol;
use apv_core::checker::{
    project_roles, scenarios, search, session_types, ClaimEvent, SearchConfig, Session, Verdict, ViolationKind,
};
use apv_core::model::{ProtocolSpec, Sort, Term};
use apv_core::simkit::{
    compile_participant, monitor_check, passive_script, processes_for, run, simulate, NotReproduced,
    ProcessStatus, SecurityMonitor, SimError, SimVerdict,
};
use apv_core::testgen::{atc_to_intruder_script, trace_to_atc, Directive, IntruderScript};

fn corpus(name: &str) -> ProtocolSpec {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    parse_protocol(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn script_for(spec: &ProtocolSpec) -> IntruderScript {
    match search(spec, &SearchConfig::default()).unwrap().verdict {
        Verdict::Attack(t) => atc_to_intruder_script(&trace_to_atc(&t)),
        Verdict::SafeAtBound => panic!("no attack on {}", spec.name),
    }
}

fn agents(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[test]
fn compiled_participants() {
    let spec = corpus("nspk.anb");
    let scripts = project_roles(&spec);
    let roles: BTreeMap<String, String> = [("A".into(), "a".into()), ("B".into(), "b".into())].into();
    let p = compile_participant(&scripts["A"], "s1/A", &roles, 0);
    assert_eq!(p.status, ProcessStatus::Ready);
    assert!(p.current().unwrap().is_send());
    assert_eq!(p.bindings["NA"], Term::atom("NA#s1", Sort::Number));
    let q = compile_participant(&scripts["A"], "s1/A", &roles, 9);
    assert_eq!(q.bindings["NA"], Term::atom("NA#s1r9", Sort::Number));
    assert_eq!(compile_participant(&scripts["A"], "s1/A", &roles, 9).bindings, q.bindings);

    let mut empty = scripts["A"].clone();
    empty.steps.clear();
    empty.claims.clear();
    assert_eq!(compile_participant(&empty, "s1/A", &roles, 0).status, ProcessStatus::Completed);
}

#[test]
fn nspk_attack_is_reproduced() {
    let spec = corpus("nspk.anb");
    let script = script_for(&spec);
    let report = simulate(&spec, &script, 0, 1000).unwrap();
    let SimVerdict::ViolationReproduced { goal, step, kind } = &report.verdict else {
        panic!("{:?}", report.verdict)
    };
    assert_eq!(*goal, 0);
    assert_eq!(*kind, ViolationKind::SecretLearned { term: Term::atom("NB#s2", Sort::Number) });
    let raised = report.log.iter().find(|e| e.actor == "monitor").unwrap();
    assert_eq!(raised.step, *step);
}

#[test]
fn nspk_attack_is_reproduced_under_other_seeds() {
    let spec = corpus("nspk.anb");
    let script = script_for(&spec);
    for seed in [1, 7, 42] {
        let report = simulate(&spec, &script, seed, 1000).unwrap();
        let SimVerdict::ViolationReproduced { kind, .. } = &report.verdict else { panic!("seed {seed}") };
        let want = Term::atom(format!("NB#s2r{seed}"), Sort::Number);
        assert_eq!(*kind, ViolationKind::SecretLearned { term: want });
    }
}

#[test]
fn nspk_script_stalls_against_nsl() {
    let nsl = corpus("nsl.anb");
    let mut script = script_for(&corpus("nspk.anb"));
    script.protocol = nsl.name.clone();
    let report = simulate(&nsl, &script, 0, 1000).unwrap();
    assert_eq!(report.verdict, SimVerdict::NotReproduced(NotReproduced::ScriptStalled));
}

#[test]
fn every_corpus_attack_reproduces_its_goal() {
    for f in ["nspk.anb", "plaintext.anb", "kms.anb"] {
        let spec = corpus(f);
        let script = script_for(&spec);
        let (want, _) = script.expect.clone().unwrap();
        let report = simulate(&spec, &script, 0, 1000).unwrap();
        match report.verdict {
            SimVerdict::ViolationReproduced { goal, .. } => assert_eq!(goal, want, "{f}"),
            v => panic!("{f}: {v:?}"),
        }
    }
}

#[test]
fn honest_runs_complete() {
    let pool = agents(&["a", "b"]);
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
        let spec = corpus(f);
        for sessions in scenarios(&session_types(&spec.roles(), &pool), 2) {
            let mut monitor = SecurityMonitor::new(&spec, &pool);
            monitor.goals.clear();
            let procs = processes_for(&spec, &sessions, 0);
            let report = run(procs, &passive_script(&spec, &pool, sessions.clone()), &mut monitor, 1000).unwrap();
            assert_eq!(report.verdict, SimVerdict::NotReproduced(NotReproduced::RunCompletedClean), "{f} {sessions:?}");
            assert!(report.final_status.iter().all(|(_, s)| *s == ProcessStatus::Completed));
        }
    }
}

#[test]
fn honest_runs_of_unleaky_protocols_raise_nothing() {
    let pool = agents(&["a", "b"]);
    for f in ["nspk.anb", "nsl.anb", "kms.anb", "mode_confidential.anb", "mode_secure.anb"] {
        let spec = corpus(f);
        for sessions in scenarios(&session_types(&spec.roles(), &pool), 2) {
            let report = simulate(&spec, &passive_script(&spec, &pool, sessions.clone()), 0, 1000).unwrap();
            assert_eq!(report.verdict, SimVerdict::NotReproduced(NotReproduced::RunCompletedClean), "{f} {sessions:?}");
        }
    }
}

#[test]
fn eavesdropping_on_a_readable_channel_leaks_the_secret() {
    let pool = agents(&["a", "b"]);
    let sessions = vec![Session { id: "s1".into(), roles: [("A".into(), "a".into()), ("B".into(), "b".into())].into() }];
    for f in ["mode_plain.anb", "mode_authentic.anb"] {
        let spec = corpus(f);
        let report = simulate(&spec, &passive_script(&spec, &pool, sessions.clone()), 0, 100).unwrap();
        let want = ViolationKind::SecretLearned { term: Term::atom("NA#s1", Sort::Number) };
        assert_eq!(report.verdict, SimVerdict::ViolationReproduced { goal: 0, step: 1, kind: want }, "{f}");
    }
}

#[test]
fn runs_are_deterministic() {
    let spec = corpus("nspk.anb");
    let script = script_for(&spec);
    let a = simulate(&spec, &script, 3, 1000).unwrap();
    let b = simulate(&spec, &script, 3, 1000).unwrap();
    assert_eq!(a.log_lines(), b.log_lines());
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn budget_and_configuration_errors() {
    let spec = corpus("nspk.anb");
    let script = script_for(&spec);
    let report = simulate(&spec, &script, 0, 2).unwrap();
    assert_eq!(report.verdict, SimVerdict::NotReproduced(NotReproduced::StepBudgetExhausted));
    assert_eq!(report.steps, 2);
    assert!(matches!(simulate(&spec, &script, 0, 0), Err(SimError::Config(_))));

    let mut bad = script.clone();
    bad.directives.push(Directive::Send { to: "s7/B".into(), term: Term::agent("a"), from: None });
    assert!(matches!(simulate(&spec, &bad, 0, 100), Err(SimError::Config(_))));
}

#[test]
fn monitor_semantics() {
    let spec = corpus("plaintext.anb");
    let pool = agents(&["a", "b", "i"]);
    let na = Term::atom("NA#s1", Sort::Number);
    let mut m = SecurityMonitor::new(&spec, &pool);
    m.claims.push(ClaimEvent::Secret {
        goal: 0,
        instance: "s1/A".into(),
        term: na.clone(),
        parties: agents(&["a", "b"]),
    });
    assert!(monitor_check(&mut m).is_empty());
    m.knowledge.insert(na.clone());
    let delta = monitor_check(&mut m);
    assert_eq!(delta.len(), 1);
    assert_eq!(delta[0].kind, ViolationKind::SecretLearned { term: na });
    assert!(monitor_check(&mut m).is_empty(), "violations are raised once");
    assert_eq!(m.raised.len(), 1);
}

#[test]
fn monitor_agreement_semantics() {
    let spec = corpus("kms.anb");
    let pool = agents(&["a", "b", "i"]);
    let key = Term::atom("KMAC#s1", Sort::SymmetricKey);
    let running = ClaimEvent::Running {
        goal: 1,
        instance: "s1/KMC".into(),
        actor: "a".into(),
        claimer: "b".into(),
        terms: vec![key.clone()],
    };
    let commit = |inst: &str| ClaimEvent::Commit {
        goal: 1,
        instance: inst.into(),
        claimer: "b".into(),
        peer: "a".into(),
        terms: vec![key.clone()],
    };
    let mut m = SecurityMonitor::new(&spec, &pool);
    m.claims.push(running);
    m.claims.push(commit("s1/OBU"));
    assert!(monitor_check(&mut m).is_empty());
    m.claims.push(commit("s2/OBU"));
    let delta = monitor_check(&mut m);
    assert_eq!(delta.len(), 1);
    assert!(matches!(delta[0].kind, ViolationKind::DuplicateCommit { .. }));
}

#[test]
fn confidential_payloads_never_reach_the_mirror() {
    for f in ["mode_confidential.anb", "mode_secure.anb"] {
        let spec = corpus(f);
        let pool = agents(&["a", "b"]);
        let sessions = vec![Session { id: "s1".into(), roles: [("A".into(), "a".into()), ("B".into(), "b".into())].into() }];
        let mut monitor = SecurityMonitor::new(&spec, &pool);
        let report = run(processes_for(&spec, &sessions, 0), &passive_script(&spec, &pool, sessions), &mut monitor, 100).unwrap();
        assert_eq!(report.verdict, SimVerdict::NotReproduced(NotReproduced::RunCompletedClean));
        assert!(!monitor.knowledge.derivable(&Term::atom("NA#s1", Sort::Number)), "{f}");
    }
}
