//! Independent derivability oracle: single-phase saturation over the finite
//! universe of subterms of the facts and queries. Shares nothing with the
//! engine's analysis/synthesis split.

#![allow(dead_code)]

use std::collections::BTreeSet;

use apv_core::model::{Sort, Term};
use rand::seq::SliceRandom;
use rand::Rng;

fn universe(facts: &BTreeSet<Term>, goals: &[Term]) -> BTreeSet<Term> {
    let mut u = BTreeSet::new();
    for t in facts.iter().chain(goals) {
        let mut stack = vec![t.clone()];
        while let Some(s) = stack.pop() {
            if u.insert(s.clone()) {
                stack.extend(s.children().into_iter().cloned());
            }
        }
    }
    u
}

fn knows_fn(s: &BTreeSet<Term>, f: &str) -> bool {
    s.iter().any(|t| matches!(t, Term::Atom(a) if a.name == f && !a.var))
}

/// All members of the universe derivable from `facts`.
pub fn derivable_set(facts: &BTreeSet<Term>, goals: &[Term]) -> BTreeSet<Term> {
    let u = universe(facts, goals);
    let mut s: BTreeSet<Term> = facts.clone();
    loop {
        let mut added = false;
        for cand in &u {
            if s.contains(cand) {
                continue;
            }
            let composable = match cand {
                Term::Pair(a, b) => s.contains(a) && s.contains(b),
                Term::SymEnc { payload, key }
                | Term::AsymEnc { payload, key }
                | Term::Sign { payload, key } => s.contains(payload) && s.contains(key),
                Term::FunApp { function, args, .. } => {
                    knows_fn(&s, function) && args.iter().all(|a| s.contains(a))
                }
                _ => false,
            };
            let decomposable = s.iter().any(|k| match k {
                Term::Pair(a, b) => **a == *cand || **b == *cand,
                Term::Sign { payload, .. } => **payload == *cand,
                Term::SymEnc { payload, key } => **payload == *cand && s.contains(key),
                Term::AsymEnc { payload, key } => {
                    **payload == *cand && s.contains(&Term::inv((**key).clone()))
                }
                Term::FunApp { args, one_way: false, .. } => args.contains(cand),
                _ => false,
            });
            if composable || decomposable {
                s.insert(cand.clone());
                added = true;
            }
        }
        if !added {
            return s;
        }
    }
}

pub fn oracle_derivable(facts: &BTreeSet<Term>, goal: &Term) -> bool {
    derivable_set(facts, std::slice::from_ref(goal)).contains(goal)
}

fn atoms() -> Vec<Term> {
    vec![
        Term::atom("n1", Sort::Number),
        Term::atom("n2", Sort::Number),
        Term::atom("n3", Sort::Number),
        Term::atom("k1", Sort::SymmetricKey),
        Term::atom("k2", Sort::SymmetricKey),
        Term::agent("a"),
        Term::agent("b"),
        Term::atom("h", Sort::Function),
        Term::atom("pk", Sort::PublicKey),
    ]
}

fn pk(agent: &str) -> Term {
    Term::app("pk", vec![Term::agent(agent)])
}

/// Random well-sorted term of height at most `height`, counting edges: an
/// atom has height 0, `pk(a)` 1 and `inv(pk(a))` 2. `Term::depth` reports
/// one more.
pub fn random_term<R: Rng>(rng: &mut R, height: usize) -> Term {
    if height == 0 || rng.gen_bool(0.3) {
        return atoms().choose(rng).unwrap().clone();
    }
    let sub = |rng: &mut R| random_term(rng, height - 1);
    let agent = |rng: &mut R| *["a", "b"].choose(rng).unwrap();
    match rng.gen_range(0..8) {
        2 => {
            let key = if height < 2 || rng.gen_bool(0.7) {
                [Term::atom("k1", Sort::SymmetricKey), Term::atom("k2", Sort::SymmetricKey)]
                    .choose(rng)
                    .unwrap()
                    .clone()
            } else {
                Term::app("h", vec![random_term(rng, height - 2)])
            };
            Term::senc(sub(rng), key)
        }
        3 if height >= 2 => Term::aenc(sub(rng), pk(agent(rng))),
        4 if height >= 3 => Term::sign(sub(rng), Term::inv(pk(agent(rng)))),
        5 => Term::app("h", vec![sub(rng)]),
        6 if height >= 2 => Term::inv(pk(agent(rng))),
        7 => pk(agent(rng)),
        _ => Term::pair(sub(rng), sub(rng)),
    }
}

/// A knowledge set of at most six facts of height at most three.
pub fn random_facts<R: Rng>(rng: &mut R) -> BTreeSet<Term> {
    let n = rng.gen_range(1..=6);
    (0..n).map(|_| random_term(rng, 3)).collect()
}

/// Query terms of height at most four: every subterm of the facts plus random
/// compositions over them.
pub fn query_terms<R: Rng>(rng: &mut R, facts: &BTreeSet<Term>) -> Vec<Term> {
    let mut subs: Vec<Term> = facts.iter().flat_map(|f| f.subterms()).collect::<BTreeSet<_>>().into_iter().collect();
    subs.extend(atoms());
    let mut out = subs.clone();
    for _ in 0..40 {
        let a = subs.choose(rng).unwrap().clone();
        let b = subs.choose(rng).unwrap().clone();
        let t = match rng.gen_range(0..5) {
            0 => Term::pair(a, b),
            1 => Term::senc(a, Term::atom("k1", Sort::SymmetricKey)),
            2 => Term::aenc(a, pk("b")),
            3 => Term::app("h", vec![a]),
            _ => random_term(rng, 4),
        };
        out.push(t);
    }
    out.retain(|t| t.depth() - 1 <= 4);
    out
}
