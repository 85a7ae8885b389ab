//! Random well-formed AnB sources: every role has knowledge, senders differ
//! from receivers and goal terms are taken from payloads.

use rand::seq::SliceRandom;
use rand::Rng;

use apv_core::model::{Sort, Term};

const ROLES: [&str; 3] = ["A", "B", "C"];
const NUMBERS: [&str; 3] = ["NA", "NB", "NC"];
const KEYS: [&str; 2] = ["K1", "K2"];
const ARROWS: [&str; 4] = ["->", "*->", "->*", "*->*"];

fn atom<R: Rng>(rng: &mut R, roles: &[&str]) -> Term {
    match rng.gen_range(0..3) {
        0 => Term::agent(*roles.choose(rng).unwrap()),
        1 => Term::atom(*NUMBERS.choose(rng).unwrap(), Sort::Number),
        _ => Term::atom(*KEYS.choose(rng).unwrap(), Sort::SymmetricKey),
    }
}

fn term<R: Rng>(rng: &mut R, roles: &[&str], depth: usize) -> Term {
    if depth == 0 || rng.gen_bool(0.3) {
        return atom(rng, roles);
    }
    let agent = |rng: &mut R| Term::agent(*roles.choose(rng).unwrap());
    let body = term(rng, roles, depth - 1);
    match rng.gen_range(0..6) {
        0 => Term::pair(body, term(rng, roles, depth - 1)),
        1 => {
            let key = if rng.gen_bool(0.5) {
                Term::atom(*KEYS.choose(rng).unwrap(), Sort::SymmetricKey)
            } else {
                Term::app("sk", vec![agent(rng), agent(rng)])
            };
            Term::senc(body, key)
        }
        2 => Term::aenc(body, Term::app("pk", vec![agent(rng)])),
        3 => Term::sign(body, Term::inv(Term::app("pk", vec![agent(rng)]))),
        4 => Term::app("h", vec![body]),
        _ => Term::app("h", vec![body, term(rng, roles, depth - 1)]),
    }
}

pub fn random_spec<R: Rng>(rng: &mut R, index: usize) -> String {
    let roles = &ROLES[..rng.gen_range(2..=3)];
    let mut src = format!("Protocol: Rand{index}\nTypes:\n");
    src += &format!("  Agent {};\n  Number {};\n", roles.join(","), NUMBERS.join(","));
    src += &format!("  SymmetricKey {},sk;\n  PublicKey pk;\n  Function h;\n", KEYS.join(","));

    src += "Knowledge:\n";
    for r in roles {
        let mut items = vec![r.to_string(), "pk".into(), format!("inv(pk({r}))")];
        for _ in 0..rng.gen_range(0..3) {
            items.push(term(rng, roles, 1).to_string());
        }
        src += &format!("  {r}: {};\n", items.join(","));
    }

    src += "Actions:\n";
    let mut payloads = Vec::new();
    for k in 0..rng.gen_range(roles.len()..=5) {
        let sender = if k < roles.len() { roles[k] } else { *roles.choose(rng).unwrap() };
        let receiver = *roles.iter().filter(|r| **r != sender).collect::<Vec<_>>().choose(rng).unwrap();
        let payload = term(rng, roles, 3);
        src += &format!("  {sender} {} {receiver}: {payload}\n", ARROWS.choose(rng).unwrap());
        payloads.push(payload);
    }

    let candidates: Vec<Term> =
        payloads.iter().flat_map(|p| p.subterms()).filter(|t| !matches!(t, Term::Pair(..))).collect();
    let goals = rng.gen_range(0..=3);
    if goals > 0 {
        src += "Goals:\n";
    }
    for _ in 0..goals {
        let t = candidates.choose(rng).unwrap();
        let mut pair: Vec<&str> = roles.choose_multiple(rng, 2).copied().collect();
        match rng.gen_range(0..3) {
            0 => {
                pair.sort();
                src += &format!("  {t} secret between {}\n", pair.join(","));
            }
            1 => src += &format!("  {} authenticates {} on {t}\n", pair[0], pair[1]),
            _ => {
                let u = candidates.choose(rng).unwrap();
                src += &format!("  {} injectively authenticates {} on {t},{u}\n", pair[0], pair[1]);
            }
        }
    }
    src
}
