//! Intruder knowledge: decomposition closure (analysis) and composition
//! (synthesis) over the term algebra, with derivation witnesses.
//!
//! A function symbol `f` is applicable by the intruder iff an atom named
//! `f` is in its analyzed knowledge. One-way applications are never
//! decomposed; the others reveal their arguments.

use std::collections::BTreeSet;
use std::fmt;

use crate::model::Term;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    PairIntro,
    SymEncIntro,
    AsymEncIntro,
    SignIntro,
    FunAppIntro,
}

/// Proof that a term is derivable. Leaves are analyzed facts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Derivation {
    Known(Term),
    Compose { rule: Rule, conclusion: Term, premises: Vec<Derivation> },
}

impl Derivation {
    pub fn conclusion(&self) -> &Term {
        match self {
            Derivation::Known(t) => t,
            Derivation::Compose { conclusion, .. } => conclusion,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Derivation::Known(_) => 0,
            Derivation::Compose { premises, .. } => {
                1 + premises.iter().map(Derivation::depth).max().unwrap_or(0)
            }
        }
    }

    pub fn leaves(&self) -> Vec<&Term> {
        match self {
            Derivation::Known(t) => vec![t],
            Derivation::Compose { premises, .. } => premises.iter().flat_map(|p| p.leaves()).collect(),
        }
    }

    /// Rebuilds the conclusion bottom-up from leaves in `kb.analyzed()`.
    /// Returns `None` if any node does not follow from its children.
    pub fn replay(&self, kb: &KnowledgeBase) -> Option<Term> {
        match self {
            Derivation::Known(t) => kb.analyzed.contains(t).then(|| t.clone()),
            Derivation::Compose { rule, conclusion, premises } => {
                let built: Vec<Term> = premises.iter().map(|p| p.replay(kb)).collect::<Option<_>>()?;
                let rebuilt = match (rule, built.as_slice(), conclusion) {
                    (Rule::PairIntro, [a, b], _) => Term::pair(a.clone(), b.clone()),
                    (Rule::SymEncIntro, [m, k], _) => Term::senc(m.clone(), k.clone()),
                    (Rule::AsymEncIntro, [m, k], _) => Term::aenc(m.clone(), k.clone()),
                    (Rule::SignIntro, [m, k], _) => Term::sign(m.clone(), k.clone()),
                    (Rule::FunAppIntro, args, Term::FunApp { function, one_way, .. }) => {
                        if !kb.knows_function(function) {
                            return None;
                        }
                        Term::FunApp { function: function.clone(), args: args.to_vec(), one_way: *one_way }
                    }
                    _ => return None,
                };
                (rebuilt == *conclusion).then_some(rebuilt)
            }
        }
    }
}

impl fmt::Display for Derivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Derivation::Known(t) => write!(f, "{t}"),
            Derivation::Compose { rule, premises, .. } => {
                write!(f, "{rule:?}(")?;
                for (i, p) in premises.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    write!(f, "{p}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Persistent knowledge set: updates return a new value.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    facts: BTreeSet<Term>,
    analyzed: BTreeSet<Term>,
    atom_names: BTreeSet<String>,
    generation: u64,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_facts(facts: impl IntoIterator<Item = Term>) -> Self {
        let facts: BTreeSet<Term> = facts.into_iter().collect();
        let analyzed = analyze(&facts);
        let atom_names = atom_names(&analyzed);
        KnowledgeBase { facts, analyzed, atom_names, generation: 0 }
    }

    pub fn facts(&self) -> &BTreeSet<Term> {
        &self.facts
    }

    pub fn analyzed(&self) -> &BTreeSet<Term> {
        &self.analyzed
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn add_fact(&self, t: Term) -> KnowledgeBase {
        let mut next = self.clone();
        next.insert(t);
        next
    }

    /// In-place variant of [`KnowledgeBase::add_fact`]. Returns whether the
    /// fact set changed.
    pub fn insert(&mut self, t: Term) -> bool {
        self.generation += 1;
        if !self.facts.insert(t.clone()) {
            return false;
        }
        if self.analyzed.insert(t) {
            saturate(&mut self.analyzed);
            self.atom_names = atom_names(&self.analyzed);
        }
        true
    }

    pub fn knows_function(&self, name: &str) -> bool {
        self.atom_names.contains(name)
    }

    pub fn derivable(&self, goal: &Term) -> bool {
        derivable_in(&self.analyzed, &self.atom_names, goal)
    }

    /// Composition witness for `goal`, or `None` when not derivable.
    /// Membership is preferred over composition, so the witness is minimal.
    pub fn can_derive(&self, goal: &Term) -> Option<Derivation> {
        if self.analyzed.contains(goal) {
            return Some(Derivation::Known(goal.clone()));
        }
        let (rule, premises): (Rule, Vec<&Term>) = match goal {
            Term::Pair(a, b) => (Rule::PairIntro, vec![a, b]),
            Term::SymEnc { payload, key } => (Rule::SymEncIntro, vec![payload, key]),
            Term::AsymEnc { payload, key } => (Rule::AsymEncIntro, vec![payload, key]),
            Term::Sign { payload, key } => (Rule::SignIntro, vec![payload, key]),
            Term::FunApp { function, args, .. } if self.knows_function(function) => {
                (Rule::FunAppIntro, args.iter().collect())
            }
            _ => return None,
        };
        let premises = premises.into_iter().map(|p| self.can_derive(p)).collect::<Option<Vec<_>>>()?;
        Some(Derivation::Compose { rule, conclusion: goal.clone(), premises })
    }
}

fn atom_names(set: &BTreeSet<Term>) -> BTreeSet<String> {
    set.iter()
        .filter_map(|t| t.as_atom().filter(|a| !a.var).map(|a| a.name.clone()))
        .collect()
}

fn derivable_in(analyzed: &BTreeSet<Term>, names: &BTreeSet<String>, goal: &Term) -> bool {
    if analyzed.contains(goal) {
        return true;
    }
    match goal {
        Term::Pair(a, b) => derivable_in(analyzed, names, a) && derivable_in(analyzed, names, b),
        Term::SymEnc { payload, key } | Term::AsymEnc { payload, key } | Term::Sign { payload, key } => {
            derivable_in(analyzed, names, payload) && derivable_in(analyzed, names, key)
        }
        Term::FunApp { function, args, .. } => {
            names.contains(function) && args.iter().all(|a| derivable_in(analyzed, names, a))
        }
        _ => false,
    }
}

/// Least fixpoint of the decomposition rules over `facts`.
pub fn analyze(facts: &BTreeSet<Term>) -> BTreeSet<Term> {
    let mut set = facts.clone();
    saturate(&mut set);
    set
}

fn saturate(set: &mut BTreeSet<Term>) {
    loop {
        let names = atom_names(set);
        let mut fresh = Vec::new();
        for t in set.iter() {
            match t {
                Term::Pair(a, b) => fresh.extend([a.as_ref(), b.as_ref()]),
                Term::Sign { payload, .. } => fresh.push(payload),
                Term::SymEnc { payload, key } if derivable_in(set, &names, key) => fresh.push(payload),
                Term::AsymEnc { payload, key } if derivable_in(set, &names, &Term::inv((**key).clone())) => {
                    fresh.push(payload)
                }
                Term::FunApp { args, one_way: false, .. } => fresh.extend(args.iter()),
                _ => {}
            }
        }
        let fresh: Vec<Term> = fresh.into_iter().filter(|t| !set.contains(*t)).cloned().collect();
        if fresh.is_empty() {
            return;
        }
        set.extend(fresh);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Sort;
    use proptest::prelude::*;

    fn n(s: &str) -> Term {
        Term::atom(s, Sort::Number)
    }
    fn k(s: &str) -> Term {
        Term::atom(s, Sort::SymmetricKey)
    }
    fn pk(a: &str) -> Term {
        Term::app("pk", vec![Term::agent(a)])
    }
    fn set(ts: &[Term]) -> BTreeSet<Term> {
        ts.iter().cloned().collect()
    }

    #[test]
    fn pairing_rule() {
        let a = analyze(&set(&[Term::pair(n("a"), n("b"))]));
        assert!(a.contains(&n("a")) && a.contains(&n("b")));
    }

    #[test]
    fn no_key_no_payload() {
        let a = analyze(&set(&[Term::senc(n("m"), k("k"))]));
        assert!(!a.contains(&n("m")));
    }

    #[test]
    fn key_recovered_through_pairing() {
        let a = analyze(&set(&[Term::senc(n("m"), k("k")), Term::pair(k("k"), n("a"))]));
        assert!(a.contains(&n("m")));
    }

    #[test]
    fn composed_key_opens_ciphertext() {
        let key = Term::app("h", vec![n("x")]);
        let facts = set(&[Term::senc(n("m"), key), n("x"), Term::atom("h", Sort::Function)]);
        assert!(analyze(&facts).contains(&n("m")));
    }

    #[test]
    fn asymmetric_needs_private_key() {
        let c = Term::aenc(n("m"), pk("b"));
        assert!(!analyze(&set(std::slice::from_ref(&c))).contains(&n("m")));
        assert!(analyze(&set(&[c, Term::inv(pk("b"))])).contains(&n("m")));
    }

    #[test]
    fn signatures_reveal_payload() {
        let s = Term::sign(n("m"), Term::inv(pk("a")));
        assert!(analyze(&set(&[s])).contains(&n("m")));
    }

    #[test]
    fn derive_pair() {
        let kb = KnowledgeBase::from_facts([n("NA"), n("NB")]);
        let d = kb.can_derive(&Term::pair(n("NA"), n("NB"))).unwrap();
        assert!(matches!(d, Derivation::Compose { rule: Rule::PairIntro, .. }));
        assert_eq!(d.depth(), 1);
    }

    #[test]
    fn cannot_open_foreign_ciphertext() {
        let kb = KnowledgeBase::from_facts([Term::aenc(n("NA"), pk("b"))]);
        assert!(kb.can_derive(&n("NA")).is_none());
    }

    #[test]
    fn intruder_reencrypts() {
        let kb = KnowledgeBase::from_facts([n("NA"), pk("b")]);
        let goal = Term::aenc(n("NA"), pk("b"));
        let d = kb.can_derive(&goal).unwrap();
        assert!(matches!(d, Derivation::Compose { rule: Rule::AsymEncIntro, .. }));
        assert_eq!(d.replay(&kb), Some(goal));
    }

    #[test]
    fn private_functions_are_not_applied() {
        let kb = KnowledgeBase::from_facts([Term::agent("a")]);
        assert!(!kb.derivable(&pk("a")));
        let kb = kb.add_fact(Term::atom("pk", Sort::PublicKey));
        assert!(kb.derivable(&pk("a")));
    }

    #[test]
    fn add_fact_examples() {
        let kb = KnowledgeBase::new().add_fact(n("NA"));
        assert_eq!(kb.analyzed(), &set(&[n("NA")]));

        let kb = KnowledgeBase::from_facts([Term::senc(n("m"), k("k"))]);
        let before = kb.clone();
        let kb2 = kb.add_fact(k("k"));
        assert!(kb2.analyzed().contains(&n("m")));
        assert!(!before.analyzed().contains(&n("m")));

        let kb3 = kb2.add_fact(k("k"));
        assert_eq!(kb3.analyzed(), kb2.analyzed());
        assert!(kb3.generation() > kb2.generation());
    }

    #[test]
    fn replay_rejects_forged_witness() {
        let kb = KnowledgeBase::from_facts([n("NA")]);
        let forged = Derivation::Compose {
            rule: Rule::PairIntro,
            conclusion: Term::pair(n("NA"), n("NB")),
            premises: vec![Derivation::Known(n("NA")), Derivation::Known(n("NB"))],
        };
        assert_eq!(forged.replay(&kb), None);
    }

    fn leaf() -> impl Strategy<Value = Term> {
        prop_oneof![
            Just(n("n1")),
            Just(n("n2")),
            Just(k("k1")),
            Just(k("k2")),
            Just(Term::agent("a")),
            Just(Term::agent("b")),
            Just(Term::atom("h", Sort::Function)),
        ]
    }

    fn arb_term() -> impl Strategy<Value = Term> {
        leaf().prop_recursive(3, 16, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Term::pair(a, b)),
                (inner.clone(), prop_oneof![Just(k("k1")), Just(k("k2"))])
                    .prop_map(|(a, key)| Term::senc(a, key)),
                (inner.clone(), prop_oneof![Just(pk("a")), Just(pk("b"))])
                    .prop_map(|(a, key)| Term::aenc(a, key)),
                (inner.clone(), prop_oneof![Just(pk("a")), Just(pk("b"))])
                    .prop_map(|(a, key)| Term::sign(a, Term::inv(key))),
                inner.clone().prop_map(|a| Term::app("h", vec![a])),
                Just(Term::inv(pk("a"))),
            ]
        })
    }

    fn arb_facts() -> impl Strategy<Value = BTreeSet<Term>> {
        prop::collection::btree_set(arb_term(), 0..6)
    }

    proptest! {
        #[test]
        fn closure_is_monotone(f1 in arb_facts(), extra in arb_facts()) {
            let f2: BTreeSet<Term> = f1.union(&extra).cloned().collect();
            prop_assert!(analyze(&f1).is_subset(&analyze(&f2)));
        }

        #[test]
        fn closure_is_idempotent(f in arb_facts()) {
            let once = analyze(&f);
            prop_assert_eq!(analyze(&once), once.clone());
            prop_assert!(f.is_subset(&once));
        }

        #[test]
        fn incremental_matches_batch(f in arb_facts(), t in arb_term()) {
            let kb = KnowledgeBase::from_facts(f.clone()).add_fact(t.clone());
            let mut all = f;
            all.insert(t);
            prop_assert_eq!(kb.analyzed(), &analyze(&all));
        }

        #[test]
        fn witnesses_replay(f in arb_facts(), goal in arb_term()) {
            let kb = KnowledgeBase::from_facts(f);
            match kb.can_derive(&goal) {
                Some(d) => prop_assert_eq!(d.replay(&kb), Some(goal.clone())),
                None => prop_assert!(!kb.derivable(&goal)),
            }
        }

        #[test]
        fn no_key_confidentiality(others in arb_facts()) {
            let m = n("m_secret");
            let key = k("k_secret");
            let mut facts = others;
            facts.insert(Term::senc(m.clone(), key));
            let kb = KnowledgeBase::from_facts(facts);
            prop_assert!(kb.can_derive(&m).is_none());
        }

        #[test]
        fn one_wayness(others in arb_facts()) {
            let m = n("m_secret");
            let mut facts = others;
            facts.insert(Term::app("h", vec![m.clone()]));
            let kb = KnowledgeBase::from_facts(facts);
            prop_assert!(kb.can_derive(&m).is_none());
        }
    }
}
