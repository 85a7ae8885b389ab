//! Text artifacts for external tools: canonical AnB, a Tamarin theory
//! skeleton, and an archival bundle of a protocol with one of its tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::anb::pretty_print;
use crate::checker::{project_roles, ClaimSpec, RoleScript, Step};
use crate::model::{ChannelMode, Goal, ProtocolSpec, Sort, Term};
use crate::testgen::AbstractTestCase;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Anb,
    TamarinTheory,
    AtcJson,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Anb => "anb",
            ExportFormat::TamarinTheory => "spthy",
            ExportFormat::AtcJson => "atc.json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportArtifact {
    pub format: ExportFormat,
    pub text: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExportError {
    #[error("unsupported construct: {0}")]
    UnsupportedConstruct(String),
}

pub fn export_anb(spec: &ProtocolSpec) -> ExportArtifact {
    ExportArtifact { format: ExportFormat::Anb, text: pretty_print(spec), warnings: Vec::new() }
}

pub fn export_atc_bundle(spec: &ProtocolSpec, atc: &AbstractTestCase) -> Vec<ExportArtifact> {
    vec![
        export_anb(spec),
        ExportArtifact { format: ExportFormat::AtcJson, text: atc.to_json(spec), warnings: Vec::new() },
    ]
}

/// Tamarin function symbols that user identifiers must not shadow.
const RESERVED: [&str; 14] = [
    "pk", "h", "aenc", "adec", "senc", "sdec", "revealSign", "revealVerify", "getMessage", "true", "fst", "snd",
    "pair", "inv",
];

struct Encoder<'a> {
    spec: &'a ProtocolSpec,
    public: BTreeSet<String>,
    /// Key-valued and plain functions by name, with arity.
    functions: BTreeMap<String, (Sort, usize)>,
    warnings: Vec<String>,
}

impl<'a> Encoder<'a> {
    fn new(spec: &'a ProtocolSpec) -> Self {
        let mut functions = BTreeMap::new();
        let mut visit = |t: &Term| {
            for s in t.subterms() {
                if let Term::FunApp { function, args, .. } = s {
                    let sort = spec.declarations.sort_of(&function).unwrap_or(Sort::Function);
                    functions.insert(function.clone(), (sort, args.len()));
                }
            }
        };
        spec.actions.iter().for_each(|a| visit(&a.payload));
        spec.knowledge.values().flatten().for_each(&mut visit);
        spec.goals.iter().flat_map(Goal::terms).for_each(visit);
        Encoder { spec, public: spec.public_functions(), functions, warnings: Vec::new() }
    }

    fn warn(&mut self, w: String) {
        if !self.warnings.contains(&w) {
            self.warnings.push(w);
        }
    }

    fn fname(&mut self, f: &str) -> String {
        if RESERVED.contains(&f) {
            self.warn(format!("function `{f}` renamed to `u_{f}` to avoid a builtin symbol"));
            format!("u_{f}")
        } else {
            f.to_string()
        }
    }

    fn args(&mut self, args: &[Term], role: &RoleScript) -> Result<String, ExportError> {
        let parts = args.iter().map(|a| self.term(a, role)).collect::<Result<Vec<_>, _>>()?;
        Ok(parts.join(", "))
    }

    fn term(&mut self, t: &Term, role: &RoleScript) -> Result<String, ExportError> {
        Ok(match t {
            Term::Atom(a) if a.var && role.parameters.contains(&a.name) => format!("${}", a.name),
            Term::Atom(a) if a.var && role.fresh.iter().any(|f| f.name == a.name) => format!("~{}", a.name),
            Term::Atom(a) if a.var => a.name.clone(),
            Term::Atom(a) => {
                if matches!(a.sort, Sort::Number | Sort::SymmetricKey | Sort::PrivateKey) {
                    self.warn(format!("long-term constant `{}` is encoded as the public name '{}'", a.name, a.name));
                }
                format!("'{}'", a.name)
            }
            Term::Pair(x, y) => format!("<{}, {}>", self.term(x, role)?, self.term(y, role)?),
            Term::SymEnc { payload, key } => format!("senc({}, {})", self.term(payload, role)?, self.term(key, role)?),
            Term::AsymEnc { payload, key } => {
                format!("aenc({}, {})", self.term(payload, role)?, self.term(key, role)?)
            }
            Term::Sign { payload, key } => {
                format!("revealSign({}, {})", self.term(payload, role)?, self.term(key, role)?)
            }
            Term::FunApp { function, args, .. } => {
                let a = self.args(args, role)?;
                match self.spec.declarations.sort_of(function) {
                    Some(Sort::PublicKey) => format!("pk(inv_{function}({a}))"),
                    _ => format!("{}({a})", self.fname(function)),
                }
            }
            Term::Inv(inner) => match inner.as_ref() {
                Term::FunApp { function, args, .. }
                    if self.spec.declarations.sort_of(function) == Some(Sort::PublicKey) =>
                {
                    format!("inv_{function}({})", self.args(args, role)?)
                }
                other => return Err(ExportError::UnsupportedConstruct(format!("inverse of `{other}`"))),
            },
        })
    }

    fn function_decls(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (f, (sort, arity)) in &self.functions {
            match sort {
                Sort::PublicKey => out.push(format!("inv_{f}/{arity} [private]")),
                _ if RESERVED.contains(&f.as_str()) => {
                    let private = if self.public.contains(f) { "" } else { " [private]" };
                    out.push(format!("u_{f}/{arity}{private}"));
                }
                _ => {
                    let private = if self.public.contains(f) { "" } else { " [private]" };
                    out.push(format!("{f}/{arity}{private}"));
                }
            }
        }
        out
    }
}

fn vars(n: usize) -> Vec<String> {
    if n == 1 {
        vec!["$X".into()]
    } else {
        (1..=n).map(|i| format!("$X{i}")).collect()
    }
}

fn facts(fs: &[String]) -> String {
    if fs.is_empty() {
        "[ ]".into()
    } else {
        format!("[ {} ]", fs.join(", "))
    }
}

fn rule(out: &mut String, name: &str, premises: &[String], actions: &[String], conclusions: &[String]) {
    let _ = writeln!(out, "rule {name}:");
    let _ = writeln!(out, "    {}", facts(premises));
    if actions.is_empty() {
        let _ = writeln!(out, "  -->");
    } else {
        let _ = writeln!(out, "  --[ {} ]->", actions.join(", "));
    }
    let _ = writeln!(out, "    {}\n", facts(conclusions));
}

fn ident(s: &str) -> String {
    let mut out: String = s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    if !out.starts_with(|c: char| c.is_ascii_alphabetic()) {
        out.insert(0, 'P');
    }
    out
}

/// Variables of a role in order of first appearance: parameters, then
/// whatever the steps up to and including `upto` introduce.
fn state_vars(script: &RoleScript, upto: usize) -> Vec<Term> {
    let mut names: Vec<String> = script.parameters.clone();
    let mut out: Vec<Term> = script.parameters.iter().map(|p| Term::var(p.clone(), Sort::Agent)).collect();
    for s in script.steps.iter().take(upto + 1) {
        for a in s.term().vars() {
            if !names.contains(&a.name) {
                names.push(a.name.clone());
                out.push(Term::Atom(a));
            }
        }
    }
    out
}

pub fn export_tamarin(spec: &ProtocolSpec) -> Result<ExportArtifact, ExportError> {
    let mut enc = Encoder::new(spec);
    let scripts = project_roles(spec);
    let roles = spec.roles();
    let mut out = String::new();
    let _ = writeln!(out, "theory {}\nbegin\n", ident(&spec.name));
    let _ = writeln!(out, "builtins: symmetric-encryption, asymmetric-encryption, revealing-signing, hashing\n");

    // Role rules first so that every function in use is registered.
    let mut body = String::new();
    let mut modes: BTreeSet<ChannelMode> = BTreeSet::new();
    for role in &roles {
        let script = &scripts[role];
        let mut fresh_seen: BTreeSet<String> = BTreeSet::new();
        for (k, step) in script.steps.iter().enumerate() {
            let mut premises = Vec::new();
            let mut conclusions = Vec::new();
            if k > 0 {
                let prev = state_vars(script, k - 1)
                    .iter()
                    .map(|v| enc.term(v, script))
                    .collect::<Result<Vec<_>, _>>()?;
                premises.push(format!("St_{}_{}({})", ident(role), k, prev.join(", ")));
            }
            let me = format!("${role}");
            let peer = enc.term(&Term::var(step.peer(), Sort::Agent), script)?;
            match step {
                Step::Send { payload, mode, .. } => {
                    for a in payload.vars() {
                        if script.fresh.iter().any(|f| f.name == a.name) && fresh_seen.insert(a.name.clone()) {
                            premises.push(format!("Fr(~{})", a.name));
                        }
                    }
                    let m = enc.term(payload, script)?;
                    modes.insert(*mode);
                    match mode {
                        ChannelMode::Plain => conclusions.push(format!("Out({m})")),
                        ChannelMode::Authentic => {
                            conclusions.push(format!("Out({m})"));
                            conclusions.push(format!("!AuthCh({me}, {peer}, {m})"));
                        }
                        ChannelMode::Confidential => conclusions.push(format!("ConfCh({peer}, {m})")),
                        ChannelMode::Secure => conclusions.push(format!("!SecCh({me}, {peer}, {m})")),
                    }
                }
                Step::Receive { pattern, mode, .. } => {
                    let m = enc.term(pattern, script)?;
                    modes.insert(*mode);
                    premises.push(match mode {
                        ChannelMode::Plain => format!("In({m})"),
                        ChannelMode::Authentic => format!("!AuthCh({peer}, {me}, {m})"),
                        ChannelMode::Confidential => format!("ConfCh({me}, {m})"),
                        ChannelMode::Secure => format!("!SecCh({peer}, {me}, {m})"),
                    });
                }
            }
            let mut actions = Vec::new();
            for (_, c) in script.claims.iter().filter(|(at, _)| *at == k) {
                match c {
                    ClaimSpec::Running { goal, claimer, terms } => {
                        let who = enc.term(&Term::var(claimer.clone(), Sort::Agent), script)?;
                        let ts = Term::tuple(terms.iter().cloned()).expect("agreement terms");
                        actions.push(format!("Running_{goal}({me}, {who}, {})", enc.term(&ts, script)?));
                    }
                    ClaimSpec::Commit { goal, peer, terms } => {
                        let who = enc.term(&Term::var(peer.clone(), Sort::Agent), script)?;
                        let ts = Term::tuple(terms.iter().cloned()).expect("agreement terms");
                        actions.push(format!("Commit_{goal}({me}, {who}, {})", enc.term(&ts, script)?));
                    }
                    ClaimSpec::Secret { goal, term, parties } => {
                        actions.push(format!("Secret_{goal}({})", enc.term(term, script)?));
                        for p in parties {
                            actions.push(format!("Honest({})", enc.term(&Term::var(p.clone(), Sort::Agent), script)?));
                        }
                    }
                }
            }
            let next = state_vars(script, k).iter().map(|v| enc.term(v, script)).collect::<Result<Vec<_>, _>>()?;
            if k + 1 < script.steps.len() {
                conclusions.push(format!("St_{}_{}({})", ident(role), k + 1, next.join(", ")));
            }
            rule(&mut body, &format!("{}_{}", ident(role), k + 1), &premises, &actions, &conclusions);
        }
    }

    let decls = enc.function_decls();
    if !decls.is_empty() {
        let _ = writeln!(out, "functions: {}\n", decls.join(", "));
    }

    let pk_functions: Vec<(String, usize)> = enc
        .functions
        .iter()
        .filter(|(_, (s, _))| *s == Sort::PublicKey)
        .map(|(f, (_, n))| (f.clone(), *n))
        .collect();
    if !pk_functions.is_empty() {
        let outs: Vec<String> =
            pk_functions.iter().map(|(f, n)| format!("Out(pk(inv_{f}({})))", vars(*n).join(", "))).collect();
        rule(&mut out, "Register_keys", &[], &[], &outs);
    }
    for (f, (sort, n)) in enc.functions.clone() {
        let private_key = matches!(sort, Sort::PublicKey | Sort::SymmetricKey | Sort::PrivateKey) && !enc.public.contains(&f);
        if !private_key {
            continue;
        }
        let xs = vars(n);
        let reveals: Vec<String> = xs.iter().map(|x| format!("Reveal({x})")).collect();
        let key = if sort == Sort::PublicKey {
            format!("inv_{f}({})", xs.join(", "))
        } else {
            format!("{f}({})", xs.join(", "))
        };
        rule(&mut out, &format!("Reveal_{f}"), &[], &reveals, &[format!("Out({key})")]);
    }
    if modes.contains(&ChannelMode::Confidential) {
        rule(&mut out, "ConfCh_inject", &["In(<$B, m>)".into()], &[], &["ConfCh($B, m)".into()]);
    }
    out.push_str(&body);

    for mode in &modes {
        match mode {
            ChannelMode::Plain => {}
            ChannelMode::Authentic => enc.warn(
                "authentic channel encoded as the persistent fact family !AuthCh(sender, receiver, m), \
                 also published with Out"
                    .into(),
            ),
            ChannelMode::Confidential => enc.warn(
                "confidential channel encoded as the fact family ConfCh(receiver, m), \
                 with rule ConfCh_inject letting the adversary write to it"
                    .into(),
            ),
            ChannelMode::Secure => enc.warn(
                "secure channel encoded as the persistent fact family !SecCh(sender, receiver, m)".into(),
            ),
        }
    }

    for (g, goal) in spec.goals.iter().enumerate() {
        let _ = writeln!(out, "// {goal}");
        match goal {
            Goal::Secrecy { .. } => {
                let _ = writeln!(
                    out,
                    "lemma secret_{g}:\n  \"All s #i. Secret_{g}(s) @i ==>\n    \
                     not (Ex #j. K(s) @j) | (Ex X #r. Reveal(X) @r & Honest(X) @i)\"\n"
                );
            }
            Goal::WeakAgreement { .. } => {
                let _ = writeln!(
                    out,
                    "lemma agreement_{g}:\n  \"All b a t #i. Commit_{g}(b, a, t) @i ==>\n    \
                     (Ex #j. Running_{g}(a, b, t) @j)\n    \
                     | (Ex #r. Reveal(a) @r) | (Ex #r. Reveal(b) @r)\"\n"
                );
            }
            Goal::InjAgreement { .. } => {
                let _ = writeln!(
                    out,
                    "lemma injective_agreement_{g}:\n  \"All b a t #i. Commit_{g}(b, a, t) @i ==>\n    \
                     (Ex #j. Running_{g}(a, b, t) @j & j < i\n      \
                     & not (Ex b2 a2 #i2. Commit_{g}(b2, a2, t) @i2 & not (#i2 = #i)))\n    \
                     | (Ex #r. Reveal(a) @r) | (Ex #r. Reveal(b) @r)\"\n"
                );
            }
        }
    }
    if spec.goals.is_empty() {
        enc.warn("no lemmas emitted".into());
    }
    out.push_str("end\n");
    Ok(ExportArtifact { format: ExportFormat::TamarinTheory, text: out, warnings: enc.warnings })
}
