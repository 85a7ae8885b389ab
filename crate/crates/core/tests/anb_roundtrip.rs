mod support;

use apv_core::anb::{parse_protocol, pretty_print};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::spec_gen::random_spec;

#[test]
fn corpus_roundtrips() {
    let dir = format!("{}/../../corpus", env!("CARGO_MANIFEST_DIR"));
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "anb") {
            let spec = parse_protocol(&std::fs::read_to_string(&path).unwrap()).unwrap();
            let printed = pretty_print(&spec);
            let again = parse_protocol(&printed).unwrap();
            assert_eq!(again, spec, "{}", path.display());
            assert_eq!(pretty_print(&again), printed);
            n += 1;
        }
    }
    assert!(n >= 6);
}

#[test]
fn random_specs_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..200 {
        let src = random_spec(&mut rng, i);
        let spec = parse_protocol(&src).unwrap_or_else(|d| panic!("{src}\n{d:?}"));
        let printed = pretty_print(&spec);
        let again = parse_protocol(&printed).unwrap_or_else(|d| panic!("{printed}\n{d:?}"));
        assert_eq!(again, spec, "{src}");
        assert_eq!(pretty_print(&again), printed);
    }
}
