//! Every shipped protocol description against both scenarios, with concrete
//! replay of whatever the search reports.

use bioauth_core::dolev_yao::search::TraceStep;
use bioauth_core::dolev_yao::{
    corpus_spec, replay_concretely, search_attacks, ProtocolSpec, Scenario, SearchConfig, Term,
    Violation, CORPUS,
};
use bioauth_core::primitives::{Rng, SystemParams};

fn scenarios(spec: &ProtocolSpec) -> [Scenario; 2] {
    [
        Scenario::two_session_replay(),
        Scenario::three_session_mitm(spec),
    ]
}

#[test]
fn proposed_is_safe_in_both_scenarios() {
    let spec = corpus_spec("proposed").unwrap();
    for s in scenarios(&spec) {
        let r = search_attacks(&spec, &s, SearchConfig::default()).unwrap();
        assert!(r.trace.is_none(), "{}: {:?}", s.name, r.trace);
        assert!(!r.incomplete, "{}", s.name);
        assert!(r.states > 1);
    }
}

#[test]
fn every_trace_replays_concretely() {
    let params = SystemParams::default();
    for (name, _) in CORPUS {
        let spec = corpus_spec(name).unwrap();
        for s in scenarios(&spec) {
            let r = search_attacks(&spec, &s, SearchConfig::default()).unwrap();
            if let Some(t) = &r.trace {
                let c = replay_concretely(&spec, &s, t, &params, &mut Rng::from_seed(11)).unwrap();
                assert!(c.reproduced, "{name}/{}: {c:?}", s.name);
            }
        }
    }
}

#[test]
fn baseline_attacks_are_rediscovered() {
    let rhls = corpus_spec("rhls").unwrap();
    let t = search_attacks(
        &rhls,
        &Scenario::two_session_replay(),
        SearchConfig::default(),
    )
    .unwrap()
    .trace
    .expect("rhls replay");
    // The second acceptance reuses the first session's nonce verbatim.
    let Violation::Agreement { values, .. } = &t.violation else {
        panic!("expected agreement violation");
    };
    assert!(matches!(&values[0], Term::Nonce { session: 1, .. }));

    let ch = corpus_spec("ch").unwrap();
    let t = search_attacks(
        &ch,
        &Scenario::two_session_replay(),
        SearchConfig::default(),
    )
    .unwrap()
    .trace
    .expect("ch algebraic replay");
    let forged = t.steps.iter().any(|s| {
        matches!(s, TraceStep::Receive { honest: false, fields, .. }
            if matches!(&fields[0], Term::Xor(ts) if ts.len() == 3))
    });
    assert!(forged, "{t:#?}");
}

#[test]
fn depth_zero_search_still_terminates() {
    let spec = corpus_spec("proposed").unwrap();
    let r = search_attacks(
        &spec,
        &Scenario::two_session_replay(),
        SearchConfig {
            depth: 0,
            max_states: 10_000,
        },
    )
    .unwrap();
    assert!(r.trace.is_none());
}
