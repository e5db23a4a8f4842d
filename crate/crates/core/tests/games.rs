//! Attack games end to end across the registry.

use bioauth_core::adversary::{
    ch_algebraic_replay, desync_test, distinguish, dos_flood_test, mitm_relay, replay_attack,
    trace_game, HONEST_CAPTURE,
};
use bioauth_core::channel::Channel;
use bioauth_core::primitives::{Rng, SystemParams};
use bioauth_core::registry::{deployment, ProtocolKey};
use proptest::prelude::*;
use rand::RngCore;

fn params() -> SystemParams {
    SystemParams::default()
}

#[test]
fn replay_matrix() {
    let expect = [
        (ProtocolKey::Proposed, false),
        (ProtocolKey::Rhls, true),
        (ProtocolKey::Ch, false),
        (ProtocolKey::ClearId, true),
    ];
    for (key, succeeds) in expect {
        for seed in 0..5 {
            let o = replay_attack(key, &params(), &mut Rng::from_seed(seed)).unwrap();
            assert_eq!(o.succeeded, succeeds, "{key} seed {seed}");
        }
    }
}

#[test]
fn algebraic_replay_beats_ch_only() {
    for seed in 0..5 {
        assert!(
            ch_algebraic_replay(&params(), &mut Rng::from_seed(seed))
                .unwrap()
                .succeeded
        );
        let p = bioauth_core::adversary::algebraic_replay(
            ProtocolKey::Proposed,
            &params(),
            &mut Rng::from_seed(seed),
        )
        .unwrap();
        assert!(!p.succeeded);
    }
}

#[test]
fn proposed_resists_every_mitm_strategy() {
    for seed in 0..5 {
        let o = mitm_relay(ProtocolKey::Proposed, &params(), &mut Rng::from_seed(seed)).unwrap();
        assert!(!o.succeeded, "{}", o.detail);
    }
}

#[test]
fn trace_game_calibration() {
    let clear = trace_game(
        ProtocolKey::ClearId,
        1000,
        &params(),
        &mut Rng::from_seed(1),
    )
    .unwrap();
    assert!(clear.advantage >= 0.95);
    let proposed = trace_game(
        ProtocolKey::Proposed,
        4000,
        &params(),
        &mut Rng::from_seed(1),
    )
    .unwrap();
    assert!(proposed.advantage <= 0.05, "{proposed:?}");
}

#[test]
fn trace_game_reproducible() {
    let a = trace_game(
        ProtocolKey::Proposed,
        500,
        &params(),
        &mut Rng::from_seed(8),
    )
    .unwrap();
    let b = trace_game(
        ProtocolKey::Proposed,
        500,
        &params(),
        &mut Rng::from_seed(8),
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn desync_and_dos_hold_everywhere() {
    for key in ProtocolKey::EXECUTABLE {
        let points = deployment(key, &params()).unwrap().interruption_points();
        assert!(
            desync_test(key, &points, &params(), &mut Rng::from_seed(2))
                .unwrap()
                .passed,
            "{key}"
        );
        let dos = dos_flood_test(key, 500, &params(), &mut Rng::from_seed(2)).unwrap();
        assert!(dos.passed && dos.state_identical, "{key}: {dos:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn honest_sessions_always_complete(seed in any::<u64>(), key_idx in 0usize..4) {
        let key = ProtocolKey::EXECUTABLE[key_idx];
        let p = params();
        let mut rng = Rng::from_seed(seed);
        let mut d = deployment(key, &p).unwrap();
        for _ in 0..3 {
            let s = rng.next_u64();
            d.register(s, &mut rng).unwrap();
        }
        let mut ch = Channel::new(key.name(), seed);
        let out = d.run_session(Some((seed % 3) as usize), &HONEST_CAPTURE, &mut ch, &mut rng).unwrap();
        prop_assert!(d.session_complete(&out));
        prop_assert!(ch.agreement_violations().is_empty());
    }

    #[test]
    fn distinguisher_is_symmetric_in_sessions(seed in any::<u64>()) {
        let p = params();
        let mut rng = Rng::from_seed(seed);
        let mut d = deployment(ProtocolKey::Proposed, &p).unwrap();
        for _ in 0..2 {
            let s = rng.next_u64();
            d.register(s, &mut rng).unwrap();
        }
        let mut ch = Channel::new("proposed", seed);
        d.run_session(Some(0), &HONEST_CAPTURE, &mut ch, &mut rng).unwrap();
        d.run_session(Some(1), &HONEST_CAPTURE, &mut ch, &mut rng).unwrap();
        prop_assert_eq!(distinguish(ch.observe(), 1, 2), distinguish(ch.observe(), 2, 1));
    }
}
