use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::envs::{Env, EnvId, EnvParams};

fn press_state(p: [f64; 2]) -> (EnvParams, EnvState) {
    let params = EnvParams::default();
    let (env, _) = Env::reset(EnvId::PressButton, &params, 0);
    let mut s = env.state().clone();
    s.p = p;
    (params, s)
}

fn oracle_decide(mode: InterventionMode, env: &EnvParams, s: &EnvState, h: &EpisodeHistory) -> InterventionDecision {
    decide(mode, &OracleParams::default(), env, s, &[0.0, 0.0], h, None)
}

#[test]
fn no_trigger_in_corridor() {
    let (env, s) = press_state([0.5, 0.5]);
    let h = EpisodeHistory::new(&env, &s);
    let d = oracle_decide(InterventionMode::Oracle, &env, &s, &h);
    assert_eq!(d, InterventionDecision::inactive());
}

#[test]
fn unsafe_entry_overrides_toward_waypoint() {
    let (env, s) = press_state([0.42, 0.1]);
    assert!(envs::is_unsafe(&env, &s));
    let h = EpisodeHistory::new(&env, &s);
    let d = oracle_decide(InterventionMode::Oracle, &env, &s, &h);
    assert!(d.active);
    assert_eq!(d.trigger_reason, TriggerReason::UnsafeEntry);
    let a = d.override_action.unwrap();
    let w = envs::sub(envs::reference_waypoint(&env, &s), s.p);
    assert!(a[0] * w[0] + a[1] * w[1] > 0.0);
}

#[test]
fn safe_region_override_heads_for_safe_pose() {
    let (env, s) = press_state([0.42, 0.1]);
    let h = EpisodeHistory::new(&env, &s);
    let d = oracle_decide(InterventionMode::OracleSafeRegion, &env, &s, &h);
    assert_eq!(d.trigger_reason, TriggerReason::UnsafeEntry);
    let a = d.override_action.unwrap();
    let delta = envs::sub(env.press.safe_pose, s.p);
    let n = envs::norm(delta);
    assert!((a[0] - delta[0] / n).abs() < 1e-12);
    assert!((a[1] - delta[1] / n).abs() < 1e-12);
}

#[test]
fn stall_trigger_fires_after_window() {
    let (env, s) = press_state([0.2, 0.7]);
    let oracle = OracleParams::default();
    let mut h = EpisodeHistory::new(&env, &s);
    let idle = InterventionDecision::inactive();
    for step in 0..oracle.stall_steps {
        let d = decide(InterventionMode::Oracle, &oracle, &env, &s, &[0.0, 0.0], &h, None);
        assert!(!d.active, "fired early at {step}");
        h.observe(InterventionMode::Oracle, &oracle, &env, &idle, &s);
    }
    let d = decide(InterventionMode::Oracle, &oracle, &env, &s, &[0.0, 0.0], &h, None);
    assert_eq!(d.trigger_reason, TriggerReason::Stall);
}

#[test]
fn latched_intervention_releases_after_corridor_streak() {
    let (env, unsafe_s) = press_state([0.42, 0.1]);
    let oracle = OracleParams::default();
    let mut h = EpisodeHistory::new(&env, &unsafe_s);
    let d = decide(InterventionMode::Oracle, &oracle, &env, &unsafe_s, &[0.0, 0.0], &h, None);
    h.observe(InterventionMode::Oracle, &oracle, &env, &d, &unsafe_s);
    assert_eq!(h.latched(), Some(TriggerReason::UnsafeEntry));

    let (_, safe_high) = press_state([0.2, 0.7]);
    // outside the corridor but safe: still latched
    let d = decide(InterventionMode::Oracle, &oracle, &env, &safe_high, &[0.0, 0.0], &h, None);
    assert!(d.active);
    h.observe(InterventionMode::Oracle, &oracle, &env, &d, &safe_high);

    let (_, corridor) = press_state([0.5, 0.5]);
    for _ in 0..oracle.release_steps {
        let d = decide(InterventionMode::Oracle, &oracle, &env, &corridor, &[0.0, 0.0], &h, None);
        assert!(d.active);
        h.observe(InterventionMode::Oracle, &oracle, &env, &d, &corridor);
    }
    assert_eq!(h.latched(), None);
    assert!(!decide(InterventionMode::Oracle, &oracle, &env, &corridor, &[0.0, 0.0], &h, None).active);
}

#[test]
fn human_bridge_uses_pending_override_once() {
    let (env, s) = press_state([0.5, 0.5]);
    let h = EpisodeHistory::new(&env, &s);
    let mb = OverrideMailbox::new();
    let oracle = OracleParams::default();
    let d = decide(InterventionMode::HumanBridge, &oracle, &env, &s, &[0.0, 0.0], &h, Some(&mb));
    assert!(!d.active);
    mb.post([0.0, -1.0]);
    let d = decide(InterventionMode::HumanBridge, &oracle, &env, &s, &[0.0, 0.0], &h, Some(&mb));
    assert_eq!(d.override_action, Some([0.0, -1.0]));
    assert_eq!(d.trigger_reason, TriggerReason::Human);
    assert!(!decide(InterventionMode::HumanBridge, &oracle, &env, &s, &[0.0, 0.0], &h, Some(&mb)).active);
}

#[test]
fn none_mode_never_fires() {
    let (env, s) = press_state([0.42, 0.1]);
    let h = EpisodeHistory::new(&env, &s);
    assert!(!oracle_decide(InterventionMode::None, &env, &s, &h).active);
}

#[test]
fn unknown_mode_is_rejected() {
    assert!("human".parse::<InterventionMode>().is_err());
    for m in [
        InterventionMode::Oracle,
        InterventionMode::OracleSafeRegion,
        InterventionMode::HumanBridge,
        InterventionMode::None,
    ] {
        assert_eq!(m.as_str().parse::<InterventionMode>().unwrap(), m);
    }
}

#[test]
fn preference_tuple_records_both_actions() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = make_preference_tuple(&[0.1], &[0.0, -1.0], Some(&[1.0, 0.0]), 0.0, false, &[0.2], &mut rng);
    assert_eq!(t.a_p, vec![0.0, -1.0]);
    assert_eq!(t.a_w, vec![1.0, 0.0]);

    let same = make_preference_tuple(&[0.1], &[0.3, 0.3], Some(&[0.3, 0.3]), 1.0, true, &[0.2], &mut rng);
    assert_eq!(same.a_p, same.a_w);
}

#[test]
fn missing_proposal_draws_seeded_uniform_weak_action() {
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        make_preference_tuple(&[0.0], &[0.0, 1.0], None, 0.0, false, &[0.0], &mut rng).a_w
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5), draw(6));
    for seed in 0..100 {
        let a = draw(seed);
        assert_eq!(a.len(), 2);
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn oracle_returns_unsafe_press_states_to_corridor() {
    let params = EnvParams::default();
    let oracle = OracleParams::default();
    let press = &params.press;
    let b = press.button;
    let outer = press.width / 2.0 + press.band_width;
    let mut checked = 0;
    for ix in 0..=20 {
        for iy in 0..=10 {
            let x = b[0] - outer + 1e-3 + (2.0 * outer - 2e-3) * ix as f64 / 20.0;
            let y = 1e-3 + (b[1] - 2e-3) * iy as f64 / 10.0;
            let (mut env, _) = Env::reset(EnvId::PressButton, &params, 0);
            env.state.p = [x, y];
            assert!(envs::is_unsafe(&params, env.state()));
            let mut steps = 0;
            while !envs::in_safe_corridor(&params, env.state()) {
                let a = oracle_policy(&oracle, &params, env.state());
                env.step(&a).unwrap();
                steps += 1;
                assert!(steps <= 30, "start ({x:.3},{y:.3}) not back after 30 steps");
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 21 * 11);
}

#[test]
fn scripted_oracle_solves_both_tasks() {
    let params = EnvParams::default();
    let oracle = OracleParams::default();
    for id in [EnvId::PressButton, EnvId::PushBall] {
        for seed in 0..100 {
            let (mut env, _) = Env::reset(id, &params, seed);
            loop {
                let a = oracle_policy(&oracle, &params, env.state());
                let r = env.step(&a).unwrap();
                assert!(!r.info.unsafe_contact, "{id} seed {seed} touched the unsafe region");
                if r.done || r.info.truncated {
                    assert!(r.info.success, "{id} seed {seed} timed out");
                    break;
                }
            }
        }
    }
}

fn arb_state() -> impl Strategy<Value = (EnvId, u64, [f64; 2])> {
    (
        prop_oneof![Just(EnvId::PressButton), Just(EnvId::PushBall)],
        0u64..500,
        (0.0..=1.0f64, 0.0..=1.0f64),
    )
        .prop_map(|(id, seed, (x, y))| (id, seed, [x, y]))
}

proptest! {
    #[test]
    fn safe_region_action_never_approaches_unsafe_region((id, seed, p) in arb_state()) {
        let params = EnvParams::default();
        let (env, _) = Env::reset(id, &params, seed);
        let mut s = env.state().clone();
        s.p = p;
        let a = safe_region_action(&OracleParams::default(), &params, &s);
        prop_assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        let next = crate::envs::clamp_unit([p[0] + params.a_max * a[0], p[1] + params.a_max * a[1]]);
        if let Some((before, _)) = envs::unsafe_distance(&params, &s, p) {
            let (after, _) = envs::unsafe_distance(&params, &s, next).unwrap();
            prop_assert!(after >= before - 1e-12, "{before} -> {after}");
        }
    }

    #[test]
    fn decisions_respect_activity_invariant((id, seed, p) in arb_state(), stalled in any::<bool>()) {
        let params = EnvParams::default();
        let oracle = OracleParams::default();
        let (env, _) = Env::reset(id, &params, seed);
        let mut s = env.state().clone();
        s.p = p;
        let mut h = EpisodeHistory::new(&params, &s);
        if stalled {
            for _ in 0..oracle.stall_steps {
                h.observe(InterventionMode::Oracle, &oracle, &params, &InterventionDecision::inactive(), &s);
            }
        }
        for mode in [InterventionMode::Oracle, InterventionMode::OracleSafeRegion, InterventionMode::None] {
            let d = decide(mode, &oracle, &params, &s, &[0.0, 0.0], &h, None);
            prop_assert_eq!(d.active, d.override_action.is_some());
            prop_assert_eq!(d.active, d.trigger_reason != TriggerReason::None);
            if let Some(a) = d.override_action {
                prop_assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }
}
