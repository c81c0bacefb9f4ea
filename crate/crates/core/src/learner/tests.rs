use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nets::{finite_difference_check, Head, Objective, ParamSet};

const OBS: usize = 3;
const ACT: usize = 2;

fn small_config(mode: Mode) -> LearnerConfig {
    LearnerConfig {
        mode,
        hidden: vec![8],
        batch_n: 8,
        seed: 11,
        ..LearnerConfig::default()
    }
}

fn random_transition(rng: &mut ChaCha8Rng) -> Transition {
    let success = rng.gen_bool(0.1);
    Transition {
        s: (0..OBS).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        a: (0..ACT).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        r: if success { 1.0 } else { 0.0 },
        d: success,
        s_next: (0..OBS).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn random_tuple(rng: &mut ChaCha8Rng) -> PreferenceTuple {
    let t = random_transition(rng);
    PreferenceTuple {
        s: t.s,
        a_p: t.a,
        a_w: (0..ACT).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        r: t.r,
        d: t.d,
        s_next: t.s_next,
    }
}

fn fixture_buffers(seed: u64) -> BufferPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pair = BufferPair::new(1000, 1000).unwrap();
    for _ in 0..40 {
        pair.online.push(random_transition(&mut rng));
        pair.pref.push(random_tuple(&mut rng));
    }
    pair
}

/// Single linear layer with the given flat values.
fn linear(inputs: usize, outputs: usize, head: Head, values: Vec<f64>) -> ParamSet {
    ParamSet::init(&[inputs, outputs], head, 0)
        .unwrap()
        .with_values_unversioned(values)
}

fn bits(p: &ParamSet) -> Vec<u64> {
    p.values().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn terminal_target_is_the_reward() {
    let cfg = small_config(Mode::Ohprl);
    let nets = Nets::init(&cfg, OBS, ACT).unwrap();
    let y = critic_target(
        &nets.policy,
        &nets.critic_targets,
        &[0.3, -0.2, 0.9],
        &[1.0],
        &[1.0],
        0.99,
        0.1,
        Reduce::Min,
        &[0.4, -1.2],
    )
    .unwrap();
    assert_eq!(y, vec![1.0]);
}

#[test]
fn target_substitution_example() {
    // constant critic 2.0; policy with zero mean and log_std chosen so the
    // 1-D log-probability at zero noise is exactly -1
    let half_log_two_pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let ls = 1.0 - half_log_two_pi - (1.0 + crate::nets::TANH_EPS).ln();
    let policy = linear(1, 2, Head::Policy, vec![0.0, 0.0, 0.0, ls]);
    let out = crate::nets::policy_sample(&policy, &[0.7], &[0.0]).unwrap();
    assert!((out.log_prob + 1.0).abs() < 1e-15);
    let critic = linear(2, 1, Head::Critic, vec![0.0, 0.0, 2.0]);
    let y = critic_target(&policy, &[critic], &[0.7], &[0.0], &[0.0], 0.99, 0.1, Reduce::First, &[0.0]).unwrap();
    assert!((y[0] - 2.079).abs() < 1e-12, "{}", y[0]);
}

#[test]
fn target_matches_per_item_reevaluation() {
    let cfg = small_config(Mode::Ohprl);
    let nets = Nets::init(&cfg, OBS, ACT).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let items: Vec<Transition> = (0..6).map(|_| random_transition(&mut rng)).collect();
    let b = TransitionBatch::new(&items).unwrap();
    let noise: Vec<f64> = (0..6 * ACT).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let y = critic_target(&nets.policy, &nets.critic_targets, &b.s_next, &b.r, &b.d, 0.99, 0.1, Reduce::Min, &noise)
        .unwrap();
    for (k, t) in items.iter().enumerate() {
        let out = crate::nets::policy_sample(&nets.policy, &t.s_next, &noise[k * ACT..(k + 1) * ACT]).unwrap();
        let q = crate::nets::q_value(&nets.critic_targets, &t.s_next, &out.action, Reduce::Min).unwrap();
        let d = if t.d { 1.0 } else { 0.0 };
        let expected = t.r + 0.99 * (1.0 - d) * (q - 0.1 * out.log_prob);
        assert!((y[k] - expected).abs() < 1e-12);
    }
}

#[test]
fn critic_loss_examples() {
    let critic = linear(2, 1, Head::Critic, vec![0.0, 0.0, 0.0]);
    let loss = CriticLoss { s: &[0.1], a: &[0.2], y: &[2.0] };
    assert_eq!(loss.value(&[&critic]).unwrap(), 4.0);

    let fit = linear(2, 1, Head::Critic, vec![1.0, -1.0, 0.5]);
    let s = [0.1, 0.4];
    let a = [0.3, -0.2];
    let y: Vec<f64> = (0..2)
        .map(|b| crate::nets::q_value(&[fit.clone()], &s[b..b + 1], &a[b..b + 1], Reduce::First).unwrap())
        .collect();
    let loss = CriticLoss { s: &s, a: &a, y: &y };
    let (v, g) = loss.value_and_grad(&[&fit]).unwrap();
    assert_eq!(v, 0.0);
    assert!(g[0].iter().all(|&x| x == 0.0));
}

#[test]
fn actor_gradient_vanishes_for_flat_critic_without_entropy() {
    let cfg = small_config(Mode::Ohprl);
    let nets = Nets::init(&cfg, OBS, ACT).unwrap();
    let flat = linear(OBS + ACT, 1, Head::Critic, vec![0.3, -0.1, 0.2, 0.0, 0.0, 1.5]);
    let critics = [flat];
    let loss = ActorLoss {
        s: &[0.1, 0.2, 0.3, -0.4, 0.5, 0.6],
        n: 2,
        noise: &[0.3, -0.7, 1.1, 0.2],
        critics: &critics,
        alpha: 0.0,
        reduce: Reduce::First,
    };
    let (_, g) = loss.value_and_grad(&[&nets.policy]).unwrap();
    assert!(g[0].iter().all(|&x| x == 0.0));
}

#[test]
fn actor_descent_moves_mean_toward_critic_optimum() {
    // linear policy, Q(s, a) = -||a - a*||^2 applied through the policy's
    // reverse pass: one small step must reduce ||tanh(mean) - a*||
    let a_star = [0.4, -0.6];
    let policy = linear(1, 4, Head::Policy, vec![0.0, 0.0, 0.0, 0.0, 0.1, -0.2, -1.0, -1.0]);
    let s = [1.0];
    let pb = crate::nets::sample_batch(&policy, &s, 1, &[0.0, 0.0]).unwrap();
    let d_actions: Vec<f64> = (0..2).map(|j| 2.0 * (pb.actions[j] - a_star[j])).collect();
    let mut g = policy.zeros_like();
    pb.backward(&policy, &d_actions, &[0.0], &mut g);
    let stepped: Vec<f64> = policy.values().iter().zip(&g).map(|(v, g)| v - 0.05 * g).collect();
    let stepped = policy.with_values_unversioned(stepped);
    let before = crate::nets::deterministic_action(&policy, &s).unwrap();
    let after = crate::nets::deterministic_action(&stepped, &s).unwrap();
    let err = |a: &[f64]| ((a[0] - a_star[0]).powi(2) + (a[1] - a_star[1]).powi(2)).sqrt();
    assert!(err(&after) < err(&before));
    // the mean moves toward arctanh(a*) coordinate-wise
    let m_before = [0.1, -0.2];
    let m_after = crate::nets::forward(&stepped, &s).unwrap();
    for j in 0..2 {
        let target = a_star[j].atanh();
        assert!((m_after[j] - target).abs() < (m_before[j] - target).abs());
    }
}

#[test]
fn advantage_examples() {
    let policy = linear(1, 2, Head::Policy, vec![0.0, 0.0, -0.5, -1.0]);
    let t = 0.5f64.tanh();
    let flat = linear(2, 1, Head::Critic, vec![0.0, 0.0, 0.7]);
    let a = advantage(&policy, &[flat], &[0.2], &[0.9], Reduce::First, &[0.0]).unwrap();
    assert_eq!(a, vec![0.0]);

    let sloped = linear(2, 1, Head::Critic, vec![0.0, 1.0 / t, 0.0]);
    let a = advantage(&policy, &[sloped], &[0.2], &[t], Reduce::First, &[0.0]).unwrap();
    assert!((a[0] - 2.0).abs() < 1e-12);
}

#[test]
fn gate_target_examples() {
    assert_eq!(gate_target(0.0), 0.5);
    assert!((gate_target(3f64.ln()) - 0.75).abs() < 1e-12);
    assert!((gate_target(-(3f64.ln())) - 0.25).abs() < 1e-12);
}

#[test]
fn gate_loss_examples() {
    let zero_gate = linear(OBS, 1, Head::Gate, vec![0.0; OBS + 1]);
    let s = [0.1, 0.2, 0.3, 0.9, -0.8, 0.7];
    let online = OnlineGateLoss { s: &s, n: 2 };
    assert!((online.value(&[&zero_gate]).unwrap() - 0.25).abs() < 1e-12);

    let fit = PrefGateLoss { s: &s, targets: &[0.5, 0.5] };
    assert_eq!(fit.value(&[&zero_gate]).unwrap(), 0.0);
    let single = PrefGateLoss { s: &s[..3], targets: &[0.75] };
    assert!((single.value(&[&zero_gate]).unwrap() - 0.0625).abs() < 1e-12);
}

#[test]
fn preference_term_examples() {
    assert!((preference_term(0.5, &[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]) + 0.5).abs() < 1e-12);
    assert_eq!(preference_term(0.9, &[0.0, 0.0], &[1.0, 0.0], &[-1.0, 0.0]), 0.0);

    let cfg = small_config(Mode::Ohprl);
    let nets = Nets::init(&cfg, OBS, ACT).unwrap();
    let loss = PrefActorLoss {
        s: &[0.1, 0.2, 0.3],
        a_p: &[0.3, -0.3],
        a_w: &[0.3, -0.3],
        betas: &[0.8],
        noise: &[0.5, 0.5],
        weight: 1.0,
    };
    let (v, g) = loss.value_and_grad(&[&nets.policy]).unwrap();
    assert_eq!(v, 0.0);
    assert!(g[0].iter().all(|&x| x == 0.0));
}

#[test]
fn gate_regression_fits_fixed_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let s: Vec<f64> = (0..16 * OBS).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let targets: Vec<f64> = (0..16).map(|_| rng.gen_range(0.1..0.9)).collect();
    let mut gate = ParamSet::init(&[OBS, 16, 1], Head::Gate, 3).unwrap();
    let mut opt = Adam::new(1e-2, gate.len());
    let loss = PrefGateLoss { s: &s, targets: &targets };
    for _ in 0..3000 {
        let (_, g) = loss.value_and_grad(&[&gate]).unwrap();
        gate = opt.step(&gate, &g[0], "test").unwrap();
    }
    assert!(loss.value(&[&gate]).unwrap() < 1e-3);
}

fn check(obj: &dyn Objective, params: &[&ParamSet]) {
    let report = finite_difference_check(obj, params, 1e-5).unwrap();
    assert!(report.max_relative_error <= 1e-4, "{report:?}");
}

#[test]
fn imitation_and_bc_gradients_match_finite_differences() {
    let cfg = small_config(Mode::SilRi);
    let nets = Nets::init(&cfg, OBS, ACT).unwrap();
    let s = [0.1, 0.2, 0.3, -0.4, 0.5, -0.6];
    let a_p = [0.2, -0.1, -0.7, 0.4];
    let noise = [0.3, -0.2, 1.0, 0.6];
    check(&ImitationLoss { s: &s, a_p: &a_p, noise: &noise, n: 2, weight: 0.7 }, &[&nets.policy]);
    check(&BcLoss { s: &s, a_p: &a_p, n: 2 }, &[&nets.policy]);
}

#[test]
fn ablations_outside_ohprl_are_rejected() {
    let cfg = LearnerConfig {
        ablation: Ablation::FixedBeta,
        ..small_config(Mode::Bc)
    };
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    assert!("without_rl".parse::<Ablation>().is_ok());
    assert!("dagger".parse::<Mode>().is_err());
}

#[test]
fn replay_only_step_runs_base_update_only() {
    let buffers = fixture_buffers(1);
    let mut learner = Learner::new(small_config(Mode::ReplayOnly), OBS, ACT).unwrap();
    let r = learner.step(&buffers).unwrap();
    assert!(r.loss_critic.is_some() && r.loss_actor.is_some());
    assert_eq!(
        (r.loss_online_gate, r.loss_pref_gate, r.loss_pref_actor),
        (None, None, None)
    );
    assert_eq!(r.gate_version, None);
    assert_eq!(r.policy_version, 1);
}

#[test]
fn fixed_beta_uses_the_constant_in_the_preference_step() {
    let buffers = fixture_buffers(2);
    let cfg = LearnerConfig {
        ablation: Ablation::FixedBeta,
        ..small_config(Mode::Ohprl)
    };
    let mut learner = Learner::new(cfg, OBS, ACT).unwrap();
    let r = learner.step(&buffers).unwrap();
    assert_eq!(r.pref_actor_betas.len(), 8);
    assert!(r.pref_actor_betas.iter().all(|&b| b == 0.5));
    assert_eq!(r.gate_version, Some(0));
    assert!(r.loss_pref_gate.is_none());
}

#[test]
fn full_step_advances_each_owner_once_per_stage() {
    let buffers = fixture_buffers(3);
    let mut learner = Learner::new(small_config(Mode::Ohprl), OBS, ACT).unwrap();
    let r = learner.step(&buffers).unwrap();
    // policy: base actor step + preference actor step; gate: online + preference
    assert_eq!(r.policy_version, 2);
    assert_eq!(r.critic_version, 1);
    assert_eq!(r.gate_version, Some(2));
    assert_eq!(learner.nets().critic_targets[0].version(), 1);
    for v in [
        r.loss_critic,
        r.loss_actor,
        r.loss_online_gate,
        r.loss_pref_gate,
        r.loss_pref_actor,
        r.mean_advantage,
    ] {
        assert!(v.unwrap().is_finite());
    }
    for b in [r.mean_beta_online.unwrap(), r.mean_beta_pref.unwrap()] {
        assert!(b > 0.0 && b < 1.0);
    }
}

#[test]
fn without_rl_keeps_critic_but_skips_base_actor() {
    let buffers = fixture_buffers(4);
    let cfg = LearnerConfig {
        ablation: Ablation::WithoutRl,
        ..small_config(Mode::Ohprl)
    };
    let mut learner = Learner::new(cfg, OBS, ACT).unwrap();
    let r = learner.step(&buffers).unwrap();
    assert!(r.loss_critic.is_some() && r.loss_actor.is_none());
    assert!(r.loss_pref_actor.is_some());
    assert_eq!(r.policy_version, 1);
}

#[test]
fn off_target_regresses_gate_to_one_half() {
    let buffers = fixture_buffers(5);
    let cfg = LearnerConfig {
        ablation: Ablation::OffTarget,
        ..small_config(Mode::Ohprl)
    };
    let mut learner = Learner::new(cfg, OBS, ACT).unwrap();
    let r = learner.step(&buffers).unwrap();
    assert!(r.mean_advantage.is_none());
    assert!(r.loss_pref_gate.is_some());
}

#[test]
fn preference_stages_leave_critics_untouched() {
    let buffers = fixture_buffers(6);
    let mut full = Learner::new(small_config(Mode::Ohprl), OBS, ACT).unwrap();
    let mut base = Learner::new(small_config(Mode::ReplayOnly), OBS, ACT).unwrap();
    full.step(&buffers).unwrap();
    base.step(&buffers).unwrap();
    for (a, b) in full.nets().critics.iter().zip(&base.nets().critics) {
        assert_eq!(bits(a), bits(b));
    }
    for (a, b) in full.nets().critic_targets.iter().zip(&base.nets().critic_targets) {
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn zero_preference_weight_reduces_to_replay_only() {
    let buffers = fixture_buffers(7);
    let cfg = LearnerConfig {
        lambda_pref: 0.0,
        ..small_config(Mode::Ohprl)
    };
    let mut full = Learner::new(cfg, OBS, ACT).unwrap();
    let mut base = Learner::new(small_config(Mode::ReplayOnly), OBS, ACT).unwrap();
    for _ in 0..25 {
        full.step(&buffers).unwrap();
        base.step(&buffers).unwrap();
        assert_eq!(bits(&full.nets().policy), bits(&base.nets().policy));
        for (a, b) in full.nets().critics.iter().zip(&base.nets().critics) {
            assert_eq!(bits(a), bits(b));
        }
    }
}

#[test]
fn weak_actions_only_reach_the_preference_actor_step() {
    let buffers = fixture_buffers(8);
    let mut perturbed = buffers.clone();
    let mut tuples: Vec<PreferenceTuple> = perturbed.pref.iter().cloned().collect();
    for t in &mut tuples {
        t.a_w = vec![-t.a_w[0], 0.5 * t.a_w[1] + 0.1];
    }
    perturbed.pref = crate::replay::RingBuffer::new(1000).unwrap();
    for t in tuples {
        perturbed.pref.push(t);
    }
    let mut a = Learner::new(small_config(Mode::Ohprl), OBS, ACT).unwrap();
    let mut b = Learner::new(small_config(Mode::Ohprl), OBS, ACT).unwrap();
    let ra = a.step(&buffers).unwrap();
    let rb = b.step(&perturbed).unwrap();
    let key = |r: &UpdateReport| {
        [r.loss_critic, r.loss_actor, r.loss_online_gate, r.loss_pref_gate, r.mean_advantage]
            .map(|v| v.unwrap().to_bits())
    };
    assert_eq!(key(&ra), key(&rb));
    assert_eq!(bits(a.nets().gate.as_ref().unwrap()), bits(b.nets().gate.as_ref().unwrap()));
    assert_ne!(ra.loss_pref_actor, rb.loss_pref_actor);
}

#[test]
fn bc_mode_fits_preferred_actions() {
    let mut buffers = fixture_buffers(10);
    let tuples: Vec<PreferenceTuple> = buffers
        .pref
        .iter()
        .map(|t| PreferenceTuple {
            a_p: vec![0.5 * t.s[0], -0.5 * t.s[1]],
            ..t.clone()
        })
        .collect();
    buffers.pref = crate::replay::RingBuffer::new(1000).unwrap();
    for t in tuples {
        buffers.pref.push(t);
    }
    let cfg = LearnerConfig {
        lr_phi: 1e-2,
        batch_n: 40,
        ..small_config(Mode::Bc)
    };
    let mut learner = Learner::new(cfg, OBS, ACT).unwrap();
    let first = learner.step(&buffers).unwrap().loss_bc.unwrap();
    let mut last = first;
    for _ in 0..300 {
        let r = learner.step(&buffers).unwrap();
        assert!(r.loss_critic.is_none());
        last = r.loss_bc.unwrap();
    }
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn combined_actor_form_takes_one_policy_step() {
    let buffers = fixture_buffers(12);
    let cfg = LearnerConfig {
        combined_actor_loss: true,
        ..small_config(Mode::Ohprl)
    };
    let mut learner = Learner::new(cfg, OBS, ACT).unwrap();
    let r = learner.step(&buffers).unwrap();
    assert_eq!(r.policy_version, 1);
    assert!(r.loss_pref_actor.is_some());
}

#[test]
fn learner_steps_are_deterministic() {
    let buffers = fixture_buffers(13);
    let run = || {
        let mut l = Learner::new(small_config(Mode::Ohprl), OBS, ACT).unwrap();
        for _ in 0..5 {
            l.step(&buffers).unwrap();
        }
        bits(&l.nets().policy)
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn gate_target_is_monotone_and_symmetric(a in -30.0f64..30.0, da in 1e-3f64..5.0) {
        prop_assert!(gate_target(a + da) > gate_target(a));
        prop_assert!((gate_target(-a) - (1.0 - gate_target(a))).abs() < 1e-15);
    }

    #[test]
    fn swapping_preference_negates_each_term(
        beta in 0.0f64..1.0,
        v in proptest::collection::vec(-1.0f64..1.0, 6),
    ) {
        let (at, ap, aw) = (&v[0..2], &v[2..4], &v[4..6]);
        let fwd = preference_term(beta, at, ap, aw);
        let rev = preference_term(beta, at, aw, ap);
        prop_assert_eq!(fwd, -rev);
    }
}
