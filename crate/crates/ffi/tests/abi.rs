use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use ohprl_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ohprl_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn env_handle_steps_and_reports_flags() {
    let id = CString::new("press_button").unwrap();
    let mut env = ptr::null_mut();
    unsafe {
        assert_eq!(ohprl_env_new(id.as_ptr(), 3, &mut env), OhprlStatus::Ok);
        let n = ohprl_env_obs_dim(env);
        assert_eq!(n, 7);
        let mut obs = vec![0.0; n];
        assert_eq!(ohprl_env_observe(env, obs.as_mut_ptr(), n), OhprlStatus::Ok);

        // drive straight at the button top with the observed offset
        let mut info = OhprlStepInfo::default();
        let mut steps = 0;
        while !info.done && !info.truncated {
            let (dx, dy) = (obs[4], obs[5]);
            let a = if dx.abs() > 0.005 {
                [(dx / 0.03).clamp(-1.0, 1.0), 0.0]
            } else {
                [0.0, -1.0]
            };
            assert_eq!(ohprl_env_step(env, a.as_ptr(), 2, &mut info), OhprlStatus::Ok);
            assert_eq!(ohprl_env_observe(env, obs.as_mut_ptr(), n), OhprlStatus::Ok);
            steps += 1;
        }
        assert!(info.success && info.reward == 1.0, "{steps} steps, {info:?}");

        let a = [0.0, 0.0];
        assert_eq!(ohprl_env_step(env, a.as_ptr(), 2, ptr::null_mut()), OhprlStatus::EpisodeOver);
        assert!(last_error().contains("reset"));
        assert_eq!(ohprl_env_reset(env, 4), OhprlStatus::Ok);
        assert_eq!(ohprl_env_step(env, a.as_ptr(), 2, ptr::null_mut()), OhprlStatus::Ok);
        assert_eq!(last_error(), "");
        ohprl_env_free(env);
    }
}

#[test]
fn bad_arguments_map_to_status_codes() {
    let mut env = ptr::null_mut();
    unsafe {
        assert_eq!(ohprl_env_new(ptr::null(), 0, &mut env), OhprlStatus::NullPointer);
        let bogus = CString::new("stack_blocks").unwrap();
        assert_eq!(ohprl_env_new(bogus.as_ptr(), 0, &mut env), OhprlStatus::Config);
        assert!(!last_error().is_empty());

        let id = CString::new("push_ball").unwrap();
        assert_eq!(ohprl_env_new(id.as_ptr(), 0, &mut env), OhprlStatus::Ok);
        let a = [0.0; 3];
        assert_eq!(ohprl_env_step(env, a.as_ptr(), 3, ptr::null_mut()), OhprlStatus::Shape);
        let nan = [f64::NAN, 0.0];
        assert_eq!(ohprl_env_step(env, nan.as_ptr(), 2, ptr::null_mut()), OhprlStatus::InvalidArgument);
        let mut small = [0.0; 2];
        assert_eq!(ohprl_env_observe(env, small.as_mut_ptr(), 2), OhprlStatus::Shape);
        ohprl_env_free(env);

        // freeing null is a no-op
        ohprl_env_free(ptr::null_mut());
        ohprl_policy_free(ptr::null_mut());

        let missing = CString::new("/nonexistent/checkpoint").unwrap();
        let mut policy = ptr::null_mut();
        assert_eq!(ohprl_policy_load(missing.as_ptr(), &mut policy), OhprlStatus::Io);
        assert!(policy.is_null());
    }
}

#[test]
fn train_then_load_policy_and_act() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = format!("run.out_dir={}", dir.path().display());
    let overrides: Vec<CString> = [
        "env.id=press_button",
        "run.total_env_steps=60",
        "learner.hidden=8,8",
        "learner.batch_n=8",
        "learner.utd=1",
        "prefill.demos=2",
        "prefill.rollouts=1",
        &out_dir,
    ]
    .iter()
    .map(|s| CString::new(*s).unwrap())
    .collect();
    let ptrs: Vec<*const std::ffi::c_char> = overrides.iter().map(|s| s.as_ptr()).collect();
    unsafe {
        assert_eq!(
            ohprl_train(ptr::null(), ptrs.as_ptr(), ptrs.len(), true),
            OhprlStatus::Ok,
            "{}",
            last_error()
        );
        let ckpt = CString::new(dir.path().join("checkpoints/final").to_str().unwrap()).unwrap();
        let mut policy = ptr::null_mut();
        assert_eq!(ohprl_policy_load(ckpt.as_ptr(), &mut policy), OhprlStatus::Ok);
        assert_eq!(ohprl_policy_obs_dim(policy), 7);
        let obs = [0.5, 0.7, 0.0, 0.0, 0.0, -0.5, 0.0];
        let mut a = [9.0; 2];
        assert_eq!(ohprl_policy_act(policy, obs.as_ptr(), 7, a.as_mut_ptr(), 2), OhprlStatus::Ok);
        assert!(a.iter().all(|v| v.abs() < 1.0));
        assert_eq!(ohprl_policy_act(policy, obs.as_ptr(), 6, a.as_mut_ptr(), 2), OhprlStatus::Shape);
        ohprl_policy_free(policy);

        let bad = CString::new("learner.gamma=lots").unwrap();
        let p = [bad.as_ptr()];
        assert_eq!(ohprl_train(ptr::null(), p.as_ptr(), 1, true), OhprlStatus::Config);
        assert!(last_error().contains("learner.gamma"));
    }
}

#[test]
fn generated_header_declares_the_abi_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ohprl.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ohprl_last_error",
        "ohprl_env_new",
        "ohprl_env_step",
        "ohprl_env_free",
        "ohprl_policy_load",
        "ohprl_policy_act",
        "ohprl_policy_free",
        "ohprl_train",
        "OHPRL_STATUS_EPISODE_OVER",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    // syntax-check with the system C compiler when one is installed
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c99"])
        .arg(&header)
        .status()
    else {
        return;
    };
    assert!(status.success());
}
