use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use moejam_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(moejam_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn reward_and_grid_search_round_trip() {
    unsafe {
        let s = moejam_scenario_default();
        assert_eq!(moejam_scenario_n_aps(s), 3);
        assert_eq!(moejam_scenario_n_receivers(s), 5);
        let mut ch = ptr::null_mut();
        assert_eq!(moejam_channel_mean(s, &mut ch), MjStatus::Ok);
        let mut g = 0.0;
        assert_eq!(moejam_channel_gain(ch, 0, 0, &mut g), MjStatus::Ok);
        assert!((g - 1e-6).abs() < 1e-18);

        let mut best = [0.0; 3];
        let mut best_reward = 0.0;
        assert_eq!(moejam_grid_search(s, ch, 1.0, 21, best.as_mut_ptr(), 3, &mut best_reward), MjStatus::Ok);
        let mut r = 0.0;
        assert_eq!(moejam_reward(s, ch, best.as_ptr(), 3, 1.0, &mut r), MjStatus::Ok);
        assert_eq!(r, best_reward);

        moejam_channel_free(ch);
        moejam_scenario_free(s);
    }
}

#[test]
fn errors_are_codes_with_messages() {
    unsafe {
        let s = moejam_scenario_default();
        let mut ch = ptr::null_mut();
        assert_eq!(moejam_channel_realize(s, 7, &mut ch), MjStatus::Ok);

        let mut r = 0.0;
        assert_eq!(moejam_reward(ptr::null(), ch, [0.0; 3].as_ptr(), 3, 1.0, &mut r), MjStatus::NullPointer);
        assert_eq!(moejam_reward(s, ch, [0.0; 2].as_ptr(), 2, 1.0, &mut r), MjStatus::InvalidArgument);
        assert!(last_error().contains("expected 3"));
        assert_eq!(moejam_reward(s, ch, [2.0, 0.0, 0.0].as_ptr(), 3, 1.0, &mut r), MjStatus::Domain);

        let mut out = [0.0; 3];
        assert_eq!(moejam_grid_search(s, ch, 1.0, 1000, out.as_mut_ptr(), 3, &mut r), MjStatus::Budget);
        assert_eq!(moejam_channel_gain(ch, 3, 0, &mut r), MjStatus::InvalidArgument);

        let missing = CString::new("/nonexistent/run.toml").unwrap();
        let mut loaded = ptr::null_mut();
        assert_eq!(moejam_scenario_load(missing.as_ptr(), &mut loaded), MjStatus::Io);
        let mut policy = ptr::null_mut();
        assert_eq!(moejam_policy_load(missing.as_ptr(), &mut policy), MjStatus::Io);

        moejam_clear_error();
        assert_eq!(last_error(), "");
        moejam_channel_free(ch);
        moejam_scenario_free(s);
        moejam_scenario_free(ptr::null_mut());
    }
}

#[test]
fn scenario_file_and_policy_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[scenario]\np_max = 2.0\n").unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[scenario]\np_max = -2.0\n").unwrap();

    let ckpt_path = dir.path().join("gdm.ckpt");
    let setup = moejam::trainer::Setup::default();
    setup.init(moejam::policy::Algorithm::MoeGdm, 3).unwrap().save(&ckpt_path).unwrap();

    unsafe {
        let mut s = ptr::null_mut();
        let path = CString::new(cfg.to_str().unwrap()).unwrap();
        assert_eq!(moejam_scenario_load(path.as_ptr(), &mut s), MjStatus::Ok);
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        let mut t = ptr::null_mut();
        assert_eq!(moejam_scenario_load(bad.as_ptr(), &mut t), MjStatus::InvalidArgument);
        assert!(last_error().contains("p_max"));

        let mut p = ptr::null_mut();
        let ck = CString::new(ckpt_path.to_str().unwrap()).unwrap();
        assert_eq!(moejam_policy_load(ck.as_ptr(), &mut p), MjStatus::Ok);
        let state = [0.1; 18];
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        let mut expert = -2;
        assert_eq!(moejam_policy_act(p, state.as_ptr(), 18, 5, a.as_mut_ptr(), 3, &mut expert), MjStatus::Ok);
        assert_eq!(moejam_policy_act(p, state.as_ptr(), 18, 5, b.as_mut_ptr(), 3, ptr::null_mut()), MjStatus::Ok);
        assert_eq!(a, b);
        assert!(a.iter().all(|x| (0.0..=1.0).contains(x)));
        assert!((0..3).contains(&expert));
        assert_eq!(moejam_policy_act(p, state.as_ptr(), 17, 5, a.as_mut_ptr(), 3, ptr::null_mut()), MjStatus::InvalidArgument);

        moejam_policy_free(p);
        moejam_scenario_free(s);
    }
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/moejam.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["moejam_scenario_default", "moejam_reward", "moejam_grid_search", "moejam_policy_act", "moejam_last_error"] {
        assert!(text.contains(f), "{f} missing");
    }
    assert!(text.contains("typedef struct MjScenario MjScenario;"));
    // Syntax-check with the system C compiler when one is present.
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
