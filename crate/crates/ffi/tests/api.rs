use std::ffi::{CStr, CString};
use std::ptr;

use setpoint_oco_ffi::*;

const TINY: &str = r#"
scenario = "tcl"
feedback = "full"
[run]
seed = 3
trials = 2
rounds = 12
loads = 4
[[experiment]]
[experiment.regularization]
rho = 1.0
lambda = 0.5
[[experiment]]
feedback = "bandit"
"#;

fn last_error() -> String {
    let p = spo_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn parse(text: &str, index: usize) -> Result<*mut SpoConfig, (SpoStatus, String)> {
    let toml = CString::new(text).unwrap();
    let mut config = ptr::null_mut();
    match unsafe { spo_config_parse(toml.as_ptr(), index, &mut config) } {
        SpoStatus::Ok => Ok(config),
        status => Err((status, last_error())),
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(spo_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn config_count_and_parse() {
    let toml = CString::new(TINY).unwrap();
    let mut count = 0;
    assert_eq!(
        unsafe { spo_config_count(toml.as_ptr(), &mut count) },
        SpoStatus::Ok
    );
    assert_eq!(count, 2);
    let config = parse(TINY, 1).unwrap();
    assert!(spo_last_error().is_null());
    unsafe { spo_config_free(config) };

    let (status, msg) = parse(TINY, 2).unwrap_err();
    assert_eq!(status, SpoStatus::InvalidArgument);
    assert!(msg.contains("out of range"), "{msg}");
}

#[test]
fn configuration_errors_carry_messages() {
    let (status, msg) = parse(
        "scenario = \"tcl\"\nfeedback = \"full\"\n[run]\nseeds = 1\n",
        0,
    )
    .unwrap_err();
    assert_eq!(status, SpoStatus::InvalidConfiguration);
    assert!(msg.contains("seeds"), "{msg}");

    let config = parse(TINY, 0).unwrap();
    assert_eq!(
        unsafe { spo_config_set_rounds(config, 2) },
        SpoStatus::InvalidConfiguration
    );
    assert!(last_error().contains("rounds"));
    assert_eq!(
        unsafe { spo_config_set_regularization(config, -1.0, 0.0) },
        SpoStatus::InvalidArgument
    );
    unsafe { spo_config_free(config) };
}

#[test]
fn null_pointers_are_rejected() {
    let mut config = ptr::null_mut();
    assert_eq!(
        unsafe { spo_config_parse(ptr::null(), 0, &mut config) },
        SpoStatus::NullPointer
    );
    assert!(last_error().contains("toml"));
    assert_eq!(
        unsafe { spo_run(ptr::null(), ptr::null_mut()) },
        SpoStatus::NullPointer
    );
    unsafe {
        spo_config_free(ptr::null_mut());
        spo_result_free(ptr::null_mut());
        spo_algorithm_free(ptr::null_mut());
    }
}

#[test]
fn run_exposes_summary_and_series() {
    let config = parse(TINY, 0).unwrap();
    assert_eq!(unsafe { spo_config_set_seed(config, 99) }, SpoStatus::Ok);
    assert_eq!(unsafe { spo_config_set_trials(config, 3) }, SpoStatus::Ok);
    let mut result = ptr::null_mut();
    assert_eq!(unsafe { spo_run(config, &mut result) }, SpoStatus::Ok);

    let mut summary = SpoSummary {
        improvement_pct: 0.0,
        unregularized_improvement_pct: 0.0,
        mean_improvement_pct: 0.0,
        sparsity_improvement_pct: 0.0,
        simultaneity: 0.0,
        regret: 0.0,
        regret_bound: 0.0,
        bandit_fraction: 0.0,
    };
    assert_eq!(
        unsafe { spo_result_summary(result, &mut summary) },
        SpoStatus::Ok
    );
    assert!(summary.improvement_pct.is_finite());
    assert!(summary.regret.is_finite());
    assert!(summary.simultaneity.is_nan());
    assert!(summary.bandit_fraction.is_nan());

    let mut rounds = 0;
    assert_eq!(
        unsafe { spo_result_rounds(result, &mut rounds) },
        SpoStatus::Ok
    );
    assert_eq!(rounds, 12);
    let mut loss = vec![0.0; rounds];
    let mut cumulative = vec![0.0; rounds];
    unsafe {
        assert_eq!(
            spo_result_series(result, SpoSeries::Loss, loss.as_mut_ptr(), rounds),
            SpoStatus::Ok
        );
        assert_eq!(
            spo_result_series(
                result,
                SpoSeries::CumulativeLoss,
                cumulative.as_mut_ptr(),
                rounds
            ),
            SpoStatus::Ok
        );
        assert_eq!(
            spo_result_series(result, SpoSeries::Loss, loss.as_mut_ptr(), rounds - 1),
            SpoStatus::DimensionMismatch
        );
    }
    let total: f64 = loss.iter().sum();
    assert!((total - cumulative[rounds - 1]).abs() <= 1e-9 * total);

    unsafe {
        spo_result_free(result);
        spo_config_free(config);
    }
}

#[test]
fn cogd_handle_follows_the_update_rule() {
    let mut alg = ptr::null_mut();
    assert_eq!(
        unsafe { spo_algorithm_cogd(1, ptr::null(), ptr::null(), 0.25, 0.0, 0.0, &mut alg) },
        SpoStatus::Ok
    );
    let mut signal = [f64::NAN];
    let mut loss = 0.0;
    for expected in [0.0, 0.5, 0.75] {
        unsafe {
            assert_eq!(
                spo_algorithm_play(alg, signal.as_mut_ptr(), 1),
                SpoStatus::Ok
            );
            assert_eq!(signal[0], expected);
            assert_eq!(
                spo_algorithm_observe_full(alg, [1.0].as_ptr(), 1, 1.0, &mut loss),
                SpoStatus::Ok
            );
        }
        assert_eq!(loss, (1.0 - expected).powi(2));
    }
    unsafe {
        assert_eq!(
            spo_algorithm_observe_aggregate(alg, 1.0, 1.0, ptr::null_mut()),
            SpoStatus::FeedbackMismatch
        );
        spo_algorithm_free(alg);
    }
}

#[test]
fn bandit_handle_is_seeded_and_stays_in_its_box() {
    let run = |seed| {
        let lo = [-1.0, -1.5, -1.0];
        let hi = [1.0, 1.0, 2.0];
        let mut alg = ptr::null_mut();
        let status = unsafe {
            spo_algorithm_bcogd(
                3,
                lo.as_ptr(),
                hi.as_ptr(),
                0.01,
                0.1,
                0.0,
                0.1,
                seed,
                &mut alg,
            )
        };
        assert_eq!(status, SpoStatus::Ok);
        let mut dim = 0;
        assert_eq!(unsafe { spo_algorithm_dim(alg, &mut dim) }, SpoStatus::Ok);
        assert_eq!(dim, 3);
        let mut played = Vec::new();
        for _ in 0..20 {
            let mut signal = [0.0; 3];
            unsafe {
                assert_eq!(
                    spo_algorithm_play(alg, signal.as_mut_ptr(), 3),
                    SpoStatus::Ok
                );
                let total = signal[0] + 0.5 * signal[1] + 2.0 * signal[2];
                assert_eq!(
                    spo_algorithm_observe_aggregate(alg, total, 1.0, ptr::null_mut()),
                    SpoStatus::Ok
                );
            }
            for i in 0..3 {
                assert!(lo[i] <= signal[i] && signal[i] <= hi[i]);
            }
            played.push(signal);
        }
        unsafe { spo_algorithm_free(alg) };
        played
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn invalid_boxes_are_configuration_errors() {
    let lo = [0.1];
    let hi = [1.0];
    let mut alg = ptr::null_mut();
    let status =
        unsafe { spo_algorithm_cogd(1, lo.as_ptr(), hi.as_ptr(), 0.1, 0.0, 0.0, &mut alg) };
    assert_eq!(status, SpoStatus::InvalidConfiguration);
    assert!(alg.is_null());
    assert!(last_error().contains("does not contain 0"));

    let lo = [-0.5];
    let status = unsafe {
        spo_algorithm_bcogd(1, lo.as_ptr(), hi.as_ptr(), 0.1, 0.1, 0.0, 0.0, 1, &mut alg)
    };
    assert_eq!(status, SpoStatus::InvalidConfiguration);
    assert!(last_error().contains("[-1, 1]"));
}
