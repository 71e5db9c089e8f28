use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use setpoint_oco::algorithms::{
    bercogd_init, BercogdConfig, Cogd, FeedbackObservation, OnlineAlgorithm,
};
use setpoint_oco::oco::{Bounds, FeedbackRegime, LossParams, ProblemConstants, Tuning};
use setpoint_oco::sim::{
    average_summaries, run_experiment, run_trial, Policy, Scenario, ScenarioConfig,
};

fn small(feedback: FeedbackRegime) -> ScenarioConfig {
    let mut c = ScenarioConfig::new(Scenario::Tcl, feedback);
    c.loads = 12;
    c.observed = 4;
    c.rounds = 80;
    c.trials = 3;
    c.seed = 9;
    c.tuning.a = 3.0;
    c
}

#[test]
fn noiseless_single_load_converges() {
    let mut config = ScenarioConfig::new(Scenario::Tcl, FeedbackRegime::Full);
    config.loads = 1;
    config.rounds = 200;
    config.tracked_loads = vec![0];
    config.noise.sd = 0.0;
    config.noise.lo = -1e-9;
    config.noise.hi = 1e-9;
    config.compute_regret = false;
    config.tuning.chi = 1.0;

    // Read the load's response and baseline off a probe run, then aim the
    // setpoint at half of the reachable range.
    let probe = run_trial(&config, 0, Policy::Baseline).unwrap();
    let c0 = probe.history[0].response[0];
    let baseline = probe.ledger.setpoint[0] - probe.ledger.effective_setpoint[0];
    config.setpoint.amplitude = 0.0;
    config.setpoint.offset = baseline + 0.5 * c0;

    let run = run_trial(&config, 0, Policy::Configured).unwrap();
    let losses = &run.ledger.tracking_loss;
    assert!(losses[0] > 0.0);
    assert!(
        losses[losses.len() - 1] < 0.01 * losses[0],
        "first {} last {}",
        losses[0],
        losses[losses.len() - 1]
    );
}

#[test]
fn cogd_on_a_fixed_quadratic_reduces_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let dim = 5;
        let c: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..1.5)).collect();
        let s = rng.random_range(-2.0..2.0);
        let mut alg = Cogd::new(Bounds::symmetric(dim), 0.01, LossParams::NONE).unwrap();
        let mut losses = Vec::new();
        for _ in 0..2000 {
            let out = alg
                .round_with(&FeedbackObservation::Full {
                    response: c.clone(),
                    setpoint: s,
                })
                .unwrap();
            losses.push(out.loss);
        }
        let first: f64 = losses[..100].iter().sum();
        let last: f64 = losses[1900..].iter().sum();
        assert!(last < first, "first {first} last {last}");
    }
}

#[test]
fn bernoulli_without_bandit_rounds_is_cogd() {
    let dim = 4;
    let params = LossParams::new(2.0, 0.3).unwrap();
    let config = BercogdConfig {
        dim,
        horizon: 50,
        tuning: Tuning {
            a: 0.0,
            ..Tuning::default()
        },
        constants: ProblemConstants::conservative(dim, 4.0, 2.0, 5.0, 2.0),
        params,
        mean_regularizer: true,
        warmup: false,
    };
    let mut ber = bercogd_init(&config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(ber.bandit_rounds(), 0);
    let mut cogd = Cogd::new(Bounds::symmetric(dim), ber.schedule().eta, params).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut play_rng = ChaCha8Rng::seed_from_u64(3);
    for t in 0..50 {
        let obs = FeedbackObservation::Full {
            response: (0..dim).map(|_| rng.random_range(0.0..2.0)).collect(),
            setpoint: 3.0 * (0.1 * t as f64).sin(),
        };
        let a = ber.play(&mut play_rng).unwrap();
        let b = cogd.play(&mut play_rng).unwrap();
        assert_eq!(a, b, "round {t}");
        ber.observe(&obs).unwrap();
        cogd.observe(&obs).unwrap();
    }
    assert_eq!(ber.current(), cogd.current());
}

#[test]
fn same_seed_gives_identical_ledgers() {
    for feedback in [
        FeedbackRegime::Full,
        FeedbackRegime::Bandit,
        FeedbackRegime::Partial,
        FeedbackRegime::Bernoulli,
    ] {
        let mut config = small(feedback);
        config.lambda = 2.0;
        let a = run_trial(&config, 1, Policy::Configured).unwrap();
        let b = run_trial(&config, 1, Policy::Configured).unwrap();
        assert_eq!(a.ledger, b.ledger, "{feedback}");
        assert_eq!(a.trajectories, b.trajectories, "{feedback}");
    }
}

#[test]
fn regret_matches_recomputation_from_history() {
    for feedback in [
        FeedbackRegime::Full,
        FeedbackRegime::Bandit,
        FeedbackRegime::Bernoulli,
    ] {
        let mut config = small(feedback);
        config.rho = 3.0;
        config.lambda = 1.5;
        let run = run_trial(&config, 0, Policy::Configured).unwrap();
        let dim = config.loads;

        let mut mean = vec![0.0; dim];
        let mut incurred = 0.0;
        for (k, r) in run.history.iter().enumerate() {
            let total: f64 = r.response.iter().zip(&r.played).map(|(c, m)| c * m).sum();
            for (m, p) in mean.iter_mut().zip(&r.played) {
                *m += (p - *m) / (k + 1) as f64;
            }
            let mean_sq: f64 = mean.iter().map(|m| m * m).sum();
            let l1: f64 = r.played.iter().map(|m| m.abs()).sum();
            incurred +=
                (r.effective_setpoint - total).powi(2) + config.rho * mean_sq + config.lambda * l1;
        }
        let star = &run.ledger.hindsight.as_ref().unwrap().mu;
        let star_sq: f64 = star.iter().map(|m| m * m).sum();
        let star_l1: f64 = star.iter().map(|m| m.abs()).sum();
        let comparator: f64 = run
            .history
            .iter()
            .map(|r| {
                let total: f64 = r.response.iter().zip(star).map(|(c, m)| c * m).sum();
                (r.effective_setpoint - total).powi(2)
                    + config.rho * star_sq
                    + config.lambda * star_l1
            })
            .sum();
        let expected = incurred - comparator;
        let regret = *run.ledger.regret.as_ref().unwrap().last().unwrap();
        assert!(
            (regret - expected).abs() <= 1e-8 * expected.abs().max(1.0),
            "{feedback}: {regret} vs {expected}"
        );
    }
}

#[test]
fn baseline_loss_is_the_squared_effective_setpoint() {
    let config = small(FeedbackRegime::Full);
    let run = run_trial(&config, 0, Policy::Baseline).unwrap();
    for (loss, s) in run
        .ledger
        .tracking_loss
        .iter()
        .zip(&run.ledger.effective_setpoint)
    {
        assert_eq!(*loss, s * s);
    }
    assert!(run.ledger.adjustment.iter().all(|&a| a == 0.0));
}

#[test]
fn partial_feedback_decomposition_holds() {
    let config = small(FeedbackRegime::Partial);
    let run = run_trial(&config, 2, Policy::Configured).unwrap();
    assert!(
        run.decomposition_error <= 1e-9,
        "{}",
        run.decomposition_error
    );
}

#[test]
fn reported_means_are_arithmetic_means_of_trials() {
    let mut config = small(FeedbackRegime::Full);
    config.rho = 5.0;
    config.lambda = 1.0;
    let result = run_experiment(&config).unwrap();
    assert_eq!(result.trials.len(), 3);
    let k = result.trials.len() as f64;
    let mean = |f: &dyn Fn(&setpoint_oco::sim::TrialSummary) -> f64| {
        result.trials.iter().map(f).sum::<f64>() / k
    };
    let s = &result.summary;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
    assert!(close(s.improvement, mean(&|t| t.improvement)));
    assert!(close(s.regret.unwrap(), mean(&|t| t.regret.unwrap())));
    assert!(close(
        s.sparsity_improvement.unwrap(),
        mean(&|t| t.sparsity_improvement.unwrap())
    ));
    assert_eq!(average_summaries(&result.trials), *s);

    // Per-round rows average the per-trial ledgers.
    let ledgers: Vec<_> = (0..config.trials)
        .map(|k| run_trial(&config, k, Policy::Configured).unwrap().ledger)
        .collect();
    for (t, row) in result.rounds.iter().enumerate() {
        let loss = ledgers.iter().map(|l| l.tracking_loss[t]).sum::<f64>() / k;
        assert!(close(row.loss, loss), "round {}", t + 1);
    }
}

#[test]
fn trials_see_different_fleets() {
    let config = small(FeedbackRegime::Full);
    let a = run_trial(&config, 0, Policy::Baseline).unwrap();
    let b = run_trial(&config, 1, Policy::Baseline).unwrap();
    assert_ne!(a.history[0].response, b.history[0].response);
}
