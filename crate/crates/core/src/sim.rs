//! Closed-loop experiments: setpoint generation, feedback mediation,
//! multi-trial runs and every reported metric.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    bercogd_init, ev_bounds, Bcogd, BercogdConfig, Cogd, EvCogd, FeedbackKind, FeedbackObservation,
    LoadSplit, OnlineAlgorithm, Pbcogd, ZeroPolicy,
};
use crate::error::{check_len, Error, Result};
use crate::hindsight::{hindsight_optimum, CompositeQuadratic, HindsightSolution};
use crate::loads::{tcl_fleet_init, EvFleet, EvParams, TclFleet, TclRanges, TruncatedNoise};
use crate::oco::{
    dot, norm1, norm2, step_schedule, Bounds, FeedbackRegime, LossParams, ProblemConstants,
    RunningMean, Tuning,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Tcl,
    Ev,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Tcl => "tcl",
            Scenario::Ev => "ev",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tcl" => Ok(Scenario::Tcl),
            "ev" => Ok(Scenario::Ev),
            _ => Err(Error::InvalidConfiguration(format!(
                "unknown scenario `{s}` (expected tcl or ev)"
            ))),
        }
    }
}

/// `s_t = amplitude·sin(frequency·t) + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointParams {
    pub amplitude: f64,
    pub frequency: f64,
    pub offset: f64,
}

impl SetpointParams {
    pub fn for_scenario(scenario: Scenario) -> Self {
        match scenario {
            Scenario::Tcl => Self {
                amplitude: 15.0,
                frequency: 0.1,
                offset: 155.0,
            },
            Scenario::Ev => Self {
                amplitude: 25.0,
                frequency: 0.1,
                offset: 0.0,
            },
        }
    }

    pub fn bound(&self) -> f64 {
        self.offset.abs() + self.amplitude.abs()
    }
}

pub fn make_setpoint(params: &SetpointParams, t: i64) -> f64 {
    params.amplitude * (params.frequency * t as f64).sin() + params.offset
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TclSettings {
    pub ranges: TclRanges,
    /// Ambient temperature `θ_a` (°C).
    pub ambient_temp: f64,
    pub step_minutes: f64,
}

impl Default for TclSettings {
    fn default() -> Self {
        Self {
            ranges: TclRanges::default(),
            ambient_temp: 30.0,
            step_minutes: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvSettings {
    pub params: EvParams,
    pub step_minutes: f64,
}

impl Default for EvSettings {
    fn default() -> Self {
        Self {
            params: EvParams::default(),
            step_minutes: 1.0,
        }
    }
}

/// Everything one experiment (a scenario × feedback cell) needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub feedback: FeedbackRegime,
    /// Fleet size `N`.
    pub loads: usize,
    /// Observed loads `n` (partial feedback).
    pub observed: usize,
    /// Horizon `T`.
    pub rounds: usize,
    pub trials: usize,
    pub seed: u64,
    pub rho: f64,
    pub lambda: f64,
    pub tuning: Tuning,
    pub setpoint: SetpointParams,
    pub noise: TruncatedNoise,
    pub tcl: TclSettings,
    pub ev: EvSettings,
    /// Keep the mean regularizer in the Bernoulli algorithm's gradients.
    pub bercogd_mean_regularizer: bool,
    /// Play the Bernoulli algorithm's two warm-up rounds before `t = 1`.
    pub bercogd_warmup: bool,
    pub compute_regret: bool,
    /// Also run the same trials with `ρ = λ = 0` to measure regularizer effects.
    pub compare_unregularized: bool,
    /// Loads whose temperature or state of charge is recorded.
    pub tracked_loads: Vec<usize>,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, feedback: FeedbackRegime) -> Self {
        Self {
            scenario,
            feedback,
            loads: 100,
            observed: 10,
            rounds: 600,
            trials: 100,
            seed: 0,
            rho: 0.0,
            lambda: 0.0,
            tuning: Tuning::default(),
            setpoint: SetpointParams::for_scenario(scenario),
            noise: match scenario {
                Scenario::Tcl => TruncatedNoise::TCL,
                Scenario::Ev => TruncatedNoise::EV,
            },
            tcl: TclSettings::default(),
            ev: EvSettings::default(),
            bercogd_mean_regularizer: false,
            bercogd_warmup: true,
            compute_regret: true,
            compare_unregularized: true,
            tracked_loads: vec![0, 1, 2],
        }
    }

    pub fn loss_params(&self) -> Result<LossParams> {
        LossParams::new(self.rho, self.lambda)
    }

    pub fn is_regularized(&self) -> bool {
        self.rho != 0.0 || self.lambda != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfiguration(msg));
        if self.loads == 0 {
            return fail("loads (N) must be at least 1".into());
        }
        if self.rounds < 4 {
            return fail(format!(
                "rounds (T) must be at least 4, got {}",
                self.rounds
            ));
        }
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        self.loss_params()?;
        if self.feedback == FeedbackRegime::Partial {
            if self.observed == 0 || self.observed >= self.loads {
                return fail(format!(
                    "partial feedback needs 1 <= n < N (n={}, N={})",
                    self.observed, self.loads
                ));
            }
            if self.rho != 0.0 {
                return fail(format!(
                    "partial feedback drops the mean regularizer; rho must be 0, got {}",
                    self.rho
                ));
            }
        }
        if self.scenario == Scenario::Ev && self.feedback != FeedbackRegime::Full {
            return fail(format!(
                "the EV scenario supports full feedback only, got {}",
                self.feedback
            ));
        }
        for (name, chi) in [
            ("chi", self.tuning.chi),
            ("chi_bandit", self.tuning.chi_bandit),
            ("chi_f", self.tuning.chi_f),
            ("chi_b", self.tuning.chi_b),
        ] {
            if !(chi > 0.0 && chi.is_finite()) {
                return fail(format!("{name} must be positive and finite, got {chi}"));
            }
        }
        if self.feedback == FeedbackRegime::Bernoulli {
            crate::oco::bernoulli_probability(self.tuning.a, self.rounds)?;
        }
        let noise = &self.noise;
        if !(noise.sd >= 0.0 && noise.lo < noise.hi && (noise.lo..=noise.hi).contains(&noise.mean))
        {
            return fail(format!(
                "noise needs sd >= 0 and lo <= mean <= hi (mean={}, sd={}, lo={}, hi={})",
                noise.mean, noise.sd, noise.lo, noise.hi
            ));
        }
        let step = match self.scenario {
            Scenario::Tcl => self.tcl.step_minutes,
            Scenario::Ev => self.ev.step_minutes,
        };
        if !(step > 0.0 && step.is_finite()) {
            return fail(format!("step_minutes must be positive, got {step}"));
        }
        if self.scenario == Scenario::Ev {
            self.ev.params.validate()?;
        }
        if let Some(&i) = self.tracked_loads.iter().find(|&&i| i >= self.loads) {
            return fail(format!(
                "tracked load {i} is out of range for N={}",
                self.loads
            ));
        }
        Ok(())
    }

    /// Dimension of the decision vector.
    pub fn dim(&self) -> usize {
        match self.scenario {
            Scenario::Tcl => self.loads,
            Scenario::Ev => 2 * self.loads,
        }
    }
}

/// Independent random streams of one trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stream {
    Fleet = 1,
    Noise = 2,
    Algorithm = 3,
    Warmup = 4,
    Plan = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `trial` in an experiment seeded with `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    splitmix64(seed ^ splitmix64(trial as u64))
}

fn stream(trial_seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    rng.set_stream(which as u64);
    rng
}

/// Builds the observation a regime is allowed to see. The aggregate and
/// partial variants never carry the hidden coordinates.
pub fn feedback_channel(
    kind: FeedbackKind,
    response: &[f64],
    setpoint: f64,
    played: &[f64],
    split: Option<&LoadSplit>,
) -> Result<FeedbackObservation> {
    check_len(response.len(), played.len())?;
    Ok(match kind {
        FeedbackKind::Full => FeedbackObservation::Full {
            response: response.to_vec(),
            setpoint,
        },
        FeedbackKind::Aggregate => FeedbackObservation::Aggregate {
            total: dot(response, played),
            setpoint,
        },
        FeedbackKind::Partial => {
            let split = split.ok_or_else(|| {
                Error::InvalidConfiguration("partial feedback needs a load split".into())
            })?;
            check_len(split.dim(), response.len())?;
            FeedbackObservation::Partial {
                observed: split.gather(response, split.observed()),
                total: dot(response, played),
                setpoint,
            }
        }
    })
}

/// Per-round series of one trial.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLedger {
    /// Raw setpoint `s_t`.
    pub setpoint: Vec<f64>,
    /// Setpoint the adjustment must track (`s_t` minus baseline consumption).
    pub effective_setpoint: Vec<f64>,
    /// Aggregate adjustment `c_tᵀμ_t`.
    pub adjustment: Vec<f64>,
    pub tracking_loss: Vec<f64>,
    /// `F_t` at the played signal.
    pub objective: Vec<f64>,
    /// `‖⟨μ⟩_t‖₂` (efficiency-weighted for EVs).
    pub mean_norm: Vec<f64>,
    /// `‖μ_t‖₁`.
    pub l1_norm: Vec<f64>,
    /// Some load charges and discharges at once (EV only).
    pub simultaneous: Vec<bool>,
    /// `R_t`, when regret was computed.
    pub regret: Option<Vec<f64>>,
    pub hindsight: Option<HindsightSolution>,
}

impl MetricsLedger {
    pub fn len(&self) -> usize {
        self.tracking_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracking_loss.is_empty()
    }

    pub fn cumulative_loss(&self) -> Vec<f64> {
        cumulative(&self.tracking_loss)
    }

    pub fn total_loss(&self) -> f64 {
        self.tracking_loss.iter().sum()
    }
}

fn cumulative(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// What a round looked like to the harness, kept for offline metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub effective_setpoint: f64,
    pub response: Vec<f64>,
    pub played: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateKind {
    Temperature,
    Soc,
}

/// Recorded per-load states and signals for a subset of loads.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectories {
    pub kind: StateKind,
    pub loads: Vec<usize>,
    /// `states[t][k]`: state of `loads[k]` after round `t + 1`.
    pub states: Vec<Vec<f64>>,
    /// Net signal of `loads[k]` in round `t + 1` (`μ_c + μ_d` for EVs).
    pub signals: Vec<Vec<f64>>,
}

/// Which policy a trial runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    /// The configured algorithm with the configured `(ρ, λ)`.
    Configured,
    /// The configured algorithm with `ρ = λ = 0`.
    Unregularized,
    /// The zero signal (no demand response).
    Baseline,
}

#[derive(Clone, Debug)]
pub struct TrialRun {
    pub ledger: MetricsLedger,
    pub trajectories: Trajectories,
    pub history: Vec<RoundRecord>,
    /// Largest relative gap between the partial-feedback decomposed losses
    /// and `f_t(μ_t)` over all rounds (0 outside the partial regime).
    pub decomposition_error: f64,
    /// Realized fraction of bandit rounds (Bernoulli regime).
    pub bandit_fraction: Option<f64>,
    /// `max_t max{ρ², ‖c_t‖²}`.
    pub response_scale: f64,
    pub constants: ProblemConstants,
    pub saturation_events: usize,
}

enum Plant {
    Tcl(TclFleet),
    Ev(EvFleet),
}

impl Plant {
    fn baseline(&self) -> f64 {
        match self {
            Plant::Tcl(f) => f.baseline_power(),
            Plant::Ev(_) => 0.0,
        }
    }

    fn respond(&self, noise: &TruncatedNoise, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        match self {
            Plant::Tcl(f) => f.observe_response(noise, rng),
            Plant::Ev(f) => {
                let (mut c_c, c_d) = f.observe_response(noise, rng)?;
                c_c.extend(c_d);
                Ok(c_c)
            }
        }
    }

    fn step(&mut self, played: &[f64], response: &[f64], hours: f64) -> Result<()> {
        match self {
            Plant::Tcl(f) => f.step(played, hours),
            Plant::Ev(f) => {
                let n = f.len();
                f.step(
                    &response[..n],
                    &response[n..],
                    &played[..n],
                    &played[n..],
                    hours,
                )
            }
        }
    }

    fn states(&self, loads: &[usize]) -> Vec<f64> {
        match self {
            Plant::Tcl(f) => loads.iter().map(|&i| f.temps()[i]).collect(),
            Plant::Ev(f) => loads.iter().map(|&i| f.soc()[i]).collect(),
        }
    }
}

fn build_plant(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Plant> {
    Ok(match config.scenario {
        Scenario::Tcl => Plant::Tcl(tcl_fleet_init(
            config.loads,
            rng,
            &config.tcl.ranges,
            config.tcl.ambient_temp,
        )?),
        Scenario::Ev => Plant::Ev(EvFleet::uniform(config.loads, config.ev.params)?),
    })
}

/// Parameter table of the fleet trial `trial` of `config` runs on.
pub fn fleet_table(config: &ScenarioConfig, trial: usize) -> Result<String> {
    config.validate()?;
    let mut rng = stream(trial_seed(config.seed, trial), Stream::Fleet);
    Ok(match build_plant(config, &mut rng)? {
        Plant::Tcl(f) => f.dump(),
        Plant::Ev(f) => f.dump(),
    })
}

fn problem_constants(config: &ScenarioConfig, plant: &Plant, rho: f64) -> ProblemConstants {
    let (bounds, response_bound) = match plant {
        Plant::Tcl(f) => (
            Bounds::symmetric(f.len()),
            f.c0().into_iter().fold(0.0, f64::max) + config.noise.hi,
        ),
        Plant::Ev(f) => (
            ev_bounds(f.len()),
            f.params()
                .iter()
                .map(|p| p.rate_charge.max(p.rate_discharge))
                .fold(0.0, f64::max)
                + config.noise.hi,
        ),
    };
    let setpoint_bound =
        (config.setpoint.offset - plant.baseline()).abs() + config.setpoint.amplitude.abs();
    ProblemConstants::conservative(
        config.dim(),
        bounds.diameter(),
        response_bound,
        setpoint_bound,
        rho,
    )
}

fn build_algorithm(
    config: &ScenarioConfig,
    plant: &Plant,
    params: LossParams,
    constants: &ProblemConstants,
    plan_rng: &mut ChaCha8Rng,
) -> Result<(Box<dyn OnlineAlgorithm>, Option<LoadSplit>)> {
    let dim = config.dim();
    let schedule = |kind| {
        step_schedule(
            kind,
            config.rounds,
            dim,
            config.observed,
            constants,
            &config.tuning,
            None,
        )
    };
    Ok(match (config.feedback, plant) {
        (FeedbackRegime::Full, Plant::Ev(fleet)) => {
            let eta = schedule(FeedbackRegime::Full)?.eta;
            (
                Box::new(EvCogd::new(fleet.params().to_vec(), eta, params)?),
                None,
            )
        }
        (_, Plant::Ev(_)) => {
            return Err(Error::InvalidConfiguration(
                "the EV scenario supports full feedback only".into(),
            ))
        }
        (FeedbackRegime::Full, _) => (
            Box::new(Cogd::from_schedule(
                dim,
                &schedule(FeedbackRegime::Full)?,
                params,
            )?),
            None,
        ),
        (FeedbackRegime::Bandit, _) => (
            Box::new(Bcogd::from_schedule(
                dim,
                &schedule(FeedbackRegime::Bandit)?,
                params,
            )?),
            None,
        ),
        (FeedbackRegime::Partial, _) => {
            let split = LoadSplit::last(dim, config.observed)?;
            let alg = Pbcogd::from_schedule(
                split.clone(),
                &schedule(FeedbackRegime::Partial)?,
                params.lambda,
            )?;
            (Box::new(alg), Some(split))
        }
        (FeedbackRegime::Bernoulli, _) => {
            let ber = BercogdConfig {
                dim,
                horizon: config.rounds,
                tuning: config.tuning,
                constants: *constants,
                params,
                mean_regularizer: config.bercogd_mean_regularizer,
                warmup: config.bercogd_warmup,
            };
            (Box::new(bercogd_init(&ber, plan_rng)?), None)
        }
    })
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Runs one trial of `config` under `policy`. Trials with the same index
/// share fleet, noise and algorithm streams across policies, so the
/// comparisons are paired.
pub fn run_trial(config: &ScenarioConfig, trial: usize, policy: Policy) -> Result<TrialRun> {
    config.validate()?;
    let seed = trial_seed(config.seed, trial);
    let mut fleet_rng = stream(seed, Stream::Fleet);
    let mut noise_rng = stream(seed, Stream::Noise);
    let mut alg_rng = stream(seed, Stream::Algorithm);
    let mut warmup_rng = stream(seed, Stream::Warmup);
    let mut plan_rng = stream(seed, Stream::Plan);

    let mut plant = build_plant(config, &mut fleet_rng)?;
    let dim = config.dim();
    let params = match policy {
        Policy::Configured => config.loss_params()?,
        Policy::Unregularized | Policy::Baseline => LossParams::NONE,
    };
    // The harness always scores with the configured (ρ, λ).
    let scoring = config.loss_params()?;
    let constants = problem_constants(config, &plant, params.rho);
    let (mut alg, split): (Box<dyn OnlineAlgorithm>, Option<LoadSplit>) = match policy {
        Policy::Baseline => (Box::new(ZeroPolicy::new(dim)), None),
        _ => build_algorithm(config, &plant, params, &constants, &mut plan_rng)?,
    };
    let bandit_fraction = alg.bandit_fraction();

    let hours = match config.scenario {
        Scenario::Tcl => config.tcl.step_minutes / 60.0,
        Scenario::Ev => config.ev.step_minutes / 60.0,
    };
    let baseline_power = plant.baseline();

    // Warm-up rounds run at t = -1, 0 on their own noise stream.
    while alg.warmup_remaining() > 0 {
        let t = 1 - alg.warmup_remaining() as i64;
        let s_eff = make_setpoint(&config.setpoint, t) - baseline_power;
        let played = alg.play(&mut alg_rng).map_err(|e| e.at_round(0))?;
        let response = plant.respond(&config.noise, &mut warmup_rng)?;
        let obs = feedback_channel(
            alg.expected_feedback(),
            &response,
            s_eff,
            &played,
            split.as_ref(),
        )?;
        alg.observe(&obs).map_err(|e| e.at_round(0))?;
        plant.step(&played, &response, hours)?;
    }

    let t_max = config.rounds;
    let mut ledger = MetricsLedger::default();
    let mut history = Vec::with_capacity(t_max);
    let mut trajectories = Trajectories {
        kind: match config.scenario {
            Scenario::Tcl => StateKind::Temperature,
            Scenario::Ev => StateKind::Soc,
        },
        loads: config.tracked_loads.clone(),
        states: Vec::with_capacity(t_max),
        signals: Vec::with_capacity(t_max),
    };
    let mut mean = RunningMean::new(dim);
    let mut decomposition_error = 0.0_f64;
    let mut response_scale = scoring.rho * scoring.rho;

    for t in 1..=t_max {
        let at = |e: Error| e.at_round(t);
        let s = make_setpoint(&config.setpoint, t as i64);
        let s_eff = s - baseline_power;
        let played = alg.play(&mut alg_rng).map_err(at)?.into_inner();
        let response = plant.respond(&config.noise, &mut noise_rng).map_err(at)?;
        let obs = feedback_channel(
            alg.expected_feedback(),
            &response,
            s_eff,
            &played,
            split.as_ref(),
        )
        .map_err(at)?;
        let outcome = alg.observe(&obs).map_err(at)?;
        if outcome.played.as_slice() != played.as_slice() {
            return Err(at(Error::InvariantViolation(
                "algorithm reported a different played signal".into(),
            )));
        }
        plant.step(&played, &response, hours).map_err(at)?;

        let total = dot(&response, &played);
        let err = s_eff - total;
        let tracking = err * err;
        let mean_norm = match &plant {
            Plant::Tcl(_) => {
                mean.push(&played)?;
                norm2(mean.mean())
            }
            Plant::Ev(f) => norm2(f.weighted_mean().mean()),
        };
        let l1 = norm1(&played);
        let objective = tracking + scoring.rho * mean_norm * mean_norm + scoring.lambda * l1;

        if let (Some(split), Some(beta), Some(i_t)) = (
            split.as_ref(),
            outcome.unobserved_effect,
            outcome.observed_effect,
        ) {
            let obs_part =
                |block: &[usize]| -> f64 { block.iter().map(|&k| response[k] * played[k]).sum() };
            let f_full = (s_eff - beta - obs_part(split.observed())).powi(2);
            let f_bandit = (s_eff - i_t - obs_part(split.unobserved())).powi(2);
            decomposition_error = decomposition_error
                .max(relative_gap(f_full, tracking))
                .max(relative_gap(f_bandit, tracking));
        }

        let simultaneous = match &plant {
            Plant::Ev(f) => {
                let n = f.len();
                (0..n).any(|i| played[i].abs().min(played[n + i].abs()) > 1e-2)
            }
            Plant::Tcl(_) => false,
        };

        response_scale = response_scale.max(dot(&response, &response));
        ledger.setpoint.push(s);
        ledger.effective_setpoint.push(s_eff);
        ledger.adjustment.push(total);
        ledger.tracking_loss.push(tracking);
        ledger.objective.push(objective);
        ledger.mean_norm.push(mean_norm);
        ledger.l1_norm.push(l1);
        ledger.simultaneous.push(simultaneous);

        trajectories.states.push(plant.states(&trajectories.loads));
        trajectories.signals.push(
            trajectories
                .loads
                .iter()
                .map(|&i| match &plant {
                    Plant::Tcl(_) => played[i],
                    Plant::Ev(f) => played[i] + played[f.len() + i],
                })
                .collect(),
        );
        history.push(RoundRecord {
            effective_setpoint: s_eff,
            response,
            played,
        });
    }

    let ev_params = match &plant {
        Plant::Ev(f) => Some(f.params().to_vec()),
        Plant::Tcl(_) => None,
    };
    if config.compute_regret {
        let (series, solution) =
            regret_series(&history, scoring, ev_params.as_deref(), &ledger.objective)?;
        ledger.regret = Some(series);
        ledger.hindsight = Some(solution);
    }
    let saturation_events = match &plant {
        Plant::Ev(f) => f.saturation_events(),
        Plant::Tcl(_) => 0,
    };
    Ok(TrialRun {
        ledger,
        trajectories,
        history,
        decomposition_error,
        bandit_fraction,
        response_scale,
        constants,
        saturation_events,
    })
}

/// Running means of the efficiency-weighted response coefficients:
/// for a fixed signal `(μ_c, μ_d)`, `⟨μ^w⟩_t = a_t⊙μ_c + b_t⊙μ_d`.
fn ev_weight_means(history: &[RoundRecord], params: &[EvParams]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let n = params.len();
    let mut a_sum = vec![0.0; n];
    let mut b_sum = vec![0.0; n];
    history
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let t = (k + 1) as f64;
            for i in 0..n {
                a_sum[i] += params[i].eta_inj * r.response[i];
                b_sum[i] += r.response[n + i] / params[i].eta_ext;
            }
            (
                a_sum.iter().map(|x| x / t).collect(),
                b_sum.iter().map(|x| x / t).collect(),
            )
        })
        .collect()
}

/// `Σ_t F_t(μ)` for a fixed `μ`, as a composite quadratic.
pub fn hindsight_problem(
    history: &[RoundRecord],
    params: LossParams,
    ev_params: Option<&[EvParams]>,
) -> Result<CompositeQuadratic> {
    let dim = history
        .first()
        .map(|r| r.response.len())
        .ok_or_else(|| Error::InvalidArgument("empty round history".into()))?;
    let bounds = match ev_params {
        Some(p) => {
            check_len(2 * p.len(), dim)?;
            ev_bounds(p.len())
        }
        None => Bounds::symmetric(dim),
    };
    let mut problem = CompositeQuadratic::zero(bounds);
    for r in history {
        problem.add_squared_residual(r.effective_setpoint, &r.response, 1.0)?;
    }
    let t = history.len() as f64;
    match ev_params {
        Some(p) if params.rho != 0.0 => {
            for (a, b) in ev_weight_means(history, p) {
                problem.add_paired_ridge(&a, &b, params.rho)?;
            }
        }
        Some(_) => {}
        None => problem.add_ridge(params.rho * t),
    }
    problem.add_l1(params.lambda * t);
    Ok(problem)
}

/// Per-round comparator values `F_t(μ*)`.
fn comparator_values(
    history: &[RoundRecord],
    params: LossParams,
    ev_params: Option<&[EvParams]>,
    mu: &[f64],
) -> Vec<f64> {
    let l1 = params.lambda * norm1(mu);
    let weights = ev_params.map(|p| ev_weight_means(history, p));
    history
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let err = r.effective_setpoint - dot(&r.response, mu);
            let mean_sq = match &weights {
                Some(w) => {
                    let (a, b) = &w[k];
                    let n = a.len();
                    (0..n)
                        .map(|i| (a[i] * mu[i] + b[i] * mu[n + i]).powi(2))
                        .sum()
                }
                None => dot(mu, mu),
            };
            err * err + params.rho * mean_sq + l1
        })
        .collect()
}

/// `R_t = Σ_{s≤t} F_s(μ_s) - F_s(μ*)` against the best fixed signal over the
/// whole history.
pub fn regret_series(
    history: &[RoundRecord],
    params: LossParams,
    ev_params: Option<&[EvParams]>,
    objective: &[f64],
) -> Result<(Vec<f64>, HindsightSolution)> {
    check_len(history.len(), objective.len())?;
    let problem = hindsight_problem(history, params, ev_params)?;
    let solution = hindsight_optimum(&problem)?;
    let comparator = comparator_values(history, params, ev_params, &solution.mu);
    let gaps: Vec<f64> = objective
        .iter()
        .zip(&comparator)
        .map(|(f, g)| f - g)
        .collect();
    Ok((cumulative(&gaps), solution))
}

/// `R_t` at horizon `t`, against the best fixed signal for the first `t`
/// rounds only.
pub fn horizon_regret(
    history: &[RoundRecord],
    params: LossParams,
    ev_params: Option<&[EvParams]>,
    objective: &[f64],
    t: usize,
) -> Result<(f64, HindsightSolution)> {
    check_len(history.len(), objective.len())?;
    if t == 0 || t > history.len() {
        return Err(Error::InvalidArgument(format!(
            "horizon {t} outside 1..={}",
            history.len()
        )));
    }
    let problem = hindsight_problem(&history[..t], params, ev_params)?;
    let solution = hindsight_optimum(&problem)?;
    let incurred: f64 = objective[..t].iter().sum();
    Ok((incurred - solution.value, solution))
}

/// `100·(1 - Σℓ_DR / Σℓ_noDR)`.
pub fn improvement_percent(ledger: &MetricsLedger, baseline: &MetricsLedger) -> Result<f64> {
    check_len(baseline.len(), ledger.len())?;
    let base = baseline.total_loss();
    if base == 0.0 {
        return Err(Error::InvalidArgument(
            "baseline loss is zero; improvement is undefined".into(),
        ));
    }
    Ok(100.0 * (1.0 - ledger.total_loss() / base))
}

/// `100·(1 - mean_t x_reg / mean_t x_unreg)`, or 0 when both are zero.
fn reduction_percent(reg: &[f64], unreg: &[f64]) -> Result<f64> {
    check_len(unreg.len(), reg.len())?;
    let r: f64 = reg.iter().sum();
    let u: f64 = unreg.iter().sum();
    if u == 0.0 {
        return Ok(if r == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    Ok(100.0 * (1.0 - r / u))
}

/// Relative reduction of the mean-norm and ℓ1 series of a regularized run
/// against its unregularized twin.
pub fn regularizer_effect(reg: &MetricsLedger, unreg: &MetricsLedger) -> Result<(f64, f64)> {
    Ok((
        reduction_percent(&reg.mean_norm, &unreg.mean_norm)?,
        reduction_percent(&reg.l1_norm, &unreg.l1_norm)?,
    ))
}

pub fn simultaneity_fraction(ledger: &MetricsLedger) -> f64 {
    if ledger.simultaneous.is_empty() {
        return 0.0;
    }
    ledger.simultaneous.iter().filter(|&&b| b).count() as f64 / ledger.simultaneous.len() as f64
}

/// `4χ√(TKB)`.
pub fn regret_bound(chi: f64, rounds: usize, response_scale: f64, loss_bound: f64) -> f64 {
    4.0 * chi * (rounds as f64 * response_scale * loss_bound).sqrt()
}

/// Headline numbers of one trial. Fields that do not apply are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrialSummary {
    pub improvement: f64,
    pub unregularized_improvement: Option<f64>,
    pub mean_improvement: Option<f64>,
    pub sparsity_improvement: Option<f64>,
    /// Fraction of rounds with simultaneous charging and discharging (EV).
    pub simultaneity: Option<f64>,
    pub unregularized_simultaneity: Option<f64>,
    pub regret: Option<f64>,
    /// `R_{T/4} / (T/4)`, each horizon against its own hindsight optimum.
    pub early_average_regret: Option<f64>,
    /// `R_T / T`.
    pub final_average_regret: Option<f64>,
    pub regret_bound: Option<f64>,
    pub hindsight_converged: Option<bool>,
    pub decomposition_error: f64,
    pub bandit_fraction: Option<f64>,
    pub saturation_events: usize,
}

/// One trial with its regime-specific extras.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub summary: TrialSummary,
    pub run: TrialRun,
    pub baseline: MetricsLedger,
}

pub fn run_trial_set(config: &ScenarioConfig, trial: usize) -> Result<TrialOutcome> {
    let run = run_trial(config, trial, Policy::Configured)?;
    let baseline_config = ScenarioConfig {
        compute_regret: false,
        ..config.clone()
    };
    let baseline = run_trial(&baseline_config, trial, Policy::Baseline)?.ledger;
    let mut summary = TrialSummary {
        improvement: improvement_percent(&run.ledger, &baseline)?,
        simultaneity: (config.scenario == Scenario::Ev).then(|| simultaneity_fraction(&run.ledger)),
        decomposition_error: run.decomposition_error,
        bandit_fraction: run.bandit_fraction,
        saturation_events: run.saturation_events,
        ..TrialSummary::default()
    };
    if config.compare_unregularized && config.is_regularized() {
        let unreg = run_trial(&baseline_config, trial, Policy::Unregularized)?.ledger;
        let (mean, sparsity) = regularizer_effect(&run.ledger, &unreg)?;
        summary.unregularized_improvement = Some(improvement_percent(&unreg, &baseline)?);
        summary.mean_improvement = Some(mean);
        summary.sparsity_improvement = Some(sparsity);
        summary.unregularized_simultaneity =
            (config.scenario == Scenario::Ev).then(|| simultaneity_fraction(&unreg));
    }
    if let (Some(regret), Some(solution)) = (&run.ledger.regret, &run.ledger.hindsight) {
        let t = regret.len();
        let quarter = t / 4;
        summary.regret = regret.last().copied();
        let scoring = config.loss_params()?;
        let ev_params = match config.scenario {
            Scenario::Ev => Some(vec![config.ev.params; config.loads]),
            Scenario::Tcl => None,
        };
        let (early, early_solution) = horizon_regret(
            &run.history,
            scoring,
            ev_params.as_deref(),
            &run.ledger.objective,
            quarter,
        )?;
        summary.final_average_regret = Some(regret[t - 1] / t as f64);
        summary.early_average_regret = Some(early / quarter as f64);
        summary.hindsight_converged = Some(solution.converged && early_solution.converged);
        if config.feedback == FeedbackRegime::Full {
            summary.regret_bound = Some(regret_bound(
                config.tuning.chi,
                t,
                run.response_scale,
                run.constants.loss_bound,
            ));
        }
    }
    Ok(TrialOutcome {
        summary,
        run,
        baseline,
    })
}

/// Trial-averaged per-round series.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundRow {
    pub t: usize,
    pub setpoint: f64,
    pub adjustment: f64,
    pub loss: f64,
    pub cumulative_loss: f64,
    pub baseline_cumulative_loss: f64,
    pub regret: Option<f64>,
    pub mean_norm: f64,
    pub l1_norm: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ScenarioConfig,
    pub trials: Vec<TrialSummary>,
    pub summary: TrialSummary,
    pub rounds: Vec<RoundRow>,
    /// Trajectories of the first trial.
    pub trajectories: Trajectories,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

fn mean_opt(trials: &[TrialSummary], f: impl Fn(&TrialSummary) -> Option<f64>) -> Option<f64> {
    let values: Option<Vec<f64>> = trials.iter().map(&f).collect();
    values
        .filter(|v| !v.is_empty())
        .map(|v| mean_of(v.into_iter()))
}

/// Field-wise arithmetic mean of trial summaries.
pub fn average_summaries(trials: &[TrialSummary]) -> TrialSummary {
    if trials.is_empty() {
        return TrialSummary::default();
    }
    TrialSummary {
        improvement: mean_of(trials.iter().map(|s| s.improvement)),
        unregularized_improvement: mean_opt(trials, |s| s.unregularized_improvement),
        mean_improvement: mean_opt(trials, |s| s.mean_improvement),
        sparsity_improvement: mean_opt(trials, |s| s.sparsity_improvement),
        simultaneity: mean_opt(trials, |s| s.simultaneity),
        unregularized_simultaneity: mean_opt(trials, |s| s.unregularized_simultaneity),
        regret: mean_opt(trials, |s| s.regret),
        early_average_regret: mean_opt(trials, |s| s.early_average_regret),
        final_average_regret: mean_opt(trials, |s| s.final_average_regret),
        regret_bound: mean_opt(trials, |s| s.regret_bound),
        hindsight_converged: trials
            .iter()
            .map(|s| s.hindsight_converged)
            .collect::<Option<Vec<_>>>()
            .map(|v| v.into_iter().all(|b| b)),
        decomposition_error: trials
            .iter()
            .map(|s| s.decomposition_error)
            .fold(0.0, f64::max),
        bandit_fraction: mean_opt(trials, |s| s.bandit_fraction),
        saturation_events: trials.iter().map(|s| s.saturation_events).sum(),
    }
}

/// Runs every trial (in parallel) and aggregates in trial order, so the
/// result does not depend on scheduling.
pub fn run_experiment(config: &ScenarioConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let outcomes: Vec<TrialOutcome> = (0..config.trials)
        .into_par_iter()
        .map(|k| run_trial_set(config, k))
        .collect::<Result<_>>()?;

    let t_max = config.rounds;
    let k = outcomes.len() as f64;
    let mut rows = Vec::with_capacity(t_max);
    let cum: Vec<(Vec<f64>, Vec<f64>)> = outcomes
        .iter()
        .map(|o| (o.run.ledger.cumulative_loss(), o.baseline.cumulative_loss()))
        .collect();
    for t in 0..t_max {
        let avg = |f: &dyn Fn(&TrialOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / k;
        let regret = outcomes
            .iter()
            .map(|o| o.run.ledger.regret.as_ref().map(|r| r[t]))
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / k);
        rows.push(RoundRow {
            t: t + 1,
            setpoint: outcomes[0].run.ledger.setpoint[t],
            adjustment: avg(&|o| o.run.ledger.adjustment[t]),
            loss: avg(&|o| o.run.ledger.tracking_loss[t]),
            cumulative_loss: cum.iter().map(|c| c.0[t]).sum::<f64>() / k,
            baseline_cumulative_loss: cum.iter().map(|c| c.1[t]).sum::<f64>() / k,
            regret,
            mean_norm: avg(&|o| o.run.ledger.mean_norm[t]),
            l1_norm: avg(&|o| o.run.ledger.l1_norm[t]),
        });
    }
    let trials: Vec<TrialSummary> = outcomes.iter().map(|o| o.summary.clone()).collect();
    let summary = average_summaries(&trials);
    let trajectories = outcomes
        .into_iter()
        .next()
        .map(|o| o.run.trajectories)
        .expect("at least one trial");
    Ok(ExperimentResult {
        config: config.clone(),
        trials,
        summary,
        rounds: rows,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setpoint_examples() {
        let tcl = SetpointParams::for_scenario(Scenario::Tcl);
        let ev = SetpointParams::for_scenario(Scenario::Ev);
        assert_eq!(make_setpoint(&tcl, 0), 155.0);
        assert_eq!(make_setpoint(&ev, 0), 0.0);
        for t in 1..2000 {
            let s = make_setpoint(&tcl, t);
            assert!((140.0..=170.0).contains(&s));
        }
    }

    #[test]
    fn channel_reveals_only_what_the_regime_allows() {
        let c = [1.0, 2.0, 3.0, 4.0];
        let mu = [0.5, 0.5, 0.0, -1.0];
        match feedback_channel(FeedbackKind::Full, &c, 7.0, &mu, None).unwrap() {
            FeedbackObservation::Full { response, setpoint } => {
                assert_eq!(response, c.to_vec());
                assert_eq!(setpoint, 7.0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            feedback_channel(FeedbackKind::Aggregate, &c, 7.0, &mu, None).unwrap(),
            FeedbackObservation::Aggregate {
                total: -2.5,
                setpoint: 7.0
            }
        );
        let split = LoadSplit::last(4, 2).unwrap();
        assert_eq!(
            feedback_channel(FeedbackKind::Partial, &c, 7.0, &mu, Some(&split)).unwrap(),
            FeedbackObservation::Partial {
                observed: vec![3.0, 4.0],
                total: -2.5,
                setpoint: 7.0
            }
        );
        assert!(feedback_channel(FeedbackKind::Partial, &c, 7.0, &mu, None).is_err());
    }

    #[test]
    fn trial_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|k| trial_seed(7, k)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn validation_rejects_bad_combinations() {
        let mut c = ScenarioConfig::new(Scenario::Tcl, FeedbackRegime::Partial);
        c.observed = 100;
        assert!(c.validate().is_err());
        c.observed = 10;
        c.rho = 1.0;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::new(Scenario::Ev, FeedbackRegime::Bandit);
        assert!(c.validate().is_err());
        c.feedback = FeedbackRegime::Full;
        c.rounds = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn identical_ledgers_show_no_improvement() {
        let ledger = MetricsLedger {
            tracking_loss: vec![1.0, 2.0],
            mean_norm: vec![0.5, 0.5],
            l1_norm: vec![1.0, 0.0],
            ..Default::default()
        };
        assert_eq!(improvement_percent(&ledger, &ledger).unwrap(), 0.0);
        assert_eq!(regularizer_effect(&ledger, &ledger).unwrap(), (0.0, 0.0));
        let short = MetricsLedger {
            tracking_loss: vec![1.0],
            ..Default::default()
        };
        assert!(improvement_percent(&short, &ledger).is_err());
    }

    #[test]
    fn averaging_is_field_wise() {
        let a = TrialSummary {
            improvement: 10.0,
            mean_improvement: Some(1.0),
            ..Default::default()
        };
        let b = TrialSummary {
            improvement: 20.0,
            mean_improvement: Some(3.0),
            ..Default::default()
        };
        let avg = average_summaries(&[a, b]);
        assert_eq!(avg.improvement, 15.0);
        assert_eq!(avg.mean_improvement, Some(2.0));
        assert_eq!(avg.regret, None);
    }
}
