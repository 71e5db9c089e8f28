//! Round-by-round online algorithms for setpoint tracking.
//!
//! Each round is split in two calls: [`OnlineAlgorithm::play`] emits the
//! signal dispatched to the loads (sampling any exploration direction) and
//! [`OnlineAlgorithm::observe`] consumes exactly the feedback the regime
//! allows and advances the state to the next round.

use rand::RngCore;

use crate::error::{check_len, Error, Result};
use crate::loads::{ev_loss_and_gradient, ev_weighted_signal, EvParams};
use crate::oco::{
    bernoulli_probability, dot, full_gradient, gradient_estimate, project_shrunk_box, prox_step,
    sample_unit_sphere, smooth_loss, step_schedule, AdjustmentSignal, Bounds, FeedbackRegime,
    LossParams, ProblemConstants, RunningMean, StepSchedule, Tuning,
};

/// Slack allowed when checking that a played signal lies in its box.
const PLAY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeedbackKind {
    Full,
    Aggregate,
    Partial,
}

impl FeedbackKind {
    pub fn name(self) -> &'static str {
        match self {
            FeedbackKind::Full => "full",
            FeedbackKind::Aggregate => "aggregate",
            FeedbackKind::Partial => "partial",
        }
    }
}

/// What the aggregator sees after dispatching a signal.
///
/// `setpoint` is the effective setpoint the adjustment must track.
#[derive(Clone, Debug, PartialEq)]
pub enum FeedbackObservation {
    /// Every load's response.
    Full { response: Vec<f64>, setpoint: f64 },
    /// Only the aggregate adjustment `c_tᵀμ_t`.
    Aggregate { total: f64, setpoint: f64 },
    /// Responses of the observed loads, in split order, plus the aggregate.
    Partial {
        observed: Vec<f64>,
        total: f64,
        setpoint: f64,
    },
}

impl FeedbackObservation {
    pub fn kind(&self) -> FeedbackKind {
        match self {
            FeedbackObservation::Full { .. } => FeedbackKind::Full,
            FeedbackObservation::Aggregate { .. } => FeedbackKind::Aggregate,
            FeedbackObservation::Partial { .. } => FeedbackKind::Partial,
        }
    }

    pub fn setpoint(&self) -> f64 {
        match self {
            FeedbackObservation::Full { setpoint, .. }
            | FeedbackObservation::Aggregate { setpoint, .. }
            | FeedbackObservation::Partial { setpoint, .. } => *setpoint,
        }
    }

    /// `β_t = total - c_Fᵀμ_F`, the aggregate effect of the unobserved loads.
    pub fn unobserved_effect(&self, mu_observed: &[f64]) -> Option<f64> {
        match self {
            FeedbackObservation::Partial {
                observed, total, ..
            } if observed.len() == mu_observed.len() => Some(total - dot(observed, mu_observed)),
            _ => None,
        }
    }
}

fn mismatch(expected: FeedbackKind, got: &FeedbackObservation) -> Error {
    Error::FeedbackMismatch {
        expected: expected.name(),
        got: got.kind().name(),
    }
}

/// Partition of the loads into an unobserved (bandit) block and an
/// observed (full-information) block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoadSplit {
    dim: usize,
    unobserved: Vec<usize>,
    observed: Vec<usize>,
}

impl LoadSplit {
    /// The last `n` loads are observed.
    pub fn last(dim: usize, n: usize) -> Result<Self> {
        Self::with_observed(dim, (dim.saturating_sub(n)..dim).collect())
    }

    pub fn with_observed(dim: usize, observed: Vec<usize>) -> Result<Self> {
        let n = observed.len();
        if n == 0 || n >= dim {
            return Err(Error::InvalidConfiguration(format!(
                "partial feedback needs 1 <= n <= N-1 observed loads (n={n}, N={dim})"
            )));
        }
        let mut seen = vec![false; dim];
        for &i in &observed {
            if i >= dim || seen[i] {
                return Err(Error::InvalidConfiguration(format!(
                    "observed load index {i} is out of range or repeated"
                )));
            }
            seen[i] = true;
        }
        let unobserved = (0..dim).filter(|&i| !seen[i]).collect();
        Ok(Self {
            dim,
            unobserved,
            observed,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn unobserved(&self) -> &[usize] {
        &self.unobserved
    }

    pub fn gather(&self, x: &[f64], block: &[usize]) -> Vec<f64> {
        block.iter().map(|&i| x[i]).collect()
    }
}

/// Summary of one completed round, as seen by the algorithm.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    pub played: AdjustmentSignal,
    /// Loss value the update was driven by (`f_t` at the played signal).
    pub loss: f64,
    /// `β_t` (partial feedback only).
    pub unobserved_effect: Option<f64>,
    /// `i_t = c_Fᵀμ_F` (partial feedback only).
    pub observed_effect: Option<f64>,
}

pub trait OnlineAlgorithm: Send {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    /// Completed main-loop rounds.
    fn round(&self) -> usize;

    /// Feedback the next call to `observe` must carry.
    fn expected_feedback(&self) -> FeedbackKind;

    /// Rounds still to be played before the main loop starts.
    fn warmup_remaining(&self) -> usize {
        0
    }

    /// Fraction of main-loop rounds planned with bandit feedback, for
    /// algorithms that mix feedback types.
    fn bandit_fraction(&self) -> Option<f64> {
        None
    }

    /// Current (unperturbed) iterate `μ_t`.
    fn current(&self) -> &[f64];

    fn play(&mut self, rng: &mut dyn RngCore) -> Result<AdjustmentSignal>;

    fn observe(&mut self, obs: &FeedbackObservation) -> Result<RoundOutcome>;
}

fn ensure_in(bounds: &Bounds, played: &[f64]) -> Result<()> {
    if !bounds.contains(played, PLAY_TOL) {
        return Err(Error::InvariantViolation(
            "played signal left the decision set".into(),
        ));
    }
    Ok(())
}

fn not_played() -> Error {
    Error::InvariantViolation("observe called before play".into())
}

fn already_played() -> Error {
    Error::InvariantViolation("play called twice in the same round".into())
}

/// Plays the zero signal every round: the no-demand-response baseline.
#[derive(Clone, Debug)]
pub struct ZeroPolicy {
    zeros: Vec<f64>,
    round: usize,
    pending: bool,
}

impl ZeroPolicy {
    pub fn new(dim: usize) -> Self {
        Self {
            zeros: vec![0.0; dim],
            round: 0,
            pending: false,
        }
    }
}

impl OnlineAlgorithm for ZeroPolicy {
    fn name(&self) -> &'static str {
        "none"
    }

    fn dim(&self) -> usize {
        self.zeros.len()
    }

    fn round(&self) -> usize {
        self.round
    }

    fn expected_feedback(&self) -> FeedbackKind {
        FeedbackKind::Aggregate
    }

    fn current(&self) -> &[f64] {
        &self.zeros
    }

    fn play(&mut self, _rng: &mut dyn RngCore) -> Result<AdjustmentSignal> {
        if self.pending {
            return Err(already_played());
        }
        self.pending = true;
        Ok(AdjustmentSignal::zeros(self.zeros.len()))
    }

    fn observe(&mut self, obs: &FeedbackObservation) -> Result<RoundOutcome> {
        if !self.pending {
            return Err(not_played());
        }
        self.pending = false;
        self.round += 1;
        let s = obs.setpoint();
        Ok(RoundOutcome {
            played: AdjustmentSignal::zeros(self.zeros.len()),
            loss: s * s,
            unobserved_effect: None,
            observed_effect: None,
        })
    }
}

/// Composite-objective gradient descent with full feedback.
#[derive(Clone, Debug)]
pub struct Cogd {
    mu: Vec<f64>,
    mean: RunningMean,
    eta: f64,
    params: LossParams,
    bounds: Bounds,
    round: usize,
    pending: bool,
}

impl Cogd {
    pub fn new(bounds: Bounds, eta: f64, params: LossParams) -> Result<Self> {
        check_step(eta)?;
        bounds.check_origin()?;
        let dim = bounds.dim();
        Ok(Self {
            mu: vec![0.0; dim],
            mean: RunningMean::new(dim),
            eta,
            params,
            bounds,
            round: 0,
            pending: false,
        })
    }

    pub fn from_schedule(dim: usize, schedule: &StepSchedule, params: LossParams) -> Result<Self> {
        Self::new(Bounds::symmetric(dim), schedule.eta, params)
    }

    pub fn mean(&self) -> &RunningMean {
        &self.mean
    }

    /// Plays `μ_t` and applies the update for one round in a single call.
    pub fn round_with(&mut self, obs: &FeedbackObservation) -> Result<RoundOutcome> {
        self.pending = true;
        self.observe(obs)
    }
}

fn check_step(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidConfiguration(format!(
            "step size must be positive and finite, got {eta}"
        )));
    }
    Ok(())
}

impl OnlineAlgorithm for Cogd {
    fn name(&self) -> &'static str {
        "cogd"
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn round(&self) -> usize {
        self.round
    }

    fn expected_feedback(&self) -> FeedbackKind {
        FeedbackKind::Full
    }

    fn current(&self) -> &[f64] {
        &self.mu
    }

    fn play(&mut self, _rng: &mut dyn RngCore) -> Result<AdjustmentSignal> {
        if self.pending {
            return Err(already_played());
        }
        self.pending = true;
        Ok(self.mu.clone().into())
    }

    fn observe(&mut self, obs: &FeedbackObservation) -> Result<RoundOutcome> {
        let FeedbackObservation::Full { response, setpoint } = obs else {
            return Err(mismatch(FeedbackKind::Full, obs));
        };
        if !self.pending {
            return Err(not_played());
        }
        check_len(self.mu.len(), response.len())?;
        let loss = smooth_loss(*setpoint, response, &self.mu, self.params, &self.mean)?;
        let grad = full_gradient(*setpoint, response, &self.mu, self.params, &self.mean)?;
        self.mean.push(&self.mu)?;
        let played = std::mem::take(&mut self.mu);
        self.mu =
            prox_step(&played, &grad, self.eta, self.params.lambda, &self.bounds)?.into_inner();
        self.pending = false;
        self.round += 1;
        Ok(RoundOutcome {
            played: played.into(),
            loss,
            unobserved_effect: None,
            observed_effect: None,
        })
    }
}

#[derive(Clone, Debug)]
struct Perturbation {
    direction: Vec<f64>,
    played: Vec<f64>,
}

/// Bandit composite-objective gradient descent: only the aggregate
/// adjustment is observed; the gradient comes from a one-point estimate at
/// a randomly perturbed signal.
#[derive(Clone, Debug)]
pub struct Bcogd {
    mu: Vec<f64>,
    mean: RunningMean,
    eta: f64,
    delta: f64,
    params: LossParams,
    bounds: Bounds,
    shrunk: Bounds,
    round: usize,
    pending: Option<Perturbation>,
}

impl Bcogd {
    pub fn new(bounds: Bounds, eta: f64, delta: f64, params: LossParams) -> Result<Self> {
        check_step(eta)?;
        bounds.check_unit_ball()?;
        let shrunk = bounds.shrunk(delta)?;
        let dim = bounds.dim();
        Ok(Self {
            mu: shrunk.clip(&vec![0.0; dim]),
            mean: RunningMean::new(dim),
            eta,
            delta,
            params,
            bounds,
            shrunk,
            round: 0,
            pending: None,
        })
    }

    pub fn from_schedule(dim: usize, schedule: &StepSchedule, params: LossParams) -> Result<Self> {
        let delta = schedule.delta.ok_or_else(|| {
            Error::InvalidConfiguration("bandit schedule is missing an exploration radius".into())
        })?;
        Self::new(Bounds::symmetric(dim), schedule.eta, delta, params)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl OnlineAlgorithm for Bcogd {
    fn name(&self) -> &'static str {
        "bcogd"
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn round(&self) -> usize {
        self.round
    }

    fn expected_feedback(&self) -> FeedbackKind {
        FeedbackKind::Aggregate
    }

    fn current(&self) -> &[f64] {
        &self.mu
    }

    fn play(&mut self, rng: &mut dyn RngCore) -> Result<AdjustmentSignal> {
        if self.pending.is_some() {
            return Err(already_played());
        }
        let direction = sample_unit_sphere(self.mu.len(), rng)?;
        let played: Vec<f64> = self
            .mu
            .iter()
            .zip(&direction)
            .map(|(m, v)| m + self.delta * v)
            .collect();
        ensure_in(&self.bounds, &played)?;
        self.pending = Some(Perturbation {
            direction,
            played: played.clone(),
        });
        Ok(played.into())
    }

    fn observe(&mut self, obs: &FeedbackObservation) -> Result<RoundOutcome> {
        let FeedbackObservation::Aggregate { total, setpoint } = obs else {
            return Err(mismatch(FeedbackKind::Aggregate, obs));
        };
        let Perturbation { direction, played } = self.pending.take().ok_or_else(not_played)?;
        let err = setpoint - total;
        let mut loss = err * err;
        if self.params.rho != 0.0 {
            let mean = self.mean.with_signal(&played)?;
            loss += self.params.rho * dot(&mean, &mean);
        }
        let grad = gradient_estimate(loss, &direction, self.mu.len(), self.delta)?;
        self.mean.push(&played)?;
        self.mu =
            prox_step(&self.mu, &grad, self.eta, self.params.lambda, &self.shrunk)?.into_inner();
        self.round += 1;
        Ok(RoundOutcome {
            played: played.into(),
            loss,
            unobserved_effect: None,
            observed_effect: None,
        })
    }
}

/// Partial-bandit COGD: a bandit update on the unobserved block and a
/// full-information update on the observed block. The mean regularizer is
/// not used by this algorithm.
#[derive(Clone, Debug)]
pub struct Pbcogd {
    split: LoadSplit,
    mu: Vec<f64>,
    eta_unobserved: f64,
    eta_observed: f64,
    delta: f64,
    lambda: f64,
    bounds: Bounds,
    shrunk_unobserved: Bounds,
    bounds_observed: Bounds,
    round: usize,
    pending: Option<Perturbation>,
}

impl Pbcogd {
    pub fn new(
        split: LoadSplit,
        bounds: Bounds,
        eta_unobserved: f64,
        eta_observed: f64,
        delta: f64,
        lambda: f64,
    ) -> Result<Self> {
        check_step(eta_unobserved)?;
        check_step(eta_observed)?;
        check_len(split.dim(), bounds.dim())?;
        bounds.check_origin()?;
        bounds.select(split.unobserved()).check_unit_ball()?;
        let shrunk_unobserved = bounds.select(split.unobserved()).shrunk(delta)?;
        let bounds_observed = bounds.select(split.observed());
        let mut mu = vec![0.0; split.dim()];
        let start = shrunk_unobserved.clip(&split.gather(&mu, split.unobserved()));
        for (&i, x) in split.unobserved().iter().zip(start) {
            mu[i] = x;
        }
        Ok(Self {
            split,
            mu,
            eta_unobserved,
            eta_observed,
            delta,
            lambda,
            bounds,
            shrunk_unobserved,
            bounds_observed,
            round: 0,
            pending: None,
        })
    }

    pub fn from_schedule(split: LoadSplit, schedule: &StepSchedule, lambda: f64) -> Result<Self> {
        let (Some(eta2), Some(delta)) = (schedule.eta2, schedule.delta) else {
            return Err(Error::InvalidConfiguration(
                "partial schedule needs two step sizes and an exploration radius".into(),
            ));
        };
        let dim = split.dim();
        Self::new(
            split,
            Bounds::symmetric(dim),
            schedule.eta,
            eta2,
            delta,
            lambda,
        )
    }

    pub fn split(&self) -> &LoadSplit {
        &self.split
    }
}

impl OnlineAlgorithm for Pbcogd {
    fn name(&self) -> &'static str {
        "pbcogd"
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn round(&self) -> usize {
        self.round
    }

    fn expected_feedback(&self) -> FeedbackKind {
        FeedbackKind::Partial
    }

    fn current(&self) -> &[f64] {
        &self.mu
    }

    fn play(&mut self, rng: &mut dyn RngCore) -> Result<AdjustmentSignal> {
        if self.pending.is_some() {
            return Err(already_played());
        }
        let direction = sample_unit_sphere(self.split.unobserved().len(), rng)?;
        let mut played = self.mu.clone();
        for (&i, v) in self.split.unobserved().iter().zip(&direction) {
            played[i] += self.delta * v;
        }
        ensure_in(&self.bounds, &played)?;
        self.pending = Some(Perturbation {
            direction,
            played: played.clone(),
        });
        Ok(played.into())
    }

    fn observe(&mut self, obs: &FeedbackObservation) -> Result<RoundOutcome> {
        let FeedbackObservation::Partial {
            observed,
            total,
            setpoint,
        } = obs
        else {
            return Err(mismatch(FeedbackKind::Partial, obs));
        };
        check_len(self.split.observed().len(), observed.len())?;
        let Perturbation { direction, played } = self.pending.take().ok_or_else(not_played)?;

        let mu_observed = self.split.gather(&self.mu, self.split.observed());
        let mu_unobserved = self.split.gather(&self.mu, self.split.unobserved());
        let observed_effect = dot(observed, &mu_observed);
        let beta = total - observed_effect;

        let err = setpoint - total;
        let loss = err * err;
        let grad_unobserved = gradient_estimate(loss, &direction, mu_unobserved.len(), self.delta)?;
        let residual = setpoint - beta - observed_effect;
        let grad_observed: Vec<f64> = observed.iter().map(|c| -2.0 * c * residual).collect();

        // The joint update separates over the two blocks.
        let next_unobserved = prox_step(
            &mu_unobserved,
            &grad_unobserved,
            self.eta_unobserved,
            self.lambda,
            &self.shrunk_unobserved,
        )?;
        let next_observed = prox_step(
            &mu_observed,
            &grad_observed,
            self.eta_observed,
            self.lambda,
            &self.bounds_observed,
        )?;
        for (&i, &x) in self.split.unobserved().iter().zip(next_unobserved.iter()) {
            self.mu[i] = x;
        }
        for (&i, &x) in self.split.observed().iter().zip(next_observed.iter()) {
            self.mu[i] = x;
        }
        self.round += 1;
        Ok(RoundOutcome {
            played: played.into(),
            loss,
            unobserved_effect: Some(beta),
            observed_effect: Some(observed_effect),
        })
    }
}

/// Settings for [`bercogd_init`].
#[derive(Clone, Debug)]
pub struct BercogdConfig {
    pub dim: usize,
    pub horizon: usize,
    pub tuning: Tuning,
    pub constants: ProblemConstants,
    pub params: LossParams,
    /// Keep the mean-regularizer term in the gradients. Off by default: the
    /// Bernoulli algorithm is defined on the tracking loss plus `λ‖μ‖₁`.
    pub mean_regularizer: bool,
    /// Play one full-information and one bandit round before the main loop.
    pub warmup: bool,
}

#[derive(Clone, Debug)]
enum BerPending {
    Full,
    Bandit {
        anchor: Vec<f64>,
        perturbation: Perturbation,
    },
}

/// Bernoulli-feedback COGD: round `t` receives bandit feedback when the
/// presampled `I_t` is set and full feedback otherwise.
#[derive(Clone, Debug)]
pub struct Bercogd {
    mu: Vec<f64>,
    mean: RunningMean,
    plan: Vec<bool>,
    schedule: StepSchedule,
    probability: f64,
    params: LossParams,
    mean_regularizer: bool,
    bounds: Bounds,
    warmup_left: usize,
    round: usize,
    pending: Option<BerPending>,
}

/// Samples the whole feedback plan `I_1..I_T` up front, sets the step sizes
/// from the realized number of bandit rounds and queues the warm-up rounds.
pub fn bercogd_init(config: &BercogdConfig, rng: &mut dyn RngCore) -> Result<Bercogd> {
    use rand::Rng;
    let p = bernoulli_probability(config.tuning.a, config.horizon)?;
    let plan: Vec<bool> = (0..config.horizon).map(|_| rng.random_bool(p)).collect();
    Bercogd::with_plan(config, plan)
}

impl Bercogd {
    /// Builds the algorithm around a given feedback plan (`true` = bandit).
    pub fn with_plan(config: &BercogdConfig, plan: Vec<bool>) -> Result<Self> {
        let probability = bernoulli_probability(config.tuning.a, config.horizon)?;
        check_len(config.horizon, plan.len())?;
        let bandit_rounds = plan.iter().filter(|&&b| b).count();
        let schedule = step_schedule(
            FeedbackRegime::Bernoulli,
            config.horizon,
            config.dim,
            0,
            &config.constants,
            &config.tuning,
            Some(bandit_rounds),
        )?;
        check_step(schedule.eta)?;
        check_step(schedule.eta2.unwrap_or(f64::NAN))?;
        Ok(Self {
            mu: vec![0.0; config.dim],
            mean: RunningMean::new(config.dim),
            plan,
            schedule,
            probability,
            params: config.params,
            mean_regularizer: config.mean_regularizer,
            bounds: Bounds::symmetric(config.dim),
            warmup_left: if config.warmup { 2 } else { 0 },
            round: 0,
            pending: None,
        })
    }

    pub fn plan(&self) -> &[bool] {
        &self.plan
    }

    pub fn bandit_rounds(&self) -> usize {
        self.plan.iter().filter(|&&b| b).count()
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn schedule(&self) -> &StepSchedule {
        &self.schedule
    }

    fn delta(&self) -> f64 {
        self.schedule
            .delta
            .unwrap_or(crate::oco::MAX_EXPLORATION_RADIUS)
    }

    fn gradient_params(&self) -> LossParams {
        LossParams {
            rho: if self.mean_regularizer {
                self.params.rho
            } else {
                0.0
            },
            lambda: self.params.lambda,
        }
    }

    fn bandit_round_next(&self) -> bool {
        match self.warmup_left {
            2 => false,
            1 => true,
            _ => self.plan.get(self.round).copied().unwrap_or(false),
        }
    }
}

impl OnlineAlgorithm for Bercogd {
    fn name(&self) -> &'static str {
        "bercogd"
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn round(&self) -> usize {
        self.round
    }

    fn expected_feedback(&self) -> FeedbackKind {
        if self.bandit_round_next() {
            FeedbackKind::Aggregate
        } else {
            FeedbackKind::Full
        }
    }

    fn warmup_remaining(&self) -> usize {
        self.warmup_left
    }

    fn bandit_fraction(&self) -> Option<f64> {
        Some(self.bandit_rounds() as f64 / self.plan.len() as f64)
    }

    fn current(&self) -> &[f64] {
        &self.mu
    }

    fn play(&mut self, rng: &mut dyn RngCore) -> Result<AdjustmentSignal> {
        if self.pending.is_some() {
            return Err(already_played());
        }
        if self.warmup_left == 0 && self.round >= self.plan.len() {
            return Err(Error::InvariantViolation("horizon exhausted".into()));
        }
        if self.bandit_round_next() {
            let delta = self.delta();
            let anchor = project_shrunk_box(&self.mu, delta, &self.bounds)?.into_inner();
            let direction = sample_unit_sphere(self.mu.len(), rng)?;
            let played: Vec<f64> = anchor
                .iter()
                .zip(&direction)
                .map(|(m, v)| m + delta * v)
                .collect();
            ensure_in(&self.bounds, &played)?;
            self.pending = Some(BerPending::Bandit {
                anchor,
                perturbation: Perturbation {
                    direction,
                    played: played.clone(),
                },
            });
            Ok(played.into())
        } else {
            self.pending = Some(BerPending::Full);
            Ok(self.mu.clone().into())
        }
    }

    fn observe(&mut self, obs: &FeedbackObservation) -> Result<RoundOutcome> {
        let expected = self.expected_feedback();
        if obs.kind() != expected {
            return Err(mismatch(expected, obs));
        }
        let pending = self.pending.take().ok_or_else(not_played)?;
        let params = self.gradient_params();
        let eta_full = self.schedule.eta;
        let eta_bandit = self.schedule.eta2.unwrap_or(eta_full);
        let (played, loss) = match (pending, obs) {
            (
                BerPending::Bandit {
                    anchor,
                    perturbation,
                },
                FeedbackObservation::Aggregate { total, setpoint },
            ) => {
                let err = setpoint - total;
                let mut loss = err * err;
                if params.rho != 0.0 {
                    let mean = self.mean.with_signal(&perturbation.played)?;
                    loss += params.rho * dot(&mean, &mean);
                }
                let grad =
                    gradient_estimate(loss, &perturbation.direction, self.mu.len(), self.delta())?;
                // Back onto the full set, not the shrunk one.
                self.mu = prox_step(&anchor, &grad, eta_bandit, params.lambda, &self.bounds)?
                    .into_inner();
                (perturbation.played, loss)
            }
            (BerPending::Full, FeedbackObservation::Full { response, setpoint }) => {
                check_len(self.mu.len(), response.len())?;
                let loss = smooth_loss(*setpoint, response, &self.mu, params, &self.mean)?;
                let grad = full_gradient(*setpoint, response, &self.mu, params, &self.mean)?;
                let played = std::mem::take(&mut self.mu);
                self.mu =
                    prox_step(&played, &grad, eta_full, params.lambda, &self.bounds)?.into_inner();
                (played, loss)
            }
            (_, obs) => return Err(mismatch(expected, obs)),
        };
        self.mean.push(&played)?;
        if self.warmup_left > 0 {
            self.warmup_left -= 1;
        } else {
            self.round += 1;
        }
        Ok(RoundOutcome {
            played: played.into(),
            loss,
            unobserved_effect: None,
            observed_effect: None,
        })
    }
}

/// Full-information COGD on an EV fleet. The decision vector stacks the
/// charging signals `μ_c ∈ [0,1]^N` over the discharging signals
/// `μ_d ∈ [-1,0]^N`; the mean regularizer acts on the efficiency-weighted
/// state-of-charge impact.
#[derive(Clone, Debug)]
pub struct EvCogd {
    params: Vec<EvParams>,
    mu: Vec<f64>,
    weighted_mean: RunningMean,
    eta: f64,
    loss_params: LossParams,
    bounds: Bounds,
    round: usize,
    pending: bool,
}

impl EvCogd {
    pub fn new(params: Vec<EvParams>, eta: f64, loss_params: LossParams) -> Result<Self> {
        check_step(eta)?;
        let n = params.len();
        let bounds = ev_bounds(n);
        Ok(Self {
            params,
            mu: vec![0.0; 2 * n],
            weighted_mean: RunningMean::new(n),
            eta,
            loss_params,
            bounds,
            round: 0,
            pending: false,
        })
    }

    pub fn weighted_mean(&self) -> &RunningMean {
        &self.weighted_mean
    }
}

/// `[0,1]^N × [-1,0]^N`.
pub fn ev_bounds(n: usize) -> Bounds {
    Bounds::symmetric(0)
        .concat(&Bounds::uniform(n, 0.0, 1.0).expect("valid box"))
        .concat(&Bounds::uniform(n, -1.0, 0.0).expect("valid box"))
}

impl OnlineAlgorithm for EvCogd {
    fn name(&self) -> &'static str {
        "ev-cogd"
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn round(&self) -> usize {
        self.round
    }

    fn expected_feedback(&self) -> FeedbackKind {
        FeedbackKind::Full
    }

    fn current(&self) -> &[f64] {
        &self.mu
    }

    fn play(&mut self, _rng: &mut dyn RngCore) -> Result<AdjustmentSignal> {
        if self.pending {
            return Err(already_played());
        }
        self.pending = true;
        Ok(self.mu.clone().into())
    }

    fn observe(&mut self, obs: &FeedbackObservation) -> Result<RoundOutcome> {
        let FeedbackObservation::Full { response, setpoint } = obs else {
            return Err(mismatch(FeedbackKind::Full, obs));
        };
        if !self.pending {
            return Err(not_played());
        }
        let n = self.params.len();
        check_len(2 * n, response.len())?;
        let (c_c, c_d) = response.split_at(n);
        let (mu_c, mu_d) = self.mu.split_at(n);
        let (loss, grad_c, grad_d) = ev_loss_and_gradient(
            *setpoint,
            c_c,
            c_d,
            mu_c,
            mu_d,
            self.loss_params.rho,
            &self.weighted_mean,
            &self.params,
        )?;
        let weighted: Vec<f64> = (0..n)
            .map(|i| ev_weighted_signal(&self.params[i], c_c[i], c_d[i], mu_c[i], mu_d[i]))
            .collect();
        self.weighted_mean.push(&weighted)?;
        let mut grad = grad_c;
        grad.extend(grad_d);
        let played = std::mem::take(&mut self.mu);
        self.mu = prox_step(
            &played,
            &grad,
            self.eta,
            self.loss_params.lambda,
            &self.bounds,
        )?
        .into_inner();
        self.pending = false;
        self.round += 1;
        Ok(RoundOutcome {
            played: played.into(),
            loss,
            unobserved_effect: None,
            observed_effect: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn full(c: Vec<f64>, s: f64) -> FeedbackObservation {
        FeedbackObservation::Full {
            response: c,
            setpoint: s,
        }
    }

    #[test]
    fn cogd_hand_iteration() {
        let mut alg = Cogd::new(Bounds::symmetric(1), 0.25, LossParams::NONE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(alg.play(&mut rng).unwrap().as_slice(), &[0.0]);
        alg.observe(&full(vec![1.0], 1.0)).unwrap();
        assert_eq!(alg.current(), &[0.5]);
        alg.play(&mut rng).unwrap();
        alg.observe(&full(vec![1.0], 1.0)).unwrap();
        assert_eq!(alg.current(), &[0.75]);
    }

    #[test]
    fn cogd_zero_response_stays_at_origin() {
        let mut alg = Cogd::new(Bounds::symmetric(3), 0.5, LossParams::NONE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in 0..50 {
            alg.play(&mut rng).unwrap();
            alg.observe(&full(vec![0.0; 3], (t as f64).sin())).unwrap();
        }
        assert_eq!(alg.current(), &[0.0; 3]);
    }

    #[test]
    fn cogd_rejects_wrong_feedback() {
        let mut alg = Cogd::new(Bounds::symmetric(1), 0.25, LossParams::NONE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        alg.play(&mut rng).unwrap();
        let err = alg
            .observe(&FeedbackObservation::Aggregate {
                total: 0.0,
                setpoint: 1.0,
            })
            .unwrap_err();
        assert!(matches!(err, Error::FeedbackMismatch { .. }));
    }

    #[test]
    fn observe_before_play_is_an_error() {
        let mut alg = Cogd::new(Bounds::symmetric(1), 0.25, LossParams::NONE).unwrap();
        assert!(matches!(
            alg.observe(&full(vec![1.0], 1.0)),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn bcogd_zero_problem_stays_at_origin() {
        let mut alg = Bcogd::new(Bounds::symmetric(4), 0.1, 0.3, LossParams::NONE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let played = alg.play(&mut rng).unwrap();
            assert!(Bounds::symmetric(4).contains(&played, 0.0));
            let out = alg
                .observe(&FeedbackObservation::Aggregate {
                    total: 0.0,
                    setpoint: 0.0,
                })
                .unwrap();
            assert_eq!(out.loss, 0.0);
        }
        assert_eq!(alg.current(), &[0.0; 4]);
    }

    #[test]
    fn split_validation() {
        assert!(LoadSplit::last(5, 0).is_err());
        assert!(LoadSplit::last(5, 5).is_err());
        let s = LoadSplit::last(5, 2).unwrap();
        assert_eq!(s.observed(), &[3, 4]);
        assert_eq!(s.unobserved(), &[0, 1, 2]);
        assert!(LoadSplit::with_observed(5, vec![1, 1]).is_err());
        let s = LoadSplit::with_observed(4, vec![0, 2]).unwrap();
        assert_eq!(s.unobserved(), &[1, 3]);
    }

    #[test]
    fn pbcogd_reports_decomposition_terms() {
        let split = LoadSplit::last(3, 1).unwrap();
        let mut alg = Pbcogd::new(split, Bounds::symmetric(3), 0.01, 0.1, 0.2, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = [1.0, 2.0, 3.0];
        let played = alg.play(&mut rng).unwrap();
        let total = dot(&c, &played);
        let out = alg
            .observe(&FeedbackObservation::Partial {
                observed: vec![3.0],
                total,
                setpoint: 4.0,
            })
            .unwrap();
        let beta = out.unobserved_effect.unwrap();
        assert!((beta - (c[0] * played[0] + c[1] * played[1])).abs() < 1e-12);
        assert_eq!(out.observed_effect, Some(0.0));
        // Observed block: μ_F = 0 - 0.1 * (-2*3*(4 - total))
        let expected = (0.1 * 6.0 * (4.0 - total)).clamp(-1.0, 1.0);
        assert!((alg.current()[2] - expected).abs() < 1e-12);
    }

    fn ber_config(dim: usize, horizon: usize, a: f64) -> BercogdConfig {
        BercogdConfig {
            dim,
            horizon,
            tuning: Tuning {
                chi: 1.0,
                chi_bandit: 1.0,
                chi_f: 1.0,
                chi_b: 1.0,
                a,
            },
            constants: ProblemConstants::conservative(
                dim,
                2.0 * (dim as f64).sqrt(),
                2.0,
                3.0,
                0.0,
            ),
            params: LossParams::NONE,
            mean_regularizer: false,
            warmup: true,
        }
    }

    #[test]
    fn bercogd_warmup_order_then_plan() {
        let config = ber_config(2, 4, 1.0);
        let mut alg = Bercogd::with_plan(&config, vec![true, false, false, true]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut kinds = Vec::new();
        for _ in 0..6 {
            let kind = alg.expected_feedback();
            kinds.push(kind);
            let played = alg.play(&mut rng).unwrap();
            let obs = match kind {
                FeedbackKind::Full => full(vec![1.0, 1.0], 1.0),
                _ => FeedbackObservation::Aggregate {
                    total: played.iter().sum(),
                    setpoint: 1.0,
                },
            };
            alg.observe(&obs).unwrap();
        }
        use FeedbackKind::*;
        assert_eq!(
            kinds,
            vec![Full, Aggregate, Aggregate, Full, Full, Aggregate]
        );
        assert_eq!(alg.round(), 4);
        assert!(alg.play(&mut rng).is_err());
    }

    #[test]
    fn bercogd_rejects_mismatched_feedback() {
        let config = ber_config(2, 4, 1.0);
        let mut alg = Bercogd::with_plan(&config, vec![true; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        alg.play(&mut rng).unwrap();
        assert!(matches!(
            alg.observe(&FeedbackObservation::Aggregate {
                total: 0.0,
                setpoint: 0.0
            }),
            Err(Error::FeedbackMismatch { .. })
        ));
    }

    #[test]
    fn bercogd_init_rejects_large_probability() {
        let config = ber_config(2, 600, 8.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            bercogd_init(&config, &mut rng),
            Err(Error::InvalidConfiguration(_))
        ));
    }

    #[test]
    fn bercogd_zero_probability_is_all_full() {
        let config = ber_config(3, 200, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let alg = bercogd_init(&config, &mut rng).unwrap();
        assert_eq!(alg.bandit_rounds(), 0);
        assert_eq!(alg.probability(), 0.0);
    }

    #[test]
    fn ev_cogd_respects_sign_boxes() {
        let params = vec![EvParams::default(); 2];
        let mut alg = EvCogd::new(params, 0.05, LossParams::NONE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in 1..=50 {
            let played = alg.play(&mut rng).unwrap();
            assert!(ev_bounds(2).contains(&played, 0.0));
            alg.observe(&full(
                vec![3.0, 3.0, 1.5, 1.5],
                25.0 * (0.1 * t as f64).sin(),
            ))
            .unwrap();
        }
    }
}
