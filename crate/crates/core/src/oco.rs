//! Stateless numerical kernels shared by every online algorithm: the
//! composite tracking objective and its gradient, the one-point bandit
//! gradient estimator, the closed-form Euclidean prox over a box, the
//! running mean behind the mean regularizer, and the step-size schedules.
//!
//! Everything here is a pure function of its arguments. Randomness is
//! always passed in explicitly.

use std::ops::Deref;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Tolerance on `‖v‖₂ = 1` accepted by [`gradient_estimate`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Upper clamp on the exploration radius so the shrunk set is never empty.
pub const MAX_EXPLORATION_RADIUS: f64 = 0.5;

/// A per-load adjustment signal `μ_t`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdjustmentSignal(Vec<f64>);

impl AdjustmentSignal {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for AdjustmentSignal {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl Deref for AdjustmentSignal {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Axis-aligned box `[lo, hi]` used as a decision set.
#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_len(lo.len(), hi.len())?;
        for (i, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::InvalidArgument(format!(
                    "box coordinate {i} has invalid bounds [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[lo, hi]^dim`.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// The default decision set `[-1, 1]^dim`.
    pub fn symmetric(dim: usize) -> Self {
        Self {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// `{μ : μ/(1-δ) ∈ K}`; for `[-1,1]^N` this is `[δ-1, 1-δ]^N`.
    pub fn shrunk(&self, delta: f64) -> Result<Self> {
        check_radius(delta)?;
        let scale = 1.0 - delta;
        Ok(Self {
            lo: self.lo.iter().map(|l| l * scale).collect(),
            hi: self.hi.iter().map(|h| h * scale).collect(),
        })
    }

    /// Sub-box on the given coordinates, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            lo: indices.iter().map(|&i| self.lo[i]).collect(),
            hi: indices.iter().map(|&i| self.hi[i]).collect(),
        }
    }

    pub fn concat(&self, other: &Bounds) -> Self {
        let mut lo = self.lo.clone();
        let mut hi = self.hi.clone();
        lo.extend_from_slice(&other.lo);
        hi.extend_from_slice(&other.hi);
        Self { lo, hi }
    }

    /// The closed-form prox needs `lo <= 0 <= hi` on every coordinate.
    pub fn check_origin(&self) -> Result<()> {
        for (i, (&lo, &hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            if lo > 0.0 || hi < 0.0 {
                return Err(Error::UnsupportedBox { index: i, lo, hi });
            }
        }
        Ok(())
    }

    /// Perturbing a point of the shrunk box by `δv` stays feasible only when
    /// the box contains the unit ball.
    pub fn check_unit_ball(&self) -> Result<()> {
        for (i, (&lo, &hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            if lo > -1.0 || hi < 1.0 {
                return Err(Error::InvalidConfiguration(format!(
                    "bandit exploration needs a box containing [-1, 1] on every coordinate; coordinate {i} is [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol)
    }

    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| v.clamp(l, h))
            .collect()
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }
}

/// Running average `⟨μ⟩_t` of the signals played so far.
///
/// The sum is kept alongside the mean so that the mean after `t` updates is
/// the batch average of those `t` signals, not an accumulation of
/// recurrence round-off.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMean {
    sum: Vec<f64>,
    mean: Vec<f64>,
    rounds: usize,
}

impl RunningMean {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            mean: vec![0.0; dim],
            rounds: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// The mean that would result from adding `mu` as round `rounds + 1`:
    /// `((t-1)⟨μ⟩_{t-1} + μ)/t`.
    pub fn with_signal(&self, mu: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), mu.len())?;
        let t = (self.rounds + 1) as f64;
        Ok(self.sum.iter().zip(mu).map(|(s, m)| (s + m) / t).collect())
    }

    pub fn push(&mut self, mu: &[f64]) -> Result<()> {
        check_len(self.dim(), mu.len())?;
        self.rounds += 1;
        let t = self.rounds as f64;
        for ((s, m), &x) in self.sum.iter_mut().zip(self.mean.iter_mut()).zip(mu) {
            *s += x;
            *m = *s / t;
        }
        Ok(())
    }
}

pub fn running_mean_update(mean_prev: &RunningMean, mu: &[f64]) -> Result<RunningMean> {
    let mut next = mean_prev.clone();
    next.push(mu)?;
    Ok(next)
}

/// Regularizer weights: `rho` on the mean regularizer, `lambda` on `‖μ‖₁`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub rho: f64,
    pub lambda: f64,
}

impl LossParams {
    pub const NONE: LossParams = LossParams {
        rho: 0.0,
        lambda: 0.0,
    };

    pub fn new(rho: f64, lambda: f64) -> Result<Self> {
        if !(rho >= 0.0 && rho.is_finite() && lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "regularizer weights must be finite and nonnegative (rho={rho}, lambda={lambda})"
            )));
        }
        Ok(Self { rho, lambda })
    }

    pub fn is_unregularized(&self) -> bool {
        self.rho == 0.0 && self.lambda == 0.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// `(s_eff - cᵀμ)²`.
pub fn tracking_loss(s_eff: f64, c: &[f64], mu: &[f64]) -> Result<f64> {
    check_len(c.len(), mu.len())?;
    let err = s_eff - dot(c, mu);
    Ok(err * err)
}

/// The differentiable part `f_t(μ) = (s - cᵀμ)² + ρ‖((t-1)⟨μ⟩_{t-1} + μ)/t‖²`,
/// with `t = mean_prev.rounds() + 1`.
pub fn smooth_loss(
    s_eff: f64,
    c: &[f64],
    mu: &[f64],
    params: LossParams,
    mean_prev: &RunningMean,
) -> Result<f64> {
    let tracking = tracking_loss(s_eff, c, mu)?;
    if params.rho == 0.0 {
        return Ok(tracking);
    }
    let mean = mean_prev.with_signal(mu)?;
    Ok(tracking + params.rho * dot(&mean, &mean))
}

/// `F_t(μ) = f_t(μ) + λ‖μ‖₁`.
pub fn composite_loss(
    s_eff: f64,
    c: &[f64],
    mu: &[f64],
    params: LossParams,
    mean_prev: &RunningMean,
) -> Result<f64> {
    Ok(smooth_loss(s_eff, c, mu, params, mean_prev)? + params.lambda * norm1(mu))
}

/// `∇f_t(μ) = -2c(s - cᵀμ) + (2ρ/t)·((t-1)⟨μ⟩_{t-1} + μ)/t`.
pub fn full_gradient(
    s_eff: f64,
    c: &[f64],
    mu: &[f64],
    params: LossParams,
    mean_prev: &RunningMean,
) -> Result<Vec<f64>> {
    check_len(c.len(), mu.len())?;
    let err = s_eff - dot(c, mu);
    let mut grad: Vec<f64> = c.iter().map(|ci| -2.0 * ci * err).collect();
    if params.rho != 0.0 {
        let t = (mean_prev.rounds() + 1) as f64;
        let mean = mean_prev.with_signal(mu)?;
        let scale = 2.0 * params.rho / t;
        for (g, m) in grad.iter_mut().zip(&mean) {
            *g += scale * m;
        }
    }
    Ok(grad)
}

/// One-point gradient estimate `(dim/δ)·f(μ + δv)·v`.
pub fn gradient_estimate(loss_value: f64, v: &[f64], dim: usize, delta: f64) -> Result<Vec<f64>> {
    check_len(dim, v.len())?;
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "exploration radius must be positive, got {delta}"
        )));
    }
    let n = norm2(v);
    if (n - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::InvalidArgument(format!(
            "perturbation direction must be unit norm, got ‖v‖ = {n}"
        )));
    }
    let scale = dim as f64 / delta * loss_value;
    Ok(v.iter().map(|x| scale * x).collect())
}

/// Uniform draw from the unit sphere in `R^dim`.
pub fn sample_unit_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    match dim {
        0 => Err(Error::InvalidArgument(
            "cannot sample a direction in zero dimensions".into(),
        )),
        1 => Ok(vec![if rng.random::<bool>() { 1.0 } else { -1.0 }]),
        _ => loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm2(&v);
            if n > 0.0 && n.is_finite() {
                return Ok(v.into_iter().map(|x| x / n).collect());
            }
        },
    }
}

/// `sign(y)·max(|y| - threshold, 0)`; exactly zero at the kink.
pub fn soft_threshold(y: f64, threshold: f64) -> f64 {
    if y > threshold {
        y - threshold
    } else if y < -threshold {
        y + threshold
    } else {
        0.0
    }
}

/// Value of the per-round prox objective `η gᵀμ + ½‖μ_t - μ‖² + ηλ‖μ‖₁`.
pub fn prox_objective(mu: &[f64], mu_t: &[f64], grad: &[f64], eta: f64, lambda: f64) -> f64 {
    mu.iter()
        .zip(mu_t)
        .zip(grad)
        .map(|((&x, &x0), &g)| eta * g * x + 0.5 * (x0 - x) * (x0 - x) + eta * lambda * x.abs())
        .sum()
}

/// Exact minimizer of `η gᵀμ + ½‖μ_t - μ‖² + ηλ‖μ‖₁` over `bounds`.
///
/// The objective separates per coordinate, so the minimizer is the
/// soft-thresholded gradient step clipped to the box. That closed form is
/// only valid when every coordinate interval contains zero.
pub fn prox_step(
    mu_t: &[f64],
    grad: &[f64],
    eta: f64,
    lambda: f64,
    bounds: &Bounds,
) -> Result<AdjustmentSignal> {
    check_len(bounds.dim(), mu_t.len())?;
    check_len(bounds.dim(), grad.len())?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive and finite, got {eta}"
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sparsity weight must be nonnegative, got {lambda}"
        )));
    }
    let threshold = eta * lambda;
    let mut out = Vec::with_capacity(mu_t.len());
    for (i, ((&x, &g), (&lo, &hi))) in mu_t
        .iter()
        .zip(grad)
        .zip(bounds.lo.iter().zip(&bounds.hi))
        .enumerate()
    {
        if lo > 0.0 || hi < 0.0 {
            return Err(Error::UnsupportedBox { index: i, lo, hi });
        }
        let y = x - eta * g;
        out.push(soft_threshold(y, threshold).clamp(lo, hi));
    }
    Ok(AdjustmentSignal(out))
}

fn check_radius(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "exploration radius must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Euclidean projection onto the shrunk set `(1-δ)·bounds`.
pub fn project_shrunk_box(mu: &[f64], delta: f64, bounds: &Bounds) -> Result<AdjustmentSignal> {
    check_len(bounds.dim(), mu.len())?;
    let shrunk = bounds.shrunk(delta)?;
    Ok(AdjustmentSignal(shrunk.clip(mu)))
}

/// Which information the aggregator receives after each round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackRegime {
    Full,
    Bandit,
    Partial,
    Bernoulli,
}

impl FeedbackRegime {
    pub const ALL: [FeedbackRegime; 4] = [
        FeedbackRegime::Full,
        FeedbackRegime::Bandit,
        FeedbackRegime::Partial,
        FeedbackRegime::Bernoulli,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeedbackRegime::Full => "full",
            FeedbackRegime::Bandit => "bandit",
            FeedbackRegime::Partial => "partial",
            FeedbackRegime::Bernoulli => "bernoulli",
        }
    }
}

impl std::fmt::Display for FeedbackRegime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for FeedbackRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeedbackRegime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfiguration(format!(
                    "unknown feedback regime `{s}` (expected full, bandit, partial or bernoulli)"
                ))
            })
    }
}

/// Problem-dependent constants the schedules need: gradient bound `G`,
/// loss bound `B`, decision-set diameter `D` and Lipschitz constant `L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemConstants {
    pub gradient_bound: f64,
    pub loss_bound: f64,
    pub diameter: f64,
    pub lipschitz: f64,
}

impl ProblemConstants {
    /// Bounds derived from configuration alone:
    /// `B = (s_max + C̄N)² + ρN`, `G = 2C̄√N(s_max + C̄N) + 2ρ√N`, `L = G`,
    /// where `C̄` bounds every response coordinate and `s_max` bounds `|s_eff|`.
    pub fn conservative(
        dim: usize,
        diameter: f64,
        response_bound: f64,
        setpoint_bound: f64,
        rho: f64,
    ) -> Self {
        let n = dim as f64;
        let reach = setpoint_bound + response_bound * n;
        let gradient_bound = 2.0 * response_bound * n.sqrt() * reach + 2.0 * rho * n.sqrt();
        Self {
            gradient_bound,
            loss_bound: reach * reach + rho * n,
            diameter,
            lipschitz: gradient_bound,
        }
    }
}

/// Tuning knobs `χ` and the Bernoulli constant `a`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    /// `χ` for full-information (COGD) updates.
    pub chi: f64,
    /// `χ` for bandit (BCOGD) updates, including the unobserved block of the
    /// partial-bandit algorithm.
    pub chi_bandit: f64,
    /// `χ_F` of the Bernoulli algorithm.
    pub chi_f: f64,
    /// `χ_B` of the Bernoulli algorithm.
    pub chi_b: f64,
    /// Bernoulli constant: the bandit probability is `a / T^(1/3)`.
    pub a: f64,
}

impl Default for Tuning {
    fn default() -> Self {
        Self {
            chi: 50.0,
            chi_bandit: 5.0e3,
            chi_f: 30.0,
            chi_b: 5.0e3,
            a: 7.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSchedule {
    pub kind: FeedbackRegime,
    /// Primary step size: COGD `η`, BCOGD `η`, PBCOGD `η₁` (unobserved
    /// block) or BerCOGD `η_F`.
    pub eta: f64,
    /// PBCOGD `η₂` (observed block) or BerCOGD `η_B`.
    pub eta2: Option<f64>,
    /// Exploration radius `δ`.
    pub delta: Option<f64>,
}

/// `p = a / T^(1/3)`, rejected when it exceeds one.
pub fn bernoulli_probability(a: f64, horizon: usize) -> Result<f64> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::InvalidConfiguration(format!(
            "Bernoulli constant a must be finite and nonnegative, got {a}"
        )));
    }
    if horizon == 0 {
        return Err(Error::InvalidConfiguration(
            "horizon must be at least 1".into(),
        ));
    }
    let p = a / (horizon as f64).cbrt();
    if p > 1.0 {
        return Err(Error::InvalidConfiguration(format!(
            "bandit probability a/T^(1/3) = {a}/{horizon}^(1/3) = {p:.4} exceeds 1"
        )));
    }
    Ok(p)
}

fn exploration_radius(rounds: f64) -> f64 {
    rounds.powf(-0.25).min(MAX_EXPLORATION_RADIUS)
}

/// Step sizes for one algorithm over a horizon of `horizon` rounds.
///
/// `observed` is the size of the fully observed block (partial regime only)
/// and `bandit_rounds` the realized number of bandit rounds `T_B`
/// (Bernoulli regime only).
pub fn step_schedule(
    kind: FeedbackRegime,
    horizon: usize,
    dim: usize,
    observed: usize,
    constants: &ProblemConstants,
    tuning: &Tuning,
    bandit_rounds: Option<usize>,
) -> Result<StepSchedule> {
    if horizon == 0 {
        return Err(Error::InvalidConfiguration(
            "horizon must be at least 1".into(),
        ));
    }
    if dim == 0 {
        return Err(Error::InvalidConfiguration(
            "dimension must be at least 1".into(),
        ));
    }
    let t = horizon as f64;
    let n = dim as f64;
    let g = constants.gradient_bound;
    let b = constants.loss_bound;
    let d = constants.diameter;
    let schedule = match kind {
        FeedbackRegime::Full => StepSchedule {
            kind,
            eta: tuning.chi * (4.0 * n / (g * g * t)).sqrt(),
            eta2: None,
            delta: None,
        },
        FeedbackRegime::Bandit => StepSchedule {
            kind,
            eta: d * tuning.chi_bandit / (b * n * t.powf(0.75)),
            eta2: None,
            delta: Some(exploration_radius(t)),
        },
        FeedbackRegime::Partial => {
            if observed == 0 || observed >= dim {
                return Err(Error::InvalidConfiguration(format!(
                    "partial feedback needs 1 <= n <= N-1 observed loads (n={observed}, N={dim})"
                )));
            }
            let unobserved = (dim - observed) as f64;
            let d_unobserved = d * (unobserved / n).sqrt();
            StepSchedule {
                kind,
                eta: d_unobserved * tuning.chi_bandit / (b * unobserved * t.powf(0.75)),
                eta2: Some(tuning.chi * (4.0 * observed as f64 / (g * g * t)).sqrt()),
                delta: Some(exploration_radius(t)),
            }
        }
        FeedbackRegime::Bernoulli => {
            bernoulli_probability(tuning.a, horizon)?;
            let tb = bandit_rounds.ok_or_else(|| {
                Error::InvalidConfiguration(
                    "Bernoulli schedule needs the realized number of bandit rounds".into(),
                )
            })?;
            if tb > horizon {
                return Err(Error::InvalidConfiguration(format!(
                    "bandit rounds {tb} exceed horizon {horizon}"
                )));
            }
            let tb = tb as f64;
            StepSchedule {
                kind,
                eta: d * tuning.chi_f / (g * (t - tb + 1.0).sqrt()),
                eta2: Some(d * tuning.chi_b / (b * n * (tb + 1.0).powf(0.75))),
                delta: Some(exploration_radius(tb + 1.0)),
            }
        }
    };
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn tracking_loss_examples() {
        assert_eq!(tracking_loss(0.0, &[3.0, -1.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(tracking_loss(2.0, &[1.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(close(
            tracking_loss(2.0, &[1.0, 1.0], &[0.5, 0.0]).unwrap(),
            2.25,
            1e-15
        ));
        assert!(matches!(
            tracking_loss(1.0, &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn smooth_loss_examples() {
        let params = LossParams::new(0.0, 3.0).unwrap();
        let m = RunningMean::new(2);
        assert_eq!(
            smooth_loss(2.0, &[1.0, 1.0], &[0.5, 0.0], params, &m).unwrap(),
            tracking_loss(2.0, &[1.0, 1.0], &[0.5, 0.0]).unwrap()
        );

        let params = LossParams::new(1.0, 0.0).unwrap();
        assert!(close(
            smooth_loss(0.0, &[0.0, 0.0], &[1.0, 0.0], params, &m).unwrap(),
            1.0,
            1e-15
        ));

        let mut m1 = RunningMean::new(1);
        m1.push(&[1.0]).unwrap();
        let params = LossParams::new(4.0, 0.0).unwrap();
        assert!(close(
            smooth_loss(0.0, &[0.0], &[0.0], params, &m1).unwrap(),
            1.0,
            1e-15
        ));
    }

    #[test]
    fn full_gradient_examples() {
        let m = RunningMean::new(2);
        let g = full_gradient(2.0, &[1.0, 1.0], &[0.0, 0.0], LossParams::NONE, &m).unwrap();
        assert_eq!(g, vec![-4.0, -4.0]);

        let g = full_gradient(2.0, &[1.0, 1.0], &[1.5, 0.5], LossParams::NONE, &m).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);

        let params = LossParams::new(2.0, 0.0).unwrap();
        let g = full_gradient(0.0, &[0.0], &[1.0], params, &RunningMean::new(1)).unwrap();
        assert!(close(g[0], 4.0, 1e-15));
    }

    #[test]
    fn gradient_estimate_examples() {
        assert_eq!(
            gradient_estimate(0.0, &[0.6, 0.8], 2, 0.1).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            gradient_estimate(3.0, &[1.0, 0.0], 2, 0.5).unwrap(),
            vec![12.0, 0.0]
        );
        assert!(gradient_estimate(3.0, &[1.0, 0.0], 2, 0.0).is_err());
        assert!(gradient_estimate(3.0, &[1.0, 1.0], 2, 0.5).is_err());
    }

    #[test]
    fn sphere_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(sample_unit_sphere(0, &mut rng).is_err());

        let mut plus = 0usize;
        for _ in 0..10_000 {
            let v = sample_unit_sphere(1, &mut rng).unwrap();
            assert!(v[0] == 1.0 || v[0] == -1.0);
            plus += (v[0] > 0.0) as usize;
        }
        assert!((4_800..=5_200).contains(&plus), "plus count {plus}");

        let draws = 100_000;
        let mut mean = [0.0; 3];
        for _ in 0..draws {
            let v = sample_unit_sphere(3, &mut rng).unwrap();
            assert!(close(norm2(&v), 1.0, 1e-12));
            for (m, x) in mean.iter_mut().zip(&v) {
                *m += x / draws as f64;
            }
        }
        for m in mean {
            assert!(m.abs() < 0.02, "coordinate mean {m}");
        }
    }

    #[test]
    fn prox_step_examples() {
        let b = Bounds::symmetric(1);
        assert_eq!(
            prox_step(&[0.3], &[0.0], 0.7, 0.0, &b).unwrap().as_slice(),
            &[0.3]
        );
        let out = prox_step(&[0.5], &[1.0], 0.1, 2.0, &b).unwrap();
        assert!(close(out[0], 0.2, 1e-15));
        let out = prox_step(&[0.9], &[-5.0], 0.5, 0.0, &b).unwrap();
        assert_eq!(out[0], 1.0);
    }

    #[test]
    fn prox_step_kink_is_exact_zero() {
        // y = 0.5 - 0.25*1 = 0.25 = ηλ
        let out = prox_step(&[0.5], &[1.0], 0.25, 1.0, &Bounds::symmetric(1)).unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn prox_step_rejects_box_without_zero() {
        let b = Bounds::uniform(2, 0.1, 1.0).unwrap();
        assert!(matches!(
            prox_step(&[0.5, 0.5], &[0.0, 0.0], 0.1, 0.0, &b),
            Err(Error::UnsupportedBox { index: 0, .. })
        ));
        assert!(prox_step(&[0.5], &[0.0], 0.0, 0.0, &Bounds::symmetric(1)).is_err());
    }

    #[test]
    fn shrunk_box_projection() {
        let b = Bounds::symmetric(3);
        assert_eq!(
            project_shrunk_box(&[0.0; 3], 0.3, &b).unwrap().as_slice(),
            &[0.0; 3]
        );
        let b1 = Bounds::symmetric(1);
        assert_eq!(
            project_shrunk_box(&[1.0], 0.25, &b1).unwrap().as_slice(),
            &[0.75]
        );
        let b2 = Bounds::symmetric(2);
        let p = project_shrunk_box(&[-1.0, 0.5], 0.1, &b2).unwrap();
        assert!(close(p[0], -0.9, 1e-15) && p[1] == 0.5);
        assert!(project_shrunk_box(&[0.0], 1.0, &b1).is_err());
        assert!(project_shrunk_box(&[0.0], 0.0, &b1).is_err());
    }

    #[test]
    fn running_mean_examples() {
        let m0 = RunningMean::new(1);
        let m1 = running_mean_update(&m0, &[0.7]).unwrap();
        assert_eq!(m1.mean(), &[0.7]);
        assert_eq!(m1.rounds(), 1);

        let m = running_mean_update(&running_mean_update(&m0, &[1.0]).unwrap(), &[0.0]).unwrap();
        assert_eq!(m.mean(), &[0.5]);

        let mut m = RunningMean::new(1);
        for _ in 0..10 {
            m.push(&[0.3]).unwrap();
        }
        assert!(close(m.mean()[0], 0.3, 1e-15));
        assert!(m.push(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn schedule_examples() {
        let tuning = Tuning {
            chi: 1.0,
            chi_bandit: 1.0,
            chi_f: 1.0,
            chi_b: 1.0,
            a: 7.6,
        };
        let constants = ProblemConstants {
            gradient_bound: 2.0,
            loss_bound: 1.0,
            diameter: 20.0,
            lipschitz: 2.0,
        };
        let full = step_schedule(
            FeedbackRegime::Full,
            10_000,
            100,
            0,
            &constants,
            &tuning,
            None,
        )
        .unwrap();
        assert!(close(full.eta, 0.1, 1e-15));

        let bandit = step_schedule(
            FeedbackRegime::Bandit,
            10_000,
            100,
            0,
            &constants,
            &tuning,
            None,
        )
        .unwrap();
        assert!(close(bandit.delta.unwrap(), 0.1, 1e-15));

        let ber = step_schedule(
            FeedbackRegime::Bernoulli,
            600,
            100,
            0,
            &constants,
            &tuning,
            Some(0),
        )
        .unwrap();
        assert_eq!(ber.delta, Some(MAX_EXPLORATION_RADIUS));

        assert!(step_schedule(
            FeedbackRegime::Partial,
            600,
            100,
            100,
            &constants,
            &tuning,
            None
        )
        .is_err());
        let big_a = Tuning { a: 9.0, ..tuning };
        assert!(matches!(
            step_schedule(
                FeedbackRegime::Bernoulli,
                600,
                100,
                0,
                &constants,
                &big_a,
                Some(10)
            ),
            Err(Error::InvalidConfiguration(_))
        ));
    }

    #[test]
    fn bernoulli_probability_matches_reported_value() {
        let p = bernoulli_probability(7.6, 600).unwrap();
        assert!((p - 0.90).abs() < 0.005, "p = {p}");
        assert_eq!(bernoulli_probability(0.0, 600).unwrap(), 0.0);
        assert!(bernoulli_probability(8.5, 600).is_err());
    }
}
