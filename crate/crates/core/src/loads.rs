//! Physical fleet models: relaxed thermostatically controlled loads (TCLs)
//! with first-order thermal dynamics, and EV batteries with
//! efficiency-weighted state-of-charge dynamics.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::oco::RunningMean;

/// Rejection budget for one truncated Gaussian draw.
pub const MAX_REJECTIONS: usize = 1_000_000;

/// Consecutive rejected parameter draws tolerated by [`tcl_fleet_init`].
pub const MAX_FLEET_REDRAWS: usize = 1_000;

/// Accepted steady-state duty range for sampled TCLs.
pub const DUTY_RANGE: (f64, f64) = (0.05, 0.95);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TclParams {
    /// Thermal resistance `R` (°C/kW).
    pub resistance: f64,
    /// Thermal capacitance `C` (kWh/°C).
    pub capacitance: f64,
    /// Rated power `P_R` (kW).
    pub rated_power: f64,
    /// Coefficient of performance.
    pub cop: f64,
    /// Desired temperature `θ_d` (°C).
    pub desired_temp: f64,
}

/// Uniform sampling ranges for TCL parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TclRanges {
    pub resistance: [f64; 2],
    pub capacitance: [f64; 2],
    pub rated_power: [f64; 2],
    pub cop: [f64; 2],
    pub desired_temp: [f64; 2],
}

impl Default for TclRanges {
    fn default() -> Self {
        Self {
            resistance: [1.5, 2.5],
            capacitance: [8.0, 12.0],
            rated_power: [10.0, 18.0],
            cop: [2.0, 3.0],
            desired_temp: [20.0, 25.0],
        }
    }
}

impl TclRanges {
    fn validate(&self) -> Result<()> {
        let all = [
            ("resistance", self.resistance),
            ("capacitance", self.capacitance),
            ("rated_power", self.rated_power),
            ("cop", self.cop),
            ("desired_temp", self.desired_temp),
        ];
        for (name, [lo, hi]) in all {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo > 0.0) {
                return Err(Error::InvalidRanges(format!(
                    "{name} range [{lo}, {hi}] must be finite, positive and ordered"
                )));
            }
        }
        Ok(())
    }
}

/// Steady-state operating point of one TCL.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyControl {
    /// Duty `m̄` holding the load at its desired temperature.
    pub m_bar: f64,
    /// Average adjustment response `c₀ = p·min{m̄, 1-m̄}`.
    pub c0: f64,
    /// Electrical power `p = P_R / COP`.
    pub p: f64,
}

pub fn tcl_steady_control(params: &TclParams, theta_a: f64) -> Result<SteadyControl> {
    let m_bar = (theta_a - params.desired_temp) / (params.rated_power * params.resistance);
    if !(m_bar > 0.0 && m_bar < 1.0) {
        return Err(Error::InfeasibleLoad(format!(
            "steady duty {m_bar} outside (0, 1) at ambient {theta_a} °C"
        )));
    }
    let p = params.rated_power / params.cop;
    Ok(SteadyControl {
        m_bar,
        c0: p * m_bar.min(1.0 - m_bar),
        p,
    })
}

/// `θ_{t+1} = bθ_t + (1-b)(θ_a - mRP_R)` with `b = exp(-h/RC)`.
pub fn tcl_temp_step(theta: f64, params: &TclParams, theta_a: f64, m: f64, h: f64) -> Result<f64> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "time step must be positive, got {h}"
        )));
    }
    let b = (-h / (params.resistance * params.capacitance)).exp();
    Ok(b * theta + (1.0 - b) * (theta_a - m * params.resistance * params.rated_power))
}

/// Cooling duty for signal `μ`: `m̄ + μ·min{m̄, 1-m̄}`, which lies in `[0,1]`.
pub fn tcl_apply_signal(mu: f64, m_bar: f64) -> f64 {
    (m_bar + mu * m_bar.min(1.0 - m_bar)).clamp(0.0, 1.0)
}

/// Gaussian `N(mean, sd²)` conditioned on `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedNoise {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncatedNoise {
    pub const TCL: TruncatedNoise = TruncatedNoise {
        mean: 0.0,
        sd: 0.5,
        lo: -1.0,
        hi: 1.0,
    };

    pub const EV: TruncatedNoise = TruncatedNoise {
        mean: 0.0,
        sd: 0.1,
        lo: -1.5,
        hi: 1.5,
    };

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        sample_truncated_gaussian(self.mean, self.sd, self.lo, self.hi, rng)
    }
}

/// Rejection sampler for a truncated Gaussian. `sd = 0` degenerates to the
/// mean when it lies inside the support.
pub fn sample_truncated_gaussian<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "truncation support [{lo}, {hi}] must be finite with lo < hi"
        )));
    }
    if sd == 0.0 && (lo..=hi).contains(&mean) {
        return Ok(mean);
    }
    let normal = Normal::new(mean, sd).map_err(|e| {
        Error::InvalidArgument(format!("invalid Gaussian (mean={mean}, sd={sd}): {e}"))
    })?;
    for _ in 0..MAX_REJECTIONS {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return Ok(x);
        }
    }
    Err(Error::SamplingFailure(format!(
        "no draw of N({mean}, {sd}²) landed in [{lo}, {hi}] after {MAX_REJECTIONS} tries"
    )))
}

/// `c_t(i) = c₀(i) + w`, with independent truncated-Gaussian `w` per load.
pub fn tcl_observe_response<R: Rng + ?Sized>(
    c0: &[f64],
    noise: &TruncatedNoise,
    rng: &mut R,
) -> Result<Vec<f64>> {
    c0.iter().map(|c| Ok(c + noise.sample(rng)?)).collect()
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// A fleet of TCLs with their steady operating points and temperatures.
#[derive(Clone, Debug, PartialEq)]
pub struct TclFleet {
    params: Vec<TclParams>,
    controls: Vec<SteadyControl>,
    temps: Vec<f64>,
    ambient: f64,
}

/// Draws `n` TCLs uniformly from `ranges`, redrawing any load whose steady
/// duty falls outside [`DUTY_RANGE`]. Temperatures start at `θ_d`.
pub fn tcl_fleet_init<R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
    ranges: &TclRanges,
    ambient: f64,
) -> Result<TclFleet> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "fleet size must be at least 1".into(),
        ));
    }
    ranges.validate()?;
    let mut params = Vec::with_capacity(n);
    while params.len() < n {
        let mut accepted = None;
        for _ in 0..MAX_FLEET_REDRAWS {
            let p = TclParams {
                resistance: uniform(rng, ranges.resistance),
                capacitance: uniform(rng, ranges.capacitance),
                rated_power: uniform(rng, ranges.rated_power),
                cop: uniform(rng, ranges.cop),
                desired_temp: uniform(rng, ranges.desired_temp),
            };
            let m_bar = (ambient - p.desired_temp) / (p.rated_power * p.resistance);
            if m_bar > DUTY_RANGE.0 && m_bar < DUTY_RANGE.1 {
                accepted = Some(p);
                break;
            }
        }
        match accepted {
            Some(p) => params.push(p),
            None => {
                return Err(Error::InvalidRanges(format!(
                    "{MAX_FLEET_REDRAWS} consecutive draws had steady duty outside \
                     ({}, {}) at ambient {ambient} °C",
                    DUTY_RANGE.0, DUTY_RANGE.1
                )))
            }
        }
    }
    TclFleet::new(params, ambient)
}

impl TclFleet {
    pub fn new(params: Vec<TclParams>, ambient: f64) -> Result<Self> {
        let controls = params
            .iter()
            .map(|p| tcl_steady_control(p, ambient))
            .collect::<Result<Vec<_>>>()?;
        let temps = params.iter().map(|p| p.desired_temp).collect();
        Ok(Self {
            params,
            controls,
            temps,
            ambient,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[TclParams] {
        &self.params
    }

    pub fn controls(&self) -> &[SteadyControl] {
        &self.controls
    }

    pub fn temps(&self) -> &[f64] {
        &self.temps
    }

    pub fn ambient(&self) -> f64 {
        self.ambient
    }

    pub fn c0(&self) -> Vec<f64> {
        self.controls.iter().map(|c| c.c0).collect()
    }

    /// Steady-state consumption `pᵀm̄`.
    pub fn baseline_power(&self) -> f64 {
        self.controls.iter().map(|c| c.p * c.m_bar).sum()
    }

    pub fn observe_response<R: Rng + ?Sized>(
        &self,
        noise: &TruncatedNoise,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        tcl_observe_response(&self.c0(), noise, rng)
    }

    /// Applies one round of signals and advances every temperature by `h` hours.
    pub fn step(&mut self, mu: &[f64], h: f64) -> Result<()> {
        check_len(self.len(), mu.len())?;
        for ((theta, (p, c)), &u) in self
            .temps
            .iter_mut()
            .zip(self.params.iter().zip(&self.controls))
            .zip(mu)
        {
            let m = tcl_apply_signal(u, c.m_bar);
            *theta = tcl_temp_step(*theta, p, self.ambient, m, h)?;
        }
        Ok(())
    }

    /// Whitespace-separated table, one row per load.
    pub fn dump(&self) -> String {
        let mut out = String::from(
            "# resistance_c_per_kw capacitance_kwh_per_c rated_power_kw cop desired_temp_c\n",
        );
        for p in &self.params {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                p.resistance, p.capacitance, p.rated_power, p.cop, p.desired_temp
            );
        }
        out
    }

    pub fn load(text: &str, ambient: f64) -> Result<Self> {
        let rows = parse_table(text, 5)?;
        let params = rows
            .into_iter()
            .map(|r| TclParams {
                resistance: r[0],
                capacitance: r[1],
                rated_power: r[2],
                cop: r[3],
                desired_temp: r[4],
            })
            .collect();
        Self::new(params, ambient)
    }
}

fn parse_table(text: &str, columns: usize) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::InvalidArgument(format!("line {}: `{f}` is not a number", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != columns {
            return Err(Error::InvalidArgument(format!(
                "line {}: expected {columns} columns, found {}",
                lineno + 1,
                row.len()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("fleet table has no rows".into()));
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvParams {
    /// Injection efficiency `η_inj`.
    pub eta_inj: f64,
    /// Extraction efficiency `η_ext`.
    pub eta_ext: f64,
    /// Battery capacity (kWh).
    pub capacity: f64,
    /// Maximum charging rate (kW).
    pub rate_charge: f64,
    /// Maximum discharging rate (kW).
    pub rate_discharge: f64,
}

impl Default for EvParams {
    fn default() -> Self {
        Self {
            eta_inj: 0.85,
            eta_ext: 0.85,
            capacity: 10.0,
            rate_charge: 3.0,
            rate_discharge: 1.5,
        }
    }
}

impl EvParams {
    pub fn validate(&self) -> Result<()> {
        let eff_ok = |e: f64| e > 0.0 && e <= 1.0;
        if !(eff_ok(self.eta_inj) && eff_ok(self.eta_ext)) {
            return Err(Error::InvalidArgument(format!(
                "EV efficiencies must lie in (0, 1] (inj={}, ext={})",
                self.eta_inj, self.eta_ext
            )));
        }
        if !(self.capacity > 0.0 && self.rate_charge > 0.0 && self.rate_discharge > 0.0) {
            return Err(Error::InvalidArgument(
                "EV capacity and rates must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-load charging and discharging responses around the nominal rates.
pub fn ev_observe_response<R: Rng + ?Sized>(
    params: &[EvParams],
    noise: &TruncatedNoise,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut c_c = Vec::with_capacity(params.len());
    let mut c_d = Vec::with_capacity(params.len());
    for p in params {
        c_c.push(p.rate_charge + noise.sample(rng)?);
        c_d.push(p.rate_discharge + noise.sample(rng)?);
    }
    Ok((c_c, c_d))
}

/// State-of-charge impact of one round: `η_inj c_c μ_c + c_d μ_d / η_ext`.
pub fn ev_weighted_signal(params: &EvParams, c_c: f64, c_d: f64, mu_c: f64, mu_d: f64) -> f64 {
    params.eta_inj * c_c * mu_c + c_d * mu_d / params.eta_ext
}

const SIGN_TOL: f64 = 1e-12;

/// Loss `(s - c_cᵀμ_c - c_dᵀμ_d)² + ρ‖⟨μ^w⟩_t‖²` and its gradients with
/// respect to `μ_c` and `μ_d`, where `⟨μ^w⟩_t` extends
/// `weighted_mean_prev` with this round's weighted signal.
#[allow(clippy::too_many_arguments)]
pub fn ev_loss_and_gradient(
    s: f64,
    c_c: &[f64],
    c_d: &[f64],
    mu_c: &[f64],
    mu_d: &[f64],
    rho: f64,
    weighted_mean_prev: &RunningMean,
    params: &[EvParams],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let n = params.len();
    for len in [
        c_c.len(),
        c_d.len(),
        mu_c.len(),
        mu_d.len(),
        weighted_mean_prev.dim(),
    ] {
        check_len(n, len)?;
    }
    if mu_c
        .iter()
        .any(|&x| !(-SIGN_TOL..=1.0 + SIGN_TOL).contains(&x))
        || mu_d
            .iter()
            .any(|&x| !(-1.0 - SIGN_TOL..=SIGN_TOL).contains(&x))
    {
        return Err(Error::InvalidArgument(
            "charging signals must lie in [0,1] and discharging signals in [-1,0]".into(),
        ));
    }
    let err = s - crate::oco::dot(c_c, mu_c) - crate::oco::dot(c_d, mu_d);
    let mut loss = err * err;
    let mut grad_c: Vec<f64> = c_c.iter().map(|c| -2.0 * c * err).collect();
    let mut grad_d: Vec<f64> = c_d.iter().map(|c| -2.0 * c * err).collect();
    if rho != 0.0 {
        let weighted: Vec<f64> = (0..n)
            .map(|i| ev_weighted_signal(&params[i], c_c[i], c_d[i], mu_c[i], mu_d[i]))
            .collect();
        let mean = weighted_mean_prev.with_signal(&weighted)?;
        let t = (weighted_mean_prev.rounds() + 1) as f64;
        loss += rho * crate::oco::dot(&mean, &mean);
        let scale = 2.0 * rho / t;
        for i in 0..n {
            grad_c[i] += scale * params[i].eta_inj * c_c[i] * mean[i];
            grad_d[i] += scale * c_d[i] / params[i].eta_ext * mean[i];
        }
    }
    Ok((loss, grad_c, grad_d))
}

/// `S' = S + (h/B)·[η_inj c_c μ_c + c_d μ_d / η_ext]`, clamped to `[0,1]`.
/// The flag reports whether the clamp was active.
pub fn ev_soc_step(
    soc: f64,
    params: &EvParams,
    c_c: f64,
    c_d: f64,
    mu_c: f64,
    mu_d: f64,
    h: f64,
) -> (f64, bool) {
    let next = soc + h / params.capacity * ev_weighted_signal(params, c_c, c_d, mu_c, mu_d);
    let clamped = next.clamp(0.0, 1.0);
    (clamped, clamped != next)
}

/// Initial state of charge of every vehicle.
pub const EV_INITIAL_SOC: f64 = 0.75;

#[derive(Clone, Debug, PartialEq)]
pub struct EvFleet {
    params: Vec<EvParams>,
    soc: Vec<f64>,
    weighted_mean: RunningMean,
    saturation_events: usize,
}

impl EvFleet {
    pub fn new(params: Vec<EvParams>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidArgument(
                "fleet size must be at least 1".into(),
            ));
        }
        for p in &params {
            p.validate()?;
        }
        let n = params.len();
        Ok(Self {
            params,
            soc: vec![EV_INITIAL_SOC; n],
            weighted_mean: RunningMean::new(n),
            saturation_events: 0,
        })
    }

    pub fn uniform(n: usize, params: EvParams) -> Result<Self> {
        Self::new(vec![params; n])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[EvParams] {
        &self.params
    }

    pub fn soc(&self) -> &[f64] {
        &self.soc
    }

    pub fn weighted_mean(&self) -> &RunningMean {
        &self.weighted_mean
    }

    pub fn saturation_events(&self) -> usize {
        self.saturation_events
    }

    pub fn observe_response<R: Rng + ?Sized>(
        &self,
        noise: &TruncatedNoise,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        ev_observe_response(&self.params, noise, rng)
    }

    pub fn step(
        &mut self,
        c_c: &[f64],
        c_d: &[f64],
        mu_c: &[f64],
        mu_d: &[f64],
        h: f64,
    ) -> Result<()> {
        let n = self.len();
        for len in [c_c.len(), c_d.len(), mu_c.len(), mu_d.len()] {
            check_len(n, len)?;
        }
        let mut weighted = Vec::with_capacity(n);
        for i in 0..n {
            let p = &self.params[i];
            let (soc, saturated) = ev_soc_step(self.soc[i], p, c_c[i], c_d[i], mu_c[i], mu_d[i], h);
            self.soc[i] = soc;
            self.saturation_events += saturated as usize;
            weighted.push(ev_weighted_signal(p, c_c[i], c_d[i], mu_c[i], mu_d[i]));
        }
        self.weighted_mean.push(&weighted)
    }

    pub fn dump(&self) -> String {
        let mut out =
            String::from("# eta_inj eta_ext capacity_kwh rate_charge_kw rate_discharge_kw\n");
        for p in &self.params {
            let _ = writeln!(
                out,
                "{} {} {} {} {}",
                p.eta_inj, p.eta_ext, p.capacity, p.rate_charge, p.rate_discharge
            );
        }
        out
    }

    pub fn load(text: &str) -> Result<Self> {
        let params = parse_table(text, 5)?
            .into_iter()
            .map(|r| EvParams {
                eta_inj: r[0],
                eta_ext: r[1],
                capacity: r[2],
                rate_charge: r[3],
                rate_discharge: r[4],
            })
            .collect();
        Self::new(params)
    }
}
