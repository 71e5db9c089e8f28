//! Experiment configuration files.
//!
//! A file holds top-level defaults plus an optional `[[experiment]]` grid.
//! Every grid entry accepts the same keys as the top level and overrides
//! them field by field. Unset fields fall back to scenario defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loads::{EvParams, TclRanges, TruncatedNoise};
use crate::oco::{FeedbackRegime, Tuning};
use crate::sim::{EvSettings, Scenario, ScenarioConfig, SetpointParams, TclSettings};

/// Declares a section whose fields are all optional, with `overlay` merging
/// a more specific layer on top.
macro_rules! section {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $(
                $(#[$fmeta])*
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
        }

        impl $name {
            pub fn overlay(self, over: Self) -> Self {
                Self { $($field: over.$field.or(self.$field)),* }
            }
        }
    };
}

section!(RunSection {
    #[serde(with = "seed_repr")]
    seed: u64,
    trials: usize,
    rounds: usize,
    loads: usize,
    observed: usize,
    compute_regret: bool,
    compare_unregularized: bool,
    tracked_loads: Vec<usize>,
});

section!(RegularizationSection {
    rho: f64,
    lambda: f64,
});

section!(AlgorithmSection {
    chi: f64,
    chi_bandit: f64,
    chi_f: f64,
    chi_b: f64,
    a: f64,
    bercogd_mean_regularizer: bool,
    bercogd_warmup: bool,
});

section!(SetpointSection {
    amplitude: f64,
    frequency: f64,
    offset: f64,
});

section!(NoiseSection {
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
});

section!(TclSection {
    ambient_temp: f64,
    step_minutes: f64,
    resistance: [f64; 2],
    capacitance: [f64; 2],
    rated_power: [f64; 2],
    cop: [f64; 2],
    desired_temp: [f64; 2],
});

section!(EvSection {
    step_minutes: f64,
    eta_inj: f64,
    eta_ext: f64,
    capacity: f64,
    rate_charge: f64,
    rate_discharge: f64,
});

section!(OutputSection { dir: String });

/// One layer of experiment settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackRegime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<RegularizationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<AlgorithmSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoint: Option<SetpointSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcl: Option<TclSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ev: Option<EvSection>,
}

fn merge<T: Default>(base: Option<T>, over: Option<T>, f: impl FnOnce(T, T) -> T) -> Option<T> {
    match (base, over) {
        (None, None) => None,
        (b, o) => Some(f(b.unwrap_or_default(), o.unwrap_or_default())),
    }
}

impl Layer {
    pub fn overlay(self, over: Layer) -> Layer {
        Layer {
            scenario: over.scenario.or(self.scenario),
            feedback: over.feedback.or(self.feedback),
            run: merge(self.run, over.run, RunSection::overlay),
            regularization: merge(
                self.regularization,
                over.regularization,
                RegularizationSection::overlay,
            ),
            algorithm: merge(self.algorithm, over.algorithm, AlgorithmSection::overlay),
            setpoint: merge(self.setpoint, over.setpoint, SetpointSection::overlay),
            noise: merge(self.noise, over.noise, NoiseSection::overlay),
            tcl: merge(self.tcl, over.tcl, TclSection::overlay),
            ev: merge(self.ev, over.ev, EvSection::overlay),
        }
    }

    /// Materializes the layer over scenario defaults.
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let scenario = self.scenario.ok_or_else(|| {
            Error::InvalidConfiguration("`scenario` is required (tcl or ev)".into())
        })?;
        let feedback = self.feedback.ok_or_else(|| {
            Error::InvalidConfiguration(
                "`feedback` is required (full, bandit, partial or bernoulli)".into(),
            )
        })?;
        let mut c = ScenarioConfig::new(scenario, feedback);
        if let Some(r) = &self.run {
            set(&mut c.seed, r.seed);
            set(&mut c.trials, r.trials);
            set(&mut c.rounds, r.rounds);
            set(&mut c.loads, r.loads);
            set(&mut c.observed, r.observed);
            set(&mut c.compute_regret, r.compute_regret);
            set(&mut c.compare_unregularized, r.compare_unregularized);
            set(&mut c.tracked_loads, r.tracked_loads.clone());
        }
        if let Some(r) = &self.regularization {
            set(&mut c.rho, r.rho);
            set(&mut c.lambda, r.lambda);
        }
        if let Some(a) = &self.algorithm {
            set(&mut c.tuning.chi, a.chi);
            set(&mut c.tuning.chi_bandit, a.chi_bandit);
            set(&mut c.tuning.chi_f, a.chi_f);
            set(&mut c.tuning.chi_b, a.chi_b);
            set(&mut c.tuning.a, a.a);
            set(&mut c.bercogd_mean_regularizer, a.bercogd_mean_regularizer);
            set(&mut c.bercogd_warmup, a.bercogd_warmup);
        }
        if let Some(s) = &self.setpoint {
            set(&mut c.setpoint.amplitude, s.amplitude);
            set(&mut c.setpoint.frequency, s.frequency);
            set(&mut c.setpoint.offset, s.offset);
        }
        if let Some(n) = &self.noise {
            set(&mut c.noise.mean, n.mean);
            set(&mut c.noise.sd, n.sd);
            set(&mut c.noise.lo, n.lo);
            set(&mut c.noise.hi, n.hi);
        }
        if let Some(t) = &self.tcl {
            set(&mut c.tcl.ambient_temp, t.ambient_temp);
            set(&mut c.tcl.step_minutes, t.step_minutes);
            set(&mut c.tcl.ranges.resistance, t.resistance);
            set(&mut c.tcl.ranges.capacitance, t.capacitance);
            set(&mut c.tcl.ranges.rated_power, t.rated_power);
            set(&mut c.tcl.ranges.cop, t.cop);
            set(&mut c.tcl.ranges.desired_temp, t.desired_temp);
        }
        if let Some(e) = &self.ev {
            set(&mut c.ev.step_minutes, e.step_minutes);
            set(&mut c.ev.params.eta_inj, e.eta_inj);
            set(&mut c.ev.params.eta_ext, e.eta_ext);
            set(&mut c.ev.params.capacity, e.capacity);
            set(&mut c.ev.params.rate_charge, e.rate_charge);
            set(&mut c.ev.params.rate_discharge, e.rate_discharge);
        }
        Ok(c)
    }

    /// Fully materialized layer reproducing `c`.
    pub fn from_config(c: &ScenarioConfig) -> Layer {
        let Tuning {
            chi,
            chi_bandit,
            chi_f,
            chi_b,
            a,
        } = c.tuning;
        let SetpointParams {
            amplitude,
            frequency,
            offset,
        } = c.setpoint;
        let TruncatedNoise { mean, sd, lo, hi } = c.noise;
        let TclSettings {
            ranges:
                TclRanges {
                    resistance,
                    capacitance,
                    rated_power,
                    cop,
                    desired_temp,
                },
            ambient_temp,
            step_minutes: tcl_step,
        } = c.tcl;
        let EvSettings {
            params:
                EvParams {
                    eta_inj,
                    eta_ext,
                    capacity,
                    rate_charge,
                    rate_discharge,
                },
            step_minutes: ev_step,
        } = c.ev;
        Layer {
            scenario: Some(c.scenario),
            feedback: Some(c.feedback),
            run: Some(RunSection {
                seed: Some(c.seed),
                trials: Some(c.trials),
                rounds: Some(c.rounds),
                loads: Some(c.loads),
                observed: Some(c.observed),
                compute_regret: Some(c.compute_regret),
                compare_unregularized: Some(c.compare_unregularized),
                tracked_loads: Some(c.tracked_loads.clone()),
            }),
            regularization: Some(RegularizationSection {
                rho: Some(c.rho),
                lambda: Some(c.lambda),
            }),
            algorithm: Some(AlgorithmSection {
                chi: Some(chi),
                chi_bandit: Some(chi_bandit),
                chi_f: Some(chi_f),
                chi_b: Some(chi_b),
                a: Some(a),
                bercogd_mean_regularizer: Some(c.bercogd_mean_regularizer),
                bercogd_warmup: Some(c.bercogd_warmup),
            }),
            setpoint: Some(SetpointSection {
                amplitude: Some(amplitude),
                frequency: Some(frequency),
                offset: Some(offset),
            }),
            noise: Some(NoiseSection {
                mean: Some(mean),
                sd: Some(sd),
                lo: Some(lo),
                hi: Some(hi),
            }),
            tcl: Some(TclSection {
                ambient_temp: Some(ambient_temp),
                step_minutes: Some(tcl_step),
                resistance: Some(resistance),
                capacitance: Some(capacitance),
                rated_power: Some(rated_power),
                cop: Some(cop),
                desired_temp: Some(desired_temp),
            }),
            ev: Some(EvSection {
                step_minutes: Some(ev_step),
                eta_inj: Some(eta_inj),
                eta_ext: Some(eta_ext),
                capacity: Some(capacity),
                rate_charge: Some(rate_charge),
                rate_discharge: Some(rate_discharge),
            }),
        }
    }
}

/// TOML integers are signed, so seeds above `i64::MAX` are written as
/// decimal strings. Both forms are accepted on input.
mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &Option<u64>, s: S) -> Result<S::Ok, S::Error> {
        match seed {
            Some(v) if *v <= i64::MAX as u64 => s.serialize_i64(*v as i64),
            Some(v) => s.serialize_str(&v.to_string()),
            None => s.serialize_none(),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => u64::try_from(v)
                .map(Some)
                .map_err(|_| de::Error::custom(format!("seed must be nonnegative, got {v}"))),
            Repr::Text(t) => t
                .parse()
                .map(Some)
                .map_err(|_| de::Error::custom(format!("seed `{t}` is not an unsigned integer"))),
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Contents of a configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<FeedbackRegime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<RegularizationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<AlgorithmSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoint: Option<SetpointSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tcl: Option<TclSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ev: Option<EvSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub experiment: Vec<Layer>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfiguration(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfiguration(format!("cannot read {}: {e}", path.display()))
        })?;
        toml::from_str(&text).map_err(|e| {
            Error::InvalidConfiguration(format!("{}: {}", path.display(), e.to_string().trim_end()))
        })
    }

    pub fn base(&self) -> Layer {
        Layer {
            scenario: self.scenario,
            feedback: self.feedback,
            run: self.run.clone(),
            regularization: self.regularization.clone(),
            algorithm: self.algorithm.clone(),
            setpoint: self.setpoint.clone(),
            noise: self.noise.clone(),
            tcl: self.tcl.clone(),
            ev: self.ev.clone(),
        }
    }

    /// One layer per experiment: the grid entries over the base, or the base
    /// alone when there is no grid.
    pub fn layers(&self) -> Vec<Layer> {
        let base = self.base();
        if self.experiment.is_empty() {
            vec![base]
        } else {
            self.experiment
                .iter()
                .map(|e| base.clone().overlay(e.clone()))
                .collect()
        }
    }

    /// A file whose grid reproduces `configs` exactly.
    pub fn materialized(configs: &[ScenarioConfig], output_dir: Option<&str>) -> Self {
        ConfigFile {
            output: output_dir.map(|d| OutputSection {
                dir: Some(d.to_string()),
            }),
            experiment: configs.iter().map(Layer::from_config).collect(),
            ..ConfigFile::default()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfiguration(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_resolves_to_defaults() {
        let f = ConfigFile::parse("scenario = \"tcl\"\nfeedback = \"full\"\n").unwrap();
        let layers = f.layers();
        assert_eq!(layers.len(), 1);
        let c = layers[0].resolve().unwrap();
        assert_eq!(c, ScenarioConfig::new(Scenario::Tcl, FeedbackRegime::Full));
    }

    #[test]
    fn unknown_key_lists_alternatives() {
        let err = ConfigFile::parse("scenario = \"tcl\"\n[run]\nsed = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sed"), "{msg}");
        assert!(msg.contains("seed"), "{msg}");
    }

    #[test]
    fn grid_entries_override_base() {
        let text = r#"
scenario = "tcl"
feedback = "full"
[run]
seed = 5
trials = 3
[[experiment]]
feedback = "bandit"
[experiment.regularization]
rho = 1.5
[[experiment]]
[experiment.run]
trials = 7
"#;
        let f = ConfigFile::parse(text).unwrap();
        let cs: Vec<ScenarioConfig> = f.layers().iter().map(|l| l.resolve().unwrap()).collect();
        assert_eq!(cs[0].feedback, FeedbackRegime::Bandit);
        assert_eq!(cs[0].rho, 1.5);
        assert_eq!(cs[0].trials, 3);
        assert_eq!(cs[1].feedback, FeedbackRegime::Full);
        assert_eq!(cs[1].trials, 7);
        assert_eq!(cs[1].seed, 5);
    }

    #[test]
    fn materialized_file_round_trips() {
        let mut a = ScenarioConfig::new(Scenario::Tcl, FeedbackRegime::Partial);
        a.lambda = 40.0;
        a.tuning.chi = 0.1 + 0.2;
        let mut b = ScenarioConfig::new(Scenario::Ev, FeedbackRegime::Full);
        b.seed = u64::MAX;
        let text = ConfigFile::materialized(&[a.clone(), b.clone()], Some("out"))
            .to_toml()
            .unwrap();
        let back: Vec<ScenarioConfig> = ConfigFile::parse(&text)
            .unwrap()
            .layers()
            .iter()
            .map(|l| l.resolve().unwrap())
            .collect();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn missing_scenario_is_reported() {
        let f = ConfigFile::parse("feedback = \"full\"\n").unwrap();
        let err = f.layers()[0].resolve().unwrap_err();
        assert!(err.to_string().contains("scenario"));
    }
}
