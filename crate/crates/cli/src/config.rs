//! Run configuration. Suite defaults are overlaid by a TOML or JSON file and
//! then by command-line flags; the result is echoed as TOML.

use std::fmt;
use std::path::Path;

use das_core::online::{OnlineConfig, SurrogateConfig, Uncertainty};
use das_core::reward::GuidanceJacobian;
use das_core::score_net::TrainConfig;
use das_core::smc::{GradientTime, ProposalKind, ResamplingScheme, SmcConfig, Tempering};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Anything that makes a configuration unusable; maps to exit code 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub suite: String,
    pub seed: u64,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    pub workers: usize,
    pub smc: SmcSection,
    pub experiment: ExperimentSection,
    pub train: TrainSection,
    pub online: OnlineSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcSection {
    pub particles: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// `geometric`, `adaptive` or `off`.
    pub tempering: String,
    /// `ssp`, `systematic` or `multinomial`.
    pub resampling: String,
    pub ess_frac: f64,
    /// `guided` or `prior`.
    pub proposal: String,
    /// `current` or `next`.
    pub gradient_time: String,
    /// `full` or `identity`.
    pub jacobian: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Samples per method.
    pub pooled: usize,
    /// Seeds `seed, seed + 1, …` a suite repeats over.
    pub repeats: usize,
    pub particle_grid: Vec<usize>,
    pub guidance_scale: f64,
    /// 2D reward for suites that do not fix one: `top` or `bottom`.
    pub reward: String,
    /// Trained network JSON to use instead of training one (3D suites).
    pub score_net: String,
    /// Roll points the swiss-roll reference is resampled from.
    pub reference_pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// `gmm` or `swiss-roll`.
    pub data: String,
    pub samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineSection {
    pub rounds: usize,
    pub budget: usize,
    pub noise_std: f64,
    pub holdout: usize,
    pub ridge: f64,
    pub beta: f64,
    /// `ucb` or `bootstrap`.
    pub uncertainty: String,
    pub members: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            suite: String::new(),
            seed: 0,
            workers: 0,
            smc: SmcSection::default(),
            experiment: ExperimentSection::default(),
            train: TrainSection::default(),
            online: OnlineSection::default(),
        }
    }
}

impl Default for SmcSection {
    fn default() -> Self {
        Self {
            particles: 16,
            alpha: 1.0,
            gamma: 0.008,
            tempering: "geometric".into(),
            resampling: "ssp".into(),
            ess_frac: 0.5,
            proposal: "guided".into(),
            gradient_time: "current".into(),
            jacobian: "full".into(),
        }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            pooled: 640,
            repeats: 1,
            particle_grid: vec![4, 8, 16, 32],
            guidance_scale: 1.0,
            reward: "top".into(),
            score_net: String::new(),
            reference_pool: 200_000,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            data: "gmm".into(),
            samples: 16384,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            hidden: t.hidden,
        }
    }
}

impl Default for OnlineSection {
    fn default() -> Self {
        let o = OnlineConfig::default();
        Self {
            rounds: o.rounds,
            budget: o.budget,
            noise_std: o.noise_std,
            holdout: o.holdout,
            ridge: o.surrogate.ridge,
            beta: o.surrogate.beta,
            uncertainty: "ucb".into(),
            members: o.surrogate.members,
        }
    }
}

/// Values a user may set from the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub workers: Option<usize>,
}

/// Reads a config file into a JSON tree. `.json` files (or text starting with
/// `{`) are JSON; everything else is parsed as TOML.
pub fn read_file(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse_text(&text, path.extension().is_some_and(|e| e == "json"))
}

pub fn parse_text(text: &str, json: bool) -> Result<Value, ConfigError> {
    let value = if json || text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| ConfigError(format!("malformed JSON config: {e}")))?
    } else {
        let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError(format!("malformed config: {e}")))?;
        serde_json::to_value(table).map_err(|e| ConfigError(format!("malformed config: {e}")))?
    };
    if !value.is_object() {
        return bad("config must be a table of keys");
    }
    Ok(value)
}

/// Dotted paths present in `user` but not in `known`.
pub fn unknown_keys(known: &Value, user: &Value) -> Vec<String> {
    fn walk(known: &Value, user: &Value, prefix: &str, out: &mut Vec<String>) {
        let (Value::Object(k), Value::Object(u)) = (known, user) else { return };
        for (key, v) in u {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match k.get(key) {
                Some(kv) => walk(kv, v, &path, out),
                None => out.push(path),
            }
        }
    }
    let mut out = Vec::new();
    walk(known, user, "", &mut out);
    out
}

fn overlay(base: &mut Value, user: &Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

impl Config {
    /// Builds the configuration of `suite` from its defaults, an optional file
    /// tree and the flag overrides. A `suite` key in the file is used when no
    /// suite is given on the command line.
    pub fn assemble(
        suite: Option<&str>,
        file: Option<&Value>,
        defaults_for: impl Fn(&str) -> Option<Config>,
        flags: &Overrides,
    ) -> Result<Config, ConfigError> {
        let from_file = file.and_then(|f| f.get("suite")).and_then(Value::as_str);
        let name = match (suite, from_file) {
            (Some(s), _) => s,
            (None, Some(s)) => s,
            (None, None) => return bad("no suite given; pass one or set `suite` in the config"),
        };
        let Some(defaults) = defaults_for(name) else {
            return bad(format!("unknown suite `{name}`; see `das list-suites`"));
        };
        let mut tree = serde_json::to_value(&defaults).expect("config serializes");
        if let Some(user) = file {
            let unknown = unknown_keys(&tree, user);
            if !unknown.is_empty() {
                return bad(format!("unknown config keys: {}", unknown.join(", ")));
            }
            overlay(&mut tree, user);
        }
        let mut cfg: Config = serde_json::from_value(tree).map_err(|e| ConfigError(format!("invalid config value: {e}")))?;
        cfg.suite = name.to_string();
        if let Some(v) = flags.seed {
            cfg.seed = v;
        }
        if let Some(v) = flags.particles {
            cfg.smc.particles = v;
        }
        if let Some(v) = flags.alpha {
            cfg.smc.alpha = v;
        }
        if let Some(v) = flags.gamma {
            cfg.smc.gamma = v;
        }
        if let Some(v) = flags.workers {
            cfg.workers = v;
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Core-library configurations, validated.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let s = &self.smc;
        let tempering = match s.tempering.as_str() {
            "geometric" => Tempering::Geometric { gamma: s.gamma },
            "adaptive" => Tempering::Adaptive,
            "off" => Tempering::Off,
            other => return bad(format!("smc.tempering: unknown value `{other}` (geometric, adaptive, off)")),
        };
        let resampling: ResamplingScheme = s.resampling.parse().map_err(|e| ConfigError(format!("smc.resampling: {e}")))?;
        let proposal = match s.proposal.as_str() {
            "guided" => ProposalKind::Guided,
            "prior" => ProposalKind::Prior,
            other => return bad(format!("smc.proposal: unknown value `{other}` (guided, prior)")),
        };
        let gradient_time = match s.gradient_time.as_str() {
            "current" => GradientTime::Current,
            "next" => GradientTime::Next,
            other => return bad(format!("smc.gradient_time: unknown value `{other}` (current, next)")),
        };
        let jacobian = match s.jacobian.as_str() {
            "full" => GuidanceJacobian::Full,
            "identity" => GuidanceJacobian::Identity,
            other => return bad(format!("smc.jacobian: unknown value `{other}` (full, identity)")),
        };
        let smc = SmcConfig {
            particles: s.particles,
            alpha: s.alpha,
            tempering,
            resampling,
            ess_frac: s.ess_frac,
            proposal,
            gradient_time,
            jacobian,
            seed: self.seed,
        };
        smc.validate().map_err(|e| ConfigError(format!("smc: {e}")))?;
        if !(s.gamma > 0.0 && s.gamma.is_finite()) {
            return bad(format!("smc.gamma must be positive, got {}", s.gamma));
        }

        let e = &self.experiment;
        if e.pooled == 0 || e.repeats == 0 {
            return bad("experiment.pooled and experiment.repeats must be at least 1");
        }
        if e.particle_grid.is_empty() || e.particle_grid.contains(&0) {
            return bad("experiment.particle_grid must list positive particle counts");
        }
        if !(e.guidance_scale >= 0.0 && e.guidance_scale.is_finite()) {
            return bad("experiment.guidance_scale must be a non-negative number");
        }
        if !matches!(e.reward.as_str(), "top" | "bottom") {
            return bad(format!("experiment.reward: unknown value `{}` (top, bottom)", e.reward));
        }
        if e.reference_pool == 0 {
            return bad("experiment.reference_pool must be at least 1");
        }

        let t = &self.train;
        if !matches!(t.data.as_str(), "gmm" | "swiss-roll") {
            return bad(format!("train.data: unknown value `{}` (gmm, swiss-roll)", t.data));
        }
        if t.samples == 0 {
            return bad("train.samples must be at least 1");
        }
        let train = TrainConfig {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            hidden: t.hidden,
            seed: self.seed,
            ..TrainConfig::default()
        };
        train.validate().map_err(|e| ConfigError(format!("train: {e}")))?;

        let o = &self.online;
        let mode: Uncertainty = o.uncertainty.parse().map_err(|e| ConfigError(format!("online.uncertainty: {e}")))?;
        if o.rounds == 0 || o.budget < o.rounds || o.holdout == 0 {
            return bad("online: need rounds >= 1, budget >= rounds and holdout >= 1");
        }
        if !(o.noise_std >= 0.0 && o.ridge > 0.0 && o.beta >= 0.0 && o.members >= 1) {
            return bad("online: need noise_std >= 0, ridge > 0, beta >= 0 and members >= 1");
        }
        let online = OnlineConfig {
            rounds: o.rounds,
            budget: o.budget,
            noise_std: o.noise_std,
            holdout: o.holdout,
            surrogate: SurrogateConfig { ridge: o.ridge, beta: o.beta, mode, members: o.members },
            seed: self.seed,
        };
        Ok(Resolved { smc, train, online })
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub smc: SmcConfig,
    pub train: TrainConfig,
    pub online: OnlineConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults(name: &str) -> Option<Config> {
        (name == "demo").then(Config::default)
    }

    #[test]
    fn echo_round_trips() {
        let cfg = Config { suite: "demo".into(), seed: 7, ..Config::default() };
        let tree = parse_text(&cfg.to_toml(), false).unwrap();
        let back = Config::assemble(None, Some(&tree), defaults, &Overrides::default()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_listed_with_their_paths() {
        let tree = parse_text("seed = 1\nbogus = 2\n[smc]\nparticle = 4\n", false).unwrap();
        let err = Config::assemble(Some("demo"), Some(&tree), defaults, &Overrides::default()).unwrap_err();
        assert!(err.0.contains("bogus") && err.0.contains("smc.particle"), "{err}");
    }

    #[test]
    fn dotted_keys_and_json_agree() {
        let a = parse_text("smc.particles = 8\nexperiment.particle_grid = [2, 4]\n", false).unwrap();
        let b = parse_text(r#"{"smc": {"particles": 8}, "experiment": {"particle_grid": [2, 4]}}"#, false).unwrap();
        let flags = Overrides::default();
        assert_eq!(
            Config::assemble(Some("demo"), Some(&a), defaults, &flags).unwrap(),
            Config::assemble(Some("demo"), Some(&b), defaults, &flags).unwrap()
        );
    }

    #[test]
    fn flags_win_over_the_file() {
        let tree = parse_text("seed = 1\n[smc]\nalpha = 2.0\n", false).unwrap();
        let flags = Overrides { seed: Some(5), alpha: Some(0.5), ..Default::default() };
        let cfg = Config::assemble(Some("demo"), Some(&tree), defaults, &flags).unwrap();
        assert_eq!((cfg.seed, cfg.smc.alpha), (5, 0.5));
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in ["smc.particles = 0", "smc.tempering = \"warm\"", "experiment.particle_grid = []", "smc.alpha = \"x\""] {
            let tree = parse_text(text, false).unwrap();
            assert!(Config::assemble(Some("demo"), Some(&tree), defaults, &Overrides::default()).is_err(), "{text}");
        }
        assert!(parse_text("smc = [", false).is_err());
        assert!(Config::assemble(Some("nope"), None, defaults, &Overrides::default()).is_err());
    }
}
