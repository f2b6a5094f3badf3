//! Run configuration: defaults, a flat `key = value` file format, and
//! validation. The effective configuration renders back to the same
//! format so every run directory records exactly what it ran with.

use std::fs;
use std::path::Path;

use crate::model::{AblationFlags, ModelDims};
use crate::tensor::Real;
use crate::{Error, Result};

/// Every knob of training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Embedding width.
    pub d: usize,
    /// Encoder attention heads.
    pub heads: usize,
    /// Encoder layers.
    pub layers: usize,
    /// Support facts per unseen entity (K).
    pub shots: usize,
    /// Search steps per rollout (L).
    pub steps: usize,
    /// Per-step discount.
    pub gamma: Real,
    /// Weight of the concept divergence term.
    pub eta: Real,
    /// Reward margin.
    pub theta: Real,
    /// Sampled action space size.
    pub action_cap: usize,
    /// Training episodes (M).
    pub episodes: usize,
    /// Adam learning rate.
    pub lr: Real,
    /// Beam width at evaluation.
    pub beam: usize,
    /// Validation cadence in episodes; the best checkpoint is kept.
    pub eval_every: usize,
    /// Root seed; all randomness is derived from it through named streams.
    pub seed: u64,
    /// Rollout/evaluation parallelism. 1 is the reference mode.
    pub workers: usize,
    /// Component switches.
    pub ablations: AblationFlags,
    /// Encode the query source at query time (true) or at its mean
    /// support time like every other unseen entity (false).
    pub source_at_query_time: bool,
    /// Aggregate duplicate beam endpoints by sum instead of max.
    pub sum_endpoint_scores: bool,
    /// Let gradients flow through the reward term.
    pub trace_reward_grad: bool,
    /// With no concept prior for the query relation, drop the divergence
    /// term instead of regularizing toward uniform.
    pub zero_empty_concepts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 100,
            heads: 2,
            layers: 2,
            shots: 1,
            steps: 3,
            gamma: 0.95,
            eta: 1e-9,
            theta: 5.0,
            action_cap: 50,
            episodes: 1000,
            lr: 1e-3,
            beam: 100,
            eval_every: 50,
            seed: 0,
            workers: 1,
            ablations: AblationFlags::default(),
            source_at_query_time: true,
            sum_endpoint_scores: false,
            trace_reward_grad: false,
            zero_empty_concepts: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value {value:?} for key {key:?} (expected true or false)"
        ))),
    }
}

impl TrainConfig {
    /// Applies one `key = value` setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "layers" => self.layers = parse_num(key, value)?,
            "shots" => self.shots = parse_num(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "eta" => self.eta = parse_num(key, value)?,
            "theta" => self.theta = parse_num(key, value)?,
            "action_cap" => self.action_cap = parse_num(key, value)?,
            "episodes" => self.episodes = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "beam" => self.beam = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            "ablations" => {
                let codes: Vec<&str> = value.split(',').filter(|s| !s.trim().is_empty()).collect();
                self.ablations = AblationFlags::from_codes(&codes)?;
            }
            "source_at_query_time" => self.source_at_query_time = parse_bool(key, value)?,
            "sum_endpoint_scores" => self.sum_endpoint_scores = parse_bool(key, value)?,
            "trace_reward_grad" => self.trace_reward_grad = parse_bool(key, value)?,
            "zero_empty_concepts" => self.zero_empty_concepts = parse_bool(key, value)?,
            _ => {
                return Err(Error::Config(format!("unknown configuration key {key:?}")));
            }
        }
        Ok(())
    }

    /// Layers flat `key = value` text over the current settings. Blank
    /// lines and `#` comments are skipped; `origin` names the source in
    /// error messages.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    file: origin.to_string(),
                    line: lineno + 1,
                    msg: format!("expected `key = value`, got {raw:?}"),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                file: origin.to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// `apply_text` over a file's contents.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Defaults overlaid with a configuration file.
    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        cfg.apply_file(path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().validate()?;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "discount gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        if self.eta < 0.0 {
            return Err(Error::Config("eta must be nonnegative".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        for (name, v) in [
            ("shots", self.shots),
            ("steps", self.steps),
            ("action_cap", self.action_cap),
            ("beam", self.beam),
            ("eval_every", self.eval_every),
            ("workers", self.workers),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims { d: self.d, heads: self.heads, layers: self.layers }
    }

    /// Renders the effective configuration in the same `key = value`
    /// format `apply_file` reads; `from_file(render(c)) == c`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("d", self.d.to_string());
        kv("heads", self.heads.to_string());
        kv("layers", self.layers.to_string());
        kv("shots", self.shots.to_string());
        kv("steps", self.steps.to_string());
        kv("gamma", format_real(self.gamma));
        kv("eta", format_real(self.eta));
        kv("theta", format_real(self.theta));
        kv("action_cap", self.action_cap.to_string());
        kv("episodes", self.episodes.to_string());
        kv("lr", format_real(self.lr));
        kv("beam", self.beam.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("seed", self.seed.to_string());
        kv("workers", self.workers.to_string());
        kv("ablations", self.ablations.codes().join(","));
        kv("source_at_query_time", self.source_at_query_time.to_string());
        kv("sum_endpoint_scores", self.sum_endpoint_scores.to_string());
        kv("trace_reward_grad", self.trace_reward_grad.to_string());
        kv("zero_empty_concepts", self.zero_empty_concepts.to_string());
        out
    }
}

/// Decimal text that parses back to the identical float.
fn format_real(v: Real) -> String {
    let short = format!("{v}");
    if short.parse::<Real>() == Ok(v) {
        short
    } else {
        format!("{v:e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn defaults_pass_validation() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.d, 100);
        assert_eq!(cfg.action_cap, 50);
        assert_eq!(cfg.steps, 3);
        assert_eq!(cfg.eta, 1e-9);
        assert_eq!(cfg.theta, 5.0);
        assert_eq!(cfg.episodes, 1000);
        assert_eq!(cfg.beam, 100);
    }

    #[test]
    fn file_overlay_and_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# an override file").unwrap();
        writeln!(f).unwrap();
        writeln!(f, "d = 16").unwrap();
        writeln!(f, "eta = 0.1").unwrap();
        writeln!(f, "ablations = B,C").unwrap();
        writeln!(f, "source_at_query_time = false").unwrap();
        drop(f);
        let cfg = TrainConfig::from_file(&path).unwrap();
        assert_eq!(cfg.d, 16);
        assert_eq!(cfg.eta, 0.1);
        assert!(cfg.ablations.no_confidence && cfg.ablations.no_concept_reg);
        assert!(!cfg.source_at_query_time);
        assert_eq!(cfg.episodes, 1000);

        let bad = dir.path().join("bad.conf");
        std::fs::write(&bad, "unknown_key = 2\n").unwrap();
        let err = TrainConfig::from_file(&bad).unwrap_err();
        assert!(err.to_string().contains("unknown configuration key"));
        assert!(err.is_validation());

        let malformed = dir.path().join("malformed.conf");
        std::fs::write(&malformed, "just words\n").unwrap();
        assert!(TrainConfig::from_file(&malformed).is_err());
    }

    #[test]
    fn render_round_trips_exactly() {
        let mut cfg = TrainConfig::default();
        cfg.set("gamma", "0.9").unwrap();
        cfg.set("eta", "1e-7").unwrap();
        cfg.set("ablations", "A1,D").unwrap();
        cfg.set("seed", "42").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.conf");
        std::fs::write(&path, cfg.render()).unwrap();
        let back = TrainConfig::from_file(&path).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_rejects_out_of_range_values() {
        let mut cfg = TrainConfig::default();
        cfg.gamma = 1.0;
        assert!(cfg.validate().is_err());
        cfg.gamma = 0.95;
        cfg.workers = 0;
        assert!(cfg.validate().is_err());
        cfg.workers = 1;
        cfg.d = 11;
        assert!(cfg.validate().is_err());
        cfg.d = 100;
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
    }
}
