//! JSON run configuration. String values may reference environment
//! variables as `${NAME}`; command-line flags override file values.

use std::path::{Path, PathBuf};
use std::time::Duration;

use rationale::teacher::RemoteConfig;
use rationale::training::{Ablations, ModelSettings, PhaseConfig, PipelineConfig};
use rationale::{Error, Result};
use serde::Deserialize;
use serde_json::Value;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub model: Option<ModelSettings>,
    pub training: TrainingSection,
    pub teacher: TeacherSection,
    pub data: DataSection,
    pub paths: PathsSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Epochs for phases 1, 2 and 3.
    pub epochs: Option<Vec<usize>>,
    pub batch_size: Option<usize>,
    /// One value for every phase.
    pub base_lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub grad_clip: Option<f64>,
    pub patience: Option<usize>,
    pub max_steps: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherSection {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub temperature: Option<f64>,
    pub timeout_secs: Option<u64>,
    pub max_attempts: Option<u32>,
    pub parallelism: Option<usize>,
    pub mock_seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub corpus: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub documents: Option<PathBuf>,
    pub exemplars: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = rationale::io::read_to_string(path)?;
        Self::parse(&text, &|k| std::env::var(k).ok())
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str, env: &dyn Fn(&str) -> Option<String>) -> std::result::Result<Self, String> {
        let mut v: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        interpolate(&mut v, env)?;
        serde_json::from_value(v).map_err(|e| e.to_string())
    }

    /// The training schedule: toy defaults, then file values, then the
    /// ablation.
    pub fn pipeline(&self, seed: u64, threads: Option<usize>, ablations: Ablations) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::toy(seed);
        if let Some(t) = threads.or(self.threads) {
            cfg.threads = t;
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        let t = &self.training;
        if let Some(e) = &t.epochs {
            if e.len() != 3 {
                return Err(Error::Config(format!(
                    "training.epochs needs 3 values, got {}",
                    e.len()
                )));
            }
        }
        for (i, p) in cfg.phases.iter_mut().enumerate() {
            apply(p, t, i);
        }
        Ok(cfg.with_ablations(ablations))
    }

    pub fn remote(&self) -> Result<RemoteConfig> {
        let t = &self.teacher;
        let mut rc = match (&t.base_url, &t.model) {
            (Some(url), Some(model)) => RemoteConfig {
                base_url: url.clone(),
                model: model.clone(),
                api_key: None,
                temperature: 0.0,
                timeout: Duration::from_secs(120),
            },
            _ => RemoteConfig::from_env()?,
        };
        if let Some(k) = t.api_key.clone().filter(|k| !k.is_empty()) {
            rc.api_key = Some(k);
        }
        if let Some(x) = t.temperature {
            rc.temperature = x;
        }
        if let Some(s) = t.timeout_secs {
            rc.timeout = Duration::from_secs(s);
        }
        Ok(rc)
    }
}

fn apply(p: &mut PhaseConfig, t: &TrainingSection, i: usize) {
    if let Some(e) = &t.epochs {
        p.epochs = e[i];
    }
    if let Some(b) = t.batch_size {
        p.batch_size = b;
    }
    if let Some(lr) = t.base_lr {
        p.base_lr = lr;
    }
    if let Some(wd) = t.weight_decay {
        p.weight_decay = wd;
    }
    if t.grad_clip.is_some() {
        p.grad_clip = t.grad_clip;
    }
    if t.patience.is_some() {
        p.patience = t.patience;
    }
    if t.max_steps.is_some() {
        p.max_steps = t.max_steps;
    }
}

/// Replaces `${NAME}` in every string value. An unset variable is an error.
pub fn interpolate(v: &mut Value, env: &dyn Fn(&str) -> Option<String>) -> std::result::Result<(), String> {
    match v {
        Value::String(s) => *s = expand(s, env)?,
        Value::Array(a) => a.iter_mut().try_for_each(|x| interpolate(x, env))?,
        Value::Object(m) => m.values_mut().try_for_each(|x| interpolate(x, env))?,
        _ => {}
    }
    Ok(())
}

fn expand(s: &str, env: &dyn Fn(&str) -> Option<String>) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| format!("unterminated ${{ in {s:?}"))?;
        let name = &after[..end];
        let value = env(name).ok_or_else(|| format!("environment variable {name} is not set"))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(k: &str) -> Option<String> {
        (k == "KEY").then(|| "sekret".to_string())
    }

    #[test]
    fn expands_variables() {
        assert_eq!(expand("a${KEY}b", &env).unwrap(), "asekretb");
        assert_eq!(expand("plain", &env).unwrap(), "plain");
        assert!(expand("${MISSING}", &env).is_err());
        assert!(expand("${KEY", &env).is_err());
    }

    #[test]
    fn file_values_reach_the_schedule() {
        let cfg = RunConfig::parse(
            r#"{"teacher": {"api_key": "${KEY}"}, "training": {"epochs": [1, 2, 3], "batch_size": 4}}"#,
            &env,
        )
        .unwrap();
        assert_eq!(cfg.teacher.api_key.as_deref(), Some("sekret"));
        let p = cfg.pipeline(3, None, Ablations::none()).unwrap();
        let epochs: Vec<usize> = p.phases.iter().map(|p| p.epochs).collect();
        assert_eq!(epochs, [1, 2, 3]);
        assert!(p.phases.iter().all(|p| p.batch_size == 4 && p.seed == 3));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse(r#"{"trainig": {}}"#, &env).is_err());
    }
}
