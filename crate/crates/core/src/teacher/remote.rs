use std::time::Duration;

use serde_json::{json, Value};

use super::Teacher;
use crate::TeacherError;

/// Connection settings for a chat-completion endpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub temperature: f64,
    pub timeout: Duration,
}

impl RemoteConfig {
    /// Reads `TEACHER_BASE_URL`, `TEACHER_MODEL` and the optional
    /// `TEACHER_API_KEY`.
    pub fn from_env() -> Result<Self, TeacherError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let base_url =
            var("TEACHER_BASE_URL").ok_or_else(|| TeacherError::Config("TEACHER_BASE_URL is not set".into()))?;
        let model =
            var("TEACHER_MODEL").ok_or_else(|| TeacherError::Config("TEACHER_MODEL is not set".into()))?;
        Ok(Self {
            base_url,
            model,
            api_key: var("TEACHER_API_KEY"),
            temperature: 0.0,
            timeout: Duration::from_secs(120),
        })
    }
}

pub struct RemoteTeacher {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteTeacher {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

impl Teacher for RemoteTeacher {
    fn complete(&self, prompt: &str) -> Result<String, TeacherError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        let mut req = self.agent.post(&self.url());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| TeacherError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TeacherError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => {
                return Err(TeacherError::Config(format!("endpoint rejected credentials ({status})")))
            }
            429 | 500..=599 => return Err(TeacherError::Transport(format!("HTTP {status}: {text}"))),
            _ => return Err(TeacherError::Invalid(format!("HTTP {status}: {text}"))),
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| TeacherError::Invalid(format!("bad JSON: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| TeacherError::Invalid("response has no choices[0].message.content".into()))
    }
}
