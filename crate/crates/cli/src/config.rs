//! The TOML configuration file.
//!
//! ```toml
//! root = "runs"
//! dataset = "questions.jsonl"
//! templates = "prompts"
//!
//! [run]
//! turns = 3
//! max_inflight_requests = 8
//!
//! [roster]
//! teachers = ["teacher-a"]
//! students = ["student-1", "student-2", "student-3", "student-4"]
//! graders = []
//!
//! [forge]
//! distractor_models = ["student-1"]
//! rewriter_model = "teacher-a"
//! reviewer_model = "teacher-a"
//!
//! [[models]]
//! model_id = "teacher-a"
//! kind = "remote_endpoint"
//! endpoint_url = "https://api.example.com/v1/chat/completions"
//! auth_token_env_var = "TEACHER_A_KEY"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use mentor_eval::dialogue::PromptTemplateSet;
use mentor_eval::domain::RunConfig;
use mentor_eval::forge::{ForgeConfig, GraderLadder};
use mentor_eval::gateway::{Gateway, GatewayConfig, ModelSpec, RetryPolicy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterConfig {
    #[serde(default)]
    pub teachers: Vec<String>,
    #[serde(default = "default_students")]
    pub students: Vec<String>,
    /// Difficulty graders, weakest first.
    #[serde(default)]
    pub graders: Vec<String>,
}

fn default_students() -> Vec<String> {
    (1..=4).map(|k| format!("student-{k}")).collect()
}

impl Default for RosterConfig {
    fn default() -> Self {
        RosterConfig { teachers: Vec::new(), students: default_students(), graders: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub roster: RosterConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forge: Option<ForgeConfig>,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl CliConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("ConfigUnreadable", format!("{}: {e}", path.display())))?;
        let mut cfg: CliConfig = toml::from_str(&text)
            .map_err(|e| CliError::config("InvalidConfig", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.root, &mut cfg.dataset, &mut cfg.templates].into_iter().flatten() {
            resolve(base, p);
        }
        for m in &mut cfg.models {
            if let Some(p) = &mut m.script_path {
                resolve(base, p);
            }
        }
        Ok(cfg)
    }

    /// Checks field values and that every model named anywhere is declared.
    pub fn validate(&self) -> CliResult<()> {
        self.run.validate().map_err(|e| CliError::config("InvalidRunConfig", e))?;
        let mut declared = HashSet::new();
        for m in &self.models {
            m.validate().map_err(|e| CliError::config("InvalidModelSpec", format!("{}: {e}", m.model_id)))?;
            if !declared.insert(m.model_id.as_str()) {
                return Err(CliError::config("DuplicateModel", &m.model_id));
            }
        }
        let mut referenced: Vec<&String> =
            self.roster.teachers.iter().chain(&self.roster.students).chain(&self.roster.graders).collect();
        if let Some(f) = &self.forge {
            f.validate().map_err(|e| CliError::config("InvalidForgeConfig", e))?;
            referenced.extend(f.distractor_models.iter().chain([&f.rewriter_model, &f.reviewer_model]));
        }
        let missing: Vec<String> =
            referenced.into_iter().filter(|m| !declared.contains(m.as_str())).cloned().collect();
        if !missing.is_empty() {
            return Err(CliError::config("UnknownModel", format!("models not declared: {}", missing.join(", ")))
                .with_details(missing));
        }
        Ok(())
    }

    pub fn root(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf).or_else(|| self.root.clone()).unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn templates(&self) -> CliResult<PromptTemplateSet> {
        match &self.templates {
            Some(dir) => PromptTemplateSet::load_dir(dir).map_err(|e| CliError::config("InvalidTemplates", e)),
            None => Ok(PromptTemplateSet::default()),
        }
    }

    pub fn ladder(&self) -> Option<GraderLadder> {
        (!self.roster.graders.is_empty()).then(|| GraderLadder { graders: self.roster.graders.clone() })
    }

    /// A gateway with every declared model registered.
    pub fn gateway(&self, cache_dir: Option<PathBuf>) -> CliResult<Gateway> {
        let mut gw = Gateway::new(GatewayConfig {
            max_inflight_requests: self.run.max_inflight_requests,
            retry: RetryPolicy { max_retries: self.run.retry_budget, ..RetryPolicy::default() },
            request_timeout: Duration::from_secs(self.run.request_timeout_secs),
            cache_dir,
        })?;
        for m in &self.models {
            gw.register(m)?;
        }
        Ok(gw)
    }
}
