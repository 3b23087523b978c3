//! Drives an evaluation run: teacher direct answers, then every
//! (teacher, student, question) dialogue, persisting each finished unit.
//! Only units the store reports as pending are executed, so calling
//! [`run_eval`] again on the same store resumes an interrupted run.

use std::collections::HashMap;

use crate::dialogue::{self, PromptTemplateSet};
use crate::domain::{McqQuestion, RunConfig};
use crate::gateway::Gateway;
use crate::pool::parallel_map;
use crate::store::{RunStore, StoreError, UnitKey};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("model {0} is not registered")]
    UnknownModel(String),
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("run was created with {stored} turns, configuration says {configured}")]
    TurnsMismatch { stored: usize, configured: usize },
    #[error("question {0} is in the run manifest but not in the dataset")]
    MissingQuestion(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Stop after this many units, leaving the rest pending.
    pub max_units: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RunSummary {
    pub attempted: usize,
    pub completed: usize,
    pub failed: Vec<(UnitKey, String)>,
    /// Units still pending after this call, failed ones included.
    pub remaining: usize,
}

impl RunSummary {
    pub fn is_complete(&self) -> bool {
        self.remaining == 0
    }
}

enum Outcome {
    Done,
    Failed(String),
    Storage(StoreError),
}

/// Executes the store's pending units. Model failures mark the unit failed
/// and the run continues; a storage failure aborts after in-flight units
/// settle.
pub fn run_eval(
    gw: &Gateway,
    store: &RunStore,
    questions: &[McqQuestion],
    cfg: &RunConfig,
    templates: &PromptTemplateSet,
    opts: &EvalOptions,
) -> Result<RunSummary, EvalError> {
    cfg.validate().map_err(EvalError::Config)?;
    templates.validate().map_err(|e| EvalError::Config(e.to_string()))?;
    store.check_dataset(questions)?;
    let manifest = store.manifest();
    if manifest.turns != cfg.turns {
        return Err(EvalError::TurnsMismatch { stored: manifest.turns, configured: cfg.turns });
    }
    for model in manifest.roster.teachers.iter().chain(&manifest.roster.students) {
        if !gw.has_model(model) {
            return Err(EvalError::UnknownModel(model.clone()));
        }
    }
    let by_id: HashMap<&str, &McqQuestion> = questions.iter().map(|q| (q.id.as_str(), q)).collect();

    let mut plan = store.resume_plan();
    if let Some(n) = opts.max_units {
        plan.truncate(n);
    }
    for unit in &plan {
        if !by_id.contains_key(unit.question.as_str()) {
            return Err(EvalError::MissingQuestion(unit.question.clone()));
        }
    }

    let outcomes = parallel_map(&plan, cfg.max_inflight_requests, |unit| {
        let q = by_id[unit.question.as_str()];
        let result = match &unit.student {
            None => dialogue::direct_answer(gw, &unit.teacher, q, cfg, templates).map(|a| store.append_direct(&a)),
            Some(student) => dialogue::run_dialogue(gw, &unit.teacher, student, q, cfg, templates)
                .map(|t| store.append_transcript(&t)),
        };
        match result {
            Ok(Ok(())) => Outcome::Done,
            Ok(Err(e)) => Outcome::Storage(e),
            Err(e) => {
                let msg = e.to_string();
                log::warn!("unit {unit} failed: {msg}");
                match store.mark_failed(unit, msg.clone()) {
                    Ok(()) => Outcome::Failed(msg),
                    Err(e) => Outcome::Storage(e),
                }
            }
        }
    });

    let mut summary = RunSummary { attempted: plan.len(), ..Default::default() };
    let mut storage_error = None;
    for (unit, outcome) in plan.into_iter().zip(outcomes) {
        match outcome {
            Outcome::Done => summary.completed += 1,
            Outcome::Failed(msg) => summary.failed.push((unit, msg)),
            Outcome::Storage(e) => {
                storage_error.get_or_insert(e);
            }
        }
    }
    store.checkpoint()?;
    if let Some(e) = storage_error {
        return Err(e.into());
    }
    summary.remaining = store.resume_plan().len();
    Ok(summary)
}
