//! Shared value types: questions, dialogue transcripts, correctness grids and
//! run configuration.
//!
//! Every type here is immutable once built and serializes to one JSON object
//! per line (see [`crate::jsonl`]).

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gateway::DecodingParams;

/// Number of answer options every question carries.
pub const OPTION_COUNT: usize = 4;

/// Option labels in display order.
pub const OPTION_LABELS: [char; OPTION_COUNT] = ['A', 'B', 'C', 'D'];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Knowledge,
    Reasoning,
    Understanding,
    Multilingual,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Knowledge,
        Category::Reasoning,
        Category::Understanding,
        Category::Multilingual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Knowledge => "Knowledge",
            Category::Reasoning => "Reasoning",
            Category::Understanding => "Understanding",
            Category::Multilingual => "Multilingual",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One multiple-choice benchmark item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqQuestion {
    pub id: String,
    pub stem: String,
    pub options: Vec<String>,
    pub gold_index: usize,
    pub category: Category,
    pub source_dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<u8>,
}

impl McqQuestion {
    pub fn gold_text(&self) -> Option<&str> {
        self.options.get(self.gold_index).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    WrongOptionCount(usize),
    GoldIndexOutOfRange(usize),
    DuplicateOptions(usize, usize),
    EmptyStem,
    EmptyOption(usize),
    DifficultyOutOfRange(u8),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::WrongOptionCount(n) => {
                write!(f, "expected {OPTION_COUNT} options, found {n}")
            }
            Violation::GoldIndexOutOfRange(i) => write!(f, "gold index out of range ({i})"),
            Violation::DuplicateOptions(a, b) => write!(f, "duplicate options ({a} and {b})"),
            Violation::EmptyStem => write!(f, "empty stem"),
            Violation::EmptyOption(i) => write!(f, "empty option ({i})"),
            Violation::DifficultyOutOfRange(d) => write!(f, "difficulty out of range ({d})"),
        }
    }
}

/// Collapses runs of whitespace to a single space and trims both ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Returns every invariant the question violates; an empty list means valid.
pub fn validate_question(q: &McqQuestion) -> Vec<Violation> {
    let mut out = Vec::new();
    if q.options.len() != OPTION_COUNT {
        out.push(Violation::WrongOptionCount(q.options.len()));
    }
    if q.gold_index >= OPTION_COUNT || q.gold_index >= q.options.len() {
        out.push(Violation::GoldIndexOutOfRange(q.gold_index));
    }
    if q.stem.trim().is_empty() {
        out.push(Violation::EmptyStem);
    }
    let normalized: Vec<String> = q.options.iter().map(|o| normalize_whitespace(o)).collect();
    for (i, o) in normalized.iter().enumerate() {
        if o.is_empty() {
            out.push(Violation::EmptyOption(i));
        }
    }
    for i in 0..normalized.len() {
        for j in (i + 1)..normalized.len() {
            if normalized[i] == normalized[j] {
                out.push(Violation::DuplicateOptions(i, j));
            }
        }
    }
    if let Some(d) = q.difficulty {
        if !(1..=5).contains(&d) {
            out.push(Violation::DifficultyOutOfRange(d));
        }
    }
    out
}

/// A student's answer at one turn. Turn 0 is the unguided answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentAnswer {
    pub turn: usize,
    pub raw_text: String,
    pub parsed_index: Option<usize>,
    pub is_correct: bool,
}

impl StudentAnswer {
    /// Scores `parsed_index` against the gold index; an absent choice is wrong.
    pub fn scored(turn: usize, raw_text: String, parsed_index: Option<usize>, gold: usize) -> Self {
        StudentAnswer {
            turn,
            raw_text,
            parsed_index,
            is_correct: parsed_index == Some(gold),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    JudgedCorrect,
    JudgedIncorrect,
    Unparseable,
}

/// The teacher's judgment of the latest answer plus its guidance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherMove {
    pub turn: usize,
    pub verdict: Verdict,
    pub guidance: String,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTranscript {
    pub teacher_id: String,
    pub student_id: String,
    pub question_id: String,
    /// Indexed by turn, `0..=T`.
    pub answers: Vec<StudentAnswer>,
    /// `moves[k]` is the teacher move of turn `k + 1`.
    pub moves: Vec<TeacherMove>,
}

impl DialogueTranscript {
    /// Number of guided turns.
    pub fn turns(&self) -> usize {
        self.moves.len()
    }

    pub fn is_complete(&self, turns: usize) -> bool {
        self.answers.len() == turns + 1
            && self.moves.len() == turns
            && self.answers.iter().enumerate().all(|(t, a)| a.turn == t)
            && self.moves.iter().enumerate().all(|(k, m)| m.turn == k + 1)
    }

    /// Teacher move of turn `t` (1-based).
    pub fn move_at(&self, t: usize) -> Option<&TeacherMove> {
        t.checked_sub(1).and_then(|k| self.moves.get(k))
    }
}

/// A teacher's zero-shot answer to a question, used for application ability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectAnswer {
    pub teacher_id: String,
    pub question_id: String,
    pub raw_text: String,
    pub parsed_index: Option<usize>,
    pub is_correct: bool,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GridError {
    #[error("no transcript for student {student} on question {question}")]
    MissingTranscript { student: String, question: String },
    #[error("transcript for student {student} on question {question} has {found} answers, expected {expected}")]
    TurnCountMismatch {
        student: String,
        question: String,
        found: usize,
        expected: usize,
    },
}

/// Per-student correctness matrix: rows are questions, columns turns `0..=T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessGrid {
    pub student_id: String,
    pub question_ids: Vec<String>,
    pub cells: Vec<Vec<bool>>,
}

impl CorrectnessGrid {
    pub fn new(student_id: impl Into<String>, question_ids: Vec<String>, cells: Vec<Vec<bool>>) -> Self {
        CorrectnessGrid {
            student_id: student_id.into(),
            question_ids,
            cells,
        }
    }

    /// Grid with generated question ids `q0, q1, ...`.
    pub fn from_cells(student_id: impl Into<String>, cells: Vec<Vec<bool>>) -> Self {
        let ids = (0..cells.len()).map(|i| format!("q{i}")).collect();
        Self::new(student_id, ids, cells)
    }

    pub fn questions(&self) -> usize {
        self.cells.len()
    }

    /// Number of columns (`T + 1`), or 0 for an empty grid.
    pub fn columns(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }

    pub fn column(&self, t: usize) -> impl Iterator<Item = bool> + '_ {
        self.cells.iter().map(move |row| row[t])
    }

    /// Keeps only the rows whose question id satisfies `keep`.
    pub fn filter_rows(&self, mut keep: impl FnMut(&str) -> bool) -> CorrectnessGrid {
        let (ids, cells) = self
            .question_ids
            .iter()
            .zip(&self.cells)
            .filter(|(id, _)| keep(id))
            .map(|(id, row)| (id.clone(), row.clone()))
            .unzip();
        CorrectnessGrid::new(self.student_id.clone(), ids, cells)
    }

    /// Truncates every row to columns `0..=turns`.
    pub fn truncate_turns(&self, turns: usize) -> CorrectnessGrid {
        let cells = self
            .cells
            .iter()
            .map(|row| row[..=turns.min(row.len().saturating_sub(1))].to_vec())
            .collect();
        CorrectnessGrid::new(self.student_id.clone(), self.question_ids.clone(), cells)
    }

    /// Builds one student's grid from transcripts, rows in `question_ids` order.
    pub fn from_transcripts<'a>(
        student_id: &str,
        question_ids: &[String],
        turns: usize,
        transcripts: impl IntoIterator<Item = &'a DialogueTranscript>,
    ) -> Result<CorrectnessGrid, GridError> {
        let by_question: HashMap<&str, &DialogueTranscript> = transcripts
            .into_iter()
            .filter(|t| t.student_id == student_id)
            .map(|t| (t.question_id.as_str(), t))
            .collect();
        let mut cells = Vec::with_capacity(question_ids.len());
        for qid in question_ids {
            let t = by_question
                .get(qid.as_str())
                .ok_or_else(|| GridError::MissingTranscript {
                    student: student_id.to_string(),
                    question: qid.clone(),
                })?;
            if t.answers.len() != turns + 1 {
                return Err(GridError::TurnCountMismatch {
                    student: student_id.to_string(),
                    question: qid.clone(),
                    found: t.answers.len(),
                    expected: turns + 1,
                });
            }
            cells.push(t.answers.iter().map(|a| a.is_correct).collect());
        }
        Ok(CorrectnessGrid::new(student_id, question_ids.to_vec(), cells))
    }
}

/// Builds one grid per student, in `student_ids` order.
pub fn grids_from_transcripts(
    student_ids: &[String],
    question_ids: &[String],
    turns: usize,
    transcripts: &[DialogueTranscript],
) -> Result<Vec<CorrectnessGrid>, GridError> {
    student_ids
        .iter()
        .map(|s| CorrectnessGrid::from_transcripts(s, question_ids, turns, transcripts))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_turns")]
    pub turns: usize,
    #[serde(default)]
    pub student_decoding: DecodingParams,
    #[serde(default)]
    pub teacher_decoding: DecodingParams,
    #[serde(default = "default_inflight")]
    pub max_inflight_requests: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
}

fn default_turns() -> usize {
    3
}
fn default_inflight() -> usize {
    8
}
fn default_retry_budget() -> u32 {
    3
}
fn default_timeout_secs() -> u64 {
    120
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            turns: default_turns(),
            student_decoding: DecodingParams::default(),
            teacher_decoding: DecodingParams::default(),
            max_inflight_requests: default_inflight(),
            rng_seed: 0,
            retry_budget: default_retry_budget(),
            request_timeout_secs: default_timeout_secs(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.turns < 1 {
            return Err("turns must be at least 1".into());
        }
        if self.max_inflight_requests < 1 {
            return Err("max_inflight_requests must be at least 1".into());
        }
        self.student_decoding.validate()?;
        self.teacher_decoding.validate()?;
        Ok(())
    }
}
