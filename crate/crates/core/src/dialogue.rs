//! The guided-dialogue protocol.
//!
//! A student answers a multiple-choice question unaided (turn 0). For each of
//! the `T` following turns the teacher sees the question stem and the whole
//! exchange so far, judges the latest answer and writes guidance; the student
//! then re-answers seeing the options, its own previous answer and only the
//! latest guidance. The teacher never sees the options.
//!
//! Visibility is enforced by construction: the teacher renderer takes the
//! stem as a bare string and has no access to the question's options, and
//! the teacher template may not contain an `{options}` placeholder.

// failures carry the full unit identity; they are rare and not on a hot path
#![allow(clippy::result_large_err)]

use std::fmt::Write as _;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use crate::domain::{
    normalize_whitespace, DialogueTranscript, DirectAnswer, McqQuestion, RunConfig, StudentAnswer, TeacherMove,
    Verdict, OPTION_LABELS,
};
use crate::gateway::{ChatMessage, Gateway, GatewayError};

/// Who sees what. These are fixed by the protocol and enforced structurally
/// by the renderers below; the struct exists so reports can record them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct VisibilityRules {
    pub student_sees_options: bool,
    /// The student sees its own previous answer and the latest guidance only.
    pub student_history_depth: usize,
    pub teacher_sees_options: bool,
    pub teacher_sees_full_history: bool,
}

pub const VISIBILITY: VisibilityRules = VisibilityRules {
    student_sees_options: true,
    student_history_depth: 1,
    teacher_sees_options: false,
    teacher_sees_full_history: true,
};

const DEFAULT_STUDENT_INITIAL: &str = include_str!("../templates/student_initial.txt");
const DEFAULT_STUDENT_FOLLOWUP: &str = include_str!("../templates/student_followup.txt");
const DEFAULT_TEACHER_TURN: &str = include_str!("../templates/teacher_turn.txt");

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {template} is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder {
        template: &'static str,
        placeholder: &'static str,
    },
    #[error("template {template} must not contain placeholder {{{placeholder}}}")]
    ForbiddenPlaceholder {
        template: &'static str,
        placeholder: &'static str,
    },
    #[error("reading template {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Prompt texts with named placeholders `{stem}`, `{options}`,
/// `{prev_answer}`, `{guidance}` and `{history}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplateSet {
    /// Optional system message shared by the initial and follow-up student prompts.
    pub student_system: Option<String>,
    pub student_initial: String,
    pub student_followup: String,
    pub teacher_system: Option<String>,
    pub teacher_turn: String,
}

impl Default for PromptTemplateSet {
    fn default() -> Self {
        PromptTemplateSet {
            student_system: None,
            student_initial: DEFAULT_STUDENT_INITIAL.to_string(),
            student_followup: DEFAULT_STUDENT_FOLLOWUP.to_string(),
            teacher_system: None,
            teacher_turn: DEFAULT_TEACHER_TURN.to_string(),
        }
    }
}

impl PromptTemplateSet {
    /// Loads templates from `dir`. Files that are absent fall back to the
    /// shipped defaults; `student_system.txt` and `teacher_system.txt` are optional.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str| -> Result<Option<String>, TemplateError> {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(source) => Err(TemplateError::Io { path: path.display().to_string(), source }),
            }
        };
        let defaults = Self::default();
        let set = PromptTemplateSet {
            student_system: read("student_system.txt")?,
            student_initial: read("student_initial.txt")?.unwrap_or(defaults.student_initial),
            student_followup: read("student_followup.txt")?.unwrap_or(defaults.student_followup),
            teacher_system: read("teacher_system.txt")?,
            teacher_turn: read("teacher_turn.txt")?.unwrap_or(defaults.teacher_turn),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        require("student_initial", &self.student_initial, &["stem", "options"])?;
        require(
            "student_followup",
            &self.student_followup,
            &["stem", "options", "prev_answer", "guidance"],
        )?;
        require("teacher_turn", &self.teacher_turn, &["stem", "history"])?;
        for (name, text) in [("teacher_turn", Some(&self.teacher_turn)), ("teacher_system", self.teacher_system.as_ref())] {
            if text.is_some_and(|t| t.contains("{options}")) {
                return Err(TemplateError::ForbiddenPlaceholder { template: name, placeholder: "options" });
            }
        }
        Ok(())
    }
}

fn require(template: &'static str, text: &str, placeholders: &[&'static str]) -> Result<(), TemplateError> {
    for p in placeholders {
        if !text.contains(&format!("{{{p}}}")) {
            return Err(TemplateError::MissingPlaceholder { template, placeholder: p });
        }
    }
    Ok(())
}

/// Substitutes `{name}` placeholders in one left-to-right pass, so text
/// inserted for one placeholder is never scanned for another.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (*v, close))
        });
        match replaced {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// `A. first\nB. second\n...`
pub fn format_options(options: &[String]) -> String {
    let mut out = String::new();
    for (label, text) in OPTION_LABELS.iter().zip(options) {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = write!(out, "{label}. {text}");
    }
    out
}

fn with_system(system: Option<&String>, user: String) -> Vec<ChatMessage> {
    let mut msgs = Vec::with_capacity(2);
    if let Some(s) = system.filter(|s| !s.trim().is_empty()) {
        msgs.push(ChatMessage::system(s.clone()));
    }
    msgs.push(ChatMessage::user(user));
    msgs
}

pub fn render_student_initial(q: &McqQuestion, tpl: &PromptTemplateSet) -> Result<Vec<ChatMessage>, TemplateError> {
    require("student_initial", &tpl.student_initial, &["stem", "options"])?;
    let options = format_options(&q.options);
    let user = fill(&tpl.student_initial, &[("stem", &q.stem), ("options", &options)]);
    Ok(with_system(tpl.student_system.as_ref(), user))
}

/// Follow-up prompt: the question, the student's previous answer and the
/// latest guidance. Earlier turns are deliberately absent.
pub fn render_student_followup(
    q: &McqQuestion,
    prev: &StudentAnswer,
    guidance: &str,
    tpl: &PromptTemplateSet,
) -> Result<Vec<ChatMessage>, TemplateError> {
    require(
        "student_followup",
        &tpl.student_followup,
        &["stem", "options", "prev_answer", "guidance"],
    )?;
    let options = format_options(&q.options);
    let user = fill(
        &tpl.student_followup,
        &[
            ("stem", &q.stem),
            ("options", &options),
            ("prev_answer", &prev.raw_text),
            ("guidance", guidance),
        ],
    );
    Ok(with_system(tpl.student_system.as_ref(), user))
}

pub const ANSWER_BLOCK: &str = "[Student answer, attempt";
pub const GUIDANCE_BLOCK: &str = "[Your guidance after attempt";

/// Chronological answer/guidance blocks: answer 1, guidance 1, answer 2, ...
/// `answers` must be one longer than `moves`.
pub fn render_history(answers: &[StudentAnswer], moves: &[TeacherMove]) -> String {
    let mut out = String::new();
    for (k, answer) in answers.iter().enumerate() {
        if k > 0 {
            out.push_str("\n\n");
        }
        let _ = write!(out, "{ANSWER_BLOCK} {}]\n{}", k + 1, answer.raw_text.trim_end());
        if let Some(m) = moves.get(k) {
            let _ = write!(out, "\n\n{GUIDANCE_BLOCK} {}]\n{}", k + 1, m.guidance.trim_end());
        }
    }
    out
}

/// Teacher prompt for turn `answers.len()`. Takes the stem only, never the options.
pub fn render_teacher(
    stem: &str,
    answers: &[StudentAnswer],
    moves: &[TeacherMove],
    tpl: &PromptTemplateSet,
) -> Result<Vec<ChatMessage>, TemplateError> {
    require("teacher_turn", &tpl.teacher_turn, &["stem", "history"])?;
    if tpl.teacher_turn.contains("{options}") {
        return Err(TemplateError::ForbiddenPlaceholder { template: "teacher_turn", placeholder: "options" });
    }
    debug_assert_eq!(answers.len(), moves.len() + 1);
    let history = render_history(answers, moves);
    let user = fill(&tpl.teacher_turn, &[("stem", stem), ("history", &history)]);
    Ok(with_system(tpl.teacher_system.as_ref(), user))
}

static LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b([a-d])\b").expect("valid regex"));

/// Picks the option a free-text answer chose.
///
/// Rules, in order: the last standalone letter A-D (case-insensitive,
/// optionally parenthesized); otherwise the unique longest option text
/// contained in the answer; otherwise `None`.
pub fn extract_choice(raw: &str, options: &[String]) -> Option<usize> {
    if let Some(m) = LETTER.captures_iter(raw).last() {
        let letter = m[1].to_ascii_uppercase().chars().next()?;
        return OPTION_LABELS.iter().position(|&l| l == letter);
    }
    let haystack = normalize_whitespace(raw).to_lowercase();
    let mut best: Option<(usize, usize)> = None;
    let mut tied = false;
    for (i, opt) in options.iter().enumerate() {
        let needle = normalize_whitespace(opt).to_lowercase();
        if needle.is_empty() || !haystack.contains(&needle) {
            continue;
        }
        let len = needle.chars().count();
        match best {
            Some((_, best_len)) if len < best_len => {}
            Some((_, best_len)) if len == best_len => tied = true,
            _ => {
                best = Some((i, len));
                tied = false;
            }
        }
    }
    if tied {
        None
    } else {
        best.map(|(i, _)| i)
    }
}

static JUDGMENT_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bjudge?ment\s*:[\s*_]*(in)?correct\b").expect("valid regex"));
static GUIDANCE_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)\bguidance\s*:[\s*_]*(.*)$").expect("valid regex"));
static VERDICT_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(in)?correct\b").expect("valid regex"));

/// Parses a `JUDGMENT: ... / GUIDANCE: ...` reply.
///
/// Without a judgment tag the first standalone "correct"/"incorrect" decides
/// the verdict and the whole reply is the guidance. With neither, the
/// verdict is [`Verdict::Unparseable`] and the whole reply is the guidance.
pub fn parse_teacher_move(raw: &str, turn: usize) -> TeacherMove {
    let verdict_of = |negated: bool| if negated { Verdict::JudgedIncorrect } else { Verdict::JudgedCorrect };
    let full = raw.trim().to_string();
    let (verdict, guidance) = if let Some(c) = JUDGMENT_TAG.captures(raw) {
        let verdict = verdict_of(c.get(1).is_some());
        let guidance = match GUIDANCE_TAG.captures(raw) {
            Some(g) => g[1].trim().to_string(),
            None => {
                let whole = c.get(0).expect("match");
                format!("{}{}", &raw[..whole.start()], &raw[whole.end()..]).trim().to_string()
            }
        };
        (verdict, guidance)
    } else if let Some(c) = VERDICT_WORD.captures(raw) {
        (verdict_of(c.get(1).is_some()), full.clone())
    } else {
        (Verdict::Unparseable, full.clone())
    };
    let guidance = if guidance.is_empty() && verdict == Verdict::JudgedIncorrect { full.clone() } else { guidance };
    TeacherMove { turn, verdict, guidance, raw_text: raw.to_string() }
}

#[derive(Debug, thiserror::Error)]
pub enum DialogueFailure {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, thiserror::Error)]
#[error("dialogue teacher={teacher} student={student} question={question} turn={turn}: {source}")]
pub struct DialogueError {
    pub teacher: String,
    pub student: String,
    pub question: String,
    pub turn: usize,
    #[source]
    pub source: DialogueFailure,
}

/// Runs the full protocol for one (teacher, student, question) triple.
///
/// Always executes `cfg.turns` teacher turns, even after the student is
/// correct, so later regressions are observable.
pub fn run_dialogue(
    gateway: &Gateway,
    teacher_id: &str,
    student_id: &str,
    q: &McqQuestion,
    cfg: &RunConfig,
    tpl: &PromptTemplateSet,
) -> Result<DialogueTranscript, DialogueError> {
    let ctx = |turn: usize| {
        move |source: DialogueFailure| DialogueError {
            teacher: teacher_id.to_string(),
            student: student_id.to_string(),
            question: q.id.clone(),
            turn,
            source,
        }
    };
    let student_turn = |msgs: Vec<ChatMessage>, turn: usize| -> Result<StudentAnswer, DialogueError> {
        let raw = gateway
            .complete(student_id, &msgs, &cfg.student_decoding)
            .map_err(|e| ctx(turn)(e.into()))?;
        let parsed = extract_choice(&raw, &q.options);
        Ok(StudentAnswer::scored(turn, raw, parsed, q.gold_index))
    };

    let mut answers = Vec::with_capacity(cfg.turns + 1);
    let mut moves: Vec<TeacherMove> = Vec::with_capacity(cfg.turns);

    let initial = render_student_initial(q, tpl).map_err(|e| ctx(0)(e.into()))?;
    answers.push(student_turn(initial, 0)?);

    for turn in 1..=cfg.turns {
        let prompt = render_teacher(&q.stem, &answers, &moves, tpl).map_err(|e| ctx(turn)(e.into()))?;
        let reply = gateway
            .complete(teacher_id, &prompt, &cfg.teacher_decoding)
            .map_err(|e| ctx(turn)(e.into()))?;
        let mv = parse_teacher_move(&reply, turn);
        let followup = render_student_followup(q, &answers[turn - 1], &mv.guidance, tpl)
            .map_err(|e| ctx(turn)(e.into()))?;
        moves.push(mv);
        answers.push(student_turn(followup, turn)?);
    }

    Ok(DialogueTranscript {
        teacher_id: teacher_id.to_string(),
        student_id: student_id.to_string(),
        question_id: q.id.clone(),
        answers,
        moves,
    })
}

/// The teacher answers the question itself with the student-initial prompt.
pub fn direct_answer(
    gateway: &Gateway,
    teacher_id: &str,
    q: &McqQuestion,
    cfg: &RunConfig,
    tpl: &PromptTemplateSet,
) -> Result<DirectAnswer, DialogueError> {
    let wrap = |source: DialogueFailure| DialogueError {
        teacher: teacher_id.to_string(),
        student: String::new(),
        question: q.id.clone(),
        turn: 0,
        source,
    };
    let msgs = render_student_initial(q, tpl).map_err(|e| wrap(e.into()))?;
    let raw = gateway
        .complete(teacher_id, &msgs, &cfg.teacher_decoding)
        .map_err(|e| wrap(e.into()))?;
    let parsed = extract_choice(&raw, &q.options);
    Ok(DirectAnswer {
        teacher_id: teacher_id.to_string(),
        question_id: q.id.clone(),
        is_correct: parsed == Some(q.gold_index),
        raw_text: raw,
        parsed_index: parsed,
    })
}
