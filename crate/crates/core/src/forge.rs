//! Turns open-ended QA pairs into four-option MCQs: harvest wrong answers from
//! weak models, have a rewriter format the item and a reviewer vet it, place
//! the gold answer at a seeded random slot, then grade difficulty against a
//! ladder of increasingly strong models.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dialogue::{self, PromptTemplateSet, TemplateError};
use crate::domain::{validate_question, Category, McqQuestion, OPTION_COUNT};
use crate::gateway::{ChatMessage, DecodingParams, Gateway, GatewayError};
use crate::pool::parallel_map;

pub const REQUIRED_DISTRACTORS: usize = OPTION_COUNT - 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawQaItem {
    pub id: String,
    pub question: String,
    pub gold_answer: String,
    pub source_dataset: String,
    pub category: Category,
}

fn default_sampling() -> DecodingParams {
    DecodingParams::sampled(0.7)
}

fn default_required() -> usize {
    REQUIRED_DISTRACTORS
}

fn default_max_attempts() -> usize {
    20
}

/// Model references are gateway model ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgeConfig {
    pub distractor_models: Vec<String>,
    #[serde(default = "default_sampling")]
    pub sampling: DecodingParams,
    #[serde(default = "default_required")]
    pub required_distractors: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    pub rewriter_model: String,
    pub reviewer_model: String,
    #[serde(default)]
    pub rng_seed: u64,
    /// Extra rewrite+review rounds after a rejection. 0 makes rejection final.
    #[serde(default)]
    pub review_retries: u32,
}

impl ForgeConfig {
    pub fn new(distractor_models: Vec<String>, rewriter: &str, reviewer: &str) -> Self {
        ForgeConfig {
            distractor_models,
            sampling: default_sampling(),
            required_distractors: REQUIRED_DISTRACTORS,
            max_attempts: default_max_attempts(),
            rewriter_model: rewriter.into(),
            reviewer_model: reviewer.into(),
            rng_seed: 0,
            review_retries: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.required_distractors != REQUIRED_DISTRACTORS {
            return Err(format!("required_distractors must be {REQUIRED_DISTRACTORS}"));
        }
        if self.max_attempts < self.required_distractors {
            return Err("max_attempts must be at least required_distractors".into());
        }
        if self.distractor_models.is_empty() {
            return Err("distractor_models is empty".into());
        }
        self.sampling.validate()
    }
}

/// Grader model ids, weakest first. `L` graders give levels `1..=L+1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraderLadder {
    pub graders: Vec<String>,
}

impl GraderLadder {
    pub fn validate(&self) -> Result<(), String> {
        if self.graders.is_empty() {
            return Err("grader ladder is empty".into());
        }
        Ok(())
    }

    pub fn top_level(&self) -> u8 {
        (self.graders.len() + 1) as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rejection {
    InvalidItem { detail: String },
    TooFewDistractors { found: usize, attempts: usize },
    Reviewer { reason: String },
    MalformedRewrite { detail: String },
    InvalidQuestion { detail: String },
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::InvalidItem { detail } => write!(f, "invalid input item: {detail}"),
            Rejection::TooFewDistractors { found, attempts } => {
                write!(f, "only {found} distinct wrong answers after {attempts} samples")
            }
            Rejection::Reviewer { reason } => write!(f, "reviewer rejected: {reason}"),
            Rejection::MalformedRewrite { detail } => write!(f, "malformed rewrite: {detail}"),
            Rejection::InvalidQuestion { detail } => write!(f, "invalid question: {detail}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error("rejected: {0}")]
    Rejected(Rejection),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

impl From<Rejection> for ForgeError {
    fn from(r: Rejection) -> Self {
        ForgeError::Rejected(r)
    }
}

/// Parses a plain number, tolerating thousands separators and a trailing period.
fn as_number(s: &str) -> Option<f64> {
    let cleaned: String = s.trim().trim_end_matches('.').chars().filter(|&c| c != ',').collect();
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Case-folded text with whitespace and punctuation removed.
pub fn normalize_answer(s: &str) -> String {
    s.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

/// Whether two free-text answers say the same thing.
pub fn answers_equivalent(a: &str, b: &str) -> bool {
    match (as_number(a), as_number(b)) {
        (Some(x), Some(y)) => x == y,
        _ => normalize_answer(a) == normalize_answer(b),
    }
}

fn distractor_prompt(question: &str) -> Vec<ChatMessage> {
    vec![ChatMessage::user(format!(
        "Answer the question below. Reply with the final answer only, without explanation.\n\nQuestion: {question}"
    ))]
}

/// Seed of the `attempt`-th distractor sample (0-based).
pub fn sample_seed(cfg: &ForgeConfig, attempt: usize) -> u64 {
    cfg.sampling.seed.unwrap_or(0).wrapping_add(attempt as u64)
}

/// Samples the weak-model pool round-robin until three distinct wrong answers
/// are found or the attempt budget runs out.
pub fn collect_distractors(gw: &Gateway, item: &RawQaItem, cfg: &ForgeConfig) -> Result<Vec<String>, ForgeError> {
    let messages = distractor_prompt(&item.question);
    let mut found: Vec<String> = Vec::new();
    let mut attempts = 0;
    while attempts < cfg.max_attempts && found.len() < cfg.required_distractors {
        let model = &cfg.distractor_models[attempts % cfg.distractor_models.len()];
        let params = DecodingParams { seed: Some(sample_seed(cfg, attempts)), ..cfg.sampling.clone() };
        attempts += 1;
        let sample = gw.complete(model, &messages, &params)?;
        let sample = sample.trim();
        if normalize_answer(sample).is_empty()
            || answers_equivalent(sample, &item.gold_answer)
            || found.iter().any(|d| answers_equivalent(d, sample))
        {
            continue;
        }
        found.push(sample.to_string());
    }
    if found.len() < cfg.required_distractors {
        return Err(Rejection::TooFewDistractors { found: found.len(), attempts }.into());
    }
    Ok(found)
}

fn rewrite_prompt(item: &RawQaItem, distractors: &[String]) -> Vec<ChatMessage> {
    let wrong: String = distractors.iter().map(|d| format!("- {d}\n")).collect();
    vec![ChatMessage::user(format!(
        "Rewrite the question and candidate answers below as a clean multiple-choice item. \
Keep the meaning unchanged, fix grammar and formatting, and do not hint at which answer is correct.\n\
Reply in exactly this format:\n\
QUESTION: <question>\n\
ANSWER: <correct answer>\n\
DISTRACTOR: <wrong answer>\n\
DISTRACTOR: <wrong answer>\n\
DISTRACTOR: <wrong answer>\n\n\
Question: {}\n\
Correct answer: {}\n\
Wrong answers:\n{wrong}",
        item.question, item.gold_answer
    ))]
}

fn review_prompt(rewrite: &Rewrite) -> Vec<ChatMessage> {
    let wrong: String = rewrite.distractors.iter().map(|d| format!("- {d}\n")).collect();
    vec![ChatMessage::user(format!(
        "Review the multiple-choice item below. Accept it only if the stated answer is correct, \
none of the other options is also correct, and the question is clear.\n\
Reply in exactly this format:\n\
VERDICT: accept | reject\n\
REASON: <one sentence>\n\n\
Question: {}\n\
Correct answer: {}\n\
Other options:\n{wrong}",
        rewrite.stem, rewrite.answer
    ))]
}

/// Rewriter output: stem, correct answer and wrong answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rewrite {
    pub stem: String,
    pub answer: String,
    pub distractors: Vec<String>,
}

static FIELD_TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*\**\s*(question|answer|distractor)\s*\**\s*:\s*\**(.*)$").unwrap());
static VERDICT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bverdict\s*:[\s*_]*(accept|reject)").unwrap());
static REASON: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)\breason\s*:[\s*_]*(.*)$").unwrap());

/// Parses `QUESTION:` / `ANSWER:` / `DISTRACTOR:` fields. A field runs until
/// the next tagged line, so stems may span several lines.
pub fn parse_rewrite(text: &str) -> Result<Rewrite, Rejection> {
    let mut fields: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if let Some(c) = FIELD_TAG.captures(line) {
            fields.push((c[1].to_lowercase(), c[2].trim().to_string()));
        } else if let Some((_, value)) = fields.last_mut() {
            if !line.trim().is_empty() {
                if !value.is_empty() {
                    value.push('\n');
                }
                value.push_str(line.trim_end());
            }
        }
    }
    let malformed = |detail: String| Rejection::MalformedRewrite { detail };
    let take = |tag: &str| -> Vec<String> {
        fields.iter().filter(|(t, _)| t == tag).map(|(_, v)| v.trim().to_string()).collect()
    };
    let (stems, answers, distractors) = (take("question"), take("answer"), take("distractor"));
    if stems.len() != 1 || answers.len() != 1 || distractors.len() != REQUIRED_DISTRACTORS {
        return Err(malformed(format!(
            "expected 1 question, 1 answer and {REQUIRED_DISTRACTORS} distractors, got {}/{}/{}",
            stems.len(),
            answers.len(),
            distractors.len()
        )));
    }
    if stems[0].is_empty() || answers[0].is_empty() || distractors.iter().any(String::is_empty) {
        return Err(malformed("empty field".into()));
    }
    Ok(Rewrite { stem: stems[0].clone(), answer: answers[0].clone(), distractors })
}

/// `Ok(())` on accept, the reviewer's reason on reject.
pub fn parse_review(text: &str) -> Result<(), String> {
    let reason = REASON
        .captures(text)
        .map(|c| c[1].trim().to_string())
        .filter(|r| !r.is_empty());
    match VERDICT.captures(text).map(|c| c[1].to_lowercase()) {
        Some(v) if v == "accept" => Ok(()),
        Some(_) => Err(reason.unwrap_or_else(|| "no reason given".into())),
        None => Err(format!("unparseable review: {}", text.trim())),
    }
}

/// Seeded RNG for one item's option shuffle.
fn item_rng(rng_seed: u64, item_id: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(item_id.as_bytes());
    let stream = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(stream);
    rng
}

/// Puts the gold answer and distractors in a uniformly random order.
pub fn shuffle_options(answer: &str, distractors: &[String], rng_seed: u64, item_id: &str) -> (Vec<String>, usize) {
    let mut slots: Vec<usize> = (0..=distractors.len()).collect();
    slots.shuffle(&mut item_rng(rng_seed, item_id));
    let options = slots
        .iter()
        .map(|&s| if s == 0 { answer.to_string() } else { distractors[s - 1].clone() })
        .collect();
    let gold = slots.iter().position(|&s| s == 0).expect("gold slot present");
    (options, gold)
}

/// Rewrites, reviews and shuffles one item into a validated question.
pub fn rewrite_and_review(
    gw: &Gateway,
    item: &RawQaItem,
    distractors: &[String],
    cfg: &ForgeConfig,
) -> Result<McqQuestion, ForgeError> {
    let mut round = 0;
    let rewrite = loop {
        let params = DecodingParams { seed: (round > 0).then_some(round as u64), ..DecodingParams::default() };
        let text = gw.complete(&cfg.rewriter_model, &rewrite_prompt(item, distractors), &params)?;
        let rewrite = parse_rewrite(&text)?;
        let review = gw.complete(&cfg.reviewer_model, &review_prompt(&rewrite), &params)?;
        match parse_review(&review) {
            Ok(()) => break rewrite,
            Err(reason) if round >= cfg.review_retries => return Err(Rejection::Reviewer { reason }.into()),
            Err(reason) => log::info!("item {}: review round {round} rejected: {reason}", item.id),
        }
        round += 1;
    };
    let (options, gold_index) = shuffle_options(&rewrite.answer, &rewrite.distractors, cfg.rng_seed, &item.id);
    let q = McqQuestion {
        id: item.id.clone(),
        stem: rewrite.stem,
        options,
        gold_index,
        category: item.category,
        source_dataset: item.source_dataset.clone(),
        difficulty: None,
    };
    let violations = validate_question(&q);
    if !violations.is_empty() {
        let detail = violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(Rejection::InvalidQuestion { detail }.into());
    }
    Ok(q)
}

/// Level from per-grader correctness, weakest first: the 1-based index of the
/// first correct grader, or `L + 1` if none is correct.
pub fn first_correct_level(correct: &[bool]) -> u8 {
    (correct.iter().position(|&c| c).unwrap_or(correct.len()) + 1) as u8
}

/// Asks each grader in turn with the student prompt at temperature 0 and
/// stops at the first correct one.
pub fn classify_difficulty(
    gw: &Gateway,
    q: &McqQuestion,
    ladder: &GraderLadder,
    templates: &PromptTemplateSet,
) -> Result<u8, ForgeError> {
    let messages = dialogue::render_student_initial(q, templates)?;
    let params = DecodingParams::default();
    for (i, grader) in ladder.graders.iter().enumerate() {
        let raw = gw.complete(grader, &messages, &params)?;
        if dialogue::extract_choice(&raw, &q.options) == Some(q.gold_index) {
            return Ok((i + 1) as u8);
        }
    }
    Ok(ladder.top_level())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub item_id: String,
    pub source_dataset: String,
    pub reason: Rejection,
}

/// Items lost to model or transport errors rather than rejected on content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub item_id: String,
    pub source_dataset: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub category: Option<Category>,
    pub input: usize,
    pub emitted: usize,
    pub rejected: usize,
    pub failed: usize,
    /// Emitted items per difficulty level, when a ladder was used.
    pub per_level: BTreeMap<u8, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeManifest {
    pub config: ForgeConfig,
    pub ladder: Option<GraderLadder>,
    pub input_items: usize,
    pub emitted: usize,
    pub rejected: usize,
    pub failed: usize,
    pub per_dataset: BTreeMap<String, DatasetCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgeOutput {
    pub questions: Vec<McqQuestion>,
    pub rejections: Vec<RejectionRecord>,
    pub failures: Vec<FailureRecord>,
    pub manifest: ForgeManifest,
}

enum ItemOutcome {
    Emitted(McqQuestion),
    Rejected(Rejection),
    Failed(String),
}

fn forge_item(
    gw: &Gateway,
    item: &RawQaItem,
    cfg: &ForgeConfig,
    ladder: Option<&GraderLadder>,
    templates: &PromptTemplateSet,
) -> ItemOutcome {
    if item.gold_answer.trim().is_empty() {
        return ItemOutcome::Rejected(Rejection::InvalidItem { detail: "empty gold answer".into() });
    }
    if item.question.trim().is_empty() {
        return ItemOutcome::Rejected(Rejection::InvalidItem { detail: "empty question".into() });
    }
    let result = collect_distractors(gw, item, cfg)
        .and_then(|d| rewrite_and_review(gw, item, &d, cfg))
        .and_then(|mut q| {
            if let Some(ladder) = ladder {
                q.difficulty = Some(classify_difficulty(gw, &q, ladder, templates)?);
            }
            Ok(q)
        });
    match result {
        Ok(q) => ItemOutcome::Emitted(q),
        Err(ForgeError::Rejected(r)) => ItemOutcome::Rejected(r),
        Err(e) => ItemOutcome::Failed(e.to_string()),
    }
}

/// Runs the whole pipeline. Items are processed concurrently; output order
/// follows input order.
pub fn build_dataset(
    gw: &Gateway,
    items: &[RawQaItem],
    cfg: &ForgeConfig,
    ladder: Option<&GraderLadder>,
    templates: &PromptTemplateSet,
    workers: usize,
) -> ForgeOutput {
    let outcomes = parallel_map(items, workers, |item| forge_item(gw, item, cfg, ladder, templates));
    let mut out = ForgeOutput {
        questions: Vec::new(),
        rejections: Vec::new(),
        failures: Vec::new(),
        manifest: ForgeManifest {
            config: cfg.clone(),
            ladder: ladder.cloned(),
            input_items: items.len(),
            emitted: 0,
            rejected: 0,
            failed: 0,
            per_dataset: BTreeMap::new(),
        },
    };
    for (item, outcome) in items.iter().zip(outcomes) {
        let counts = out.manifest.per_dataset.entry(item.source_dataset.clone()).or_default();
        counts.category.get_or_insert(item.category);
        counts.input += 1;
        match outcome {
            ItemOutcome::Emitted(q) => {
                counts.emitted += 1;
                if let Some(level) = q.difficulty {
                    *counts.per_level.entry(level).or_default() += 1;
                }
                out.questions.push(q);
            }
            ItemOutcome::Rejected(reason) => {
                counts.rejected += 1;
                log::info!("item {} rejected: {reason}", item.id);
                out.rejections.push(RejectionRecord {
                    item_id: item.id.clone(),
                    source_dataset: item.source_dataset.clone(),
                    reason,
                });
            }
            ItemOutcome::Failed(error) => {
                counts.failed += 1;
                log::warn!("item {} failed: {error}", item.id);
                out.failures.push(FailureRecord {
                    item_id: item.id.clone(),
                    source_dataset: item.source_dataset.clone(),
                    error,
                });
            }
        }
    }
    out.manifest.emitted = out.questions.len();
    out.manifest.rejected = out.rejections.len();
    out.manifest.failed = out.failures.len();
    out
}

/// Scripted-fixture helpers: the exact prompts the forge sends.
pub mod prompts {
    use super::*;

    pub fn distractor(item: &RawQaItem) -> Vec<ChatMessage> {
        distractor_prompt(&item.question)
    }

    pub fn rewrite(item: &RawQaItem, distractors: &[String]) -> Vec<ChatMessage> {
        rewrite_prompt(item, distractors)
    }

    pub fn review(rewrite: &Rewrite) -> Vec<ChatMessage> {
        review_prompt(rewrite)
    }
}
