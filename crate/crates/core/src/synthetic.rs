//! Stochastic teacher and student agents with known parameters.
//!
//! Each (student, question) pair gets its own ChaCha substream, so the
//! population can be simulated in parallel and still match a serial run bit
//! for bit. Every turn draws the same three uniforms regardless of state,
//! which keeps runs with different parameters but the same seed coupled
//! (common random numbers).
//!
//! Per turn `t >= 1`, with the student's current answer either right or wrong:
//! - the teacher judges correctly with probability `j`;
//! - if it believes the answer is wrong it guides: a wrong answer becomes
//!   right with probability `g * adopt * r^(t-1)`, a right answer becomes
//!   wrong with probability `alpha`;
//! - if it believes the answer is right the student keeps it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{CorrectnessGrid, DialogueTranscript, StudentAnswer, TeacherMove, Verdict};
use crate::metrics::{self, DecompositionInputs, MetricsError, PredictedGain, ReflectionDomain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticStudentParams {
    /// Probability the unguided answer is correct.
    pub p0: f64,
    /// Probability of following corrective guidance.
    pub adopt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTeacherParams {
    /// Per-turn judgment accuracy.
    pub j: f64,
    /// Probability that corrective guidance is right.
    pub g: f64,
    /// Probability that a misjudged correct answer gets corrupted.
    pub alpha: f64,
    /// Per-turn geometric decay of guidance effectiveness.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error("invalid parameter {name} = {value}: must lie in [0, 1]")]
    InvalidParameter { name: String, value: f64 },
    #[error("n_questions must be at least 1")]
    NoQuestions,
    #[error("turns must be at least 1")]
    NoTurns,
    #[error("at least one student is required")]
    NoStudents,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub students: Vec<SyntheticStudentParams>,
    pub teacher: SyntheticTeacherParams,
    pub n_questions: usize,
    #[serde(default = "default_turns")]
    pub turns: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_turns() -> usize {
    3
}

pub const SYNTHETIC_TEACHER: &str = "synthetic-teacher";

pub fn student_id(k: usize) -> String {
    format!("student-{k}")
}

pub fn question_id(i: usize) -> String {
    format!("q{i}")
}

fn check_unit(name: &str, value: f64) -> Result<(), SimulationError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(SimulationError::InvalidParameter { name: name.to_string(), value })
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.students.is_empty() {
            return Err(SimulationError::NoStudents);
        }
        if self.n_questions == 0 {
            return Err(SimulationError::NoQuestions);
        }
        if self.turns == 0 {
            return Err(SimulationError::NoTurns);
        }
        for (k, s) in self.students.iter().enumerate() {
            check_unit(&format!("students[{k}].p0"), s.p0)?;
            check_unit(&format!("students[{k}].adopt"), s.adopt)?;
        }
        let t = &self.teacher;
        check_unit("teacher.j", t.j)?;
        check_unit("teacher.g", t.g)?;
        check_unit("teacher.alpha", t.alpha)?;
        check_unit("teacher.r", t.r)?;
        Ok(())
    }

    pub fn run(&self) -> Result<SimulatedRun, SimulationError> {
        self.execute(true)
    }

    /// Same as [`run`](Self::run) on a single thread.
    pub fn run_serial(&self) -> Result<SimulatedRun, SimulationError> {
        self.execute(false)
    }

    fn execute(&self, parallel: bool) -> Result<SimulatedRun, SimulationError> {
        self.validate()?;
        let mut grids = Vec::with_capacity(self.students.len());
        let mut transcripts = Vec::with_capacity(self.students.len() * self.n_questions);
        for (k, student) in self.students.iter().enumerate() {
            let simulate = |i: usize| simulate_question(self.seed, k, i, student, &self.teacher, self.turns);
            let outcomes: Vec<QuestionOutcome> = if parallel {
                (0..self.n_questions).into_par_iter().map(simulate).collect()
            } else {
                (0..self.n_questions).map(simulate).collect()
            };
            let sid = student_id(k);
            let mut cells = Vec::with_capacity(self.n_questions);
            for (i, o) in outcomes.into_iter().enumerate() {
                transcripts.push(o.transcript(&sid, &question_id(i)));
                cells.push(o.states);
            }
            grids.push(CorrectnessGrid::new(sid, (0..self.n_questions).map(question_id).collect(), cells));
        }
        Ok(SimulatedRun { turns: self.turns, grids, transcripts })
    }
}

/// Simulated transcripts and grids in the same formats the real pipeline emits.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRun {
    pub turns: usize,
    pub grids: Vec<CorrectnessGrid>,
    pub transcripts: Vec<DialogueTranscript>,
}

struct QuestionOutcome {
    /// Correctness at turns `0..=T`.
    states: Vec<bool>,
    /// Teacher's belief at turns `1..=T` (true = believes correct).
    beliefs: Vec<bool>,
}

impl QuestionOutcome {
    fn transcript(&self, student: &str, question: &str) -> DialogueTranscript {
        let answers = self
            .states
            .iter()
            .enumerate()
            .map(|(t, &ok)| StudentAnswer {
                turn: t,
                raw_text: if ok { "A".into() } else { "B".into() },
                parsed_index: Some(if ok { 0 } else { 1 }),
                is_correct: ok,
            })
            .collect();
        let moves = self
            .beliefs
            .iter()
            .enumerate()
            .map(|(k, &believes_correct)| {
                let (verdict, word) = if believes_correct {
                    (Verdict::JudgedCorrect, "correct")
                } else {
                    (Verdict::JudgedIncorrect, "incorrect")
                };
                TeacherMove {
                    turn: k + 1,
                    verdict,
                    guidance: "synthetic guidance".into(),
                    raw_text: format!("JUDGMENT: {word}\nGUIDANCE: synthetic guidance"),
                }
            })
            .collect();
        DialogueTranscript {
            teacher_id: SYNTHETIC_TEACHER.into(),
            student_id: student.into(),
            question_id: question.into(),
            answers,
            moves,
        }
    }
}

/// Substream for one (student, question) pair.
fn substream(seed: u64, student: usize, question: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((student as u64) << 32) | question as u64);
    rng
}

fn simulate_question(
    seed: u64,
    student_idx: usize,
    question_idx: usize,
    student: &SyntheticStudentParams,
    teacher: &SyntheticTeacherParams,
    turns: usize,
) -> QuestionOutcome {
    let mut rng = substream(seed, student_idx, question_idx);
    let mut correct = rng.gen::<f64>() < student.p0;
    let mut states = Vec::with_capacity(turns + 1);
    let mut beliefs = Vec::with_capacity(turns);
    states.push(correct);
    for t in 1..=turns {
        let (u_judge, u_guide, u_corrupt): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let judged_right = u_judge < teacher.j;
        let believes_correct = if judged_right { correct } else { !correct };
        if !believes_correct {
            if correct {
                if u_corrupt < teacher.alpha {
                    correct = false;
                }
            } else {
                let effectiveness = teacher.r.powi(t as i32 - 1);
                if u_guide < teacher.g * student.adopt * effectiveness {
                    correct = true;
                }
            }
        }
        beliefs.push(believes_correct);
        states.push(correct);
    }
    QuestionOutcome { states, beliefs }
}

pub fn simulate_population(
    students: &[SyntheticStudentParams],
    teacher: SyntheticTeacherParams,
    n_questions: usize,
    turns: usize,
    seed: u64,
) -> Result<SimulatedRun, SimulationError> {
    SimulationConfig { students: students.to_vec(), teacher, n_questions, turns, seed }.run()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredAbilities {
    pub p0: f64,
    pub ja: f64,
    pub ja_prime: Option<f64>,
    pub ga: f64,
    pub ra: Option<f64>,
    pub delta_p1: f64,
    pub delta_pt: f64,
}

/// Measured abilities of a simulated population next to the decomposition predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub true_teacher: SyntheticTeacherParams,
    pub measured: MeasuredAbilities,
    /// Absent when the predictor is inapplicable (JA' undefined).
    pub predicted: Option<PredictedGain>,
    /// `|ΔP_1 measured - ΔP_1 predicted|`
    pub first_turn_error: Option<f64>,
    /// `|ΔP_T measured - ΔP_T predicted|`
    pub after_turns_error: Option<f64>,
    /// `|ΔP_T measured - ΔP_1 measured · (RA measured + 1)|`
    pub multi_turn_identity_error: Option<f64>,
    pub notes: Vec<String>,
}

/// Measures JA, JA', GA, P(S_0) and RA through the metrics module and compares
/// the measured gains with the predictor evaluated at those measurements.
pub fn decomposition_report(
    run: &SimulatedRun,
    teacher: &SyntheticTeacherParams,
) -> Result<DecompositionReport, SimulationError> {
    let mut notes = Vec::new();
    if teacher.alpha != 0.0 {
        notes.push(format!(
            "alpha = {} is non-zero; the predictor is only checked in the alpha = 0 regime",
            teacher.alpha
        ));
    }
    let cells = run.grids.iter().flat_map(|g| g.column(0));
    let (correct, total) = cells.fold((0usize, 0usize), |(c, n), ok| (c + usize::from(ok), n + 1));
    let p0 = correct as f64 / total as f64;
    let ja = metrics::judgment_ability(&run.transcripts)?;
    let ja_prime = match metrics::ja_prime(&run.transcripts) {
        Ok(v) => Some(v),
        Err(MetricsError::ZeroJudgmentErrors) => {
            notes.push("no turn-1 judgment errors: JA' undefined, predictor inapplicable".into());
            None
        }
        Err(e) => return Err(e.into()),
    };
    let ga = metrics::guidance_ability(&run.grids)?.value;
    let ra = if run.turns >= 2 {
        match metrics::reflection_ability(&run.grids, run.turns, ReflectionDomain::AllQuestions) {
            Ok(v) => Some(v),
            Err(e @ MetricsError::EmptyNormalizer { .. }) => {
                notes.push(format!("RA undefined: {e}"));
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        Some(0.0)
    };
    let delta_p1 = metrics::per_turn_delta(&run.grids, 1)?[0];
    let delta_pt = metrics::comprehensive_ability(&run.grids, run.turns)?;

    let predicted = match (ja_prime, ra) {
        (Some(_), Some(ra)) => Some(metrics::predicted_gain(&DecompositionInputs {
            p0,
            ja1: ja,
            ja_prime,
            ga,
            alpha: teacher.alpha,
            ra,
        })?),
        _ => None,
    };
    Ok(DecompositionReport {
        true_teacher: *teacher,
        measured: MeasuredAbilities { p0, ja, ja_prime, ga, ra, delta_p1, delta_pt },
        first_turn_error: predicted.map(|p| (delta_p1 - p.first_turn).abs()),
        after_turns_error: predicted.map(|p| (delta_pt - p.after_turns).abs()),
        multi_turn_identity_error: ra.map(|ra| (delta_pt - delta_p1 * (ra + 1.0)).abs()),
        predicted,
        notes,
    })
}
