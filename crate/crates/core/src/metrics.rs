//! Ability metrics computed from correctness grids and transcripts.
//!
//! All values are fractions. Display code multiplies by 100 to get
//! percentage points.
//!
//! | metric | meaning |
//! |---|---|
//! | AA | teacher's zero-shot accuracy |
//! | ΔP_t | change in student accuracy between turns `t-1` and `t` |
//! | CA | mean over students of the cumulative gain after `T` turns |
//! | JA | how often the turn-1 verdict matches the truth of the initial answer |
//! | GA | share of initially wrong answers fixed after one guided turn |
//! | RA | compounded net flip rate over turns `2..=T` |

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::domain::{Category, CorrectnessGrid, DialogueTranscript, McqQuestion, Verdict};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no student grids")]
    NoStudents,
    #[error("turn {turn} out of range 1..={max}")]
    TurnOutOfRange { turn: usize, max: usize },
    #[error("grids disagree: {0}")]
    MismatchedGrids(String),
    #[error("transcript for student {student} on question {question} has no turn-1 move")]
    MissingMove { student: String, question: String },
    #[error("student {student}: no question answered correctly at turn {turn}")]
    EmptyNormalizer { student: String, turn: usize },
    #[error("no turn-1 judgment errors; JA' is undefined")]
    ZeroJudgmentErrors,
    #[error("JA' is undefined; the gain predictor cannot be evaluated")]
    UndefinedJaPrime,
    #[error("reflection needs at least 2 turns, got {0}")]
    TooFewTurns(usize),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn fraction_true(values: impl IntoIterator<Item = bool>) -> Option<f64> {
    mean(values.into_iter().map(|b| if b { 1.0 } else { 0.0 }))
}

/// Accuracy of one column of a grid.
pub fn accuracy(grid: &CorrectnessGrid, turn: usize) -> Result<f64> {
    if grid.questions() == 0 {
        return Err(MetricsError::EmptyDataset);
    }
    if turn >= grid.columns() {
        return Err(MetricsError::TurnOutOfRange { turn, max: grid.columns().saturating_sub(1) });
    }
    Ok(fraction_true(grid.column(turn)).expect("non-empty"))
}

/// Application ability: mean of the teacher's zero-shot correctness row.
pub fn application_ability(teacher_row: &[bool]) -> Result<f64> {
    fraction_true(teacher_row.iter().copied()).ok_or(MetricsError::EmptyDataset)
}

/// `ΔP_t = (1/|D|) Σ_i (I(S_{i,t}) - I(S_{i,t-1}))` for `t >= 1`.
pub fn delta_p(grid: &CorrectnessGrid, t: usize) -> Result<f64> {
    let max = grid.columns().saturating_sub(1);
    if t == 0 || t > max {
        return Err(MetricsError::TurnOutOfRange { turn: t, max });
    }
    if grid.questions() == 0 {
        return Err(MetricsError::EmptyDataset);
    }
    let net: i64 = grid
        .cells
        .iter()
        .map(|row| i64::from(row[t]) - i64::from(row[t - 1]))
        .sum();
    Ok(net as f64 / grid.questions() as f64)
}

/// `Σ_{t=1..=turns} ΔP_t`, which telescopes to `P_turns - P_0`.
///
/// Computed from the net count so the identity holds exactly in floating point.
pub fn cumulative_gain(grid: &CorrectnessGrid, turns: usize) -> Result<f64> {
    let max = grid.columns().saturating_sub(1);
    if turns == 0 || turns > max {
        return Err(MetricsError::TurnOutOfRange { turn: turns, max });
    }
    if grid.questions() == 0 {
        return Err(MetricsError::EmptyDataset);
    }
    let net: i64 = (1..=turns)
        .flat_map(|t| grid.cells.iter().map(move |row| i64::from(row[t]) - i64::from(row[t - 1])))
        .sum();
    Ok(net as f64 / grid.questions() as f64)
}

/// Checks that every grid covers the same questions and at least `turns + 1` columns.
fn check_grids(grids: &[CorrectnessGrid], min_columns: usize) -> Result<()> {
    let first = grids.first().ok_or(MetricsError::NoStudents)?;
    if first.questions() == 0 {
        return Err(MetricsError::EmptyDataset);
    }
    for g in grids {
        if g.question_ids != first.question_ids || g.cells.len() != first.cells.len() {
            return Err(MetricsError::MismatchedGrids(format!(
                "student {} covers different questions than {}",
                g.student_id, first.student_id
            )));
        }
        if g.cells.iter().any(|row| row.len() != first.columns()) {
            return Err(MetricsError::MismatchedGrids(format!("student {} has ragged rows", g.student_id)));
        }
        if g.columns() != first.columns() {
            return Err(MetricsError::MismatchedGrids(format!(
                "student {} has {} columns, {} has {}",
                g.student_id,
                g.columns(),
                first.student_id,
                first.columns()
            )));
        }
    }
    if first.columns() < min_columns {
        return Err(MetricsError::TurnOutOfRange {
            turn: min_columns.saturating_sub(1),
            max: first.columns().saturating_sub(1),
        });
    }
    Ok(())
}

/// Comprehensive ability: mean cumulative gain over students.
pub fn comprehensive_ability(grids: &[CorrectnessGrid], turns: usize) -> Result<f64> {
    check_grids(grids, turns + 1)?;
    let gains = grids
        .iter()
        .map(|g| cumulative_gain(g, turns))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(gains).expect("non-empty"))
}

/// Mean `ΔP_t` over students for every `t` in `1..=turns`.
pub fn per_turn_delta(grids: &[CorrectnessGrid], turns: usize) -> Result<Vec<f64>> {
    check_grids(grids, turns + 1)?;
    (1..=turns)
        .map(|t| {
            let deltas = grids.iter().map(|g| delta_p(g, t)).collect::<Result<Vec<_>>>()?;
            Ok(mean(deltas).expect("non-empty"))
        })
        .collect()
}

/// True when the turn-1 verdict agrees with the truth of the initial answer.
/// An unparseable verdict never agrees.
pub fn first_judgment_correct(t: &DialogueTranscript) -> Result<bool> {
    let mv = t.move_at(1).ok_or_else(|| MetricsError::MissingMove {
        student: t.student_id.clone(),
        question: t.question_id.clone(),
    })?;
    let initial = t.answers.first().ok_or_else(|| MetricsError::MissingMove {
        student: t.student_id.clone(),
        question: t.question_id.clone(),
    })?;
    Ok(match mv.verdict {
        Verdict::JudgedCorrect => initial.is_correct,
        Verdict::JudgedIncorrect => !initial.is_correct,
        Verdict::Unparseable => false,
    })
}

fn by_student(transcripts: &[DialogueTranscript]) -> BTreeMap<&str, Vec<&DialogueTranscript>> {
    let mut map: BTreeMap<&str, Vec<&DialogueTranscript>> = BTreeMap::new();
    for t in transcripts {
        map.entry(t.student_id.as_str()).or_default().push(t);
    }
    map
}

/// Judgment ability: per-student accuracy of the turn-1 verdict, averaged over students.
pub fn judgment_ability(transcripts: &[DialogueTranscript]) -> Result<f64> {
    if transcripts.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let per_student = by_student(transcripts)
        .into_values()
        .map(|ts| {
            let hits = ts
                .iter()
                .map(|t| first_judgment_correct(t))
                .collect::<Result<Vec<_>>>()?;
            Ok(fraction_true(hits).expect("non-empty"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(per_student).expect("non-empty"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceAbility {
    pub value: f64,
    /// Students with no initially wrong answer. Each contributed 0 to the mean.
    pub flagged_students: Vec<String>,
}

/// Guidance ability: per student `|{i: ¬S_{i,0} ∧ S_{i,1}}| / |{i: ¬S_{i,0}}|`,
/// averaged over students. A student with an empty denominator contributes 0
/// and is flagged.
pub fn guidance_ability(grids: &[CorrectnessGrid]) -> Result<GuidanceAbility> {
    check_grids(grids, 2)?;
    let mut flagged = Vec::new();
    let per_student = grids.iter().map(|g| {
        let wrong = g.cells.iter().filter(|row| !row[0]).count();
        let fixed = g.cells.iter().filter(|row| !row[0] && row[1]).count();
        if wrong == 0 {
            flagged.push(g.student_id.clone());
            0.0
        } else {
            fixed as f64 / wrong as f64
        }
    });
    let value = mean(per_student.collect::<Vec<_>>()).expect("non-empty");
    Ok(GuidanceAbility { value, flagged_students: flagged })
}

/// Which questions the numerator of a reflection step sums over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReflectionDomain {
    /// Net flips over every question, normalized by the count of questions
    /// answered correctly at `t-1`. Default.
    #[default]
    AllQuestions,
    /// Sum restricted to questions correct at `t-1`. Wrong-to-right flips can
    /// then never count, so every step is `<= 0`. Kept for auditing.
    PreviouslyCorrect,
}

/// One reflection step `RA_t` for `t >= 2`.
pub fn reflection_turn(grid: &CorrectnessGrid, t: usize, domain: ReflectionDomain) -> Result<f64> {
    let max = grid.columns().saturating_sub(1);
    if t < 2 || t > max {
        return Err(MetricsError::TurnOutOfRange { turn: t, max });
    }
    let normalizer = grid.cells.iter().filter(|row| row[t - 1]).count();
    if normalizer == 0 {
        return Err(MetricsError::EmptyNormalizer { student: grid.student_id.clone(), turn: t - 1 });
    }
    let net: i64 = grid
        .cells
        .iter()
        .filter(|row| domain == ReflectionDomain::AllQuestions || row[t - 1])
        .map(|row| i64::from(!row[t - 1] && row[t]) - i64::from(row[t - 1] && !row[t]))
        .sum();
    Ok(net as f64 / normalizer as f64)
}

/// Reflection ability: per student `Π_{t=2..=turns}(1 + RA_t) - 1`, averaged.
pub fn reflection_ability(grids: &[CorrectnessGrid], turns: usize, domain: ReflectionDomain) -> Result<f64> {
    if turns < 2 {
        return Err(MetricsError::TooFewTurns(turns));
    }
    check_grids(grids, turns + 1)?;
    let per_student = grids
        .iter()
        .map(|g| {
            let product = (2..=turns).try_fold(1.0, |acc, t| Ok(acc * (1.0 + reflection_turn(g, t, domain)?)))?;
            Ok(product - 1.0)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(per_student).expect("non-empty"))
}

/// `JA' = (number of initially wrong answers) / (number of turn-1 judgment errors)`,
/// pooled over all transcripts.
pub fn ja_prime(transcripts: &[DialogueTranscript]) -> Result<f64> {
    if transcripts.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let mut initially_wrong = 0usize;
    let mut judgment_errors = 0usize;
    for t in transcripts {
        if !first_judgment_correct(t)? {
            judgment_errors += 1;
        }
        if !t.answers[0].is_correct {
            initially_wrong += 1;
        }
    }
    if judgment_errors == 0 {
        return Err(MetricsError::ZeroJudgmentErrors);
    }
    Ok(initially_wrong as f64 / judgment_errors as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionInputs {
    /// Initial student accuracy `P(S_0)`.
    pub p0: f64,
    /// First-turn judgment accuracy.
    pub ja1: f64,
    /// `None` when undefined (no judgment errors).
    pub ja_prime: Option<f64>,
    pub ga: f64,
    /// Probability that a misjudged correct answer is corrupted by guidance.
    pub alpha: f64,
    pub ra: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedGain {
    pub first_turn: f64,
    pub after_turns: f64,
}

/// Evaluates the decomposition predictor:
///
/// `ΔP_1 = JA'·GA·(JA·(1-P_0) + P_0·(1-JA)) - α·P_0·(1-JA)`
/// `ΔP_T = ΔP_1·(RA + 1)`
pub fn predicted_gain(inputs: &DecompositionInputs) -> Result<PredictedGain> {
    let ja_prime = inputs
        .ja_prime
        .filter(|v| v.is_finite())
        .ok_or(MetricsError::UndefinedJaPrime)?;
    let DecompositionInputs { p0, ja1, ga, alpha, ra, .. } = *inputs;
    let first_turn = ja_prime * ga * (ja1 * (1.0 - p0) + p0 * (1.0 - ja1)) - alpha * p0 * (1.0 - ja1);
    Ok(PredictedGain { first_turn, after_turns: first_turn * (ra + 1.0) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityValues {
    pub ca: f64,
    /// Absent when no zero-shot teacher answers are available.
    pub aa: Option<f64>,
    pub ja: f64,
    pub ga: f64,
    /// Absent when `T < 2` or some student had no correct answer at a turn.
    pub ra: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityScores {
    pub overall: AbilityValues,
    pub per_category: BTreeMap<Category, AbilityValues>,
    pub per_turn_delta: Vec<f64>,
    pub ga_flagged_students: Vec<String>,
    pub notes: Vec<String>,
}

fn ability_values(
    grids: &[CorrectnessGrid],
    transcripts: &[DialogueTranscript],
    teacher_row: Option<&[bool]>,
    turns: usize,
    domain: ReflectionDomain,
    notes: &mut Vec<String>,
    label: &str,
) -> Result<(AbilityValues, GuidanceAbility)> {
    let ca = comprehensive_ability(grids, turns)?;
    let aa = teacher_row.map(application_ability).transpose()?;
    let ja = judgment_ability(transcripts)?;
    let ga = guidance_ability(grids)?;
    let ra = if turns < 2 {
        None
    } else {
        match reflection_ability(grids, turns, domain) {
            Ok(v) => Some(v),
            Err(e @ MetricsError::EmptyNormalizer { .. }) => {
                notes.push(format!("{label}: RA undefined ({e})"));
                None
            }
            Err(e) => return Err(e),
        }
    };
    Ok((AbilityValues { ca, aa, ja, ga: ga.value, ra }, ga))
}

/// Scores one teacher overall and per category.
///
/// Questions are sliced by category first; every metric is then recomputed
/// within the slice. `teacher_row`, when given, is aligned with `questions`.
pub fn score_teacher(
    questions: &[McqQuestion],
    grids: &[CorrectnessGrid],
    transcripts: &[DialogueTranscript],
    teacher_row: Option<&[bool]>,
    turns: usize,
    domain: ReflectionDomain,
) -> Result<AbilityScores> {
    if let Some(row) = teacher_row {
        if row.len() != questions.len() {
            return Err(MetricsError::MismatchedGrids(format!(
                "teacher row has {} entries for {} questions",
                row.len(),
                questions.len()
            )));
        }
    }
    let mut notes = Vec::new();
    let (overall, ga) = ability_values(grids, transcripts, teacher_row, turns, domain, &mut notes, "overall")?;
    let per_turn_delta = per_turn_delta(grids, turns)?;

    let category_of: HashMap<&str, Category> = questions.iter().map(|q| (q.id.as_str(), q.category)).collect();
    let mut per_category = BTreeMap::new();
    for cat in Category::ALL {
        let in_cat = |id: &str| category_of.get(id) == Some(&cat);
        if !questions.iter().any(|q| q.category == cat) {
            continue;
        }
        let sliced: Vec<CorrectnessGrid> = grids.iter().map(|g| g.filter_rows(in_cat)).collect();
        let sliced_transcripts: Vec<DialogueTranscript> =
            transcripts.iter().filter(|t| in_cat(&t.question_id)).cloned().collect();
        let sliced_row: Option<Vec<bool>> = teacher_row.map(|row| {
            questions
                .iter()
                .zip(row)
                .filter(|(q, _)| q.category == cat)
                .map(|(_, &c)| c)
                .collect()
        });
        let (values, _) = ability_values(
            &sliced,
            &sliced_transcripts,
            sliced_row.as_deref(),
            turns,
            domain,
            &mut notes,
            cat.as_str(),
        )?;
        per_category.insert(cat, values);
    }
    if !ga.flagged_students.is_empty() {
        notes.push(format!(
            "GA: students with no initially wrong answers contributed 0: {}",
            ga.flagged_students.join(", ")
        ));
    }
    Ok(AbilityScores {
        overall,
        per_category,
        per_turn_delta,
        ga_flagged_students: ga.flagged_students,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{StudentAnswer, TeacherMove};

    const C: bool = true;
    const W: bool = false;

    fn grid(columns: &[&[bool]]) -> CorrectnessGrid {
        let rows = columns[0].len();
        let cells = (0..rows).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        CorrectnessGrid::from_cells("s", cells)
    }

    fn transcript(student: &str, q: usize, initial_correct: bool, verdict: Verdict) -> DialogueTranscript {
        DialogueTranscript {
            teacher_id: "t".into(),
            student_id: student.into(),
            question_id: format!("q{q}"),
            answers: vec![
                StudentAnswer { turn: 0, raw_text: String::new(), parsed_index: None, is_correct: initial_correct },
                StudentAnswer { turn: 1, raw_text: String::new(), parsed_index: None, is_correct: initial_correct },
            ],
            moves: vec![TeacherMove { turn: 1, verdict, guidance: "g".into(), raw_text: "g".into() }],
        }
    }

    #[test]
    fn application_examples() {
        assert_eq!(application_ability(&[C, W, C, W]).unwrap(), 0.5);
        assert_eq!(application_ability(&[C, C, C]).unwrap(), 1.0);
        assert_eq!(application_ability(&[]), Err(MetricsError::EmptyDataset));
    }

    #[test]
    fn delta_p_examples() {
        let g = grid(&[&[W, W, C, W], &[C, W, C, W]]);
        assert_eq!(delta_p(&g, 1).unwrap(), 0.25);
        let same = grid(&[&[C, W], &[C, W]]);
        assert_eq!(delta_p(&same, 1).unwrap(), 0.0);
        let regress = grid(&[&[C, C], &[W, W]]);
        assert_eq!(delta_p(&regress, 1).unwrap(), -1.0);
        assert!(matches!(delta_p(&g, 2), Err(MetricsError::TurnOutOfRange { .. })));
        assert!(matches!(delta_p(&g, 0), Err(MetricsError::TurnOutOfRange { .. })));
    }

    #[test]
    fn cumulative_gain_examples() {
        // P_0 = 1/4, P_3 = 2/4
        let g = grid(&[&[C, W, W, W], &[W, W, C, W], &[C, C, W, W], &[C, W, C, W]]);
        assert_eq!(cumulative_gain(&g, 3).unwrap(), 0.25);
        let flat = grid(&[&[C, W], &[C, W], &[C, W]]);
        assert_eq!(cumulative_gain(&flat, 2).unwrap(), 0.0);
    }

    #[test]
    fn comprehensive_is_mean_of_gains() {
        // gains 0.25 and 0.15 need a 20-question grid for the second student
        let mut a = vec![vec![W, W]; 20];
        for row in a.iter_mut().take(5) {
            row[1] = C;
        }
        let mut b = vec![vec![W, W]; 20];
        for row in b.iter_mut().take(3) {
            row[1] = C;
        }
        let grids = [CorrectnessGrid::from_cells("a", a), CorrectnessGrid::from_cells("b", b)];
        assert!((comprehensive_ability(&grids, 1).unwrap() - 0.20).abs() < 1e-12);
        assert_eq!(comprehensive_ability(&grids[..1], 1).unwrap(), 0.25);
        let mismatched = [grids[0].clone(), CorrectnessGrid::from_cells("c", vec![vec![W, W]; 3])];
        assert!(matches!(comprehensive_ability(&mismatched, 1), Err(MetricsError::MismatchedGrids(_))));
        assert_eq!(comprehensive_ability(&[], 1), Err(MetricsError::NoStudents));
    }

    #[test]
    fn judgment_examples() {
        use Verdict::*;
        let truth = [C, W, C, W];
        let verdicts = [JudgedCorrect, JudgedCorrect, JudgedIncorrect, JudgedIncorrect];
        let ts: Vec<_> = (0..4).map(|i| transcript("s", i, truth[i], verdicts[i])).collect();
        assert_eq!(judgment_ability(&ts).unwrap(), 0.5);
        let perfect: Vec<_> = (0..4)
            .map(|i| transcript("s", i, truth[i], if truth[i] { JudgedCorrect } else { JudgedIncorrect }))
            .collect();
        assert_eq!(judgment_ability(&perfect).unwrap(), 1.0);
        let unreadable: Vec<_> = (0..4).map(|i| transcript("s", i, truth[i], Unparseable)).collect();
        assert_eq!(judgment_ability(&unreadable).unwrap(), 0.0);
        let mut missing = ts[0].clone();
        missing.moves.clear();
        assert!(matches!(judgment_ability(&[missing]), Err(MetricsError::MissingMove { .. })));
    }

    #[test]
    fn judgment_averages_per_student() {
        use Verdict::*;
        // student a: 1/1 right; student b: 0/3 right -> (1 + 0)/2
        let mut ts = vec![transcript("a", 0, C, JudgedCorrect)];
        ts.extend((0..3).map(|i| transcript("b", i, C, JudgedIncorrect)));
        assert_eq!(judgment_ability(&ts).unwrap(), 0.5);
    }

    #[test]
    fn guidance_examples() {
        let g = grid(&[&[C, W, C, W], &[C, C, C, W]]);
        let ga = guidance_ability(std::slice::from_ref(&g)).unwrap();
        assert_eq!(ga.value, 0.5);
        assert!(ga.flagged_students.is_empty());
        let all_right = CorrectnessGrid::from_cells("perfect", vec![vec![C, C]; 4]);
        let ga = guidance_ability(&[g, all_right]).unwrap();
        assert_eq!(ga.value, 0.25);
        assert_eq!(ga.flagged_students, vec!["perfect".to_string()]);
    }

    #[test]
    fn reflection_turn_examples() {
        // turn1 correct {q1,q2}; turn2: q3 W->C, q1 C->W
        let g = grid(&[&[W, W, W, W], &[C, C, W, W], &[W, C, C, W]]);
        assert_eq!(reflection_turn(&g, 2, ReflectionDomain::AllQuestions).unwrap(), 0.0);
        assert_eq!(reflection_turn(&g, 2, ReflectionDomain::PreviouslyCorrect).unwrap(), -0.5);
        let still = grid(&[&[W, C], &[W, C], &[W, C]]);
        assert_eq!(reflection_turn(&still, 2, ReflectionDomain::AllQuestions).unwrap(), 0.0);
        // turn1 correct {q1}; turn2: q2 W->C only
        let g = grid(&[&[W, W, W, W], &[C, W, W, W], &[C, C, W, W]]);
        assert_eq!(reflection_turn(&g, 2, ReflectionDomain::AllQuestions).unwrap(), 1.0);
        assert_eq!(reflection_turn(&g, 2, ReflectionDomain::PreviouslyCorrect).unwrap(), 0.0);
        let empty = grid(&[&[W, W], &[W, W], &[C, W]]);
        assert!(matches!(
            reflection_turn(&empty, 2, ReflectionDomain::AllQuestions),
            Err(MetricsError::EmptyNormalizer { turn: 1, .. })
        ));
    }

    #[test]
    fn reflection_compounds() {
        // 100, 110, 121 correct of 200 at turns 1..=3: RA_2 = RA_3 = 0.1
        let n = 200;
        let cells: Vec<Vec<bool>> = (0..n).map(|i| vec![W, i < 100, i < 110, i < 121]).collect();
        let g = CorrectnessGrid::from_cells("s", cells);
        let ra = reflection_ability(&[g], 3, ReflectionDomain::AllQuestions).unwrap();
        assert!((ra - 0.21).abs() < 1e-12);
        let flat = CorrectnessGrid::from_cells("s", vec![vec![C, C, C, C]; 4]);
        assert_eq!(reflection_ability(std::slice::from_ref(&flat), 3, ReflectionDomain::AllQuestions).unwrap(), 0.0);
        assert_eq!(reflection_ability(&[flat], 1, ReflectionDomain::AllQuestions), Err(MetricsError::TooFewTurns(1)));
    }

    #[test]
    fn ja_prime_examples() {
        use Verdict::*;
        // 6 initially wrong, 3 judgment errors
        let mut ts: Vec<_> = (0..3).map(|i| transcript("s", i, W, JudgedIncorrect)).collect();
        ts.extend((3..6).map(|i| transcript("s", i, W, JudgedCorrect)));
        ts.extend((6..10).map(|i| transcript("s", i, C, JudgedCorrect)));
        assert_eq!(ja_prime(&ts).unwrap(), 2.0);
        let equal: Vec<_> = (0..4).map(|i| transcript("s", i, W, Unparseable)).collect();
        assert_eq!(ja_prime(&equal).unwrap(), 1.0);
        let perfect: Vec<_> = (0..4).map(|i| transcript("s", i, W, JudgedIncorrect)).collect();
        assert_eq!(ja_prime(&perfect), Err(MetricsError::ZeroJudgmentErrors));
    }

    #[test]
    fn predictor_examples() {
        let base = DecompositionInputs { p0: 0.5, ja1: 1.0, ja_prime: Some(1.0), ga: 0.4, alpha: 0.0, ra: 0.0 };
        let out = predicted_gain(&base).unwrap();
        assert!((out.first_turn - 0.2).abs() < 1e-15);
        assert_eq!(out.after_turns, out.first_turn);
        let zero = predicted_gain(&DecompositionInputs { ga: 0.0, ..base }).unwrap();
        assert_eq!(zero.first_turn, 0.0);
        let with_ra = predicted_gain(&DecompositionInputs { ra: 0.5, ..base }).unwrap();
        assert!((with_ra.after_turns - 0.3).abs() < 1e-15);
        assert_eq!(
            predicted_gain(&DecompositionInputs { ja_prime: None, ..base }),
            Err(MetricsError::UndefinedJaPrime)
        );
    }
}
