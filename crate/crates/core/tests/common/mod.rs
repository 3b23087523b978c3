//! Scripted fixtures shared by the integration tests.
//!
//! Fixture model behaviour is written as small policies over prompt text.
//! Running the real pipeline against the policies through a
//! `RecordingBackend` yields digest-keyed scripts; those are committed under
//! `tests/fixtures/` and replayed by the tests. Set `REGENERATE_FIXTURES=1`
//! to rewrite them after a prompt change.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mentor_eval::dialogue::{PromptTemplateSet, ANSWER_BLOCK};
use mentor_eval::domain::{
    Category, CorrectnessGrid, DialogueTranscript, McqQuestion, RunConfig, StudentAnswer, TeacherMove, Verdict,
    OPTION_LABELS,
};
use mentor_eval::forge::{ForgeConfig, GraderLadder, RawQaItem};
use mentor_eval::gateway::{
    ChatBackend, ChatMessage, DecodingParams, FnBackend, Gateway, GatewayConfig, RecordingBackend, ScriptEntry,
    ScriptedBackend,
};
use mentor_eval::jsonl;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn regenerate() -> bool {
    std::env::var("REGENERATE_FIXTURES").is_ok_and(|v| v == "1")
}

fn user_text(msgs: &[ChatMessage]) -> &str {
    &msgs.last().expect("at least one message").content
}

pub fn gateway_with(backends: Vec<(&str, Arc<dyn ChatBackend>)>) -> Gateway {
    let mut gw = Gateway::new(GatewayConfig::default()).unwrap();
    for (id, b) in backends {
        gw.register_backend(id, b);
    }
    gw
}

pub fn scripted(path: &Path) -> Arc<dyn ChatBackend> {
    Arc::new(ScriptedBackend::load(path).unwrap())
}

/// Writes `entries` to `path` when regenerating, otherwise asserts the
/// committed file matches.
pub fn check_or_write(path: &Path, content: &str) {
    if regenerate() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, content).unwrap();
        return;
    }
    let committed = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}; run with REGENERATE_FIXTURES=1", path.display()));
    assert!(committed == content, "{} is stale; run with REGENERATE_FIXTURES=1", path.display());
}

pub fn script_text(entries: &[ScriptEntry]) -> String {
    jsonl::to_string(entries)
}

// ---------------------------------------------------------------------------
// Evaluation fixture: 1 teacher, 2 students, 4 questions, 3 turns.

pub mod e2e {
    use super::*;

    pub const TEACHER: &str = "teacher";
    pub const STUDENTS: [&str; 2] = ["student-1", "student-2"];
    pub const TURNS: usize = 3;

    pub fn dir() -> PathBuf {
        fixtures_dir().join("e2e")
    }

    pub fn questions() -> Vec<McqQuestion> {
        let q = |id: &str, stem: &str, options: [&str; 4], gold: usize, category| McqQuestion {
            id: id.into(),
            stem: stem.into(),
            options: options.iter().map(|s| s.to_string()).collect(),
            gold_index: gold,
            category,
            source_dataset: "fixture".into(),
            difficulty: None,
        };
        vec![
            q(
                "q0",
                "Which planet in our solar system is best known for its bright ring system?",
                ["Saturn", "Mercury", "Venus", "Mars"],
                0,
                Category::Knowledge,
            ),
            q("q1", "Which element has the chemical symbol Fe?", ["Copper", "Iron", "Zinc", "Nickel"], 1, Category::Knowledge),
            q(
                "q2",
                "A train travels 120 km in 1.5 hours. What is its average speed?",
                ["60 km/h", "72 km/h", "80 km/h", "90 km/h"],
                2,
                Category::Reasoning,
            ),
            q(
                "q3",
                "What is the next number in the sequence 2, 6, 12, 20, 30?",
                ["40", "36", "44", "42"],
                3,
                Category::Reasoning,
            ),
        ]
    }

    const C: bool = true;
    const W: bool = false;

    /// Student correctness at turns 0..=3, indexed `[student][question]`.
    pub const PLANS: [[[bool; 4]; 4]; 2] = [
        [[C, C, C, C], [W, C, C, C], [C, W, C, C], [W, W, W, C]],
        [[W, W, C, C], [C, C, C, W], [W, C, C, C], [W, W, W, W]],
    ];

    /// Whether the teacher answers each question correctly when asked directly.
    pub const TEACHER_DIRECT: [bool; 4] = [C, C, C, W];

    const HINTS: [&str; 4] = [
        "Think about which planet is famous for what surrounds it.",
        "The symbol comes from the Latin name of the metal.",
        "Divide the distance by the time taken.",
        "Look at how much the gap between neighbouring terms grows.",
    ];

    fn question_index(text: &str) -> usize {
        questions().iter().position(|q| text.contains(&q.stem)).expect("prompt names a fixture question")
    }

    fn letter(q: usize, correct: bool) -> char {
        let gold = questions()[q].gold_index;
        OPTION_LABELS[if correct { gold } else { (gold + 1) % 4 }]
    }

    fn student_reply(student: usize, q: usize, correct: bool) -> String {
        let l = letter(q, correct);
        match student {
            0 => format!("Answer: {l}"),
            _ => {
                let idx = OPTION_LABELS.iter().position(|&c| c == l).unwrap();
                format!("My choice is {l} ({})", questions()[q].options[idx])
            }
        }
    }

    pub fn student_policy(student: usize) -> impl Fn(&[ChatMessage], &DecodingParams) -> String + Send + Sync {
        move |msgs, _| {
            let text = user_text(msgs);
            let q = question_index(text);
            let turn = match text.find("Hint ") {
                None => 0,
                Some(i) => text[i + 5..i + 6].parse::<usize>().expect("hint carries its turn"),
            };
            student_reply(student, q, PLANS[student][q][turn])
        }
    }

    /// Turn-1 verdicts that deviate from the truth, plus one deliberately
    /// unparseable reply and one late misjudgment that costs a right answer.
    fn verdict(student: usize, q: usize, turn: usize) -> Option<bool> {
        let truth = PLANS[student][q][turn - 1];
        match (student, q, turn) {
            (0, 2, 1) => Some(false),
            (0, 3, 1) => None,
            (1, 3, 1) => Some(true),
            (1, 1, 3) => Some(false),
            _ => Some(truth),
        }
    }

    pub fn teacher_policy() -> impl Fn(&[ChatMessage], &DecodingParams) -> String + Send + Sync {
        |msgs, _| {
            let text = user_text(msgs);
            let q = question_index(text);
            if text.contains("Options:") {
                return format!("The answer is {}.", letter(q, TEACHER_DIRECT[q]));
            }
            let turn = text.matches(ANSWER_BLOCK).count();
            let first = &text[text.find(ANSWER_BLOCK).unwrap()..];
            let student = if first.contains("My choice") { 1 } else { 0 };
            let hint = format!("Hint {turn}: {}", HINTS[q]);
            match verdict(student, q, turn) {
                Some(true) => format!("JUDGMENT: correct\nGUIDANCE: {hint}"),
                Some(false) => format!("JUDGMENT: incorrect\nGUIDANCE: {hint}"),
                None => hint,
            }
        }
    }

    pub fn run_config() -> RunConfig {
        RunConfig { turns: TURNS, max_inflight_requests: 4, ..RunConfig::default() }
    }

    pub fn policy_backends() -> Vec<(&'static str, Arc<RecordingBackend>)> {
        let rec = |b: Arc<dyn ChatBackend>| Arc::new(RecordingBackend::new(b));
        vec![
            (TEACHER, rec(Arc::new(FnBackend(teacher_policy())))),
            (STUDENTS[0], rec(Arc::new(FnBackend(student_policy(0))))),
            (STUDENTS[1], rec(Arc::new(FnBackend(student_policy(1))))),
        ]
    }

    pub fn script_path(model: &str) -> PathBuf {
        dir().join(format!("{model}.script.jsonl"))
    }

    pub fn scripted_gateway() -> Gateway {
        gateway_with(
            [TEACHER, STUDENTS[0], STUDENTS[1]]
                .into_iter()
                .map(|m| (m, scripted(&script_path(m))))
                .collect(),
        )
    }

    pub fn templates() -> PromptTemplateSet {
        PromptTemplateSet::default()
    }
}

// ---------------------------------------------------------------------------
// Forge fixture: 5 raw items, 1 rejected by the reviewer, 4-grader ladder.

pub mod forge {
    use super::*;

    pub const WEAK: [&str; 2] = ["weak-1", "weak-2"];
    pub const REWRITER: &str = "rewriter";
    pub const REVIEWER: &str = "reviewer";
    pub const GRADERS: [&str; 4] = ["grader-1", "grader-2", "grader-3", "grader-4"];
    pub const SEED: u64 = 2024;

    pub fn dir() -> PathBuf {
        fixtures_dir().join("forge")
    }

    pub fn corpus() -> Vec<RawQaItem> {
        let item = |id: &str, question: &str, gold: &str, dataset: &str, category| RawQaItem {
            id: id.into(),
            question: question.into(),
            gold_answer: gold.into(),
            source_dataset: dataset.into(),
            category,
        };
        vec![
            item(
                "f1",
                "what is the boiling point of water at sea level in degrees celsius",
                "100",
                "sci-qa",
                Category::Knowledge,
            ),
            item("f2", "what is 15% of 200", "30", "math-qa", Category::Reasoning),
            item("f3", "who wrote the novel Nineteen Eighty-Four", "George Orwell", "lit-qa", Category::Knowledge),
            item("f4", "what is the capital city of Australia", "Canberra", "geo-qa", Category::Knowledge),
            item(
                "f5",
                "which is heavier, a kilogram of feathers or a kilogram of iron",
                "Neither, they weigh the same",
                "trick-qa",
                Category::Reasoning,
            ),
        ]
    }

    /// Weak-model samples per item, consumed in attempt order.
    pub fn samples(id: &str) -> &'static [&'static str] {
        match id {
            "f1" => &["100", "90", "100.0", "212", "90", "80", "95"],
            "f2" => &["30", "25", "35", "40"],
            "f3" => &["Aldous Huxley", "george orwell", "Ray Bradbury", "H. G. Wells"],
            "f4" => &["Sydney", "Melbourne", "canberra", "Perth"],
            "f5" => &["The iron", "Iron", "The feathers"],
            _ => unreachable!(),
        }
    }

    /// Hand-derived distractors: the first three distinct wrong samples.
    pub fn expected_distractors(id: &str) -> [&'static str; 3] {
        match id {
            "f1" => ["90", "212", "80"],
            "f2" => ["25", "35", "40"],
            "f3" => ["Aldous Huxley", "Ray Bradbury", "H. G. Wells"],
            "f4" => ["Sydney", "Melbourne", "Perth"],
            "f5" => ["The iron", "Iron", "The feathers"],
            _ => unreachable!(),
        }
    }

    /// Index of the first correct grader (0-based), `None` if all are wrong.
    pub fn first_correct_grader(id: &str) -> Option<usize> {
        match id {
            "f1" => Some(0),
            "f2" => Some(1),
            "f3" => None,
            "f4" => Some(2),
            _ => unreachable!(),
        }
    }

    /// Hand-derived levels on the 4-grader ladder.
    pub const EXPECTED_LEVELS: [(&str, u8); 4] = [("f1", 1), ("f2", 2), ("f3", 5), ("f4", 3)];

    fn item_of(text: &str) -> RawQaItem {
        corpus()
            .into_iter()
            .find(|i| text.to_lowercase().contains(&i.question.to_lowercase()))
            .expect("prompt names a corpus item")
    }

    fn capitalized(q: &str) -> String {
        let mut c = q.chars();
        let first = c.next().unwrap().to_uppercase().collect::<String>();
        format!("{first}{}?", c.as_str())
    }

    pub fn weak_policy() -> impl Fn(&[ChatMessage], &DecodingParams) -> String + Send + Sync {
        |msgs, params| {
            let item = item_of(user_text(msgs));
            let k = params.seed.expect("sampled calls carry a seed") as usize;
            samples(&item.id)[k].to_string()
        }
    }

    pub fn rewriter_policy() -> impl Fn(&[ChatMessage], &DecodingParams) -> String + Send + Sync {
        |msgs, _| {
            let text = user_text(msgs);
            let item = item_of(text);
            let wrong: Vec<&str> = text
                .split("Wrong answers:\n")
                .nth(1)
                .unwrap()
                .lines()
                .filter_map(|l| l.strip_prefix("- "))
                .collect();
            let mut out = format!("QUESTION: {}\nANSWER: {}\n", capitalized(&item.question), item.gold_answer);
            for w in wrong {
                out.push_str(&format!("DISTRACTOR: {w}\n"));
            }
            out
        }
    }

    pub fn reviewer_policy() -> impl Fn(&[ChatMessage], &DecodingParams) -> String + Send + Sync {
        |msgs, _| {
            if user_text(msgs).contains("feathers") {
                "VERDICT: reject\nREASON: two options describe the same answer".into()
            } else {
                "VERDICT: accept\nREASON: clear and unambiguous".into()
            }
        }
    }

    pub fn grader_policy(rank: usize) -> impl Fn(&[ChatMessage], &DecodingParams) -> String + Send + Sync {
        move |msgs, _| {
            let text = user_text(msgs);
            let item = item_of(text);
            let gold_line = text
                .lines()
                .find(|l| l.len() > 3 && l[3..] == item.gold_answer)
                .expect("gold among options");
            let gold = OPTION_LABELS.iter().position(|&c| gold_line.starts_with(c)).unwrap();
            let correct = first_correct_grader(&item.id).is_some_and(|g| rank >= g);
            let pick = if correct { gold } else { (gold + 1) % 4 };
            format!("Answer: {}", OPTION_LABELS[pick])
        }
    }

    pub fn config() -> ForgeConfig {
        ForgeConfig {
            rng_seed: SEED,
            max_attempts: 8,
            ..ForgeConfig::new(WEAK.iter().map(|s| s.to_string()).collect(), REWRITER, REVIEWER)
        }
    }

    pub fn ladder() -> GraderLadder {
        GraderLadder { graders: GRADERS.iter().map(|s| s.to_string()).collect() }
    }

    pub fn all_models() -> Vec<&'static str> {
        let mut v = vec![WEAK[0], WEAK[1], REWRITER, REVIEWER];
        v.extend(GRADERS);
        v
    }

    pub fn policy_backends() -> Vec<(&'static str, Arc<RecordingBackend>)> {
        let rec = |b: Arc<dyn ChatBackend>| Arc::new(RecordingBackend::new(b));
        let mut v: Vec<(&'static str, Arc<RecordingBackend>)> = vec![
            (WEAK[0], rec(Arc::new(FnBackend(weak_policy())))),
            (WEAK[1], rec(Arc::new(FnBackend(weak_policy())))),
            (REWRITER, rec(Arc::new(FnBackend(rewriter_policy())))),
            (REVIEWER, rec(Arc::new(FnBackend(reviewer_policy())))),
        ];
        for (rank, g) in GRADERS.iter().enumerate() {
            v.push((*g, rec(Arc::new(FnBackend(grader_policy(rank))))));
        }
        v
    }

    pub fn script_path(model: &str) -> PathBuf {
        dir().join(format!("{model}.script.jsonl"))
    }

    pub fn scripted_gateway() -> Gateway {
        gateway_with(all_models().into_iter().map(|m| (m, scripted(&script_path(m)))).collect())
    }
}

/// Counts per key, for frequency checks.
pub fn tally<K: Ord, I: IntoIterator<Item = K>>(items: I) -> BTreeMap<K, usize> {
    let mut out = BTreeMap::new();
    for k in items {
        *out.entry(k).or_default() += 1;
    }
    out
}

pub mod run {
    use super::*;
    use mentor_eval::runner::{run_eval, EvalOptions, RunSummary};
    use mentor_eval::store::{Roster, RunManifest, RunStore};

    pub fn manifest(run_id: &str, questions: &[McqQuestion], turns: usize) -> RunManifest {
        let roster = Roster {
            teachers: vec![e2e::TEACHER.into()],
            students: e2e::STUDENTS.iter().map(|s| s.to_string()).collect(),
        };
        RunManifest::new(run_id, serde_json::json!({ "turns": turns }), roster, questions, turns)
    }

    /// Creates the fixture run under `root` and executes up to `max_units` units.
    pub fn start(gw: &Gateway, root: &Path, max_units: Option<usize>) -> (RunStore, RunSummary) {
        let questions = e2e::questions();
        let store = RunStore::create(root, manifest("fixture", &questions, e2e::TURNS)).unwrap();
        let summary = run_eval(gw, &store, &questions, &e2e::run_config(), &e2e::templates(), &EvalOptions { max_units })
            .unwrap();
        (store, summary)
    }

    pub fn resume(gw: &Gateway, root: &Path) -> (RunStore, RunSummary) {
        let store = RunStore::open(root, "fixture").unwrap();
        let summary = run_eval(
            gw,
            &store,
            &e2e::questions(),
            &e2e::run_config(),
            &e2e::templates(),
            &EvalOptions::default(),
        )
        .unwrap();
        (store, summary)
    }

    /// The canonical output files of a finalized run, by name.
    pub fn outputs(store: &RunStore) -> BTreeMap<&'static str, Vec<u8>> {
        store.finalize(false).unwrap();
        [
            mentor_eval::store::TRANSCRIPTS_FILE,
            mentor_eval::store::DIRECT_FILE,
            mentor_eval::store::GRIDS_FILE,
        ]
        .into_iter()
        .map(|f| (f, std::fs::read(store.dir().join(f)).unwrap()))
        .collect()
    }
}

/// Independent brute-force metric definitions, written from the formulas
/// by direct summation over plain nested vectors.
pub mod oracle {
    /// `cells[student][question][turn]`.
    pub type Cells = Vec<Vec<Vec<bool>>>;

    fn ind(b: bool) -> f64 {
        if b {
            1.0
        } else {
            0.0
        }
    }

    pub fn aa(row: &[bool]) -> f64 {
        row.iter().map(|&b| ind(b)).sum::<f64>() / row.len() as f64
    }

    pub fn p(student: &[Vec<bool>], t: usize) -> f64 {
        student.iter().map(|q| ind(q[t])).sum::<f64>() / student.len() as f64
    }

    pub fn delta_p(student: &[Vec<bool>], t: usize) -> f64 {
        let mut s = 0.0;
        for q in student {
            s += ind(q[t]) - ind(q[t - 1]);
        }
        s / student.len() as f64
    }

    pub fn mean_delta_p(cells: &Cells, t: usize) -> f64 {
        cells.iter().map(|s| delta_p(s, t)).sum::<f64>() / cells.len() as f64
    }

    pub fn ca(cells: &Cells, turns: usize) -> f64 {
        let mut total = 0.0;
        for s in cells {
            let mut gain = 0.0;
            for t in 1..=turns {
                gain += delta_p(s, t);
            }
            total += gain;
        }
        total / cells.len() as f64
    }

    /// `verdicts[student][question]`: `Some(true)` judged correct,
    /// `Some(false)` judged incorrect, `None` unparseable.
    pub fn ja(cells: &Cells, verdicts: &[Vec<Option<bool>>]) -> f64 {
        let mut total = 0.0;
        for (s, vs) in cells.iter().zip(verdicts) {
            let mut hits = 0.0;
            for (q, v) in s.iter().zip(vs) {
                if *v == Some(q[0]) {
                    hits += 1.0;
                }
            }
            total += hits / s.len() as f64;
        }
        total / cells.len() as f64
    }

    pub fn ga(cells: &Cells) -> f64 {
        let mut total = 0.0;
        for s in cells {
            let denom = s.iter().filter(|q| !q[0]).count();
            let num = s.iter().filter(|q| !q[0] && q[1]).count();
            if denom > 0 {
                total += num as f64 / denom as f64;
            }
        }
        total / cells.len() as f64
    }

    /// `None` when no question is correct at `t - 1`.
    pub fn ra_t(student: &[Vec<bool>], t: usize) -> Option<f64> {
        let mut up = 0i32;
        let mut down = 0i32;
        let mut base = 0i32;
        for q in student {
            if q[t - 1] {
                base += 1;
            }
            if !q[t - 1] && q[t] {
                up += 1;
            }
            if q[t - 1] && !q[t] {
                down += 1;
            }
        }
        (base > 0).then(|| f64::from(up - down) / f64::from(base))
    }

    pub fn ra(cells: &Cells, turns: usize) -> Option<f64> {
        let mut total = 0.0;
        for s in cells {
            let mut prod = 1.0;
            for t in 2..=turns {
                prod *= 1.0 + ra_t(s, t)?;
            }
            total += prod - 1.0;
        }
        Some(total / cells.len() as f64)
    }
}

/// Builds metric inputs from plain nested vectors.
pub mod cases {
    use super::*;
    use rand::Rng;

    #[derive(Debug, Clone)]
    pub struct Case {
        pub cells: oracle::Cells,
        pub verdicts: Vec<Vec<Option<bool>>>,
        pub teacher: Vec<bool>,
        pub turns: usize,
    }

    /// Up to 3 students, 8 questions and 4 turns.
    pub fn random(rng: &mut impl Rng) -> Case {
        let (s, n, t) = (rng.gen_range(1..=3), rng.gen_range(1..=8), rng.gen_range(1..=4));
        let cells = (0..s).map(|_| (0..n).map(|_| (0..=t).map(|_| rng.gen()).collect()).collect()).collect();
        let verdicts = (0..s)
            .map(|_| (0..n).map(|_| [Some(true), Some(false), None][rng.gen_range(0..3)]).collect())
            .collect();
        let teacher = (0..n).map(|_| rng.gen()).collect();
        Case { cells, verdicts, teacher, turns: t }
    }

    pub fn grids(c: &Case) -> Vec<CorrectnessGrid> {
        c.cells.iter().enumerate().map(|(k, s)| CorrectnessGrid::from_cells(format!("s{k}"), s.clone())).collect()
    }

    pub fn transcripts(c: &Case) -> Vec<DialogueTranscript> {
        let mut out = Vec::new();
        for (k, (s, vs)) in c.cells.iter().zip(&c.verdicts).enumerate() {
            for (i, (row, v)) in s.iter().zip(vs).enumerate() {
                let answers = row
                    .iter()
                    .enumerate()
                    .map(|(t, &ok)| StudentAnswer { turn: t, raw_text: String::new(), parsed_index: None, is_correct: ok })
                    .collect();
                let verdict = match v {
                    Some(true) => Verdict::JudgedCorrect,
                    Some(false) => Verdict::JudgedIncorrect,
                    None => Verdict::Unparseable,
                };
                let moves = (1..=c.turns)
                    .map(|t| TeacherMove { turn: t, verdict, guidance: String::new(), raw_text: String::new() })
                    .collect();
                out.push(DialogueTranscript {
                    teacher_id: "t".into(),
                    student_id: format!("s{k}"),
                    question_id: format!("q{i}"),
                    answers,
                    moves,
                });
            }
        }
        out
    }
}

/// Definitional rank correlations over permutations of `0..n`.
pub mod correlation {
    /// Every permutation of `0..n`, in lexicographic order.
    pub fn permutations(n: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut p: Vec<usize> = (0..n).collect();
        loop {
            out.push(p.clone());
            let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else { return out };
            let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).unwrap();
            p.swap(i - 1, j);
            p[i..].reverse();
        }
    }

    /// Kendall's tau of the identity ranking against `perm`, as
    /// `1 - 4·inversions / (n(n-1))`, by counting inversions.
    pub fn kendall(perm: &[usize]) -> f64 {
        let n = perm.len();
        let mut inversions = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                if perm[i] > perm[j] {
                    inversions += 1;
                }
            }
        }
        let pairs = (n * (n - 1) / 2) as i64;
        (pairs - 2 * inversions) as f64 / pairs as f64
    }

    /// Pearson correlation of the ranks, from integer sums.
    pub fn spearman(perm: &[usize]) -> f64 {
        let n = perm.len() as i64;
        let x: Vec<i64> = (1..=n).collect();
        let y: Vec<i64> = perm.iter().map(|&r| r as i64 + 1).collect();
        let sx: i64 = x.iter().sum();
        let sy: i64 = y.iter().sum();
        let sxy: i64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: i64 = x.iter().map(|a| a * a).sum();
        let syy: i64 = y.iter().map(|a| a * a).sum();
        let cov = n * sxy - sx * sy;
        // x and y are both permutations of 1..=n, so the variances are equal
        assert_eq!(n * sxx - sx * sx, n * syy - sy * sy);
        cov as f64 / (n * sxx - sx * sx) as f64
    }
}
