use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use mentor_eval::analysis::{
    confusion_matrix, difficulty_gain_profile, kendall_tau, leave_one_student_out, spearman, turn_sweep,
    ConfusionMatrix2x2, RankList,
};
use mentor_eval::domain::{validate_question, CorrectnessGrid, McqQuestion};
use mentor_eval::forge::{build_dataset, RawQaItem};
use mentor_eval::jsonl;
use mentor_eval::metrics::{self, score_teacher, AbilityScores, ReflectionDomain};
use mentor_eval::report;
use mentor_eval::runner::{run_eval, EvalOptions};
use mentor_eval::store::{self, Roster, RunManifest, RunStore, TeacherGrid};
use mentor_eval::synthetic::{decomposition_report, SimulationConfig, SYNTHETIC_TEACHER};
use serde::Serialize;

use crate::config::CliConfig;
use crate::error::{CliError, CliResult};
use crate::{AnalyzeArgs, BuildDatasetArgs, Command, MetricsArgs, Mode, RunArgs, RunEvalArgs, SimulateArgs};

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::BuildDataset(a) => cmd_build_dataset(a),
        Command::RunEval(a) => cmd_run_eval(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::storage("StorageFailure", format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    store::write_atomic(path, bytes).map_err(CliError::from)
}

fn load_config(path: &Path) -> CliResult<CliConfig> {
    let cfg = CliConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_questions(path: Option<&Path>) -> CliResult<Vec<McqQuestion>> {
    let path = path.ok_or_else(|| CliError::config("MissingDataset", "no dataset given in the config or flags"))?;
    let questions: Vec<McqQuestion> = jsonl::read(path).map_err(CliError::input)?;
    let mut ids = HashSet::new();
    let mut problems = Vec::new();
    for q in &questions {
        if !ids.insert(q.id.as_str()) {
            problems.push(format!("{}: duplicate id", q.id));
        }
        problems.extend(validate_question(q).into_iter().map(|v| format!("{}: {v:?}", q.id)));
    }
    if questions.is_empty() {
        problems.push("dataset is empty".into());
    }
    if !problems.is_empty() {
        return Err(CliError::config("InvalidDataset", path.display()).with_details(problems));
    }
    Ok(questions)
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct DatasetSummary {
    input: usize,
    emitted: usize,
    rejected: usize,
    failed: usize,
    digest: String,
    out: PathBuf,
}

fn cmd_build_dataset(a: BuildDatasetArgs) -> CliResult<()> {
    let cfg = load_config(&a.config)?;
    let mut forge = cfg.forge.clone().ok_or_else(|| CliError::config("MissingForgeConfig", "no [forge] section"))?;
    if let Some(seed) = a.seed {
        forge.rng_seed = seed;
    }
    let items: Vec<RawQaItem> = jsonl::read(&a.input).map_err(CliError::input)?;
    if items.is_empty() {
        return Err(CliError::config("EmptyCorpus", format!("{} has no items", a.input.display())));
    }
    let gw = cfg.gateway(None)?;
    let templates = cfg.templates()?;
    let ladder = cfg.ladder();
    let workers = a.workers.unwrap_or(cfg.run.max_inflight_requests);
    let out = build_dataset(&gw, &items, &forge, ladder.as_ref(), &templates, workers);

    create_dir(&a.out)?;
    let digest = store::dataset_digest(&out.questions);
    jsonl::write(&a.out.join("questions.jsonl"), &out.questions).map_err(CliError::output)?;
    jsonl::write(&a.out.join("rejections.jsonl"), &out.rejections).map_err(CliError::output)?;
    jsonl::write(&a.out.join("failures.jsonl"), &out.failures).map_err(CliError::output)?;
    let manifest = serde_json::json!({ "digest": digest, "forge": out.manifest });
    write_file(&a.out.join("manifest.json"), &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"))?;

    let summary = DatasetSummary {
        input: items.len(),
        emitted: out.questions.len(),
        rejected: out.rejections.len(),
        failed: out.failures.len(),
        digest,
        out: a.out.clone(),
    };
    print_json(&summary);
    if summary.emitted == 0 {
        return Err(CliError::partial("NothingEmitted", "no item survived the pipeline")
            .with_details(out.failures.iter().map(|f| format!("{}: {}", f.item_id, f.error)).collect()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EvalSummary {
    run_id: String,
    dir: PathBuf,
    units: usize,
    attempted: usize,
    completed: usize,
    transcripts: usize,
    grids: usize,
}

fn cmd_run_eval(a: RunEvalArgs) -> CliResult<()> {
    let mut cfg = CliConfig::load(&a.run.config)?;
    if !a.teachers.is_empty() {
        cfg.roster.teachers = a.teachers.clone();
    }
    if !a.students.is_empty() {
        cfg.roster.students = a.students.clone();
    }
    if let Some(t) = a.turns {
        cfg.run.turns = t;
    }
    if let Some(n) = a.max_inflight {
        cfg.run.max_inflight_requests = n;
    }
    if let Some(d) = &a.run.dataset {
        cfg.dataset = Some(d.clone());
    }
    cfg.validate()?;
    if cfg.roster.teachers.is_empty() || cfg.roster.students.is_empty() {
        return Err(CliError::config("EmptyRoster", "need at least one teacher and one student"));
    }
    let questions = load_questions(cfg.dataset.as_deref())?;
    let templates = cfg.templates()?;
    let root = cfg.root(a.run.root.as_deref());
    let roster = Roster { teachers: cfg.roster.teachers.clone(), students: cfg.roster.students.clone() };

    let dir = RunStore::run_dir(&root, &a.run.run_id);
    let store = if dir.join(store::MANIFEST_FILE).exists() {
        let store = RunStore::open(&root, &a.run.run_id)?;
        if store.manifest().roster != roster {
            return Err(CliError::config("RunMismatch", "roster differs from the stored run")
                .with_hint("use a new --run-id for a different roster"));
        }
        store
    } else {
        let snapshot = serde_json::to_value(&cfg).expect("config serializes");
        let manifest = RunManifest::new(&a.run.run_id, snapshot, roster, &questions, cfg.run.turns);
        RunStore::create(&root, manifest)?
    };
    let gw = cfg.gateway(Some(store.cache_dir()))?;
    let summary = run_eval(&gw, &store, &questions, &cfg.run, &templates, &EvalOptions { max_units: a.max_units })?;
    if !summary.is_complete() {
        let details = summary.failed.iter().map(|(u, e)| format!("{u}: {e}")).collect();
        return Err(CliError::partial(
            "PartialRun",
            format!("{} of {} units still pending", summary.remaining, store.manifest().units.len()),
        )
        .with_hint(format!(
            "rerun `mentor-eval run-eval --config {} --run-id {}` to resume",
            a.run.config.display(),
            a.run.run_id
        ))
        .with_details(details));
    }
    let grids = store.finalize(false)?;
    let m = store.manifest();
    print_json(&EvalSummary {
        run_id: m.run_id.clone(),
        dir: store.dir().to_path_buf(),
        units: m.units.len(),
        attempted: summary.attempted,
        completed: summary.completed,
        transcripts: store.transcripts()?.len(),
        grids: grids.len(),
    });
    Ok(())
}

// ---------------------------------------------------------------------------

struct RunData {
    store: RunStore,
    questions: Vec<McqQuestion>,
    grids: Vec<TeacherGrid>,
}

fn open_run(a: &RunArgs, allow_partial: bool) -> CliResult<RunData> {
    let mut cfg = CliConfig::load(&a.config)?;
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(d.clone());
    }
    let root = cfg.root(a.root.as_deref());
    if !RunStore::run_dir(&root, &a.run_id).join(store::MANIFEST_FILE).exists() {
        return Err(CliError::config("UnknownRun", format!("no run {} under {}", a.run_id, root.display())));
    }
    let store = RunStore::open(&root, &a.run_id)?;
    let questions = load_questions(cfg.dataset.as_deref())?;
    store.check_dataset(&questions)?;
    let grids = store.finalize(allow_partial)?;
    Ok(RunData { store, questions, grids })
}

fn grids_of(grids: &[TeacherGrid], teacher: &str) -> Vec<CorrectnessGrid> {
    grids.iter().filter(|g| g.teacher_id == teacher).map(|g| g.grid.clone()).collect()
}

fn score_run(run: &RunData, domain: ReflectionDomain) -> CliResult<Vec<(String, AbilityScores)>> {
    let m = run.store.manifest();
    let (transcripts, direct) = run.store.ordered_outputs()?;
    let mut out = Vec::new();
    for teacher in &m.roster.teachers {
        let grids = grids_of(&run.grids, teacher);
        if grids.is_empty() {
            log::warn!("no complete student grid for {teacher}; skipped");
            continue;
        }
        let students: HashSet<&str> = grids.iter().map(|g| g.student_id.as_str()).collect();
        let mine: Vec<_> = transcripts
            .iter()
            .filter(|t| &t.teacher_id == teacher && students.contains(t.student_id.as_str()))
            .cloned()
            .collect();
        let row: Vec<bool> = direct.iter().filter(|d| &d.teacher_id == teacher).map(|d| d.is_correct).collect();
        let row = (row.len() == m.question_ids.len()).then_some(row);
        let scores = score_teacher(&run.questions, &grids, &mine, row.as_deref(), m.turns, domain)?;
        out.push((teacher.clone(), scores));
    }
    Ok(out)
}

fn cmd_metrics(a: MetricsArgs) -> CliResult<()> {
    let run = open_run(&a.run, a.allow_partial)?;
    let scores = score_run(&run, a.ra_domain.into())?;
    let reports = run.store.reports_dir();
    create_dir(&reports)?;
    let abilities: Vec<_> = scores.iter().flat_map(|(t, s)| report::ability_records(t, s)).collect();
    let turns: Vec<_> = scores.iter().flat_map(|(t, s)| report::turn_records(t, s)).collect();
    report::write_csv(&reports.join("abilities.csv"), &abilities)?;
    report::write_csv(&reports.join("turns.csv"), &turns)?;
    let by_teacher: BTreeMap<&str, &AbilityScores> = scores.iter().map(|(t, s)| (t.as_str(), s)).collect();
    let json = serde_json::to_vec_pretty(&by_teacher).expect("scores serialize");
    write_file(&reports.join("scores.json"), &json)?;
    if let Some(out) = &a.out {
        write_file(out, &json)?;
    }
    print_json(&by_teacher);
    Ok(())
}

fn cmd_report(a: MetricsArgs) -> CliResult<()> {
    let run = open_run(&a.run, a.allow_partial)?;
    let scores = score_run(&run, a.ra_domain.into())?;
    let table = report::leaderboard(&scores);
    let reports = run.store.reports_dir();
    create_dir(&reports)?;
    write_file(&reports.join("table.txt"), table.as_bytes())?;
    if let Some(out) = &a.out {
        write_file(out, table.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SimulationOutput<'a> {
    config: &'a SimulationConfig,
    ca: f64,
    per_turn_delta: Vec<f64>,
    report: mentor_eval::synthetic::DecompositionReport,
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&a.params)
        .map_err(|e| CliError::config("ParamsUnreadable", format!("{}: {e}", a.params.display())))?;
    let parsed: Result<SimulationConfig, String> = if a.params.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    let mut cfg = parsed.map_err(|e| CliError::config("InvalidParams", format!("{}: {e}", a.params.display())))?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.n_questions {
        cfg.n_questions = n;
    }
    let run = cfg.run()?;
    let report = decomposition_report(&run, &cfg.teacher)?;
    let output = SimulationOutput {
        config: &cfg,
        ca: metrics::comprehensive_ability(&run.grids, run.turns)?,
        per_turn_delta: metrics::per_turn_delta(&run.grids, run.turns)?,
        report,
    };
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let grids: Vec<TeacherGrid> = run
            .grids
            .iter()
            .map(|g| TeacherGrid { teacher_id: SYNTHETIC_TEACHER.into(), grid: g.clone() })
            .collect();
        jsonl::write(&dir.join(store::GRIDS_FILE), &grids).map_err(CliError::output)?;
        jsonl::write(&dir.join(store::TRANSCRIPTS_FILE), &run.transcripts).map_err(CliError::output)?;
        write_file(&dir.join("report.json"), &serde_json::to_vec_pretty(&output).expect("report serializes"))?;
    }
    print_json(&output);
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CorrelationRecord {
    method: &'static str,
    value: f64,
    models: usize,
}

#[derive(Serialize)]
struct ConfusionRecord {
    teacher_id: String,
    turn: usize,
    teacher_correct_student_correct: usize,
    teacher_correct_student_wrong: usize,
    teacher_wrong_student_correct: usize,
    teacher_wrong_student_wrong: usize,
}

impl ConfusionRecord {
    fn new(teacher_id: &str, m: ConfusionMatrix2x2) -> Self {
        ConfusionRecord {
            teacher_id: teacher_id.into(),
            turn: m.turn,
            teacher_correct_student_correct: m.teacher_correct_student_correct,
            teacher_correct_student_wrong: m.teacher_correct_student_wrong,
            teacher_wrong_student_correct: m.teacher_wrong_student_correct,
            teacher_wrong_student_wrong: m.teacher_wrong_student_wrong,
        }
    }
}

#[derive(Serialize)]
struct SweepRecord {
    teacher_id: String,
    turns: usize,
    ca: f64,
}

type GridsByTeacher = BTreeMap<String, Vec<CorrectnessGrid>>;

/// Teacher grids from a grids file or a stored run, with the run when there is one.
fn analysis_input(a: &AnalyzeArgs) -> CliResult<(GridsByTeacher, Option<RunData>)> {
    let (grids, run) = match (&a.grids, &a.config, &a.run_id) {
        (Some(path), _, _) => (jsonl::read::<TeacherGrid>(path).map_err(CliError::input)?, None),
        (None, Some(config), Some(run_id)) => {
            let args = RunArgs { config: config.clone(), run_id: run_id.clone(), root: a.root.clone(), dataset: a.dataset.clone() };
            let run = open_run(&args, a.allow_partial)?;
            (run.grids.clone(), Some(run))
        }
        _ => return Err(CliError::config("MissingInput", "give --grids, or --config with --run-id")),
    };
    let mut by_teacher = GridsByTeacher::new();
    for g in grids {
        by_teacher.entry(g.teacher_id).or_default().push(g.grid);
    }
    if by_teacher.is_empty() {
        return Err(CliError::config("MissingInput", "no grids to analyze"));
    }
    Ok((by_teacher, run))
}

fn turns_of(grids: &GridsByTeacher) -> usize {
    grids.values().flatten().map(|g| g.columns().saturating_sub(1)).min().unwrap_or(0)
}

fn read_ranks(path: &Path) -> CliResult<RankList> {
    RankList::from_csv(path).map_err(|e| CliError::config("InvalidRanks", e))
}

fn cmd_analyze(a: AnalyzeArgs) -> CliResult<()> {
    let external = a.external.as_deref().map(read_ranks).transpose()?;
    let (csv, run) = match a.mode {
        Mode::Correlation => {
            let external = external.ok_or_else(|| CliError::config("MissingInput", "correlation needs --external"))?;
            let (ours, run) = match &a.ours {
                Some(path) => (read_ranks(path)?, None),
                None => {
                    let (grids, run) = analysis_input(&a)?;
                    let turns = turns_of(&grids);
                    let mut ca = Vec::new();
                    for (teacher, gs) in &grids {
                        ca.push((teacher.clone(), metrics::comprehensive_ability(gs, turns)?));
                    }
                    (RankList::new(ca)?, run)
                }
            };
            let records = [
                CorrelationRecord { method: "kendall_tau", value: kendall_tau(&ours, &external)?, models: ours.len() },
                CorrelationRecord { method: "spearman", value: spearman(&ours, &external)?, models: ours.len() },
            ];
            (report::csv_string(&records), run)
        }
        Mode::Confusion => {
            let (grids, run) = analysis_input(&a)?;
            let run = run.ok_or_else(|| CliError::config("MissingInput", "confusion needs a stored run"))?;
            let (_, direct) = run.store.ordered_outputs()?;
            let turns = turns_of(&grids);
            let mut records = Vec::new();
            for (teacher, gs) in &grids {
                let row: Vec<bool> = direct.iter().filter(|d| &d.teacher_id == teacher).map(|d| d.is_correct).collect();
                let wanted: Vec<usize> = match a.turn {
                    Some(t) => vec![t],
                    None => (0..=turns).collect(),
                };
                for t in wanted {
                    records.push(ConfusionRecord::new(teacher, confusion_matrix(gs, &row, t)?));
                }
            }
            (report::csv_string(&records), Some(run))
        }
        Mode::LeaveOneOut => {
            let (grids, run) = analysis_input(&a)?;
            let rows = leave_one_student_out(&grids, turns_of(&grids), external.as_ref())?;
            (report::csv_string(&report::leave_one_out_records(&rows)), run)
        }
        Mode::TurnSweep => {
            let (grids, run) = analysis_input(&a)?;
            let turns = turns_of(&grids);
            let mut records = Vec::new();
            for (teacher, gs) in &grids {
                for (k, ca) in turn_sweep(gs, turns)?.into_iter().enumerate() {
                    records.push(SweepRecord { teacher_id: teacher.clone(), turns: k + 1, ca });
                }
            }
            (report::csv_string(&records), run)
        }
        Mode::Difficulty => {
            let (grids, run) = analysis_input(&a)?;
            let questions = match (&run, &a.dataset) {
                (Some(r), _) => r.questions.clone(),
                (None, Some(path)) => load_questions(Some(path))?,
                (None, None) => return Err(CliError::config("MissingInput", "difficulty needs --dataset")),
            };
            let turns = turns_of(&grids);
            let mut records = Vec::new();
            for (teacher, gs) in &grids {
                records.extend(report::difficulty_records(teacher, &difficulty_gain_profile(gs, &questions, turns)?));
            }
            (report::csv_string(&records), run)
        }
    };
    let target = a.out.clone().or_else(|| run.as_ref().map(|r| r.store.reports_dir().join(mode_file(a.mode))));
    if let Some(path) = target {
        if let Some(parent) = path.parent() {
            create_dir(parent)?;
        }
        write_file(&path, csv.as_bytes())?;
    }
    print!("{csv}");
    Ok(())
}

fn mode_file(mode: Mode) -> &'static str {
    match mode {
        Mode::Correlation => "correlation.csv",
        Mode::Confusion => "confusion.csv",
        Mode::LeaveOneOut => "leave_one_out.csv",
        Mode::TurnSweep => "turn_sweep.csv",
        Mode::Difficulty => "difficulty.csv",
    }
}
