//! Acceptance suite. Runs every criterion, prints one status line each and
//! exits non-zero if any criterion fails. Criterion 8 needs the public
//! MedLFQA files in `$MEDLFQA_DIR` and is skipped without them.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use medsocot_core::entailment::{EntailmentJudgment, EntailmentLabel, StatementClass};
use medsocot_core::experiment::{
    delta, AblationSpec, DatasetSpec, Providers, RunConfig, RunResult,
};
use medsocot_core::metrics::{self, fmt1, round1, ScoreCard};
use medsocot_core::parser::parse_structured_bytes;
use medsocot_core::prompt::{
    build_med_socot_plan, PromptFeatures, PromptMode, ReasoningStep, StepSet,
};
use medsocot_core::{
    factuality_score, generate_stepwise, parse_structured, quality_check, render_structured,
    rouge_l, rouge_n, run, CompletionParams, MockEntailment, MockProvider,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

enum Status {
    Pass,
    Skip(String),
}

type Outcome = Result<Status, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_tokens(rng: &mut ChaCha8Rng) -> Vec<String> {
    const VOCAB: [&str; 8] = ["the", "drug", "dose", "risk", "liver", "pain", "may", "a"];
    let len = rng.gen_range(0..40);
    (0..len)
        .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string())
        .collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let pred = random_tokens(&mut rng);
        let reference = random_tokens(&mut rng);
        for n in 1..=3 {
            let got = rouge_n(&pred, &reference, n).f1;
            let want = brute_rouge_n_f1(&pred, &reference, n);
            ensure(
                (got - want).abs() <= 1e-9,
                format!("case {case}: rouge-{n} {got} vs {want}"),
            )?;
        }
        let got = rouge_l(&pred, &reference).f1;
        let want = brute_rouge_l_f1(&pred, &reference);
        ensure(
            (got - want).abs() <= 1e-9,
            format!("case {case}: rouge-L {got} vs {want}"),
        )?;
    }
    ensure(
        started.elapsed() < Duration::from_secs(5),
        "took longer than 5 s",
    )?;
    Ok(Status::Pass)
}

fn judgment(class: StatementClass, label: EntailmentLabel) -> EntailmentJudgment {
    EntailmentJudgment {
        statement: String::new(),
        class,
        label,
        confidence: 1.0,
    }
}

fn fact_of(judgments: &[EntailmentJudgment]) -> f64 {
    let c = metrics::comprehensiveness_score(judgments).unwrap();
    let h = metrics::hallucination_score(judgments).unwrap();
    factuality_score(c, h).unwrap()
}

fn criterion_2() -> Outcome {
    ensure(factuality_score(100.0, 0.0) == Ok(100.0), "(100, 0) != 100")?;
    ensure(factuality_score(0.0, 100.0) == Ok(0.0), "(0, 100) != 0")?;
    ensure(factuality_score(50.0, 20.0) == Ok(65.0), "(50, 20) != 65")?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let labels = [
        EntailmentLabel::Entails,
        EntailmentLabel::Neutral,
        EntailmentLabel::Contradicts,
    ];
    for _ in 0..200 {
        let size = rng.gen_range(2..12);
        let mut js: Vec<EntailmentJudgment> = (0..size)
            .map(|i| {
                let class = if i == 0 || rng.gen_bool(0.5) {
                    StatementClass::MH
                } else {
                    StatementClass::NH
                };
                judgment(class, labels[rng.gen_range(0..3)])
            })
            .collect();
        let neutral: Vec<usize> = (0..size)
            .filter(|&i| js[i].label == EntailmentLabel::Neutral)
            .collect();
        if neutral.is_empty() {
            continue;
        }
        let before = fact_of(&js);
        js[neutral[rng.gen_range(0..neutral.len())]].label = EntailmentLabel::Contradicts;
        let after = fact_of(&js);
        let expected = -50.0 / size as f64;
        ensure(
            ((after - before) - expected).abs() <= 1e-9,
            format!("|S|={size}: moved {} instead of {expected}", after - before),
        )?;
    }
    Ok(Status::Pass)
}

fn card(words: f64, fact: f64) -> ScoreCard {
    ScoreCard {
        words_composition: words,
        comprehensiveness: fact,
        hallucination: 0.0,
        factuality: fact,
        rouge: Default::default(),
    }
}

fn criterion_3() -> Outcome {
    let fact = [76.9, 65.0, 75.1, 72.5, 57.3];
    let words = [7.8, 7.1, 13.2, 10.5, 12.2];
    let cards: Vec<(String, ScoreCard)> = (0..5)
        .map(|i| (format!("ds{i}"), card(words[i], fact[i])))
        .collect();
    let agg = metrics::aggregate(&cards).map_err(|e| e.to_string())?;
    ensure(
        fmt1(agg.overall.factuality) == "69.4",
        format!("factuality {}", agg.overall.factuality),
    )?;
    ensure(
        fmt1(agg.overall.words_composition) == "10.2",
        format!("words {}", agg.overall.words_composition),
    )?;
    ensure(round1(agg.overall.factuality) == 69.4, "round1 factuality")?;
    Ok(Status::Pass)
}

fn criterion_4() -> Outcome {
    for (baseline, variant, percent_only, want) in [
        (71.6, 66.5, false, "↓ 5.1 (7.1%)"),
        (71.6, 55.0, false, "↓ 16.6 (23.2%)"),
        (69.4, 65.2, true, "↓ 6.0%"),
    ] {
        let got = delta(baseline, variant).display(percent_only);
        ensure(got == want, format!("({baseline}, {variant}) gave `{got}`"))?;
    }
    Ok(Status::Pass)
}

fn five_pair_config(dir: &Path, out: &str, mode: PromptMode) -> RunConfig {
    let (d1, d2) = write_five_pairs(dir);
    RunConfig {
        mode,
        datasets: vec![
            DatasetSpec {
                name: "D1".into(),
                path: d1,
            },
            DatasetSpec {
                name: "D2".into(),
                path: d2,
            },
        ],
        output_dir: dir.join(out),
        ..RunConfig::default()
    }
}

fn direct_mock() -> MockProvider {
    five_pairs()
        .into_iter()
        .fold(MockProvider::new("mock-7b"), |m, f| {
            m.with_rule(f.pair.question.clone(), direct_response(f.model_answer))
        })
}

fn stepwise_mock() -> MockProvider {
    five_pairs()
        .into_iter()
        .fold(MockProvider::new("mock-7b"), |m, f| {
            m.with_rule_all(
                &["## Summary Instructions:", &f.pair.question],
                f.model_answer,
            )
        })
        .with_rule(
            "## Step Instructions:",
            "Notes for this step of the reasoning chain.",
        )
}

fn files_of(result: &RunResult) -> Vec<PathBuf> {
    let mut files = result.trace_files.clone();
    files.push(result.output_dir.join("report.md"));
    files
}

fn criterion_5() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let expected = five_pairs();
    let d1 = expected[..3].iter().map(|f| f.factuality).sum::<f64>() / 3.0;
    let d2 = expected[3..].iter().map(|f| f.factuality).sum::<f64>() / 2.0;
    for (mode, mock) in [
        (PromptMode::Direct, direct_mock as fn() -> MockProvider),
        (PromptMode::Stepwise, stepwise_mock),
    ] {
        let mut runs = Vec::new();
        for out in ["first", "second"] {
            let config = five_pair_config(dir.path(), &format!("{mode:?}-{out}"), mode);
            let providers = Providers::new(Arc::new(mock()), Arc::new(MockEntailment));
            runs.push(run(&config, &providers).map_err(|e| format!("{mode:?}: {e}"))?);
        }
        let (a, b) = (&runs[0], &runs[1]);
        for (fa, fb) in files_of(a).iter().zip(files_of(b)) {
            let ba = std::fs::read(fa).map_err(|e| e.to_string())?;
            let bb = std::fs::read(&fb).map_err(|e| e.to_string())?;
            ensure(
                ba == bb,
                format!("{mode:?}: {} differs between runs", fa.display()),
            )?;
        }
        let got = [
            a.datasets[0].card.factuality,
            a.datasets[1].card.factuality,
            a.overall.factuality,
        ];
        let want = [d1, d2, (d1 + d2) / 2.0];
        for (g, w) in got.iter().zip(want) {
            ensure(
                (g - w).abs() <= 1e-9,
                format!("{mode:?}: factuality {g} vs hand trace {w}"),
            )?;
        }
        ensure(
            a.datasets.iter().all(|d| d.failed == 0),
            format!("{mode:?}: failed pairs"),
        )?;
    }
    ensure(
        started.elapsed() < Duration::from_secs(10),
        "took longer than 10 s",
    )?;
    Ok(Status::Pass)
}

fn criterion_6() -> Outcome {
    let pair = &five_pairs()[0].pair;
    let params = CompletionParams::default();
    let features = PromptFeatures::default();
    let mock = stepwise_mock();
    let plan = build_med_socot_plan(&StepSet::full(), &features, PromptMode::Stepwise)
        .map_err(|e| e.to_string())?;
    let outcome = generate_stepwise(pair, &plan, &mock, &params).map_err(|e| e.to_string())?;
    ensure(
        mock.call_count() == 8,
        format!("full plan made {} calls", mock.call_count()),
    )?;
    ensure(outcome.provider_calls == 8, "outcome call count")?;
    for k in 1..=7u8 {
        let (steps, features) = AblationSpec::RemoveStep(k)
            .apply(&StepSet::full(), &features)
            .map_err(|e| e.to_string())?;
        let plan = build_med_socot_plan(&steps, &features, PromptMode::Stepwise)
            .map_err(|e| e.to_string())?;
        mock.reset_calls();
        generate_stepwise(pair, &plan, &mock, &params).map_err(|e| e.to_string())?;
        ensure(
            mock.call_count() == 7,
            format!("w/o step {k} made {} calls", mock.call_count()),
        )?;
    }
    // the whole run path goes through the same accounting
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = five_pair_config(dir.path(), "runs", PromptMode::Stepwise);
    let mock = Arc::new(stepwise_mock());
    let providers = Providers::new(mock.clone(), Arc::new(MockEntailment));
    let result = run(&config, &providers).map_err(|e| e.to_string())?;
    ensure(
        mock.call_count() == 40 && result.provider_calls == 40,
        format!("run made {} calls", mock.call_count()),
    )?;
    Ok(Status::Pass)
}

fn same_parse(text: &str) -> Result<(), String> {
    let set = StepSet::full();
    let first = parse_structured(text, &set, false);
    let again = parse_structured(&render_structured(&first), &set, false);
    ensure(
        first.sections == again.sections,
        "sections changed after render",
    )?;
    ensure(
        first.long_form_answer == again.long_form_answer,
        "answer changed after render",
    )
}

fn criterion_7() -> Outcome {
    let raw =
        std::fs::read_to_string(fixture_path("structured_trace.txt")).map_err(|e| e.to_string())?;
    let parsed = parse_structured(&raw, &StepSet::full(), false);
    for step in [
        ReasoningStep::UnderstandQuestion,
        ReasoningStep::RecallKnowledge,
        ReasoningStep::AnalyzeInformation,
    ] {
        ensure(
            parsed.section(step).is_some_and(|s| !s.is_empty()),
            format!("missing {step:?}"),
        )?;
    }
    ensure(
        parsed
            .section(ReasoningStep::RecallKnowledge)
            .unwrap()
            .starts_with("Hydroxyzine is"),
        "wrong section text",
    )?;
    ensure(
        parsed.long_form_answer.starts_with("Zyrtec is one of"),
        "answer section not found",
    )?;

    let bytes = raw.as_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let mut m = bytes.to_vec();
        for _ in 0..rng.gen_range(1..8) {
            let at = rng.gen_range(0..m.len().max(1));
            match rng.gen_range(0..3) {
                0 if !m.is_empty() => m[at] = rng.gen(),
                1 => m.insert(at.min(m.len()), rng.gen()),
                _ if !m.is_empty() => {
                    m.remove(at);
                }
                _ => {}
            }
        }
        let parsed = panic::catch_unwind(|| parse_structured_bytes(&m, &StepSet::full(), true));
        ensure(parsed.is_ok(), format!("mutation {i} panicked"))?;
    }

    same_parse(&raw)?;
    same_parse(&direct_response("An answer."))?;
    let one_shot = include_str!("../templates/v1/one_shot.txt");
    same_parse(one_shot)?;
    Ok(Status::Pass)
}

fn criterion_8() -> Outcome {
    let Some(dir) = std::env::var_os("MEDLFQA_DIR").map(PathBuf::from) else {
        return Ok(Status::Skip("MEDLFQA_DIR not set".into()));
    };
    let expected = [
        ("live_qa.jsonl", "LiveQA", 100),
        ("medication_qa.jsonl", "MedicationQA", 666),
        ("healthsearch_qa.jsonl", "HealthSearchQA", 3077),
        ("kqa_golden.jsonl", "K-QA Golden", 201),
        ("kqa_silver_wogold.jsonl", "K-QA Silver", 904),
    ];
    if expected.iter().any(|(file, _, _)| !dir.join(file).exists()) {
        return Ok(Status::Skip(format!(
            "MedLFQA files not found in {}",
            dir.display()
        )));
    }
    for (file, name, count) in expected {
        let pairs =
            medsocot_core::load_dataset(&dir.join(file), name).map_err(|e| e.to_string())?;
        let stats = medsocot_core::compute_stats(&pairs).map_err(|e| e.to_string())?;
        ensure(
            stats.qa_pair_count == count,
            format!("{name}: {} pairs, expected {count}", stats.qa_pair_count),
        )?;
    }
    Ok(Status::Pass)
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let words = [
        "Dose",
        "risk",
        "liver.",
        "may",
        "rise!",
        "pain",
        "the",
        "\n",
        "drug?",
        "### END",
        "Question:",
    ];
    for case in 0..300 {
        let len = rng.gen_range(0..700);
        let text: Vec<&str> = (0..len)
            .map(|_| words[rng.gen_range(0..words.len())])
            .collect();
        let text = text.join(" ");
        let (once, _) = quality_check(&text, 200, "Is the drug safe?");
        ensure(
            medsocot_core::count_words(&once) <= 200,
            format!("case {case}: over 200 words"),
        )?;
        let (twice, _) = quality_check(&once, 200, "Is the drug safe?");
        ensure(once == twice, format!("case {case}: not idempotent"))?;
    }
    // long step outputs from a provider are cut before they are reused
    let long = "The liver clears the drug slowly. ".repeat(120);
    let mock = MockProvider::new("mock-7b")
        .with_rule("## Summary Instructions:", "Short answer.")
        .with_rule("## Step Instructions:", long);
    let plan = build_med_socot_plan(
        &StepSet::full(),
        &PromptFeatures::default(),
        PromptMode::Stepwise,
    )
    .map_err(|e| e.to_string())?;
    let outcome = generate_stepwise(
        &five_pairs()[0].pair,
        &plan,
        &mock,
        &CompletionParams::default(),
    )
    .map_err(|e| e.to_string())?;
    for step in &outcome.steps {
        ensure(
            medsocot_core::count_words(&step.cleaned_text) <= 200,
            format!("{:?} over 200 words", step.step),
        )?;
    }
    Ok(Status::Pass)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("metric oracle equivalence", criterion_1),
        ("factuality arithmetic", criterion_2),
        ("aggregation row arithmetic", criterion_3),
        ("ablation delta arithmetic", criterion_4),
        ("deterministic end-to-end run", criterion_5),
        ("stepwise call accounting", criterion_6),
        ("parser robustness", criterion_7),
        ("dataset statistics", criterion_8),
        ("quality-check contracts", criterion_9),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(Status::Pass) => println!("criterion {}: PASS  {name}", i + 1),
            Ok(Status::Skip(why)) => println!("criterion {}: SKIP  {name} ({why})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
