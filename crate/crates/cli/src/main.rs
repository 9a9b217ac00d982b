use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use medsocot_core::dataset::{self, display_name, stats_table_csv, stats_table_text};
use medsocot_core::entailment::NliConfig;
use medsocot_core::experiment::{
    self, datasets_csv, generate_dataset, load_pairs, render_report, score_outcomes, summarize,
    write_jsonl, DatasetSpec, LlmSettings, NliSettings, SampleSpec,
};
use medsocot_core::generation::{read_trace, write_trace};
use medsocot_core::parser::parse_structured;
use medsocot_core::{
    ablation_suite, AblationSpec, AblationSuite, Method, PromptMode, ProviderConfig, Providers,
    ReasoningStep, ReportFormat, RunConfig, StepSet,
};

#[derive(Parser)]
#[command(
    name = "medsocot",
    version,
    about = "Structured chain-of-thought generation and factuality scoring for medical QA"
)]
struct Cli {
    /// Log filter, e.g. `info` or `medsocot_core=debug`.
    #[arg(long, global = true, default_value = "warn", env = "MEDSOCOT_LOG")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset overview table.
    Stats(StatsArgs),
    /// Print the prompt(s) a configuration would send.
    RenderPrompt(RenderArgs),
    /// Parse raw model output into sections (JSON).
    Parse(ParseArgs),
    /// Generate answers for one dataset into a trace file.
    Generate(GenerateArgs),
    /// Score a generation trace against its dataset.
    Evaluate(EvaluateArgs),
    /// Run one or more experiment configurations end to end.
    Run(RunArgs),
    /// Run an ablation suite around a base configuration.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Text,
    Csv,
}

#[derive(Args)]
struct StatsArgs {
    /// JSONL files; known MedLFQA file names get their display names.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: TableFormat,
    #[arg(long)]
    exclude_ambiguous: bool,
}

#[derive(Args)]
struct PromptArgs {
    /// zero-shot, cot or med-socot.
    #[arg(long, default_value = "med-socot")]
    method: Method,
    /// direct or stepwise.
    #[arg(long)]
    mode: Option<PromptMode>,
    /// remove:K, retain:A,B,C, swap:A,B or disable:FEATURE.
    #[arg(long)]
    ablation: Option<AblationSpec>,
    #[arg(long)]
    no_one_shot: bool,
    #[arg(long)]
    no_reinforcement: bool,
    #[arg(long)]
    no_markers: bool,
    #[arg(long)]
    step_word_limit: Option<u32>,
}

impl PromptArgs {
    fn apply(&self, config: &mut RunConfig) {
        config.method = self.method;
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        if self.ablation.is_some() {
            config.ablation = self.ablation.clone();
        }
        let f = &mut config.features;
        f.one_shot_example &= !self.no_one_shot;
        f.instruction_reinforcement &= !self.no_reinforcement;
        f.specialized_markers &= !self.no_markers;
        if let Some(limit) = self.step_word_limit {
            f.step_word_limit = limit;
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Mock,
    Openai,
}

#[derive(Args)]
struct ProviderArgs {
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    #[arg(long)]
    model: Option<String>,
    /// Chat-completions base URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// JSON fixture file for the mock provider.
    #[arg(long)]
    mock_fixtures: Option<PathBuf>,
    /// Response cache directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, conflicts_with = "nli_mock")]
    nli_endpoint: Option<String>,
    /// Use the rule-based entailment judge.
    #[arg(long)]
    nli_mock: bool,
    #[arg(long)]
    workers: Option<usize>,
}

impl ProviderArgs {
    fn apply(&self, config: &mut RunConfig) {
        let provider = self.provider.or(match config.llm {
            LlmSettings::Mock { .. } if self.mock_fixtures.is_some() => Some(ProviderKind::Mock),
            _ => None,
        });
        match provider {
            Some(ProviderKind::Mock) => {
                let fixtures = self.mock_fixtures.clone().or(match &config.llm {
                    LlmSettings::Mock { fixtures } => fixtures.clone(),
                    _ => None,
                });
                config.llm = LlmSettings::Mock { fixtures };
            }
            Some(ProviderKind::Openai) if !matches!(config.llm, LlmSettings::OpenAi(_)) => {
                config.llm = LlmSettings::OpenAi(ProviderConfig::default());
            }
            _ => {}
        }
        if let LlmSettings::OpenAi(cfg) = &mut config.llm {
            if let Some(model) = &self.model {
                cfg.model = model.clone();
            }
            if let Some(endpoint) = &self.endpoint {
                cfg.endpoint = endpoint.clone();
            }
            if let Some(var) = &self.api_key_env {
                cfg.api_key_env = Some(var.clone());
            }
        }
        if let Some(endpoint) = &self.nli_endpoint {
            config.nli = NliSettings::Remote(NliConfig {
                endpoint: endpoint.clone(),
                ..NliConfig::default()
            });
        }
        if self.nli_mock {
            config.nli = NliSettings::Mock;
        }
        if self.cache_dir.is_some() {
            config.cache_dir = self.cache_dir.clone();
        }
        if let Some(workers) = self.workers {
            config.workers = workers;
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    question: String,
    #[command(flatten)]
    prompt: PromptArgs,
}

#[derive(Args)]
struct ParseArgs {
    /// Raw output file; stdin when absent.
    file: Option<PathBuf>,
    /// Expect only these step numbers, e.g. `1,3,6`.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<u8>>,
    #[arg(long)]
    no_markers: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset name; defaults to the file's display name.
    #[arg(long)]
    name: Option<String>,
    /// Trace file to write.
    #[arg(long)]
    out: PathBuf,
    /// Skip pairs whose ids are already in the trace.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    exclude_ambiguous: bool,
    #[command(flatten)]
    prompt: PromptArgs,
    #[command(flatten)]
    providers: ProviderArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    name: Option<String>,
    /// Per-pair scores (JSONL).
    #[arg(long)]
    scores: PathBuf,
    /// Aggregate table (CSV).
    #[arg(long)]
    aggregate: PathBuf,
    /// Score the whole structured output rather than the extracted answer.
    #[arg(long)]
    score_full_text: bool,
    #[arg(long, default_value_t = 0.05)]
    failure_threshold: f64,
    #[command(flatten)]
    providers: ProviderArgs,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (JSON); repeat for a multi-row report.
    #[arg(long = "config", required = true)]
    configs: Vec<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    mode: Option<PromptMode>,
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    score_full_text: bool,
    #[arg(long)]
    exclude_ambiguous: bool,
    /// Where to write the combined report; printed to stdout otherwise.
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    #[command(flatten)]
    providers: ProviderArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: PathBuf,
    /// step-importance, step-combinations, step-order, prompt-features or all.
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Directory for the suite tables (markdown and CSV).
    #[arg(long)]
    report_dir: Option<PathBuf>,
    #[command(flatten)]
    providers: ProviderArgs,
}

fn stats(args: &StatsArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &args.files {
        let name = display_name(path);
        let mut pairs = dataset::load_dataset(path, &name)
            .with_context(|| format!("loading {}", path.display()))?;
        if args.exclude_ambiguous {
            pairs = dataset::exclude_ambiguous(pairs);
        }
        rows.push((name, dataset::compute_stats(&pairs)?));
    }
    print!(
        "{}",
        match args.format {
            TableFormat::Text => stats_table_text(&rows),
            TableFormat::Csv => stats_table_csv(&rows),
        }
    );
    Ok(())
}

fn render_prompt(args: &RenderArgs) -> Result<()> {
    let mut config = RunConfig::default();
    args.prompt.apply(&mut config);
    config.datasets = vec![DatasetSpec {
        name: "-".into(),
        path: "-".into(),
    }];
    config.validate()?;
    let plan = config.plan()?;
    match plan.mode {
        PromptMode::Direct => println!("{}", plan.render_direct(&args.question)?),
        PromptMode::Stepwise => {
            let mut done = Vec::new();
            for step in plan.step_prompts() {
                println!("===== {} =====", step.heading());
                println!(
                    "{}\n",
                    step.render(&args.question, &plan.render_previous_steps(&done))?
                );
                done.push((step.step, "<step output>"));
            }
            println!("===== summary =====");
            println!(
                "{}",
                plan.render_summary(&args.question, &plan.render_previous_steps(&done))?
            );
        }
    }
    Ok(())
}

fn parse(args: &ParseArgs) -> Result<()> {
    let raw = match &args.file {
        Some(path) => fs::read(path).with_context(|| format!("reading {}", path.display()))?,
        None => {
            let mut buf = Vec::new();
            io::stdin().read_to_end(&mut buf)?;
            buf
        }
    };
    let set = match &args.steps {
        Some(numbers) => {
            let mut steps = numbers
                .iter()
                .map(|&n| ReasoningStep::from_ordinal(n).with_context(|| format!("no step {n}")))
                .collect::<Result<Vec<_>>>()?;
            if !steps.contains(&ReasoningStep::LongFormAnswer) {
                steps.push(ReasoningStep::LongFormAnswer);
            }
            StepSet::new(steps)?
        }
        None => StepSet::full(),
    };
    let parsed = parse_structured(&String::from_utf8_lossy(&raw), &set, !args.no_markers);
    println!("{}", serde_json::to_string_pretty(&parsed)?);
    Ok(())
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let name = args
        .name
        .clone()
        .unwrap_or_else(|| display_name(&args.dataset));
    let spec = DatasetSpec {
        name,
        path: args.dataset.clone(),
    };
    let mut config = RunConfig {
        datasets: vec![spec.clone()],
        resume: args.resume,
        exclude_ambiguous: args.exclude_ambiguous,
        sample: args.sample.map(|n| SampleSpec { n, seed: args.seed }),
        ..RunConfig::default()
    };
    args.prompt.apply(&mut config);
    args.providers.apply(&mut config);
    config.validate()?;
    let providers = Providers::from_config(&config)?;
    let pairs = load_pairs(&config, &spec)?;
    let plan = config.plan()?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let (outcomes, calls) = generate_dataset(&config, &plan, &providers, &pairs, &args.out)?;
    write_trace(&args.out, &outcomes)?;
    let failed = outcomes.iter().filter(|o| o.failed).count();
    eprintln!(
        "{} pairs, {failed} failed, {calls} provider calls -> {}",
        outcomes.len(),
        args.out.display()
    );
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let name = args
        .name
        .clone()
        .unwrap_or_else(|| display_name(&args.dataset));
    let mut config = RunConfig::default();
    args.providers.apply(&mut config);
    let providers = Providers::from_config(&config)?;
    let pairs = dataset::load_dataset(&args.dataset, &name)?;
    let outcomes =
        read_trace(&args.trace).with_context(|| format!("reading {}", args.trace.display()))?;
    let scored = score_outcomes(
        &pairs,
        &outcomes,
        providers.nli.as_ref(),
        args.score_full_text,
        config.workers,
    )?;
    write_jsonl(&args.scores, &scored)?;
    let (datasets, overall) = summarize(&[name], &scored, args.failure_threshold)?;
    let csv = datasets_csv(&datasets, &overall);
    fs::write(&args.aggregate, &csv)
        .with_context(|| format!("writing {}", args.aggregate.display()))?;
    print!("{csv}");
    Ok(())
}

fn load_config(path: &Path, providers: &ProviderArgs) -> Result<RunConfig> {
    let mut config =
        RunConfig::from_file(path).with_context(|| format!("loading {}", path.display()))?;
    providers.apply(&mut config);
    Ok(config)
}

fn run(args: &RunArgs) -> Result<()> {
    let mut results = Vec::new();
    for path in &args.configs {
        let mut config = load_config(path, &args.providers)?;
        if let Some(dir) = &args.output_dir {
            config.output_dir = dir.clone();
        }
        if let Some(mode) = args.mode {
            config.mode = mode;
        }
        config.resume |= args.resume;
        config.score_full_text |= args.score_full_text;
        config.exclude_ambiguous |= args.exclude_ambiguous;
        let providers = Providers::from_config(&config)?;
        let result = experiment::run(&config, &providers)?;
        eprintln!(
            "{}: {} provider calls, {:.1}s -> {}",
            result.label,
            result.provider_calls,
            result.wall_clock_secs,
            result.output_dir.display()
        );
        results.push(result);
    }
    match &args.report_dir {
        Some(dir) => {
            let path = experiment::emit_report(&results, args.format, dir)?;
            eprintln!("report -> {}", path.display());
        }
        None => print!("{}", render_report(&results, args.format)?),
    }
    Ok(())
}

fn ablate(args: &AblateArgs) -> Result<()> {
    let suites: Vec<AblationSuite> = if args.suite == "all" {
        AblationSuite::ALL.to_vec()
    } else {
        vec![args.suite.parse().map_err(anyhow::Error::msg)?]
    };
    let mut config = load_config(&args.config, &args.providers)?;
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    let providers = Providers::from_config(&config)?;
    for suite in suites {
        let table = ablation_suite(&config, suite, &providers)?;
        let markdown = table.to_markdown();
        if let Some(dir) = &args.report_dir {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("{suite}.md")), &markdown)?;
            fs::write(dir.join(format!("{suite}.csv")), table.to_csv())?;
        }
        println!("## {suite}\n\n{markdown}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let result = match &cli.command {
        Command::Stats(a) => stats(a),
        Command::RenderPrompt(a) => render_prompt(a),
        Command::Parse(a) => parse(a),
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Run(a) => run(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // core errors already embed their sources; print each cause once
            let mut message = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !message.contains(&cause) {
                    if !message.is_empty() {
                        message.push_str(": ");
                    }
                    message.push_str(&cause);
                }
            }
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
