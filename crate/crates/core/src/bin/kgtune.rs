use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kgtune::backend::llvm::{load_ir_file, CountMethod, PassSyntax};
use kgtune::backend::synthetic::Split;
use kgtune::harness::{
    self, analyze_features, cmd_ablate, cmd_analyze_kb, cmd_build_kb, cmd_evaluate, cmd_synth_gen, cmd_tune,
    evaluate::write_summary, to_pretty_json, write_text, BackendKind, RunConfig, SynthParams,
};
use kgtune::knowledge::load_kb;
use kgtune::{Error, Result};

/// Knowledge-guided evolutionary pass-sequence tuning.
#[derive(Parser, Debug)]
#[command(name = "kgtune", version)]
struct Cli {
    /// JSON run config; explicit flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parallel backend invocations.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Master seed for every stochastic step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Leave out wall-clock fields so reruns produce identical files.
    #[arg(long, global = true)]
    reproducible: bool,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct BackendArgs {
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Synthetic suite file.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Path to `opt` (else $KGTUNE_OPT, else PATH).
    #[arg(long)]
    opt: Option<PathBuf>,
    #[arg(long, value_enum)]
    count_method: Option<CountMethodArg>,
    #[arg(long, value_enum)]
    pass_syntax: Option<PassSyntaxArg>,
    /// Per-invocation timeout in seconds.
    #[arg(long)]
    timeout: Option<u64>,
    #[arg(long)]
    baseline_flag: Option<String>,
    /// File with one pass flag per line.
    #[arg(long)]
    passes_file: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct GaArgs {
    /// Backend evaluations allowed per tuning run.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    pop_size: Option<usize>,
    #[arg(long)]
    generations: Option<usize>,
    /// Prototype sequences seeded into the population.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    crossover_rate: Option<f64>,
    #[arg(long)]
    mutation_rate: Option<f64>,
    /// Candidate blocks sampled per restorative mutation.
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    no_smart_init: bool,
    #[arg(long = "no-kc", visible_alias = "no-knowledge-crossover")]
    no_knowledge_crossover: bool,
    #[arg(long = "no-km", visible_alias = "no-knowledge-mutation")]
    no_knowledge_mutation: bool,
    /// Accept mutations even when they do not improve fitness.
    #[arg(long)]
    mutation_accept_always: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CountMethodArg {
    TextualCount,
    InstcountPass,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PassSyntaxArg {
    Legacy,
    New,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the pass knowledge base from a training corpus.
    BuildKb {
        /// Directory of .ll files, or a synthetic suite.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Fixed number of program prototypes (default: elbow).
        #[arg(long)]
        prototypes: Option<usize>,
        #[arg(long)]
        seq_len: Option<usize>,
        /// Cap on pair evaluations while mining synergy.
        #[arg(long)]
        pair_budget: Option<u64>,
        /// Evolve prototype sequences without knowledge operators.
        #[arg(long)]
        proto_plain_ga: bool,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        ga: GaArgs,
    },
    /// Tune one program against a knowledge base.
    Tune {
        #[arg(long)]
        kb: Option<PathBuf>,
        /// IR file, or a program id of the synthetic suite.
        #[arg(long)]
        program: String,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        ga: GaArgs,
    },
    /// Tune a test set and report over-baseline reduction.
    Evaluate {
        #[arg(long)]
        kb: Option<PathBuf>,
        /// Directory or file of .ll programs, or a synthetic suite.
        #[arg(long)]
        programs: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long, default_value = "kgtune")]
        method: String,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        ga: GaArgs,
    },
    /// Evaluate under the five operator configurations.
    Ablate {
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long)]
        programs: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        ga: GaArgs,
    },
    /// Generate a planted synthetic suite and its ground-truth sidecar.
    SynthGen {
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth sidecar (default: <out>.truth.json).
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        passes: usize,
        #[arg(long, default_value_t = 30)]
        programs: usize,
        #[arg(long, default_value_t = 0)]
        test_programs: usize,
        #[arg(long, default_value_t = 3)]
        prototypes: usize,
        #[arg(long, default_value_t = 2)]
        synergy_pairs: usize,
    },
    /// Emit CSV reports.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Subcommand, Debug)]
enum AnalyzeCommand {
    /// Print the feature vector of one IR file.
    Features { file: PathBuf },
    /// Behavioral vectors, risky passes, synergy edges and pass groups.
    Kb {
        #[arg(long)]
        kb: PathBuf,
        /// Directory for the CSV files.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn apply_backend(cfg: &mut RunConfig, a: BackendArgs) {
    let b = &mut cfg.backend;
    if let Some(k) = a.backend {
        b.kind = k;
    }
    if a.suite.is_some() {
        b.suite = a.suite;
    }
    if a.opt.is_some() {
        b.opt_path = a.opt;
    }
    if let Some(m) = a.count_method {
        b.count_method = match m {
            CountMethodArg::TextualCount => CountMethod::TextualCount,
            CountMethodArg::InstcountPass => CountMethod::InstcountPass,
        };
    }
    if let Some(s) = a.pass_syntax {
        b.pass_syntax = match s {
            PassSyntaxArg::Legacy => PassSyntax::Legacy,
            PassSyntaxArg::New => PassSyntax::New,
        };
    }
    if let Some(t) = a.timeout {
        b.timeout_secs = t;
    }
    if let Some(f) = a.baseline_flag {
        b.baseline_flag = f;
    }
    if a.passes_file.is_some() {
        b.passes_file = a.passes_file;
    }
}

fn apply_ga(ga: &mut kgtune::evolve::GaConfig, a: &GaArgs) {
    if a.budget.is_some() {
        ga.eval_budget = a.budget;
    }
    if let Some(v) = a.pop_size {
        ga.pop_size = v;
    }
    if let Some(v) = a.generations {
        ga.generations = v;
    }
    if let Some(v) = a.top_k {
        ga.top_k_init = v;
    }
    if let Some(v) = a.crossover_rate {
        ga.crossover_rate = v;
    }
    if let Some(v) = a.mutation_rate {
        ga.mutation_rate = v;
    }
    if let Some(v) = a.candidates {
        ga.candidate_blocks_q = v;
    }
    if a.no_smart_init {
        ga.operators.smart_init = false;
    }
    if a.no_knowledge_crossover {
        ga.operators.knowledge_crossover = false;
    }
    if a.no_knowledge_mutation {
        ga.operators.knowledge_mutation = false;
    }
    if a.mutation_accept_always {
        ga.mutation_accept_always = true;
    }
}

fn split_of(cfg: &RunConfig, arg: Option<SplitArg>, default: Split) -> Option<Split> {
    if cfg.backend.kind == BackendKind::Llvm {
        return None;
    }
    match arg {
        Some(SplitArg::Train) => Some(Split::Train),
        Some(SplitArg::Test) => Some(Split::Test),
        Some(SplitArg::All) => None,
        None => Some(cfg.split.clone().unwrap_or(default)),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::usage(format!("missing --{flag}")))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    if let Some(j) = cli.jobs {
        cfg.backend.jobs = j;
    }
    cfg.reproducible |= cli.reproducible;

    match cli.command {
        Command::BuildKb {
            corpus,
            out,
            prototypes,
            seq_len,
            pair_budget,
            proto_plain_ga,
            split,
            backend,
            ga,
        } => {
            apply_backend(&mut cfg, backend);
            apply_ga(&mut cfg.build.ga, &ga);
            if corpus.is_some() {
                cfg.corpus = corpus;
            }
            if cfg.corpus.is_none() && cfg.backend.kind == BackendKind::Synthetic {
                cfg.corpus = cfg.backend.suite.clone();
            }
            if prototypes.is_some() {
                cfg.build.prototypes = prototypes;
            }
            if let Some(l) = seq_len {
                cfg.build.seq_len = l;
            }
            if pair_budget.is_some() {
                cfg.build.pair_budget = pair_budget;
            }
            cfg.build.proto_plain_ga |= proto_plain_ga;
            cfg.split = split_of(&cfg, split, Split::Train);
            cfg.outputs = vec![out.clone()];
            let (_, summary) = cmd_build_kb(&cfg, &out)?;
            print!("{}", to_pretty_json(&summary));
        }
        Command::Tune {
            kb,
            program,
            report,
            backend,
            ga,
        } => {
            apply_backend(&mut cfg, backend);
            apply_ga(&mut cfg.ga, &ga);
            if kb.is_some() {
                cfg.kb = kb;
            }
            cfg.outputs = report.iter().cloned().collect();
            let run = cmd_tune(&cfg, &program, report.as_deref())?;
            if report.is_none() {
                print!("{}", to_pretty_json(&run));
            } else {
                let r = &run.report;
                println!(
                    "{}: prototype {} fitness {:.4}% calls {}",
                    r.program_id, r.prototype, r.best_fitness, r.backend_calls
                );
            }
        }
        Command::Evaluate {
            kb,
            programs,
            split,
            method,
            csv,
            json,
            backend,
            ga,
        } => {
            apply_backend(&mut cfg, backend);
            apply_ga(&mut cfg.ga, &ga);
            if kb.is_some() {
                cfg.kb = kb;
            }
            if programs.is_some() {
                cfg.programs = programs;
            }
            if cfg.programs.is_none() && cfg.backend.kind == BackendKind::Synthetic {
                cfg.programs = cfg.backend.suite.clone();
            }
            cfg.split = split_of(&cfg, split, Split::Test);
            cfg.outputs = csv.iter().chain(json.iter()).cloned().collect();
            let kb = load_kb(required(&cfg.kb, "kb")?)?;
            let progs = harness::load_programs(&cfg.backend, required(&cfg.programs, "programs")?, cfg.split.clone())?;
            let summary = cmd_evaluate(&cfg, &kb, &progs, &method)?;
            write_summary(&summary, csv.as_deref(), json.as_deref())?;
            println!(
                "{}: mean {:.4}% over {} programs ({} excluded)",
                summary.method, summary.mean_overoz, summary.programs, summary.excluded
            );
        }
        Command::Ablate {
            kb,
            programs,
            split,
            csv,
            json,
            backend,
            ga,
        } => {
            apply_backend(&mut cfg, backend);
            apply_ga(&mut cfg.ga, &ga);
            if kb.is_some() {
                cfg.kb = kb;
            }
            if programs.is_some() {
                cfg.programs = programs;
            }
            if cfg.programs.is_none() && cfg.backend.kind == BackendKind::Synthetic {
                cfg.programs = cfg.backend.suite.clone();
            }
            cfg.split = split_of(&cfg, split, Split::Test);
            cfg.outputs = csv.iter().chain(json.iter()).cloned().collect();
            let kb = load_kb(required(&cfg.kb, "kb")?)?;
            let progs = harness::load_programs(&cfg.backend, required(&cfg.programs, "programs")?, cfg.split.clone())?;
            let table = cmd_ablate(&cfg, &kb, &progs)?;
            let text = table.to_csv()?;
            if let Some(p) = &csv {
                write_text(p, &text)?;
            }
            if let Some(p) = &json {
                write_text(p, &to_pretty_json(&table))?;
            }
            print!("{text}");
        }
        Command::SynthGen {
            out,
            truth,
            passes,
            programs,
            test_programs,
            prototypes,
            synergy_pairs,
        } => {
            let params = SynthParams {
                passes,
                programs,
                test_programs,
                prototypes,
                synergy_pairs,
                seed: cfg.seed,
            };
            let (suite, gt) = cmd_synth_gen(&params)?;
            let truth = truth.unwrap_or_else(|| out.with_extension("truth.json"));
            write_text(&out, &suite.to_json())?;
            write_text(&truth, &gt.to_json())?;
            println!("wrote {} and {}", out.display(), truth.display());
        }
        Command::Analyze(AnalyzeCommand::Features { file }) => {
            print!("{}", analyze_features(&load_ir_file(&file)?)?);
        }
        Command::Analyze(AnalyzeCommand::Kb { kb, out_dir }) => {
            let report = cmd_analyze_kb(&load_kb(&kb)?)?;
            report.write_to(&out_dir)?;
            print!("{}", report.risky_csv);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
