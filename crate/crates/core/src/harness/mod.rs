//! Command implementations behind the `kgtune` binary.
//!
//! Each `cmd_*` function is an ordinary library call so the CLI, the C ABI
//! and the test suites share one code path.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};

use crate::backend::llvm::{self, resolve_opt, CountMethod, LlvmBackend, LlvmConfig, PassSyntax};
use crate::backend::synthetic::Split;
use crate::backend::{Backend, Evaluator, SyntheticBackend, SyntheticSuite};
use crate::error::{Error, Result};
use crate::evolve::{tune, GaConfig, TuneReport};
use crate::knowledge::{build_kb, load_kb, save_kb, BuildConfig, PassKnowledgeBase};
use crate::model::ProgramUnit;

pub mod analyze;
pub mod evaluate;
pub mod synth;

pub use analyze::{analyze_features, cmd_analyze_kb, AnalysisReport};
pub use evaluate::{cmd_ablate, cmd_evaluate, AblationTable, EvalRow, EvalSummary, Variant};
pub use synth::{cmd_synth_gen, GroundTruth, SynthParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Llvm,
    #[default]
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    pub kind: BackendKind,
    /// Synthetic suite file (synthetic backend).
    pub suite: Option<PathBuf>,
    pub opt_path: Option<PathBuf>,
    pub count_method: CountMethod,
    pub pass_syntax: PassSyntax,
    pub timeout_secs: u64,
    pub baseline_flag: String,
    /// One pass flag per line; defaults to the built-in list.
    pub passes_file: Option<PathBuf>,
    pub jobs: usize,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            kind: BackendKind::Synthetic,
            suite: None,
            opt_path: None,
            count_method: CountMethod::TextualCount,
            pass_syntax: PassSyntax::Legacy,
            timeout_secs: 30,
            baseline_flag: "-Oz".into(),
            passes_file: None,
            jobs: 1,
        }
    }
}

/// Everything needed to replay a command; embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: BackendSettings,
    pub build: BuildConfig,
    pub ga: GaConfig,
    pub corpus: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub programs: Option<PathBuf>,
    pub split: Option<Split>,
    pub outputs: Vec<PathBuf>,
    pub seed: u64,
    /// Omit wall-clock fields so reruns are byte-identical.
    pub reproducible: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendSettings::default(),
            build: BuildConfig::default(),
            ga: GaConfig::default(),
            corpus: None,
            kb: None,
            programs: None,
            split: None,
            outputs: Vec::new(),
            seed: 42,
            reproducible: false,
        }
    }
}

impl RunConfig {
    /// Reads a JSON config file; missing fields take their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::usage(format!("{}: {e}", path.display())))
    }

    /// Propagates the run seed into the build and GA configs.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.build.seed = seed;
        self.build.ga.seed = seed;
        self.ga.seed = seed;
    }
}

fn load_suite(settings: &BackendSettings, fallback: Option<&Path>) -> Result<SyntheticSuite> {
    let path = settings
        .suite
        .as_deref()
        .or(fallback)
        .ok_or_else(|| Error::usage("the synthetic backend needs --suite <file>"))?;
    SyntheticSuite::load(path)
}

/// Instantiates the configured backend. `fallback_suite` is used when no suite is set.
pub fn open_backend(settings: &BackendSettings, fallback_suite: Option<&Path>) -> Result<Arc<dyn Backend>> {
    match settings.kind {
        BackendKind::Synthetic => Ok(Arc::new(SyntheticBackend::new(&load_suite(settings, fallback_suite)?)?)),
        BackendKind::Llvm => {
            let passes = match &settings.passes_file {
                Some(p) => std::fs::read_to_string(p)
                    .map_err(|e| Error::io(p.display().to_string(), e))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with('#'))
                    .map(str::to_string)
                    .collect(),
                None => llvm::DEFAULT_PASSES.iter().map(|s| s.to_string()).collect(),
            };
            let cfg = LlvmConfig {
                opt_path: resolve_opt(settings.opt_path.as_deref()),
                count_method: settings.count_method,
                syntax: settings.pass_syntax,
                timeout_secs: settings.timeout_secs,
                baseline_flag: settings.baseline_flag.clone(),
                passes,
            };
            Ok(Arc::new(LlvmBackend::new(cfg)?))
        }
    }
}

/// Loads programs: a suite file (synthetic) or a `.ll` file or directory (LLVM).
pub fn load_programs(settings: &BackendSettings, path: &Path, split: Option<Split>) -> Result<Vec<ProgramUnit>> {
    match settings.kind {
        BackendKind::Synthetic => Ok(SyntheticSuite::load(path)?.units(split)),
        BackendKind::Llvm if path.is_dir() => llvm::load_ir_dir(path),
        BackendKind::Llvm => Ok(vec![llvm::load_ir_file(path)?]),
    }
}

/// Resolves `--program`: a file path, or for the synthetic backend a program id in the suite.
pub fn load_program(settings: &BackendSettings, reference: &str) -> Result<ProgramUnit> {
    match settings.kind {
        BackendKind::Llvm => llvm::load_ir_file(Path::new(reference)),
        BackendKind::Synthetic => {
            let suite = load_suite(settings, None)?;
            suite
                .program(reference)
                .map(|p| p.unit())
                .ok_or_else(|| Error::usage(format!("no program `{reference}` in the suite")))
        }
    }
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub prototypes: usize,
    pub pass_groups: usize,
    pub synergy_edges: usize,
    pub prototype_scores: Vec<f64>,
    pub backend_calls: u64,
}

impl BuildSummary {
    fn of(kb: &PassKnowledgeBase) -> Self {
        BuildSummary {
            prototypes: kb.num_prototypes(),
            pass_groups: kb.groups.k,
            synergy_edges: kb.synergy.len(),
            prototype_scores: kb.prototypes.entries.iter().map(|e| e.score).collect(),
            backend_calls: kb.provenance.backend_calls,
        }
    }
}

/// Builds the knowledge base from `config.corpus` and writes it to `out`.
pub fn cmd_build_kb(config: &RunConfig, out: &Path) -> Result<(PassKnowledgeBase, BuildSummary)> {
    let corpus_path = config
        .corpus
        .as_deref()
        .ok_or_else(|| Error::usage("build-kb needs --corpus"))?;
    let backend = open_backend(&config.backend, Some(corpus_path))?;
    let split = match config.backend.kind {
        BackendKind::Synthetic => Some(config.split.clone().unwrap_or(Split::Train)),
        BackendKind::Llvm => None,
    };
    let corpus = load_programs(&config.backend, corpus_path, split)?;
    if corpus.is_empty() {
        return Err(Error::usage(format!("empty corpus: {}", corpus_path.display())));
    }
    info!("building knowledge base from {} programs", corpus.len());
    let evaluator = Evaluator::new(backend, config.backend.jobs)?;
    let mut kb = build_kb(&corpus, &evaluator, &config.build)?;
    if !config.reproducible {
        kb.provenance.created_unix = Some(now_unix());
    }
    save_kb(&kb, out)?;
    let summary = BuildSummary::of(&kb);
    Ok((kb, summary))
}

/// Tune report together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRun {
    pub run_config: RunConfig,
    pub report: TuneReport,
}

/// Tunes one program against a saved knowledge base.
pub fn cmd_tune(config: &RunConfig, program_ref: &str, report_path: Option<&Path>) -> Result<TuneRun> {
    let kb_path = config.kb.as_deref().ok_or_else(|| Error::usage("tune needs --kb"))?;
    let kb = load_kb(kb_path)?;
    let backend = open_backend(&config.backend, None)?;
    kb.check_universe(backend.universe())?;
    let program = load_program(&config.backend, program_ref)?;
    let evaluator = Evaluator::new(backend, config.backend.jobs)?;
    let mut report = tune(&program, &kb, &evaluator, &config.ga)?;
    if config.reproducible {
        report.wall_time_s = 0.0;
    }
    let run = TuneRun {
        run_config: config.clone(),
        report,
    };
    if let Some(path) = report_path {
        write_text(path, &to_pretty_json(&run))?;
    }
    Ok(run)
}
