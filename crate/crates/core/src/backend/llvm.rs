//! Backend that shells out to LLVM's `opt`.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{BackendError, Error, Result};
use crate::features::count_instructions;
use crate::model::{PassId, PassUniverse, ProgramUnit};

use super::Backend;

/// Environment variable overriding the `opt` executable.
pub const OPT_ENV: &str = "KGTUNE_OPT";

/// A portable subset of LLVM transform passes, spelled in legacy flag form.
pub const DEFAULT_PASSES: &[&str] = &[
    "-adce",
    "-aggressive-instcombine",
    "-alignment-from-assumptions",
    "-bdce",
    "-called-value-propagation",
    "-constmerge",
    "-correlated-propagation",
    "-dse",
    "-early-cse",
    "-float2int",
    "-functionattrs",
    "-globaldce",
    "-globalopt",
    "-gvn",
    "-indvars",
    "-inline",
    "-instcombine",
    "-instsimplify",
    "-ipsccp",
    "-jump-threading",
    "-lcssa",
    "-licm",
    "-loop-deletion",
    "-loop-idiom",
    "-loop-instsimplify",
    "-loop-reduce",
    "-loop-rotate",
    "-loop-simplify",
    "-loop-simplifycfg",
    "-loop-sink",
    "-loop-unroll",
    "-lower-expect",
    "-mem2reg",
    "-memcpyopt",
    "-mergefunc",
    "-mergereturn",
    "-nary-reassociate",
    "-newgvn",
    "-reassociate",
    "-sccp",
    "-simplifycfg",
    "-sink",
    "-slp-vectorizer",
    "-sroa",
    "-strip-dead-prototypes",
    "-tailcallelim",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMethod {
    /// Count instruction lines of the emitted IR text.
    TextualCount,
    /// Parse the `instcount` statistic from `-stats` output.
    InstcountPass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassSyntax {
    /// `opt -pass-a -pass-b`.
    Legacy,
    /// `opt -passes=pass-a,pass-b`.
    New,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlvmConfig {
    pub opt_path: PathBuf,
    pub count_method: CountMethod,
    pub syntax: PassSyntax,
    pub timeout_secs: u64,
    pub baseline_flag: String,
    pub passes: Vec<String>,
}

impl Default for LlvmConfig {
    fn default() -> Self {
        LlvmConfig {
            opt_path: resolve_opt(None),
            count_method: CountMethod::TextualCount,
            syntax: PassSyntax::Legacy,
            timeout_secs: 30,
            baseline_flag: "-Oz".to_string(),
            passes: DEFAULT_PASSES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Explicit path, then `$KGTUNE_OPT`, then `opt` on `PATH`.
pub fn resolve_opt(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OPT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    if let Some(paths) = std::env::var_os("PATH") {
        for dir in std::env::split_paths(&paths) {
            let candidate = dir.join("opt");
            if candidate.is_file() {
                return candidate;
            }
        }
    }
    PathBuf::from("opt")
}

/// Returns the `opt --version` banner, or an error when the tool cannot run.
pub fn probe_opt(opt: &Path) -> Result<String, BackendError> {
    let out = Command::new(opt)
        .arg("--version")
        .stdin(Stdio::null())
        .output()
        .map_err(|e| BackendError::Io(format!("cannot run `{}`: {e}", opt.display())))?;
    if !out.status.success() {
        return Err(BackendError::tool_failed(
            &opt.display().to_string(),
            out.status,
            &out.stderr,
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

#[derive(Debug)]
pub struct LlvmBackend {
    id: String,
    config: LlvmConfig,
    universe: PassUniverse,
}

impl LlvmBackend {
    /// Builds the backend after checking that `opt` runs.
    pub fn new(config: LlvmConfig) -> Result<Self> {
        if config.timeout_secs == 0 {
            return Err(Error::usage("timeout must be positive"));
        }
        let version = probe_opt(&config.opt_path)?;
        let universe = PassUniverse::from_names(&config.passes)?;
        let id = format!(
            "llvm:{}:{:?}:{:?}",
            version.lines().find(|l| l.contains("version")).unwrap_or("unknown").trim(),
            config.syntax,
            config.count_method
        );
        Ok(LlvmBackend { id, config, universe })
    }

    pub fn config(&self) -> &LlvmConfig {
        &self.config
    }

    fn pass_args(&self, seq: &[PassId]) -> Vec<String> {
        let instcount = self.config.count_method == CountMethod::InstcountPass;
        match self.config.syntax {
            PassSyntax::Legacy => {
                let mut args: Vec<String> = seq.iter().map(|p| p.to_string()).collect();
                if instcount {
                    args.push("-instcount".into());
                    args.push("-stats".into());
                }
                args
            }
            PassSyntax::New => {
                let mut names: Vec<&str> = seq.iter().map(|p| p.as_str().trim_start_matches('-')).collect();
                if instcount {
                    names.push("instcount");
                }
                let mut args = Vec::new();
                if !names.is_empty() {
                    args.push(format!("-passes={}", names.join(",")));
                }
                if instcount {
                    args.push("-stats".into());
                }
                args
            }
        }
    }

    fn run(&self, program: &ProgramUnit, args: Vec<String>) -> Result<u64, BackendError> {
        let tool = self.config.opt_path.display().to_string();
        let dir = tempfile::tempdir().map_err(|e| BackendError::Io(e.to_string()))?;
        let input = dir.path().join("in.ll");
        let output = dir.path().join("out.ll");
        let errlog = dir.path().join("stderr.txt");
        fs::write(&input, program.source()).map_err(|e| BackendError::Io(e.to_string()))?;
        let stderr = File::create(&errlog).map_err(|e| BackendError::Io(e.to_string()))?;

        let mut child = Command::new(&self.config.opt_path)
            .args(&args)
            .arg(&input)
            .arg("-S")
            .arg("-o")
            .arg(&output)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr)
            .spawn()
            .map_err(|e| BackendError::Io(format!("cannot run `{tool}`: {e}")))?;

        let timeout = Duration::from_secs(self.config.timeout_secs);
        let status = match child.wait_timeout(timeout).map_err(|e| BackendError::Io(e.to_string()))? {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(BackendError::Timeout {
                    tool,
                    seconds: self.config.timeout_secs,
                });
            }
        };
        let err_bytes = fs::read(&errlog).unwrap_or_default();
        if !status.success() {
            return Err(BackendError::tool_failed(&tool, status, &err_bytes));
        }
        match self.config.count_method {
            CountMethod::TextualCount => {
                let text = fs::read_to_string(&output).map_err(|e| BackendError::Io(e.to_string()))?;
                Ok(count_instructions(&text))
            }
            CountMethod::InstcountPass => parse_instcount(&String::from_utf8_lossy(&err_bytes)),
        }
    }
}

/// Extracts the total from `-stats` output of the `instcount` pass.
pub fn parse_instcount(stderr: &str) -> Result<u64, BackendError> {
    stderr
        .lines()
        .find(|l| l.contains("instcount") && l.contains("Number of instructions (of all types)"))
        .and_then(|l| l.split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| BackendError::Unparsable("no instcount statistic in opt stderr".into()))
}

impl Backend for LlvmBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn universe(&self) -> &PassUniverse {
        &self.universe
    }

    fn evaluate(&self, program: &ProgramUnit, seq: &[PassId]) -> Result<u64, BackendError> {
        if let Some(p) = seq.iter().find(|p| !self.universe.contains(p)) {
            return Err(BackendError::UnknownPass(p.to_string()));
        }
        self.run(program, self.pass_args(seq))
    }

    fn baseline_count(&self, program: &ProgramUnit) -> Result<u64, BackendError> {
        let mut args = vec![self.config.baseline_flag.clone()];
        if self.config.count_method == CountMethod::InstcountPass {
            args.extend(self.pass_args(&[]));
        }
        self.run(program, args)
    }
}

/// Loads every `*.ll` file in `dir` (sorted by name) as a program.
pub fn load_ir_dir(dir: &Path) -> Result<Vec<ProgramUnit>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ll"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_ir_file(p)).collect()
}

pub fn load_ir_file(path: &Path) -> Result<ProgramUnit> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(ProgramUnit::new(id, bytes))
}
