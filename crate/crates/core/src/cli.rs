//! Command-line surface: `synth`, `ingest`, `family`, `run`, `report`.
//!
//! Exit codes: 0 audit passed (or command succeeded), 1 audit failed,
//! 2 configuration error, 3 tool/adapter error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::adapters::{
    ExternalProcessTool, OutputCache, ReferencePgsTool, RunOptions, SliceConditionalFlip,
    ToolAdapter, ToolIdentity,
};
use crate::checks::{CheckSpec, Reason, Verdict};
use crate::engine::{robust_adversarial_test, AuditReport, EngineError};
use crate::family::{generate_kway_family, support, CaseProfile, DistributionFamily, SlicePredicate, ToleranceConfig};
use crate::refpgs::{self, synth_generate, FrequencyTable, SynthConfig};
use crate::universe::{DataUniverse, Schema};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ADAPTER: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Adapter(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Adapter(_) => EXIT_ADAPTER,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Adapter(e.to_string()),
        }
    }
}

fn config_err(context: impl std::fmt::Display) -> impl FnOnce(String) -> CliError {
    move |m| CliError::Config(format!("{context}: {m}"))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn load_schema(path: &Path) -> Result<Schema, CliError> {
    Schema::load(&read_text(path)?).map_err(|e| config_err(path.display())(e.to_string()))
}

pub fn load_universe(schema: &Schema, path: &Path) -> Result<DataUniverse, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    DataUniverse::read(schema, BufReader::new(file))
        .map_err(|e| config_err(path.display())(e.to_string()))
}

#[derive(Parser, Debug)]
#[command(name = "robust-audit", version, about = "Slice-based robust adversarial testing of decision tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic mixture dataset (schema, instances, frequency table).
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate instance files against a schema and merge them into one universe.
    Ingest {
        #[arg(long)]
        schema: PathBuf,
        /// Instance file; repeatable. Records without a source are tagged
        /// with the file stem, or `TAG` when given as `TAG=PATH`.
        #[arg(long = "input", required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the k-way marginal family for a case profile.
    Family {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        universe: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        tolerances: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an audit and write its report.
    Run(RunArgs),
    /// Render a report.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Human)]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Machine,
    Human,
}

/// Flags of `run`; each overrides the matching field of `--config`.
#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// Run configuration file; relative paths inside resolve against its directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub universe: Option<PathBuf>,
    #[arg(long)]
    pub family: Option<PathBuf>,
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tolerances: Option<PathBuf>,
    #[arg(long)]
    pub check: Option<PathBuf>,
    /// Frequency table for the built-in reference tool.
    #[arg(long)]
    pub frequencies: Option<PathBuf>,
    /// Slice file; the built-in tool's decisions are flipped inside it.
    #[arg(long)]
    pub flip_on: Option<PathBuf>,
    /// External tool command line, split on whitespace.
    #[arg(long)]
    pub external: Option<String>,
    /// Identity file declared for the external tool.
    #[arg(long)]
    pub identity: Option<PathBuf>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub verify_cache: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ToolSpec {
    #[default]
    Refpgs,
    External,
}

/// Everything an audit needs, as read from a config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Option<PathBuf>,
    pub universe: Option<PathBuf>,
    pub family: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    pub k: Option<usize>,
    pub tolerances: Option<PathBuf>,
    pub check: Option<PathBuf>,
    #[serde(default)]
    pub tool: ToolSpec,
    pub frequencies: Option<PathBuf>,
    pub flip_on: Option<PathBuf>,
    pub command: Option<Vec<String>>,
    pub identity: Option<ToolIdentity>,
    pub parallelism: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub verify_cache: bool,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = serde_json::from_str(&read_text(path)?)
            .map_err(|e| config_err(path.display())(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.schema,
            &mut cfg.universe,
            &mut cfg.family,
            &mut cfg.profile,
            &mut cfg.tolerances,
            &mut cfg.check,
            &mut cfg.frequencies,
            &mut cfg.flip_on,
            &mut cfg.cache_dir,
            &mut cfg.out,
        ] {
            if let Some(rel) = p.as_mut().filter(|p| p.is_relative()) {
                *rel = base.join(&*rel);
            }
        }
        Ok(cfg)
    }

    /// The config file (if any) overridden by command-line flags.
    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $( if args.$f.is_some() { cfg.$f = args.$f.clone(); } )* };
        }
        take!(schema, universe, family, profile, k, tolerances, check, frequencies, flip_on, parallelism, cache_dir, out);
        if let Some(cmd) = &args.external {
            cfg.tool = ToolSpec::External;
            cfg.command = Some(cmd.split_whitespace().map(String::from).collect());
        }
        if let Some(p) = &args.identity {
            cfg.identity = Some(
                serde_json::from_str(&read_text(p)?)
                    .map_err(|e| config_err(p.display())(e.to_string()))?,
            );
        }
        cfg.verify_cache |= args.verify_cache;
        Ok(cfg)
    }
}

fn required<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("missing `{name}`")))
}

/// Everything loaded and validated before any tool call.
pub struct PreparedRun {
    pub universe: DataUniverse,
    pub family: DistributionFamily,
    pub check: CheckSpec,
    pub tool: Box<dyn ToolAdapter>,
    pub options: RunOptions,
    pub cache_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub fn prepare_run(cfg: &RunConfig) -> Result<PreparedRun, CliError> {
    let schema = load_schema(required(&cfg.schema, "schema")?)?;
    let universe = load_universe(&schema, required(&cfg.universe, "universe")?)?;
    let family = match (&cfg.family, &cfg.profile) {
        (Some(path), _) => DistributionFamily::load(&read_text(path)?)
            .map_err(|e| config_err(path.display())(e.to_string()))?,
        (None, Some(profile)) => {
            let k = *required(&cfg.k, "k")?;
            build_family(&schema, profile, k, cfg.tolerances.as_deref())?
        }
        (None, None) => return Err(CliError::Config("missing `family` or `profile`".into())),
    };
    let check_path = required(&cfg.check, "check")?;
    let check = CheckSpec::load(&read_text(check_path)?)
        .map_err(|e| config_err(check_path.display())(e.to_string()))?;
    let parallelism = cfg.parallelism.unwrap_or(1);
    if parallelism < 1 {
        return Err(CliError::Config("parallelism must be at least 1".into()));
    }
    let tool: Box<dyn ToolAdapter> = match cfg.tool {
        ToolSpec::Refpgs => {
            let path = required(&cfg.frequencies, "frequencies")?;
            let table = FrequencyTable::load(&read_text(path)?)
                .map_err(|e| config_err(path.display())(e.to_string()))?;
            let tool = ReferencePgsTool::new(&table).map_err(|e| CliError::Config(e.to_string()))?;
            match &cfg.flip_on {
                None => Box::new(tool),
                Some(path) => {
                    let slice: SlicePredicate = serde_json::from_str(&read_text(path)?)
                        .map_err(|e| config_err(path.display())(e.to_string()))?;
                    slice
                        .validate(&schema)
                        .map_err(|e| config_err(path.display())(e.to_string()))?;
                    Box::new(SliceConditionalFlip::new(tool, slice, check.decision()))
                }
            }
        }
        ToolSpec::External => {
            if cfg.flip_on.is_some() {
                return Err(CliError::Config("`flip_on` applies to the built-in tool only".into()));
            }
            let command = required(&cfg.command, "command")?.clone();
            Box::new(
                ExternalProcessTool::new(command, refpgs::PAYLOAD_KIND, cfg.identity.clone())
                    .map_err(|e| CliError::Config(e.to_string()))?,
            )
        }
    };
    Ok(PreparedRun {
        universe,
        family,
        check,
        tool,
        options: RunOptions {
            parallelism,
            verify_cache: cfg.verify_cache,
        },
        cache_dir: cfg.cache_dir.clone(),
        out: cfg.out.clone(),
    })
}

fn build_family(
    schema: &Schema,
    profile: &Path,
    k: usize,
    tolerances: Option<&Path>,
) -> Result<DistributionFamily, CliError> {
    let profile_doc = CaseProfile::load(&read_text(profile)?)
        .map_err(|e| config_err(profile.display())(e.to_string()))?;
    let tol = match tolerances {
        Some(p) => ToleranceConfig::load(&read_text(p)?)
            .map_err(|e| config_err(p.display())(e.to_string()))?,
        None => ToleranceConfig::default(),
    };
    generate_kway_family(&profile_doc, k, schema, &tol).map_err(|e| CliError::Config(e.to_string()))
}

/// Run the audit described by `cfg`, writing the report. Returns the report.
pub fn cmd_run(cfg: &RunConfig) -> Result<AuditReport, CliError> {
    let run = prepare_run(cfg)?;
    let mut cache = match &run.cache_dir {
        Some(dir) => Some(OutputCache::open(dir).map_err(|e| CliError::Config(e.to_string()))?),
        None => None,
    };
    let report = robust_adversarial_test(
        run.tool.as_ref(),
        &run.universe,
        &run.family,
        &run.check,
        cache.as_mut(),
        &run.options,
    )?;
    if let Some(cache) = &cache {
        cache.save().map_err(|e| CliError::Adapter(e.to_string()))?;
    }
    if let Some(out) = &run.out {
        write_text(out, &report.to_json())?;
    }
    Ok(report)
}

pub fn cmd_synth(config: Option<&Path>, seed: u64, out: &Path) -> Result<(), CliError> {
    let config = match config {
        Some(p) => SynthConfig::load(&read_text(p)?).map_err(|e| config_err(p.display())(e.to_string()))?,
        None => SynthConfig::default(),
    };
    let data = synth_generate(&config, seed).map_err(|e| CliError::Config(e.to_string()))?;
    let universe = DataUniverse::new(data.schema.clone(), data.instances, vec![config.source.clone()])
        .map_err(|e| CliError::Config(e.to_string()))?;
    write_text(&out.join("schema.json"), &data.schema.to_json_pretty())?;
    write_text(&out.join("frequencies.json"), &data.frequencies.to_json_pretty())?;
    write_text(&out.join("universe.jsonl"), &universe.to_jsonl())
}

/// Merge instance files into one universe; returns the coverage summary.
pub fn cmd_ingest(schema: &Path, inputs: &[String], out: &Path) -> Result<String, CliError> {
    let schema = load_schema(schema)?;
    let mut parts = Vec::with_capacity(inputs.len());
    for input in inputs {
        let (tag, path) = match input.split_once('=') {
            Some((tag, path)) => (tag.to_string(), PathBuf::from(path)),
            None => {
                let path = PathBuf::from(input);
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| input.clone());
                (stem, path)
            }
        };
        let file = fs::File::open(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        parts.push(
            DataUniverse::ingest(&schema, BufReader::new(file), &tag)
                .map_err(|e| config_err(path.display())(e.to_string()))?,
        );
    }
    let universe = DataUniverse::merge(&parts).map_err(|e| CliError::Config(e.to_string()))?;
    write_text(out, &universe.to_jsonl())?;
    Ok(serde_json::to_string_pretty(&universe.summarize()).expect("summary serializes") + "\n")
}

pub fn cmd_family(
    schema: &Path,
    universe: &Path,
    profile: &Path,
    k: usize,
    tolerances: Option<&Path>,
    out: &Path,
) -> Result<DistributionFamily, CliError> {
    let schema = load_schema(schema)?;
    let universe = load_universe(&schema, universe)?;
    let family = build_family(&schema, profile, k, tolerances)?;
    let supports = family
        .specs()
        .iter()
        .map(|s| support(s, &universe))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Config(e.to_string()))?;
    write_text(out, &family.to_file_json(Some(&supports)))?;
    Ok(family)
}

pub fn load_report(path: &Path) -> Result<AuditReport, CliError> {
    AuditReport::load(&read_text(path)?).map_err(|e| config_err(path.display())(e.to_string()))
}

fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "PASS",
        Verdict::Fail => "FAIL",
    }
}

fn reason_text(r: Reason) -> &'static str {
    match r {
        Reason::MetThreshold => "met threshold",
        Reason::ThresholdViolated => "threshold violated",
        Reason::InsufficientSupport => "insufficient data (n < n_min)",
        Reason::NoEligibleInstances => "no eligible instances",
    }
}

/// Plain-text view of a report. Never recomputes anything.
pub fn render_human(report: &AuditReport) -> String {
    use std::fmt::Write as _;
    let c = &report.check;
    let cmp = if c.metric.is_error_like() { "<=" } else { ">=" };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "tool      {} {} (config {})",
        report.tool.name,
        report.tool.version,
        &report.tool.config_digest[..report.tool.config_digest.len().min(12)]
    );
    let _ = writeln!(
        s,
        "universe  {} instances from {}",
        report.universe.instances,
        report.universe.provenance.join(", ")
    );
    let k = report.family.meta.k.map(|k| format!(", k={k}")).unwrap_or_default();
    let edited = if report.family.hand_edited { ", hand edited" } else { "" };
    let _ = writeln!(s, "family    {} slices{k}{edited}", report.family.slices);
    let _ = writeln!(
        s,
        "check     {} {cmp} {} ({:?} mode, alpha={}, n_min={}, include when {} >= {})\n",
        c.metric.as_str(),
        c.theta,
        c.mode,
        c.alpha,
        c.n_min,
        c.score_field,
        c.tau
    );
    let width = report
        .outcomes
        .iter()
        .map(|o| o.spec.name.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let _ = writeln!(
        s,
        "{:<width$}  {:>7}  {:>9}  {:>19}  {:<7}  reason",
        "slice", "support", "estimate", "interval", "verdict"
    );
    for o in &report.outcomes {
        let (est, interval) = match &o.result.estimate {
            Some(e) => (
                format!("{:.4}", e.point),
                e.interval
                    .map(|i| format!("[{:.4}, {:.4}]", i.lo, i.hi))
                    .unwrap_or_else(|| "-".into()),
            ),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            s,
            "{:<width$}  {:>7}  {:>9}  {:>19}  {:<7}  {}",
            o.spec.name,
            o.support,
            est,
            interval,
            verdict_word(o.result.verdict),
            reason_text(o.result.reason)
        );
    }
    s.push('\n');
    match &report.worst_case {
        Some(w) => {
            let _ = writeln!(s, "worst case: {} {} = {:.4}", w.slice, w.metric.as_str(), w.value);
        }
        None => s.push_str("worst case: no slice had eligible instances\n"),
    }
    let _ = writeln!(
        s,
        "verdict: {} ({} of {} slices passed; {} with insufficient data)",
        verdict_word(report.verdict),
        report.summary.passed,
        report.summary.slices,
        report.summary.insufficient_support
    );
    s
}

/// Parse `args` and run; returns the process exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
            } else {
                let _ = write!(stdout, "{e}");
            }
            return code;
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let io = |e: std::io::Error| CliError::Config(e.to_string());
    match command {
        Command::Synth { config, seed, out } => {
            cmd_synth(config.as_deref(), seed, &out)?;
            Ok(EXIT_PASS)
        }
        Command::Ingest { schema, inputs, out } => {
            let summary = cmd_ingest(&schema, &inputs, &out)?;
            stdout.write_all(summary.as_bytes()).map_err(io)?;
            Ok(EXIT_PASS)
        }
        Command::Family {
            schema,
            universe,
            profile,
            k,
            tolerances,
            out,
        } => {
            let family = cmd_family(&schema, &universe, &profile, k, tolerances.as_deref(), &out)?;
            writeln!(stdout, "{} slices written to {}", family.len(), out.display()).map_err(io)?;
            Ok(EXIT_PASS)
        }
        Command::Run(args) => {
            let cfg = RunConfig::from_args(&args)?;
            let report = cmd_run(&cfg)?;
            if cfg.out.is_some() {
                stdout.write_all(render_human(&report).as_bytes()).map_err(io)?;
            } else {
                stdout.write_all(report.to_json().as_bytes()).map_err(io)?;
            }
            Ok(match report.verdict {
                Verdict::Pass => EXIT_PASS,
                Verdict::Fail => EXIT_FAIL,
            })
        }
        Command::Report { report, format } => {
            let report = load_report(&report)?;
            let text = match format {
                ReportFormat::Machine => report.to_json(),
                ReportFormat::Human => render_human(&report),
            };
            stdout.write_all(text.as_bytes()).map_err(io)?;
            Ok(EXIT_PASS)
        }
    }
}
