//! The black-box tool contract and its bindings: the in-process reference
//! tool, an external process speaking a line-delimited JSON protocol over
//! stdin/stdout, and a persistent output cache keyed by payload digest.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checks::DecisionRule;
use crate::digest::{json_digest, sha256_hex};
use crate::family::SlicePredicate;
use crate::refpgs::{self, FrequencyTable, LocusModel, MixturePayload};
use crate::universe::Instance;

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("tool failed on instance `{id}`: {message}")]
    Invocation { id: String, message: String },
    #[error("payload kind mismatch: tool expects `{expected}`, universe has `{found}`")]
    PayloadKindMismatch { expected: String, found: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("serialization error: {0}")]
    Serialization(String),
    #[error("cannot start tool `{command}`: {message}")]
    Spawn { command: String, message: String },
    #[error("tool is not a function of its input: instance `{id}` gave a different output on re-invocation")]
    Nondeterministic { id: String },
    #[error("cache error: {0}")]
    Cache(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolIdentity {
    pub name: String,
    pub version: String,
    pub config_digest: String,
}

impl ToolIdentity {
    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

/// One tool output. A definite exclusion may carry no scores.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolOutput {
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
}

impl ToolOutput {
    pub fn score(name: &str, value: f64) -> Self {
        ToolOutput {
            scores: BTreeMap::from([(name.to_string(), value)]),
            ..ToolOutput::default()
        }
    }

    fn check(&self) -> Result<(), String> {
        match self.scores.iter().find(|(_, v)| !v.is_finite()) {
            Some((k, v)) => Err(format!("score `{k}` is not finite ({v})")),
            None => Ok(()),
        }
    }
}

/// A statistical tool under audit: a pure function from payload to output.
pub trait ToolAdapter: Send + Sync {
    fn identity(&self) -> ToolIdentity;

    fn payload_kind(&self) -> &str;

    /// Outputs aligned with `batch`.
    fn invoke(&self, batch: &[&Instance]) -> Result<Vec<ToolOutput>, AdapterError>;

    /// How the tool is reached; execution detail, not identity.
    fn transport(&self) -> String {
        "in-process".into()
    }
}

/// The reference likelihood-ratio tool, called in-process.
#[derive(Clone, Debug)]
pub struct ReferencePgsTool {
    table_digest: String,
    loci: BTreeMap<String, LocusModel>,
    bound: u64,
}

impl ReferencePgsTool {
    pub fn new(table: &FrequencyTable) -> Result<Self, refpgs::PgsError> {
        Ok(ReferencePgsTool {
            table_digest: table.digest(),
            loci: table.models()?,
            bound: refpgs::DEFAULT_COMPLEXITY_BOUND,
        })
    }

    pub fn with_bound(mut self, bound: u64) -> Self {
        self.bound = bound;
        self
    }

    /// Evaluate one payload; errors are reported as text, as on the wire.
    pub fn evaluate(&self, payload: &Value) -> Result<ToolOutput, String> {
        let mixture: MixturePayload =
            serde_json::from_value(payload.clone()).map_err(|e| format!("bad payload: {e}"))?;
        if mixture.frequency_table != self.table_digest {
            return Err(format!(
                "payload refers to frequency table {}, tool holds {}",
                mixture.frequency_table, self.table_digest
            ));
        }
        let lr = refpgs::compute_lr(&mixture, &self.loci, self.bound).map_err(|e| e.to_string())?;
        Ok(match lr.log10_lr {
            Some(x) => ToolOutput::score("log10_lr", x),
            None => ToolOutput {
                excluded: true,
                ..ToolOutput::default()
            },
        })
    }
}

impl ToolAdapter for ReferencePgsTool {
    fn identity(&self) -> ToolIdentity {
        ToolIdentity {
            name: "refpgs".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_digest: json_digest(&(&self.table_digest, self.bound)),
        }
    }

    fn payload_kind(&self) -> &str {
        refpgs::PAYLOAD_KIND
    }

    fn invoke(&self, batch: &[&Instance]) -> Result<Vec<ToolOutput>, AdapterError> {
        batch
            .iter()
            .map(|inst| {
                self.evaluate(&inst.payload)
                    .map_err(|message| AdapterError::Invocation {
                        id: inst.id.clone(),
                        message,
                    })
            })
            .collect()
    }
}

/// Fault injection for harness self-tests: flips the tool's decision on
/// every instance inside `slice` by reflecting the score about `tau`.
pub struct SliceConditionalFlip<T> {
    inner: T,
    slice: SlicePredicate,
    rule: DecisionRule,
}

impl<T: ToolAdapter> SliceConditionalFlip<T> {
    pub fn new(inner: T, slice: SlicePredicate, rule: DecisionRule) -> Self {
        SliceConditionalFlip { inner, slice, rule }
    }

    fn flip(&self, mut out: ToolOutput) -> ToolOutput {
        let tau = self.rule.tau;
        let field = self.rule.score_field.clone();
        if out.excluded {
            out.excluded = false;
            out.scores.insert(field, tau + 1.0);
            return out;
        }
        if let Some(s) = out.scores.get_mut(&field) {
            *s = if *s == tau { tau - 1.0 } else { 2.0 * tau - *s };
        }
        out
    }
}

impl<T: ToolAdapter> ToolAdapter for SliceConditionalFlip<T> {
    fn identity(&self) -> ToolIdentity {
        let inner = self.inner.identity();
        ToolIdentity {
            name: format!("{}+flip", inner.name),
            version: inner.version.clone(),
            config_digest: json_digest(&(&inner, &self.slice, &self.rule)),
        }
    }

    fn payload_kind(&self) -> &str {
        self.inner.payload_kind()
    }

    fn invoke(&self, batch: &[&Instance]) -> Result<Vec<ToolOutput>, AdapterError> {
        let outputs = self.inner.invoke(batch)?;
        Ok(batch
            .iter()
            .zip(outputs)
            .map(|(inst, out)| {
                if self.slice.matches(inst) {
                    self.flip(out)
                } else {
                    out
                }
            })
            .collect())
    }

    fn transport(&self) -> String {
        self.inner.transport()
    }
}

impl ToolAdapter for Box<dyn ToolAdapter> {
    fn identity(&self) -> ToolIdentity {
        (**self).identity()
    }

    fn payload_kind(&self) -> &str {
        (**self).payload_kind()
    }

    fn invoke(&self, batch: &[&Instance]) -> Result<Vec<ToolOutput>, AdapterError> {
        (**self).invoke(batch)
    }

    fn transport(&self) -> String {
        (**self).transport()
    }
}

// ---------------------------------------------------------------------------
// Wire protocol

#[derive(Serialize, Deserialize)]
struct RequestRecord<'a> {
    seq: u64,
    id: std::borrow::Cow<'a, str>,
    payload: std::borrow::Cow<'a, Value>,
}

/// One request line `{seq, id, payload}`, LF-terminated. JSON string
/// escaping keeps embedded newlines off the line structure.
pub fn encode_request(instance: &Instance, seq: u64) -> Result<String, AdapterError> {
    let record = RequestRecord {
        seq,
        id: instance.id.as_str().into(),
        payload: std::borrow::Cow::Borrowed(&instance.payload),
    };
    let mut line =
        serde_json::to_string(&record).map_err(|e| AdapterError::Serialization(e.to_string()))?;
    line.push('\n');
    Ok(line)
}

/// A decoded request, as seen by a tool process.
#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub seq: u64,
    pub id: String,
    pub payload: Value,
}

pub fn decode_request(line: &str) -> Result<Request, AdapterError> {
    let r: RequestRecord = serde_json::from_str(line)
        .map_err(|e| AdapterError::Protocol(format!("malformed request: {e}")))?;
    Ok(Request {
        seq: r.seq,
        id: r.id.into_owned(),
        payload: r.payload.into_owned(),
    })
}

/// Scores travel as decimal text with 17 significant digits, which
/// round-trips every finite `f64` exactly.
pub fn format_score(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseRecord {
    seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<BTreeMap<String, Value>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagnostics: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn encode_response(seq: u64, outcome: &Result<ToolOutput, String>) -> String {
    let record = match outcome {
        Ok(out) => ResponseRecord {
            seq,
            scores: Some(
                out.scores
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::String(format_score(*v))))
                    .collect(),
            ),
            excluded: out.excluded,
            diagnostics: out.diagnostics.clone(),
            error: None,
        },
        Err(message) => ResponseRecord {
            seq,
            scores: None,
            excluded: false,
            diagnostics: None,
            error: Some(message.clone()),
        },
    };
    let mut line = serde_json::to_string(&record).expect("response serializes");
    line.push('\n');
    line
}

#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub seq: u64,
    /// The tool's output, or the error message it reported.
    pub outcome: Result<ToolOutput, String>,
}

impl Response {
    pub fn into_output(self, id: &str) -> Result<ToolOutput, AdapterError> {
        self.outcome.map_err(|message| AdapterError::Invocation {
            id: id.to_string(),
            message,
        })
    }
}

pub fn decode_response(line: &str) -> Result<Response, AdapterError> {
    let r: ResponseRecord = serde_json::from_str(line)
        .map_err(|e| AdapterError::Protocol(format!("malformed response: {e}")))?;
    let outcome = match (r.scores, r.error) {
        (Some(_), Some(_)) => {
            return Err(AdapterError::Protocol(format!(
                "seq {}: both scores and error",
                r.seq
            )))
        }
        (None, Some(message)) => Err(message),
        (scores, None) => {
            if scores.is_none() && !r.excluded {
                return Err(AdapterError::Protocol(format!("seq {}: no scores", r.seq)));
            }
            let mut parsed = BTreeMap::new();
            for (name, v) in scores.unwrap_or_default() {
                let x = match &v {
                    Value::String(s) => s.trim().parse::<f64>().ok(),
                    Value::Number(n) => n.as_f64(),
                    _ => None,
                }
                .ok_or_else(|| {
                    AdapterError::Protocol(format!("seq {}: score `{name}` = {v} is not a number", r.seq))
                })?;
                if !x.is_finite() {
                    return Err(AdapterError::Protocol(format!(
                        "seq {}: score `{name}` is not finite",
                        r.seq
                    )));
                }
                parsed.insert(name, x);
            }
            Ok(ToolOutput {
                scores: parsed,
                excluded: r.excluded,
                diagnostics: r.diagnostics,
            })
        }
    };
    Ok(Response { seq: r.seq, outcome })
}

/// Matches responses to a batch of requests numbered `0..len` by sequence
/// number, in any arrival order.
pub struct ResponsePairing {
    slots: Vec<Option<Response>>,
}

impl ResponsePairing {
    pub fn new(len: usize) -> Self {
        ResponsePairing {
            slots: vec![None; len],
        }
    }

    pub fn accept(&mut self, response: Response) -> Result<(), AdapterError> {
        let seq = response.seq;
        let slot = usize::try_from(seq)
            .ok()
            .and_then(|i| self.slots.get_mut(i))
            .ok_or_else(|| AdapterError::Protocol(format!("response for unknown seq {seq}")))?;
        if slot.is_some() {
            return Err(AdapterError::Protocol(format!("duplicate response for seq {seq}")));
        }
        *slot = Some(response);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    pub fn finish(self, batch: &[&Instance], exit: &str) -> Result<Vec<ToolOutput>, AdapterError> {
        self.slots
            .into_iter()
            .zip(batch)
            .map(|(slot, inst)| match slot {
                Some(r) => r.into_output(&inst.id),
                None => Err(AdapterError::Invocation {
                    id: inst.id.clone(),
                    message: format!("no response before the tool exited ({exit})"),
                }),
            })
            .collect()
    }
}

/// Serve requests from `input` with `evaluate`, one response per line.
pub fn serve<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    evaluate: impl Fn(&Value) -> Result<ToolOutput, String>,
) -> Result<(), AdapterError> {
    for line in input.lines() {
        let line = line.map_err(|e| AdapterError::Protocol(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let req = decode_request(&line)?;
        let outcome = evaluate(&req.payload);
        output
            .write_all(encode_response(req.seq, &outcome).as_bytes())
            .and_then(|_| output.flush())
            .map_err(|e| AdapterError::Protocol(e.to_string()))?;
    }
    Ok(())
}

/// A tool run as a child process: requests on stdin, responses on stdout,
/// diagnostics on stderr. One process per batch.
#[derive(Clone, Debug)]
pub struct ExternalProcessTool {
    command: Vec<String>,
    identity: ToolIdentity,
    payload_kind: String,
}

impl ExternalProcessTool {
    /// Without a declared identity the tool is identified by its command line.
    pub fn new(
        command: Vec<String>,
        payload_kind: &str,
        identity: Option<ToolIdentity>,
    ) -> Result<Self, AdapterError> {
        let program = command.first().ok_or_else(|| AdapterError::Spawn {
            command: String::new(),
            message: "empty command line".into(),
        })?;
        let identity = identity.unwrap_or_else(|| ToolIdentity {
            name: Path::new(program)
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| program.clone()),
            version: "unknown".into(),
            config_digest: sha256_hex(command.join("\0").as_bytes()),
        });
        Ok(ExternalProcessTool {
            command,
            identity,
            payload_kind: payload_kind.to_string(),
        })
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }
}

impl ToolAdapter for ExternalProcessTool {
    fn identity(&self) -> ToolIdentity {
        self.identity.clone()
    }

    fn payload_kind(&self) -> &str {
        &self.payload_kind
    }

    fn transport(&self) -> String {
        format!("external: {}", self.command.join(" "))
    }

    fn invoke(&self, batch: &[&Instance]) -> Result<Vec<ToolOutput>, AdapterError> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let requests = batch
            .iter()
            .enumerate()
            .map(|(seq, inst)| encode_request(inst, seq as u64))
            .collect::<Result<Vec<_>, _>>()?;
        let mut child = Command::new(&self.command[0])
            .args(&self.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| AdapterError::Spawn {
                command: self.command.join(" "),
                message: e.to_string(),
            })?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");

        let (read_result, diagnostics) = std::thread::scope(|scope| {
            scope.spawn(move || {
                for line in &requests {
                    // A dead child shows up as missing responses.
                    if stdin.write_all(line.as_bytes()).is_err() {
                        break;
                    }
                }
            });
            let diag = scope.spawn(move || {
                let mut text = String::new();
                let _ = stderr.read_to_string(&mut text);
                text
            });
            let mut pairing = ResponsePairing::new(batch.len());
            let read_result = (|| {
                for line in BufReader::new(stdout).lines() {
                    let line = line.map_err(|e| AdapterError::Protocol(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    pairing.accept(decode_response(&line)?)?;
                }
                Ok(pairing)
            })();
            if read_result.is_err() {
                let _ = child.kill();
            }
            (read_result, diag.join().unwrap_or_default())
        });
        let status = child.wait().map_err(|e| AdapterError::Spawn {
            command: self.command.join(" "),
            message: e.to_string(),
        })?;
        let pairing = read_result?;
        let tail: String = diagnostics.lines().last().unwrap_or("").to_string();
        let exit = if tail.is_empty() {
            status.to_string()
        } else {
            format!("{status}; stderr: {tail}")
        };
        let complete = pairing.is_complete();
        let outputs = pairing.finish(batch, &exit)?;
        if complete && !status.success() {
            return Err(AdapterError::Invocation {
                id: batch[0].id.clone(),
                message: format!("tool exited uncleanly after answering ({exit})"),
            });
        }
        Ok(outputs)
    }
}

// ---------------------------------------------------------------------------
// Output cache

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub tool: String,
    pub id: String,
    pub payload_digest: String,
    pub output: ToolOutput,
}

/// Outputs keyed by (tool identity digest, instance id); an entry whose
/// payload digest differs from the instance's is stale.
#[derive(Debug, Default)]
pub struct OutputCache {
    path: Option<PathBuf>,
    entries: BTreeMap<(String, String), CacheEntry>,
}

impl OutputCache {
    const FILE: &'static str = "outputs.jsonl";

    pub fn in_memory() -> Self {
        OutputCache::default()
    }

    /// Open (or start) the cache stored in `dir`.
    pub fn open(dir: &Path) -> Result<Self, AdapterError> {
        let path = dir.join(Self::FILE);
        let mut cache = OutputCache {
            path: Some(path.clone()),
            entries: BTreeMap::new(),
        };
        if path.exists() {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| AdapterError::Cache(format!("{}: {e}", path.display())))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let entry: CacheEntry = serde_json::from_str(line)
                    .map_err(|e| AdapterError::Cache(format!("{}:{}: {e}", path.display(), i + 1)))?;
                cache.insert(entry);
            }
        }
        Ok(cache)
    }

    pub fn save(&self) -> Result<(), AdapterError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| AdapterError::Cache(e.to_string()))?;
        }
        let mut text = String::new();
        for entry in self.entries.values() {
            text.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| AdapterError::Cache(format!("{}: {e}", path.display())))
    }

    pub fn get(&self, tool: &str, id: &str, payload_digest: &str) -> Option<&ToolOutput> {
        self.entries
            .get(&(tool.to_string(), id.to_string()))
            .filter(|e| e.payload_digest == payload_digest)
            .map(|e| &e.output)
    }

    pub fn insert(&mut self, entry: CacheEntry) {
        self.entries
            .insert((entry.tool.clone(), entry.id.clone()), entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Upper bound on concurrent tool batches.
    pub parallelism: usize,
    /// Re-invoke a deterministic 1% sample of cache hits and fail on any
    /// difference.
    pub verify_cache: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            parallelism: 1,
            verify_cache: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub invocations: usize,
    pub cache_hits: usize,
    pub verified: usize,
}

fn invoke_batched(
    tool: &dyn ToolAdapter,
    batch: &[&Instance],
    parallelism: usize,
) -> Result<Vec<ToolOutput>, AdapterError> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let workers = parallelism.clamp(1, batch.len());
    let results: Vec<Result<Vec<ToolOutput>, AdapterError>> = if workers == 1 {
        vec![tool.invoke(batch)]
    } else {
        let chunk = batch.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .chunks(chunk)
                .map(|part| scope.spawn(move || tool.invoke(part)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("tool worker panicked"))
                .collect()
        })
    };
    let mut outputs = Vec::with_capacity(batch.len());
    for r in results {
        outputs.extend(r?);
    }
    if outputs.len() != batch.len() {
        return Err(AdapterError::Protocol(format!(
            "{} outputs for {} instances",
            outputs.len(),
            batch.len()
        )));
    }
    for (inst, out) in batch.iter().zip(&outputs) {
        out.check().map_err(|message| AdapterError::Invocation {
            id: inst.id.clone(),
            message,
        })?;
    }
    Ok(outputs)
}

/// Run the tool over `instances`, consulting and filling `cache`. Outputs
/// are aligned with `instances` regardless of parallelism.
pub fn run_tool(
    tool: &dyn ToolAdapter,
    payload_kind: &str,
    instances: &[&Instance],
    cache: Option<&mut OutputCache>,
    options: &RunOptions,
) -> Result<(Vec<ToolOutput>, RunStats), AdapterError> {
    if tool.payload_kind() != payload_kind {
        return Err(AdapterError::PayloadKindMismatch {
            expected: tool.payload_kind().to_string(),
            found: payload_kind.to_string(),
        });
    }
    let tool_digest = tool.identity().digest();
    let digests: Vec<String> = instances.iter().map(|i| i.payload_digest()).collect();
    let mut outputs: Vec<Option<ToolOutput>> = vec![None; instances.len()];
    let mut stats = RunStats::default();
    if let Some(cache) = cache.as_deref() {
        for (i, inst) in instances.iter().enumerate() {
            outputs[i] = cache.get(&tool_digest, &inst.id, &digests[i]).cloned();
        }
    }
    let hits: Vec<usize> = (0..instances.len()).filter(|&i| outputs[i].is_some()).collect();
    stats.cache_hits = hits.len();

    let mut audit: Vec<usize> = Vec::new();
    if options.verify_cache && !hits.is_empty() {
        let mut ranked: Vec<(String, usize)> = hits
            .iter()
            .map(|&i| (sha256_hex(instances[i].id.as_bytes()), i))
            .collect();
        ranked.sort();
        audit = ranked
            .into_iter()
            .take(hits.len().div_ceil(100))
            .map(|(_, i)| i)
            .collect();
        audit.sort_unstable();
    }

    let misses: Vec<usize> = (0..instances.len()).filter(|&i| outputs[i].is_none()).collect();
    let to_run: Vec<&Instance> = misses
        .iter()
        .chain(&audit)
        .map(|&i| instances[i])
        .collect();
    let fresh = invoke_batched(tool, &to_run, options.parallelism)?;
    stats.invocations = fresh.len();
    stats.verified = audit.len();

    let (fresh_misses, fresh_audit) = fresh.split_at(misses.len());
    for (&i, out) in audit.iter().zip(fresh_audit) {
        if outputs[i].as_ref() != Some(out) {
            return Err(AdapterError::Nondeterministic {
                id: instances[i].id.clone(),
            });
        }
    }
    let mut cache = cache;
    for (&i, out) in misses.iter().zip(fresh_misses) {
        if let Some(cache) = cache.as_deref_mut() {
            cache.insert(CacheEntry {
                tool: tool_digest.clone(),
                id: instances[i].id.clone(),
                payload_digest: digests[i].clone(),
                output: out.clone(),
            });
        }
        outputs[i] = Some(out.clone());
    }
    Ok((outputs.into_iter().map(|o| o.expect("filled")).collect(), stats))
}
