//! Line-delimited JSON protocol for external agents.
//!
//! Request: `{"op": "check" | "refine", "candidate": {...}, "feedback": {...}?, "config": {...}?}`.
//! Response to check: `{"pass": bool, "feedback": {"codes": [...], "detail": "..."}?}`.
//! Response to refine: `{"instruction": "...", "labels": {param: value}, "slot": {...}?}`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Candidate, Checker, Feedback, Refiner, Revision, Verdict, Violation};
use crate::dataset::{Instance, SlotTuple};
use crate::error::{Error, Result};
use crate::params::ParameterConfig;

#[derive(Debug, Clone, PartialEq)]
pub enum AgentResponse {
    Verdict(Verdict),
    Revision(Revision),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireFeedback {
    codes: BTreeSet<Violation>,
    #[serde(default)]
    detail: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireVerdict {
    pass: bool,
    #[serde(default)]
    feedback: Option<WireFeedback>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRevision {
    instruction: String,
    labels: BTreeMap<String, String>,
    #[serde(default)]
    slot: Option<SlotTuple>,
}

/// Parse one response line. Label values outside a vocabulary are kept as
/// invalid indices so the checker reports them.
pub fn parse_agent_response(line: &str) -> Result<AgentResponse> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::Agent(format!("bad JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Agent("response must be a JSON object".into()))?;
    if obj.contains_key("pass") {
        let w: WireVerdict = serde_json::from_value(value).map_err(|e| Error::Agent(e.to_string()))?;
        let feedback = w.feedback.map(|f| Feedback {
            codes: f.codes,
            detail: f.detail,
        });
        if !w.pass && feedback.as_ref().is_none_or(|f| f.codes.is_empty()) {
            return Err(Error::Agent("failing verdict without violation codes".into()));
        }
        return Ok(AgentResponse::Verdict(Verdict {
            pass: w.pass,
            feedback: if w.pass { None } else { feedback },
        }));
    }
    if obj.contains_key("instruction") {
        let w: WireRevision = serde_json::from_value(value).map_err(|e| Error::Agent(e.to_string()))?;
        if w.instruction.trim().is_empty() {
            return Err(Error::Agent("revision has an empty instruction".into()));
        }
        return Ok(AgentResponse::Revision(Revision {
            instruction: w.instruction,
            labels: ParameterConfig::from_names_lenient(&w.labels),
            slot: w.slot,
        }));
    }
    Err(Error::Agent("response is neither a verdict nor a revision".into()))
}

struct Proc {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// An external checker/refiner speaking the protocol over stdin/stdout.
pub struct SubprocessAgent {
    proc: Mutex<Proc>,
    config: Option<Value>,
}

impl SubprocessAgent {
    /// `config` is passed through untouched with every request.
    pub fn spawn(program: &str, args: &[String], config: Option<Value>) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Agent(format!("cannot start '{program}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            proc: Mutex::new(Proc { child, stdin, stdout }),
            config,
        })
    }

    fn call(&self, mut request: Value) -> Result<AgentResponse> {
        if let Some(cfg) = &self.config {
            request["config"] = cfg.clone();
        }
        let mut p = self.proc.lock().map_err(|_| Error::Agent("agent lock poisoned".into()))?;
        let io = |e: std::io::Error| Error::Agent(format!("agent I/O: {e}"));
        let mut line = serde_json::to_string(&request)?;
        line.push('\n');
        p.stdin.write_all(line.as_bytes()).map_err(io)?;
        p.stdin.flush().map_err(io)?;
        let mut reply = String::new();
        if p.stdout.read_line(&mut reply).map_err(io)? == 0 {
            return Err(Error::Agent("agent closed its output".into()));
        }
        parse_agent_response(reply.trim_end())
    }
}

impl Drop for SubprocessAgent {
    fn drop(&mut self) {
        if let Ok(p) = self.proc.get_mut() {
            let _ = p.child.kill();
            let _ = p.child.wait();
        }
    }
}

impl Checker for SubprocessAgent {
    fn check(&self, candidate: &Candidate, _group: &[&Instance]) -> Result<Verdict> {
        match self.call(json!({"op": "check", "candidate": candidate}))? {
            AgentResponse::Verdict(v) => Ok(v),
            AgentResponse::Revision(_) => Err(Error::Agent("expected a verdict, got a revision".into())),
        }
    }
}

impl Refiner for SubprocessAgent {
    fn refine(&self, candidate: &Candidate, feedback: &Feedback, _group: &[&Instance]) -> Result<Revision> {
        match self.call(json!({"op": "refine", "candidate": candidate, "feedback": feedback}))? {
            AgentResponse::Revision(r) => Ok(r),
            AgentResponse::Verdict(_) => Err(Error::Agent("expected a revision, got a verdict".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_verdicts_and_revisions() {
        let v = parse_agent_response(r#"{"pass": true}"#).unwrap();
        assert!(matches!(v, AgentResponse::Verdict(Verdict { pass: true, .. })));
        let v = parse_agent_response(r#"{"pass": false, "feedback": {"codes": ["intent_mismatch"]}}"#).unwrap();
        assert!(matches!(v, AgentResponse::Verdict(Verdict { pass: false, feedback: Some(_) })));
        let r = parse_agent_response(
            r#"{"instruction": "x", "labels": {"sampling_frequency": "1kHz", "exposure_time": "90us"}}"#,
        )
        .unwrap();
        match r {
            AgentResponse::Revision(r) => {
                assert_eq!(r.labels.0[0], 2);
                assert!(!r.labels.is_valid());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_responses() {
        assert!(parse_agent_response("nope").is_err());
        assert!(parse_agent_response("[]").is_err());
        assert!(parse_agent_response(r#"{"pass": false}"#).is_err());
        assert!(parse_agent_response(r#"{"pass": true, "extra": 1}"#).is_err());
        assert!(parse_agent_response(r#"{"verdict": true}"#).is_err());
    }
}
