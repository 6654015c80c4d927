//! `summary.json`: checks, artifacts and the error, if any, of one invocation.

use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::SchemaError;

pub enum Failure {
    /// Bad flags or config; exit 2.
    Usage(String),
    /// Solver or analysis error; exit 1.
    Runtime(reflectsim::Error),
}

impl From<SchemaError> for Failure {
    fn from(e: SchemaError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<reflectsim::Error> for Failure {
    fn from(e: reflectsim::Error) -> Self {
        Failure::Runtime(e)
    }
}

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub command: String,
    pub status: String,
    pub exit_code: u8,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub details: Map<String, Value>,
    pub error: Option<ErrorInfo>,
}

fn error_kind(e: &reflectsim::Error) -> &'static str {
    use reflectsim::Error::*;
    match e {
        DomainQuery { .. } => "domain_query",
        TubeViolation { .. } => "tube_violation",
        Geometry(_) => "geometry",
        Horizon { .. } => "horizon",
        NonFinite(_) => "non_finite",
        Bracket { .. } => "bracket",
        Mode(_) => "mode",
        StepUnderflow { .. } => "step_underflow",
        InvalidRun { .. } => "invalid_run",
        Construction(_) => "construction",
        Quadrature(_) => "quadrature",
        Input(_) => "input",
        Io(_) => "io",
    }
}

impl Summary {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            status: "pass".into(),
            exit_code: 0,
            checks: Vec::new(),
            artifacts: Vec::new(),
            details: Map::new(),
            error: None,
        }
    }

    /// Records `value <= upper`.
    pub fn check_le(&mut self, name: &str, value: f64, upper: f64) -> bool {
        self.check(name, value, None, Some(upper), value <= upper)
    }

    pub fn check(&mut self, name: &str, value: f64, lower: Option<f64>, upper: Option<f64>, pass: bool) -> bool {
        self.checks.push(Check {
            name: name.into(),
            value,
            lower,
            upper,
            pass,
        });
        pass
    }

    pub fn detail(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.details.insert(key.into(), v);
    }

    pub fn artifact(&mut self, name: &str) {
        self.artifacts.push(name.into());
    }

    pub fn finish(&mut self, result: Result<(), Failure>) -> u8 {
        let (status, code) = match result {
            Err(Failure::Usage(message)) => {
                self.error = Some(ErrorInfo {
                    kind: "usage".into(),
                    message,
                });
                ("error", 2)
            }
            Err(Failure::Runtime(e)) => {
                self.error = Some(ErrorInfo {
                    kind: error_kind(&e).into(),
                    message: e.to_string(),
                });
                ("error", 1)
            }
            Ok(()) if self.checks.iter().all(|c| c.pass) => ("pass", 0),
            Ok(()) => ("fail", 1),
        };
        self.status = status.into();
        self.exit_code = code;
        code
    }

    pub fn write(&self, dir: &Path) -> reflectsim::Result<()> {
        std::fs::create_dir_all(dir)?;
        reflectsim::io::write_json(self, &dir.join("summary.json"))
    }

    pub fn print(&self, dir: &Path) {
        println!("{}: {} (exit {})", self.command, self.status, self.exit_code);
        for c in &self.checks {
            let bound = match (c.lower, c.upper) {
                (Some(lo), Some(hi)) => format!("in [{lo:e}, {hi:e}]"),
                (None, Some(hi)) => format!("<= {hi:e}"),
                (Some(lo), None) => format!(">= {lo:e}"),
                (None, None) => String::new(),
            };
            let mark = if c.pass { "ok  " } else { "FAIL" };
            println!("  {mark} {:<28} {:.3e} {bound}", c.name, c.value);
        }
        for (k, v) in &self.details {
            if v.is_number() || v.is_string() || v.is_boolean() {
                println!("  {k} = {v}");
            }
        }
        println!("  artifacts in {}: {}", dir.display(), self.artifacts.join(", "));
    }
}
