//! Pipe-level SMT-LIB v2 solver sessions.
//!
//! The solver runs as a child process. Commands go to its standard input with
//! `:print-success` enabled, so every command has exactly one response and a
//! desynchronised stream is detected on the spot. Any protocol error leaves
//! the session failed; no further command is sent.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use num_bigint::BigInt;
use thiserror::Error;

/// Environment variable consulted by [`default_command`].
pub const SOLVER_ENV: &str = "CHARTBMC_SOLVER";
pub const DEFAULT_COMMAND: &str = "z3 -in";

/// The solver command line: `$CHARTBMC_SOLVER` if set, else `z3 -in`.
pub fn default_command() -> String {
    std::env::var(SOLVER_ENV).ok().filter(|s| !s.trim().is_empty()).unwrap_or_else(|| DEFAULT_COMMAND.to_string())
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("cannot start solver `{cmd}`: {source}")]
    Spawn { cmd: String, source: std::io::Error },
    #[error("solver i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("solver protocol error: {0}")]
    Protocol(String),
    #[error("solver session is {0:?}")]
    Unusable(SessionState),
    #[error("pop without matching push")]
    FrameUnderflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    Started,
    Failed,
    Closed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SatResult {
    Sat,
    Unsat,
    Unknown,
}

impl fmt::Display for SatResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SatResult::Sat => "sat",
            SatResult::Unsat => "unsat",
            SatResult::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sort {
    Bool,
    Int,
}

impl Sort {
    pub fn smt(self) -> &'static str {
        match self {
            Sort::Bool => "Bool",
            Sort::Int => "Int",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    Bool(bool),
    Int(BigInt),
}

/// Values of the constants asked for, by name.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SolverModel(pub BTreeMap<String, Value>);

impl SolverModel {
    pub fn int(&self, name: &str) -> Option<&BigInt> {
        match self.0.get(name) {
            Some(Value::Int(n)) => Some(n),
            _ => None,
        }
    }

    pub fn bool(&self, name: &str) -> Option<bool> {
        match self.0.get(name) {
            Some(Value::Bool(b)) => Some(*b),
            _ => None,
        }
    }
}

pub struct SolverSession {
    cmd: String,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    state: SessionState,
    depth: usize,
    /// Declarations per frame, so `get_model` can ask for what is in scope.
    declared: Vec<Vec<(String, Sort)>>,
}

impl SolverSession {
    /// Starts the solver (the command is split on whitespace) and sets up
    /// models and QF_LIA.
    pub fn open(cmd: &str) -> Result<Self, SolverError> {
        let mut parts = cmd.split_whitespace();
        let prog = parts.next().ok_or_else(|| SolverError::Protocol("empty solver command".into()))?;
        let mut child = Command::new(prog)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|source| SolverError::Spawn { cmd: cmd.to_string(), source })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut s = SolverSession {
            cmd: cmd.to_string(),
            child,
            stdin,
            lines: rx,
            state: SessionState::Started,
            depth: 0,
            declared: vec![vec![]],
        };
        s.command("(set-option :print-success true)")?;
        s.command("(set-option :produce-models true)")?;
        s.command("(set-logic QF_LIA)")?;
        Ok(s)
    }

    pub fn command_line(&self) -> &str {
        &self.cmd
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn declare(&mut self, name: &str, sort: Sort) -> Result<(), SolverError> {
        self.command(&format!("(declare-const {name} {})", sort.smt()))?;
        self.declared.last_mut().expect("frame").push((name.to_string(), sort));
        Ok(())
    }

    /// Asserts one SMT-LIB term, e.g. `(> x 0)`.
    pub fn assert(&mut self, term: &str) -> Result<(), SolverError> {
        self.command(&format!("(assert {term})"))
    }

    pub fn push(&mut self) -> Result<(), SolverError> {
        self.command("(push 1)")?;
        self.depth += 1;
        self.declared.push(vec![]);
        Ok(())
    }

    pub fn pop(&mut self) -> Result<(), SolverError> {
        if self.depth == 0 {
            return Err(SolverError::FrameUnderflow);
        }
        self.command("(pop 1)")?;
        self.depth -= 1;
        self.declared.pop();
        Ok(())
    }

    /// `None` waits forever. On timeout the solver is killed, the session
    /// becomes failed and the answer is `Unknown`.
    pub fn check_sat(&mut self, timeout: Option<Duration>) -> Result<SatResult, SolverError> {
        self.check("(check-sat)".into(), timeout)
    }

    /// `check-sat-assuming` over Boolean literals; the assumptions are
    /// dropped again once the answer is in.
    pub fn check_sat_assuming(&mut self, literals: &[String], timeout: Option<Duration>) -> Result<SatResult, SolverError> {
        self.check(format!("(check-sat-assuming ({}))", literals.join(" ")), timeout)
    }

    fn check(&mut self, cmd: String, timeout: Option<Duration>) -> Result<SatResult, SolverError> {
        self.send(&cmd)?;
        let resp = match self.read_response(timeout) {
            Ok(r) => r,
            Err(ReadError::Timeout) => {
                self.fail();
                return Ok(SatResult::Unknown);
            }
            Err(ReadError::Solver(e)) => return Err(e),
        };
        match resp.trim() {
            "sat" => Ok(SatResult::Sat),
            "unsat" => Ok(SatResult::Unsat),
            "unknown" => Ok(SatResult::Unknown),
            other => Err(self.protocol(format!("unexpected check-sat response: {other}"))),
        }
    }

    /// Values of every constant declared in the frames currently in scope.
    pub fn get_model(&mut self) -> Result<SolverModel, SolverError> {
        let names: Vec<String> = self.declared.iter().flatten().map(|(n, _)| n.clone()).collect();
        self.get_values(&names)
    }

    pub fn get_values(&mut self, names: &[String]) -> Result<SolverModel, SolverError> {
        if names.is_empty() {
            return Ok(SolverModel::default());
        }
        self.send(&format!("(get-value ({}))", names.join(" ")))?;
        let resp = self.read_response(None).map_err(ReadError::into_error)?;
        let parsed = match parse_sexp(&resp) {
            Ok(v) => v,
            Err(e) => return Err(self.protocol(e)),
        };
        let pairs = match parsed {
            Sexp::List(items) => items,
            Sexp::Atom(a) => return Err(self.protocol(format!("unexpected get-value response: {a}"))),
        };
        let mut out = SolverModel::default();
        for pair in pairs {
            let decoded = match &pair {
                Sexp::List(kv) if kv.len() == 2 => match (&kv[0], decode_value(&kv[1])) {
                    (Sexp::Atom(name), Some(v)) => Some((unquote(name).to_string(), v)),
                    _ => None,
                },
                _ => None,
            };
            match decoded {
                Some((k, v)) => {
                    out.0.insert(k, v);
                }
                None => return Err(self.protocol(format!("cannot decode model entry {pair}"))),
            }
        }
        Ok(out)
    }

    pub fn close(mut self) -> Result<(), SolverError> {
        if self.state == SessionState::Started {
            let _ = writeln!(self.stdin, "(exit)");
            let _ = self.stdin.flush();
        }
        self.state = SessionState::Closed;
        let _ = self.child.kill();
        let _ = self.child.wait();
        Ok(())
    }

    fn command(&mut self, text: &str) -> Result<(), SolverError> {
        self.send(text)?;
        let resp = self.read_response(None).map_err(ReadError::into_error)?;
        if resp.trim() == "success" {
            Ok(())
        } else {
            Err(self.protocol(format!("`{text}` answered {}", resp.trim())))
        }
    }

    fn send(&mut self, text: &str) -> Result<(), SolverError> {
        if self.state != SessionState::Started {
            return Err(SolverError::Unusable(self.state));
        }
        if let Err(e) = writeln!(self.stdin, "{text}").and_then(|_| self.stdin.flush()) {
            self.fail();
            return Err(e.into());
        }
        Ok(())
    }

    /// Reads one complete s-expression or atom.
    fn read_response(&mut self, timeout: Option<Duration>) -> Result<String, ReadError> {
        let deadline = timeout.map(|t| std::time::Instant::now() + t);
        let mut buf = String::new();
        loop {
            let line = match deadline {
                None => self.lines.recv().map_err(|_| RecvTimeoutError::Disconnected),
                Some(d) => self.lines.recv_timeout(d.saturating_duration_since(std::time::Instant::now())),
            };
            match line {
                Ok(l) => {
                    if buf.is_empty() && l.trim().is_empty() {
                        continue;
                    }
                    buf.push_str(&l);
                    buf.push('\n');
                    if balanced(&buf) {
                        break;
                    }
                }
                Err(RecvTimeoutError::Timeout) => return Err(ReadError::Timeout),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(ReadError::Solver(self.protocol("solver closed its output".into())))
                }
            }
        }
        if buf.trim_start().starts_with("(error") {
            return Err(ReadError::Solver(self.protocol(buf.trim().to_string())));
        }
        Ok(buf)
    }

    fn fail(&mut self) {
        self.state = SessionState::Failed;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn protocol(&mut self, msg: String) -> SolverError {
        self.fail();
        SolverError::Protocol(msg)
    }
}

impl Drop for SolverSession {
    fn drop(&mut self) {
        if self.state == SessionState::Started {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

enum ReadError {
    Timeout,
    Solver(SolverError),
}

impl ReadError {
    fn into_error(self) -> SolverError {
        match self {
            ReadError::Timeout => SolverError::Protocol("timeout outside check-sat".into()),
            ReadError::Solver(e) => e,
        }
    }
}

fn balanced(text: &str) -> bool {
    let mut depth = 0i64;
    let mut in_str = false;
    let mut in_bar = false;
    for c in text.chars() {
        match c {
            '"' if !in_bar => in_str = !in_str,
            '|' if !in_str => in_bar = !in_bar,
            '(' if !in_str && !in_bar => depth += 1,
            ')' if !in_str && !in_bar => depth -= 1,
            _ => {}
        }
    }
    depth <= 0 && !in_str && !in_bar
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

impl fmt::Display for Sexp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexp::Atom(a) => f.write_str(a),
            Sexp::List(items) => {
                f.write_str("(")?;
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{it}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Parses exactly one s-expression (`|quoted|` symbols and strings kept
/// verbatim as atoms).
pub fn parse_sexp(text: &str) -> Result<Sexp, String> {
    let chars: Vec<char> = text.chars().collect();
    let mut pos = 0;
    let out = sexp_at(&chars, &mut pos)?;
    skip_ws(&chars, &mut pos);
    if pos != chars.len() {
        return Err(format!("trailing input at {pos}"));
    }
    Ok(out)
}

fn skip_ws(chars: &[char], pos: &mut usize) {
    while *pos < chars.len() && chars[*pos].is_whitespace() {
        *pos += 1;
    }
}

fn sexp_at(chars: &[char], pos: &mut usize) -> Result<Sexp, String> {
    skip_ws(chars, pos);
    match chars.get(*pos) {
        None => Err("unexpected end of input".into()),
        Some('(') => {
            *pos += 1;
            let mut items = vec![];
            loop {
                skip_ws(chars, pos);
                match chars.get(*pos) {
                    None => return Err("unbalanced parenthesis".into()),
                    Some(')') => {
                        *pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    Some(_) => items.push(sexp_at(chars, pos)?),
                }
            }
        }
        Some(')') => Err(format!("unexpected ')' at {pos}")),
        Some(&q) if q == '|' || q == '"' => {
            let start = *pos;
            *pos += 1;
            while *pos < chars.len() && chars[*pos] != q {
                *pos += 1;
            }
            if *pos == chars.len() {
                return Err("unterminated quoted atom".into());
            }
            *pos += 1;
            Ok(Sexp::Atom(chars[start..*pos].iter().collect()))
        }
        Some(_) => {
            let start = *pos;
            while *pos < chars.len() && !chars[*pos].is_whitespace() && chars[*pos] != '(' && chars[*pos] != ')' {
                *pos += 1;
            }
            Ok(Sexp::Atom(chars[start..*pos].iter().collect()))
        }
    }
}

fn unquote(name: &str) -> &str {
    name.strip_prefix('|').and_then(|s| s.strip_suffix('|')).unwrap_or(name)
}

fn decode_value(v: &Sexp) -> Option<Value> {
    match v {
        Sexp::Atom(a) if a == "true" => Some(Value::Bool(true)),
        Sexp::Atom(a) if a == "false" => Some(Value::Bool(false)),
        Sexp::Atom(a) => a.parse().ok().map(Value::Int),
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(minus), inner] if minus == "-" => match decode_value(inner)? {
                Value::Int(n) => Some(Value::Int(-n)),
                Value::Bool(_) => None,
            },
            _ => None,
        },
    }
}

/// Quotes a symbol when it is not a plain SMT-LIB simple symbol.
pub fn symbol(name: &str) -> String {
    let simple = !name.is_empty()
        && !name.starts_with(|c: char| c.is_ascii_digit())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "~!@$%^&*_-+=<>.?/".contains(c));
    if simple {
        name.to_string()
    } else {
        format!("|{name}|")
    }
}
