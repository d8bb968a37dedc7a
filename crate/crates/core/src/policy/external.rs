//! Client for policies served by another process.
//!
//! The wire format is newline-delimited JSON over a child's stdin/stdout or a
//! TCP socket. Each request is one line,
//! `{"id":N,"kind":"propose"|"reflect","prompt":"...","observations":[...]}`,
//! answered by exactly one line `{"id":N,"action":"..."}`. Only one request is
//! in flight per connection.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::{render_proposal, render_reflection, render_zero_shot, PromptKind, PromptRequest};
use super::{Policy, PolicyError, ProposalRequest, RankedActions, ReflectionRequest};
use crate::env::{Action, Observation};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Command { program: String, args: Vec<String> },
    Tcp(String),
}

impl FromStr for Endpoint {
    type Err = String;

    /// `tcp:HOST:PORT` or `cmd:PROGRAM [ARGS...]`.
    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("cmd:") {
            let mut words = cmd.split_whitespace().map(str::to_string);
            let program = words.next().ok_or("empty command")?;
            return Ok(Endpoint::Command {
                program,
                args: words.collect(),
            });
        }
        Err(format!("endpoint {s:?} must start with tcp: or cmd:"))
    }
}

#[derive(Debug, Serialize)]
pub struct WireRequest<'a> {
    pub id: u64,
    pub kind: PromptKind,
    pub prompt: String,
    pub observations: Vec<&'a Observation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireResponse {
    pub id: u64,
    pub action: String,
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Single-client connection to an external policy.
pub struct ExternalPolicy {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    next_id: u64,
    timeout: Duration,
    zero_shot: bool,
    poisoned: bool,
}

impl ExternalPolicy {
    pub fn connect(endpoint: &Endpoint) -> Result<Self, PolicyError> {
        let unavailable = |e: std::io::Error| PolicyError::Unavailable(e.to_string());
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(unavailable)?;
                stream.set_nodelay(true).map_err(unavailable)?;
                let reader = stream.try_clone().map_err(unavailable)?;
                Ok(Self::over(Box::new(stream), reader, None))
            }
            Endpoint::Command { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(unavailable)?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Self::over(Box::new(stdin), stdout, Some(child)))
            }
        }
    }

    /// Speaks the protocol over an arbitrary pair of streams.
    pub fn over(
        writer: Box<dyn Write + Send>,
        reader: impl std::io::Read + Send + 'static,
        child: Option<Child>,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let end = line.is_err();
                if tx.send(line).is_err() || end {
                    break;
                }
            }
        });
        Self {
            writer,
            lines: rx,
            child,
            next_id: 0,
            timeout: DEFAULT_TIMEOUT,
            zero_shot: false,
            poisoned: false,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Wraps proposal prompts with zero-shot instructions.
    pub fn zero_shot(mut self, on: bool) -> Self {
        self.zero_shot = on;
        self
    }

    fn call(&mut self, req: PromptRequest<'_>, prompt: String) -> Result<Action, PolicyError> {
        if self.poisoned {
            return Err(PolicyError::Unavailable("connection out of sync after an earlier failure".into()));
        }
        let result = self.exchange(req, prompt);
        if matches!(result, Err(PolicyError::Timeout(_) | PolicyError::Protocol(_) | PolicyError::Unavailable(_))) {
            self.poisoned = true;
        }
        result
    }

    fn exchange(&mut self, req: PromptRequest<'_>, prompt: String) -> Result<Action, PolicyError> {
        let id = self.next_id;
        self.next_id += 1;
        let wire = WireRequest {
            id,
            kind: req.kind(),
            prompt,
            observations: req.observations(),
        };
        let mut line = serde_json::to_string(&wire).map_err(|e| PolicyError::Protocol(e.to_string()))?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| PolicyError::Unavailable(e.to_string()))?;
        let reply = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => return Err(PolicyError::Unavailable(e.to_string())),
            Err(RecvTimeoutError::Timeout) => return Err(PolicyError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(PolicyError::Unavailable("policy closed the connection".into()))
            }
        };
        let resp: WireResponse =
            serde_json::from_str(&reply).map_err(|e| PolicyError::Protocol(format!("{e}: {reply:?}")))?;
        if resp.id != id {
            return Err(PolicyError::Protocol(format!("expected id {id}, got {}", resp.id)));
        }
        Ok(resp.action.parse()?)
    }
}

impl Policy for ExternalPolicy {
    fn propose(&mut self, req: &ProposalRequest, k: usize) -> Result<RankedActions, PolicyError> {
        let prompt = if self.zero_shot {
            render_zero_shot(req)
        } else {
            render_proposal(req)
        };
        let action = self.call(PromptRequest::Propose(req), prompt)?;
        RankedActions::new([action], k.max(1)).ok_or(PolicyError::Empty)
    }

    fn reflect(&mut self, req: &ReflectionRequest) -> Result<Action, PolicyError> {
        let prompt = render_reflection(req);
        self.call(PromptRequest::Reflect(req), prompt)
    }
}

impl Drop for ExternalPolicy {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parsing() {
        assert_eq!("tcp:127.0.0.1:9000".parse(), Ok(Endpoint::Tcp("127.0.0.1:9000".into())));
        assert_eq!(
            "cmd:python3 server.py --port 1".parse(),
            Ok(Endpoint::Command {
                program: "python3".into(),
                args: vec!["server.py".into(), "--port".into(), "1".into()]
            })
        );
        assert!("http://x".parse::<Endpoint>().is_err());
        assert!("cmd:".parse::<Endpoint>().is_err());
    }

    #[test]
    fn response_rejects_extra_fields() {
        assert!(serde_json::from_str::<WireResponse>(r#"{"id":1,"action":"done","x":2}"#).is_err());
    }
}
