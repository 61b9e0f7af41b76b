use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::protocol::{self, Reply, Request};
use super::{validate_response, ProviderError, ProviderInit, SalienceProvider, SalienceResponse};
use crate::salience::ActivePatchSet;

pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_secs(300);

/// A child process speaking one JSON object per line on stdin/stdout.
///
/// Requests are strictly sequential. Any transport failure poisons the
/// process handle; later calls return [`ProviderError::Unusable`].
pub struct JsonLineProcess {
    command: String,
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    reader: Option<JoinHandle<()>>,
    timeout: Duration,
    poisoned: Option<String>,
}

impl JsonLineProcess {
    /// Launch `command`, split on whitespace into program and arguments.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let mut parts = command.split_whitespace();
        let program = parts.next().ok_or_else(|| ProviderError::Spawn {
            command: command.to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
        })?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ProviderError::Spawn {
                command: command.to_string(),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        let reader = std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Ok(Self {
            command: command.to_string(),
            child,
            stdin,
            lines,
            reader: Some(reader),
            timeout,
            poisoned: None,
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Send one request and wait for the next reply line.
    pub fn request(&mut self, request: &Request) -> Result<Reply, ProviderError> {
        if let Some(reason) = &self.poisoned {
            return Err(ProviderError::Unusable(reason.clone()));
        }
        let result = self.exchange(request);
        if let Err(e) = &result {
            self.poisoned = Some(e.to_string());
            if matches!(e, ProviderError::Timeout(_)) {
                let _ = self.child.kill();
            }
        }
        result
    }

    fn exchange(&mut self, request: &Request) -> Result<Reply, ProviderError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| ProviderError::Protocol("stdin already closed".into()))?;
        let mut line = request.to_line();
        line.push('\n');
        stdin.write_all(line.as_bytes())?;
        stdin.flush()?;
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => return Err(ProviderError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self
                    .child
                    .wait()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|e| e.to_string());
                return Err(ProviderError::Exited(status));
            }
        };
        match Reply::parse(&line)? {
            Reply::Error { message } => Err(ProviderError::Remote(message)),
            reply => Ok(reply),
        }
    }

    /// Ask the process to exit and wait for it.
    pub fn shutdown(mut self) -> Result<ExitStatus, ProviderError> {
        if let Some(mut stdin) = self.stdin.take() {
            let mut line = Request::Shutdown.to_line();
            line.push('\n');
            // A process that already died is reported through its status.
            let _ = stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush());
        }
        let deadline = Instant::now() + self.timeout.min(Duration::from_secs(30));
        loop {
            if let Some(status) = self.child.try_wait()? {
                if let Some(reader) = self.reader.take() {
                    let _ = reader.join();
                }
                return Ok(status);
            }
            if Instant::now() >= deadline {
                let _ = self.child.kill();
                return Err(ProviderError::Timeout(self.timeout));
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }
}

impl Drop for JsonLineProcess {
    fn drop(&mut self) {
        if self.reader.is_some() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

/// Provider session backed by an external process.
pub struct SubprocessSession {
    process: JsonLineProcess,
    n_classes: usize,
    grid: usize,
    spans: Option<Vec<Vec<usize>>>,
}

impl SubprocessSession {
    /// Launch the process and perform the `init`/`ready` handshake.
    pub fn start(command: &str, init: &ProviderInit, timeout: Duration) -> Result<Self, ProviderError> {
        init.validate()?;
        let mut process = JsonLineProcess::spawn(command, timeout)?;
        match process.request(&Request::Init(init.clone()))? {
            Reply::Ready { k, grid, spans } => {
                if k != init.classes.len() || grid != init.grid {
                    return Err(ProviderError::ShapeMismatch {
                        tensor: "ready handshake",
                        expected: (init.classes.len(), init.grid),
                        found: (k, grid),
                    });
                }
                Ok(Self {
                    process,
                    n_classes: k,
                    grid,
                    spans,
                })
            }
            other => Err(ProviderError::Protocol(format!(
                "expected ready after init, got {}",
                other.to_line()
            ))),
        }
    }

    /// Token spans the provider reported in its handshake, if any.
    pub fn spans(&self) -> Option<&[Vec<usize>]> {
        self.spans.as_deref()
    }

    pub fn shutdown(self) -> Result<ExitStatus, ProviderError> {
        self.process.shutdown()
    }
}

impl SalienceProvider for SubprocessSession {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn grid(&self) -> usize {
        self.grid
    }

    fn query(&mut self, active: &ActivePatchSet) -> Result<SalienceResponse, ProviderError> {
        let request = Request::Salience {
            active_b64: protocol::encode_active(active),
        };
        let reply = self.process.request(&request)?;
        let checked = match reply {
            Reply::Tensors {
                attention_b64,
                gradient_b64,
            } => protocol::decode_response(&attention_b64, &gradient_b64).and_then(|response| {
                validate_response(&response, self.n_classes, self.grid, active)?;
                Ok(response)
            }),
            other => Err(ProviderError::Protocol(format!(
                "expected tensors, got {}",
                other.to_line()
            ))),
        };
        if let Err(e) = &checked {
            self.process.poisoned = Some(e.to_string());
        }
        checked
    }
}
