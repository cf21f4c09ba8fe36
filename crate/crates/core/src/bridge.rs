//! Simulator side of the external policy protocol: line-delimited JSON over
//! a child process's stdin/stdout, one action per observation, lockstep.

use crate::dynamics::Action;
use crate::engine::ActorId;
use crate::sensors::Observation;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;
use thiserror::Error;

pub const PROTOCOL_VERSION: &str = "dpb/1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    RelativeTargetPose,
    TargetPose,
    Continuous,
}

impl ActionSpace {
    pub fn admits(self, a: &Action) -> bool {
        matches!(
            (self, a),
            (ActionSpace::RelativeTargetPose, Action::RelativeTargetPose { .. })
                | (ActionSpace::TargetPose, Action::TargetPose { .. })
                | (ActionSpace::Continuous, Action::Continuous { .. })
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Frame {
    Handshake {
        version: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        action_space: Option<ActionSpace>,
    },
    /// Sent before each episode; the client clears its state and echoes it.
    Reset {
        scenario: String,
        actors: Vec<ActorId>,
    },
    Observation {
        step: u64,
        actor: ActorId,
        payload: Box<Observation>,
    },
    Action {
        step: u64,
        actor: ActorId,
        payload: Action,
    },
    Shutdown,
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        line: Option<usize>,
        message: String,
    },
}

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot start policy command `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("policy process I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy process closed its output")]
    Closed,
    #[error("policy did not answer within {0:?}")]
    Timeout(Duration),
    #[error("malformed frame from policy (line {line}): {reason}")]
    Malformed { line: usize, reason: String },
    #[error("policy reported an error: {0}")]
    Remote(String),
    #[error("protocol version mismatch: expected {expected}, got {got}")]
    Version { expected: String, got: String },
    #[error("unexpected frame from policy: {0}")]
    Unexpected(String),
    #[error("action for `{actor}` at step {step} is outside the declared {space:?} space")]
    ActionSpace {
        actor: ActorId,
        step: u64,
        space: ActionSpace,
    },
}

/// A running policy process.
pub struct Bridge {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    line_no: usize,
    timeout: Duration,
    space: ActionSpace,
}

impl Bridge {
    /// Starts `command` through the shell and performs the handshake.
    pub fn spawn(command: &str, timeout: Duration) -> Result<Self, BridgeError> {
        let mut child = shell(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| BridgeError::Spawn {
                command: command.to_string(),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut bridge = Bridge {
            child,
            stdin,
            lines: rx,
            line_no: 0,
            timeout,
            space: ActionSpace::RelativeTargetPose,
        };
        bridge.handshake()?;
        Ok(bridge)
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    fn send(&mut self, frame: &Frame) -> Result<(), BridgeError> {
        let stdin = self.stdin.as_mut().ok_or(BridgeError::Closed)?;
        let mut text = serde_json::to_string(frame).expect("frames serialize");
        text.push('\n');
        stdin.write_all(text.as_bytes()).map_err(|e| {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                BridgeError::Closed
            } else {
                BridgeError::Io(e)
            }
        })?;
        stdin.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame, BridgeError> {
        let text = match self.lines.recv_timeout(self.timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => return Err(BridgeError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => return Err(BridgeError::Closed),
        };
        self.line_no += 1;
        let frame: Frame = serde_json::from_str(&text).map_err(|e| BridgeError::Malformed {
            line: self.line_no,
            reason: e.to_string(),
        })?;
        if let Frame::Error { message, .. } = frame {
            return Err(BridgeError::Remote(message));
        }
        Ok(frame)
    }

    fn handshake(&mut self) -> Result<(), BridgeError> {
        self.send(&Frame::Handshake {
            version: PROTOCOL_VERSION.into(),
            action_space: None,
        })?;
        match self.recv()? {
            Frame::Handshake {
                version,
                action_space,
            } => {
                if version != PROTOCOL_VERSION {
                    return Err(BridgeError::Version {
                        expected: PROTOCOL_VERSION.into(),
                        got: version,
                    });
                }
                self.space = action_space.unwrap_or(ActionSpace::RelativeTargetPose);
                Ok(())
            }
            other => Err(BridgeError::Unexpected(kind(&other))),
        }
    }

    pub fn reset(&mut self, scenario: &str, actors: &[ActorId]) -> Result<(), BridgeError> {
        let frame = Frame::Reset {
            scenario: scenario.to_string(),
            actors: actors.to_vec(),
        };
        self.send(&frame)?;
        match self.recv()? {
            Frame::Reset { scenario: s, .. } if s == scenario => Ok(()),
            other => Err(BridgeError::Unexpected(kind(&other))),
        }
    }

    /// Sends one observation and blocks for its action.
    pub fn act(&mut self, actor: &ActorId, obs: &Observation) -> Result<Action, BridgeError> {
        self.send(&Frame::Observation {
            step: obs.step,
            actor: actor.clone(),
            payload: Box::new(obs.clone()),
        })?;
        match self.recv()? {
            Frame::Action {
                step,
                actor: a,
                payload,
            } if step == obs.step && &a == actor => {
                if !self.space.admits(&payload) {
                    return Err(BridgeError::ActionSpace {
                        actor: a,
                        step,
                        space: self.space,
                    });
                }
                Ok(payload)
            }
            Frame::Action { step, actor: a, .. } => Err(BridgeError::Unexpected(format!(
                "action for `{a}` at step {step}, expected `{actor}` at step {}",
                obs.step
            ))),
            other => Err(BridgeError::Unexpected(kind(&other))),
        }
    }

    /// Asks the process to exit and reaps it.
    pub fn shutdown(mut self) -> Result<(), BridgeError> {
        let sent = self.send(&Frame::Shutdown);
        self.stdin = None;
        let deadline = std::time::Instant::now() + self.timeout;
        while std::time::Instant::now() < deadline {
            if self.child.try_wait()?.is_some() {
                return sent;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
        sent
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.stdin = None;
        if let Ok(None) = self.child.try_wait() {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

fn kind(f: &Frame) -> String {
    match f {
        Frame::Handshake { .. } => "handshake",
        Frame::Reset { .. } => "reset",
        Frame::Observation { .. } => "observation",
        Frame::Action { .. } => "action",
        Frame::Shutdown => "shutdown",
        Frame::Error { .. } => "error",
    }
    .to_string()
}

#[cfg(unix)]
fn shell(command: &str) -> Command {
    let mut c = Command::new("/bin/sh");
    c.arg("-c").arg(command);
    c
}

#[cfg(not(unix))]
fn shell(command: &str) -> Command {
    let mut c = Command::new("cmd");
    c.arg("/C").arg(command);
    c
}
