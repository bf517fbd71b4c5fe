//! Client side of the predictor protocol: subprocess (stdio) and HTTP
//! transports, request/response correlation by `request_id`.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};

use crate::error::{PredictorError, Result};
use crate::model::Instance;
use crate::predictor::protocol::{ClientMessage, ProtocolServer, ServerMessage};
use crate::predictor::{FeatureModel, Prediction, PredictionRequest, Predictor, RemoteOptions};

/// Carries one client message to the predictor and returns every response
/// line up to and including the terminal one.
pub trait Transport: Send {
    fn describe(&self) -> String;

    fn exchange(
        &mut self,
        message: &ClientMessage,
        timeout: Duration,
    ) -> Result<Vec<ServerMessage>, PredictorError>;
}

fn encode(message: &ClientMessage) -> Result<String, PredictorError> {
    serde_json::to_string(message).map_err(|e| PredictorError::Protocol(e.to_string()))
}

fn decode(line: &str) -> Result<ServerMessage, PredictorError> {
    serde_json::from_str(line)
        .map_err(|e| PredictorError::Protocol(format!("malformed response line {line:?}: {e}")))
}

/// Predictor running as a child process, one JSON message per line on its
/// standard input and output.
pub struct StdioTransport {
    argv: Vec<String>,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl StdioTransport {
    pub fn spawn(argv: &[String]) -> Result<Self, PredictorError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| PredictorError::Transport("empty predictor command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| PredictorError::Transport(format!("cannot start {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(StdioTransport {
            argv: argv.to_vec(),
            child,
            stdin,
            lines: rx,
        })
    }
}

impl Transport for StdioTransport {
    fn describe(&self) -> String {
        format!("cmd:{}", self.argv.join(" "))
    }

    fn exchange(
        &mut self,
        message: &ClientMessage,
        timeout: Duration,
    ) -> Result<Vec<ServerMessage>, PredictorError> {
        let mut line = encode(message)?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| PredictorError::Transport(format!("write to predictor failed: {e}")))?;
        let deadline = Instant::now() + timeout;
        let mut out = Vec::new();
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let raw = match self.lines.recv_timeout(left) {
                Ok(Ok(l)) => l,
                Ok(Err(e)) => return Err(PredictorError::Transport(format!("read failed: {e}"))),
                Err(RecvTimeoutError::Timeout) => return Err(PredictorError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(PredictorError::Transport("predictor closed its output".into()))
                }
            };
            if raw.trim().is_empty() {
                continue;
            }
            let msg = decode(&raw)?;
            let done = msg.is_terminal();
            out.push(msg);
            if done {
                return Ok(out);
            }
        }
    }
}

impl Drop for StdioTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Predictor behind an HTTP endpoint: each client message is POSTed as a
/// JSON body; the response body holds the response lines.
pub struct HttpTransport {
    url: String,
    agent: ureq::Agent,
    timeout: Duration,
}

impl HttpTransport {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpTransport {
            url: url.into(),
            agent,
            timeout,
        }
    }
}

impl Transport for HttpTransport {
    fn describe(&self) -> String {
        format!("url:{}", self.url)
    }

    fn exchange(
        &mut self,
        message: &ClientMessage,
        _timeout: Duration,
    ) -> Result<Vec<ServerMessage>, PredictorError> {
        let body = encode(message)?;
        let text = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body.as_str())
            .and_then(|mut r| r.body_mut().read_to_string())
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => PredictorError::Timeout(self.timeout),
                other => PredictorError::Transport(format!("POST {} failed: {other}", self.url)),
            })?;
        let msgs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(decode)
            .collect::<Result<Vec<_>, _>>()?;
        match msgs.last() {
            Some(m) if m.is_terminal() => Ok(msgs),
            _ => Err(PredictorError::Protocol(
                "response body has no terminal message".into(),
            )),
        }
    }
}

/// In-process transport that still round-trips every message through its
/// JSON line encoding.
pub struct LoopbackTransport<M> {
    server: ProtocolServer<M>,
    line: usize,
}

impl<M: FeatureModel> LoopbackTransport<M> {
    pub fn new(model: M) -> Self {
        LoopbackTransport {
            server: ProtocolServer::new(model),
            line: 0,
        }
    }
}

impl<M: FeatureModel> Transport for LoopbackTransport<M> {
    fn describe(&self) -> String {
        "loopback".into()
    }

    fn exchange(
        &mut self,
        message: &ClientMessage,
        _timeout: Duration,
    ) -> Result<Vec<ServerMessage>, PredictorError> {
        self.line += 1;
        let line = encode(message)?;
        self.server
            .handle_line(self.line, &line)
            .into_iter()
            .map(|m| decode(&serde_json::to_string(&m).expect("serializable")))
            .collect()
    }
}

/// Matches response lines to `requests` by `request_id`, returning
/// predictions in request order.
pub fn correlate(
    requests: &[PredictionRequest],
    messages: Vec<ServerMessage>,
) -> Result<Vec<Prediction>, PredictorError> {
    let index: HashMap<&str, usize> = requests
        .iter()
        .enumerate()
        .map(|(i, r)| (r.request_id.as_str(), i))
        .collect();
    if index.len() != requests.len() {
        return Err(PredictorError::Protocol("duplicate request_id in batch".into()));
    }
    let mut slots: Vec<Option<Prediction>> = vec![None; requests.len()];
    let mut reported: Option<(usize, String)> = None;
    let mut saw_results = false;
    for msg in messages {
        match msg {
            ServerMessage::Error {
                request_id: Some(id),
                message,
            } => {
                let i = *index.get(id.as_str()).ok_or_else(|| {
                    PredictorError::Protocol(format!("error for unknown request_id {id:?}"))
                })?;
                if reported.as_ref().is_none_or(|(j, _)| i < *j) {
                    reported = Some((i, message));
                }
            }
            ServerMessage::Error {
                request_id: None,
                message,
            } => {
                return Err(PredictorError::Reported {
                    request_id: "*".into(),
                    message,
                })
            }
            ServerMessage::Registered { .. } => {
                return Err(PredictorError::Protocol(
                    "unexpected registered message in reply to predict".into(),
                ))
            }
            ServerMessage::Predictions { results } => {
                saw_results = true;
                for r in results {
                    let i = *index.get(r.request_id.as_str()).ok_or_else(|| {
                        PredictorError::Protocol(format!("unknown request_id {:?}", r.request_id))
                    })?;
                    if slots[i].is_some() {
                        return Err(PredictorError::Protocol(format!(
                            "duplicate result for request_id {:?}",
                            r.request_id
                        )));
                    }
                    let p = Prediction::from(r);
                    p.check()?;
                    slots[i] = Some(p);
                }
            }
        }
    }
    if let Some((i, message)) = reported {
        return Err(PredictorError::Reported {
            request_id: requests[i].request_id.clone(),
            message,
        });
    }
    if !saw_results && !requests.is_empty() {
        return Err(PredictorError::Protocol("no predictions message received".into()));
    }
    slots
        .into_iter()
        .zip(requests)
        .map(|(s, r)| {
            s.ok_or_else(|| {
                PredictorError::Protocol(format!("response missing request_id {:?}", r.request_id))
            })
        })
        .collect()
}

/// Predictor reached through a [`Transport`]. Instances are registered on
/// first use; afterwards only masks travel.
pub struct RemotePredictor {
    transport: Mutex<Box<dyn Transport>>,
    registered: Mutex<HashSet<String>>,
    options: RemoteOptions,
    id: String,
}

impl RemotePredictor {
    pub fn new(transport: Box<dyn Transport>, options: RemoteOptions) -> Self {
        let id = transport.describe();
        RemotePredictor {
            transport: Mutex::new(transport),
            registered: Mutex::new(HashSet::new()),
            options,
            id,
        }
    }

    pub fn spawn(argv: &[String], options: RemoteOptions) -> Result<Self> {
        Ok(Self::new(Box::new(StdioTransport::spawn(argv)?), options))
    }

    pub fn http(url: &str, options: RemoteOptions) -> Self {
        Self::new(Box::new(HttpTransport::new(url, options.timeout)), options)
    }

    fn ensure_registered(&self, transport: &mut dyn Transport, instance: &Instance) -> Result<(), PredictorError> {
        let mut reg = self.registered.lock().expect("registry lock");
        if reg.contains(instance.id()) {
            return Ok(());
        }
        let replies = transport.exchange(
            &ClientMessage::Register {
                instance: instance.clone(),
            },
            self.options.timeout,
        )?;
        match replies.last() {
            Some(ServerMessage::Registered { instance_id }) if instance_id == instance.id() => {
                debug!("registered instance {instance_id} with {}", self.id);
                reg.insert(instance_id.clone());
                Ok(())
            }
            Some(ServerMessage::Error { message, .. }) => Err(PredictorError::Reported {
                request_id: "register".into(),
                message: message.clone(),
            }),
            other => Err(PredictorError::Protocol(format!(
                "expected registered {:?}, got {other:?}",
                instance.id()
            ))),
        }
    }
}

/// Sends one batch of requests for `instance` and returns predictions in
/// request order.
pub fn remote_predict(
    predictor: &RemotePredictor,
    instance: &Instance,
    requests: &[PredictionRequest],
) -> Result<Vec<Prediction>> {
    predictor.predict(instance, requests)
}

impl Predictor for RemotePredictor {
    fn identifier(&self) -> String {
        self.id.clone()
    }

    fn predict(&self, instance: &Instance, requests: &[PredictionRequest]) -> Result<Vec<Prediction>> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        for r in requests {
            r.check_against(instance)?;
        }
        let mut transport = self.transport.lock().expect("transport lock");
        self.ensure_registered(transport.as_mut(), instance)?;
        let replies = transport.exchange(
            &ClientMessage::Predict {
                requests: requests.to_vec(),
            },
            self.options.timeout,
        )?;
        let out = correlate(requests, replies);
        if let Err(e) = &out {
            warn!("{}: {e}", self.id);
        }
        Ok(out?)
    }
}
