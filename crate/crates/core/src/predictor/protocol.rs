//! Newline-delimited JSON predictor protocol.
//!
//! ```text
//! → {"type":"register","instance":{...}}
//! ← {"type":"registered","instance_id":"..."}
//! → {"type":"predict","requests":[{"request_id","instance_id","token_mask",
//!                                  "visual_mask","strategy","strategy_seed"}, ...]}
//! ← {"type":"error","request_id":"...","message":"..."}     (zero or more)
//! ← {"type":"predictions","results":[{"request_id","probabilities":{...}}, ...]}
//! ```
//!
//! A predict message is answered by zero or more per-request error lines
//! followed by exactly one predictions line. An error line without a
//! `request_id` answers a message that could not be processed at all.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::model::Instance;
use crate::predictor::{FeatureModel, MaskingPredictor, Prediction, PredictionRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Register { instance: Instance },
    Predict { requests: Vec<PredictionRequest> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub request_id: String,
    pub probabilities: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Registered {
        instance_id: String,
    },
    Predictions {
        results: Vec<PredictionResult>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        request_id: Option<String>,
        message: String,
    },
}

impl ServerMessage {
    /// Whether this line completes the answer to a client message.
    pub fn is_terminal(&self) -> bool {
        !matches!(
            self,
            ServerMessage::Error {
                request_id: Some(_),
                ..
            }
        )
    }
}

impl From<PredictionResult> for Prediction {
    fn from(r: PredictionResult) -> Self {
        Prediction {
            probabilities: r.probabilities,
        }
    }
}

/// Server side of the protocol around a [`FeatureModel`]: holds registered
/// instances and applies masks before invoking the model.
pub struct ProtocolServer<M> {
    predictor: MaskingPredictor<M>,
    instances: HashMap<String, Instance>,
}

impl<M: FeatureModel> ProtocolServer<M> {
    pub fn new(model: M) -> Self {
        ProtocolServer {
            predictor: MaskingPredictor::new(model),
            instances: HashMap::new(),
        }
    }

    pub fn handle(&mut self, message: ClientMessage) -> Vec<ServerMessage> {
        match message {
            ClientMessage::Register { instance } => {
                let instance_id = instance.id().to_string();
                self.instances.insert(instance_id.clone(), instance);
                vec![ServerMessage::Registered { instance_id }]
            }
            ClientMessage::Predict { requests } => {
                let mut out = Vec::new();
                let mut results = Vec::with_capacity(requests.len());
                for r in requests {
                    let outcome = match self.instances.get(&r.instance_id) {
                        None => Err(format!("instance {:?} is not registered", r.instance_id)),
                        Some(inst) => self
                            .predictor
                            .predict_one(inst, &r)
                            .map_err(|e| e.to_string()),
                    };
                    match outcome {
                        Ok(p) => results.push(PredictionResult {
                            request_id: r.request_id,
                            probabilities: p.probabilities,
                        }),
                        Err(message) => out.push(ServerMessage::Error {
                            request_id: Some(r.request_id),
                            message,
                        }),
                    }
                }
                out.push(ServerMessage::Predictions { results });
                out
            }
        }
    }

    /// Answers one raw line; malformed lines produce an error naming the
    /// line number.
    pub fn handle_line(&mut self, line_no: usize, line: &str) -> Vec<ServerMessage> {
        match serde_json::from_str::<ClientMessage>(line) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::Error {
                request_id: None,
                message: format!("line {line_no}: malformed message: {e}"),
            }],
        }
    }

    /// Serves until `input` is exhausted. Blank lines are ignored.
    pub fn serve<R: BufRead, W: Write>(&mut self, input: R, mut output: W) -> std::io::Result<()> {
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for msg in self.handle_line(i + 1, &line) {
                serde_json::to_writer(&mut output, &msg)?;
                output.write_all(b"\n")?;
            }
            output.flush()?;
        }
        Ok(())
    }
}
