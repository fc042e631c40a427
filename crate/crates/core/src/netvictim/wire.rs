//! Newline-delimited JSON records. One request per line; the response echoes
//! the request id.
//!
//! ```text
//! → {"id":1,"op":"predict","x":[0.5,1.25]}
//! ← {"id":1,"label":3}
//! → {"id":2,"op":"budget"}
//! ← {"id":2,"remaining":95}
//! ← {"id":7,"error":"budget exhausted","code":"BUDGET_EXHAUSTED"}
//! ```

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Predict { id: u64, x: Vec<f64> },
    Budget { id: u64 },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRequest {
    id: u64,
    op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<Vec<f64>>,
}

impl Request {
    pub fn id(&self) -> u64 {
        match *self {
            Request::Predict { id, .. } | Request::Budget { id } => id,
        }
    }

    pub fn to_line(&self) -> String {
        let raw = match self {
            Request::Predict { id, x } => RawRequest {
                id: *id,
                op: "predict".into(),
                x: Some(x.clone()),
            },
            Request::Budget { id } => RawRequest {
                id: *id,
                op: "budget".into(),
                x: None,
            },
        };
        serde_json::to_string(&raw).expect("request serializes")
    }

    /// Parses one line. On failure returns the id when it could be recovered.
    pub fn parse(line: &str) -> Result<Request, (u64, String)> {
        let raw: RawRequest = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                    .unwrap_or(0);
                return Err((id, format!("malformed request: {e}")));
            }
        };
        match (raw.op.as_str(), raw.x) {
            ("predict", Some(x)) => Ok(Request::Predict { id: raw.id, x }),
            ("predict", None) => Err((raw.id, "predict requires x".into())),
            ("budget", None) => Ok(Request::Budget { id: raw.id }),
            ("budget", Some(_)) => Err((raw.id, "budget takes no x".into())),
            (op, _) => Err((raw.id, format!("unknown op `{op}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    #[serde(rename = "BUDGET_EXHAUSTED")]
    BudgetExhausted,
    #[serde(rename = "BAD_INPUT")]
    BadInput,
    #[serde(rename = "INTERNAL")]
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Label { id: u64, label: u64 },
    Remaining { id: u64, remaining: u64 },
    Error { id: u64, error: String, code: ErrorCode },
}

impl Response {
    pub fn id(&self) -> u64 {
        match *self {
            Response::Label { id, .. } | Response::Remaining { id, .. } | Response::Error { id, .. } => id,
        }
    }

    pub fn error(id: u64, code: ErrorCode, msg: impl Into<String>) -> Self {
        Response::Error {
            id,
            error: msg.into(),
            code,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }

    pub fn parse(line: &str) -> Result<Response, serde_json::Error> {
        serde_json::from_str(line)
    }
}
