//! Wire types. One JSON object per line in each direction.
//!
//! Request: `{"v":1,"op":"knn","namespace":"notes","token":"...","request_id":7,"payload":{...}}`
//!
//! Response: `{"v":1,"request_id":7,"status":"ok","payload":...}` or
//! `{"v":1,"request_id":7,"status":"error","error":{"code":"forbidden","message":"..."}}`

use serde::{Deserialize, Serialize};
use serde_json::Value;

use colma_core::CoreError;

pub const PROTOCOL_VERSION: u32 = 1;

macro_rules! ops {
    ($($variant:ident => $name:literal, $class:ident;)*) => {
        /// Every operation the service exposes.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Op {
            $($variant,)*
        }

        impl Op {
            pub const ALL: &'static [Op] = &[$(Op::$variant,)*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(Op::$variant => $name,)*
                }
            }

            pub fn class(self) -> OpClass {
                match self {
                    $(Op::$variant => OpClass::$class,)*
                }
            }

            pub fn parse(name: &str) -> Option<Op> {
                match name {
                    $($name => Some(Op::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

// Recall and get_record update access counters, which is bookkeeping rather
// than a change to what is known, so readers may run them. Reason persists
// derived triples and cases, so it needs write access.
ops! {
    PutRecord => "put_record", Write;
    GetRecord => "get_record", Read;
    AssertTriple => "assert_triple", Write;
    QueryTriples => "query_triples", Read;
    Knn => "knn", Read;
    Recall => "recall", Read;
    Associate => "associate", Read;
    Reason => "reason", Write;
    Predict => "predict", Read;
    Reflect => "reflect", Write;
    UpdateMemory => "update_memory", Write;
    ConsolidateTick => "consolidate_tick", Write;
    ForgetTick => "forget_tick", Write;
    SyncDelta => "sync_delta", Read;
    ApplyDelta => "apply_delta", Admin;
    Stats => "stats", Read;
}

impl std::fmt::Display for Op {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpClass {
    Read,
    Write,
    /// Raw replication writes that bypass validation.
    Admin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub v: u32,
    pub op: String,
    #[serde(default)]
    pub namespace: String,
    #[serde(default)]
    pub token: Option<String>,
    /// Echoed back untouched; any JSON value.
    #[serde(default)]
    pub request_id: Value,
    #[serde(default)]
    pub payload: Value,
}

impl Request {
    pub fn new(op: Op, namespace: &str, payload: Value) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            op: op.as_str().to_owned(),
            namespace: namespace.to_owned(),
            token: None,
            request_id: Value::Null,
            payload,
        }
    }

    pub fn with_token(mut self, token: &str) -> Self {
        self.token = Some(token.to_owned());
        self
    }

    pub fn with_id(mut self, id: impl Into<Value>) -> Self {
        self.request_id = id.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Not valid JSON, or not a request object.
    BadRequest,
    BadVersion,
    /// Missing or unknown token.
    Unauthorized,
    /// Namespace not granted, or role too weak for the operation.
    Forbidden,
    UnknownOp,
    /// Payload does not fit the operation, or the engine rejected it.
    InvalidArgument,
    Conflict,
    Disabled,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::VersionConflict { .. } => ErrorCode::Conflict,
            CoreError::Disabled(_) => ErrorCode::Disabled,
            CoreError::DimensionMismatch { .. }
            | CoreError::UndefinedDirection
            | CoreError::UnknownRecord(_)
            | CoreError::InvalidRecord(_)
            | CoreError::InvalidTriple(_)
            | CoreError::InvalidRule(_)
            | CoreError::InvalidCue(_)
            | CoreError::InvalidProposal(_)
            | CoreError::InvalidNamespace(_)
            | CoreError::DirtyNamespace(_)
            | CoreError::UnknownStrategy(_) => ErrorCode::InvalidArgument,
            _ => ErrorCode::Internal,
        };
        Self::new(code, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub v: u32,
    pub request_id: Value,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

impl Response {
    pub fn ok(request_id: Value, payload: Value) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            request_id,
            status: Status::Ok,
            payload: Some(payload),
            error: None,
        }
    }

    pub fn err(request_id: Value, error: ApiError) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            request_id,
            status: Status::Error,
            payload: None,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn code(&self) -> Option<ErrorCode> {
        self.error.as_ref().map(|e| e.code)
    }

    pub fn into_result(self) -> Result<Value, ApiError> {
        match (self.status, self.payload, self.error) {
            (Status::Ok, p, _) => Ok(p.unwrap_or(Value::Null)),
            (Status::Error, _, Some(e)) => Err(e),
            (Status::Error, _, None) => Err(ApiError::new(ErrorCode::Internal, "error response without detail")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_names_round_trip() {
        assert_eq!(Op::ALL.len(), 16);
        for op in Op::ALL {
            assert_eq!(Op::parse(op.as_str()), Some(*op));
        }
        assert_eq!(Op::parse("drop_everything"), None);
    }

    #[test]
    fn response_shape() {
        let r = Response::err(Value::from("x"), ApiError::new(ErrorCode::UnknownOp, "nope"));
        let j = colma_core::json::canonical(&r).unwrap();
        assert_eq!(j, r#"{"error":{"code":"unknown_op","message":"nope"},"request_id":"x","status":"error","v":1}"#);
    }
}
