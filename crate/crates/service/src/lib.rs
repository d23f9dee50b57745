//! Network and command-line front end for the memory engine: a
//! newline-delimited JSON protocol, token principals scoped to namespace
//! globs, and the dispatcher both share.

pub mod auth;
pub mod config;
pub mod error;
pub mod protocol;
pub mod server;
pub mod service;

pub use auth::{authorize, Access, AuthTable, Principal, Role};
pub use config::ServiceConfig;
pub use error::{Result, ServiceError};
pub use protocol::{ApiError, ErrorCode, Op, OpClass, Request, Response, Status, PROTOCOL_VERSION};
pub use server::{Client, Server, ServerHandle};
pub use service::Service;
