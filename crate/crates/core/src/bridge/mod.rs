//! Line-delimited JSON protocol that lets an external process serve the
//! detector adapter contract.
//!
//! Every request is one JSON object on one line and receives exactly one
//! reply line. The client opens with `{"op":"hello","version":1}`; the
//! server answers with its version, capabilities and input shape. Tensors
//! travel as [`TensorPayload`]s.

mod client;
mod codec;
pub mod conformance;
mod server;

use serde::{Deserialize, Serialize};

pub use client::{BridgeAdapter, BridgeConnection, Handshake};
pub use codec::TensorPayload;
pub use server::{serve, serve_tcp};

/// Protocol version spoken by this crate.
pub const PROTOCOL_VERSION: u32 = 1;

/// Environment variable naming the sidecar command used by the CLI.
pub const BRIDGE_CMD_ENV: &str = "XSAL_BRIDGE_CMD";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello { version: u32 },
    Detect { image: TensorPayload },
    Features { image: TensorPayload },
    /// `target` indexes the server's last `detect` reply.
    Grad { image: TensorPayload, target: usize },
    Shutdown,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<serde_json::Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<TensorPayload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grads: Option<TensorPayload>,
}

impl Reply {
    pub fn ok() -> Self {
        Self { ok: true, ..Self::default() }
    }

    pub fn err(msg: impl Into<String>) -> Self {
        Self { ok: false, error: Some(msg.into()), ..Self::default() }
    }
}
