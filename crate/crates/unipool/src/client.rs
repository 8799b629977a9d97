//! Blocking client for the framed service.

use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};

use anyhow::{anyhow, bail, Context};
use serde_json::{json, Value as Json};
use unipool_core::query::QueryRequirement;
use unipool_core::RawRecord;

use crate::pipeline::IngestReport;
use crate::protocol::{encode_frame, read_frame_blocking, PREFIX_BYTES, QUERY_RESPONSE_HEAD};
use crate::store::StoreStats;

pub struct Client {
    stream: TcpStream,
}

/// A query answer with its on-the-wire size.
#[derive(Debug, Clone)]
pub struct QueryReply {
    pub payload: String,
    /// Response bytes read from the socket, prefix included.
    pub wire_bytes: usize,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> anyhow::Result<Client> {
        let stream = TcpStream::connect(addr).context("connecting to pool service")?;
        stream.set_nodelay(true)?;
        Ok(Client { stream })
    }

    /// Sends one body and returns the response body.
    pub fn round_trip(&mut self, body: &[u8]) -> anyhow::Result<Vec<u8>> {
        self.stream.write_all(&encode_frame(body)?)?;
        read_frame_blocking(&mut self.stream)?.ok_or_else(|| anyhow!("server closed the connection"))
    }

    pub fn request(&mut self, op: &str, payload: Json) -> anyhow::Result<Json> {
        let body = serde_json::to_vec(&json!({"op": op, "payload": payload}))?;
        let reply: Json = serde_json::from_slice(&self.round_trip(&body)?)?;
        if let Some(code) = reply.get("error") {
            bail!("{}: {}", code.as_str().unwrap_or("error"), reply["detail"].as_str().unwrap_or(""));
        }
        Ok(reply)
    }

    pub fn ingest(&mut self, records: &[RawRecord]) -> anyhow::Result<IngestReport> {
        let reply = self.request("ingest", json!({ "records": records }))?;
        Ok(serde_json::from_value(reply["payload"].clone())?)
    }

    pub fn stats(&mut self) -> anyhow::Result<StoreStats> {
        let reply = self.request("stats", Json::Null)?;
        Ok(serde_json::from_value(reply["payload"].clone())?)
    }

    pub fn query(&mut self, r: &QueryRequirement) -> anyhow::Result<QueryReply> {
        let body = serde_json::to_vec(&json!({"op": "query", "payload": r}))?;
        let reply = self.round_trip(&body)?;
        let wire_bytes = PREFIX_BYTES + reply.len();
        let text = String::from_utf8(reply).context("response is not UTF-8")?;
        match text.strip_prefix(QUERY_RESPONSE_HEAD).and_then(|t| t.strip_suffix('}')) {
            Some(payload) => Ok(QueryReply {
                payload: payload.to_string(),
                wire_bytes,
            }),
            None => {
                let v: Json = serde_json::from_str(&text)?;
                bail!("{}: {}", v["error"].as_str().unwrap_or("error"), v["detail"].as_str().unwrap_or(""))
            }
        }
    }
}
