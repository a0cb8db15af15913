//! Record/replay cassettes: JSONL of request-hash -> response, enabling
//! offline deterministic reruns of evaluations that used a live backend.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatRequest, EmbeddingVector, Gateway, GatewayError};

#[derive(Debug, Serialize, Deserialize)]
struct CassetteRecord {
    kind: String,
    key: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    chat_response: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    embed_response: Option<Vec<EmbeddingVector>>,
}

fn chat_key(req: &ChatRequest) -> String {
    let canonical = serde_json::to_string(req).expect("chat request serializes");
    hex_digest("chat", &canonical)
}

fn embed_key(texts: &[String]) -> String {
    let canonical = serde_json::to_string(texts).expect("texts serialize");
    hex_digest("embed", &canonical)
}

fn hex_digest(kind: &str, canonical: &str) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0x1f]);
    h.update(canonical.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

enum Mode {
    Record {
        inner: Arc<dyn Gateway>,
        file: Mutex<File>,
    },
    Replay,
}

/// Gateway wrapper that either records an inner backend's responses to a
/// JSONL file or replays a previously recorded file with no backend at all.
pub struct CassetteGateway {
    mode: Mode,
    chat: Mutex<HashMap<String, String>>,
    embeds: Mutex<HashMap<String, Vec<EmbeddingVector>>>,
}

impl CassetteGateway {
    pub fn record(inner: Arc<dyn Gateway>, path: &Path) -> Result<Self, GatewayError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let (chat, embeds) = if path.metadata()?.len() > 0 {
            load(path)?
        } else {
            (HashMap::new(), HashMap::new())
        };
        Ok(Self {
            mode: Mode::Record {
                inner,
                file: Mutex::new(file),
            },
            chat: Mutex::new(chat),
            embeds: Mutex::new(embeds),
        })
    }

    pub fn replay(path: &Path) -> Result<Self, GatewayError> {
        let (chat, embeds) = load(path)?;
        Ok(Self {
            mode: Mode::Replay,
            chat: Mutex::new(chat),
            embeds: Mutex::new(embeds),
        })
    }

    fn append(&self, record: &CassetteRecord) {
        if let Mode::Record { file, .. } = &self.mode {
            let mut f = file.lock().unwrap();
            let line = serde_json::to_string(record).expect("record serializes");
            if writeln!(f, "{line}").is_err() {
                tracing::warn!("failed to append cassette record");
            }
        }
    }
}

type ChatMap = HashMap<String, String>;
type EmbedMap = HashMap<String, Vec<EmbeddingVector>>;

fn load(path: &Path) -> Result<(ChatMap, EmbedMap), GatewayError> {
    let file = File::open(path)?;
    let mut chat = HashMap::new();
    let mut embeds = HashMap::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CassetteRecord = serde_json::from_str(&line)
            .map_err(|e| GatewayError::MalformedResponse(format!("cassette line: {e}")))?;
        match record.kind.as_str() {
            "chat" => {
                chat.insert(record.key, record.chat_response.unwrap_or_default());
            }
            "embed" => {
                embeds.insert(record.key, record.embed_response.unwrap_or_default());
            }
            other => {
                return Err(GatewayError::MalformedResponse(format!(
                    "unknown cassette kind {other:?}"
                )))
            }
        }
    }
    Ok((chat, embeds))
}

impl Gateway for CassetteGateway {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let key = chat_key(req);
        if let Some(hit) = self.chat.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        match &self.mode {
            Mode::Replay => Err(GatewayError::CassetteMiss { key }),
            Mode::Record { inner, .. } => {
                let response = inner.chat_complete(req)?;
                self.chat
                    .lock()
                    .unwrap()
                    .insert(key.clone(), response.clone());
                self.append(&CassetteRecord {
                    kind: "chat".into(),
                    key,
                    chat_response: Some(response.clone()),
                    embed_response: None,
                });
                Ok(response)
            }
        }
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let key = embed_key(texts);
        if let Some(hit) = self.embeds.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        match &self.mode {
            Mode::Replay => Err(GatewayError::CassetteMiss { key }),
            Mode::Record { inner, .. } => {
                let response = inner.embed(texts)?;
                self.embeds
                    .lock()
                    .unwrap()
                    .insert(key.clone(), response.clone());
                self.append(&CassetteRecord {
                    kind: "embed".into(),
                    key,
                    chat_response: None,
                    embed_response: Some(response.clone()),
                });
                Ok(response)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockGateway;

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.jsonl");
        let req = ChatRequest::new("sys", "user");
        let texts = vec!["alpha".to_string(), "beta".to_string()];

        let (chat_out, embed_out) = {
            let recorder = CassetteGateway::record(Arc::new(MockGateway::new(5)), &path).unwrap();
            (
                recorder.chat_complete(&req).unwrap(),
                recorder.embed(&texts).unwrap(),
            )
        };

        let replayer = CassetteGateway::replay(&path).unwrap();
        assert_eq!(replayer.chat_complete(&req).unwrap(), chat_out);
        assert_eq!(replayer.embed(&texts).unwrap(), embed_out);
    }

    #[test]
    fn replay_misses_unknown_requests() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.jsonl");
        std::fs::write(&path, "").unwrap();
        let replayer = CassetteGateway::replay(&path).unwrap();
        assert!(matches!(
            replayer.chat_complete(&ChatRequest::new("s", "u")),
            Err(GatewayError::CassetteMiss { .. })
        ));
    }
}
