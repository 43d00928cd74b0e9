//! Deterministic stand-in model.
//!
//! It reads the machine-readable marker lines that every prompt template
//! carries (`ROLE:`, `STOCK_POOL:`, `SIGNAL ...`) and answers in protocol
//! JSON. Output depends only on the request text.

use async_trait::async_trait;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::backend::{BackendError, ChatBackend};
use super::{ChatRequest, ChatResponse, ModelSpec};

#[derive(Debug, Default, Clone, Copy)]
pub struct MockBackend;

fn marker<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.trim().strip_prefix(key)).map(str::trim)
}

impl MockBackend {
    pub fn respond(request: &ChatRequest) -> String {
        let role = marker(&request.system, "ROLE:").unwrap_or("");
        let digest = Sha256::digest(request.user.as_bytes());
        if role == "planner" {
            let pool: Vec<&str> = marker(&request.user, "STOCK_POOL:")
                .map(|s| s.split(',').map(str::trim).filter(|s| !s.is_empty()).collect())
                .unwrap_or_default();
            let assignments: serde_json::Map<String, serde_json::Value> = pool
                .iter()
                .map(|t| (t.to_string(), json!(["TECHNICAL", "FUNDAMENTAL", "INSIDER", "MEDIA"])))
                .collect();
            return json!({"assignments": assignments, "rationale": "cover every ticker"}).to_string();
        }
        if let Some(kind) = role.strip_prefix("analyst:") {
            let stance = ["BULLISH", "BEARISH", "NEUTRAL"][digest[0] as usize % 3];
            let confidence = 0.5 + f64::from(digest[1] % 5) / 10.0;
            return json!({
                "stance": stance,
                "confidence": confidence,
                "rationale": format!("{kind} view from provided context"),
                "key_evidence": [format!("digest {:02x}{:02x}", digest[2], digest[3])],
            })
            .to_string();
        }
        if role == "manager" {
            let (mut bull, mut bear) = (0, 0);
            for line in request.user.lines() {
                let mut parts = line.split_whitespace();
                if parts.next() == Some("SIGNAL") {
                    match parts.nth(1) {
                        Some("BULLISH") => bull += 1,
                        Some("BEARISH") => bear += 1,
                        _ => {}
                    }
                }
            }
            let action = match bull.cmp(&bear) {
                std::cmp::Ordering::Greater => "BUY",
                std::cmp::Ordering::Less => "SELL",
                std::cmp::Ordering::Equal => "HOLD",
            };
            return json!({
                "action": action,
                "quantity": null,
                "confidence": 0.6,
                "rationale": format!("{bull} bullish vs {bear} bearish signals"),
            })
            .to_string();
        }
        "I am not sure what you are asking.".to_string()
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    async fn send(&self, request: &ChatRequest, _spec: &ModelSpec) -> Result<ChatResponse, BackendError> {
        Ok(ChatResponse::text_only(Self::respond(request)))
    }

    fn is_offline(&self) -> bool {
        true
    }
}
