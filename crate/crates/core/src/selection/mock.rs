//! Local stand-in for the scoring backend, speaking the same wire format.

use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{Result, SelectionError};

pub const GARBAGE_BODY: &str = "<html>service unavailable</html>";

#[derive(Debug, Clone, PartialEq)]
pub enum MockBehavior {
    /// The same four criteria for every image, in wire order.
    Fixed([f64; 4]),
    /// Scores in `[0, 10]` derived from a hash of each image.
    Hashed,
    /// A non-JSON body.
    Garbage,
    /// Entries without `preference`.
    MissingCriterion,
}

impl MockBehavior {
    pub fn respond(&self, request: &Value) -> String {
        let ids: Vec<&str> = request.get("ids").and_then(Value::as_array).map(|a| a.iter().filter_map(Value::as_str).collect()).unwrap_or_default();
        let images: Vec<&str> = request.get("images").and_then(Value::as_array).map(|a| a.iter().filter_map(Value::as_str).collect()).unwrap_or_default();
        let entry = |id: &str, s: [f64; 4]| {
            json!({"id": id, "naturalness": s[0], "physical_plausibility": s[1], "human_likeness": s[2], "preference": s[3], "explanation": "mock score"})
        };
        let scores: Vec<Value> = match self {
            MockBehavior::Garbage => return GARBAGE_BODY.into(),
            MockBehavior::Fixed(s) => ids.iter().map(|id| entry(id, *s)).collect(),
            MockBehavior::Hashed => ids
                .iter()
                .zip(images.iter().chain(std::iter::repeat(&"")))
                .map(|(id, img)| {
                    let h = Sha256::digest(img.as_bytes());
                    entry(id, [0, 1, 2, 3].map(|i| f64::from(h[i]) / 25.5))
                })
                .collect(),
            MockBehavior::MissingCriterion => ids
                .iter()
                .map(|id| json!({"id": id, "naturalness": 5, "physical_plausibility": 5, "human_likeness": 5, "explanation": "incomplete"}))
                .collect(),
        };
        json!({ "scores": scores }).to_string()
    }
}

/// HTTP server on an ephemeral localhost port, stopped on drop.
pub struct MockServer {
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
    url: String,
}

impl MockServer {
    pub fn start(behavior: MockBehavior) -> Result<Self> {
        Self::bind("127.0.0.1:0", behavior)
    }

    pub fn bind(addr: &str, behavior: MockBehavior) -> Result<Self> {
        let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| SelectionError::Server(e.to_string()))?);
        let sock = server.server_addr().to_ip().ok_or_else(|| SelectionError::Server("not an ip listener".into()))?;
        let s = Arc::clone(&server);
        let handle = std::thread::spawn(move || {
            for mut req in s.incoming_requests() {
                let mut body = String::new();
                let reply = match req.as_reader().read_to_string(&mut body) {
                    Ok(_) => behavior.respond(&serde_json::from_str(&body).unwrap_or(Value::Null)),
                    Err(_) => GARBAGE_BODY.into(),
                };
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
                let _ = req.respond(tiny_http::Response::from_string(reply).with_header(header));
            }
        });
        Ok(Self { server, handle: Some(handle), url: format!("http://{sock}/score") })
    }

    pub fn url(&self) -> String {
        self.url.clone()
    }

    /// Serves until the process exits.
    pub fn join(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashed_scores_are_in_range_and_stable() {
        let req = json!({"prompt": "p", "images": ["AAAA", "BBBB"], "ids": ["0:0", "1:0"]});
        let a = MockBehavior::Hashed.respond(&req);
        assert_eq!(a, MockBehavior::Hashed.respond(&req));
        let v: Value = serde_json::from_str(&a).unwrap();
        for e in v["scores"].as_array().unwrap() {
            for k in ["naturalness", "physical_plausibility", "human_likeness", "preference"] {
                assert!((0.0..=10.0).contains(&e[k].as_f64().unwrap()));
            }
        }
    }
}
